//! Self-expressive network.
//!
//! A key network `k` and a query network `q` embed every sample. The
//! coefficient with which sample `i` helps reconstruct sample `j` is
//!
//! ```text
//! c_ij = α · T_β(k(x_j)ᵀ q(x_i)),   T_β(t) = sign(t)·max(0, |t| − β)
//! ```
//!
//! and coefficient matrices are stored with `c[(i, j)] = c_ij`, so column `j`
//! holds the weights that reconstruct `x_j` and the diagonal is zero.
//!
//! Training minimizes, over a batch of `n` samples,
//!
//! ```text
//! L_SE = γ/(2n) Σ_j ‖x_j − Σ_{i≠j} c_ij x_i‖² + 1/n Σ_{i≠j} r(c_ij)
//! r(c) = δ|c| + (1 − δ)/2 · c²
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Activation, Matrix, MlpCache, MlpGrads, MlpParams, Mode, ParamSet, Rng};

/// `sign(t) · max(0, |t| − β)`.
#[inline]
pub fn soft_threshold(t: f64, beta: f64) -> f64 {
    if t > beta {
        t - beta
    } else if t < -beta {
        t + beta
    } else {
        0.0
    }
}

/// Elastic-net penalty `δ|c| + (1 − δ)/2 · c²`.
#[inline]
pub fn elastic_net_reg(c: f64, delta: f64) -> f64 {
    delta * c.abs() + 0.5 * (1.0 - delta) * c * c
}

/// Subgradient of [`elastic_net_reg`], taking `sign(0) = 0`.
#[inline]
pub fn elastic_net_grad(c: f64, delta: f64) -> f64 {
    let sign = if c > 0.0 {
        1.0
    } else if c < 0.0 {
        -1.0
    } else {
        0.0
    };
    delta * sign + (1.0 - delta) * c
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeModelConfig {
    pub input_dim: usize,
    /// Hidden widths of both the key and the query network.
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub alpha: f64,
    pub learn_alpha: bool,
    pub beta_init: f64,
}

impl SeModelConfig {
    pub fn new(input_dim: usize) -> Self {
        SeModelConfig { input_dim, hidden: vec![64, 64], embed_dim: 64, alpha: 1.0, learn_alpha: false, beta_init: 0.1 }
    }
}

/// Key/query networks plus the threshold and scale.
///
/// `β = softplus(beta_raw)` keeps the threshold non-negative under
/// unconstrained updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeModel {
    pub key_net: MlpParams,
    pub query_net: MlpParams,
    pub beta_raw: f64,
    pub alpha: f64,
    pub learn_alpha: bool,
}

/// Gradients mirroring [`SeModel`]'s parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct SeGrads {
    pub key: MlpGrads,
    pub query: MlpGrads,
    pub beta_raw: f64,
    pub alpha: f64,
}

impl ParamSet for SeModel {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.key_net.tensors();
        t.extend(self.query_net.tensors());
        t.push(std::slice::from_ref(&self.beta_raw));
        t.push(std::slice::from_ref(&self.alpha));
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.key_net.tensors_mut();
        t.extend(self.query_net.tensors_mut());
        t.push(std::slice::from_mut(&mut self.beta_raw));
        t.push(std::slice::from_mut(&mut self.alpha));
        t
    }
}

impl ParamSet for SeGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.key.tensors();
        t.extend(self.query.tensors());
        t.push(std::slice::from_ref(&self.beta_raw));
        t.push(std::slice::from_ref(&self.alpha));
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.key.tensors_mut();
        t.extend(self.query.tensors_mut());
        t.push(std::slice::from_mut(&mut self.beta_raw));
        t.push(std::slice::from_mut(&mut self.alpha));
        t
    }
}

/// Key (`u`) and query (`v`) embeddings of one batch, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub u: Matrix,
    pub v: Matrix,
}

#[derive(Clone, Debug)]
pub struct EmbeddingCache {
    pub key: MlpCache,
    pub query: MlpCache,
}

/// Square coefficient matrix over one sample set; `c[(i, j)] = c_ij`, zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientMatrix {
    c: Matrix,
}

impl CoefficientMatrix {
    /// Wraps `c` after zeroing its diagonal.
    pub fn new(mut c: Matrix) -> Result<Self> {
        if c.rows() != c.cols() {
            return Err(Error::dims("coefficient matrix", "square", format!("{:?}", c.shape())));
        }
        c.ensure_finite("coefficient matrix")?;
        for j in 0..c.rows() {
            c[(j, j)] = 0.0;
        }
        Ok(CoefficientMatrix { c })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.c
    }

    pub fn into_matrix(self) -> Matrix {
        self.c
    }

    pub fn len(&self) -> usize {
        self.c.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.c.rows() == 0
    }

    /// Fraction of entries that are exactly zero.
    pub fn sparsity(&self) -> f64 {
        let n = self.c.data().len();
        if n == 0 {
            return 1.0;
        }
        self.c.data().iter().filter(|&&x| x == 0.0).count() as f64 / n as f64
    }
}

impl SeModel {
    pub fn new(config: &SeModelConfig, rng: &mut Rng) -> Result<Self> {
        if !(config.alpha > 0.0) || !(config.beta_init > 0.0) || config.embed_dim == 0 {
            return Err(Error::Config(format!(
                "SeModel needs alpha > 0, beta_init > 0, embed_dim > 0 (got {}, {}, {})",
                config.alpha, config.beta_init, config.embed_dim
            )));
        }
        let build = |rng: &mut Rng| {
            MlpParams::feedforward(
                config.input_dim,
                &config.hidden,
                config.embed_dim,
                Activation::Relu,
                Activation::Tanh,
                false,
                rng,
            )
        };
        let key_net = build(rng)?;
        let query_net = build(rng)?;
        Ok(SeModel {
            key_net,
            query_net,
            beta_raw: softplus_inverse(config.beta_init),
            alpha: config.alpha,
            learn_alpha: config.learn_alpha,
        })
    }

    pub fn beta(&self) -> f64 {
        softplus(self.beta_raw)
    }

    pub fn set_beta(&mut self, beta: f64) {
        self.beta_raw = softplus_inverse(beta);
    }

    pub fn input_dim(&self) -> usize {
        self.key_net.input_width()
    }

    pub fn embed_dim(&self) -> usize {
        self.key_net.output_width()
    }

    pub fn validate(&self) -> Result<()> {
        self.key_net.validate()?;
        self.query_net.validate()?;
        if self.key_net.output_width() != self.query_net.output_width() {
            return Err(Error::dims(
                "key/query embedding width",
                self.key_net.output_width(),
                self.query_net.output_width(),
            ));
        }
        if self.key_net.input_width() != self.query_net.input_width() {
            return Err(Error::dims("key/query input width", self.key_net.input_width(), self.query_net.input_width()));
        }
        Ok(())
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::dims("SeModel input features", self.input_dim(), x.cols()));
        }
        Ok(())
    }

    pub fn embed(&self, x: &Matrix, mode: Mode) -> Result<(Embedding, EmbeddingCache)> {
        self.check_input(x)?;
        let (u, key) = self.key_net.forward(x, mode)?;
        let (v, query) = self.query_net.forward(x, mode)?;
        Ok((Embedding { u, v }, EmbeddingCache { key, query }))
    }

    /// Coefficients between two sample sets: entry `(i, j)` is the weight of
    /// `queries[i]` in reconstructing `keys[j]`.
    ///
    /// With `mask_self` the two sets must be the same and the diagonal is zeroed.
    pub fn coefficient_block(&self, queries: &Matrix, keys: &Matrix, mask_self: bool, mode: Mode) -> Result<Matrix> {
        self.check_input(queries)?;
        self.check_input(keys)?;
        if mask_self && queries.rows() != keys.rows() {
            return Err(Error::dims("self coefficient block", queries.rows(), keys.rows()));
        }
        let (v, _) = self.query_net.forward(queries, mode)?;
        let (u, _) = self.key_net.forward(keys, mode)?;
        let mut c = coefficients_from_embeddings(&u, &v, self.alpha, self.beta())?;
        if mask_self {
            for j in 0..c.rows() {
                c[(j, j)] = 0.0;
            }
        }
        Ok(c)
    }

    /// Full `n × n` self-expression matrix over `x`.
    pub fn coefficients(&self, x: &Matrix, mode: Mode) -> Result<CoefficientMatrix> {
        CoefficientMatrix::new(self.coefficient_block(x, x, true, mode)?)
    }

    /// Backpropagates embedding gradients into network gradients.
    pub fn backward_embedding(
        &self,
        cache: &EmbeddingCache,
        grad_u: &Matrix,
        grad_v: &Matrix,
    ) -> Result<(MlpGrads, MlpGrads)> {
        let (key, _) = self.key_net.backward(&cache.key, grad_u)?;
        let (query, _) = self.query_net.backward(&cache.query, grad_v)?;
        Ok((key, query))
    }

    /// Self-expression loss of one batch and its exact gradients.
    pub fn se_loss(&self, batch: &Matrix, gamma: f64, delta: f64) -> Result<SeLoss> {
        let (emb, cache) = self.embed(batch, Mode::Train)?;
        let obj = se_objective(batch, &emb, self.alpha, self.beta(), gamma, delta)?;
        let (key, query) = self.backward_embedding(&cache, &obj.grad_u, &obj.grad_v)?;
        let grads = SeGrads {
            key,
            query,
            beta_raw: obj.grad_beta * sigmoid(self.beta_raw),
            alpha: if self.learn_alpha { obj.grad_alpha } else { 0.0 },
        };
        Ok(SeLoss { loss: obj.loss, reconstruction: obj.reconstruction, regularization: obj.regularization, grads })
    }
}

#[derive(Clone, Debug)]
pub struct SeLoss {
    pub loss: f64,
    pub reconstruction: f64,
    pub regularization: f64,
    pub grads: SeGrads,
}

/// `c[(i, j)] = α · T_β(v_iᵀ u_j)` without diagonal masking.
pub fn coefficients_from_embeddings(u: &Matrix, v: &Matrix, alpha: f64, beta: f64) -> Result<Matrix> {
    let scores = v.matmul_nt(u)?;
    Ok(scores.map(|s| alpha * soft_threshold(s, beta)))
}

/// Self-expression objective evaluated at fixed embeddings.
#[derive(Clone, Debug)]
pub struct SeObjective {
    pub loss: f64,
    pub reconstruction: f64,
    pub regularization: f64,
    /// Masked coefficients, `c[(i, j)] = c_ij`.
    pub coefficients: Matrix,
    pub grad_u: Matrix,
    pub grad_v: Matrix,
    pub grad_beta: f64,
    pub grad_alpha: f64,
}

/// Evaluates `L_SE` on a batch (rows of `x`) given its embeddings, with
/// gradients with respect to `u`, `v`, `β` and `α`.
pub fn se_objective(x: &Matrix, emb: &Embedding, alpha: f64, beta: f64, gamma: f64, delta: f64) -> Result<SeObjective> {
    let n = x.rows();
    let (u, v) = (&emb.u, &emb.v);
    if u.rows() != n || v.rows() != n || u.shape() != v.shape() {
        return Err(Error::dims(
            "se_objective embeddings",
            format!("{n} rows, equal shapes"),
            format!("u {:?}, v {:?}", u.shape(), v.shape()),
        ));
    }
    if n == 0 {
        return Err(Error::Config("se_objective on an empty batch".into()));
    }
    let nf = n as f64;
    let scores = v.matmul_nt(u)?;
    let mut c = scores.map(|s| alpha * soft_threshold(s, beta));
    for j in 0..n {
        c[(j, j)] = 0.0;
    }

    // Row j of c^T x is the reconstruction of x_j.
    let recon = c.matmul_tn(x)?;
    let resid = x.sub(&recon)?;
    let reconstruction = gamma / (2.0 * nf) * resid.frobenius_sq();
    let regularization = c.data().iter().map(|&cij| elastic_net_reg(cij, delta)).sum::<f64>() / nf;

    // dL/dc_ij = −γ/n · x_iᵀ r_j + r'(c_ij)/n
    let mut grad_c = x.matmul_nt(&resid)?.scale(-gamma / nf);
    for (g, &cij) in grad_c.data_mut().iter_mut().zip(c.data()) {
        *g += elastic_net_grad(cij, delta) / nf;
    }

    let mut grad_scores = Matrix::zeros(n, n);
    let mut grad_beta = 0.0;
    let mut grad_alpha = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let s = scores[(i, j)];
            if s.abs() <= beta {
                continue;
            }
            let g = grad_c[(i, j)];
            grad_scores[(i, j)] = g * alpha;
            grad_beta -= g * alpha * s.signum();
            grad_alpha += g * soft_threshold(s, beta);
        }
    }
    let grad_v = grad_scores.matmul(u)?;
    let grad_u = grad_scores.matmul_tn(v)?;
    let loss = reconstruction + regularization;
    if !loss.is_finite() {
        return Err(Error::NonFinite("self-expression loss".into()));
    }
    Ok(SeObjective { loss, reconstruction, regularization, coefficients: c, grad_u, grad_v, grad_beta, grad_alpha })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(0.7, 1.0), 0.0);
        assert_eq!(soft_threshold(1.5, 1.0), 0.5);
        assert_eq!(soft_threshold(-1.5, 1.0), -0.5);
        assert_eq!(soft_threshold(-1.0, 1.0), 0.0);
    }

    #[test]
    fn elastic_net_cases() {
        assert_eq!(elastic_net_reg(0.0, 0.9), 0.0);
        assert_eq!(elastic_net_reg(2.0, 1.0), 2.0);
        assert!((elastic_net_reg(-2.0, 0.9) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn softplus_round_trip() {
        for b in [1e-3, 0.1, 1.0, 5.0, 40.0] {
            assert!((softplus(softplus_inverse(b)) - b).abs() < 1e-12 * b.max(1.0));
        }
    }

    #[test]
    fn single_sample_batch_has_no_pairs() {
        let x = Matrix::from_rows(&[vec![0.6, 0.8, 0.0]]).unwrap();
        let emb = Embedding {
            u: Matrix::from_rows(&[vec![1.0, 0.5]]).unwrap(),
            v: Matrix::from_rows(&[vec![1.0, -0.5]]).unwrap(),
        };
        let obj = se_objective(&x, &emb, 1.0, 0.0, 3.0, 0.9).unwrap();
        assert!((obj.loss - 1.5).abs() < 1e-15);
        assert_eq!(obj.grad_u.max_abs(), 0.0);
    }

    #[test]
    fn dead_zone_gives_plain_norm() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0], vec![1.0, 1.0]]).unwrap();
        let emb = Embedding {
            u: Matrix::from_rows(&[vec![0.1, 0.2], vec![0.0, 0.3], vec![-0.2, 0.1]]).unwrap(),
            v: Matrix::from_rows(&[vec![0.3, 0.1], vec![0.2, 0.2], vec![0.1, -0.1]]).unwrap(),
        };
        let obj = se_objective(&x, &emb, 1.0, 5.0, 4.0, 0.9).unwrap();
        // γ/(2n)·Σ‖x_j‖² = 4/6 · (1 + 4 + 2)
        assert!((obj.loss - 4.0 / 6.0 * 7.0).abs() < 1e-14);
        assert_eq!(obj.grad_u.max_abs(), 0.0);
        assert_eq!(obj.grad_v.max_abs(), 0.0);
        assert_eq!(obj.grad_beta, 0.0);
    }

    #[test]
    fn coefficient_matrix_zeroes_diagonal() {
        let c = CoefficientMatrix::new(Matrix::from_fn(3, 3, |_, _| 1.0)).unwrap();
        for j in 0..3 {
            assert_eq!(c.matrix()[(j, j)], 0.0);
        }
        assert!(CoefficientMatrix::new(Matrix::zeros(2, 3)).is_err());
    }
}
