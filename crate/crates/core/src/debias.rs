//! Adversarial bias heads.
//!
//! Two classifiers, `g` over key embeddings and `g'` over query embeddings,
//! model the bias posteriors `Q(b | u)` and `Q'(b | v)`. The heads are trained
//! to predict the bias label (cross-entropy). The embedding networks are
//! trained against them: they minimize `E_Q[log Q]` (the negative posterior
//! entropy, pushing `Q` toward uniform) and receive the heads' cross-entropy
//! gradient with its sign reversed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Activation, Matrix, MlpCache, MlpGrads, MlpParams, Mode, ParamSet, Rng};
use crate::sennet::{se_objective, Embedding, SeModel};

/// Probabilities are clamped to `[PROB_EPS, 1 − PROB_EPS]` inside every log.
pub const PROB_EPS: f64 = 1e-7;

#[inline]
fn clamp_prob(p: f64) -> (f64, bool) {
    if p < PROB_EPS {
        (PROB_EPS, true)
    } else if p > 1.0 - PROB_EPS {
        (1.0 - PROB_EPS, true)
    } else {
        (p, false)
    }
}

/// Loss weights: `γ` scales reconstruction, `δ` mixes the elastic net, `λ`
/// weights bias mitigation and `μ` the cross-entropy relaxation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
    pub mu: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda: 1.0, mu: 1.0, gamma: 50.0, delta: 0.9 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.mu >= 0.0) || !(self.gamma > 0.0) {
            return Err(Error::Config(format!(
                "need lambda >= 0, mu >= 0, gamma > 0 (got {}, {}, {})",
                self.lambda, self.mu, self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::Config(format!("delta must lie in [0, 1], got {}", self.delta)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasHeadsConfig {
    pub hidden: Vec<usize>,
    pub n_classes: usize,
}

impl Default for BiasHeadsConfig {
    fn default() -> Self {
        BiasHeadsConfig { hidden: vec![64, 32, 16], n_classes: 2 }
    }
}

/// The two bias classifiers. Hidden layers are linear → batchnorm → ReLU;
/// the classification layer is linear and softmax is applied outside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasHeads {
    pub g: MlpParams,
    pub g_prime: MlpParams,
    pub n_classes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrads {
    pub g: MlpGrads,
    pub g_prime: MlpGrads,
}

impl ParamSet for BiasHeads {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.g.tensors();
        t.extend(self.g_prime.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.g.tensors_mut();
        t.extend(self.g_prime.tensors_mut());
        t
    }
}

impl ParamSet for HeadGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.g.tensors();
        t.extend(self.g_prime.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.g.tensors_mut();
        t.extend(self.g_prime.tensors_mut());
        t
    }
}

impl BiasHeads {
    pub fn new(embed_dim: usize, config: &BiasHeadsConfig, rng: &mut Rng) -> Result<Self> {
        if config.n_classes < 2 {
            return Err(Error::Config("bias heads need at least 2 classes".into()));
        }
        let build = |rng: &mut Rng| {
            MlpParams::feedforward(
                embed_dim,
                &config.hidden,
                config.n_classes,
                Activation::Relu,
                Activation::None,
                true,
                rng,
            )
        };
        let g = build(rng)?;
        let g_prime = build(rng)?;
        Ok(BiasHeads { g, g_prime, n_classes: config.n_classes })
    }
}

/// Row-wise softmax with max-subtraction.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut p = logits.clone();
    for i in 0..p.rows() {
        let row = p.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    p
}

/// Class posteriors of `head` for each embedding row.
pub fn bias_posterior(head: &MlpParams, emb: &Matrix, mode: Mode) -> Result<(Matrix, MlpCache)> {
    emb.ensure_finite("bias_posterior embedding")?;
    let (logits, cache) = head.forward(emb, mode)?;
    Ok((softmax_rows(&logits), cache))
}

fn check_labels(probs: &Matrix, labels: &[usize]) -> Result<()> {
    if probs.rows() != labels.len() {
        return Err(Error::LengthMismatch { left: probs.rows(), right: labels.len() });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= probs.cols()) {
        return Err(Error::LabelOutOfRange { label: bad, classes: probs.cols() });
    }
    Ok(())
}

/// Mean of `−log p(true class)` over the batch.
pub fn cross_entropy_loss(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(probs, labels)?;
    let n = labels.len().max(1) as f64;
    Ok(labels.iter().enumerate().map(|(i, &y)| -clamp_prob(probs[(i, y)]).0.ln()).sum::<f64>() / n)
}

/// Mean over rows of `Σ_k p_k log p_k`, i.e. the negative posterior entropy.
pub fn entropy_confusion_loss(probs: &Matrix) -> f64 {
    let n = probs.rows().max(1) as f64;
    let mut total = 0.0;
    for i in 0..probs.rows() {
        total += probs.row(i).iter().map(|&p| p * clamp_prob(p).0.ln()).sum::<f64>();
    }
    total / n
}

/// Gradient of [`cross_entropy_loss`] with respect to the logits.
pub fn cross_entropy_logit_grad(probs: &Matrix, labels: &[usize]) -> Result<Matrix> {
    check_labels(probs, labels)?;
    let n = labels.len().max(1) as f64;
    let mut g = Matrix::zeros(probs.rows(), probs.cols());
    for (i, &y) in labels.iter().enumerate() {
        if clamp_prob(probs[(i, y)]).1 {
            continue;
        }
        for k in 0..probs.cols() {
            let indicator = if k == y { 1.0 } else { 0.0 };
            g[(i, k)] = (probs[(i, k)] - indicator) / n;
        }
    }
    Ok(g)
}

/// Gradient of [`entropy_confusion_loss`] with respect to the logits.
pub fn entropy_confusion_logit_grad(probs: &Matrix) -> Matrix {
    let n = probs.rows().max(1) as f64;
    let mut g = Matrix::zeros(probs.rows(), probs.cols());
    for i in 0..probs.rows() {
        let row = probs.row(i);
        // a_k = ∂(Σ p log clamp(p))/∂p_k
        let a: Vec<f64> = row
            .iter()
            .map(|&p| {
                let (cp, clamped) = clamp_prob(p);
                cp.ln() + if clamped { 0.0 } else { 1.0 }
            })
            .collect();
        let mean_a: f64 = row.iter().zip(&a).map(|(p, a)| p * a).sum();
        for k in 0..row.len() {
            g[(i, k)] = row[k] * (a[k] - mean_a) / n;
        }
    }
    g
}

/// Fraction of rows whose arg-max class equals the label.
pub fn head_accuracy(probs: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| {
            let row = probs.row(i);
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best == y
        })
        .count();
    hits as f64 / labels.len() as f64
}

/// One head evaluated on one embedding, with every gradient the trainer routes.
#[derive(Clone, Debug)]
pub struct HeadPass {
    pub probs: Matrix,
    pub cross_entropy: f64,
    pub confusion: f64,
    pub accuracy: f64,
    /// Cross-entropy gradient for the head's own parameters.
    pub param_grads: MlpGrads,
    /// Cross-entropy gradient with respect to the embedding.
    pub emb_grad_ce: Matrix,
    /// Confusion-loss gradient with respect to the embedding.
    pub emb_grad_conf: Matrix,
    pub cache: MlpCache,
}

pub fn head_pass(head: &MlpParams, emb: &Matrix, labels: &[usize], mode: Mode) -> Result<HeadPass> {
    let (probs, cache) = bias_posterior(head, emb, mode)?;
    let cross_entropy = cross_entropy_loss(&probs, labels)?;
    let confusion = entropy_confusion_loss(&probs);
    let accuracy = head_accuracy(&probs, labels);
    let (param_grads, emb_grad_ce) = head.backward(&cache, &cross_entropy_logit_grad(&probs, labels)?)?;
    let (_, emb_grad_conf) = head.backward(&cache, &entropy_confusion_logit_grad(&probs))?;
    Ok(HeadPass { probs, cross_entropy, confusion, accuracy, param_grads, emb_grad_ce, emb_grad_conf, cache })
}

/// Every scalar term of the combined objective for one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CombinedLosses {
    pub l_se: f64,
    pub l_ce_key: f64,
    pub l_ce_query: f64,
    pub l_conf_key: f64,
    pub l_conf_query: f64,
    /// `l_se + λ(l_conf_key + l_conf_query) + μ(l_ce_key + l_ce_query)`; logging only.
    pub total_report: f64,
}

impl CombinedLosses {
    pub fn from_terms(l_se: f64, ce: (f64, f64), conf: (f64, f64), weights: &LossWeights) -> Self {
        CombinedLosses {
            l_se,
            l_ce_key: ce.0,
            l_ce_query: ce.1,
            l_conf_key: conf.0,
            l_conf_query: conf.1,
            total_report: l_se + weights.lambda * (conf.0 + conf.1) + weights.mu * (ce.0 + ce.1),
        }
    }
}

/// Evaluates all loss terms on a batch with train-mode statistics.
pub fn combined_losses(
    model: &SeModel,
    heads: &BiasHeads,
    batch: &Matrix,
    bias: &[usize],
    weights: &LossWeights,
) -> Result<CombinedLosses> {
    weights.validate()?;
    if batch.rows() != bias.len() {
        return Err(Error::LengthMismatch { left: batch.rows(), right: bias.len() });
    }
    let (emb, _) = model.embed(batch, Mode::Train)?;
    let se = se_objective(batch, &emb, model.alpha, model.beta(), weights.gamma, weights.delta)?;
    let (pk, _) = bias_posterior(&heads.g, &emb.u, Mode::Train)?;
    let (pq, _) = bias_posterior(&heads.g_prime, &emb.v, Mode::Train)?;
    Ok(CombinedLosses::from_terms(
        se.loss,
        (cross_entropy_loss(&pk, bias)?, cross_entropy_loss(&pq, bias)?),
        (entropy_confusion_loss(&pk), entropy_confusion_loss(&pq)),
        weights,
    ))
}

/// Key and query head passes over one embedding pair.
pub fn heads_pass(heads: &BiasHeads, emb: &Embedding, bias: &[usize], mode: Mode) -> Result<(HeadPass, HeadPass)> {
    Ok((head_pass(&heads.g, &emb.u, bias, mode)?, head_pass(&heads.g_prime, &emb.v, bias, mode)?))
}
