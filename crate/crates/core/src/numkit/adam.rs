use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::error::{Error, Result};

/// Adam optimizer state, one moment buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    /// Fresh state with the usual `β₁ = 0.9, β₂ = 0.999, ε = 1e-8`.
    pub fn new(params: &impl ParamSet, lr: f64) -> Result<Self> {
        Adam::with_betas(params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &impl ParamSet, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !(lr > 0.0) || !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
            return Err(Error::Config(format!("adam: lr={lr}, beta1={beta1}, beta2={beta2}, eps={eps}")));
        }
        let shapes = params.shapes();
        Ok(Adam {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            lr,
            beta1,
            beta2,
            eps,
        })
    }

    fn check_shapes(&self, shapes: &[usize], what: &str) -> Result<()> {
        let mine: Vec<usize> = self.m.iter().map(Vec::len).collect();
        if mine != shapes {
            return Err(Error::dims(format!("adam {what} shapes"), format!("{mine:?}"), format!("{shapes:?}")));
        }
        Ok(())
    }

    /// One bias-corrected Adam update of `params` against `grads`.
    pub fn step(&mut self, params: &mut impl ParamSet, grads: &impl ParamSet) -> Result<()> {
        self.check_shapes(&params.shapes(), "param")?;
        self.check_shapes(&grads.shapes(), "grad")?;
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(&mut self.m).zip(&mut self.v)
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        if params.tensors().iter().any(|t| t.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("parameters after adam step".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scalar(Vec<f64>);

    impl ParamSet for Scalar {
        fn tensors(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Scalar(vec![1.5, -2.0]);
        let mut opt = Adam::new(&p, 1e-3).unwrap();
        opt.step(&mut p, &Scalar(vec![0.0, 0.0])).unwrap();
        assert_eq!(p.0, vec![1.5, -2.0]);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        for g in [3.0, -0.25] {
            let mut p = Scalar(vec![0.0]);
            let mut opt = Adam::new(&p, 1e-3).unwrap();
            opt.step(&mut p, &Scalar(vec![g])).unwrap();
            assert!((p.0[0] + 1e-3 * f64::signum(g)).abs() < 1e-10);
        }
    }

    #[test]
    fn matches_independent_adam_on_quadratic() {
        // loss = ½·a·(p − c)², gradient a·(p − c)
        let (a, c) = (3.0, 0.7);
        let (lr, b1, b2, eps) = (0.05, 0.9, 0.999, 1e-8);
        let mut p = Scalar(vec![-1.2]);
        let mut opt = Adam::with_betas(&p, lr, b1, b2, eps).unwrap();

        let (mut q, mut m, mut v) = (-1.2f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            let g = a * (p.0[0] - c);
            opt.step(&mut p, &Scalar(vec![g])).unwrap();

            let gq = a * (q - c);
            m = b1 * m + (1.0 - b1) * gq;
            v = b2 * v + (1.0 - b2) * gq * gq;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            q -= lr * mh / (vh.sqrt() + eps);
            assert!((p.0[0] - q).abs() < 1e-12, "step {t}: {} vs {q}", p.0[0]);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = Scalar(vec![0.0; 3]);
        let mut opt = Adam::new(&p, 1e-3).unwrap();
        assert!(opt.step(&mut p, &Scalar(vec![0.0; 2])).is_err());
    }
}
