//! Min-max training loop.
//!
//! Each step runs one forward pass and then applies two updates computed from
//! it:
//!
//! 1. the bias heads take an Adam step (`opt_bias`) on their cross-entropy,
//!    reading the embeddings as constants;
//! 2. the key/query networks, `β` and (optionally) `α` take an Adam step
//!    (`opt_main`) on `L_SE + λ(L_conf^key + L_conf^query)`, plus the heads'
//!    cross-entropy gradient at the embeddings scaled by `−λμ` (gradient
//!    reversal).

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::debias::{heads_pass, BiasHeads, BiasHeadsConfig, CombinedLosses, HeadGrads, LossWeights};
use crate::error::{Error, Result};
use crate::numkit::{derive_seed, Adam, Matrix, Mode, Rng, RngPosition};
use crate::sennet::{se_objective, SeGrads, SeModel, SeModelConfig};

/// Divergence guard on `total_report`.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Architecture shared by the embedding networks and the bias heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub alpha: f64,
    pub learn_alpha: bool,
    pub beta_init: f64,
    pub head_hidden: Vec<usize>,
    pub n_bias_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![64, 64],
            embed_dim: 64,
            alpha: 1.0,
            learn_alpha: false,
            beta_init: 0.1,
            head_hidden: vec![64, 32, 16],
            n_bias_classes: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_main: f64,
    pub lr_bias: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub eval_every: usize,
    pub checkpoint_path: Option<PathBuf>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 100,
            lr_main: 1e-3,
            lr_bias: 1e-4,
            weights: LossWeights::default(),
            seed: 0,
            eval_every: 1,
            checkpoint_path: None,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(self.lr_main > 0.0) || !(self.lr_bias > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        Ok(())
    }

    pub fn se_model_config(&self, input_dim: usize) -> SeModelConfig {
        SeModelConfig {
            input_dim,
            hidden: self.model.hidden.clone(),
            embed_dim: self.model.embed_dim,
            alpha: self.model.alpha,
            learn_alpha: self.model.learn_alpha,
            beta_init: self.model.beta_init,
        }
    }

    pub fn heads_config(&self) -> BiasHeadsConfig {
        BiasHeadsConfig { hidden: self.model.head_hidden.clone(), n_classes: self.model.n_bias_classes }
    }
}

/// Mean loss terms over one epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_se: f64,
    pub l_conf_key: f64,
    pub l_conf_query: f64,
    pub l_ce_key: f64,
    pub l_ce_query: f64,
    /// Mean of the two heads' batch accuracies.
    pub bias_head_acc: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub model: SeModel,
    pub heads: BiasHeads,
    pub opt_main: Adam,
    pub opt_bias: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub losses: CombinedLosses,
    pub bias_acc_key: f64,
    pub bias_acc_query: f64,
    /// False when the batch carried no bias labels and the heads were skipped.
    pub heads_active: bool,
}

impl StepReport {
    pub fn bias_head_acc(&self) -> f64 {
        0.5 * (self.bias_acc_key + self.bias_acc_query)
    }
}

/// Every gradient one step produces, before any update is applied.
#[derive(Clone, Debug)]
pub struct StepGradients {
    /// Gradient applied to the embedding side (`opt_main`).
    pub main: SeGrads,
    /// Cross-entropy gradient applied to the heads (`opt_bias`); `None` without labels.
    pub heads: Option<HeadGrads>,
    /// Cross-entropy gradients at the key and query embeddings, unscaled.
    pub ce_emb_grads: Option<(Matrix, Matrix)>,
    pub report: StepReport,
    head_caches: Option<(crate::numkit::MlpCache, crate::numkit::MlpCache)>,
}

impl TrainState {
    /// Fresh state. Networks and heads draw from independent derived streams,
    /// so the embedding initialization does not depend on whether heads exist.
    pub fn init(config: TrainConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        let mut model_rng = Rng::derived(config.seed, "trainer/sennet-init");
        let mut head_rng = Rng::derived(config.seed, "trainer/heads-init");
        let model = SeModel::new(&config.se_model_config(input_dim), &mut model_rng)?;
        let heads = BiasHeads::new(config.model.embed_dim, &config.heads_config(), &mut head_rng)?;
        let opt_main = Adam::new(&model, config.lr_main)?;
        let opt_bias = Adam::new(&heads, config.lr_bias)?;
        Ok(TrainState { config, model, heads, opt_main, opt_bias, epoch: 0, history: Vec::new() })
    }

    /// Position of the shuffling stream for the next epoch.
    pub fn rng_position(&self) -> RngPosition {
        shuffle_rng(self.config.seed, self.epoch).position()
    }

    /// Computes every gradient of one step on `batch` without mutating anything.
    pub fn step_gradients(
        &self,
        batch: &Matrix,
        bias: Option<&[usize]>,
        weights: &LossWeights,
    ) -> Result<StepGradients> {
        let model = &self.model;
        let (emb, cache) = model.embed(batch, Mode::Train)?;
        let se = se_objective(batch, &emb, model.alpha, model.beta(), weights.gamma, weights.delta)?;
        let mut grad_u = se.grad_u;
        let mut grad_v = se.grad_v;

        let (losses, heads, ce_emb_grads, head_caches, accs) = match bias {
            Some(b) => {
                if b.len() != batch.rows() {
                    return Err(Error::LengthMismatch { left: batch.rows(), right: b.len() });
                }
                let (hk, hq) = heads_pass(&self.heads, &emb, b, Mode::Train)?;
                if weights.lambda != 0.0 {
                    let reverse = -weights.lambda * weights.mu;
                    grad_u.add_scaled(&hk.emb_grad_conf, weights.lambda)?;
                    grad_u.add_scaled(&hk.emb_grad_ce, reverse)?;
                    grad_v.add_scaled(&hq.emb_grad_conf, weights.lambda)?;
                    grad_v.add_scaled(&hq.emb_grad_ce, reverse)?;
                }
                let losses = CombinedLosses::from_terms(
                    se.loss,
                    (hk.cross_entropy, hq.cross_entropy),
                    (hk.confusion, hq.confusion),
                    weights,
                );
                (
                    losses,
                    Some(HeadGrads { g: hk.param_grads, g_prime: hq.param_grads }),
                    Some((hk.emb_grad_ce, hq.emb_grad_ce)),
                    Some((hk.cache, hq.cache)),
                    (hk.accuracy, hq.accuracy),
                )
            }
            None => {
                if weights.lambda > 0.0 {
                    return Err(Error::Config("bias labels are required when lambda > 0".into()));
                }
                let losses = CombinedLosses::from_terms(se.loss, (0.0, 0.0), (0.0, 0.0), weights);
                (losses, None, None, None, (0.0, 0.0))
            }
        };

        let (key, query) = model.backward_embedding(&cache, &grad_u, &grad_v)?;
        let main = SeGrads {
            key,
            query,
            beta_raw: se.grad_beta * sigmoid(model.beta_raw),
            alpha: if model.learn_alpha { se.grad_alpha } else { 0.0 },
        };
        Ok(StepGradients {
            main,
            heads,
            ce_emb_grads,
            report: StepReport { losses, bias_acc_key: accs.0, bias_acc_query: accs.1, heads_active: bias.is_some() },
            head_caches,
        })
    }

    /// One min-max step: heads first, then the embedding networks, from one forward pass.
    pub fn train_step(&mut self, batch: &Matrix, bias: Option<&[usize]>, weights: &LossWeights) -> Result<StepReport> {
        let grads = self.step_gradients(batch, bias, weights)?;
        let total = grads.report.losses.total_report;
        if !total.is_finite() || total > DIVERGENCE_LIMIT {
            return Err(Error::Diverged { epoch: self.epoch, step: self.opt_main.t as usize, total, snapshot: None });
        }
        if let (Some(hg), Some((ck, cq))) = (&grads.heads, &grads.head_caches) {
            self.opt_bias.step(&mut self.heads, hg)?;
            self.heads.g.update_running_stats(ck)?;
            self.heads.g_prime.update_running_stats(cq)?;
        }
        self.opt_main.step(&mut self.model, &grads.main)?;
        Ok(grads.report)
    }

    /// Runs one epoch over `x` (already normalized) in the shuffled order for this epoch.
    pub fn run_epoch(&mut self, x: &Matrix, bias: Option<&[usize]>) -> Result<EpochRecord> {
        let n = x.rows();
        let order = shuffle_rng(self.config.seed, self.epoch).permutation(n);
        let weights = self.config.weights;
        let mut sums = EpochRecord { epoch: self.epoch, ..EpochRecord::default() };
        let mut batches = 0usize;
        for idx in order.chunks(self.config.batch_size) {
            if idx.len() < 2 {
                continue;
            }
            let batch = x.select_rows(idx);
            let labels: Option<Vec<usize>> = bias.map(|b| idx.iter().map(|&i| b[i]).collect());
            let report = self.train_step(&batch, labels.as_deref(), &weights)?;
            let l = report.losses;
            sums.l_se += l.l_se;
            sums.l_conf_key += l.l_conf_key;
            sums.l_conf_query += l.l_conf_query;
            sums.l_ce_key += l.l_ce_key;
            sums.l_ce_query += l.l_ce_query;
            sums.total += l.total_report;
            sums.bias_head_acc += report.bias_head_acc();
            batches += 1;
        }
        if batches > 0 {
            let m = batches as f64;
            for v in [
                &mut sums.l_se,
                &mut sums.l_conf_key,
                &mut sums.l_conf_query,
                &mut sums.l_ce_key,
                &mut sums.l_ce_query,
                &mut sums.total,
                &mut sums.bias_head_acc,
            ] {
                *v /= m;
            }
        }
        self.epoch += 1;
        self.history.push(sums);
        Ok(sums)
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// The shuffle order of an epoch is a pure function of `(seed, epoch)`.
fn shuffle_rng(seed: u64, epoch: usize) -> Rng {
    Rng::with_stream(derive_seed(seed, "trainer/shuffle"), epoch as u64)
}

fn check_dataset(config: &TrainConfig, dataset: &Dataset) -> Result<()> {
    dataset.validate()?;
    if config.weights.lambda > 0.0 && dataset.b.is_none() {
        return Err(Error::Config(format!(
            "dataset '{}' has no bias labels but lambda = {}",
            dataset.name, config.weights.lambda
        )));
    }
    if dataset.len() < 2 {
        return Err(Error::Config("training needs at least 2 samples".into()));
    }
    if let Some(b) = &dataset.b {
        if let Some(&bad) = b.iter().find(|&&l| l >= config.model.n_bias_classes) {
            return Err(Error::LabelOutOfRange { label: bad, classes: config.model.n_bias_classes });
        }
    }
    Ok(())
}

/// Trains from scratch for `config.epochs` epochs.
pub fn fit(config: TrainConfig, dataset: &Dataset) -> Result<TrainState> {
    config.validate()?;
    check_dataset(&config, dataset)?;
    let mut state = TrainState::init(config, dataset.dim())?;
    resume(&mut state, dataset, |_, _| {})?;
    Ok(state)
}

/// Continues `state` until `state.config.epochs` epochs are complete.
///
/// `on_epoch` sees the state after every epoch. When a checkpoint path is
/// configured the state is saved every `eval_every` epochs and at the end;
/// on divergence the last good state is dumped next to it.
pub fn resume(
    state: &mut TrainState,
    dataset: &Dataset,
    mut on_epoch: impl FnMut(&TrainState, &EpochRecord),
) -> Result<()> {
    check_dataset(&state.config, dataset)?;
    let x = dataset.normalized_features();
    // Heads only run when they can learn something or affect the features.
    let bias = dataset.b.as_deref();
    while state.epoch < state.config.epochs {
        let before = state.clone();
        let record = match state.run_epoch(&x, bias) {
            Ok(r) => r,
            Err(Error::Diverged { epoch, step, total, .. }) => {
                let snapshot = match &before.config.checkpoint_path {
                    Some(p) => {
                        let dump = p.with_extension("diverged.ckpt");
                        save_checkpoint(&before, &dump)?;
                        Some(dump)
                    }
                    None => None,
                };
                *state = before;
                return Err(Error::Diverged { epoch, step, total, snapshot });
            }
            Err(e) => return Err(e),
        };
        on_epoch(state, &record);
        if let Some(p) = &state.config.checkpoint_path {
            if state.epoch.is_multiple_of(state.config.eval_every) || state.epoch == state.config.epochs {
                save_checkpoint(state, p)?;
            }
        }
    }
    Ok(())
}
