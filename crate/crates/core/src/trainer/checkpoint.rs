//! Binary checkpoint format.
//!
//! ```text
//! b"INVSEN01" | u64 LE manifest length | JSON manifest | f64 LE arrays
//! ```
//!
//! The manifest lists every array by name and length in storage order, along
//! with the configuration, architecture, optimizer scalars, history and the
//! position of the shuffling stream. Arrays cover network parameters,
//! batch-norm running statistics, and both optimizers' moment buffers.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpochRecord, TrainConfig, TrainState};
use crate::datagen::write_atomic;
use crate::error::{Error, Result};
use crate::numkit::{MlpParams, ParamSet, RngPosition};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"INVSEN01";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct AdamScalars {
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Architecture {
    input_dim: usize,
    model_shapes: Vec<usize>,
    head_shapes: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    epoch: usize,
    config: TrainConfig,
    architecture: Architecture,
    arrays: Vec<ArrayEntry>,
    opt_main: AdamScalars,
    opt_bias: AdamScalars,
    history: Vec<EpochRecord>,
    rng: RngPosition,
}

fn net_arrays_mut<'a>(prefix: &str, net: &'a mut MlpParams, out: &mut Vec<(String, &'a mut [f64])>) {
    for (i, layer) in net.layers.iter_mut().enumerate() {
        out.push((format!("{prefix}.layer{i}.weights"), layer.weights.data_mut()));
        out.push((format!("{prefix}.layer{i}.bias"), layer.bias.as_mut_slice()));
        if let Some(bn) = &mut layer.batchnorm {
            out.push((format!("{prefix}.layer{i}.bn_scale"), bn.scale.as_mut_slice()));
            out.push((format!("{prefix}.layer{i}.bn_shift"), bn.shift.as_mut_slice()));
            out.push((format!("{prefix}.layer{i}.running_mean"), bn.running_mean.as_mut_slice()));
            out.push((format!("{prefix}.layer{i}.running_var"), bn.running_var.as_mut_slice()));
        }
    }
}

/// Every stored array of `state`, in storage order.
fn arrays_mut(state: &mut TrainState) -> Vec<(String, &mut [f64])> {
    let mut out = Vec::new();
    let model = &mut state.model;
    net_arrays_mut("key_net", &mut model.key_net, &mut out);
    net_arrays_mut("query_net", &mut model.query_net, &mut out);
    out.push(("beta_raw".into(), std::slice::from_mut(&mut model.beta_raw)));
    out.push(("alpha".into(), std::slice::from_mut(&mut model.alpha)));
    net_arrays_mut("head_g", &mut state.heads.g, &mut out);
    net_arrays_mut("head_g_prime", &mut state.heads.g_prime, &mut out);
    for (tag, opt) in [("opt_main", &mut state.opt_main), ("opt_bias", &mut state.opt_bias)] {
        for (i, m) in opt.m.iter_mut().enumerate() {
            out.push((format!("{tag}.m{i}"), m.as_mut_slice()));
        }
        for (i, v) in opt.v.iter_mut().enumerate() {
            out.push((format!("{tag}.v{i}"), v.as_mut_slice()));
        }
    }
    out
}

fn scalars(opt: &crate::numkit::Adam) -> AdamScalars {
    AdamScalars { t: opt.t, lr: opt.lr, beta1: opt.beta1, beta2: opt.beta2, eps: opt.eps }
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let mut copy = state.clone();
    let input_dim = copy.model.input_dim();
    let architecture = Architecture { input_dim, model_shapes: copy.model.shapes(), head_shapes: copy.heads.shapes() };
    let opt_main = scalars(&copy.opt_main);
    let opt_bias = scalars(&copy.opt_bias);
    let rng = copy.rng_position();
    let (epoch, config, history) = (copy.epoch, copy.config.clone(), copy.history.clone());

    let arrays = arrays_mut(&mut copy);
    let entries: Vec<ArrayEntry> =
        arrays.iter().map(|(name, a)| ArrayEntry { name: name.clone(), len: a.len() }).collect();
    let manifest = Manifest {
        format_version: CHECKPOINT_VERSION,
        epoch,
        config,
        architecture,
        arrays: entries,
        opt_main,
        opt_bias,
        history,
        rng,
    };
    let json = serde_json::to_vec(&manifest)?;
    let total: usize = arrays.iter().map(|(_, a)| a.len()).sum();
    let mut bytes = Vec::with_capacity(16 + json.len() + 8 * total);
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for (_, a) in &arrays {
        for v in a.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = fs::read(path)?;
    let bad = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let mut len_bytes = [0u8; 8];
    len_bytes.copy_from_slice(&bytes[8..16]);
    let json_len =
        usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| bad("manifest length overflows".into()))?;
    let body = bytes.get(16..16usize.saturating_add(json_len)).ok_or_else(|| bad("truncated manifest".into()))?;
    let manifest: Manifest = serde_json::from_slice(body).map_err(|e| bad(format!("invalid manifest: {e}")))?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "unsupported format version {} (expected {CHECKPOINT_VERSION})",
            manifest.format_version
        )));
    }

    let mut state = TrainState::init(manifest.config.clone(), manifest.architecture.input_dim)?;
    if state.model.shapes() != manifest.architecture.model_shapes
        || state.heads.shapes() != manifest.architecture.head_shapes
    {
        return Err(bad("architecture does not match its configuration".into()));
    }
    let mut data = &bytes[16 + json_len..];
    {
        let arrays = arrays_mut(&mut state);
        if arrays.len() != manifest.arrays.len() {
            return Err(bad(format!("expected {} arrays, manifest lists {}", arrays.len(), manifest.arrays.len())));
        }
        for ((name, dst), entry) in arrays.into_iter().zip(&manifest.arrays) {
            if name != entry.name || dst.len() != entry.len {
                return Err(bad(format!(
                    "array '{}' (len {}) where '{name}' (len {}) was expected",
                    entry.name,
                    entry.len,
                    dst.len()
                )));
            }
            let need = 8 * entry.len;
            if data.len() < need {
                return Err(bad(format!("truncated data in array '{name}'")));
            }
            for (v, chunk) in dst.iter_mut().zip(data[..need].chunks_exact(8)) {
                let mut b = [0u8; 8];
                b.copy_from_slice(chunk);
                *v = f64::from_le_bytes(b);
            }
            data = &data[need..];
        }
    }
    if !data.is_empty() {
        return Err(bad(format!("{} trailing bytes", data.len())));
    }
    for (opt, s) in [(&mut state.opt_main, &manifest.opt_main), (&mut state.opt_bias, &manifest.opt_bias)] {
        opt.t = s.t;
        opt.lr = s.lr;
        opt.beta1 = s.beta1;
        opt.beta2 = s.beta2;
        opt.eps = s.eps;
    }
    state.epoch = manifest.epoch;
    state.history = manifest.history;
    if state.rng_position() != manifest.rng {
        return Err(bad("stored shuffle position disagrees with seed and epoch".into()));
    }
    state.model.validate()?;
    Ok(state)
}
