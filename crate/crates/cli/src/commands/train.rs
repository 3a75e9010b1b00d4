use std::fmt::Write as _;
use std::path::PathBuf;

use invsen::datagen::load_dataset;
use invsen::debias::LossWeights;
use invsen::trainer::{load_checkpoint, resume, save_checkpoint, EpochRecord, ModelConfig, TrainConfig, TrainState};
use serde_json::json;

use super::{ensure_dir, required, write_file};
use crate::error::{CliError, CliResult};
use crate::TrainArgs;

pub const HISTORY_HEADER: &str = "epoch,l_se,l_conf_key,l_conf_query,l_ce_key,l_ce_query,bias_head_acc";

fn train_config(a: &TrainArgs, checkpoint: PathBuf) -> TrainConfig {
    let d = TrainConfig::default();
    let (dw, dm) = (LossWeights::default(), ModelConfig::default());
    TrainConfig {
        epochs: a.epochs.unwrap_or(d.epochs),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        lr_main: a.lr.unwrap_or(d.lr_main),
        lr_bias: a.lr_bias.unwrap_or(d.lr_bias),
        weights: LossWeights {
            lambda: a.lambda.unwrap_or(dw.lambda),
            mu: a.mu.unwrap_or(dw.mu),
            gamma: a.gamma.unwrap_or(dw.gamma),
            delta: a.delta.unwrap_or(dw.delta),
        },
        seed: a.seed.unwrap_or(d.seed),
        eval_every: a.eval_every.unwrap_or(d.eval_every),
        checkpoint_path: Some(checkpoint),
        model: ModelConfig {
            hidden: a.hidden.clone().unwrap_or(dm.hidden),
            embed_dim: a.embed_dim.unwrap_or(dm.embed_dim),
            alpha: a.alpha.unwrap_or(dm.alpha),
            learn_alpha: a.learn_alpha.unwrap_or(dm.learn_alpha),
            beta_init: a.beta_init.unwrap_or(dm.beta_init),
            head_hidden: a.head_hidden.clone().unwrap_or(dm.head_hidden),
            n_bias_classes: a.bias_classes.unwrap_or(dm.n_bias_classes),
        },
    }
}

/// Rows every `eval_every` epochs, plus the last one. `epoch` counts completed epochs.
pub fn history_csv(history: &[EpochRecord], eval_every: usize) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for (i, r) in history.iter().enumerate() {
        if (r.epoch + 1) % eval_every != 0 && i + 1 != history.len() {
            continue;
        }
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch + 1,
            r.l_se,
            r.l_conf_key,
            r.l_conf_query,
            r.l_ce_key,
            r.l_ce_query,
            r.bias_head_acc
        );
    }
    out
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let data_path = required(a.data.clone(), "data")?;
    let out = required(a.out.clone(), "out")?;
    let ckpt = out.join("model.ckpt");
    let config = train_config(&a, ckpt.clone());
    config.validate()?;
    let dataset = load_dataset(&data_path).map_err(CliError::file(&data_path))?;
    ensure_dir(&out)?;

    let mut state = if a.resume == Some(true) && ckpt.exists() {
        let mut s = load_checkpoint(&ckpt).map_err(CliError::file(&ckpt))?;
        // Architecture, weights and seed come from the checkpoint; only the epoch budget moves.
        s.config.epochs = config.epochs;
        s.config.checkpoint_path = Some(ckpt.clone());
        s
    } else {
        TrainState::init(config, dataset.dim())?
    };

    let result = resume(&mut state, &dataset, |_, _| {});
    let history = out.join("history.csv");
    write_file(history.clone(), history_csv(&state.history, state.config.eval_every).as_bytes())?;
    if let Err(e) = result {
        if let invsen::Error::Diverged { snapshot: Some(p), .. } = &e {
            eprintln!("invsen: last good state written to {}", p.display());
        }
        return Err(e.into());
    }
    save_checkpoint(&state, &ckpt).map_err(CliError::file(&ckpt))?;

    let last = state.history.last().copied();
    let summary = json!({
        "checkpoint": ckpt.display().to_string(),
        "history": history.display().to_string(),
        "epochs": state.epoch,
        "last": last,
    });
    println!("{summary}");
    Ok(())
}
