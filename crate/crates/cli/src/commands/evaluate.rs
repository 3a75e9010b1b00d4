use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::{SystemTime, UNIX_EPOCH};

use invsen::cluster::{affinity_from_coefficients, spectral_cluster, LaplacianKind, SpectralConfig};
use invsen::datagen::load_dataset;
use invsen::evalmetrics::{subspace_preserving_rate, MetricsReport};
use invsen::numkit::{derive_seed, Mode};
use invsen::trainer::load_checkpoint;

use super::{ensure_dir, method_name, required, write_file, Meta, MetricsFile, SplitMetrics};
use crate::error::{CliError, CliResult};
use crate::{EvaluateArgs, LaplacianArg};

pub fn evaluate(a: EvaluateArgs) -> CliResult<()> {
    let ckpt = required(a.checkpoint, "checkpoint")?;
    let data = required(a.data.filter(|d| !d.is_empty()), "data")?;
    let k = required(a.k, "k")?;
    let out = required(a.out, "out")?;

    let mut names = BTreeSet::new();
    for p in &data {
        let split = split_name(p);
        if !names.insert(split.clone()) {
            return Err(CliError::Usage(format!("two datasets share the split name {split:?}")));
        }
    }

    let state = load_checkpoint(&ckpt).map_err(CliError::file(&ckpt))?;
    let mut sc = SpectralConfig::new(k);
    sc.seed = derive_seed(a.seed.unwrap_or(state.config.seed), "cluster");
    if let Some(r) = a.restarts {
        sc.kmeans_restarts = r;
    }
    sc.laplacian = match a.laplacian.unwrap_or(LaplacianArg::Sym) {
        LaplacianArg::Sym => LaplacianKind::Symmetric,
        LaplacianArg::Unnormalized => LaplacianKind::Unnormalized,
    };
    sc.validate()?;
    ensure_dir(&out)?;

    let mut splits = Vec::new();
    for path in &data {
        let ds = load_dataset(path).map_err(CliError::file(path))?;
        let truth =
            ds.s.as_deref()
                .ok_or_else(|| CliError::Usage(format!("{}: no cluster labels to score against", path.display())))?;
        let split = split_name(path);
        let c = state.model.coefficients(&ds.normalized_features(), Mode::Eval).map_err(CliError::file(path))?;
        let affinity = affinity_from_coefficients(&c)?;
        let labels = spectral_cluster(&affinity, &sc).map_err(CliError::file(path))?;
        let metrics = MetricsReport::compute(labels.labels(), truth, ds.b.as_deref())?;
        if a.save_affinity == Some(true) {
            let p = out.join(format!("affinity-{split}.csv"));
            affinity.save_csv(&p).map_err(CliError::file(p))?;
        }
        splits.push(SplitMetrics {
            split,
            dataset: path.display().to_string(),
            subspace_preserving: subspace_preserving_rate(&c, truth)?.rate,
            sparsity: c.sparsity(),
            metrics,
        });
    }

    let w = state.config.weights;
    let file = MetricsFile {
        checkpoint: ckpt.display().to_string(),
        method: method_name(w.lambda).into(),
        lambda: w.lambda,
        mu: w.mu,
        epochs: state.epoch,
        k,
        splits,
        meta: Some(Meta {
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            version: env!("CARGO_PKG_VERSION").into(),
        }),
    };
    let mut json = serde_json::to_string_pretty(&file).map_err(invsen::Error::from)?;
    json.push('\n');
    write_file(out.join("metrics.json"), json.as_bytes())?;

    let mut csv = format!("split,{}\n", MetricsReport::CSV_HEADER);
    for s in &file.splits {
        let _ = writeln!(csv, "{},{}", s.split, s.metrics.csv_row());
        println!(
            "{}: acc {:.4} nmi {:.4} ari {:.4} n {}",
            s.split, s.metrics.acc, s.metrics.nmi, s.metrics.ari, s.metrics.n
        );
    }
    write_file(out.join("metrics.csv"), csv.as_bytes())?;
    Ok(())
}

fn split_name(path: &std::path::Path) -> String {
    path.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned())
}
