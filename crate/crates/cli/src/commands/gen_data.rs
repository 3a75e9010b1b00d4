use invsen::datagen::{generate, make_mixed_domain, make_ood_split, save_dataset, DataGenConfig, Dataset};
use invsen::evalmetrics::discrete_mi;
use serde_json::json;

use super::{ensure_dir, required};
use crate::error::{CliError, CliResult};
use crate::{DataMode, GenDataArgs};

pub fn gen_data(a: GenDataArgs) -> CliResult<()> {
    let out = required(a.out, "out")?;
    let d = DataGenConfig::default();
    let cfg = DataGenConfig {
        k_subspaces: a.k.unwrap_or(d.k_subspaces),
        ambient_dim: a.d.unwrap_or(d.ambient_dim),
        subspace_rank: a.rank.unwrap_or(d.subspace_rank),
        n_per_cluster: a.n_per.unwrap_or(d.n_per_cluster),
        noise_sigma: a.sigma.unwrap_or(d.noise_sigma),
        bias_strength: a.bias_strength.unwrap_or(d.bias_strength),
        bias_flip_e: a.e.unwrap_or(d.bias_flip_e),
        label_flip: a.label_flip.unwrap_or(d.label_flip),
        seed: a.seed.unwrap_or(d.seed),
    };
    cfg.validate()?;
    let mode = a.mode.unwrap_or(DataMode::Ood);
    let sets: Vec<(&str, Dataset)> = match mode {
        DataMode::Ood => {
            let (train, test) = make_ood_split(&cfg, cfg.bias_flip_e, a.test_e.unwrap_or(0.5))?;
            vec![("train", train), ("test", test)]
        }
        DataMode::Mixed => vec![("mixed", make_mixed_domain(&cfg, cfg.bias_flip_e, a.n_ratio.unwrap_or(0.5))?)],
        DataMode::Plain => vec![("data", generate(&cfg)?)],
    };

    ensure_dir(&out)?;
    let mut written = Vec::new();
    let mut files = Vec::new();
    for (name, ds) in &sets {
        let path = out.join(format!("{name}.csv"));
        if let Err(e) = save_dataset(ds, &path) {
            // Leave nothing behind from a half-finished set.
            for p in &written {
                let _ = std::fs::remove_file(p);
            }
            return Err(CliError::file(path)(e));
        }
        let mi = match (&ds.s, &ds.b) {
            (Some(s), Some(b)) => Some(discrete_mi(s, b)?),
            _ => None,
        };
        files.push(json!({ "path": path.display().to_string(), "n": ds.len(), "mi_b_s": mi }));
        written.push(path);
    }
    let summary = json!({
        "mode": mode,
        "k": cfg.k_subspaces,
        "d": cfg.ambient_dim,
        "files": files,
    });
    println!("{summary}");
    Ok(())
}
