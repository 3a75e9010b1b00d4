use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use super::{ensure_dir, write_file, MetricsFile};
use crate::error::{CliError, CliResult};
use crate::ReportArgs;

struct Row {
    file: String,
    dataset: String,
    method: String,
    lambda: f64,
    n: usize,
    acc: f64,
    nmi: f64,
    ari: f64,
}

/// Percent with two decimals: 0.7851 renders as "78.51".
pub fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn load(path: &PathBuf) -> CliResult<MetricsFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::file(path)(e.into()))?;
    let file: MetricsFile = serde_json::from_str(&text).map_err(|e| CliError::file(path)(e.into()))?;
    for s in &file.splits {
        s.metrics.validate().map_err(CliError::file(path))?;
    }
    Ok(file)
}

pub fn report(a: ReportArgs) -> CliResult<()> {
    let mut paths = a.files;
    paths.sort();
    paths.dedup();
    let mut rows = Vec::new();
    for p in &paths {
        let m = load(p)?;
        for s in m.splits {
            rows.push(Row {
                file: p.display().to_string(),
                dataset: s.split,
                method: m.method.clone(),
                lambda: m.lambda,
                n: s.metrics.n,
                acc: s.metrics.acc,
                nmi: s.metrics.nmi,
                ari: s.metrics.ari,
            });
        }
    }

    // Accuracy change against the first baseline row on the same split.
    let mut baseline: BTreeMap<&str, f64> = BTreeMap::new();
    for r in &rows {
        if r.lambda == 0.0 {
            baseline.entry(&r.dataset).or_insert(r.acc);
        }
    }
    let header = ["File", "Dataset", "Method", "N", "ACC", "NMI", "ARI", "dACC"];
    let table: Vec<[String; 8]> = rows
        .iter()
        .map(|r| {
            let delta =
                baseline.get(r.dataset.as_str()).map_or_else(String::new, |b| format!("{:+.2}", 100.0 * (r.acc - b)));
            [
                r.file.clone(),
                r.dataset.clone(),
                r.method.clone(),
                r.n.to_string(),
                pct(r.acc),
                pct(r.nmi),
                pct(r.ari),
                delta,
            ]
        })
        .collect();

    let mut csv = String::from("file,dataset,method,n,acc,nmi,ari,delta_acc\n");
    for row in &table {
        let _ = writeln!(csv, "{}", row.join(","));
    }

    let mut widths = header.map(str::len);
    for row in &table {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut text = String::new();
    let line = |cells: &[&str], out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| if i < 3 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&header, &mut text);
    for row in &table {
        line(&row.iter().map(String::as_str).collect::<Vec<_>>(), &mut text);
    }

    print!("{text}");
    if let Some(dir) = a.out {
        ensure_dir(&dir)?;
        write_file(dir.join("report.csv"), csv.as_bytes())?;
        write_file(dir.join("report.txt"), text.as_bytes())?;
    }
    Ok(())
}
