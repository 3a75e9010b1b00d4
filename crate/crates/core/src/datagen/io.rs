//! Dataset CSV format.
//!
//! ```text
//! # invsen-dataset v1 n=<n> d=<d> has_s=<0|1> has_b=<0|1>
//! x_1,…,x_d[,s][,b]
//! ```
//!
//! Features are written with Rust's shortest round-trip float formatting, so
//! a save/load cycle reproduces them exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::numkit::Matrix;

const MAGIC: &str = "# invsen-dataset v1";

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path.file_name().ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp-{}", file_name.to_string_lossy(), std::process::id()));
    if let Err(e) = fs::write(&tmp, bytes) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    if let Err(e) = fs::rename(&tmp, path) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    dataset.validate()?;
    let (n, d) = dataset.x.shape();
    let mut out = String::with_capacity(n * d * 20);
    let _ = writeln!(
        out,
        "{MAGIC} n={n} d={d} has_s={} has_b={}",
        u8::from(dataset.s.is_some()),
        u8::from(dataset.b.is_some())
    );
    for i in 0..n {
        for (j, v) in dataset.x.row(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        for labels in [&dataset.s, &dataset.b].into_iter().flatten() {
            let _ = write!(out, ",{}", labels[i]);
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

struct Header {
    n: usize,
    d: usize,
    has_s: bool,
    has_b: bool,
}

fn parse_header(line: &str, path: &str) -> Result<Header> {
    let err = |message: String| Error::Format { path: path.to_string(), line: 1, message };
    let rest = line.strip_prefix(MAGIC).ok_or_else(|| err(format!("expected header starting with '{MAGIC}'")))?;
    let (mut n, mut d, mut has_s, mut has_b) = (None, None, None, None);
    for token in rest.split_whitespace() {
        let (key, value) = token.split_once('=').ok_or_else(|| err(format!("malformed header field '{token}'")))?;
        let parsed: usize =
            value.parse().map_err(|_| err(format!("header field '{key}' is not an integer: '{value}'")))?;
        match key {
            "n" => n = Some(parsed),
            "d" => d = Some(parsed),
            "has_s" | "has_b" => {
                if parsed > 1 {
                    return Err(err(format!("header field '{key}' must be 0 or 1")));
                }
                if key == "has_s" {
                    has_s = Some(parsed == 1);
                } else {
                    has_b = Some(parsed == 1);
                }
            }
            other => return Err(err(format!("unknown header field '{other}'"))),
        }
    }
    match (n, d, has_s, has_b) {
        (Some(n), Some(d), Some(has_s), Some(has_b)) => Ok(Header { n, d, has_s, has_b }),
        _ => Err(err("header must define n, d, has_s and has_b".into())),
    }
}

/// Reads a dataset file. Features are returned as stored, not normalized.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let shown = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = parse_header(lines.next().unwrap_or(""), &shown)?;
    let width = header.d + usize::from(header.has_s) + usize::from(header.has_b);

    let mut data = Vec::with_capacity(header.n * header.d);
    let mut s = header.has_s.then(|| Vec::with_capacity(header.n));
    let mut b = header.has_b.then(|| Vec::with_capacity(header.n));
    let mut rows = 0;
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Format { path: shown.clone(), line: line_no, message };
        if rows == header.n {
            return Err(err(format!("expected n={} rows, found more", header.n)));
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != width {
            return Err(err(format!("expected {width} fields, found {}", fields.len())));
        }
        for f in &fields[..header.d] {
            let v: f64 = f.parse().map_err(|_| err(format!("invalid number '{f}'")))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite feature '{f}'")));
            }
            data.push(v);
        }
        for (next, labels) in (header.d..).zip([&mut s, &mut b].into_iter().flatten()) {
            let f = fields[next];
            labels.push(f.parse::<usize>().map_err(|_| err(format!("invalid label '{f}'")))?);
        }
        rows += 1;
    }
    if rows != header.n {
        return Err(Error::Format {
            path: shown,
            line: rows + 2,
            message: format!("expected n={} rows, found {rows}", header.n),
        });
    }
    let name = path.file_stem().map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned());
    Ok(Dataset {
        x: Matrix::new(header.n, header.d, data)?,
        s,
        b,
        name,
        provenance: Provenance { source: shown, ..Provenance::default() },
    })
}
