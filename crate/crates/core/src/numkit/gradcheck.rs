use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome of a central-difference gradient check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Coordinate where `max_rel_err` was attained.
    pub worst_index: usize,
    pub checked: usize,
    pub pass: bool,
}

/// Relative errors are measured against `max(|analytic|, |numeric|, REL_FLOOR)`,
/// so coordinates whose true gradient is ~0 are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-5;

/// Compares `analytic` against central differences of `loss_fn` at `params`.
///
/// The step for coordinate `i` is `1e-5 · max(1, |params[i]|)`. `coords`
/// restricts the check to a subset; `None` checks every coordinate.
pub fn finite_diff_check(
    mut loss_fn: impl FnMut(&[f64]) -> Result<f64>,
    params: &[f64],
    analytic: &[f64],
    tolerance: f64,
    coords: Option<&[usize]>,
) -> Result<GradCheckReport> {
    if params.len() != analytic.len() {
        return Err(Error::dims("finite_diff_check gradient", params.len(), analytic.len()));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let mut probe = params.to_vec();
    let mut report = GradCheckReport { max_rel_err: 0.0, worst_index: 0, checked: 0, pass: true };
    for &i in coords {
        let h = 1e-5 * params[i].abs().max(1.0);
        probe[i] = params[i] + h;
        let up = loss_fn(&probe)?;
        probe[i] = params[i] - h;
        let down = loss_fn(&probe)?;
        probe[i] = params[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss while probing coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        if rel > report.max_rel_err || report.checked == 0 {
            report.max_rel_err = rel;
            report.worst_index = i;
        }
        report.checked += 1;
    }
    report.pass = report.max_rel_err < tolerance;
    Ok(report)
}
