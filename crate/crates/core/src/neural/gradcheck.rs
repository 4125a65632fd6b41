//! Central finite-difference check of analytic gradients.

use super::params::ParamSet;
use crate::error::{Error, Result};

/// Which scalars of a parameter set to probe.
#[derive(Debug, Clone, PartialEq)]
pub enum Probe {
    All,
    /// Every `stride`-th scalar, starting at `offset`.
    Strided { stride: usize, offset: usize },
    Indices(Vec<usize>),
}

impl Probe {
    fn indices(&self, total: usize) -> Vec<usize> {
        match self {
            Probe::All => (0..total).collect(),
            Probe::Strided { stride, offset } => {
                (*offset..total).step_by((*stride).max(1)).collect()
            }
            Probe::Indices(v) => v.iter().copied().filter(|&i| i < total).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub probed: usize,
}

/// Compares `analytic` against `(L(w+h) − L(w−h)) / 2h` with
/// `h = step · max(|w|, 1)`. The relative error is
/// `|analytic − numeric| / max(|numeric|, floor)`.
pub fn gradient_check(
    params: &mut ParamSet,
    analytic: &ParamSet,
    mut loss: impl FnMut(&ParamSet) -> f64,
    step: f64,
    floor: f64,
    probe: &Probe,
) -> Result<GradCheckReport> {
    params.check_compatible(analytic)?;
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        probed: 0,
    };
    for idx in probe.indices(params.num_scalars()) {
        let orig = params.scalar(idx);
        let h = step * orig.abs().max(1.0);
        *params.scalar_mut(idx) = orig + h;
        let up = loss(params);
        *params.scalar_mut(idx) = orig - h;
        let down = loss(params);
        *params.scalar_mut(idx) = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss probing scalar {idx}")));
        }
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic.scalar(idx) - numeric).abs() / numeric.abs().max(floor);
        report.probed += 1;
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_index = idx;
        }
    }
    Ok(report)
}
