//! Weighted survival fitters on counting-process rows and the survival
//! curves reconstructed from them.
//!
//! A row `(t_in, t_out]` is at risk at time `t` when `t_in < t <= t_out`.

mod aalen;
mod cox;
mod curve;
mod km;

pub use aalen::{fit_weighted_aalen, AalenFit};
pub use cox::{cox_robust_variance, fit_weighted_cox, BaselineHazard, CoxFit};
pub(crate) use curve::aalen_cumhaz_at;
pub use curve::{
    survival_from_aalen, survival_from_cox, CurveFlags, HazardFit, SurvivalCurve,
    SurvivalTransform,
};
pub use km::{kaplan_meier, kaplan_meier_rows, kaplan_meier_weighted};

use crate::cohort::IntervalRow;
use crate::error::{Error, Result};

pub(crate) fn check_rows(model: &str, rows: &[IntervalRow]) -> Result<usize> {
    let Some(first) = rows.first() else {
        return Err(Error::InvalidArgument(format!("{model}: no rows")));
    };
    let p = first.covariates.len();
    for r in rows {
        if r.covariates.len() != p {
            return Err(Error::InvalidArgument(format!(
                "{model}: rows have differing covariate widths ({} vs {p})",
                r.covariates.len()
            )));
        }
        if !(r.t_in < r.t_out) || !r.t_in.is_finite() || !r.t_out.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "{model}: empty or invalid interval ({}, {}]",
                r.t_in, r.t_out
            )));
        }
        if !(r.weight >= 0.0) || !r.weight.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "{model}: weight {} is not finite and non-negative",
                r.weight
            )));
        }
        if r.covariates.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(format!("{model}: non-finite covariate")));
        }
    }
    if !rows.iter().any(|r| r.event && r.weight > 0.0) {
        return Err(Error::Estimation(format!("{model}: no events with positive weight")));
    }
    Ok(p)
}

/// Distinct event times (positive-weight events), ascending.
pub(crate) fn event_times(rows: &[IntervalRow]) -> Vec<f64> {
    let mut t: Vec<f64> = rows
        .iter()
        .filter(|r| r.event && r.weight > 0.0)
        .map(|r| r.t_out)
        .collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}
