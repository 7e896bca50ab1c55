use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::cohort::IntervalRow;
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::survfit::{cox_robust_variance, fit_weighted_cox};

use super::TrialRow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityTest {
    /// Robust Wald statistic for the treatment × trial interactions.
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Trials compared; the first is the reference.
    pub trials: Vec<usize>,
}

/// Tests whether the treatment effect is the same in every trial.
///
/// Fits a pooled weighted Cox model on treatment, the trial-baseline
/// covariates, trial indicators and treatment × trial indicators (for every
/// trial with an event among initiators except the first), then forms a Wald
/// statistic for the interactions with a subject-clustered robust variance.
/// Only trials with initiator events are used.
pub fn test_trial_homogeneity(rows: &[TrialRow]) -> Result<HomogeneityTest> {
    let mut trials: Vec<usize> = rows.iter().filter(|r| r.initiator && r.event && r.weight > 0.0).map(|r| r.trial).collect();
    trials.sort_unstable();
    trials.dedup();
    if trials.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "homogeneity test needs events among initiators in at least two trials, found {}",
            trials.len()
        )));
    }
    let others = &trials[1..];
    let interval_rows: Vec<IntervalRow> = rows
        .iter()
        .filter(|r| trials.contains(&r.trial))
        .map(|r| {
            let a = f64::from(u8::from(r.initiator));
            let mut x = vec![a];
            x.extend_from_slice(&r.baseline_covariates);
            x.extend(others.iter().map(|&k| if r.trial == k { 1.0 } else { 0.0 }));
            x.extend(others.iter().map(|&k| if r.trial == k { a } else { 0.0 }));
            IntervalRow {
                subject: r.subject,
                t_in: r.s_in,
                t_out: r.s_out,
                event: r.event,
                covariates: x,
                weight: r.weight,
                stratum: 0,
            }
        })
        .collect();
    let fit = fit_weighted_cox(&interval_rows)?;
    let v = cox_robust_variance(&fit, &interval_rows)?;
    let p = fit.log_hazard_ratios.len();
    let q = others.len();
    let first = p - q;
    let mut sub = vec![0.0; q * q];
    for i in 0..q {
        for j in 0..q {
            sub[i * q + j] = v[(first + i) * p + first + j];
        }
    }
    let chol = Cholesky::factor(&sub, q, 1e-12).map_err(|c| Error::SingularDesign {
        model: "homogeneity test".into(),
        column: first + c,
    })?;
    let b = &fit.log_hazard_ratios[first..];
    let mut z = b.to_vec();
    chol.solve_in_place(&mut z);
    let statistic: f64 = b.iter().zip(&z).map(|(x, y)| x * y).sum();
    let chi2 = ChiSquared::new(q as f64).map_err(|e| Error::Estimation(e.to_string()))?;
    Ok(HomogeneityTest {
        statistic,
        df: q,
        p_value: chi2.sf(statistic),
        trials,
    })
}
