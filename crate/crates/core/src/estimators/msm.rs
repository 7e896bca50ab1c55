use crate::cohort::{Cohort, IntervalRow};
use crate::error::Result;
use crate::survfit::{fit_weighted_aalen, fit_weighted_cox, HazardFit};
use crate::weights::{compute_ipcw, compute_iptw, truncate_weights, weight_diagnostics, WeightSeries};

use super::{standardize, Family, MsmSpec, PipelineOutput, WeightOptions};

/// Treatment weights times censoring weights (when there is drop-out),
/// truncated if requested.
pub(crate) fn cohort_weights(cohort: &Cohort, weights: &WeightOptions) -> Result<WeightSeries> {
    let mut series = match &weights.treatment {
        Some(spec) => compute_iptw(cohort, spec)?,
        None => WeightSeries::ones(cohort),
    };
    if let Some(spec) = &weights.censoring {
        if cohort.has_dropout() {
            series = series.multiply(&compute_ipcw(cohort, spec)?)?;
        }
    }
    if let Some(p) = weights.truncate {
        series = truncate_weights(&series, p)?;
    }
    Ok(series)
}

pub(crate) fn fit_family(family: Family, rows: &[IntervalRow]) -> Result<HazardFit> {
    Ok(match family {
        Family::Cox => HazardFit::Cox(fit_weighted_cox(rows)?),
        Family::Aalen => HazardFit::Aalen(fit_weighted_aalen(rows)?),
    })
}

/// Conditioning covariates of every subject at visit 0.
pub(crate) fn baseline_population(cohort: &Cohort, conditioning: &[usize]) -> Vec<Vec<f64>> {
    cohort
        .subjects()
        .iter()
        .map(|s| conditioning.iter().map(|&c| s.covariates(0)[c]).collect())
        .collect()
}

/// MSM-IPTW: weights the observed person-time by stabilized inverse
/// probability of treatment weights, fits the MSM on the treatment history
/// (and baseline covariates, if any), and standardizes to everyone at time 0.
pub fn run_msm_iptw(cohort: &Cohort, msm: &MsmSpec, weights: &WeightOptions) -> Result<PipelineOutput> {
    let n_slots = cohort.n_visit_slots();
    msm.validate(n_slots, cohort.tau_max(), cohort.n_covariates())?;
    let series = cohort_weights(cohort, weights)?;

    let mut rows = Vec::new();
    for (i, s) in cohort.subjects().iter().enumerate() {
        let path: Vec<bool> = s.visits.iter().map(|v| v.treatment).collect();
        let cond: Vec<f64> = msm.conditioning.iter().map(|&c| s.covariates(0)[c]).collect();
        let last = s.n_visits() - 1;
        for k in 0..s.n_visits() {
            rows.push(IntervalRow {
                subject: i,
                t_in: k as f64,
                t_out: if k == last { s.t_end } else { (k + 1) as f64 },
                event: k == last && s.status,
                covariates: msm.row(n_slots, &path[..=k], &cond),
                weight: series.subject_weight(i, k),
                stratum: 0,
            });
        }
    }
    let fit = fit_family(msm.family, &rows)?;
    let population = baseline_population(cohort, &msm.conditioning);
    let results = standardize(&fit, msm, n_slots, &population, "C0")?;
    Ok(PipelineOutput {
        results,
        fit,
        diagnostics: weight_diagnostics(&series),
        n_rows: rows.len(),
    })
}
