use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, IntervalRow};
use crate::error::{Error, Result};
use crate::survfit::HazardFit;
use crate::weights::{
    apply_trial_weights, compute_ipacw, compute_ipcw, trial_units, truncate_weights, weight_diagnostics,
    WeightSeries, WeightUnit,
};

use super::msm::{baseline_population, fit_family};
use super::{expand_sequential_trials, standardize, Family, MsmSpec, PipelineOutput, TrialRow, WeightOptions};

/// Whom the trial-specific survival curves are averaged over.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StandardizationPopulation {
    /// Everyone at visit 0, with their visit-0 covariates.
    #[default]
    C0,
    /// Everyone eligible for trial `k`, with their covariates at visit `k`.
    Trial(usize),
    /// Explicit conditioning-covariate vectors.
    Custom(Vec<Vec<f64>>),
}

/// How the baseline hazard varies across trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineHazardMode {
    /// One baseline hazard on the time-since-trial-start scale.
    #[default]
    Common,
    /// Trial-specific baselines; curves use the baseline of `reference`.
    /// Cox fits stratify by trial; additive fits add trial indicator columns.
    Stratified { reference: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialSelection {
    #[default]
    All,
    Only(Vec<usize>),
}

impl TrialSelection {
    fn includes(&self, k: usize) -> bool {
        match self {
            TrialSelection::All => true,
            TrialSelection::Only(ks) => ks.contains(&k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SequentialOptions {
    pub population: StandardizationPopulation,
    pub baseline: BaselineHazardMode,
    pub trials: TrialSelection,
}

/// Outcome-model rows for weighted trial rows, on the time-since-trial-start
/// scale. Within a trial the treatment path is the trial arm throughout.
///
/// In stratified mode the reference trial gets stratum 0. Cox fits use the
/// stratum; additive fits get one indicator column per other trial, appended
/// after the MSM columns.
pub fn trial_interval_rows(
    rows: &[TrialRow],
    msm: &MsmSpec,
    n_slots: usize,
    baseline: BaselineHazardMode,
) -> Vec<IntervalRow> {
    let others: Vec<usize> = match baseline {
        BaselineHazardMode::Common => Vec::new(),
        BaselineHazardMode::Stratified { reference } => {
            let mut ks: Vec<usize> = rows.iter().map(|r| r.trial).filter(|&k| k != reference).collect();
            ks.sort_unstable();
            ks.dedup();
            ks
        }
    };
    rows.iter()
        .map(|r| {
            let cond: Vec<f64> = msm.conditioning.iter().map(|&c| r.baseline_covariates[c]).collect();
            let mut covariates = msm.row(n_slots, &vec![r.initiator; r.followup + 1], &cond);
            let mut stratum = 0;
            if let BaselineHazardMode::Stratified { reference } = baseline {
                if r.trial != reference {
                    stratum = r.trial + 1;
                }
                if msm.family == Family::Aalen {
                    covariates.extend(others.iter().map(|&k| f64::from(u8::from(r.trial == k))));
                }
            }
            IntervalRow {
                subject: r.subject,
                t_in: r.s_in,
                t_out: r.s_out,
                event: r.event,
                covariates,
                weight: r.weight,
                stratum: if msm.family == Family::Cox { stratum } else { 0 },
            }
        })
        .collect()
}

/// Per-row IPCW ratio `w_m / w_k` for a row covering visit `m` of trial `k`.
fn ipcw_ratios(ipcw: &WeightSeries, rows: &[TrialRow]) -> WeightSeries {
    let units = trial_units(rows)
        .into_iter()
        .map(|r| {
            let first = &rows[r.start];
            let w = &ipcw.units[first.subject].weights;
            let weights = rows[r]
                .iter()
                .map(|row| w[row.trial + row.followup] / w[row.trial])
                .collect();
            WeightUnit {
                subject: first.subject,
                origin: first.trial,
                weights,
                numerator: Vec::new(),
                denominator: Vec::new(),
            }
        })
        .collect();
    WeightSeries { units }
}

fn population_for(cohort: &Cohort, rows: &[TrialRow], msm: &MsmSpec, pop: &StandardizationPopulation) -> Result<(Vec<Vec<f64>>, String)> {
    Ok(match pop {
        StandardizationPopulation::C0 => (baseline_population(cohort, &msm.conditioning), "C0".to_string()),
        StandardizationPopulation::Trial(k) => {
            let members: Vec<Vec<f64>> = rows
                .iter()
                .filter(|r| r.trial == *k && r.followup == 0)
                .map(|r| msm.conditioning.iter().map(|&c| r.baseline_covariates[c]).collect())
                .collect();
            if members.is_empty() {
                return Err(Error::InvalidArgument(format!("trial {k} has no participants")));
            }
            (members, format!("trial {k}"))
        }
        StandardizationPopulation::Custom(m) => (m.clone(), "custom".to_string()),
    })
}

/// Drops the trial indicator columns from an additive fit, leaving the
/// reference-trial model.
fn reference_fit(fit: HazardFit, width: usize) -> HazardFit {
    match fit {
        HazardFit::Aalen(mut f) => {
            for v in f.increments.iter_mut().chain(f.cumulative.iter_mut()) {
                v.truncate(width + 1);
            }
            HazardFit::Aalen(f)
        }
        cox => cox,
    }
}

/// Sequential emulated trials: expands the cohort into one trial per visit,
/// weights for artificial censoring (and loss to follow-up, when present),
/// fits the pooled MSM on the time-since-trial-start scale and standardizes.
pub fn run_sequential_trials(
    cohort: &Cohort,
    msm: &MsmSpec,
    weights: &WeightOptions,
    options: &SequentialOptions,
) -> Result<PipelineOutput> {
    let n_slots = cohort.n_visit_slots();
    msm.validate(n_slots, cohort.tau_max(), cohort.n_covariates())?;
    if let BaselineHazardMode::Stratified { reference } = options.baseline {
        let limit = cohort.tau_max() - reference as f64;
        if let Some(h) = msm.horizons.iter().find(|&&h| h > limit) {
            return Err(Error::InvalidArgument(format!(
                "horizon {h} exceeds the follow-up of reference trial {reference} ({limit})"
            )));
        }
    }
    let mut rows: Vec<TrialRow> = expand_sequential_trials(cohort)
        .into_iter()
        .filter(|r| options.trials.includes(r.trial))
        .collect();
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no trial rows for the selected trials".into()));
    }
    if let BaselineHazardMode::Stratified { reference } = options.baseline {
        if !rows.iter().any(|r| r.trial == reference) {
            return Err(Error::InvalidArgument(format!("reference trial {reference} is empty")));
        }
    }

    let mut series = match &weights.treatment {
        Some(spec) => compute_ipacw(cohort, &rows, spec)?,
        None => ipcw_ratios(&WeightSeries::ones(cohort), &rows),
    };
    if let Some(spec) = &weights.censoring {
        if cohort.has_dropout() {
            let ipcw = compute_ipcw(cohort, spec)?;
            series = series.multiply(&ipcw_ratios(&ipcw, &rows))?;
        }
    }
    if let Some(p) = weights.truncate {
        series = truncate_weights(&series, p)?;
    }
    apply_trial_weights(&series, &mut rows)?;

    let interval_rows = trial_interval_rows(&rows, msm, n_slots, options.baseline);
    let fit = reference_fit(fit_family(msm.family, &interval_rows)?, msm.width(n_slots));
    let (population, label) = population_for(cohort, &rows, msm, &options.population)?;
    let results = standardize(&fit, msm, n_slots, &population, &label)?;
    Ok(PipelineOutput {
        results,
        fit,
        diagnostics: weight_diagnostics(&series),
        n_rows: interval_rows.len(),
    })
}
