//! The two end-to-end pipelines: marginal structural models fitted with
//! inverse probability of treatment weights, and sequential emulated trials
//! with artificial-censoring weights. Both end in standardized survival
//! curves under "always treated" and "never treated".

mod bootstrap;
mod homogeneity;
mod msm;
mod results;
mod sequential;
mod standardize;
mod trials;

use serde::{Deserialize, Serialize};

pub use bootstrap::{bootstrap_ci, resample_cohort, Pipeline};
pub use homogeneity::{test_trial_homogeneity, HomogeneityTest};
pub use msm::run_msm_iptw;
pub use results::{Bands, MarginalResults, PipelineOutput};
pub use sequential::{
    run_sequential_trials, trial_interval_rows, BaselineHazardMode, SequentialOptions,
    StandardizationPopulation, TrialSelection,
};
pub use standardize::standardize;
pub use trials::{expand_sequential_trials, TrialRow};

use crate::error::{Error, Result};
use crate::survfit::SurvivalTransform;
use crate::weights::WeightModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Cox,
    #[default]
    Aalen,
}

/// How the treatment history enters the hazard model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreatmentForm {
    /// Current treatment level.
    Current,
    /// Number of visits treated so far.
    Duration,
    /// One column per visit `j` holding `a_j`, zero before visit `j`.
    #[default]
    PerVisit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsmSpec {
    pub family: Family,
    pub treatment_form: TreatmentForm,
    /// Covariate indices conditioned on at the time origin (`L₀`, or `L_k` in trial `k`).
    pub conditioning: Vec<usize>,
    /// Adds current-treatment × conditioning-covariate columns.
    pub interactions: bool,
    pub horizons: Vec<f64>,
    pub transform: SurvivalTransform,
}

impl MsmSpec {
    pub fn new(family: Family, treatment_form: TreatmentForm, conditioning: Vec<usize>, horizons: Vec<f64>) -> Self {
        Self {
            family,
            treatment_form,
            conditioning,
            interactions: false,
            horizons,
            transform: SurvivalTransform::Exponential,
        }
    }

    pub fn with_interactions(mut self, on: bool) -> Self {
        self.interactions = on;
        self
    }

    pub fn with_transform(mut self, transform: SurvivalTransform) -> Self {
        self.transform = transform;
        self
    }

    fn treatment_columns(&self, n_slots: usize) -> usize {
        match self.treatment_form {
            TreatmentForm::Current | TreatmentForm::Duration => 1,
            TreatmentForm::PerVisit => n_slots,
        }
    }

    /// Number of model covariates (excluding any baseline intercept).
    pub fn width(&self, n_slots: usize) -> usize {
        let q = self.conditioning.len();
        self.treatment_columns(n_slots) + q + if self.interactions { q } else { 0 }
    }

    /// Model covariates on interval `k = path.len() - 1` for treatment path
    /// `a_0..a_k` and conditioning values `cond`.
    pub fn row(&self, n_slots: usize, path: &[bool], cond: &[f64]) -> Vec<f64> {
        let k = path.len() - 1;
        let a = |j: usize| f64::from(u8::from(path[j]));
        let mut x = Vec::with_capacity(self.width(n_slots));
        match self.treatment_form {
            TreatmentForm::Current => x.push(a(k)),
            TreatmentForm::Duration => x.push((0..=k).map(a).sum()),
            TreatmentForm::PerVisit => {
                x.extend((0..n_slots).map(|j| if j <= k { a(j) } else { 0.0 }));
            }
        }
        x.extend_from_slice(cond);
        if self.interactions {
            x.extend(cond.iter().map(|c| a(k) * c));
        }
        x
    }

    pub(crate) fn validate(&self, n_slots: usize, tau_max: f64, n_covariates: usize) -> Result<()> {
        if self.horizons.is_empty() {
            return Err(Error::InvalidArgument("no horizons requested".into()));
        }
        if let Some(h) = self.horizons.iter().find(|&&h| !(h >= 0.0) || h > tau_max) {
            return Err(Error::InvalidArgument(format!(
                "horizon {h} is outside [0, tau_max = {tau_max}]"
            )));
        }
        if let Some(c) = self.conditioning.iter().find(|&&c| c >= n_covariates) {
            return Err(Error::InvalidArgument(format!(
                "conditioning covariate {c} does not exist (cohort has {n_covariates})"
            )));
        }
        if self.treatment_form == TreatmentForm::PerVisit && n_slots == 0 {
            return Err(Error::InvalidArgument("per-visit treatment form needs at least one visit".into()));
        }
        Ok(())
    }
}

/// Weight models used by a pipeline. `treatment: None` means unit weights.
#[derive(Debug, Clone, Default)]
pub struct WeightOptions {
    pub treatment: Option<WeightModelSpec>,
    /// Censoring weights, applied only when the cohort has loss to follow-up.
    pub censoring: Option<WeightModelSpec>,
    /// Pooled nearest-rank truncation percentile.
    pub truncate: Option<f64>,
}

impl WeightOptions {
    pub fn treatment(spec: WeightModelSpec) -> Self {
        Self {
            treatment: Some(spec),
            ..Self::default()
        }
    }

    pub fn with_truncation(mut self, percentile: Option<f64>) -> Self {
        self.truncate = percentile;
        self
    }

    pub fn with_censoring(mut self, spec: Option<WeightModelSpec>) -> Self {
        self.censoring = spec;
        self
    }
}
