//! Causal survival analysis with time-dependent confounding: marginal
//! structural models fitted by inverse probability of treatment weighting,
//! sequential emulated trials, the numerical kernels both rely on, an exact
//! non-parametric oracle and a simulation harness.

pub mod cohort;
pub mod error;
pub mod estimators;
pub mod glm;
mod linalg;
pub mod oracle;
pub mod simgen;
pub mod survfit;
pub mod weights;

pub use cohort::{load_cohort, Cohort, IntervalRow, SubjectHistory, VisitRecord};
pub use error::{Error, Result};
pub use estimators::{
    bootstrap_ci, run_msm_iptw, run_sequential_trials, Family, MarginalResults, MsmSpec, Pipeline, PipelineOutput,
    SequentialOptions, TreatmentForm, WeightOptions,
};
pub use linalg::Matrix;
pub use survfit::{HazardFit, SurvivalCurve, SurvivalTransform};
pub use weights::{WeightModelSpec, WeightSeries};
