//! Stabilized inverse-probability weights.
//!
//! Every weight is a running product of per-visit factors
//! `P̂_num(observed level) / P̂_den(observed level)`, with probabilities from
//! pooled logistic models. Models are described by [`DesignBuilder`]s that map
//! a subject and a [`DesignContext`] to a design row.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, SubjectHistory};
use crate::error::{Error, Result};
use crate::estimators::TrialRow;
use crate::glm::{fit_logistic_labeled, predict_prob, LogisticFit};
use crate::linalg::Matrix;

/// Where a design row is evaluated: the visit whose treatment (or censoring)
/// is modelled, and the origin of the time scale (trial start; 0 for IPTW).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DesignContext {
    pub visit: usize,
    pub origin: usize,
}

impl DesignContext {
    /// Time since origin, `visit - origin`.
    pub fn time(&self) -> usize {
        self.visit - self.origin
    }
}

/// What a model conditions on, used to check that stabilization is valid.
/// Time is always known and never needs declaring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Conditioning {
    /// Covariates at the origin (`L₀` for IPTW, `L_k` in trial `k`).
    Origin,
    /// The full covariate history up to the modelled visit.
    History,
}

type DesignFn = dyn Fn(&SubjectHistory, DesignContext) -> Vec<f64> + Send + Sync;

/// A named covariate builder for a weight model.
#[derive(Clone)]
pub struct DesignBuilder {
    name: String,
    info: BTreeSet<Conditioning>,
    f: Arc<DesignFn>,
}

impl fmt::Debug for DesignBuilder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DesignBuilder")
            .field("name", &self.name)
            .field("info", &self.info)
            .finish()
    }
}

impl DesignBuilder {
    pub fn custom<F>(name: impl Into<String>, info: &[Conditioning], f: F) -> Self
    where
        F: Fn(&SubjectHistory, DesignContext) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            info: info.iter().copied().collect(),
            f: Arc::new(f),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn row(&self, s: &SubjectHistory, ctx: DesignContext) -> Vec<f64> {
        (self.f)(s, ctx)
    }

    /// A single intercept.
    pub fn intercept() -> Self {
        Self::custom("intercept", &[], |_, _| vec![1.0])
    }

    /// One intercept per time since origin, `0..n_times`.
    pub fn per_time_intercepts(n_times: usize) -> Self {
        Self::custom("per-time intercepts", &[], move |_, ctx| {
            let mut x = vec![0.0; n_times];
            x[ctx.time().min(n_times - 1)] = 1.0;
            x
        })
    }

    /// Per-time intercepts plus per-time slopes on the listed origin covariates.
    pub fn per_time_origin(n_times: usize, covariates: Vec<usize>) -> Self {
        let q = covariates.len();
        Self::custom("per-time intercepts and origin covariates", &[Conditioning::Origin], move |s, ctx| {
            let j = ctx.time().min(n_times - 1);
            let mut x = vec![0.0; n_times * (1 + q)];
            x[j] = 1.0;
            let l = s.covariates(ctx.origin);
            for (c, &idx) in covariates.iter().enumerate() {
                x[n_times + j * q + c] = l[idx];
            }
            x
        })
    }

    /// Intercept plus the listed covariates at the modelled visit.
    pub fn current_covariates(covariates: Vec<usize>) -> Self {
        Self::custom("intercept and current covariates", &[Conditioning::History], move |s, ctx| {
            let l = s.covariates(ctx.visit);
            std::iter::once(1.0).chain(covariates.iter().map(|&i| l[i])).collect()
        })
    }

    /// True when everything `self` conditions on is also available to `other`.
    pub fn is_covered_by(&self, other: &DesignBuilder) -> bool {
        self.info.iter().all(|c| match c {
            Conditioning::Origin => {
                other.info.contains(&Conditioning::Origin) || other.info.contains(&Conditioning::History)
            }
            Conditioning::History => other.info.contains(&Conditioning::History),
        })
    }
}

/// Whether weight models are fitted on all visits (or trials) combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    #[default]
    Pooled,
    /// One model per time since origin.
    PerTime,
}

#[derive(Debug, Clone)]
pub struct WeightModelSpec {
    /// `None` gives unstabilized weights (numerator 1).
    pub numerator: Option<DesignBuilder>,
    pub denominator: DesignBuilder,
    pub pooling: Pooling,
    /// Treatment, once started, is never stopped.
    pub absorbing: bool,
}

impl WeightModelSpec {
    pub fn new(numerator: Option<DesignBuilder>, denominator: DesignBuilder) -> Result<Self> {
        if let Some(num) = &numerator {
            if !num.is_covered_by(&denominator) {
                return Err(Error::InvalidArgument(format!(
                    "numerator model '{}' conditions on information the denominator '{}' lacks",
                    num.name(),
                    denominator.name()
                )));
            }
        }
        Ok(Self {
            numerator,
            denominator,
            pooling: Pooling::Pooled,
            absorbing: true,
        })
    }

    /// Numerator with per-visit intercepts; denominator on current covariates.
    pub fn iptw(n_visits: usize, covariates: Vec<usize>) -> Self {
        Self::new(
            Some(DesignBuilder::per_time_intercepts(n_visits)),
            DesignBuilder::current_covariates(covariates),
        )
        .expect("preset is valid")
    }

    /// Numerator with per-visit intercepts and per-visit slopes on baseline
    /// covariates; denominator on current covariates.
    pub fn iptw_baseline(n_visits: usize, baseline: Vec<usize>, covariates: Vec<usize>) -> Self {
        Self::new(
            Some(DesignBuilder::per_time_origin(n_visits, baseline)),
            DesignBuilder::current_covariates(covariates),
        )
        .expect("preset is valid")
    }

    /// Artificial-censoring weights: numerator per follow-up time with slopes
    /// on trial-baseline covariates, denominator on current covariates.
    pub fn ipacw(n_visits: usize, baseline: Vec<usize>, covariates: Vec<usize>) -> Self {
        Self::iptw_baseline(n_visits, baseline, covariates)
    }

    pub fn with_pooling(mut self, pooling: Pooling) -> Self {
        self.pooling = pooling;
        self
    }

    pub fn with_absorbing(mut self, absorbing: bool) -> Self {
        self.absorbing = absorbing;
        self
    }
}

/// Weights of one subject (IPTW, IPCW) or one subject-trial (IPACW).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightUnit {
    pub subject: usize,
    /// Trial index for IPACW; 0 otherwise.
    pub origin: usize,
    /// Weight on interval `[j, j+1)` of the unit's own time scale.
    pub weights: Vec<f64>,
    /// Per-interval numerator probability of the observed level (1 when no factor applies).
    pub numerator: Vec<f64>,
    /// Per-interval denominator probability of the observed level.
    pub denominator: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSeries {
    pub units: Vec<WeightUnit>,
}

impl WeightSeries {
    /// Weight 1 on every at-risk visit interval of every subject.
    pub fn ones(cohort: &Cohort) -> Self {
        let units = cohort
            .subjects()
            .iter()
            .enumerate()
            .map(|(i, s)| unit_from_factors(i, 0, vec![(1.0, 1.0); s.n_visits()]))
            .collect();
        Self { units }
    }

    pub fn iter_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.units.iter().flat_map(|u| u.weights.iter().copied())
    }

    /// Weight of `subject` on interval `j` for units with origin 0.
    pub fn subject_weight(&self, subject: usize, j: usize) -> f64 {
        self.units[subject].weights[j]
    }

    /// Pointwise product with another series of identical shape.
    pub fn multiply(&self, other: &WeightSeries) -> Result<WeightSeries> {
        if self.units.len() != other.units.len() {
            return Err(Error::InvalidArgument("weight series shapes differ".into()));
        }
        let units = self
            .units
            .iter()
            .zip(&other.units)
            .map(|(a, b)| {
                if a.weights.len() != b.weights.len() {
                    return Err(Error::InvalidArgument("weight series shapes differ".into()));
                }
                Ok(WeightUnit {
                    weights: a.weights.iter().zip(&b.weights).map(|(x, y)| x * y).collect(),
                    ..a.clone()
                })
            })
            .collect::<Result<_>>()?;
        Ok(WeightSeries { units })
    }
}

/// Running product of per-interval factors `num / den`.
pub fn running_weights(factors: &[(f64, f64)]) -> Vec<f64> {
    let mut w = 1.0;
    factors
        .iter()
        .map(|&(num, den)| {
            w *= num / den;
            w
        })
        .collect()
}

fn unit_from_factors(subject: usize, origin: usize, factors: Vec<(f64, f64)>) -> WeightUnit {
    WeightUnit {
        subject,
        origin,
        weights: running_weights(&factors),
        numerator: factors.iter().map(|f| f.0).collect(),
        denominator: factors.iter().map(|f| f.1).collect(),
    }
}

/// One observation for a weight model.
struct FitRow {
    subject: usize,
    ctx: DesignContext,
    outcome: bool,
}

/// Logistic fits keyed by pooling group.
struct FittedModel {
    builder: DesignBuilder,
    pooling: Pooling,
    fits: Vec<(usize, LogisticFit)>,
}

impl FittedModel {
    fn group(pooling: Pooling, ctx: DesignContext) -> usize {
        match pooling {
            Pooling::Pooled => 0,
            Pooling::PerTime => ctx.time(),
        }
    }

    fn prob(&self, s: &SubjectHistory, ctx: DesignContext) -> Result<f64> {
        let g = Self::group(self.pooling, ctx);
        let fit = self
            .fits
            .iter()
            .find(|(k, _)| *k == g)
            .map(|(_, f)| f)
            .ok_or_else(|| Error::Positivity(format!("{}: no fitting data at time {g}", self.builder.name())))?;
        predict_prob(fit, &self.builder.row(s, ctx))
    }
}

/// Fits a logistic model after removing design columns that are zero on
/// every positive-weight row; removed columns get coefficient 0.
pub(crate) fn fit_dropping_zero_columns(model: &str, x: &Matrix, y: &[bool], w: &[f64]) -> Result<LogisticFit> {
    let keep: Vec<usize> = (0..x.ncols())
        .filter(|&j| x.rows().zip(w).any(|(r, &wi)| wi > 0.0 && r[j] != 0.0))
        .collect();
    let fit = if keep.len() == x.ncols() {
        fit_logistic_labeled(model, x, y, w)?
    } else {
        let reduced = fit_logistic_labeled(model, &x.select_columns(&keep), y, w).map_err(|e| match e {
            Error::SingularDesign { model, column } => Error::SingularDesign {
                model,
                column: keep[column],
            },
            Error::Separation { model, column } => Error::Separation {
                model,
                column: keep[column],
            },
            other => other,
        })?;
        let mut coefficients = vec![0.0; x.ncols()];
        for (&j, b) in keep.iter().zip(&reduced.coefficients) {
            coefficients[j] = *b;
        }
        LogisticFit {
            coefficients,
            ..reduced
        }
    };
    Ok(fit)
}

fn fit_model(
    label: &str,
    cohort: &Cohort,
    builder: &DesignBuilder,
    pooling: Pooling,
    rows: &[FitRow],
    weights: Option<&[f64]>,
) -> Result<FittedModel> {
    let subjects = cohort.subjects();
    let mut groups: Vec<usize> = rows.iter().map(|r| FittedModel::group(pooling, r.ctx)).collect();
    groups.sort_unstable();
    groups.dedup();
    let mut fits = Vec::with_capacity(groups.len());
    for g in groups {
        let members: Vec<&FitRow> = rows
            .iter()
            .filter(|r| FittedModel::group(pooling, r.ctx) == g)
            .collect();
        let design: Vec<Vec<f64>> = members
            .iter()
            .map(|r| builder.row(&subjects[r.subject], r.ctx))
            .collect();
        let width = design.first().map_or(0, Vec::len);
        if design.iter().any(|d| d.len() != width) {
            return Err(Error::InvalidArgument(format!(
                "{label}: design builder '{}' returned rows of differing width",
                builder.name()
            )));
        }
        let x = Matrix::from_rows(&design);
        let y: Vec<bool> = members.iter().map(|r| r.outcome).collect();
        let w: Vec<f64> = match weights {
            Some(w) => rows
                .iter()
                .zip(w)
                .filter(|(r, _)| FittedModel::group(pooling, r.ctx) == g)
                .map(|(_, &wi)| wi)
                .collect(),
            None => vec![1.0; members.len()],
        };
        let name = match pooling {
            Pooling::Pooled => format!("{label} ({})", builder.name()),
            Pooling::PerTime => format!("{label} ({}, time {g})", builder.name()),
        };
        fits.push((g, fit_dropping_zero_columns(&name, &x, &y, &w)?));
    }
    Ok(FittedModel {
        builder: builder.clone(),
        pooling,
        fits,
    })
}

/// Fits numerator and denominator on the same rows and returns a closure
/// giving `(P̂_num, P̂_den)` of the event `outcome = true`.
struct ModelPair {
    numerator: Option<FittedModel>,
    denominator: FittedModel,
}

impl ModelPair {
    fn fit(label: &str, cohort: &Cohort, spec: &WeightModelSpec, rows: &[FitRow], w: Option<&[f64]>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Positivity(format!("{label}: no rows at risk for the weight model")));
        }
        let denominator = fit_model(&format!("{label} denominator"), cohort, &spec.denominator, spec.pooling, rows, w)?;
        let numerator = spec
            .numerator
            .as_ref()
            .map(|b| fit_model(&format!("{label} numerator"), cohort, b, spec.pooling, rows, w))
            .transpose()?;
        Ok(Self { numerator, denominator })
    }

    /// Factor for an observation where the modelled event did (`true`) or did not happen.
    fn factor(&self, s: &SubjectHistory, ctx: DesignContext, happened: bool) -> Result<(f64, f64)> {
        let pick = |p: f64| if happened { p } else { 1.0 - p };
        let den = pick(self.denominator.prob(s, ctx)?);
        let num = match &self.numerator {
            Some(m) => pick(m.prob(s, ctx)?),
            None => 1.0,
        };
        Ok((num, den))
    }
}

/// Stabilized inverse probability of treatment weights, one unit per subject,
/// one weight per visit interval the subject is at risk in.
pub fn compute_iptw(cohort: &Cohort, spec: &WeightModelSpec) -> Result<WeightSeries> {
    let subjects = cohort.subjects();
    let mut rows = Vec::new();
    for (i, s) in subjects.iter().enumerate() {
        for m in 0..s.n_visits() {
            if spec.absorbing && m > 0 && s.treatment(m - 1) {
                break;
            }
            rows.push(FitRow {
                subject: i,
                ctx: DesignContext { visit: m, origin: 0 },
                outcome: s.treatment(m),
            });
        }
    }
    let models = ModelPair::fit("treatment model", cohort, spec, &rows, None)?;
    let units = subjects
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let factors = (0..s.n_visits())
                .map(|m| {
                    if spec.absorbing && m > 0 && s.treatment(m - 1) {
                        Ok((1.0, 1.0))
                    } else {
                        models.factor(s, DesignContext { visit: m, origin: 0 }, s.treatment(m))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(unit_from_factors(i, 0, factors))
        })
        .collect::<Result<_>>()?;
    Ok(WeightSeries { units })
}

/// Consecutive runs of trial rows belonging to one subject-trial.
pub(crate) fn trial_units(rows: &[TrialRow]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=rows.len() {
        if i == rows.len() || rows[i].subject != rows[start].subject || rows[i].trial != rows[start].trial {
            out.push(start..i);
            start = i;
        }
    }
    out
}

/// Inverse probability of artificial-censoring weights for expanded trial
/// rows, one unit per subject-trial with one weight per follow-up row.
///
/// The weight is 1 on the first follow-up interval. Afterwards it is the
/// running product, over visits since trial start, of the probability of
/// staying on the trial-baseline treatment given trial-baseline covariates
/// over the same probability given the covariate history. Initiators keep
/// weight 1 when treatment is absorbing, and an arm in which nobody deviates
/// keeps weight 1 throughout.
pub fn compute_ipacw(cohort: &Cohort, rows: &[TrialRow], spec: &WeightModelSpec) -> Result<WeightSeries> {
    let subjects = cohort.subjects();
    let units = trial_units(rows);
    // visits at which staying on the trial arm is modelled: every follow-up
    // visit after the first, plus the deviation visit when censored there
    let visits_of = |r: &std::ops::Range<usize>| -> std::ops::RangeInclusive<usize> {
        let first = &rows[r.start];
        let last = &rows[r.end - 1];
        let k = first.trial;
        let end = if last.artificially_censored {
            k + last.followup + 1
        } else {
            k + last.followup
        };
        (k + 1)..=end
    };
    let mut non_init = Vec::new();
    let mut init = Vec::new();
    for r in &units {
        let first = &rows[r.start];
        let target = if first.initiator { &mut init } else { &mut non_init };
        if first.initiator && spec.absorbing {
            continue;
        }
        let s = &subjects[first.subject];
        for m in visits_of(r) {
            target.push(FitRow {
                subject: first.subject,
                ctx: DesignContext {
                    visit: m,
                    origin: first.trial,
                },
                // the modelled event is switching away from the trial arm
                outcome: s.treatment(m) != first.initiator,
            });
        }
    }
    // no observed deviation means no artificial censoring to correct for
    let non_init_models = if !non_init.iter().any(|r| r.outcome) {
        None
    } else {
        Some(ModelPair::fit("artificial-censoring model (non-initiators)", cohort, spec, &non_init, None)?)
    };
    let init_models = if !init.iter().any(|r| r.outcome) {
        None
    } else {
        Some(ModelPair::fit("artificial-censoring model (initiators)", cohort, spec, &init, None)?)
    };

    let out = units
        .iter()
        .map(|r| {
            let first = &rows[r.start];
            let s = &subjects[first.subject];
            let models = if first.initiator { &init_models } else { &non_init_models };
            let mut factors = Vec::with_capacity(r.len());
            for row in &rows[r.clone()] {
                let f = match (row.followup, models) {
                    (0, _) | (_, None) => (1.0, 1.0),
                    (j, Some(m)) => m.factor(
                        s,
                        DesignContext {
                            visit: first.trial + j,
                            origin: first.trial,
                        },
                        false,
                    )?,
                };
                factors.push(f);
            }
            Ok(unit_from_factors(first.subject, first.trial, factors))
        })
        .collect::<Result<_>>()?;
    Ok(WeightSeries { units: out })
}

/// Writes IPACW values onto the trial rows they were computed for.
pub fn apply_trial_weights(series: &WeightSeries, rows: &mut [TrialRow]) -> Result<()> {
    let units = trial_units(rows);
    if units.len() != series.units.len() {
        return Err(Error::InvalidArgument("weight series does not match trial rows".into()));
    }
    for (r, u) in units.into_iter().zip(&series.units) {
        if r.len() != u.weights.len() {
            return Err(Error::InvalidArgument("weight series does not match trial rows".into()));
        }
        for (row, w) in rows[r].iter_mut().zip(&u.weights) {
            row.weight *= w;
        }
    }
    Ok(())
}

/// True when the subject was lost to follow-up during `[m, m+1)`.
fn censored_at(s: &SubjectHistory, m: usize, tau_max: f64) -> bool {
    m + 1 == s.n_visits() && !s.status && s.t_end < tau_max
}

/// Stabilized inverse probability of censoring weights for loss to
/// follow-up, one unit per subject. The weight on `[m, m+1)` uses the
/// probabilities of remaining uncensored through visits `0..m`. All weights
/// are 1 when nobody drops out.
pub fn compute_ipcw(cohort: &Cohort, spec: &WeightModelSpec) -> Result<WeightSeries> {
    let subjects = cohort.subjects();
    if !cohort.has_dropout() {
        return Ok(WeightSeries::ones(cohort));
    }
    let tau = cohort.tau_max();
    let rows: Vec<FitRow> = subjects
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            (0..s.n_visits()).map(move |m| FitRow {
                subject: i,
                ctx: DesignContext { visit: m, origin: 0 },
                outcome: censored_at(s, m, tau),
            })
        })
        .collect();
    let models = ModelPair::fit("censoring model", cohort, spec, &rows, None)?;
    let units = subjects
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut factors = Vec::with_capacity(s.n_visits());
            factors.push((1.0, 1.0));
            for m in 1..s.n_visits() {
                factors.push(models.factor(s, DesignContext { visit: m - 1, origin: 0 }, false)?);
            }
            Ok(unit_from_factors(i, 0, factors))
        })
        .collect::<Result<_>>()?;
    Ok(WeightSeries { units })
}

/// Nearest-rank empirical percentile: the value at rank `ceil(p/100 · N)`.
pub fn nearest_rank(sorted: &[f64], percentile: f64) -> f64 {
    let n = sorted.len();
    let rank = ((percentile / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Caps weights at the pooled nearest-rank percentile over all units and intervals.
pub fn truncate_weights(series: &WeightSeries, percentile: f64) -> Result<WeightSeries> {
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::InvalidArgument(format!(
            "truncation percentile must be in (0, 100], got {percentile}"
        )));
    }
    let mut all: Vec<f64> = series.iter_values().collect();
    if all.is_empty() {
        return Err(Error::InvalidArgument("cannot truncate an empty weight series".into()));
    }
    all.sort_by(f64::total_cmp);
    let cap = nearest_rank(&all, percentile);
    let mut out = series.clone();
    for u in &mut out.units {
        u.weights.iter_mut().for_each(|w| *w = w.min(cap));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalDiagnostics {
    pub interval: usize,
    pub max: f64,
    pub mean: f64,
    pub p99: f64,
    pub n_rows: usize,
}

/// Per-interval maximum, mean and 99th percentile of the weights.
pub fn weight_diagnostics(series: &WeightSeries) -> Vec<IntervalDiagnostics> {
    let n_int = series.units.iter().map(|u| u.weights.len()).max().unwrap_or(0);
    let mut by_interval: Vec<Vec<f64>> = vec![Vec::new(); n_int];
    for u in &series.units {
        for (j, &w) in u.weights.iter().enumerate() {
            by_interval[j].push(w);
        }
    }
    by_interval
        .into_iter()
        .enumerate()
        .filter(|(_, v)| !v.is_empty())
        .map(|(interval, mut v)| {
            v.sort_by(f64::total_cmp);
            IntervalDiagnostics {
                interval,
                max: *v.last().unwrap(),
                mean: v.iter().sum::<f64>() / v.len() as f64,
                p99: nearest_rank(&v, 99.0),
                n_rows: v.len(),
            }
        })
        .collect()
}

/// Writes diagnostics as CSV: `interval,max,mean,p99,n_rows`.
pub fn write_diagnostics_csv<W: Write>(diag: &[IntervalDiagnostics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["interval", "max", "mean", "p99", "n_rows"])?;
    for d in diag {
        w.write_record([
            d.interval.to_string(),
            d.max.to_string(),
            d.mean.to_string(),
            d.p99.to_string(),
            d.n_rows.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::VisitRecord;
    use crate::estimators::expand_sequential_trials;
    use crate::simgen::{generate_cohort, ScenarioParams};

    fn subject(id: &str, treat: &[u8], l: &[f64], t_end: f64, status: bool) -> SubjectHistory {
        SubjectHistory {
            id: id.into(),
            visits: treat
                .iter()
                .zip(l)
                .enumerate()
                .map(|(k, (&a, &x))| VisitRecord {
                    k,
                    treatment: a == 1,
                    covariates: vec![x],
                })
                .collect(),
            t_end,
            status,
        }
    }

    #[test]
    fn hand_running_products() {
        let w = running_weights(&[(0.5, 0.4), (0.5, 0.8)]);
        assert_eq!(w[1], 0.78125);
        let w = running_weights(&[(1.0, 1.0), (0.8, 0.6)]);
        assert!((w[1] - 4.0 / 3.0).abs() < 1e-15);
        let w = running_weights(&[(1.0, 1.0), (0.9, 0.8)]);
        assert_eq!(w[1], 1.125);
    }

    #[test]
    fn truncation_rules() {
        let series = WeightSeries {
            units: vec![unit_from_factors(0, 0, vec![(1.0, 1.0), (1.0, 1.0), (1.0, 1.0), (1.0, 1.0), (100.0, 1.0)])],
        };
        assert_eq!(truncate_weights(&series, 100.0).unwrap(), series);
        let t = truncate_weights(&series, 80.0).unwrap();
        assert_eq!(t.units[0].weights, [1.0; 5]);
        assert!(truncate_weights(&series, 0.0).is_err());
        assert!(truncate_weights(&series, 101.0).is_err());
        let flat = WeightSeries {
            units: vec![unit_from_factors(0, 0, vec![(3.0, 2.0); 1]); 4],
        };
        assert_eq!(truncate_weights(&flat, 10.0).unwrap(), flat);
    }

    #[test]
    fn diagnostics_of_unit_weights() {
        let series = WeightSeries {
            units: vec![unit_from_factors(0, 0, vec![(1.0, 1.0); 3]); 5],
        };
        for d in weight_diagnostics(&series) {
            assert_eq!((d.max, d.mean, d.n_rows), (1.0, 1.0, 5));
        }
        let single = WeightSeries {
            units: vec![unit_from_factors(0, 0, vec![(2.0, 1.0), (1.0, 4.0)])],
        };
        for d in weight_diagnostics(&single) {
            assert_eq!(d.max, d.mean);
        }
    }

    fn toy_cohort() -> Cohort {
        let subjects = vec![
            subject("a", &[1, 1, 1], &[0.5, 0.1, 0.3], 3.0, false),
            subject("b", &[0, 1, 1], &[-0.2, 1.0, 0.7], 3.0, false),
            subject("c", &[0, 0, 0], &[0.3, -0.4, 0.2], 2.5, true),
            subject("d", &[0, 0, 1], &[1.1, 0.8, 1.5], 3.0, false),
            subject("e", &[1, 1], &[-0.6, 0.4], 1.2, true),
            subject("f", &[0, 0, 0], &[-1.0, -0.3, 0.9], 3.0, false),
            subject("g", &[0, 1, 1], &[0.0, 0.2, -0.1], 3.0, false),
            subject("h", &[0, 0, 0], &[0.7, 1.2, -0.5], 3.0, false),
        ];
        Cohort::new(subjects, vec!["L".into()], 3.0).unwrap()
    }

    #[test]
    fn absorbing_factors_are_exactly_one() {
        let c = toy_cohort();
        let w = compute_iptw(&c, &WeightModelSpec::iptw(3, vec![0])).unwrap();
        let a = &w.units[0];
        assert_eq!(a.numerator[1..], [1.0, 1.0]);
        assert_eq!(a.denominator[1..], [1.0, 1.0]);
        assert_eq!(a.weights[0], a.weights[2]);
    }

    #[test]
    fn identical_models_give_unit_weights() {
        let c = toy_cohort();
        let b = DesignBuilder::current_covariates(vec![0]);
        let spec = WeightModelSpec::new(Some(b.clone()), b).unwrap();
        let w = compute_iptw(&c, &spec).unwrap();
        assert!(w.iter_values().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn recursive_structure() {
        let c = toy_cohort();
        let w = compute_iptw(&c, &WeightModelSpec::iptw(3, vec![0])).unwrap();
        for u in &w.units {
            for j in 1..u.weights.len() {
                let f = u.numerator[j] / u.denominator[j];
                assert_eq!(u.weights[j], u.weights[j - 1] * f);
            }
        }
    }

    #[test]
    fn numerator_must_be_covered() {
        let num = DesignBuilder::current_covariates(vec![0]);
        let den = DesignBuilder::per_time_origin(3, vec![0]);
        assert!(WeightModelSpec::new(Some(num), den).is_err());
    }

    #[test]
    fn ipacw_first_interval_and_initiators() {
        let c = toy_cohort();
        let mut rows = expand_sequential_trials(&c);
        let spec = WeightModelSpec::new(
            Some(DesignBuilder::intercept()),
            DesignBuilder::current_covariates(vec![0]),
        )
        .unwrap();
        let w = compute_ipacw(&c, &rows, &spec).unwrap();
        apply_trial_weights(&w, &mut rows).unwrap();
        for r in &rows {
            if r.followup == 0 || r.initiator {
                assert_eq!(r.weight, 1.0);
            }
            assert!(r.weight > 0.0 && r.weight.is_finite());
        }
    }

    #[test]
    fn ipcw_is_one_without_dropout() {
        let mut p = ScenarioParams::scenario(1).unwrap();
        p.gamma_l = 0.0;
        let (c, _) = generate_cohort(&p, 300, 4).unwrap();
        let w = compute_ipcw(&c, &WeightModelSpec::iptw(5, vec![0])).unwrap();
        assert!(w.iter_values().all(|v| v == 1.0));
    }

    #[test]
    fn iptw_null_when_treatment_ignores_covariates() {
        let mut p = ScenarioParams::scenario(1).unwrap();
        p.gamma_l = 0.0;
        let (c, _) = generate_cohort(&p, 5000, 17).unwrap();
        let w = compute_iptw(&c, &WeightModelSpec::iptw(5, vec![0])).unwrap();
        for d in weight_diagnostics(&w) {
            assert!((d.mean - 1.0).abs() < 0.02, "{d:?}");
            assert!(d.max < 1.5, "{d:?}");
        }
    }

    #[test]
    fn ipcw_null_under_random_dropout() {
        use rand::{Rng, SeedableRng};
        let p = ScenarioParams::scenario(1).unwrap();
        let (c, _) = generate_cohort(&p, 5000, 23).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let subjects: Vec<SubjectHistory> = c
            .subjects()
            .iter()
            .map(|s| {
                let mut s = s.clone();
                let drop: f64 = rng.random_range(0.5..12.0);
                if drop < s.t_end {
                    s.t_end = drop;
                    s.status = false;
                    s.visits.truncate(drop.ceil() as usize);
                }
                s
            })
            .collect();
        let c = Cohort::new(subjects, c.covariate_names().to_vec(), 5.0).unwrap();
        assert!(c.has_dropout());
        let w = compute_ipcw(&c, &WeightModelSpec::iptw(5, vec![0])).unwrap();
        let max = w.iter_values().fold(0.0, f64::max);
        assert!(max < 1.5, "{max}");
    }
}
