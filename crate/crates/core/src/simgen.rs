//! Simulation of longitudinal cohorts with time-dependent confounding, a
//! large-trial truth oracle and a repeated-sampling harness comparing the
//! estimation pipelines.
//!
//! Each subject has a frailty `U ~ N(0, u_variance)`, covariates
//! `L_0 ~ N(U, 1)` and `L_k ~ N(δ₀ + δ_L L_{k-1} + δ_A A_{k-1} + δ_T k + U, 1)`,
//! treatment started with probability `expit(γ₀ + γ_A A_{k-1} + γ_L L_k)` and
//! never stopped, and hazard `max(0, α₀ + α_A A_k + α_L L_k + α_U U)` on
//! `[k, k+1)`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, SubjectHistory, VisitRecord};
use crate::error::{Error, Result};
use crate::estimators::{
    run_msm_iptw, run_sequential_trials, Family, MarginalResults, MsmSpec, PipelineOutput, SequentialOptions,
    TreatmentForm, WeightOptions,
};
use crate::survfit::{kaplan_meier, SurvivalTransform};
use crate::weights::{IntervalDiagnostics, WeightModelSpec};

/// Name of the single simulated time-varying covariate.
pub const COVARIATE: &str = "L";

/// Largest share of repetitions a method may fail on before a run aborts.
const MAX_FAILED_SHARE: f64 = 0.05;

/// Subjects per RNG stream in the truth oracle.
const TRUTH_CHUNK: usize = 1 << 16;

/// A treatment effect that differs for subjects who start treatment late.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LateEffect {
    /// Initiation at or after this visit uses `alpha_a`.
    pub from_visit: usize,
    pub alpha_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub delta0: f64,
    pub delta_l: f64,
    pub delta_a: f64,
    pub delta_t: f64,
    pub gamma0: f64,
    /// Inert while treatment is absorbing.
    pub gamma_a: f64,
    pub gamma_l: f64,
    pub alpha0: f64,
    pub alpha_a: f64,
    pub alpha_l: f64,
    pub alpha_u: f64,
    /// Variance of the frailty `U`.
    pub u_variance: f64,
    pub n_visits: usize,
    pub tau_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub late_effect: Option<LateEffect>,
}

impl ScenarioParams {
    /// Built-in scenarios 1 (moderate confounding), 2 (rare treatment) and
    /// 3 (strong confounding).
    pub fn scenario(id: u8) -> Result<Self> {
        let (gamma0, gamma_l) = match id {
            1 => (-1.0, 0.5),
            2 => (-3.0, 0.5),
            3 => (-1.0, 3.0),
            _ => return Err(Error::InvalidArgument(format!("unknown scenario {id}; expected 1, 2 or 3"))),
        };
        Ok(Self {
            delta0: 0.0,
            delta_l: 0.8,
            delta_a: -1.0,
            delta_t: 0.1,
            gamma0,
            gamma_a: 0.0,
            gamma_l,
            alpha0: 0.2,
            alpha_a: -0.04,
            alpha_l: 0.015,
            alpha_u: 0.015,
            u_variance: 0.1,
            n_visits: 5,
            tau_max: 5.0,
            late_effect: None,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let values = [
            self.delta0,
            self.delta_l,
            self.delta_a,
            self.delta_t,
            self.gamma0,
            self.gamma_a,
            self.gamma_l,
            self.alpha0,
            self.alpha_a,
            self.alpha_l,
            self.alpha_u,
            self.u_variance,
            self.tau_max,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("scenario parameters must be finite".into()));
        }
        if !(self.alpha0 > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha0 must be positive, got {}", self.alpha0)));
        }
        if self.u_variance < 0.0 {
            return Err(Error::InvalidArgument("u_variance must be non-negative".into()));
        }
        if self.n_visits == 0 || !(self.tau_max > 0.0) || self.tau_max > self.n_visits as f64 {
            return Err(Error::InvalidArgument(format!(
                "need n_visits >= 1 and 0 < tau_max <= n_visits, got {} and {}",
                self.n_visits, self.tau_max
            )));
        }
        Ok(())
    }

    fn alpha_a_for(&self, initiated: Option<usize>) -> f64 {
        match (self.late_effect, initiated) {
            (Some(l), Some(k)) if k >= l.from_visit => l.alpha_a,
            _ => self.alpha_a,
        }
    }
}

/// How often the linear hazard went negative and was clamped to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClampStats {
    pub person_intervals: u64,
    pub clamped: u64,
}

impl ClampStats {
    pub fn rate(&self) -> f64 {
        if self.person_intervals == 0 {
            0.0
        } else {
            self.clamped as f64 / self.person_intervals as f64
        }
    }

    fn add(&mut self, other: ClampStats) {
        self.person_intervals += other.person_intervals;
        self.clamped += other.clamped;
    }
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Walks the visit intervals with one Exp(1) draw. Returns the event or
/// censoring time, the status and the number of intervals entered.
struct Walk {
    remaining: f64,
    stats: ClampStats,
}

impl Walk {
    /// Advances through `[k, k+1)` with hazard `h` and returns the event time
    /// if it falls inside (capped at `tau_max`).
    fn step(&mut self, k: usize, h: f64, tau_max: f64) -> Option<f64> {
        self.stats.person_intervals += 1;
        let h = if h < 0.0 {
            self.stats.clamped += 1;
            0.0
        } else {
            h
        };
        let end = ((k + 1) as f64).min(tau_max);
        let len = end - k as f64;
        if h * len >= self.remaining {
            let t = k as f64 + self.remaining / h;
            self.remaining = 0.0;
            return Some(t);
        }
        self.remaining -= h * len;
        None
    }
}

fn simulate_subject<R: Rng>(p: &ScenarioParams, id: String, rng: &mut R, stats: &mut ClampStats) -> SubjectHistory {
    let u = p.u_variance.sqrt() * normal(rng);
    let mut walk = Walk {
        remaining: Exp1.sample(rng),
        stats: ClampStats::default(),
    };
    let mut visits = Vec::with_capacity(p.n_visits);
    let mut l = u + normal(rng);
    let mut prev_a = false;
    let mut initiated = None;
    let mut outcome = (p.tau_max, false);
    for k in 0..p.n_visits {
        if k as f64 >= p.tau_max {
            break;
        }
        if k > 0 {
            l = p.delta0 + p.delta_l * l + p.delta_a * f64::from(u8::from(prev_a)) + p.delta_t * k as f64 + u + normal(rng);
        }
        let a = prev_a || rng.random::<f64>() < expit(p.gamma0 + p.gamma_l * l);
        if a && initiated.is_none() {
            initiated = Some(k);
        }
        visits.push(VisitRecord {
            k,
            treatment: a,
            covariates: vec![l],
        });
        let h = p.alpha0 + p.alpha_a_for(initiated) * f64::from(u8::from(a)) + p.alpha_l * l + p.alpha_u * u;
        if let Some(t) = walk.step(k, h, p.tau_max) {
            outcome = (t, true);
            break;
        }
        prev_a = a;
    }
    stats.add(walk.stats);
    SubjectHistory {
        id,
        visits,
        t_end: outcome.0,
        status: outcome.1,
    }
}

/// Simulates `n` subjects from one seeded stream.
pub fn generate_cohort(params: &ScenarioParams, n: usize, seed: u64) -> Result<(Cohort, ClampStats)> {
    params.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("cohort size must be at least 1".into()));
    }
    let width = n.to_string().len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = ClampStats::default();
    let subjects = (0..n)
        .map(|i| simulate_subject(params, format!("{i:0width$}"), &mut rng, &mut stats))
        .collect();
    let cohort = Cohort::new(subjects, vec![COVARIATE.to_string()], params.tau_max)?;
    Ok((cohort, stats))
}

/// Event time under treatment forced to `a` at every visit, reusing the
/// subject's frailty, baseline covariate, innovations and Exp(1) draw.
fn forced_event_time(p: &ScenarioParams, a: bool, u: f64, l0: f64, noise: &[f64], e: f64) -> (f64, bool) {
    let mut walk = Walk {
        remaining: e,
        stats: ClampStats::default(),
    };
    let af = f64::from(u8::from(a));
    let alpha_a = p.alpha_a_for(a.then_some(0));
    let mut l = l0;
    for k in 0..p.n_visits {
        if k as f64 >= p.tau_max {
            break;
        }
        if k > 0 {
            l = p.delta0 + p.delta_l * l + p.delta_a * af + p.delta_t * k as f64 + u + noise[k - 1];
        }
        if let Some(t) = walk.step(k, p.alpha0 + alpha_a * af + p.alpha_l * l + p.alpha_u * u, p.tau_max) {
            return (t, true);
        }
    }
    (p.tau_max, false)
}

/// True survival curves from a simulated randomized trial of `n_large`
/// subjects: every subject is followed both always treated and never treated
/// with shared random draws, and each arm is summarized by Kaplan-Meier.
pub fn generate_truth(params: &ScenarioParams, n_large: usize, horizons: &[f64], seed: u64) -> Result<MarginalResults> {
    params.validate()?;
    if n_large == 0 {
        return Err(Error::InvalidArgument("truth sample size must be at least 1".into()));
    }
    let n_chunks = n_large.div_ceil(TRUTH_CHUNK);
    let arms: Vec<(Vec<(f64, bool)>, Vec<(f64, bool)>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let size = TRUTH_CHUNK.min(n_large - c * TRUTH_CHUNK);
            let mut treated = Vec::with_capacity(size);
            let mut untreated = Vec::with_capacity(size);
            let mut noise = vec![0.0; params.n_visits.saturating_sub(1)];
            for _ in 0..size {
                let u = params.u_variance.sqrt() * normal(&mut rng);
                let l0 = u + normal(&mut rng);
                noise.iter_mut().for_each(|z| *z = normal(&mut rng));
                let e: f64 = Exp1.sample(&mut rng);
                treated.push(forced_event_time(params, true, u, l0, &noise, e));
                untreated.push(forced_event_time(params, false, u, l0, &noise, e));
            }
            (treated, untreated)
        })
        .collect();
    let (t1, t0): (Vec<_>, Vec<_>) = arms.into_iter().unzip();
    let s1 = kaplan_meier(&t1.concat())?;
    let s0 = kaplan_meier(&t0.concat())?;
    Ok(MarginalResults::from_curves(horizons, s1, s0, "truth".into()))
}

/// An analysis run on every simulated cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// MSM-IPTW without baseline conditioning.
    MsmIptw,
    /// MSM-IPTW conditional on `L_0`.
    MsmIptwL0,
    /// Sequential trials conditional on trial-baseline `L_k`.
    Sequential,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::MsmIptw, Method::MsmIptwL0, Method::Sequential];

    pub fn label(self) -> &'static str {
        match self {
            Method::MsmIptw => "msm-iptw",
            Method::MsmIptwL0 => "msm-iptw-l0",
            Method::Sequential => "sequential",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.label() == s)
    }

    /// MSM and weight models used for `params`.
    pub fn specs(self, params: &ScenarioParams, family: Family, horizons: Vec<f64>) -> (MsmSpec, WeightOptions) {
        self.specs_for(params.n_visits, vec![0], family, horizons)
    }

    /// MSM and weight models for a cohort with `n_visits` visit slots, using
    /// `covariates` both in the weight models and as baseline conditioning.
    pub fn specs_for(self, n_visits: usize, covariates: Vec<usize>, family: Family, horizons: Vec<f64>) -> (MsmSpec, WeightOptions) {
        let v = n_visits;
        let c = covariates;
        let (form, cond, weights) = match self {
            Method::MsmIptw => (TreatmentForm::PerVisit, vec![], WeightModelSpec::iptw(v, c)),
            Method::MsmIptwL0 => (TreatmentForm::PerVisit, c.clone(), WeightModelSpec::iptw_baseline(v, c.clone(), c)),
            Method::Sequential => (TreatmentForm::Current, c.clone(), WeightModelSpec::ipacw(v, c.clone(), c)),
        };
        (MsmSpec::new(family, form, cond, horizons), WeightOptions::treatment(weights))
    }

    pub fn run(self, cohort: &Cohort, msm: &MsmSpec, weights: &WeightOptions) -> Result<PipelineOutput> {
        match self {
            Method::MsmIptw | Method::MsmIptwL0 => run_msm_iptw(cohort, msm, weights),
            Method::Sequential => run_sequential_trials(cohort, msm, weights, &SequentialOptions::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSettings {
    pub n: usize,
    pub reps: usize,
    pub methods: Vec<Method>,
    pub family: Family,
    pub transform: SurvivalTransform,
    /// Weight truncation percentile applied by every method.
    pub truncate: Option<f64>,
    pub seed: u64,
}

impl SimulationSettings {
    pub fn new(n: usize, reps: usize, seed: u64) -> Self {
        Self {
            n,
            reps,
            methods: Method::ALL.to_vec(),
            family: Family::Aalen,
            transform: SurvivalTransform::Exponential,
            truncate: None,
            seed,
        }
    }
}

/// Estimates of one method on one simulated cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepEstimate {
    pub rep: usize,
    pub s1: Vec<f64>,
    pub s0: Vec<f64>,
    pub rd: Vec<f64>,
    pub diagnostics: Vec<IntervalDiagnostics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quantity {
    S1,
    S0,
    RD,
}

impl Quantity {
    pub const ALL: [Quantity; 3] = [Quantity::S1, Quantity::S0, Quantity::RD];

    fn of<'a>(self, v: &'a RepEstimate) -> &'a [f64] {
        match self {
            Quantity::S1 => &v.s1,
            Quantity::S0 => &v.s0,
            Quantity::RD => &v.rd,
        }
    }

    fn of_truth(self, t: &MarginalResults) -> &[f64] {
        match self {
            Quantity::S1 => &t.s1,
            Quantity::S0 => &t.s0,
            Quantity::RD => &t.rd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRow {
    pub method: Method,
    pub quantity: Quantity,
    pub tau: f64,
    pub mean: f64,
    pub sd: f64,
    pub truth: f64,
    pub bias: f64,
    /// Monte-Carlo standard error of the mean, `sd / √reps`.
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRuns {
    pub method: Method,
    pub estimates: Vec<RepEstimate>,
    /// Repetitions on which the method failed, with the error message.
    pub failures: Vec<(usize, String)>,
}

impl MethodRuns {
    /// Median across repetitions of one per-interval weight summary.
    pub fn median_diagnostic(&self, interval: usize, field: fn(&IntervalDiagnostics) -> f64) -> Option<f64> {
        let mut v: Vec<f64> = self
            .estimates
            .iter()
            .filter_map(|e| e.diagnostics.iter().find(|d| d.interval == interval).map(field))
            .collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len();
        Some(if m % 2 == 1 { v[m / 2] } else { 0.5 * (v[m / 2 - 1] + v[m / 2]) })
    }

    fn n_intervals(&self) -> usize {
        self.estimates
            .iter()
            .flat_map(|e| e.diagnostics.iter().map(|d| d.interval + 1))
            .max()
            .unwrap_or(0)
    }
}

/// Summary of a repeated-sampling study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceTable {
    pub settings: SimulationSettings,
    pub params: ScenarioParams,
    pub horizons: Vec<f64>,
    pub truth: MarginalResults,
    pub rows: Vec<PerformanceRow>,
    pub runs: Vec<MethodRuns>,
    pub clamp: ClampStats,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl PerformanceTable {
    pub fn row(&self, method: Method, quantity: Quantity, tau: f64) -> Option<&PerformanceRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.quantity == quantity && r.tau == tau)
    }

    pub fn runs(&self, method: Method) -> Option<&MethodRuns> {
        self.runs.iter().find(|r| r.method == method)
    }

    /// `Var(MSM-IPTW) / Var(sequential)` of the RD at each horizon, using the
    /// `L_0`-conditional MSM when it was run and the unconditional one otherwise.
    pub fn variance_ratio(&self) -> Option<Vec<f64>> {
        let msm = [Method::MsmIptwL0, Method::MsmIptw]
            .into_iter()
            .find(|m| self.runs(*m).is_some())?;
        self.runs(Method::Sequential)?;
        self.horizons
            .iter()
            .map(|&t| {
                let a = self.row(msm, Quantity::RD, t)?.sd;
                let b = self.row(Method::Sequential, Quantity::RD, t)?.sd;
                Some(a * a / (b * b))
            })
            .collect()
    }

    /// CSV with columns `method,quantity,tau,mean,sd,truth,bias,mc_se`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "quantity", "tau", "mean", "sd", "truth", "bias", "mc_se"])?;
        for r in &self.rows {
            w.write_record([
                r.method.label().to_string(),
                format!("{:?}", r.quantity),
                r.tau.to_string(),
                r.mean.to_string(),
                r.sd.to_string(),
                r.truth.to_string(),
                r.bias.to_string(),
                r.mc_se.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Medians across repetitions of the per-interval weight summaries, as CSV
    /// with columns `kind,interval,max,mean,p99,n_rows`.
    pub fn write_weight_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["kind", "interval", "max", "mean", "p99", "n_rows"])?;
        for runs in &self.runs {
            for j in 0..runs.n_intervals() {
                let med = |f: fn(&IntervalDiagnostics) -> f64| runs.median_diagnostic(j, f).unwrap_or(f64::NAN);
                w.write_record([
                    runs.method.label().to_string(),
                    j.to_string(),
                    med(|d| d.max).to_string(),
                    med(|d| d.mean).to_string(),
                    med(|d| d.p99).to_string(),
                    med(|d| d.n_rows as f64).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Integer horizons `1..=floor(tau_max)`.
pub fn default_horizons(params: &ScenarioParams) -> Vec<f64> {
    (1..=params.tau_max.floor() as usize).map(|t| t as f64).collect()
}

/// Simulates `settings.reps` cohorts (repetition `r` uses seed
/// `settings.seed + r`), runs every method on each, and summarizes against
/// `truth`. Aborts when a method fails on more than 5% of repetitions.
pub fn run_scenario(params: &ScenarioParams, settings: &SimulationSettings, truth: &MarginalResults) -> Result<PerformanceTable> {
    params.validate()?;
    if settings.reps < 2 {
        return Err(Error::InvalidArgument("need at least 2 repetitions".into()));
    }
    if settings.methods.is_empty() {
        return Err(Error::InvalidArgument("no methods selected".into()));
    }
    let horizons = truth.horizons.clone();
    let specs: Vec<(Method, MsmSpec, WeightOptions)> = settings
        .methods
        .iter()
        .map(|&m| {
            let (msm, w) = m.specs(params, settings.family, horizons.clone());
            (m, msm.with_transform(settings.transform), w.with_truncation(settings.truncate))
        })
        .collect();
    type RepOutcome = (ClampStats, Vec<std::result::Result<RepEstimate, String>>);
    let per_rep: Vec<Result<RepOutcome>> = (0..settings.reps)
        .into_par_iter()
        .map(|rep| {
            let (cohort, stats) = generate_cohort(params, settings.n, settings.seed.wrapping_add(rep as u64))?;
            let outs = specs
                .iter()
                .map(|(m, msm, w)| {
                    m.run(&cohort, msm, w)
                        .map(|o| RepEstimate {
                            rep,
                            s1: o.results.s1,
                            s0: o.results.s0,
                            rd: o.results.rd,
                            diagnostics: o.diagnostics,
                        })
                        .map_err(|e| e.to_string())
                })
                .collect();
            Ok((stats, outs))
        })
        .collect();
    let mut clamp = ClampStats::default();
    let mut runs: Vec<MethodRuns> = settings
        .methods
        .iter()
        .map(|&method| MethodRuns {
            method,
            estimates: Vec::new(),
            failures: Vec::new(),
        })
        .collect();
    for (rep, r) in per_rep.into_iter().enumerate() {
        let (stats, outs) = r?;
        clamp.add(stats);
        for (run, out) in runs.iter_mut().zip(outs) {
            match out {
                Ok(e) => run.estimates.push(e),
                Err(msg) => run.failures.push((rep, msg)),
            }
        }
    }
    for run in &runs {
        if run.failures.len() as f64 > MAX_FAILED_SHARE * settings.reps as f64 || run.estimates.len() < 2 {
            return Err(Error::Estimation(format!(
                "{} failed on {} of {} repetitions (first: {})",
                run.method.label(),
                run.failures.len(),
                settings.reps,
                run.failures.first().map_or("", |f| f.1.as_str())
            )));
        }
    }
    let mut rows = Vec::new();
    for run in &runs {
        for q in Quantity::ALL {
            for (i, &tau) in horizons.iter().enumerate() {
                let v: Vec<f64> = run.estimates.iter().map(|e| q.of(e)[i]).collect();
                let (mean, sd) = mean_sd(&v);
                let truth_v = q.of_truth(truth)[i];
                rows.push(PerformanceRow {
                    method: run.method,
                    quantity: q,
                    tau,
                    mean,
                    sd,
                    truth: truth_v,
                    bias: mean - truth_v,
                    mc_se: sd / (v.len() as f64).sqrt(),
                });
            }
        }
    }
    Ok(PerformanceTable {
        settings: settings.clone(),
        params: params.clone(),
        horizons,
        truth: truth.clone(),
        rows,
        runs,
        clamp,
    })
}
