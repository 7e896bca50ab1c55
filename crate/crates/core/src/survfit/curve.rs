use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dot;

use super::{AalenFit, CoxFit};

/// How cumulative hazard increments become survival probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurvivalTransform {
    /// `S(τ) = exp(-Λ(τ))`.
    #[default]
    Exponential,
    /// `S(τ) = Π (1 - dΛ)` over jump times up to `τ`.
    ProductLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CurveFlags {
    /// Some value fell outside `[0, 1]` and was clamped.
    pub clamped: bool,
    /// A requested horizon lies beyond the last jump of the fit.
    pub extended: bool,
    /// The curve increases somewhere (negative additive-hazard increments).
    pub non_monotone: bool,
}

impl CurveFlags {
    pub fn merge(self, other: Self) -> Self {
        Self {
            clamped: self.clamped || other.clamped,
            extended: self.extended || other.extended,
            non_monotone: self.non_monotone || other.non_monotone,
        }
    }
}

/// Right-continuous step function starting at `S(0) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub surv: Vec<f64>,
    pub flags: CurveFlags,
}

impl SurvivalCurve {
    pub(crate) fn from_steps(times: Vec<f64>, surv: Vec<f64>) -> Self {
        Self {
            times,
            surv,
            flags: CurveFlags::default(),
        }
    }

    /// `S(t)`, taken from the last grid point `<= t`.
    pub fn at(&self, t: f64) -> f64 {
        let i = self.times.partition_point(|&x| x <= t);
        if i == 0 {
            1.0
        } else {
            self.surv[i - 1]
        }
    }

    pub fn at_all(&self, horizons: &[f64]) -> Vec<f64> {
        horizons.iter().map(|&t| self.at(t)).collect()
    }
}

/// A fitted hazard model of either family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HazardFit {
    Cox(CoxFit),
    Aalen(AalenFit),
}

impl HazardFit {
    /// Number of covariates the model expects on each interval.
    pub fn n_covariates(&self) -> usize {
        match self {
            HazardFit::Cox(f) => f.log_hazard_ratios.len(),
            HazardFit::Aalen(f) => f.width().saturating_sub(1),
        }
    }

    /// Survival along a covariate path, using the stratum-0 baseline for Cox.
    pub fn survival(
        &self,
        path: &[Vec<f64>],
        horizons: &[f64],
        transform: SurvivalTransform,
    ) -> Result<SurvivalCurve> {
        match self {
            HazardFit::Cox(f) => survival_from_cox(f, 0, path, horizons, transform),
            HazardFit::Aalen(f) => survival_from_aalen(f, path, horizons, transform),
        }
    }
}

/// Index of the visit interval `[k, k+1)` whose covariates apply to a jump at `t`.
/// A jump at exactly `k + 1` still belongs to interval `k`.
fn interval_of(t: f64) -> usize {
    (t.ceil() as usize).saturating_sub(1)
}

fn check_path(path: &[Vec<f64>], horizons: &[f64], width: usize) -> Result<f64> {
    let max_h = horizons.iter().copied().fold(0.0, f64::max);
    if horizons.iter().any(|h| !(*h >= 0.0)) {
        return Err(Error::InvalidArgument("horizons must be non-negative".into()));
    }
    let needed = max_h.ceil() as usize;
    if path.len() < needed {
        return Err(Error::InvalidArgument(format!(
            "covariate path covers {} intervals, horizon {max_h} needs {needed}",
            path.len()
        )));
    }
    if let Some(x) = path.iter().find(|x| x.len() != width) {
        return Err(Error::InvalidArgument(format!(
            "covariate path row has {} entries, model expects {width}",
            x.len()
        )));
    }
    Ok(max_h)
}

/// Builds the curve from hazard jumps `(t, dΛ)` in time order.
fn assemble(
    jumps: impl Iterator<Item = (f64, f64)>,
    horizons: &[f64],
    max_h: f64,
    last_fit_time: f64,
    transform: SurvivalTransform,
) -> SurvivalCurve {
    let mut grid: Vec<(f64, f64)> = Vec::new();
    let mut cum = 0.0;
    let mut prod = 1.0;
    let value = |cum: f64, prod: f64| match transform {
        SurvivalTransform::Exponential => (-cum).exp(),
        SurvivalTransform::ProductLimit => prod,
    };
    let mut hs: Vec<f64> = horizons.to_vec();
    hs.sort_by(f64::total_cmp);
    let mut hi = 0;
    for (t, d) in jumps.take_while(|(t, _)| *t <= max_h) {
        while hi < hs.len() && hs[hi] < t {
            grid.push((hs[hi], value(cum, prod)));
            hi += 1;
        }
        cum += d;
        prod *= 1.0 - d;
        grid.push((t, value(cum, prod)));
    }
    for &h in &hs[hi..] {
        grid.push((h, value(cum, prod)));
    }
    let mut flags = CurveFlags {
        extended: max_h > last_fit_time,
        ..CurveFlags::default()
    };
    let mut times = vec![0.0];
    let mut surv = vec![1.0];
    for (t, s) in grid {
        if !(0.0..=1.0).contains(&s) {
            flags.clamped = true;
        }
        let s = if s.is_nan() { 0.0 } else { s.clamp(0.0, 1.0) };
        if s > *surv.last().unwrap_or(&1.0) + 1e-15 {
            flags.non_monotone = true;
        }
        if t == 0.0 {
            // a horizon of 0 keeps S(0) = 1
            continue;
        }
        if times.last() == Some(&t) {
            *surv.last_mut().unwrap() = s;
        } else {
            times.push(t);
            surv.push(s);
        }
    }
    SurvivalCurve { times, surv, flags }
}

/// Survival under a Cox fit along a visit-piecewise covariate path:
/// `S(τ) = exp(-Σ_k exp(βᵀx_k) (H₀(min(k+1, τ)) - H₀(k)))`.
pub fn survival_from_cox(
    fit: &CoxFit,
    stratum: usize,
    path: &[Vec<f64>],
    horizons: &[f64],
    transform: SurvivalTransform,
) -> Result<SurvivalCurve> {
    let max_h = check_path(path, horizons, fit.log_hazard_ratios.len())?;
    let base = fit.baseline(stratum).ok_or_else(|| {
        Error::InvalidArgument(format!("Cox fit has no baseline for stratum {stratum}"))
    })?;
    let lp: Vec<f64> = path
        .iter()
        .map(|x| dot(&fit.log_hazard_ratios, x).exp())
        .collect();
    let mut prev = 0.0;
    let jumps = base.times.iter().zip(&base.cumhaz).map(|(&t, &h)| {
        let d = h - prev;
        prev = h;
        (t, d * lp.get(interval_of(t)).copied().unwrap_or(0.0))
    });
    Ok(assemble(jumps, horizons, max_h, base.last_time(), transform))
}

/// Cumulative hazard `Λ(g)` under an Aalen fit at each grid time (ascending),
/// without any clamping.
pub(crate) fn aalen_cumhaz_at(fit: &AalenFit, path: &[Vec<f64>], grid: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    let mut cum = 0.0;
    let mut j = 0;
    for &g in grid {
        while j < fit.times.len() && fit.times[j] <= g {
            let t = fit.times[j];
            if let Some(x) = path.get(interval_of(t)) {
                let d = &fit.increments[j];
                cum += d[0] + dot(&d[1..], x);
            }
            j += 1;
        }
        out.push(cum);
    }
    out
}

/// Survival under an Aalen fit along a visit-piecewise covariate path:
/// `S(τ) = exp(-Σ_k (1, x_k)ᵀ (B(min(k+1, τ)) - B(k)))`.
pub fn survival_from_aalen(
    fit: &AalenFit,
    path: &[Vec<f64>],
    horizons: &[f64],
    transform: SurvivalTransform,
) -> Result<SurvivalCurve> {
    let max_h = check_path(path, horizons, fit.width().saturating_sub(1))?;
    let jumps = fit.times.iter().zip(&fit.increments).map(|(&t, d)| {
        let x = path.get(interval_of(t));
        let v = match x {
            Some(x) => d[0] + dot(&d[1..], x),
            None => 0.0,
        };
        (t, v)
    });
    Ok(assemble(jumps, horizons, max_h, fit.last_time(), transform))
}

#[cfg(test)]
mod tests {
    use super::super::BaselineHazard;
    use super::*;

    fn cox(beta: f64, times: &[f64], cumhaz: &[f64]) -> CoxFit {
        CoxFit {
            log_hazard_ratios: vec![beta],
            baselines: vec![BaselineHazard {
                stratum: 0,
                times: times.to_vec(),
                cumhaz: cumhaz.to_vec(),
            }],
            converged: true,
            n_iterations: 0,
            log_partial_likelihood: 0.0,
            information_inverse: vec![1.0],
        }
    }

    #[test]
    fn cox_zero_coefficients_or_zero_path() {
        let f = cox(0.0, &[0.5, 1.5, 2.5], &[0.1, 0.3, 0.6]);
        let c = survival_from_cox(&f, 0, &vec![vec![1.0]; 3], &[1.0, 2.0, 3.0], SurvivalTransform::Exponential).unwrap();
        assert_eq!(c.at_all(&[1.0, 2.0, 3.0]), [(-0.1f64).exp(), (-0.3f64).exp(), (-0.6f64).exp()]);
        let f = cox(1.7, &[0.5, 1.5, 2.5], &[0.1, 0.3, 0.6]);
        let c = survival_from_cox(&f, 0, &vec![vec![0.0]; 3], &[3.0], SurvivalTransform::Exponential).unwrap();
        assert_eq!(c.at(3.0), (-0.6f64).exp());
    }

    #[test]
    fn cox_hand_evaluation() {
        // unit baseline jump at t=1, hazard ratio 2 on the treated path
        let f = cox(2f64.ln(), &[1.0], &[1.0]);
        let c = survival_from_cox(&f, 0, &[vec![1.0], vec![1.0]], &[2.0], SurvivalTransform::Exponential).unwrap();
        assert!((c.at(2.0) - (-2.0f64).exp()).abs() < 1e-15);
        assert!(c.flags.extended);
    }

    fn aalen(times: &[f64], inc: &[[f64; 2]]) -> AalenFit {
        let mut run = vec![0.0; 2];
        let cumulative = inc
            .iter()
            .map(|d| {
                run[0] += d[0];
                run[1] += d[1];
                run.clone()
            })
            .collect();
        AalenFit {
            times: times.to_vec(),
            increments: inc.iter().map(|d| d.to_vec()).collect(),
            cumulative,
            n_skipped: 0,
            n_aliased: 0,
        }
    }

    #[test]
    fn aalen_zero_and_baseline_only() {
        let f = aalen(&[0.5, 1.0], &[[0.0, 0.0], [0.0, 0.0]]);
        let c = survival_from_aalen(&f, &vec![vec![1.0]; 2], &[2.0], SurvivalTransform::Exponential).unwrap();
        assert_eq!(c.at(2.0), 1.0);
        let f = aalen(&[0.5, 1.0], &[[0.2, 0.5], [0.1, 0.5]]);
        let c = survival_from_aalen(&f, &vec![vec![0.0]; 2], &[2.0], SurvivalTransform::Exponential).unwrap();
        assert!((c.at(2.0) - (-0.3f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn jump_at_visit_uses_preceding_interval() {
        let f = aalen(&[1.0, 2.0], &[[0.1, 0.2], [0.1, 0.2]]);
        let path = [vec![0.0], vec![1.0]];
        let c = survival_from_aalen(&f, &path, &[1.0, 2.0], SurvivalTransform::ProductLimit).unwrap();
        assert!((c.at(1.0) - 0.9).abs() < 1e-15);
        assert!((c.at(2.0) - 0.9 * 0.7).abs() < 1e-15);
    }

    #[test]
    fn negative_increments_are_flagged_and_clamped() {
        let f = aalen(&[0.5, 1.0], &[[0.1, 0.0], [-0.3, 0.0]]);
        let c = survival_from_aalen(&f, &[vec![0.0]], &[1.0], SurvivalTransform::Exponential).unwrap();
        assert!(c.flags.non_monotone);
        assert!(c.flags.clamped);
        assert_eq!(c.at(1.0), 1.0);
    }

    #[test]
    fn short_path_is_rejected() {
        let f = aalen(&[0.5], &[[0.1, 0.0]]);
        assert!(survival_from_aalen(&f, &[vec![0.0]], &[2.0], SurvivalTransform::Exponential).is_err());
    }
}
