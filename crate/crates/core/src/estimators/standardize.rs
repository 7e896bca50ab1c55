use crate::error::{Error, Result};
use crate::survfit::{aalen_cumhaz_at, CurveFlags, HazardFit, SurvivalCurve, SurvivalTransform};

use super::{MarginalResults, MsmSpec};

/// Cap on the number of fit jump times kept in standardized curves; the
/// requested horizons are always evaluated exactly.
const MAX_GRID: usize = 400;

fn arm_path(msm: &MsmSpec, n_slots: usize, n_path: usize, treated: bool, cond: &[f64]) -> Vec<Vec<f64>> {
    (0..n_path)
        .map(|k| msm.row(n_slots, &vec![treated; k + 1], cond))
        .collect()
}

fn jump_times(fit: &HazardFit) -> Vec<f64> {
    match fit {
        HazardFit::Aalen(f) => f.times.clone(),
        HazardFit::Cox(f) => f.baseline(0).map(|b| b.times.clone()).unwrap_or_default(),
    }
}

fn grid(fit: &HazardFit, horizons: &[f64], max_h: f64) -> Vec<f64> {
    let jumps: Vec<f64> = jump_times(fit).into_iter().filter(|&t| t <= max_h).collect();
    let step = jumps.len().div_ceil(MAX_GRID).max(1);
    let mut g: Vec<f64> = jumps.into_iter().step_by(step).collect();
    g.extend(horizons.iter().copied().filter(|&h| h > 0.0));
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

fn arm_curve(
    fit: &HazardFit,
    msm: &MsmSpec,
    n_slots: usize,
    n_path: usize,
    treated: bool,
    population: &[Vec<f64>],
    grid: &[f64],
) -> Result<SurvivalCurve> {
    let mut mean = vec![0.0; grid.len()];
    let mut flags = CurveFlags::default();
    match (fit, msm.transform) {
        // the model row is affine in the conditioning covariates, so the
        // cumulative hazard is too
        (HazardFit::Aalen(f), SurvivalTransform::Exponential) => {
            let q = msm.conditioning.len();
            let zero = vec![0.0; q];
            let base = aalen_cumhaz_at(f, &arm_path(msm, n_slots, n_path, treated, &zero), grid);
            let slopes: Vec<Vec<f64>> = (0..q)
                .map(|c| {
                    let mut e = zero.clone();
                    e[c] = 1.0;
                    let l = aalen_cumhaz_at(f, &arm_path(msm, n_slots, n_path, treated, &e), grid);
                    l.iter().zip(&base).map(|(a, b)| a - b).collect()
                })
                .collect();
            for member in population {
                for (g, m) in mean.iter_mut().enumerate() {
                    let lam = base[g] + (0..q).map(|c| member[c] * slopes[c][g]).sum::<f64>();
                    let s = (-lam).exp();
                    if s > 1.0 {
                        flags.clamped = true;
                    }
                    *m += s.min(1.0);
                }
            }
            flags.extended = grid.last().copied().unwrap_or(0.0) > f.last_time();
        }
        _ => {
            for member in population {
                let path = arm_path(msm, n_slots, n_path, treated, member);
                let c = fit.survival(&path, grid, msm.transform)?;
                flags = flags.merge(c.flags);
                for (g, m) in mean.iter_mut().enumerate() {
                    *m += c.at(grid[g]);
                }
            }
        }
    }
    let n = population.len() as f64;
    let mut times = vec![0.0];
    let mut surv = vec![1.0];
    for (&t, m) in grid.iter().zip(mean) {
        let s = m / n;
        if s > *surv.last().unwrap() + 1e-15 {
            flags.non_monotone = true;
        }
        times.push(t);
        surv.push(s);
    }
    Ok(SurvivalCurve { times, surv, flags })
}

/// Averages the conditional survival of an always-treated and a
/// never-treated copy of every population member.
///
/// Each member is the vector of conditioning covariates the MSM expects.
pub fn standardize(fit: &HazardFit, msm: &MsmSpec, n_slots: usize, population: &[Vec<f64>], label: &str) -> Result<MarginalResults> {
    if population.is_empty() {
        return Err(Error::InvalidArgument("standardization population is empty".into()));
    }
    let q = msm.conditioning.len();
    if let Some(m) = population.iter().find(|m| m.len() != q) {
        return Err(Error::InvalidArgument(format!(
            "population member has {} conditioning covariates, the model uses {q}",
            m.len()
        )));
    }
    if fit.n_covariates() != msm.width(n_slots) {
        return Err(Error::InvalidArgument(format!(
            "fit has {} covariates, the model specification implies {}",
            fit.n_covariates(),
            msm.width(n_slots)
        )));
    }
    let max_h = msm.horizons.iter().copied().fold(0.0, f64::max);
    let n_path = (max_h.ceil() as usize).max(1);
    let g = grid(fit, &msm.horizons, max_h);
    let empty = [Vec::new()];
    let members: &[Vec<f64>] = if q == 0 { &empty } else { population };
    let s1 = arm_curve(fit, msm, n_slots, n_path, true, members, &g)?;
    let s0 = arm_curve(fit, msm, n_slots, n_path, false, members, &g)?;
    Ok(MarginalResults::from_curves(&msm.horizons, s1, s0, label.to_string()))
}
