use serde::{Deserialize, Serialize};

use crate::cohort::IntervalRow;
use crate::error::{Error, Result};
use crate::linalg::{add_outer_upper, dot, symmetrize_upper, Cholesky};

const SCORE_TOL: f64 = 1e-8;
const MAX_ITER: usize = 50;
const SEPARATION_BOUND: f64 = 30.0;

/// Breslow cumulative baseline hazard of one stratum, at covariates zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineHazard {
    pub stratum: usize,
    pub times: Vec<f64>,
    pub cumhaz: Vec<f64>,
}

impl BaselineHazard {
    pub fn at(&self, t: f64) -> f64 {
        let i = self.times.partition_point(|&x| x <= t);
        if i == 0 {
            0.0
        } else {
            self.cumhaz[i - 1]
        }
    }

    pub fn last_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub log_hazard_ratios: Vec<f64>,
    /// One baseline per stratum, ordered by stratum id.
    pub baselines: Vec<BaselineHazard>,
    pub converged: bool,
    pub n_iterations: usize,
    pub log_partial_likelihood: f64,
    /// Inverse observed information, `p × p` row-major.
    pub information_inverse: Vec<f64>,
}

impl CoxFit {
    pub fn baseline(&self, stratum: usize) -> Option<&BaselineHazard> {
        self.baselines.iter().find(|b| b.stratum == stratum)
    }
}

struct Stratum {
    id: usize,
    /// Row indices by descending `t_out`.
    by_out: Vec<usize>,
    /// Row indices by descending `t_in`.
    by_in: Vec<usize>,
}

struct Prepared<'a> {
    rows: &'a [IntervalRow],
    p: usize,
    /// Covariates centered at their weighted means, row-major.
    x: Vec<f64>,
    centers: Vec<f64>,
    strata: Vec<Stratum>,
}

/// Per-event-time quantities from one sweep.
struct EventRecord {
    t: f64,
    d_w: f64,
    s0: f64,
    xbar: Vec<f64>,
}

struct Sweep {
    loglik: f64,
    score: Vec<f64>,
    info: Vec<f64>,
    events: Vec<Vec<EventRecord>>,
}

impl<'a> Prepared<'a> {
    fn new(rows: &'a [IntervalRow], p: usize) -> Self {
        let wsum: f64 = rows.iter().map(|r| r.weight).sum();
        let mut centers = vec![0.0; p];
        for r in rows {
            for (c, v) in centers.iter_mut().zip(&r.covariates) {
                *c += r.weight * v;
            }
        }
        if wsum > 0.0 {
            centers.iter_mut().for_each(|c| *c /= wsum);
        }
        let mut x = Vec::with_capacity(rows.len() * p);
        for r in rows {
            x.extend(r.covariates.iter().zip(&centers).map(|(v, c)| v - c));
        }
        let mut ids: Vec<usize> = rows.iter().map(|r| r.stratum).collect();
        ids.sort_unstable();
        ids.dedup();
        let strata = ids
            .into_iter()
            .map(|id| {
                let members: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].stratum == id).collect();
                let mut by_out = members.clone();
                by_out.sort_by(|&a, &b| rows[b].t_out.total_cmp(&rows[a].t_out));
                let mut by_in = members;
                by_in.sort_by(|&a, &b| rows[b].t_in.total_cmp(&rows[a].t_in));
                Stratum { id, by_out, by_in }
            })
            .collect();
        Self {
            rows,
            p,
            x,
            centers,
            strata,
        }
    }

    fn xi(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    fn sweep(&self, beta: &[f64], keep_events: bool) -> Sweep {
        let p = self.p;
        let mut loglik = 0.0;
        let mut score = vec![0.0; p];
        let mut info = vec![0.0; p * p];
        let mut events = Vec::with_capacity(self.strata.len());
        let risk: Vec<f64> = (0..self.rows.len())
            .map(|i| self.rows[i].weight * dot(self.xi(i), beta).exp())
            .collect();
        for st in &self.strata {
            let mut recs = Vec::new();
            let (mut s0, mut s1, mut s2) = (0.0, vec![0.0; p], vec![0.0; p * p]);
            let mut n_in = 0usize;
            let (mut io, mut ii) = (0, 0);
            while io < st.by_out.len() {
                let t = self.rows[st.by_out[io]].t_out;
                // all rows leaving at t enter the (reverse) sweep now
                let (mut d_w, mut sum_x, mut sum_eta) = (0.0, vec![0.0; p], 0.0);
                while io < st.by_out.len() && self.rows[st.by_out[io]].t_out == t {
                    let i = st.by_out[io];
                    let xi = self.xi(i);
                    s0 += risk[i];
                    for (a, v) in s1.iter_mut().zip(xi) {
                        *a += risk[i] * v;
                    }
                    add_outer_upper(&mut s2, xi, risk[i]);
                    n_in += 1;
                    let r = &self.rows[i];
                    if r.event && r.weight > 0.0 {
                        d_w += r.weight;
                        for (a, v) in sum_x.iter_mut().zip(xi) {
                            *a += r.weight * v;
                        }
                        sum_eta += r.weight * dot(xi, beta);
                    }
                    io += 1;
                }
                while ii < st.by_in.len() && self.rows[st.by_in[ii]].t_in >= t {
                    let i = st.by_in[ii];
                    let xi = self.xi(i);
                    s0 -= risk[i];
                    for (a, v) in s1.iter_mut().zip(xi) {
                        *a -= risk[i] * v;
                    }
                    add_outer_upper(&mut s2, xi, -risk[i]);
                    n_in -= 1;
                    ii += 1;
                }
                if n_in == 0 {
                    s0 = 0.0;
                    s1.iter_mut().for_each(|v| *v = 0.0);
                    s2.iter_mut().for_each(|v| *v = 0.0);
                }
                if d_w > 0.0 && s0 > 0.0 {
                    let xbar: Vec<f64> = s1.iter().map(|v| v / s0).collect();
                    loglik += sum_eta - d_w * s0.ln();
                    for j in 0..p {
                        score[j] += sum_x[j] - d_w * xbar[j];
                    }
                    for a in 0..p {
                        for b in a..p {
                            info[a * p + b] += d_w * (s2[a * p + b] / s0 - xbar[a] * xbar[b]);
                        }
                    }
                    if keep_events {
                        recs.push(EventRecord { t, d_w, s0, xbar });
                    }
                }
            }
            recs.reverse();
            events.push(recs);
        }
        symmetrize_upper(&mut info, p);
        Sweep {
            loglik,
            score,
            info,
            events,
        }
    }
}

fn diverging(beta: &[f64]) -> Option<usize> {
    beta.iter().position(|b| b.abs() > SEPARATION_BOUND)
}

/// Fits a Cox model maximizing the case-weighted partial likelihood with
/// Breslow ties, stratified by `IntervalRow::stratum`.
pub fn fit_weighted_cox(rows: &[IntervalRow]) -> Result<CoxFit> {
    const MODEL: &str = "Cox model";
    let p = super::check_rows(MODEL, rows)?;
    let prep = Prepared::new(rows, p);
    let mut beta = vec![0.0; p];
    let mut sw = prep.sweep(&beta, false);
    if p > 0 {
        if let Err(column) = Cholesky::factor(&sw.info, p, 1e-10) {
            return Err(Error::SingularDesign {
                model: MODEL.into(),
                column,
            });
        }
    }
    let mut converged = p == 0;
    let mut n_iterations = 0;
    let mut last_step = 0.0_f64;
    while !converged {
        if n_iterations == MAX_ITER {
            if let Some(column) = diverging(&beta) {
                return Err(Error::Separation {
                    model: MODEL.into(),
                    column,
                });
            }
            return Err(Error::NonConvergence {
                model: MODEL.into(),
                iterations: MAX_ITER,
                max_score: sw.score.iter().fold(0.0, |m: f64, s| m.max(s.abs())),
            });
        }
        n_iterations += 1;
        let max_score = sw.score.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
        let score_converged = max_score <= SCORE_TOL && last_step < 1e-4;
        if !score_converged {
            if let Some(column) = diverging(&beta) {
                return Err(Error::Separation {
                    model: MODEL.into(),
                    column,
                });
            }
        }
        let chol = Cholesky::factor(&sw.info, p, 1e-14).map_err(|column| Error::Separation {
            model: MODEL.into(),
            column: diverging(&beta).unwrap_or(column),
        })?;
        let mut step = sw.score.clone();
        chol.solve_in_place(&mut step);
        if score_converged {
            beta.iter_mut().zip(&step).for_each(|(b, d)| *b += d);
            converged = true;
            break;
        }
        let mut scale = 1.0;
        loop {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, d)| b + scale * d).collect();
            let next = prep.sweep(&cand, false);
            if next.loglik >= sw.loglik - 1e-12 * sw.loglik.abs() || scale < 1e-10 {
                let rel = (next.loglik - sw.loglik).abs() / (sw.loglik.abs() + 1e-300);
                last_step = step.iter().fold(0.0_f64, |m, d| m.max((scale * d).abs()));
                beta = cand;
                sw = next;
                if rel <= 1e-14 && last_step < 1e-9 {
                    converged = true;
                }
                break;
            }
            scale *= 0.5;
        }
    }

    let final_sweep = prep.sweep(&beta, true);
    let information_inverse = if p > 0 {
        Cholesky::factor(&final_sweep.info, p, 1e-14)
            .map_err(|column| Error::SingularDesign {
                model: MODEL.into(),
                column,
            })?
            .inverse()
    } else {
        vec![]
    };
    let shift = (-dot(&prep.centers, &beta)).exp();
    let baselines = prep
        .strata
        .iter()
        .zip(&final_sweep.events)
        .map(|(st, recs)| {
            let mut h = 0.0;
            let mut times = Vec::with_capacity(recs.len());
            let mut cumhaz = Vec::with_capacity(recs.len());
            for r in recs {
                h += r.d_w / r.s0 * shift;
                times.push(r.t);
                cumhaz.push(h);
            }
            BaselineHazard {
                stratum: st.id,
                times,
                cumhaz,
            }
        })
        .collect();
    Ok(CoxFit {
        log_hazard_ratios: beta,
        baselines,
        converged,
        n_iterations,
        log_partial_likelihood: final_sweep.loglik,
        information_inverse,
    })
}

/// Robust sandwich variance of the log-hazard ratios, clustering score
/// residuals by `IntervalRow::subject`. Returns a `p × p` row-major matrix.
pub fn cox_robust_variance(fit: &CoxFit, rows: &[IntervalRow]) -> Result<Vec<f64>> {
    let p = super::check_rows("Cox model", rows)?;
    if p != fit.log_hazard_ratios.len() {
        return Err(Error::InvalidArgument(format!(
            "robust variance: rows have {p} covariates, fit has {}",
            fit.log_hazard_ratios.len()
        )));
    }
    let prep = Prepared::new(rows, p);
    let beta = &fit.log_hazard_ratios;
    let sw = prep.sweep(beta, true);
    let n_clusters = rows.iter().map(|r| r.subject).max().map_or(0, |m| m + 1);
    let mut cluster_score = vec![0.0; n_clusters * p];
    for (st, recs) in prep.strata.iter().zip(&sw.events) {
        // cumulative Λ(t) and C(t) = Σ xbar dΛ on the event grid
        let mut lam = Vec::with_capacity(recs.len());
        let mut cum_c = Vec::with_capacity(recs.len());
        let (mut l, mut c) = (0.0, vec![0.0; p]);
        for r in recs {
            let dl = r.d_w / r.s0;
            l += dl;
            for (a, xb) in c.iter_mut().zip(&r.xbar) {
                *a += xb * dl;
            }
            lam.push(l);
            cum_c.push(c.clone());
        }
        let upto = |t: f64| recs.partition_point(|r| r.t <= t);
        let zero = vec![0.0; p];
        for &i in &st.by_out {
            let row = &rows[i];
            let xi = prep.xi(i);
            let (a, b) = (upto(row.t_in), upto(row.t_out));
            let (l_in, c_in) = if a == 0 { (0.0, &zero) } else { (lam[a - 1], &cum_c[a - 1]) };
            let (l_out, c_out) = if b == 0 { (0.0, &zero) } else { (lam[b - 1], &cum_c[b - 1]) };
            let e = dot(xi, beta).exp();
            let base = row.subject * p;
            for j in 0..p {
                let mut r = -e * (xi[j] * (l_out - l_in) - (c_out[j] - c_in[j]));
                if row.event && b > 0 && recs[b - 1].t == row.t_out {
                    r += xi[j] - recs[b - 1].xbar[j];
                }
                cluster_score[base + j] += row.weight * r;
            }
        }
    }
    let mut meat = vec![0.0; p * p];
    for c in 0..n_clusters {
        add_outer_upper(&mut meat, &cluster_score[c * p..(c + 1) * p], 1.0);
    }
    symmetrize_upper(&mut meat, p);
    let inv = &fit.information_inverse;
    let mut tmp = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..p {
            tmp[i * p + j] = (0..p).map(|k| inv[i * p + k] * meat[k * p + j]).sum();
        }
    }
    let mut v = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..p {
            v[i * p + j] = (0..p).map(|k| tmp[i * p + k] * inv[k * p + j]).sum();
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row(subject: usize, t: f64, event: bool, x: f64, w: f64) -> IntervalRow {
        IntervalRow {
            subject,
            t_in: 0.0,
            t_out: t,
            event,
            covariates: vec![x],
            weight: w,
            stratum: 0,
        }
    }

    /// Hand-written partial log-likelihood for one covariate, no ties.
    fn partial_loglik(data: &[(f64, bool, f64)], b: f64) -> f64 {
        data.iter()
            .filter(|d| d.1)
            .map(|&(t, _, x)| {
                let denom: f64 = data
                    .iter()
                    .filter(|d| d.0 >= t)
                    .map(|d| (b * d.2).exp())
                    .sum();
                b * x - denom.ln()
            })
            .sum()
    }

    /// Grid refinement of a concave one-dimensional objective on [-40, 40].
    fn grid_max(f: impl Fn(f64) -> f64) -> f64 {
        let (mut c, mut half) = (0.0, 40.0);
        for _ in 0..80 {
            let mut best = (f64::NEG_INFINITY, c);
            for i in 0..=40 {
                let b = (c - half + half * i as f64 / 20.0).clamp(-40.0, 40.0);
                let v = f(b);
                if v > best.0 {
                    best = (v, b);
                }
            }
            c = best.1;
            half *= 0.5;
        }
        c
    }

    #[test]
    fn three_subject_grid_oracle() {
        let data = [(1.0, true, 0.5), (2.0, true, 1.7), (3.0, true, -0.3)];
        let rows: Vec<_> = data
            .iter()
            .enumerate()
            .map(|(i, &(t, e, x))| row(i, t, e, x, 1.0))
            .collect();
        let fit = fit_weighted_cox(&rows).unwrap();
        let oracle = grid_max(|b| partial_loglik(&data, b));
        assert!((fit.log_hazard_ratios[0] - oracle).abs() < 1e-6, "{fit:?} vs {oracle}");
    }

    #[test]
    fn weight_scaling_leaves_beta_unchanged() {
        let data = [
            (0.5, true, 0.0, 1.0),
            (1.1, false, 1.0, 2.0),
            (1.4, true, 1.0, 0.5),
            (2.0, true, 0.0, 1.5),
            (2.5, true, 1.0, 1.0),
            (3.0, false, 0.0, 3.0),
        ];
        let mk = |c: f64| -> Vec<IntervalRow> {
            data.iter()
                .enumerate()
                .map(|(i, &(t, e, x, w))| row(i, t, e, x, w * c))
                .collect()
        };
        let a = fit_weighted_cox(&mk(1.0)).unwrap();
        let b = fit_weighted_cox(&mk(37.5)).unwrap();
        assert!((a.log_hazard_ratios[0] - b.log_hazard_ratios[0]).abs() < 1e-10);
    }

    #[test]
    fn null_simulation_has_small_log_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<_> = (0..20000)
            .map(|i| {
                let t = -rng.random::<f64>().ln() / 0.2;
                row(i, t.min(5.0), t < 5.0, f64::from(i as u32 % 2), 1.0)
            })
            .collect();
        let fit = fit_weighted_cox(&rows).unwrap();
        assert!(fit.log_hazard_ratios[0].abs() < 0.05, "{fit:?}");
    }

    #[test]
    fn breslow_baseline_by_hand() {
        // no covariates: Breslow reduces to Nelson-Aalen
        let rows: Vec<_> = [(1.0, true), (2.0, false), (3.0, true), (4.0, true)]
            .iter()
            .enumerate()
            .map(|(i, &(t, e))| IntervalRow {
                subject: i,
                t_in: 0.0,
                t_out: t,
                event: e,
                covariates: vec![],
                weight: 1.0,
                stratum: 0,
            })
            .collect();
        let fit = fit_weighted_cox(&rows).unwrap();
        let b = &fit.baselines[0];
        assert_eq!(b.times, [1.0, 3.0, 4.0]);
        assert!((b.at(3.5) - (0.25 + 0.5)).abs() < 1e-15);
        assert!((b.at(4.0) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn counting_process_split_matches_unsplit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut whole = vec![];
        let mut split = vec![];
        for i in 0..300 {
            let x = f64::from(u8::from(rng.random::<bool>()));
            let t = -rng.random::<f64>().ln() / (0.2 * (0.5 * x).exp());
            let (t, e) = (t.min(5.0), t < 5.0);
            let w = 0.5 + rng.random::<f64>();
            whole.push(row(i, t, e, x, w));
            let mut start = 0.0;
            while start < t {
                let end = (start + 1.0).min(t);
                split.push(IntervalRow {
                    t_in: start,
                    t_out: end,
                    event: e && end == t,
                    ..row(i, t, e, x, w)
                });
                start = end;
            }
        }
        let a = fit_weighted_cox(&whole).unwrap();
        let b = fit_weighted_cox(&split).unwrap();
        assert!((a.log_hazard_ratios[0] - b.log_hazard_ratios[0]).abs() < 1e-10);
        let va = cox_robust_variance(&a, &whole).unwrap();
        let vb = cox_robust_variance(&b, &split).unwrap();
        assert!((va[0] - vb[0]).abs() < 1e-10 * va[0].abs().max(1e-12));
    }

    #[test]
    fn robust_variance_matches_model_variance_under_correct_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<_> = (0..4000)
            .map(|i| {
                let x = f64::from(u8::from(rng.random::<bool>()));
                let t = -rng.random::<f64>().ln() / (0.3 * (0.4 * x).exp());
                row(i, t.min(3.0), t < 3.0, x, 1.0)
            })
            .collect();
        let fit = fit_weighted_cox(&rows).unwrap();
        let robust = cox_robust_variance(&fit, &rows).unwrap()[0];
        let naive = fit.information_inverse[0];
        assert!((robust / naive - 1.0).abs() < 0.1, "{robust} vs {naive}");
    }

    #[test]
    fn monotone_likelihood_is_separation() {
        // every event occurs in the x = 1 group before any x = 0 exit
        let rows = vec![
            row(0, 1.0, true, 1.0, 1.0),
            row(1, 2.0, true, 1.0, 1.0),
            row(2, 3.0, false, 0.0, 1.0),
            row(3, 4.0, false, 0.0, 1.0),
        ];
        let err = fit_weighted_cox(&rows).unwrap_err();
        assert!(matches!(err, Error::Separation { .. }), "{err}");
    }

    proptest! {
        #[test]
        fn matches_partial_likelihood_oracle(
            times in proptest::collection::btree_set(1u32..1000, 2..=6),
            xs in proptest::collection::vec(any::<bool>(), 6),
            evs in proptest::collection::vec(any::<bool>(), 6),
        ) {
            let data: Vec<(f64, bool, f64)> = times.iter().enumerate()
                .map(|(i, &t)| (f64::from(t) / 100.0, evs[i] || i == 0, f64::from(u8::from(xs[i]))))
                .collect();
            let oracle = grid_max(|b| partial_loglik(&data, b));
            let rows: Vec<_> = data.iter().enumerate().map(|(i, &(t, e, x))| row(i, t, e, x, 1.0)).collect();
            match fit_weighted_cox(&rows) {
                Ok(fit) => {
                    prop_assert!((fit.log_hazard_ratios[0] - oracle).abs() < 1e-5, "{:?} vs {}", fit, oracle);
                    let sw = Prepared::new(&rows, 1).sweep(&fit.log_hazard_ratios, false);
                    prop_assert!(sw.score[0].abs() <= 1e-6);
                }
                // no finite maximizer: the oracle runs to the edge of its window,
                // or the likelihood is flat in the coefficient
                Err(e @ (Error::Separation { .. } | Error::SingularDesign { .. })) => {
                    let gain = partial_loglik(&data, oracle) - partial_loglik(&data, 0.0);
                    prop_assert!(oracle.abs() > 25.0 || gain.abs() < 1e-9, "{} but oracle {}", e, oracle);
                }
                Err(e) => prop_assert!(false, "{}", e),
            }
        }
    }
}
