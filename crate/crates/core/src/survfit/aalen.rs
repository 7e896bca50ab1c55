use serde::{Deserialize, Serialize};

use crate::cohort::IntervalRow;
use crate::error::{Error, Result};
use crate::linalg::{add_outer_upper, Cholesky};

const RANK_TOL: f64 = 1e-9;

/// Cumulative regression functions of Aalen's additive hazards model.
///
/// Column 0 is the baseline; column `j + 1` belongs to covariate `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AalenFit {
    /// Event times at which an increment was estimated.
    pub times: Vec<f64>,
    /// `dB(t_j)` for each entry of `times`.
    pub increments: Vec<Vec<f64>>,
    /// `B(t_j)`, the running sums of `increments`.
    pub cumulative: Vec<Vec<f64>>,
    /// Event times whose baseline was not identified; their increments are dropped.
    pub n_skipped: usize,
    /// Count of (event time, column) pairs where a linearly dependent column
    /// was given a zero increment.
    pub n_aliased: usize,
}

impl AalenFit {
    pub fn width(&self) -> usize {
        self.cumulative.first().map_or(0, Vec::len)
    }

    /// `B(t)`: the cumulative coefficients at the last event time `<= t`.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let i = self.times.partition_point(|&x| x <= t);
        if i == 0 {
            vec![0.0; self.width()]
        } else {
            self.cumulative[i - 1].clone()
        }
    }

    pub fn last_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }
}

/// Fits Aalen's additive model by weighted least squares at each event time:
/// `dB(t) = (XᵀWX)⁻¹ XᵀW dN(t)` over the rows at risk at `t`, with a leading
/// column of ones prepended to the row covariates.
///
/// Columns that are identically zero on the risk set get a zero increment, as
/// do columns that are linear combinations of earlier ones. An event time
/// where the baseline column itself is not identified is skipped.
pub fn fit_weighted_aalen(rows: &[IntervalRow]) -> Result<AalenFit> {
    const MODEL: &str = "Aalen model";
    let q = super::check_rows(MODEL, rows)?;
    let p = q + 1;
    let design = |r: &IntervalRow| -> Vec<f64> {
        let mut x = Vec::with_capacity(p);
        x.push(1.0);
        x.extend_from_slice(&r.covariates);
        x
    };
    let xs: Vec<Vec<f64>> = rows.iter().map(design).collect();
    let mut by_in: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].weight > 0.0).collect();
    by_in.sort_by(|&a, &b| rows[a].t_in.total_cmp(&rows[b].t_in));
    let mut by_out = by_in.clone();
    by_out.sort_by(|&a, &b| rows[a].t_out.total_cmp(&rows[b].t_out));

    let times = super::event_times(rows);
    let mut xtwx = vec![0.0; p * p];
    let mut nonzero = vec![0usize; p];
    let mut n_at_risk = 0usize;
    let (mut ii, mut io) = (0, 0);

    let mut fit = AalenFit {
        times: Vec::with_capacity(times.len()),
        increments: Vec::with_capacity(times.len()),
        cumulative: Vec::with_capacity(times.len()),
        n_skipped: 0,
        n_aliased: 0,
    };
    let mut running = vec![0.0; p];
    let mut sub = Vec::with_capacity(p * p);
    for &t in &times {
        while ii < by_in.len() && rows[by_in[ii]].t_in < t {
            let i = by_in[ii];
            add_outer_upper(&mut xtwx, &xs[i], rows[i].weight);
            for (c, v) in nonzero.iter_mut().zip(&xs[i]) {
                *c += usize::from(*v != 0.0);
            }
            n_at_risk += 1;
            ii += 1;
        }
        while io < by_out.len() && rows[by_out[io]].t_out < t {
            let i = by_out[io];
            add_outer_upper(&mut xtwx, &xs[i], -rows[i].weight);
            for (c, v) in nonzero.iter_mut().zip(&xs[i]) {
                *c -= usize::from(*v != 0.0);
            }
            n_at_risk -= 1;
            io += 1;
        }
        if n_at_risk == 0 {
            xtwx.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut rhs = vec![0.0; p];
        for &i in by_out[io..].iter().take_while(|&&i| rows[i].t_out == t) {
            if rows[i].event {
                for (a, v) in rhs.iter_mut().zip(&xs[i]) {
                    *a += rows[i].weight * v;
                }
            }
        }

        let mut active: Vec<usize> = (0..p).filter(|&j| nonzero[j] > 0).collect();
        let increment = loop {
            if active.first() != Some(&0) {
                break None;
            }
            let m = active.len();
            sub.clear();
            for &a in &active {
                for &b in &active {
                    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                    sub.push(xtwx[lo * p + hi]);
                }
            }
            match Cholesky::factor(&sub, m, RANK_TOL) {
                Ok(ch) => {
                    let mut b: Vec<f64> = active.iter().map(|&j| rhs[j]).collect();
                    ch.solve_in_place(&mut b);
                    let mut d = vec![0.0; p];
                    for (&j, v) in active.iter().zip(b) {
                        d[j] = v;
                    }
                    break Some(d);
                }
                Err(0) => break None,
                Err(k) => {
                    active.remove(k);
                    fit.n_aliased += 1;
                }
            }
        };
        match increment {
            Some(d) => {
                running.iter_mut().zip(&d).for_each(|(r, v)| *r += v);
                fit.times.push(t);
                fit.increments.push(d);
                fit.cumulative.push(running.clone());
            }
            None => fit.n_skipped += 1,
        }
    }
    if fit.times.is_empty() {
        return Err(Error::Estimation(format!(
            "{MODEL}: no event time had an identifiable increment"
        )));
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row(subject: usize, t: f64, event: bool, cov: Vec<f64>, weight: f64) -> IntervalRow {
        IntervalRow {
            subject,
            t_in: 0.0,
            t_out: t,
            event,
            covariates: cov,
            weight,
            stratum: 0,
        }
    }

    #[test]
    fn baseline_only_is_weighted_nelson_aalen() {
        let data = [(1.0, true, 2.0), (2.0, false, 1.0), (3.0, true, 0.5), (3.0, true, 1.5), (4.0, true, 1.0)];
        let rows: Vec<_> = data
            .iter()
            .enumerate()
            .map(|(i, &(t, e, w))| row(i, t, e, vec![], w))
            .collect();
        let fit = fit_weighted_aalen(&rows).unwrap();
        let na = [2.0 / 6.0, 2.0 / 6.0 + 2.0 / 3.0, 2.0 / 6.0 + 2.0 / 3.0 + 1.0];
        assert_eq!(fit.times, [1.0, 3.0, 4.0]);
        for (c, v) in fit.cumulative.iter().zip(na) {
            assert!((c[0] - v).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_hazards_recover_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rows: Vec<_> = (0..50000)
            .map(|i| {
                let a = i % 2 == 1;
                let h = if a { 0.16 } else { 0.2 };
                let t = -rng.random::<f64>().ln() / h;
                row(i, t.min(5.0), t < 5.0, vec![f64::from(u8::from(a))], 1.0)
            })
            .collect();
        let fit = fit_weighted_aalen(&rows).unwrap();
        let b = fit.at(5.0);
        assert!((b[1] + 0.2).abs() < 0.02, "{b:?}");
        assert!((b[0] - 1.0).abs() < 0.05, "{b:?}");
    }

    #[test]
    fn weight_scaling_leaves_b_unchanged() {
        let rows: Vec<_> = (0..30)
            .map(|i| {
                let x = (i % 3) as f64;
                row(i, 0.1 * (i as f64 + 1.0), i % 4 != 0, vec![x, (i % 2) as f64], 1.0 + (i % 5) as f64)
            })
            .collect();
        let a = fit_weighted_aalen(&rows).unwrap();
        let scaled: Vec<_> = rows.iter().map(|r| IntervalRow { weight: r.weight * 7.3, ..r.clone() }).collect();
        let b = fit_weighted_aalen(&scaled).unwrap();
        for (u, v) in a.cumulative.iter().zip(&b.cumulative) {
            for (x, y) in u.iter().zip(v) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn structural_zero_and_aliased_columns_get_zero_increments() {
        // column 0 is zero everywhere, column 1 duplicates the intercept
        let rows: Vec<_> = (0..6)
            .map(|i| row(i, 1.0 + i as f64, true, vec![0.0, 1.0, (i % 2) as f64], 1.0))
            .collect();
        let fit = fit_weighted_aalen(&rows).unwrap();
        assert!(fit.n_aliased > 0);
        for d in &fit.increments {
            assert_eq!(d[1], 0.0);
            assert_eq!(d[2], 0.0);
        }
    }

    #[test]
    fn delayed_entry_respects_risk_set() {
        let rows = vec![
            IntervalRow { t_in: 0.0, ..row(0, 1.0, false, vec![], 1.0) },
            IntervalRow { t_in: 1.0, ..row(0, 2.0, true, vec![], 1.0) },
            row(1, 1.5, true, vec![], 1.0),
            IntervalRow { t_in: 1.6, ..row(2, 3.0, true, vec![], 1.0) },
        ];
        let fit = fit_weighted_aalen(&rows).unwrap();
        let expect = [0.5, 0.5 + 0.5, 0.5 + 0.5 + 1.0];
        for (c, v) in fit.cumulative.iter().zip(expect) {
            assert!((c[0] - v).abs() < 1e-15);
        }
    }

    proptest! {
        /// With one binary covariate, the increments are the group-wise
        /// Nelson-Aalen jumps: baseline from group 0, covariate = group 1 minus group 0.
        #[test]
        fn binary_covariate_is_group_nelson_aalen(
            times in proptest::collection::vec(1u32..20, 2..=6),
            groups in proptest::collection::vec(any::<bool>(), 6),
            evs in proptest::collection::vec(any::<bool>(), 6),
        ) {
            let data: Vec<(f64, bool, bool)> = times.iter().enumerate()
                .map(|(i, &t)| (f64::from(t), evs[i] || i == 0, groups[i]))
                .collect();
            let rows: Vec<_> = data.iter().enumerate()
                .map(|(i, &(t, e, g))| row(i, t, e, vec![f64::from(u8::from(g))], 1.0))
                .collect();
            let fit = fit_weighted_aalen(&rows).unwrap();
            for (k, &t) in fit.times.iter().enumerate() {
                let count = |g: bool, f: &dyn Fn(&(f64, bool, bool)) -> bool| {
                    data.iter().filter(|d| d.2 == g && f(d)).count() as f64
                };
                let (y0, y1) = (count(false, &|d| d.0 >= t), count(true, &|d| d.0 >= t));
                let (d0, d1) = (count(false, &|d| d.0 == t && d.1), count(true, &|d| d.0 == t && d.1));
                let expect = match (y0 > 0.0, y1 > 0.0) {
                    (true, true) => [d0 / y0, d1 / y1 - d0 / y0],
                    (true, false) => [d0 / y0, 0.0],
                    (false, true) => [d1 / y1, 0.0],
                    (false, false) => unreachable!(),
                };
                prop_assert!((fit.increments[k][0] - expect[0]).abs() < 1e-12);
                prop_assert!((fit.increments[k][1] - expect[1]).abs() < 1e-12);
            }
        }
    }
}
