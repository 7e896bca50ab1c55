//! Shared fixtures for the benchmarks.

use seqtrials::cohort::to_interval_rows;
use seqtrials::simgen::{generate_cohort, ScenarioParams};
use seqtrials::{Cohort, IntervalRow, Matrix};

/// A scenario-1 cohort of `n` subjects.
pub fn cohort(n: usize, seed: u64) -> Cohort {
    generate_cohort(&ScenarioParams::scenario(1).unwrap(), n, seed).unwrap().0
}

/// Person-visit rows with current treatment and covariate as regressors.
pub fn interval_rows(c: &Cohort) -> Vec<IntervalRow> {
    to_interval_rows(c, |s, k| vec![f64::from(u8::from(s.treatment(k))), s.covariates(k)[0]])
}

/// Treatment-model design among not-yet-treated visits: intercept and `L_k`.
pub fn treatment_design(c: &Cohort) -> (Matrix, Vec<bool>, Vec<f64>) {
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for s in c.subjects() {
        for k in 0..s.n_visits() {
            if s.treated_before(k) {
                break;
            }
            rows.push([1.0, s.covariates(k)[0]]);
            y.push(s.treatment(k));
        }
    }
    let w = vec![1.0; y.len()];
    (Matrix::from_rows(&rows), y, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_consistent() {
        let c = cohort(200, 1);
        let (x, y, w) = treatment_design(&c);
        assert_eq!(x.nrows(), y.len());
        assert_eq!(w.len(), y.len());
        assert!(interval_rows(&c).len() >= c.len());
    }
}
