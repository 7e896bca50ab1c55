//! Exact non-parametric estimators for two visits with a binary covariate,
//! binary treatment and binary outcome per period.
//!
//! Counts follow the causal tree: `L₀ → A₀ → Y₁`, and for survivors
//! `L₁ → A₁ → Y₂`. Every estimator is written out from the tree counts and
//! shares no code with the model-based pipelines.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One subject of a two-period study. Values must be 0 or 1; `l1`, `a1` and
/// `y2` are ignored when `y1 = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoPeriodRecord {
    pub l0: u8,
    pub a0: u8,
    pub y1: u8,
    pub l1: u8,
    pub a1: u8,
    pub y2: u8,
}

/// Leaf counts of the causal tree. Inner counts are sums of leaves, so every
/// level sums to its parent by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TreeCounts {
    /// `n^1_{l₀a₀}`, indexed `[l0][a0]`.
    pub died_first: [[u64; 2]; 2],
    /// Survivors of period 1 by path, indexed `[l0][a0][l1][a1][y2]`.
    pub survivors: [[[[[u64; 2]; 2]; 2]; 2]; 2],
}

fn bit(field: &str, v: u8, i: usize) -> Result<usize> {
    match v {
        0 | 1 => Ok(usize::from(v)),
        _ => Err(Error::InvalidArgument(format!("record {i}: {field} = {v} is not binary"))),
    }
}

/// Tabulates records into tree counts.
pub fn tree_counts(records: &[TwoPeriodRecord]) -> Result<TreeCounts> {
    let mut c = TreeCounts::default();
    for (i, r) in records.iter().enumerate() {
        let (l0, a0, y1) = (bit("l0", r.l0, i)?, bit("a0", r.a0, i)?, bit("y1", r.y1, i)?);
        if y1 == 1 {
            c.died_first[l0][a0] += 1;
        } else {
            let (l1, a1, y2) = (bit("l1", r.l1, i)?, bit("a1", r.a1, i)?, bit("y2", r.y2, i)?);
            c.survivors[l0][a0][l1][a1][y2] += 1;
        }
    }
    Ok(c)
}

impl TreeCounts {
    /// Random lattice with every leaf in `1..=max_leaf`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_leaf: u64) -> Self {
        let mut c = Self::default();
        for l0 in 0..2 {
            for a0 in 0..2 {
                c.died_first[l0][a0] = rng.random_range(1..=max_leaf);
                for l1 in 0..2 {
                    for a1 in 0..2 {
                        for y2 in 0..2 {
                            c.survivors[l0][a0][l1][a1][y2] = rng.random_range(1..=max_leaf);
                        }
                    }
                }
            }
        }
        c
    }

    pub fn n(&self) -> f64 {
        (0..2).map(|l0| self.n_l0(l0)).sum()
    }

    /// `n_{l₀}`
    pub fn n_l0(&self, l0: usize) -> f64 {
        (0..2).map(|a0| self.n_l0a(l0, a0)).sum()
    }

    /// `n_{l₀a₀}`
    pub fn n_l0a(&self, l0: usize, a0: usize) -> f64 {
        self.died_first[l0][a0] as f64 + self.n0_l0a(l0, a0)
    }

    /// `n^0_{l₀a₀}`: survivors of period 1.
    pub fn n0_l0a(&self, l0: usize, a0: usize) -> f64 {
        (0..2).map(|l1| self.n0_l0a_l1(l0, a0, l1)).sum()
    }

    /// `n^0_{l₀a₀,l₁}`
    pub fn n0_l0a_l1(&self, l0: usize, a0: usize, l1: usize) -> f64 {
        (0..2).map(|a1| self.n0_l0a_l1a(l0, a0, l1, a1)).sum()
    }

    /// `n^0_{l₀a₀,l₁a₁}`
    pub fn n0_l0a_l1a(&self, l0: usize, a0: usize, l1: usize, a1: usize) -> f64 {
        let s = self.survivors[l0][a0][l1][a1];
        (s[0] + s[1]) as f64
    }

    /// `n^{00}_{l₀a₀,l₁a₁}`: survivors of both periods.
    pub fn n00_l0a_l1a(&self, l0: usize, a0: usize, l1: usize, a1: usize) -> f64 {
        self.survivors[l0][a0][l1][a1][0] as f64
    }
}

fn positive(v: f64, what: impl FnOnce() -> String) -> Result<f64> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(Error::Positivity(format!("empty stratum {}", what())))
    }
}

fn check_a(a: u8) -> Result<usize> {
    bit("a", a, 0)
}

/// IPW estimate of `Pr(Y₁^{a₀=a} = 0)`:
/// `(1/n) Σ_{l₀} n^0_{l₀a} (n_{l₀a}/n_{l₀})⁻¹`.
pub fn np_msm_surv1(c: &TreeCounts, a: u8) -> Result<f64> {
    let a = check_a(a)?;
    let n = positive(c.n(), || "n".into())?;
    let mut sum = 0.0;
    for l0 in 0..2 {
        let n_l0 = positive(c.n_l0(l0), || format!("n_{{l0={l0}}}"))?;
        let n_l0a = positive(c.n_l0a(l0, a), || format!("n_{{l0={l0},a0={a}}}"))?;
        sum += c.n0_l0a(l0, a) / (n_l0a / n_l0);
    }
    Ok(sum / n)
}

/// Standardized trial-0 estimate of `Pr(Y₁^{a₀=a} = 0)`:
/// `Σ_{l₀} (n^0_{l₀a}/n_{l₀a}) (n_{l₀}/n)`.
pub fn np_seq_surv1(c: &TreeCounts, a: u8) -> Result<f64> {
    let a = check_a(a)?;
    let n = positive(c.n(), || "n".into())?;
    let mut sum = 0.0;
    for l0 in 0..2 {
        let n_l0a = positive(c.n_l0a(l0, a), || format!("n_{{l0={l0},a0={a}}}"))?;
        sum += (c.n0_l0a(l0, a) / n_l0a) * (c.n_l0(l0) / n);
    }
    Ok(sum)
}

/// Trial-1 survival ratio for baseline `l₁`:
/// `(n^{00}_{00,l₁a} + n^{00}_{10,l₁a}) / (n^0_{00,l₁a} + n^0_{10,l₁a})`.
fn trial1_ratio(c: &TreeCounts, a: usize, l1: usize) -> Result<f64> {
    let den = positive(c.n0_l0a_l1a(0, 0, l1, a) + c.n0_l0a_l1a(1, 0, l1, a), || {
        format!("n^0_{{00,{l1}{a}}} + n^0_{{10,{l1}{a}}}")
    })?;
    Ok((c.n00_l0a_l1a(0, 0, l1, a) + c.n00_l0a_l1a(1, 0, l1, a)) / den)
}

/// Trial-1 estimate of `Pr(Y₂^{a₁=a} = 0 | Y₁ = 0, A₀ = 0)`, standardized to
/// the trial-1 distribution of `L₁`.
pub fn np_trial1_surv(c: &TreeCounts, a: u8) -> Result<f64> {
    let a = check_a(a)?;
    let total = positive(c.n0_l0a(0, 0) + c.n0_l0a(1, 0), || "n^0_{00} + n^0_{10}".into())?;
    let mut sum = 0.0;
    for l1 in 0..2 {
        sum += trial1_ratio(c, a, l1)? * ((c.n0_l0a_l1(0, 0, l1) + c.n0_l0a_l1(1, 0, l1)) / total);
    }
    Ok(sum)
}

/// Trial-1 estimate standardized to the time-0 distribution of `L₀`:
/// the ratio at `l₁ = l` weighted by `n_l / n`.
pub fn np_trial1_standardized(c: &TreeCounts, a: u8) -> Result<f64> {
    let a = check_a(a)?;
    let n = positive(c.n(), || "n".into())?;
    let mut sum = 0.0;
    for l in 0..2 {
        sum += trial1_ratio(c, a, l)? * (c.n_l0(l) / n);
    }
    Ok(sum)
}

/// IPW estimate of `Pr(Y₂^{ā₁=a} = 0)`: `(1/n) Σ_{l₀,l₁} n^{00}_{l₀a,l₁a}
/// (n_{l₀a}/n_{l₀})⁻¹ (n^0_{l₀a,l₁a}/n^0_{l₀a,l₁})⁻¹`.
pub fn np_msm_surv2(c: &TreeCounts, a: u8) -> Result<f64> {
    let a = check_a(a)?;
    let n = positive(c.n(), || "n".into())?;
    let mut sum = 0.0;
    for l0 in 0..2 {
        let n_l0 = positive(c.n_l0(l0), || format!("n_{{l0={l0}}}"))?;
        let n_l0a = positive(c.n_l0a(l0, a), || format!("n_{{l0={l0},a0={a}}}"))?;
        for l1 in 0..2 {
            let n_l1 = positive(c.n0_l0a_l1(l0, a, l1), || format!("n^0_{{{l0}{a},{l1}}}"))?;
            let n_l1a = positive(c.n0_l0a_l1a(l0, a, l1, a), || format!("n^0_{{{l0}{a},{l1}{a}}}"))?;
            sum += c.n00_l0a_l1a(l0, a, l1, a) / (n_l0a / n_l0) / (n_l1a / n_l1);
        }
    }
    Ok(sum / n)
}

/// Sequential estimate of `Pr(Y₂^{ā₁=a} = 0)`: per `l₀`, the IPACW-weighted
/// second-period survival among period-1 survivors times the trial-0
/// first-period survival `n^0_{l₀a}/n_{l₀a}`, standardized by `n_{l₀}/n`.
pub fn np_seq_surv2(c: &TreeCounts, a: u8) -> Result<f64> {
    let a = check_a(a)?;
    let n = positive(c.n(), || "n".into())?;
    let mut sum = 0.0;
    for l0 in 0..2 {
        let n_l0a = positive(c.n_l0a(l0, a), || format!("n_{{l0={l0},a0={a}}}"))?;
        let n0 = positive(c.n0_l0a(l0, a), || format!("n^0_{{{l0}{a}}}"))?;
        let mut inner = 0.0;
        for l1 in 0..2 {
            let n_l1 = positive(c.n0_l0a_l1(l0, a, l1), || format!("n^0_{{{l0}{a},{l1}}}"))?;
            let n_l1a = positive(c.n0_l0a_l1a(l0, a, l1, a), || format!("n^0_{{{l0}{a},{l1}{a}}}"))?;
            inner += c.n00_l0a_l1a(l0, a, l1, a) / (n_l1a / n_l1);
        }
        let cond2 = inner / n0;
        sum += cond2 * (n0 / n_l0a) * (c.n_l0(l0) / n);
    }
    Ok(sum)
}

/// Binomial variance `p(1-p)/m` of a proportion from `m` subjects.
pub fn binomial_variance(p: f64, m: f64) -> f64 {
    p * (1.0 - p) / m
}

/// Inverse-variance weighted mean of `(estimate, variance)` pairs.
/// Illustrative: treats the estimates as independent.
pub fn inverse_variance_combination(estimates: &[(f64, f64)]) -> Result<f64> {
    if estimates.is_empty() || estimates.iter().any(|&(_, v)| !(v > 0.0)) {
        return Err(Error::InvalidArgument("inverse-variance combination needs positive variances".into()));
    }
    let (num, den) = estimates
        .iter()
        .fold((0.0, 0.0), |(n, d), &(e, v)| (n + e / v, d + 1.0 / v));
    Ok(num / den)
}
