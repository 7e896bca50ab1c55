//! Case-weighted logistic regression by iteratively reweighted least squares.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{add_outer_upper, dot, symmetrize_upper, Cholesky, Matrix};

pub const PROB_FLOOR: f64 = 1e-12;
const SCORE_TOL: f64 = 1e-8;
const REL_LOGLIK_TOL: f64 = 1e-10;
const MAX_ITER: usize = 100;
const SEPARATION_BOUND: f64 = 30.0;
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub n_iterations: usize,
    pub log_likelihood: f64,
}

impl LogisticFit {
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        dot(&self.coefficients, row)
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

fn inv_logit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
fn log1pexp(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Fitted probability `P(Y = 1 | row)`, clamped to `[1e-12, 1 - 1e-12]`.
pub fn predict_prob(fit: &LogisticFit, row: &[f64]) -> Result<f64> {
    if row.len() != fit.coefficients.len() {
        return Err(Error::InvalidArgument(format!(
            "design row has {} columns, fit has {}",
            row.len(),
            fit.coefficients.len()
        )));
    }
    Ok(clamp_prob(inv_logit(fit.linear_predictor(row))))
}

fn log_likelihood(x: &Matrix, y: &[bool], w: &[f64], beta: &[f64]) -> f64 {
    x.rows()
        .zip(y)
        .zip(w)
        .filter(|(_, &wi)| wi > 0.0)
        .map(|((r, &yi), &wi)| {
            let eta = dot(r, beta);
            // log p = -log(1+e^-eta), log(1-p) = -log(1+e^eta)
            -wi * if yi { log1pexp(-eta) } else { log1pexp(eta) }
        })
        .sum()
}

/// Maximizes the case-weighted Bernoulli log-likelihood of `y` given the
/// design `x` (include an intercept column explicitly).
pub fn fit_weighted_logistic(x: &Matrix, y: &[bool], w: &[f64]) -> Result<LogisticFit> {
    fit_logistic_labeled("logistic model", x, y, w)
}

pub(crate) fn fit_logistic_labeled(
    model: &str,
    x: &Matrix,
    y: &[bool],
    w: &[f64],
) -> Result<LogisticFit> {
    let (n, p) = (x.nrows(), x.ncols());
    if y.len() != n || w.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{model}: design has {n} rows but outcome has {} and weights {}",
            y.len(),
            w.len()
        )));
    }
    if w.iter().any(|&wi| !(wi >= 0.0) || !wi.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "{model}: case weights must be finite and non-negative"
        )));
    }
    let (mut w1, mut w0) = (0.0, 0.0);
    for (&yi, &wi) in y.iter().zip(w) {
        if yi {
            w1 += wi;
        } else {
            w0 += wi;
        }
    }
    if w1 <= 0.0 || w0 <= 0.0 {
        return Err(Error::Positivity(format!(
            "{model}: outcome class {} has no rows with positive weight",
            u8::from(w1 <= 0.0)
        )));
    }
    if p == 0 {
        return Ok(LogisticFit {
            coefficients: vec![],
            converged: true,
            n_iterations: 0,
            log_likelihood: log_likelihood(x, y, w, &[]),
        });
    }

    // Rank check on XᵀWX before iterating, so dependence is reported by column.
    let mut xtwx = vec![0.0; p * p];
    for (r, &wi) in x.rows().zip(w) {
        if wi > 0.0 {
            add_outer_upper(&mut xtwx, r, wi);
        }
    }
    symmetrize_upper(&mut xtwx, p);
    if let Err(column) = Cholesky::factor(&xtwx, p, RANK_TOL) {
        return Err(Error::SingularDesign {
            model: model.to_string(),
            column,
        });
    }

    let mut beta = vec![0.0; p];
    let mut ll = log_likelihood(x, y, w, &beta);
    let mut info = vec![0.0; p * p];
    let mut score = vec![0.0; p];
    let mut max_score = f64::INFINITY;
    // A vanishing score alone is not enough: under separation the score
    // decays while the coefficients keep drifting by O(1) per step.
    let mut last_step = 0.0_f64;
    for iter in 0..MAX_ITER {
        info.iter_mut().for_each(|v| *v = 0.0);
        score.iter_mut().for_each(|v| *v = 0.0);
        for ((r, &yi), &wi) in x.rows().zip(y).zip(w) {
            if wi == 0.0 {
                continue;
            }
            let pi = inv_logit(dot(r, &beta));
            let resid = f64::from(u8::from(yi)) - pi;
            for (s, &xj) in score.iter_mut().zip(r) {
                *s += wi * resid * xj;
            }
            add_outer_upper(&mut info, r, wi * pi * (1.0 - pi));
        }
        max_score = score.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
        let score_converged = max_score <= SCORE_TOL && last_step < 1e-4;
        if !score_converged {
            if let Some(column) = diverging(&beta) {
                return Err(Error::Separation {
                    model: model.to_string(),
                    column,
                });
            }
        }
        symmetrize_upper(&mut info, p);
        let chol = match Cholesky::factor(&info, p, 1e-14) {
            Ok(c) => c,
            // fitted probabilities have collapsed onto 0/1
            Err(column) => {
                return Err(Error::Separation {
                    model: model.to_string(),
                    column: diverging_or(&beta, column),
                })
            }
        };
        let mut step = score.clone();
        chol.solve_in_place(&mut step);
        if score_converged {
            // one last Newton step so the answer does not depend on where
            // the absolute tolerance happened to cut the iteration
            beta.iter_mut().zip(&step).for_each(|(b, d)| *b += d);
            return Ok(LogisticFit {
                log_likelihood: log_likelihood(x, y, w, &beta),
                coefficients: beta,
                converged: true,
                n_iterations: iter + 1,
            });
        }

        let mut scale = 1.0;
        let mut candidate: Vec<f64>;
        let mut ll_new;
        loop {
            candidate = beta.iter().zip(&step).map(|(b, d)| b + scale * d).collect();
            ll_new = log_likelihood(x, y, w, &candidate);
            if ll_new >= ll - 1e-12 * ll.abs() || scale < 1e-10 {
                break;
            }
            scale *= 0.5;
        }
        let rel_change = (ll_new - ll).abs() / (ll.abs() + 1e-300);
        last_step = step.iter().fold(0.0_f64, |m, d| m.max((scale * d).abs()));
        beta = candidate;
        ll = ll_new;
        if rel_change <= REL_LOGLIK_TOL && last_step < 1e-9 {
            if let Some(column) = diverging(&beta) {
                return Err(Error::Separation {
                    model: model.to_string(),
                    column,
                });
            }
            return Ok(LogisticFit {
                coefficients: beta,
                converged: true,
                n_iterations: iter + 1,
                log_likelihood: ll,
            });
        }
    }
    if let Some(column) = diverging(&beta) {
        return Err(Error::Separation {
            model: model.to_string(),
            column,
        });
    }
    Err(Error::NonConvergence {
        model: model.to_string(),
        iterations: MAX_ITER,
        max_score,
    })
}

fn diverging(beta: &[f64]) -> Option<usize> {
    let (j, b) = beta
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))?;
    (b.abs() > SEPARATION_BOUND).then_some(j)
}

fn diverging_or(beta: &[f64], fallback: usize) -> usize {
    diverging(beta).unwrap_or(fallback)
}
