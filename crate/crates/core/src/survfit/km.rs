use crate::cohort::IntervalRow;
use crate::error::{Error, Result};

use super::curve::SurvivalCurve;

/// Product-limit estimator from `(time, event)` pairs.
pub fn kaplan_meier(data: &[(f64, bool)]) -> Result<SurvivalCurve> {
    let weighted: Vec<_> = data.iter().map(|&(t, e)| (t, e, 1.0)).collect();
    kaplan_meier_weighted(&weighted)
}

/// Product-limit estimator from `(time, event, weight)` triples.
pub fn kaplan_meier_weighted(data: &[(f64, bool, f64)]) -> Result<SurvivalCurve> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("Kaplan-Meier: empty input".into()));
    }
    let mut sorted: Vec<_> = data.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut at_risk: f64 = sorted.iter().map(|d| d.2).sum();
    let mut times = vec![0.0];
    let mut surv = vec![1.0];
    let mut s = 1.0;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        let (mut d, mut leaving) = (0.0, 0.0);
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                d += sorted[i].2;
            }
            leaving += sorted[i].2;
            i += 1;
        }
        if d > 0.0 && at_risk > 0.0 {
            s *= 1.0 - d / at_risk;
            times.push(t);
            surv.push(s);
        }
        at_risk -= leaving;
    }
    Ok(SurvivalCurve::from_steps(times, surv))
}

/// Product-limit estimator on counting-process rows, allowing delayed entry.
pub fn kaplan_meier_rows(rows: &[IntervalRow]) -> Result<SurvivalCurve> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("Kaplan-Meier: empty input".into()));
    }
    let times = super::event_times(rows);
    let mut by_in: Vec<&IntervalRow> = rows.iter().collect();
    by_in.sort_by(|a, b| a.t_in.total_cmp(&b.t_in));
    let mut by_out: Vec<&IntervalRow> = rows.iter().collect();
    by_out.sort_by(|a, b| a.t_out.total_cmp(&b.t_out));
    let (mut ii, mut io) = (0, 0);
    let mut risk = 0.0;
    let mut s = 1.0;
    let mut out_t = vec![0.0];
    let mut out_s = vec![1.0];
    for &t in &times {
        while ii < by_in.len() && by_in[ii].t_in < t {
            risk += by_in[ii].weight;
            ii += 1;
        }
        let mut d = 0.0;
        while io < by_out.len() && by_out[io].t_out < t {
            risk -= by_out[io].weight;
            io += 1;
        }
        for r in by_out[io..].iter().take_while(|r| r.t_out == t) {
            if r.event {
                d += r.weight;
            }
        }
        if risk > 0.0 {
            s *= 1.0 - d / risk;
        }
        out_t.push(t);
        out_s.push(s);
    }
    Ok(SurvivalCurve::from_steps(out_t, out_s))
}
