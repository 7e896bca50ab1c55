use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;

/// One follow-up interval of one subject in one emulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    /// Index of the subject in its cohort.
    pub subject: usize,
    /// Trial index `k`: the visit at which the trial starts.
    pub trial: usize,
    /// Treated at the trial-baseline visit.
    pub initiator: bool,
    /// Covariates at the trial-baseline visit.
    pub baseline_covariates: Vec<f64>,
    /// Follow-up interval index `j`; the row covers visit `k + j`.
    pub followup: usize,
    /// Interval `[s_in, s_out)` on the time-since-trial-start scale.
    pub s_in: f64,
    pub s_out: f64,
    pub event: bool,
    /// Follow-up stops after this row because treatment deviates from the
    /// trial arm at the next visit.
    pub artificially_censored: bool,
    pub weight: f64,
}

/// Expands a cohort into a sequence of emulated trials, one per visit.
///
/// A subject enters trial `k` when untreated at every visit before `k` and
/// still at risk at `k`. Follow-up runs until the event, the end of
/// observation, or the first later visit where treatment differs from the
/// trial-baseline treatment (artificial censoring). Rows are ordered by
/// subject, then trial, then follow-up.
pub fn expand_sequential_trials(cohort: &Cohort) -> Vec<TrialRow> {
    let mut rows = Vec::new();
    for (i, s) in cohort.subjects().iter().enumerate() {
        let last = s.n_visits() - 1;
        for k in 0..s.n_visits() {
            if k > 0 && s.treatment(k - 1) {
                break;
            }
            let a = s.treatment(k);
            let baseline = s.covariates(k).to_vec();
            for m in k..=last {
                let deviates_next = m < last && s.treatment(m + 1) != a;
                let t_out = if m == last { s.t_end } else { (m + 1) as f64 };
                rows.push(TrialRow {
                    subject: i,
                    trial: k,
                    initiator: a,
                    baseline_covariates: baseline.clone(),
                    followup: m - k,
                    s_in: (m - k) as f64,
                    s_out: t_out - k as f64,
                    event: m == last && s.status,
                    artificially_censored: deviates_next,
                    weight: 1.0,
                });
                if deviates_next {
                    break;
                }
            }
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{SubjectHistory, VisitRecord};

    fn subject(id: &str, treat: &[u8], t_end: f64, status: bool) -> SubjectHistory {
        SubjectHistory {
            id: id.into(),
            visits: treat
                .iter()
                .enumerate()
                .map(|(k, &a)| VisitRecord {
                    k,
                    treatment: a == 1,
                    covariates: vec![k as f64],
                })
                .collect(),
            t_end,
            status,
        }
    }

    fn cohort(s: Vec<SubjectHistory>) -> Cohort {
        Cohort::new(s, vec!["L".into()], 5.0).unwrap()
    }

    #[test]
    fn treated_from_start_is_only_an_initiator_in_trial_zero() {
        let rows = expand_sequential_trials(&cohort(vec![subject("a", &[1; 5], 5.0, false)]));
        assert!(rows.iter().all(|r| r.trial == 0 && r.initiator));
        assert_eq!(rows.len(), 5);
    }

    #[test]
    fn never_treated_survivor_enters_every_trial() {
        let rows = expand_sequential_trials(&cohort(vec![subject("a", &[0; 5], 5.0, false)]));
        let mut trials: Vec<_> = rows.iter().map(|r| r.trial).collect();
        trials.dedup();
        assert_eq!(trials, [0, 1, 2, 3, 4]);
        assert!(rows.iter().all(|r| !r.artificially_censored && !r.initiator));
        assert_eq!(rows.len(), 5 + 4 + 3 + 2 + 1);
        let last_of_trial_3: Vec<_> = rows.iter().filter(|r| r.trial == 3).map(|r| (r.s_in, r.s_out)).collect();
        assert_eq!(last_of_trial_3, [(0.0, 1.0), (1.0, 2.0)]);
    }

    #[test]
    fn deviation_censors_non_initiators() {
        let rows = expand_sequential_trials(&cohort(vec![subject("a", &[0, 0, 1, 1], 3.5, true)]));
        let t0: Vec<_> = rows.iter().filter(|r| r.trial == 0).collect();
        assert_eq!(t0.len(), 2);
        assert!(t0[1].artificially_censored && !t0[1].event);
        let t2: Vec<_> = rows.iter().filter(|r| r.trial == 2).collect();
        assert!(t2[0].initiator);
        assert_eq!((t2[1].s_in, t2[1].s_out, t2[1].event), (1.0, 1.5, true));
        assert!(rows.iter().all(|r| r.trial <= 2));
        assert_eq!(rows.iter().filter(|r| r.initiator && r.followup == 0).count(), 1);
    }
}
