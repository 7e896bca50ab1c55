//! Saturated pipeline fits on two-period binary data reproduce the exact
//! tree-count estimators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqtrials::estimators::{
    run_msm_iptw, run_sequential_trials, Family, MsmSpec, SequentialOptions, StandardizationPopulation, TreatmentForm,
    TrialSelection, WeightOptions,
};
use seqtrials::oracle::{self, TwoPeriodRecord};
use seqtrials::survfit::SurvivalTransform;
use seqtrials::weights::{Conditioning, DesignBuilder, WeightModelSpec};
use seqtrials::{Cohort, SubjectHistory, VisitRecord};

const TOL: f64 = 1e-10;

fn records(n: usize, seed: u64) -> Vec<TwoPeriodRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = |p: f64| u8::from(rng.random::<f64>() < p);
    (0..n)
        .map(|_| {
            let l0 = b(0.4);
            let a0 = b(0.3 + 0.3 * f64::from(l0));
            let y1 = b(0.2 + 0.1 * f64::from(l0) - 0.05 * f64::from(a0));
            let l1 = b(0.3 + 0.4 * f64::from(l0) - 0.1 * f64::from(a0));
            // treatment is absorbing
            let a1 = if a0 == 1 { 1 } else { b(0.25 + 0.35 * f64::from(l1)) };
            let y2 = b(0.15 + 0.1 * f64::from(l1) - 0.05 * f64::from(a1));
            TwoPeriodRecord { l0, a0, y1, l1, a1, y2 }
        })
        .collect()
}

fn to_cohort(recs: &[TwoPeriodRecord]) -> Cohort {
    let subjects = recs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut visits = vec![VisitRecord {
                k: 0,
                treatment: r.a0 == 1,
                covariates: vec![f64::from(r.l0)],
            }];
            let (t_end, status) = if r.y1 == 1 {
                (1.0, true)
            } else {
                visits.push(VisitRecord {
                    k: 1,
                    treatment: r.a1 == 1,
                    covariates: vec![f64::from(r.l1)],
                });
                (2.0, r.y2 == 1)
            };
            SubjectHistory {
                id: format!("{i:05}"),
                visits,
                t_end,
                status,
            }
        })
        .collect();
    Cohort::new(subjects, vec!["L".into()], 2.0).unwrap()
}

/// Treatment model saturated in the observed history at each visit.
fn saturated_iptw() -> WeightModelSpec {
    let den = DesignBuilder::custom("saturated history", &[Conditioning::History], |s, ctx| {
        let l0 = s.covariates(0)[0];
        if ctx.visit == 0 {
            vec![1.0, l0, 0.0, 0.0, 0.0, 0.0]
        } else {
            let l1 = s.covariates(1)[0];
            vec![0.0, 0.0, 1.0, l0, l1, l0 * l1]
        }
    });
    WeightModelSpec::new(Some(DesignBuilder::per_time_intercepts(2)), den).unwrap()
}

/// Artificial-censoring model saturated in trial-baseline and current covariates.
fn saturated_ipacw() -> WeightModelSpec {
    let den = DesignBuilder::custom("saturated baseline and current", &[Conditioning::History], |s, ctx| {
        let lk = s.covariates(ctx.origin)[0];
        let lm = s.covariates(ctx.visit)[0];
        vec![1.0, lk, lm, lk * lm]
    });
    WeightModelSpec::new(Some(DesignBuilder::per_time_origin(2, vec![0])), den).unwrap()
}

fn check(seed: u64) {
    let recs = records(3000, seed);
    let counts = oracle::tree_counts(&recs).unwrap();
    let cohort = to_cohort(&recs);

    let msm = MsmSpec::new(Family::Aalen, TreatmentForm::PerVisit, vec![], vec![1.0, 2.0])
        .with_transform(SurvivalTransform::ProductLimit);
    let iptw = run_msm_iptw(&cohort, &msm, &WeightOptions::treatment(saturated_iptw())).unwrap();

    let seq_msm = MsmSpec::new(Family::Aalen, TreatmentForm::Current, vec![0], vec![1.0, 2.0])
        .with_interactions(true)
        .with_transform(SurvivalTransform::ProductLimit);
    let trial0 = SequentialOptions {
        trials: TrialSelection::Only(vec![0]),
        ..SequentialOptions::default()
    };
    let seq = run_sequential_trials(&cohort, &seq_msm, &WeightOptions::treatment(saturated_ipacw()), &trial0).unwrap();

    let t1_msm = MsmSpec { horizons: vec![1.0], ..seq_msm.clone() };
    let mut trial1 = SequentialOptions {
        trials: TrialSelection::Only(vec![1]),
        population: StandardizationPopulation::Trial(1),
        ..SequentialOptions::default()
    };
    let t1 = run_sequential_trials(&cohort, &t1_msm, &WeightOptions::treatment(saturated_ipacw()), &trial1).unwrap();
    trial1.population = StandardizationPopulation::Custom(recs.iter().map(|r| vec![f64::from(r.l0)]).collect());
    let t1_std = run_sequential_trials(&cohort, &t1_msm, &WeightOptions::treatment(saturated_ipacw()), &trial1).unwrap();

    for a in [0u8, 1] {
        let (m, s, t, ts) = if a == 1 {
            (&iptw.results.s1, &seq.results.s1, &t1.results.s1, &t1_std.results.s1)
        } else {
            (&iptw.results.s0, &seq.results.s0, &t1.results.s0, &t1_std.results.s0)
        };
        let e15 = oracle::np_msm_surv1(&counts, a).unwrap();
        let e16 = oracle::np_seq_surv1(&counts, a).unwrap();
        let e20 = oracle::np_msm_surv2(&counts, a).unwrap();
        let e23 = oracle::np_seq_surv2(&counts, a).unwrap();
        assert!((m[0] - e15).abs() < TOL, "a={a}: {} vs {e15}", m[0]);
        assert!((m[1] - e20).abs() < TOL, "a={a}: {} vs {e20}", m[1]);
        assert!((s[0] - e16).abs() < TOL, "a={a}: {} vs {e16}", s[0]);
        assert!((s[1] - e23).abs() < TOL, "a={a}: {} vs {e23}", s[1]);
        let e17 = oracle::np_trial1_surv(&counts, a).unwrap();
        let e18 = oracle::np_trial1_standardized(&counts, a).unwrap();
        assert!((t[0] - e17).abs() < TOL, "a={a}: {} vs {e17}", t[0]);
        assert!((ts[0] - e18).abs() < TOL, "a={a}: {} vs {e18}", ts[0]);
    }
}

#[test]
fn saturated_pipelines_match_tree_estimators() {
    for seed in 1..=5 {
        check(seed);
    }
}
