use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::weights::nearest_rank;

use super::{run_msm_iptw, run_sequential_trials, Bands, MarginalResults, MsmSpec, PipelineOutput, SequentialOptions, WeightOptions};

/// Largest share of bootstrap replicates allowed to fail.
const MAX_FAILED_SHARE: f64 = 0.2;

/// A complete analysis that can be rerun on resampled data.
#[derive(Debug, Clone)]
pub enum Pipeline {
    MsmIptw {
        msm: MsmSpec,
        weights: WeightOptions,
    },
    Sequential {
        msm: MsmSpec,
        weights: WeightOptions,
        options: SequentialOptions,
    },
}

impl Pipeline {
    pub fn run(&self, cohort: &Cohort) -> Result<PipelineOutput> {
        match self {
            Pipeline::MsmIptw { msm, weights } => run_msm_iptw(cohort, msm, weights),
            Pipeline::Sequential { msm, weights, options } => run_sequential_trials(cohort, msm, weights, options),
        }
    }
}

/// Draws subjects with replacement. Copies get ids `"{id}#{draw}"`.
pub fn resample_cohort<R: Rng + ?Sized>(cohort: &Cohort, rng: &mut R) -> Result<Cohort> {
    let subjects = cohort.subjects();
    let n = subjects.len();
    let draws = (0..n)
        .map(|d| {
            let mut s = subjects[rng.random_range(0..n)].clone();
            s.id = format!("{}#{d}", s.id);
            s
        })
        .collect();
    Cohort::new(draws, cohort.covariate_names().to_vec(), cohort.tau_max())
}

/// Point estimates on `cohort` with nonparametric bootstrap 95% percentile
/// bands from `b` subject-level resamples.
///
/// Replicate `r` uses a ChaCha8 stream `r` seeded with `seed`, so results do
/// not depend on the number of threads. Failed replicates are dropped; more
/// than 20% failures is an error.
pub fn bootstrap_ci(cohort: &Cohort, pipeline: &Pipeline, b: usize, seed: u64) -> Result<MarginalResults> {
    if b == 0 {
        return Err(Error::InvalidArgument("bootstrap needs at least one replicate".into()));
    }
    let mut point = pipeline.run(cohort)?.results;
    let reps: Vec<Option<MarginalResults>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            resample_cohort(cohort, &mut rng)
                .and_then(|c| pipeline.run(&c))
                .ok()
                .map(|o| o.results)
        })
        .collect();
    let ok: Vec<MarginalResults> = reps.into_iter().flatten().collect();
    let n_failed = b - ok.len();
    if ok.is_empty() || n_failed as f64 > MAX_FAILED_SHARE * b as f64 {
        return Err(Error::Estimation(format!("{n_failed} of {b} bootstrap replicates failed")));
    }
    let h = point.horizons.len();
    let band = |get: &dyn Fn(&MarginalResults) -> &Vec<f64>| -> (Vec<f64>, Vec<f64>) {
        (0..h)
            .map(|i| {
                let mut v: Vec<f64> = ok.iter().map(|r| get(r)[i]).collect();
                v.sort_by(f64::total_cmp);
                (nearest_rank(&v, 2.5), nearest_rank(&v, 97.5))
            })
            .unzip()
    };
    let (rd_lo, rd_hi) = band(&|r| &r.rd);
    let (s1_lo, s1_hi) = band(&|r| &r.s1);
    let (s0_lo, s0_hi) = band(&|r| &r.s0);
    point.bands = Some(Bands {
        level: 0.95,
        rd_lo,
        rd_hi,
        s1_lo,
        s1_hi,
        s0_lo,
        s0_hi,
        n_replicates: ok.len(),
        n_failed,
    });
    Ok(point)
}
