use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use seqtrials::estimators::{bootstrap_ci, Pipeline, SequentialOptions};
use seqtrials::oracle::{self, TreeCounts, TwoPeriodRecord};
use seqtrials::simgen::{generate_truth, run_scenario, Method, SimulationSettings};
use seqtrials::{load_cohort, Cohort, MarginalResults, PipelineOutput};

use crate::config::{AnalyzeConfig, OracleConfig, RunConfig, SimulateConfig, Summary, TruthConfig};
use crate::error::CliError;
use crate::svg::render_curves;

pub const VERSION: &str = env!("SEQTRIALS_VERSION");

pub fn run(config: &RunConfig) -> Result<(), CliError> {
    let start = Instant::now();
    let details = match config {
        RunConfig::Simulate(c) => simulate(c)?,
        RunConfig::Analyze(c) => analyze(c)?,
        RunConfig::Truth(c) => truth(c)?,
        RunConfig::Oracle(c) => return oracle(c),
    };
    let out_dir = match config {
        RunConfig::Simulate(c) => &c.out_dir,
        RunConfig::Analyze(c) => &c.out_dir,
        RunConfig::Truth(c) => &c.out_dir,
        RunConfig::Oracle(_) => unreachable!(),
    };
    let summary = Summary {
        version: VERSION.to_string(),
        config: config.clone(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        details,
    };
    fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    eprintln!("{}: wrote results to {}", config.name(), out_dir.display());
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn simulate(c: &SimulateConfig) -> Result<serde_json::Value, CliError> {
    c.params.validate()?;
    fs::create_dir_all(&c.out_dir)?;
    let horizons = seqtrials::simgen::default_horizons(&c.params);
    let truth = generate_truth(&c.params, c.truth_n, &horizons, c.truth_seed)?;
    let settings = SimulationSettings {
        n: c.n,
        reps: c.reps,
        methods: c.methods.clone(),
        family: c.family,
        transform: c.transform,
        truncate: c.truncate,
        seed: c.seed,
    };
    let table = run_scenario(&c.params, &settings, &truth)?;
    table.write_csv(create(&c.out_dir, "performance.csv")?)?;
    table.write_weight_csv(create(&c.out_dir, "weights_diag.csv")?)?;
    truth.write_csv(create(&c.out_dir, "truth.csv")?)?;
    let failures: Vec<_> = table
        .runs
        .iter()
        .map(|r| json!({ "method": r.method.label(), "failed_reps": r.failures.len() }))
        .collect();
    Ok(json!({
        "clamped_hazard_rate": table.clamp.rate(),
        "failures": failures,
        "variance_ratio": table.variance_ratio(),
    }))
}

fn pipeline_for(method: Method, cohort: &Cohort, c: &AnalyzeConfig) -> Pipeline {
    let covariates = (0..cohort.n_covariates()).collect();
    let (mut msm, weights) = method.specs_for(cohort.n_visit_slots(), covariates, c.family, c.horizons.clone());
    if let Some(form) = c.form {
        msm.treatment_form = form;
    }
    let msm = msm.with_transform(c.transform);
    let weights = weights.with_truncation(c.truncate);
    match method {
        Method::MsmIptw | Method::MsmIptwL0 => Pipeline::MsmIptw { msm, weights },
        Method::Sequential => Pipeline::Sequential {
            msm,
            weights,
            options: SequentialOptions::default(),
        },
    }
}

fn analyze(c: &AnalyzeConfig) -> Result<serde_json::Value, CliError> {
    if c.bootstrap > 0 && c.seed.is_none() {
        return Err(CliError::usage("--seed is required when --bootstrap is positive"));
    }
    if c.horizons.iter().any(|&t| t > c.tau_max) {
        return Err(CliError::usage(format!("horizons must not exceed tau-max {}", c.tau_max)));
    }
    let cohort = load_cohort(&c.visits, &c.subjects, c.tau_max)?;
    let mut runs: Vec<(Method, PipelineOutput)> = Vec::new();
    for &m in &c.methods {
        let pipeline = pipeline_for(m, &cohort, c);
        let mut out = pipeline.run(&cohort)?;
        if let (true, Some(seed)) = (c.bootstrap > 0, c.seed) {
            out.results.bands = bootstrap_ci(&cohort, &pipeline, c.bootstrap, seed)?.bands;
        }
        runs.push((m, out));
    }
    fs::create_dir_all(&c.out_dir)?;
    write_curves(create(&c.out_dir, "curves.csv")?, &runs)?;
    write_diagnostics(create(&c.out_dir, "weights_diag.csv")?, &runs)?;
    let labelled: Vec<(String, &MarginalResults)> = runs.iter().map(|(m, o)| (m.label().to_string(), &o.results)).collect();
    fs::write(c.out_dir.join("curves.svg"), render_curves(&labelled, c.tau_max))?;
    let per_method: Vec<_> = runs
        .iter()
        .map(|(m, o)| {
            json!({
                "method": m.label(),
                "rows": o.n_rows,
                "population": o.results.population,
                "flags": o.results.s1_curve.flags.merge(o.results.s0_curve.flags),
                "failed_replicates": o.results.bands.as_ref().map(|b| b.n_failed),
            })
        })
        .collect();
    Ok(json!({ "subjects": cohort.len(), "methods": per_method }))
}

/// `method,tau,S1,S0,RD`, followed by `S1_lo,S1_hi,S0_lo,S0_hi,RD_lo,RD_hi`
/// when bootstrap bands were computed.
fn write_curves<W: Write>(out: W, runs: &[(Method, PipelineOutput)]) -> Result<(), CliError> {
    let with_bands = runs.iter().any(|(_, o)| o.results.bands.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["method", "tau", "S1", "S0", "RD"];
    if with_bands {
        header.extend(["S1_lo", "S1_hi", "S0_lo", "S0_hi", "RD_lo", "RD_hi"]);
    }
    w.write_record(&header)?;
    for (m, o) in runs {
        let r = &o.results;
        for (i, tau) in r.horizons.iter().enumerate() {
            let mut rec = vec![m.label().to_string(), tau.to_string(), r.s1[i].to_string(), r.s0[i].to_string(), r.rd[i].to_string()];
            if let Some(b) = &r.bands {
                for v in [b.s1_lo[i], b.s1_hi[i], b.s0_lo[i], b.s0_hi[i], b.rd_lo[i], b.rd_hi[i]] {
                    rec.push(v.to_string());
                }
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `kind,interval,max,mean,p99,n_rows` where `kind` names the method.
fn write_diagnostics<W: Write>(out: W, runs: &[(Method, PipelineOutput)]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kind", "interval", "max", "mean", "p99", "n_rows"])?;
    for (m, o) in runs {
        for d in &o.diagnostics {
            w.write_record([
                m.label().to_string(),
                d.interval.to_string(),
                d.max.to_string(),
                d.mean.to_string(),
                d.p99.to_string(),
                d.n_rows.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn truth(c: &TruthConfig) -> Result<serde_json::Value, CliError> {
    c.params.validate()?;
    if c.horizons.iter().any(|&t| t > c.params.tau_max) {
        return Err(CliError::usage(format!("horizons must not exceed tau_max {}", c.params.tau_max)));
    }
    let truth = generate_truth(&c.params, c.n, &c.horizons, c.seed)?;
    truth.write_csv(create(&c.out_dir, "truth.csv")?)?;
    Ok(json!({ "subjects": c.n }))
}

/// Both estimators of survival to periods 1 and 2 under each strategy.
struct LatticeValues {
    rows: Vec<(u8, [f64; 4])>,
}

impl LatticeValues {
    fn of(counts: &TreeCounts) -> seqtrials::Result<Self> {
        let mut rows = Vec::new();
        for a in [0u8, 1] {
            rows.push((
                a,
                [
                    oracle::np_msm_surv1(counts, a)?,
                    oracle::np_seq_surv1(counts, a)?,
                    oracle::np_msm_surv2(counts, a)?,
                    oracle::np_seq_surv2(counts, a)?,
                ],
            ));
        }
        Ok(Self { rows })
    }

    fn discrepancy(&self) -> f64 {
        self.rows.iter().map(|(_, v)| (v[0] - v[1]).abs().max((v[2] - v[3]).abs())).fold(0.0, f64::max)
    }

    fn print(&self) {
        for (a, v) in &self.rows {
            println!("  a={a}  period 1: msm={:.15} seq={:.15}", v[0], v[1]);
            println!("  a={a}  period 2: msm={:.15} seq={:.15}", v[2], v[3]);
        }
    }
}

fn print_counts(c: &TreeCounts) {
    println!("  died in period 1 [l0][a0]: {:?}", c.died_first);
    for l0 in 0..2 {
        for a0 in 0..2 {
            println!("  survivors l0={l0} a0={a0} [l1][a1][y2]: {:?}", c.survivors[l0][a0]);
        }
    }
}

fn oracle(c: &OracleConfig) -> Result<(), CliError> {
    if let Some(path) = &c.lattice_file {
        let mut reader = csv::Reader::from_path(path)?;
        let records: Vec<TwoPeriodRecord> = reader.deserialize().collect::<Result<_, _>>()?;
        let counts = oracle::tree_counts(&records)?;
        println!("lattice from {} ({} records)", path.display(), records.len());
        print_counts(&counts);
        match LatticeValues::of(&counts) {
            Ok(v) => {
                v.print();
                println!("max discrepancy: {:e}", v.discrepancy());
            }
            Err(e) => println!("not estimable: {e}"),
        }
        return Ok(());
    }
    if c.lattices == 0 || c.max_leaf == 0 {
        return Err(CliError::usage("--lattices and --max-leaf must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut worst = 0.0_f64;
    for i in 0..c.lattices {
        let counts = TreeCounts::random(&mut rng, c.max_leaf);
        let v = LatticeValues::of(&counts)?;
        if c.lattices == 1 {
            println!("lattice {i}");
            print_counts(&counts);
            v.print();
        }
        worst = worst.max(v.discrepancy());
    }
    println!("lattices: {}", c.lattices);
    println!("max discrepancy: {worst:e}");
    Ok(())
}
