use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use spinbed_core::campaign::{generate_sweep, repeat_truth, run_campaign, BenchmarkReport, DELTA_RMS};
use spinbed_core::config::{defaults, load_config, ExperimentConfig, TruthSource};
use spinbed_core::models::{LikelihoodModel, ModelKind, SensingModel};
use spinbed_core::orchestrator::{self, Mode};
use spinbed_core::records::{
    write_checkpoints, write_curves, write_file, write_histogram, write_report, write_runs, write_shots,
    write_throughput, Manifest,
};
use spinbed_core::throughput::throughput_bench;
use spinbed_core::validation::{bessel_check, nuclear_oracle_check};
use spinbed_core::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Parser)]
#[command(name = "spinbed", version, about = "Adaptive Bayesian experiment design for single-spin sensing")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML experiment file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Maximum number of shots per run.
    #[arg(long, global = true)]
    shots: Option<usize>,
    /// Worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Increase log verbosity.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Single run estimating nuclear hyperfine parameters.
    SenseNuclear,
    /// Single run estimating an oscillating field.
    SenseAc,
    /// Campaign over a sweep of ground truths, one run per combination and mode.
    Benchmark,
    /// Measure utility-kernel throughput.
    Throughput {
        /// Particle count.
        #[arg(long, default_value_t = 3200)]
        particles: usize,
        /// Minimum measurement time in milliseconds.
        #[arg(long, default_value_t = 2000)]
        duration_ms: u64,
    },
    /// Check the likelihoods against independent references.
    Validate {
        /// Random nuclear parameter sets.
        #[arg(long, default_value_t = 200)]
        cases: usize,
        /// Controls per parameter set.
        #[arg(long, default_value_t = 20)]
        taus: usize,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parse { .. } => Failure::Config(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let g = &cli.global;
    if let Some(w) = g.workers {
        if w == 0 {
            return Err(Failure::Config(anyhow::anyhow!("--workers must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global().context("configuring worker threads")?;
    }
    match &cli.command {
        Command::SenseNuclear => sense(g, ModelKind::Nuclear),
        Command::SenseAc => sense(g, ModelKind::Ac),
        Command::Benchmark => benchmark(g),
        Command::Throughput { particles, duration_ms } => throughput(g, *particles, *duration_ms),
        Command::Validate { cases, taus } => validate(*cases, *taus),
    }
}

fn load(g: &Global, kind: Option<ModelKind>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &g.config {
        Some(path) => load_config(path)?,
        None => defaults(kind.unwrap_or(ModelKind::Nuclear))?,
    };
    if let Some(k) = kind {
        if cfg.model.kind() != k {
            return Err(Failure::Config(anyhow::anyhow!(
                "config describes a {} model, expected {k}",
                cfg.model.kind()
            )));
        }
    }
    if let Some(seed) = g.seed {
        cfg.set_seed(seed);
    }
    if let Some(mode) = g.mode {
        cfg.run.mode = mode;
        cfg.campaign.modes = vec![mode];
    }
    if let Some(shots) = g.shots {
        cfg.run.n_shot_max = shots;
    }
    if let Some(w) = g.workers {
        cfg.campaign.workers = w;
    }
    Ok(cfg)
}

fn prepare_out(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn base_manifest(cfg: &ExperimentConfig, command: &str) -> Manifest {
    let mut m = Manifest::new();
    m.set("command", command).set("version", env!("CARGO_PKG_VERSION"));
    for (k, v) in cfg.describe() {
        m.set(k, v);
    }
    m
}

fn sense(g: &Global, kind: ModelKind) -> Result<(), Failure> {
    let cfg = load(g, Some(kind))?;
    prepare_out(&g.out)?;
    let trace = match &cfg.model {
        SensingModel::Nuclear(m) => orchestrator::run(m, &cfg.grid, &cfg.truth, &cfg.run)?,
        SensingModel::Ac(m) => orchestrator::run(m, &cfg.grid, &cfg.truth, &cfg.run)?,
    };
    write_file(&g.out.join("shots.csv"), |w| write_shots(w, &trace.records))?;
    write_file(&g.out.join("checkpoints.csv"), |w| write_checkpoints(w, &trace))?;
    write_file(&g.out.join("histogram.csv"), |w| write_histogram(w, &cfg.model, &cfg.grid, &cfg.truth.params, &trace))?;

    let mut m = base_manifest(&cfg, if kind == ModelKind::Nuclear { "sense-nuclear" } else { "sense-ac" });
    m.set("result.n_shot", trace.n_shot())
        .set("result.probe_time_us", trace.probe_time_us)
        .set("result.shot_wall_time_us", trace.shot_wall_time_us)
        .set("result.compute_time_us", trace.compute_time_us)
        .set("result.elapsed_us", trace.elapsed_us())
        .set("result.stall_count", trace.stall_count)
        .set("result.resample_count", trace.resample_count)
        .set("result.jitter_skipped", trace.jitter_skipped)
        .set("result.failure", trace.failure.as_deref().unwrap_or("none"));
    write_file(&g.out.join("manifest.txt"), |w| m.write(w))?;

    let last = trace.final_checkpoint();
    println!("{} run: {} shots, probe time {:.1} ms", trace.mode, trace.n_shot(), trace.probe_time_us / 1e3);
    for (j, name) in trace.param_names.iter().enumerate() {
        println!(
            "  {name:>10}: mean {:.6} sd {:.3e} rel {:.3e} truth err {:.3e}",
            last.summary.mean[j],
            last.summary.abs_uncertainty[j],
            last.summary.rel_uncertainty[j],
            last.truth_rel_err[j]
        );
    }
    if let Some(f) = &trace.failure {
        return Err(Failure::Runtime(anyhow::anyhow!("run failed: {f}")));
    }
    Ok(())
}

fn benchmark(g: &Global) -> Result<(), Failure> {
    let cfg = load(g, None)?;
    prepare_out(&g.out)?;
    let truths = match &cfg.campaign.source {
        TruthSource::Sweep(spec) => generate_sweep(spec, &cfg.model, cfg.seed)?,
        TruthSource::Repeat(n) => repeat_truth(&cfg.truth, *n, cfg.seed),
    };
    let configs: Vec<_> =
        cfg.campaign.modes.iter().map(|&mode| orchestrator::RunConfig { mode, ..cfg.run.clone() }).collect();
    let report = match &cfg.model {
        SensingModel::Nuclear(m) => run_campaign(m, &cfg.grid, &truths, &configs, cfg.seed, cfg.campaign.workers)?,
        SensingModel::Ac(m) => run_campaign(m, &cfg.grid, &truths, &configs, cfg.seed, cfg.campaign.workers)?,
    };
    write_file(&g.out.join("report.csv"), |w| write_report(w, &report))?;
    write_file(&g.out.join("runs.csv"), |w| write_runs(w, &report))?;
    for mode in report.modes() {
        write_file(&g.out.join(format!("curves_{mode}.csv")), |w| write_curves(w, &report, mode))?;
    }

    let mut m = base_manifest(&cfg, "benchmark");
    m.set("campaign.modes", cfg.campaign.modes.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(","));
    m.set("campaign.combinations", truths.len());
    match &cfg.campaign.source {
        TruthSource::Sweep(s) => {
            m.set("campaign.source", "sweep")
                .set("sweep.freq_range_hz", format!("{},{}", s.freq_range_hz[0], s.freq_range_hz[1]))
                .set("sweep.freq_points", s.freq_points)
                .set("sweep.n_bench", s.n_bench);
            if s.kind == ModelKind::Ac {
                m.set("sweep.ratio_range", format!("{},{}", s.ratio_range[0], s.ratio_range[1]))
                    .set("sweep.ratio_points", s.ratio_points);
            } else {
                m.set("sweep.n_spins", s.n_spins).set("sweep.theta", "uniform on [0, 2pi), folded to [0, pi]");
            }
        }
        TruthSource::Repeat(n) => {
            m.set("campaign.source", "repeat").set("campaign.repetitions", n);
        }
    }
    for (mode, t) in &report.totals {
        m.set(format!("totals.{mode}.runs"), t.runs)
            .set(format!("totals.{mode}.failed"), t.failed)
            .set(format!("totals.{mode}.probe_time_us"), t.probe_time_us)
            .set(format!("totals.{mode}.shot_wall_time_us"), t.shot_wall_time_us)
            .set(format!("totals.{mode}.compute_time_us"), t.compute_time_us)
            .set(format!("totals.{mode}.stall_count"), t.stall_count);
    }
    write_file(&g.out.join("manifest.txt"), |w| m.write(w))?;
    print_summary(&report);
    Ok(())
}

fn print_summary(report: &BenchmarkReport) {
    for mode in report.modes() {
        let curve = report.curve(mode, DELTA_RMS);
        if let Some((n, v)) = curve.last() {
            let t = &report.totals[&mode];
            println!(
                "{mode}: {} runs ({} failed), median grouped relative uncertainty (largest group) {v:.4} at {n} shots",
                t.runs, t.failed
            );
        }
    }
}

fn throughput(g: &Global, particles: usize, duration_ms: u64) -> Result<(), Failure> {
    let cfg = load(g, None)?;
    prepare_out(&g.out)?;
    let n_batch = cfg.run.batch.n_batch;
    let seed = cfg.seed;
    let min = Duration::from_millis(duration_ms);
    let report = match &cfg.model {
        SensingModel::Nuclear(m) => throughput_bench(m, &m.prior_cloud(particles, seed)?, &cfg.grid, n_batch, min),
        SensingModel::Ac(m) => throughput_bench(m, &m.prior_cloud(particles, seed)?, &cfg.grid, n_batch, min),
    };
    write_file(&g.out.join("throughput.csv"), |w| write_throughput(w, std::slice::from_ref(&report)))?;
    println!(
        "n_p={} grid={} {}: {:.3e} evals/s, {:.1} us per table, {:.0} evals per measurement, {:.0} shots/s",
        report.n_p,
        report.grid_size,
        report.precision,
        report.evals_per_s,
        report.latency_us,
        report.evals_per_measurement,
        report.max_shot_rate_hz
    );
    Ok(())
}

fn validate(cases: usize, taus: usize) -> Result<(), Failure> {
    let oracle = nuclear_oracle_check(cases, taus, 0)?;
    let bessel = bessel_check(1000);
    let checks = [
        ("nuclear likelihood vs pulse-sequence propagation", oracle.max_abs_err, 1e-6),
        ("truncated J0 series", bessel.max_series_err, 1e-6),
        ("phase-averaged probability vs quadrature", bessel.max_phase_average_err, 1e-8),
    ];
    let mut ok = true;
    for (name, err, tol) in checks {
        let pass = err < tol;
        ok &= pass;
        println!("{} {name}: max error {err:.3e} (tolerance {tol:.0e})", if pass { "PASS" } else { "FAIL" });
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow::anyhow!("validation failed")))
    }
}
