//! Command-line front end: trace generation, single runs, parameter sweeps,
//! and policy comparisons.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hmmv_sim::harness::{emit_report, load_traces, run_scenario, Format, Policy, RunReport, Scenario};
use hmmv_sim::workload::{store_trace, store_trace_csv};
use hmmv_sim::Error;

#[derive(Parser, Debug)]
#[command(name = "hmmv", version, about = "Heterogeneous-memory VM management simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write each VM's trace from a scenario.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Write CSV traces instead of the binary format.
        #[arg(long)]
        csv: bool,
    },
    /// Run one scenario and write its report.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        output: Output,
    },
    /// Run a scenario once per value of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        output: Output,
        /// Dotted path into the scenario, e.g. `vms.0.trace.hotspot.hot_fraction`.
        #[arg(long)]
        param: String,
        /// Comma-separated values, each parsed as TOML.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run several policies on one scenario and tabulate them.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        output: Output,
        /// Comma-separated policy names; the first is the baseline.
        #[arg(long, value_delimiter = ',', required = true)]
        policies: Vec<String>,
    },
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the scenario policy (`gen` and `run` only).
    #[arg(long)]
    policy: Option<String>,
}

#[derive(Args, Debug)]
struct Output {
    #[arg(long, value_delimiter = ',', default_value = "json,csv")]
    format: Vec<String>,
}

impl Output {
    fn formats(&self) -> Result<Vec<Format>> {
        Ok(self.format.iter().map(|f| f.parse()).collect::<hmmv_sim::Result<_>>()?)
    }
}

fn load(common: &Common) -> Result<Scenario> {
    let mut sc = Scenario::load(&common.scenario).with_context(|| format!("loading {}", common.scenario.display()))?;
    if let Some(seed) = common.seed {
        sc.seed = seed;
    }
    if let Some(p) = &common.policy {
        sc.policy = Policy::parse(p)?;
    }
    sc.validate()?;
    Ok(sc)
}

fn write_meta(dir: &Path, sc: &Scenario, started: SystemTime, wall: f64) -> Result<()> {
    let meta = serde_json::json!({
        "scenario": sc.name,
        "policy": sc.policy.name(),
        "seed": sc.seed,
        "started_unix_s": started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        "wall_clock_s": wall,
        "version": env!("CARGO_PKG_VERSION"),
    });
    fs::write(dir.join("run_meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Runs `sc` and writes its report, the effective scenario, and wall-clock
/// metadata into `dir`.
fn run_into(sc: &Scenario, dir: &Path, formats: &[Format]) -> Result<RunReport> {
    fs::create_dir_all(dir)?;
    let started = SystemTime::now();
    let clock = Instant::now();
    let report = run_scenario(sc)?;
    let wall = clock.elapsed().as_secs_f64();
    emit_report(&report, dir, formats)?;
    fs::write(dir.join("scenario.toml"), sc.to_toml()?)?;
    write_meta(dir, sc, started, wall)?;
    log::info!("{}: {} epochs in {wall:.2}s", sc.name, report.epochs_run);
    Ok(report)
}

fn summary_line(label: &str, r: &RunReport) -> String {
    let slowdowns: Vec<String> = r
        .vms
        .iter()
        .map(|v| v.slowdown_vs_dram.map_or("-".into(), |s| format!("{s:.3}")))
        .collect();
    let geo = r.geomean_slowdown().map_or("-".into(), |g| format!("{g:.3}"));
    format!("{label}: slowdown [{}] geomean {geo}", slowdowns.join(", "))
}

fn gen(common: &Common, csv: bool) -> Result<()> {
    let sc = load(common)?;
    fs::create_dir_all(&common.out)?;
    for (vm, trace) in load_traces(&sc)?.iter().enumerate() {
        let path = common.out.join(format!("vm{vm}.{}", if csv { "csv" } else { "trace" }));
        if csv {
            store_trace_csv(trace, &path)?;
        } else {
            store_trace(trace, &path)?;
        }
        println!("{}: {} events", path.display(), trace.events.len());
    }
    Ok(())
}

fn run(common: &Common, output: &Output) -> Result<()> {
    let sc = load(common)?;
    let report = run_into(&sc, &common.out, &output.formats()?)?;
    println!("{}", summary_line(&sc.name, &report));
    Ok(())
}

fn sweep(common: &Common, output: &Output, param: &str, values: &[String], jobs: Option<usize>) -> Result<()> {
    let base = load(common)?;
    let formats = output.formats()?;
    let points: Vec<(String, Scenario)> = values
        .iter()
        .map(|v| {
            let mut sc = base.with_param(param, v)?;
            sc.name = format!("{}-{param}={v}", base.name);
            sc.validate()?;
            Ok((v.clone(), sc))
        })
        .collect::<hmmv_sim::Result<_>>()?;
    let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1);
    let mut results: Vec<Option<Result<RunReport>>> = (0..points.len()).map(|_| None).collect();
    // Scenarios share nothing, so each point runs on its own thread.
    for (chunk_points, chunk_results) in points.chunks(jobs).zip(results.chunks_mut(jobs)) {
        std::thread::scope(|s| {
            for ((v, sc), slot) in chunk_points.iter().zip(chunk_results.iter_mut()) {
                let dir = common.out.join(format!("{param}={v}"));
                let formats = &formats;
                s.spawn(move || *slot = Some(run_into(sc, &dir, formats)));
            }
        });
    }
    let mut w = csv::Writer::from_path(common.out.join("sweep.csv"))?;
    w.write_record(["schema_version", "param", "value", "vm", "estimated_time_ns", "slowdown_vs_dram", "bytes_migrated"])?;
    for ((v, _), r) in points.iter().zip(results) {
        let r = r.expect("every point ran")?;
        for vm in &r.vms {
            w.write_record([
                hmmv_sim::harness::SCHEMA_VERSION.to_string(),
                param.to_string(),
                v.clone(),
                vm.vm.to_string(),
                vm.estimated_time_ns.to_string(),
                vm.slowdown_vs_dram.map_or(String::new(), |s| s.to_string()),
                vm.bytes_migrated.to_string(),
            ])?;
        }
        println!("{}", summary_line(&format!("{param}={v}"), &r));
    }
    w.flush()?;
    Ok(())
}

fn compare(common: &Common, output: &Output, policies: &[String]) -> Result<()> {
    if common.policy.is_some() {
        bail!(Error::Validation("compare takes --policies, not --policy".into()));
    }
    let base = load(common)?;
    let formats = output.formats()?;
    let mut reports = Vec::new();
    for p in policies {
        let mut sc = base.clone();
        sc.policy = Policy::parse(p)?;
        sc.protocol = None;
        sc.name = format!("{}-{}", base.name, sc.policy.name());
        sc.validate()?;
        let r = run_into(&sc, &common.out.join(sc.policy.name()), &formats)?;
        reports.push((sc.policy.name(), r));
    }
    // Relative performance against the first policy, per VM and as a
    // geometric mean.
    let baseline = reports[0].1.clone();
    let mut w = csv::Writer::from_path(common.out.join("compare.csv"))?;
    w.write_record(["schema_version", "policy", "vm", "estimated_time_ns", "slowdown_vs_dram", "relative_performance"])?;
    for (name, r) in &reports {
        let mut rel = Vec::new();
        for (vm, b) in r.vms.iter().zip(&baseline.vms) {
            let perf = b.estimated_time_ns as f64 / vm.estimated_time_ns.max(1) as f64;
            rel.push(perf);
            w.write_record([
                hmmv_sim::harness::SCHEMA_VERSION.to_string(),
                name.clone(),
                vm.vm.to_string(),
                vm.estimated_time_ns.to_string(),
                vm.slowdown_vs_dram.map_or(String::new(), |s| s.to_string()),
                perf.to_string(),
            ])?;
        }
        let geo = hmmv_sim::stats::geometric_mean(&rel);
        w.write_record([
            hmmv_sim::harness::SCHEMA_VERSION.to_string(),
            name.clone(),
            "geomean".into(),
            String::new(),
            r.geomean_slowdown().map_or(String::new(), |s| s.to_string()),
            geo.to_string(),
        ])?;
        println!("{} relative performance {geo:.3}", summary_line(name, r));
    }
    w.flush()?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::InvariantBreach { .. }) => 3,
        Some(e) if e.is_validation() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen { common, csv } => gen(common, *csv),
        Command::Run { common, output } => run(common, output),
        Command::Sweep { common, output, param, values, jobs } => sweep(common, output, param, values, *jobs),
        Command::Compare { common, output, policies } => compare(common, output, policies),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let breach = Error::InvariantBreach { module: "pool", time_ns: 1, detail: "x".into(), digest: 0 };
        assert_eq!(exit_code(&anyhow::Error::from(breach).context("running")), 3);
        assert_eq!(exit_code(&Error::Validation("bad".into()).into()), 2);
        assert_eq!(exit_code(&Error::Config("bad".into()).into()), 2);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), 1);
    }
}
