//! `geopid` command-line front end.
//!
//! Exit codes: 0 when every monitor passes, 2 on validation or I/O errors,
//! 3 when a monitor fails. All human-readable text goes to stderr.

use clap::{Args, Parser, Subcommand};
use geopid::pid::{default_kappa, verify_gains};
use geopid::scenario::{bundled, run_scenario, Scenario, BUNDLED, SUITE};
use geopid::sim::RunOutput;
use geopid::systems::SystemId;
use rayon::prelude::*;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_INVALID: u8 = 2;
const EXIT_MONITOR: u8 = 3;

#[derive(Parser)]
#[command(name = "geopid", version, about = "Intrinsic PID control on Lie groups: scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Output directory for traces and reports.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Dotted scenario key override, `key=value`; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Trace stride in plant steps.
    #[arg(long)]
    decimate: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more scenario files (or bundled scenario names).
    Run {
        #[arg(required = true)]
        scenarios: Vec<String>,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Check the gains of a scenario against the certified bounds.
    VerifyGains {
        scenario: String,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Use `kappa = kappa_mu / mu` instead of the scenario's kappa.
        #[arg(long)]
        kappa_mu: Option<f64>,
    },
    /// Run a scenario once per value of one key.
    Sweep {
        scenario: String,
        /// Dotted key to vary.
        #[arg(long)]
        key: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run the nine bundled scenarios and print a pass/fail table.
    ///
    /// Overrides may be scoped as `target:key=value`, where `target` is a
    /// scenario name prefix or a system id.
    #[command(name = "paper-suite")]
    Suite {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// List the system ids.
    ListSystems,
}

struct Failure(u8, String);

impl From<geopid::Error> for Failure {
    fn from(e: geopid::Error) -> Self {
        Failure(EXIT_INVALID, e.to_string())
    }
}

fn load(arg: &str) -> Result<Scenario, Failure> {
    let p = Path::new(arg);
    if p.exists() {
        return Ok(Scenario::load(p)?);
    }
    if BUNDLED.iter().any(|(n, _)| *n == arg) {
        return Ok(bundled(arg)?);
    }
    Err(Failure(EXIT_INVALID, format!("{arg}: no such scenario file or bundled scenario")))
}

fn prepare(sc: Scenario, overrides: &[String], decimate: Option<usize>) -> Result<Scenario, Failure> {
    let mut sc = sc.with_overrides(overrides)?;
    if let Some(d) = decimate {
        sc = sc.with_overrides(&[format!("sim.decimate={d}")])?;
    }
    Ok(sc)
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Failure(EXIT_INVALID, format!("thread pool: {e}")))
}

fn write_outputs(out: &Path, stem: &str, r: &RunOutput) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure(EXIT_INVALID, format!("{}: {e}", out.display()));
    fs::create_dir_all(out).map_err(io)?;
    let f = fs::File::create(out.join(format!("{stem}.csv"))).map_err(io)?;
    r.trace.write_csv(std::io::BufWriter::new(f))?;
    fs::write(out.join(format!("{stem}_report.toml")), r.report.to_toml()?).map_err(io)?;
    Ok(())
}

/// One row of a result table.
struct Outcome {
    name: String,
    passed: bool,
    terminal: f64,
    runtime: f64,
    failed: Vec<String>,
}

fn execute(sc: &Scenario, out: &Path, stem: &str) -> Result<Outcome, Failure> {
    let r = run_scenario(sc)?;
    write_outputs(out, stem, &r)?;
    Ok(Outcome {
        name: stem.to_string(),
        passed: r.report.passed,
        terminal: r.report.terminal_error,
        runtime: r.report.runtime_s,
        failed: r.report.monitors.iter().filter(|m| !m.passed).map(|m| format!("{}: {}", m.name, m.detail)).collect(),
    })
}

fn table(rows: &[Result<Outcome, Failure>]) -> u8 {
    eprintln!("{:<24} {:>6} {:>14} {:>10}", "scenario", "result", "terminal", "runtime_s");
    let mut code = 0;
    for row in rows {
        match row {
            Ok(o) => {
                let verdict = if o.passed { "PASS" } else { "FAIL" };
                eprintln!("{:<24} {:>6} {:>14.4e} {:>10.2}", o.name, verdict, o.terminal, o.runtime);
                for f in &o.failed {
                    eprintln!("    {f}");
                }
                if !o.passed {
                    code = code.max(EXIT_MONITOR);
                }
            }
            Err(Failure(c, msg)) => {
                eprintln!("{:<24} {:>6} {msg}", "-", "ERROR");
                code = code.max(*c);
            }
        }
    }
    code
}

fn cmd_run(scenarios: &[String], common: &Common, jobs: Option<usize>) -> Result<u8, Failure> {
    let prepared = scenarios
        .iter()
        .map(|s| prepare(load(s)?, &common.overrides, common.decimate))
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<_> =
        pool(jobs)?.install(|| prepared.par_iter().map(|sc| execute(sc, &common.out, &sc.name)).collect());
    if let [Err(Failure(c, msg))] = rows.as_slice() {
        return Err(Failure(*c, msg.clone()));
    }
    Ok(table(&rows))
}

fn cmd_verify_gains(scenario: &str, overrides: &[String], kappa_mu: Option<f64>) -> Result<u8, Failure> {
    let sc = prepare(load(scenario)?, overrides, None)?;
    let lp = sc.build()?;
    let mc = lp.morse_constants();
    let kappa = match (kappa_mu, sc.lyapunov.as_ref().and_then(|l| l.kappa)) {
        (Some(k), _) => k / mc.mu,
        (None, Some(k)) => k,
        (None, None) => default_kappa(mc.mu),
    };
    let g = &sc.gains;
    let v = verify_gains(g, &mc, kappa)?;
    let b = &v.bounds;
    eprintln!("scenario {} ({})", sc.name, sc.system.as_str());
    eprintln!("mu     = {:.6}", mc.mu);
    eprintln!("lambda = {:.6}", mc.lambda);
    eprintln!("kappa  = {kappa:.6} in [{:.6}, {:.6})", 1.0 / mc.mu, 2.0 / mc.mu);
    eprintln!("delta  = {:.6}", b.delta);
    eprintln!("k1 = {:.6}, k2 = {:.6}, 2 kappa kd^2 = {:.6}", b.k1, b.k2, 2.0 * kappa * g.kd * g.kd);
    let ok = |f: bool| if f { "PASS" } else { "FAIL" };
    eprintln!("kI = {:<10} < kI_max = {:<12.6} {} (margin {:.6})", g.ki, b.ki_max, ok(v.ki_ok), b.ki_max - g.ki);
    eprintln!("kp = {:<10} > kp_min = {:<12.6} {} (margin {:.6})", g.kp, b.kp_min, ok(v.kp_ok), g.kp - b.kp_min);
    Ok(if v.ki_ok && v.kp_ok { 0 } else { EXIT_MONITOR })
}

fn cmd_sweep(
    scenario: &str,
    key: &str,
    values: &[String],
    common: &Common,
    jobs: Option<usize>,
) -> Result<u8, Failure> {
    let base = prepare(load(scenario)?, &common.overrides, common.decimate)?;
    let runs = values
        .iter()
        .enumerate()
        .map(|(i, v)| Ok((format!("{}_{i:03}", base.name), v.clone(), base.with_overrides(&[format!("{key}={v}")])?)))
        .collect::<Result<Vec<_>, Failure>>()?;
    let rows: Vec<_> =
        pool(jobs)?.install(|| runs.par_iter().map(|(stem, _, sc)| execute(sc, &common.out, stem)).collect());
    for ((stem, v, _), _) in runs.iter().zip(&rows) {
        eprintln!("{stem}: {key} = {v}");
    }
    Ok(table(&rows))
}

/// Splits `target:key=value`; the target must not contain `=` or `.`.
fn scoped(o: &str) -> (Option<&str>, &str) {
    match o.split_once(':') {
        Some((t, rest)) if !t.contains('=') && !t.contains('.') => (Some(t), rest),
        _ => (None, o),
    }
}

fn cmd_suite(common: &Common, jobs: Option<usize>) -> Result<u8, Failure> {
    for o in &common.overrides {
        if let (Some(t), _) = scoped(o) {
            let known = SUITE.iter().any(|n| n.starts_with(t)) || SystemId::PLANTS.iter().any(|s| s.as_str() == t);
            if !known {
                return Err(Failure(EXIT_INVALID, format!("override target `{t}` matches no suite scenario")));
            }
        }
    }
    let prepared: Vec<Result<Scenario, Failure>> = SUITE
        .iter()
        .map(|n| {
            let sc = bundled(n)?;
            let mine: Vec<String> = common
                .overrides
                .iter()
                .filter_map(|o| match scoped(o) {
                    (None, kv) => Some(kv.to_string()),
                    (Some(t), kv) if n.starts_with(t) || sc.system.as_str() == t => Some(kv.to_string()),
                    _ => None,
                })
                .collect();
            prepare(sc, &mine, common.decimate)
        })
        .collect();
    let rows: Vec<_> = pool(jobs)?.install(|| {
        prepared
            .par_iter()
            .map(|sc| match sc {
                Ok(sc) => execute(sc, &common.out, &sc.name),
                Err(Failure(c, m)) => Err(Failure(*c, m.clone())),
            })
            .collect()
    });
    let code = table(&rows);
    let passed = rows.iter().filter(|r| matches!(r, Ok(o) if o.passed)).count();
    eprintln!("{passed}/{} scenarios passed", rows.len());
    let mut summary = String::from("scenario,passed,terminal_error,runtime_s\n");
    for o in rows.iter().flatten() {
        summary += &format!("{},{},{:.16e},{:.3}\n", o.name, o.passed, o.terminal, o.runtime);
    }
    fs::create_dir_all(&common.out)
        .and_then(|_| fs::write(common.out.join("suite.csv"), summary))
        .map_err(|e| Failure(EXIT_INVALID, format!("{}: {e}", common.out.display())))?;
    Ok(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { scenarios, common, jobs } => cmd_run(scenarios, common, *jobs),
        Command::VerifyGains { scenario, overrides, kappa_mu } => cmd_verify_gains(scenario, overrides, *kappa_mu),
        Command::Sweep { scenario, key, values, common, jobs } => cmd_sweep(scenario, key, values, common, *jobs),
        Command::Suite { common, jobs } => cmd_suite(common, *jobs),
        Command::ListSystems => {
            for s in SystemId::PLANTS.iter().chain([&SystemId::RigidBody]) {
                eprintln!("{:<10} {}", s.as_str(), s.describe());
            }
            Ok(0)
        }
    };
    match result {
        Ok(c) => ExitCode::from(c),
        Err(Failure(c, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(c)
        }
    }
}
