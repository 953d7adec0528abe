use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use isac_core::config::{load_config, ConfigReport};
use isac_core::scenario::{linear_to_db, watt_to_dbm};
use isac_core::selftest::run_selftest;
use isac_core::sweep::{parse_sweep, run_plain, run_sweep, write_outputs, SweepOutcome, MEDIAN_FILE, RAW_FILE, TRACE_FILE};
use isac_core::{BcdOptions, Scenario, Variant};

/// Active-RIS ISAC designer: minimizes the DoA Cramér-Rao bound under per-user SINR targets.
#[derive(Parser)]
#[command(name = "isac", version)]
struct Cli {
    /// error, warn, info, debug or trace
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design one scenario for each seed and variant.
    Run(RunArgs),
    /// Sweep one parameter as described by a sweep file.
    Sweep(RunArgs),
    /// Parse a scenario file and report every problem in it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the built-in numerical consistency checks.
    Selftest,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (`run`) or sweep file (`sweep`). `run` uses the full-size defaults without one.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma separated seeds, e.g. 0,1,2.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma separated variants (aris-isac, pris-isac, aris-radar-only) or `all`.
    #[arg(long, value_delimiter = ',')]
    variant: Option<Vec<String>>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

impl RunArgs {
    fn variants(&self) -> Result<Option<Vec<Variant>>> {
        let Some(names) = &self.variant else { return Ok(None) };
        if names.iter().any(|n| n == "all") {
            return Ok(Some(Variant::ALL.to_vec()));
        }
        Ok(Some(names.iter().map(|n| n.parse::<Variant>()).collect::<isac_core::Result<_>>()?))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).format_timestamp(None).init();
    let outcome = match cli.command {
        Command::Run(args) => run(&args),
        Command::Sweep(args) => sweep(&args),
        Command::Validate { config } => validate(&config),
        Command::Selftest => selftest(),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load(path: &Path) -> Result<ConfigReport> {
    let report = load_config(path).with_context(|| format!("reading {}", path.display()))?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    Ok(report)
}

fn run(args: &RunArgs) -> Result<ExitCode> {
    let base = match &args.config {
        Some(p) => load(p)?.scenario,
        None => Scenario::default(),
    };
    let seeds = args.seeds.clone().unwrap_or_else(|| vec![base.seed]);
    let variants = args.variants()?.unwrap_or_else(|| Variant::ALL.to_vec());
    let outcome = run_plain(&base, &seeds, &variants, &BcdOptions::default(), args.jobs)?;
    finish(&outcome, args.out.as_deref().unwrap_or(Path::new("out")))
}

fn sweep(args: &RunArgs) -> Result<ExitCode> {
    let Some(path) = &args.config else { bail!("sweep needs --config <sweep file>") };
    let src = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (mut spec, base) = parse_sweep(&src).with_context(|| format!("in {}", path.display()))?;
    if let Some(s) = &args.seeds {
        spec.seeds = s.clone();
    }
    if let Some(v) = args.variants()? {
        spec.variants = v;
    }
    let out = args.out.clone().or_else(|| spec.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let outcome = run_sweep(&spec, &base, &BcdOptions::default(), args.jobs)?;
    finish(&outcome, &out)
}

/// Writes the outputs and prints one line per run. Fails when no run produced a design.
fn finish(outcome: &SweepOutcome, out: &Path) -> Result<ExitCode> {
    write_outputs(out, outcome)?;
    println!("{:<16} {:>14} {:>6} {:>10} {:>6}  status", "variant", "param=value", "seed", "crb_db", "iters");
    for r in &outcome.rows {
        let crb = r.crb_db.map_or("-".into(), |v| format!("{v:.3}"));
        let iters = r.outer_iters.map_or("-".into(), |v| v.to_string());
        let pv = if r.param == isac_core::sweep::NO_PARAM { "-".into() } else { format!("{}={}", r.param, r.value) };
        println!("{:<16} {:>14} {:>6} {:>10} {:>6}  {}", r.variant, pv, r.seed, crb, iters, r.status);
    }
    println!("wrote {}, {} and {} in {}", RAW_FILE, MEDIAN_FILE, TRACE_FILE, out.display());
    let ok = outcome.rows.iter().any(|r| r.succeeded());
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn validate(path: &Path) -> Result<ExitCode> {
    let report = match load_config(path) {
        Ok(r) => r,
        Err(isac_core::Error::Config(problems)) => {
            println!("{}: {} problem(s)", path.display(), problems.len());
            for p in problems {
                println!("  error: {p}");
            }
            return Ok(ExitCode::FAILURE);
        }
        Err(e) => return Err(e).with_context(|| format!("reading {}", path.display())),
    };
    let sc = &report.scenario;
    println!("{}: ok", path.display());
    println!("  N={} M={} K={} L={} seed={}", sc.n_antennas, sc.m_elements, sc.k_users, sc.n_samples, sc.seed);
    println!("  p_bs={:.2} dBm p_ris={:.2} dBm a_max={}", watt_to_dbm(sc.p_bs), watt_to_dbm(sc.p_ris), sc.a_max);
    let gammas: Vec<String> = sc.sinr_targets.iter().map(|g| format!("{:.2}", linear_to_db(*g))).collect();
    println!("  sinr targets [dB]: [{}]", gammas.join(", "));
    for w in &report.warnings {
        println!("  warning: {w}");
    }
    Ok(ExitCode::SUCCESS)
}

fn selftest() -> Result<ExitCode> {
    let checks = run_selftest();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
