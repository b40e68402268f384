//! Config-driven experiment pipelines for the matrix-free inverse-problem
//! toolkit: verification suites, factor fitting, reconstruction and
//! benchmarks.
//!
//! Exit codes: 0 pass, 1 verification failure, 2 config error, 3 solver
//! failure.

mod commands;
mod config;
mod experiment;
mod phantom;

use std::io::Write;
use std::process::ExitCode;

use config::Config;
use experiment::{CliError, Experiment};

// Allocation accounting backs the bench command's peak-memory columns.
#[global_allocator]
static ALLOC: partfact_core::alloc_track::CountingAllocator =
    partfact_core::alloc_track::CountingAllocator;

const USAGE: &str = "\
usage: partfact <command> [options]

commands:
  verify       --config FILE [--filter SUITE]   run the numerical property suites
  fit-factor   --config FILE                    fit (m, lambda) to the configured operator
  reconstruct  --config FILE [--publish]        solve the configured inverse problem
  bench        --config FILE                    timing / peak-memory curves over sizes
  phantom      --config FILE                    write the configured phantom to disk
  report       --csv FILE                       re-emit a report CSV as gnuplot-ready .dat

common options:
  --config FILE   experiment configuration (sectioned key = value text)
  --out-dir DIR   override the output directory (also: PARTFACT_OUT_DIR)
  --threads N     cap the worker pool (also: PARTFACT_THREADS; 0 = default)

exit codes: 0 pass, 1 verification failure, 2 config error, 3 solver failure";

struct Args {
    command: String,
    config: Option<String>,
    filter: Option<String>,
    publish: bool,
    out_dir: Option<String>,
    threads: Option<usize>,
    csv: Option<String>,
}

fn parse_args(argv: &[String]) -> Result<Args, String> {
    if argv.is_empty() {
        return Err("missing command".into());
    }
    let mut args = Args {
        command: argv[0].clone(),
        config: None,
        filter: None,
        publish: false,
        out_dir: None,
        threads: None,
        csv: None,
    };
    let mut it = argv[1..].iter();
    while let Some(flag) = it.next() {
        let mut take = |name: &str| -> Result<String, String> {
            it.next()
                .cloned()
                .ok_or_else(|| format!("{name} expects a value"))
        };
        match flag.as_str() {
            "--config" => args.config = Some(take("--config")?),
            "--filter" => args.filter = Some(take("--filter")?),
            "--out-dir" => args.out_dir = Some(take("--out-dir")?),
            "--threads" => {
                let v = take("--threads")?;
                args.threads =
                    Some(v.parse().map_err(|_| format!("--threads '{v}' is not an integer"))?);
            }
            "--csv" => args.csv = Some(take("--csv")?),
            "--publish" => args.publish = true,
            other => return Err(format!("unknown option '{other}'")),
        }
    }
    Ok(args)
}

fn load_experiment(args: &Args) -> Result<Experiment, CliError> {
    let Some(config_path) = &args.config else {
        return Err(CliError::Config("--config FILE is required".into()));
    };
    let config = Config::load(std::path::Path::new(config_path))?;
    let exp = Experiment::new(config, args.out_dir.as_deref(), args.threads)?;
    if exp.threads > 0 {
        // Build the global pool once; ignore the error if a pool exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(exp.threads)
            .build_global();
    }
    Ok(exp)
}

fn cmd_phantom(exp: &Experiment) -> Result<i32, CliError> {
    exp.ensure_out_dir()?;
    let truth = experiment::build_phantom(exp)?;
    let peak = experiment::metric_settings(exp)?.peak;
    let path = exp.out_dir.join("phantom.grid");
    partfact_core::gridio::save_grid(&truth, peak, &path)
        .map_err(|e| CliError::Config(format!("cannot save phantom: {e}")))?;
    if truth.ndim() == 2 {
        partfact_core::gridio::save_pgm16(&truth, peak, &exp.out_dir.join("phantom.pgm"))
            .map_err(|e| CliError::Config(format!("cannot save preview: {e}")))?;
    }
    println!("phantom -> {}", path.display());
    Ok(0)
}

/// Re-emit a CSV report as whitespace-separated gnuplot-ready data.
fn cmd_report(csv: &str) -> Result<i32, CliError> {
    let text = std::fs::read_to_string(csv)
        .map_err(|e| CliError::Config(format!("cannot read {csv}: {e}")))?;
    let out_path = std::path::Path::new(csv).with_extension("dat");
    let mut out = std::fs::File::create(&out_path)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", out_path.display())))?;
    for line in text.lines() {
        if line.starts_with('#') {
            writeln!(out, "{line}").ok();
        } else if line.contains(',') {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.iter().any(|f| f.parse::<f64>().is_err()) && line.chars().next().is_some_and(|c| c.is_alphabetic()) {
                writeln!(out, "# {}", fields.join(" ")).ok();
            } else {
                writeln!(out, "{}", fields.join(" ")).ok();
            }
        } else {
            writeln!(out, "{line}").ok();
        }
    }
    println!("gnuplot data -> {}", out_path.display());
    Ok(0)
}

fn run() -> Result<i32, CliError> {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let args = parse_args(&argv).map_err(|e| CliError::Config(format!("{e}\n\n{USAGE}")))?;
    match args.command.as_str() {
        "verify" => commands::verify::run(&load_experiment(&args)?, args.filter.as_deref()),
        "fit-factor" => commands::fit::run(&load_experiment(&args)?),
        "reconstruct" => commands::reconstruct::run(&load_experiment(&args)?, args.publish),
        "bench" => commands::bench::run(&load_experiment(&args)?),
        "phantom" => cmd_phantom(&load_experiment(&args)?),
        "report" => {
            let Some(csv) = &args.csv else {
                return Err(CliError::Config("report needs --csv FILE".into()));
            };
            cmd_report(csv)
        }
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            Ok(0)
        }
        other => Err(CliError::Config(format!(
            "unknown command '{other}'\n\n{USAGE}"
        ))),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
