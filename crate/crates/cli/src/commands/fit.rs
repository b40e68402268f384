//! `fit-factor`: fit (m, lambda) to the normal operator of the configured
//! forward model and persist the factor.
//!
//! Outputs under the experiment directory:
//! * `factor.m.grid`, `factor.lambda.grid`, `factor.factor` — the factor
//!   files and manifest (deterministic given config + seed),
//! * `fit_trace.csv` — per-step loss (deterministic),
//! * `fit_timings.csv` — wall time, excluded from the determinism contract.

use std::io::Write;

use partfact_core::factorfit::{fit_factor, Optimizer};
use partfact_core::grid::numel;
use partfact_core::linop::{DenseOracle, NormalOperator};
use partfact_core::spectral::save_factor;
use partfact_core::tolerances::DENSE_ORACLE_MAX_UNKNOWNS;

use crate::experiment::{build_operator, factorfit_settings, solver_err, CliError, Experiment};

pub fn run(exp: &Experiment) -> Result<i32, CliError> {
    exp.ensure_out_dir()?;
    let built = build_operator(exp, &exp.config_dir())?;
    let op = built.as_linop();
    let target = NormalOperator::new(op);
    let settings = factorfit_settings(exp)?;
    let fit_cfg = &settings.config;

    println!(
        "fitting {} factor to {} normal operator: {} steps, batch {}, lr {}",
        fit_cfg.variant,
        built.kind_name(),
        fit_cfg.steps,
        fit_cfg.batch,
        fit_cfg.lr
    );
    let (factor, trace) = fit_factor(&target, fit_cfg).map_err(solver_err)?;

    // Dense oracle: absolute and relative squared Frobenius residuals.
    let oracle = if numel(op.in_shape()) <= DENSE_ORACLE_MAX_UNKNOWNS {
        let dense_target = DenseOracle::from_operator(&target).map_err(solver_err)?;
        let dense_factor = DenseOracle::from_operator(&factor).map_err(solver_err)?;
        let residual = dense_target
            .sub(&dense_factor)
            .map_err(solver_err)?
            .frobenius_sq();
        let scale = dense_target.frobenius_sq().max(1e-300);
        Some((residual, residual / scale))
    } else {
        None
    };

    let mut metadata = vec![
        ("config_hash".to_string(), exp.config.text_hash.clone()),
        ("operator".to_string(), built.kind_name().to_string()),
        ("steps".to_string(), fit_cfg.steps.to_string()),
        ("batch".to_string(), fit_cfg.batch.to_string()),
        ("lr".to_string(), format!("{}", fit_cfg.lr)),
        (
            "optimizer".to_string(),
            match fit_cfg.optimizer {
                Optimizer::Adam { .. } => "adam".to_string(),
                Optimizer::GradientDescent => "gd".to_string(),
            },
        ),
        ("seed".to_string(), fit_cfg.seed.to_string()),
        ("final_loss".to_string(), format!("{:e}", trace.final_loss)),
        ("best_step".to_string(), trace.best_step.to_string()),
    ];
    if let Some((absolute, relative)) = oracle {
        metadata.push(("oracle_loss".to_string(), format!("{absolute:e}")));
        metadata.push(("oracle_loss_relative".to_string(), format!("{relative:e}")));
    }
    let manifest = save_factor(&factor, &exp.out_dir, "factor", &metadata)
        .map_err(|e| CliError::Config(format!("cannot save factor: {e}")))?;

    let trace_path = exp.out_dir.join("fit_trace.csv");
    let mut out = std::fs::File::create(&trace_path)
        .map_err(|e| CliError::Config(format!("cannot write trace: {e}")))?;
    writeln!(out, "# config_hash={}", exp.config.text_hash).ok();
    writeln!(out, "step,loss").ok();
    for (step, loss) in trace.losses.iter().enumerate() {
        writeln!(out, "{step},{loss:e}").ok();
    }

    let mut timing = std::fs::File::create(exp.out_dir.join("fit_timings.csv"))
        .map_err(|e| CliError::Config(format!("cannot write timings: {e}")))?;
    writeln!(timing, "phase,seconds").ok();
    writeln!(timing, "fit,{}", trace.wall_seconds).ok();

    match oracle {
        Some((absolute, relative)) => println!(
            "final monte-carlo loss {:e} (best step {}), frobenius oracle {:e} ({:.3e} relative) -> {}",
            trace.final_loss,
            trace.best_step,
            absolute,
            relative,
            manifest.display()
        ),
        None => println!(
            "final monte-carlo loss {:e} (best step {}; problem too large for the dense oracle) -> {}",
            trace.final_loss,
            trace.best_step,
            manifest.display()
        ),
    }
    Ok(0)
}
