//! `reconstruct`: synthesize measurements from the configured phantom and
//! forward model (or load them), run the configured solver, and emit the
//! reconstruction plus reports.
//!
//! Deterministic outputs: `reconstruction.grid` (+ `.pgm` preview for 2-d
//! real volumes), `solve_report.csv` (iteration, residual, psnr, ssim),
//! `metrics.txt`, and `per_slice_psnr.csv` when requested. Wall-clock
//! timings go to `timings.csv`, which is excluded from the determinism
//! contract.

use std::io::Write;

use partfact_core::grid::Grid;
use partfact_core::gridio::{save_grid, save_pgm16};
use partfact_core::linop::{add_gaussian_noise, NormalOperator};
use partfact_core::metrics::{psnr_per_slice, MetricReport};
use partfact_core::partition::schedule_patches;
use partfact_core::solvers::{
    adjoint_scaled, conjugate_gradient, fista_tv, step_size_from_power_iteration,
    two_step_partitioned, unrolled_pgd, ContextSource, DataMode, DataStep, Monitor, NormalPath,
    PatchInit, PatchSolver, SolveReport, Step2Config, TwoStepConfig,
};
use partfact_core::spectral::{load_factor, DiagCirculantFactor};

use crate::experiment::{
    build_operator, build_phantom, factorfit_settings, metric_settings, noise_sigma,
    partition_settings, solver_err, solver_settings, CliError, ContextKind, Experiment, Method,
};

pub fn run(exp: &Experiment, publish: bool) -> Result<i32, CliError> {
    exp.ensure_out_dir()?;
    if publish {
        let stamp = exp.out_dir.join("verify.ok");
        if !stamp.exists() {
            return Err(CliError::Verification(format!(
                "--publish requires a green verify stamp at {}; run `partfact verify` first",
                stamp.display()
            )));
        }
    }

    let built = build_operator(exp, &exp.config_dir())?;
    let op = built.as_linop();
    let truth = build_phantom(exp)?;
    if truth.shape() != op.in_shape() {
        return Err(CliError::Config(format!(
            "phantom shape {:?} does not match operator domain {:?}",
            truth.shape(),
            op.in_shape()
        )));
    }
    let metrics_cfg = metric_settings(exp)?;
    let settings = solver_settings(exp)?;

    // Measurements: forward model plus seeded Gaussian noise.
    let clean = op.apply(&truth).map_err(solver_err)?;
    let sigma = noise_sigma(exp)?;
    let mut noise_rng = exp.rng_for("noise");
    let y = add_gaussian_noise(&clean, sigma, &mut noise_rng).map_err(solver_err)?;

    // Fitted factor: loaded from file, or fitted on the fly.
    let factor: Option<DiagCirculantFactor> = if settings.use_factor {
        match &settings.factor_file {
            Some(file) => {
                let path = if std::path::Path::new(file).is_absolute() {
                    std::path::PathBuf::from(file)
                } else {
                    exp.out_dir.join(file)
                };
                Some(load_factor(&path).map_err(|e| {
                    CliError::Config(format!("cannot load factor {}: {e}", path.display()))
                })?)
            }
            None => {
                let fit_cfg = factorfit_settings(exp)?.config;
                let target = NormalOperator::new(op);
                println!(
                    "fitting {} factor on the fly ({} steps)...",
                    fit_cfg.variant, fit_cfg.steps
                );
                let (factor, _) =
                    partfact_core::factorfit::fit_factor(&target, &fit_cfg).map_err(solver_err)?;
                Some(factor)
            }
        }
    } else {
        None
    };

    let eta = match settings.eta {
        Some(e) => e,
        None => step_size_from_power_iteration(op, exp.rng_for("step-size").next_u64())
            .map_err(solver_err)?,
    };
    let monitor = Monitor {
        measurement: Some((op, &y)),
        reference: Some((&truth, metrics_cfg.peak)),
    };

    let start = std::time::Instant::now();
    partfact_core::alloc_track::reset_peak();
    let scratch_baseline = partfact_core::alloc_track::current_bytes();
    let (reconstruction, mut report, context_label): (Grid, SolveReport, &str) = match settings
        .method
    {
        Method::Adjoint => {
            let x = adjoint_scaled(op, &y).map_err(solver_err)?;
            (x, SolveReport::default(), "none")
        }
        Method::GradientDescent | Method::Unrolled => {
            let rhs = op.adjoint(&y).map_err(solver_err)?;
            let path = match &factor {
                Some(f) => NormalPath::Factor(f),
                None => NormalPath::ExactNormal(op),
            };
            let step = DataStep::new(path, eta, rhs).map_err(solver_err)?;
            let x0 = adjoint_scaled(op, &y).map_err(solver_err)?;
            let prior = if settings.method == Method::GradientDescent {
                partfact_core::solvers::Prior::Identity
            } else {
                settings.prior.clone()
            };
            let (x, report) =
                unrolled_pgd(&step, &prior, &x0, settings.iters, &monitor).map_err(solver_err)?;
            (x, report, "none")
        }
        Method::ConjugateGradient => {
            let rhs = op.adjoint(&y).map_err(solver_err)?;
            let sym_holder;
            let path = match &factor {
                Some(f) => {
                    sym_holder = f.symmetrize().map_err(solver_err)?;
                    NormalPath::SelfAdjoint(&sym_holder)
                }
                None => NormalPath::ExactNormal(op),
            };
            let out = conjugate_gradient(&path, &rhs, settings.cg_tol, settings.cg_max_iters)
                .map_err(solver_err)?;
            let mut report = SolveReport {
                iterations: out.iterations,
                residuals: out.residual_history.clone(),
                ..Default::default()
            };
            report.wall_seconds = start.elapsed().as_secs_f64();
            (out.x, report, "none")
        }
        Method::FistaTv => {
            let (x, report) = fista_tv(
                op,
                &y,
                settings.tv_lambda,
                settings.iters,
                eta,
                settings.tv_inner,
                &monitor,
            )
            .map_err(solver_err)?;
            (x, report, "none")
        }
        Method::TwoStep | Method::Step1Only => {
            let parts = partition_settings(exp, op.in_shape())?;
            let schedule = schedule_patches(op.in_shape(), &parts.patch, &parts.stride)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let context = match settings.context {
                ContextKind::FirstPass => ContextSource::FirstPass,
                ContextKind::Zero => ContextSource::Zero,
                ContextKind::GroundTruth => ContextSource::GroundTruth(&truth),
            };
            let data_mode = if settings.use_factor {
                DataMode::FactorNormal
            } else {
                DataMode::ExactNormal
            };
            let step2 = if settings.method == Method::TwoStep {
                Some(Step2Config {
                    iters: settings.step2_iters,
                    data: data_mode,
                    solver: if settings.step2_use_cg {
                        PatchSolver::ConjugateGradient {
                            tol: settings.cg_tol,
                            max_iters: settings.cg_max_iters,
                        }
                    } else {
                        PatchSolver::Unrolled
                    },
                })
            } else {
                None
            };
            let cfg = TwoStepConfig {
                step1_iters: settings.iters,
                step1_data: DataMode::ExactNormal,
                step2,
                eta: Some(eta),
                context,
                patch_init: if settings.patch_init_first_pass {
                    PatchInit::FirstPass
                } else {
                    PatchInit::AdjointScaled
                },
                seed: exp.rng_for("two-step").next_u64(),
            };
            let out = two_step_partitioned(op, &y, factor.as_ref(), &schedule, &settings.prior, &cfg, &monitor)
                .map_err(solver_err)?;
            let label = match settings.context {
                ContextKind::FirstPass => "first-pass",
                ContextKind::Zero => "zero",
                ContextKind::GroundTruth => "ground-truth",
            };
            (out.refined, out.report, label)
        }
    };
    let wall = start.elapsed().as_secs_f64();
    report.peak_scratch_bytes = Some(
        partfact_core::alloc_track::peak_bytes().saturating_sub(scratch_baseline) as u64,
    );

    // Final metrics on magnitudes (complex reconstructions vs real truth).
    let candidate = reconstruction.magnitude_if_complex();
    let final_mse = partfact_core::metrics::mse(&candidate, &truth).map_err(solver_err)?;
    let final_psnr =
        partfact_core::metrics::psnr(&candidate, &truth, metrics_cfg.peak).map_err(solver_err)?;
    let final_ssim = if truth.ndim() >= 2
        && truth.shape().iter().all(|&e| e >= partfact_core::metrics::SSIM_WINDOW)
    {
        partfact_core::metrics::ssim(&candidate, &truth, metrics_cfg.peak).map_err(solver_err)?
    } else {
        f64::NAN
    };

    // Artifacts.
    save_grid(
        &reconstruction,
        metrics_cfg.peak,
        &exp.out_dir.join("reconstruction.grid"),
    )
    .map_err(|e| CliError::Config(format!("cannot save reconstruction: {e}")))?;
    if reconstruction.ndim() == 2 && reconstruction.is_real() {
        save_pgm16(
            &reconstruction,
            metrics_cfg.peak,
            &exp.out_dir.join("reconstruction.pgm"),
        )
        .map_err(|e| CliError::Config(format!("cannot save preview: {e}")))?;
    }

    write_solve_report(exp, &report)?;
    write_metrics(
        exp,
        &settings,
        context_label,
        final_psnr,
        final_ssim,
        final_mse,
        metrics_cfg.per_slice,
    )?;
    if metrics_cfg.per_slice && truth.ndim() == 3 {
        let per = psnr_per_slice(&candidate, &truth, metrics_cfg.peak).map_err(solver_err)?;
        let mut out = std::fs::File::create(exp.out_dir.join("per_slice_psnr.csv"))
            .map_err(|e| CliError::Config(e.to_string()))?;
        writeln!(out, "slice,psnr_db").ok();
        for (i, p) in per.iter().enumerate() {
            writeln!(out, "{i},{p}").ok();
        }
    }
    let mut timing = std::fs::File::create(exp.out_dir.join("timings.csv"))
        .map_err(|e| CliError::Config(e.to_string()))?;
    writeln!(timing, "phase,seconds").ok();
    writeln!(timing, "solve,{}", report.wall_seconds).ok();
    writeln!(timing, "total,{wall}").ok();
    if let Some(peak) = report.peak_scratch_bytes {
        writeln!(timing, "peak_scratch_bytes,{peak}").ok();
    }

    println!(
        "reconstruction: psnr {final_psnr:.2} dB, ssim {final_ssim:.4}, mse {final_mse:.3e} -> {}",
        exp.out_dir.display()
    );
    Ok(0)
}

fn write_solve_report(exp: &Experiment, report: &SolveReport) -> Result<(), CliError> {
    let path = exp.out_dir.join("solve_report.csv");
    let mut out =
        std::fs::File::create(&path).map_err(|e| CliError::Config(e.to_string()))?;
    writeln!(out, "# config_hash={}", exp.config.text_hash).ok();
    writeln!(out, "iteration,residual,psnr_db,ssim").ok();
    for (k, residual) in report.residuals.iter().enumerate() {
        let metric: Option<&MetricReport> = report.metrics.get(k);
        match metric {
            Some(m) => writeln!(out, "{k},{residual:e},{},{}", m.psnr, m.ssim).ok(),
            None => writeln!(out, "{k},{residual:e},,").ok(),
        };
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn write_metrics(
    exp: &Experiment,
    settings: &crate::experiment::SolverSettings,
    context_label: &str,
    psnr: f64,
    ssim: f64,
    mse: f64,
    per_slice: bool,
) -> Result<(), CliError> {
    let path = exp.out_dir.join("metrics.txt");
    let method = format!("{:?}", settings.method).to_lowercase();
    let text = format!(
        "experiment = {}\nconfig_hash = {}\nmethod = {}\ndata_mode = {}\ncontext = {}\npsnr_mode = {}\npsnr_db = {}\nssim = {}\nmse = {}\n",
        exp.name,
        exp.config.text_hash,
        method,
        if settings.use_factor { "factor" } else { "exact" },
        context_label,
        if per_slice { "per-slice" } else { "volume" },
        psnr,
        ssim,
        mse,
    );
    std::fs::write(&path, text).map_err(|e| CliError::Config(e.to_string()))
}
