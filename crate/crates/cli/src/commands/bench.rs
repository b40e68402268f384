//! `bench`: timing and peak-scratch-memory curves over problem sizes.
//!
//! For each size: seconds per exact normal-operator step and per surrogate
//! factor step, seconds per prior step, dense-oracle build time at oracle
//! scale, and instrumented peak scratch bytes for full-volume vs
//! patch-restricted factor evaluation. Sizes above `max_elements` are
//! skipped with a note. Wall-clock numbers are machine-dependent by nature;
//! the CSV is for plotting, not for the determinism contract.

use std::io::Write;
use std::time::Instant;

use partfact_core::alloc_track::measure_peak;
use partfact_core::grid::{Field, Grid};
use partfact_core::linop::{ConvOperator, DenseOracle, LinearOperator, Radon2D};
use partfact_core::rng::{gaussian_probe, SeededRng};
use partfact_core::solvers::Prior;
use partfact_core::spectral::{DiagCirculantFactor, FactorVariant, PatchFactor};

use crate::experiment::{config_err, CliError, Experiment};

struct BenchRow {
    size: usize,
    elements: usize,
    exact_normal_s: f64,
    factor_s: f64,
    prior_s: f64,
    dense_build_s: Option<f64>,
    full_peak_bytes: usize,
    patch_peak_bytes: usize,
    note: &'static str,
}

fn time_reps<F: FnMut()>(mut f: F) -> f64 {
    // One warmup, then enough repetitions to spend ~10 ms.
    f();
    let t0 = Instant::now();
    let mut reps = 0u32;
    loop {
        f();
        reps += 1;
        if t0.elapsed().as_secs_f64() > 0.01 && reps >= 3 {
            break;
        }
        if reps >= 1000 {
            break;
        }
    }
    t0.elapsed().as_secs_f64() / reps as f64
}

pub fn run(exp: &Experiment) -> Result<i32, CliError> {
    exp.ensure_out_dir()?;
    let cfg = &exp.config;
    let sizes = cfg
        .get_usize_list("bench", "sizes")?
        .unwrap_or_else(|| vec![16, 32, 64]);
    let rank = cfg.get_usize("bench", "rank")?.unwrap_or(2);
    if !(1..=3).contains(&rank) {
        return Err(CliError::Config(format!("bench rank must be 1..=3, got {rank}")));
    }
    let patch = cfg.get_usize("bench", "patch")?.unwrap_or(8);
    let max_elements = cfg.get_usize("bench", "max_elements")?.unwrap_or(1 << 22);
    let kind = cfg.get("operator", "kind").unwrap_or("radon2d");
    let angle_count = cfg.get_usize("operator", "angle_count")?.unwrap_or(30);

    let mut rows = Vec::new();
    for &size in &sizes {
        let shape = vec![size; rank];
        let elements: usize = shape.iter().product();
        if elements > max_elements {
            rows.push(BenchRow {
                size,
                elements,
                exact_normal_s: f64::NAN,
                factor_s: f64::NAN,
                prior_s: f64::NAN,
                dense_build_s: None,
                full_peak_bytes: 0,
                patch_peak_bytes: 0,
                note: "skipped: exceeds max_elements",
            });
            continue;
        }
        let mut rng = SeededRng::new(exp.seed ^ size as u64);

        // Exact operator for the data step.
        let exact: Box<dyn LinearOperator> = match (kind, rank) {
            ("radon2d", 2) => Box::new(
                Radon2D::new(size, &Radon2D::uniform_angles(angle_count), (3 * size) / 2)
                    .map_err(config_err)?,
            ),
            _ => {
                // Fallback: separable blur, any rank.
                let kernel_extent = 5.min(size | 1);
                let mut taps = vec![0.0; kernel_extent.pow(rank as u32)];
                let kshape = vec![kernel_extent; rank];
                for (flat, t) in taps.iter_mut().enumerate() {
                    let mut rem = flat;
                    let mut r2 = 0.0;
                    for d in 0..rank {
                        let stride: usize = kshape[d + 1..].iter().product();
                        let i = rem / stride;
                        rem %= stride;
                        let o = i as f64 - (kernel_extent / 2) as f64;
                        r2 += o * o;
                    }
                    *t = (-0.5 * r2).exp();
                }
                let kernel = Grid::from_real(&kshape, taps).map_err(config_err)?;
                Box::new(ConvOperator::new(&kernel, &shape).map_err(config_err)?)
            }
        };

        let x = gaussian_probe(&shape, Field::Real, &mut rng).map_err(config_err)?;
        let exact_normal_s = time_reps(|| {
            let _ = exact.normal_apply(&x).unwrap();
        });

        // Surrogate factor of matching shape; timing depends on shape only,
        // so random parameters serve.
        let m = gaussian_probe(&shape, Field::Complex, &mut rng).map_err(config_err)?;
        let lambda = gaussian_probe(&shape, Field::Complex, &mut rng).map_err(config_err)?;
        let factor =
            DiagCirculantFactor::new(m, lambda, FactorVariant::Plain).map_err(config_err)?;
        let factor_s = time_reps(|| {
            let _ = factor.apply(&x).unwrap();
        });

        let prior = Prior::GaussianSmooth { sigma: 1.0 };
        let prior_s = time_reps(|| {
            let _ = prior.apply(&x).unwrap();
        });

        let dense_build_s = if elements <= partfact_core::tolerances::DENSE_ORACLE_MAX_UNKNOWNS {
            let t0 = Instant::now();
            let _ = DenseOracle::from_operator(exact.as_ref()).map_err(config_err)?;
            Some(t0.elapsed().as_secs_f64())
        } else {
            None
        };

        // Peak scratch: full factor evaluation vs patch-restricted path.
        let (_, full_peak_bytes) = measure_peak(|| factor.apply(&x).unwrap());
        let p = patch.min(size);
        let pf = PatchFactor::new(&factor, &vec![0; rank], &vec![p; rank]).map_err(config_err)?;
        let xp = gaussian_probe(&vec![p; rank], Field::Complex, &mut rng).map_err(config_err)?;
        let _ = pf.apply(&xp).map_err(config_err)?;
        let (_, patch_peak_bytes) = measure_peak(|| pf.apply(&xp).unwrap());

        rows.push(BenchRow {
            size,
            elements,
            exact_normal_s,
            factor_s,
            prior_s,
            dense_build_s,
            full_peak_bytes,
            patch_peak_bytes,
            note: "",
        });
        println!(
            "size {size}^{rank}: exact {exact_normal_s:.3e}s, factor {factor_s:.3e}s, prior {prior_s:.3e}s, peak full {full_peak_bytes} B vs patch {patch_peak_bytes} B"
        );
    }

    let path = exp.out_dir.join("bench.csv");
    let mut out = std::fs::File::create(&path).map_err(|e| CliError::Config(e.to_string()))?;
    writeln!(out, "# config_hash={}", exp.config.text_hash).ok();
    writeln!(
        out,
        "size,elements,exact_normal_s,factor_s,prior_s,dense_build_s,full_peak_bytes,patch_peak_bytes,note"
    )
    .ok();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.size,
            r.elements,
            r.exact_normal_s,
            r.factor_s,
            r.prior_s,
            r.dense_build_s.map_or(String::new(), |v| v.to_string()),
            r.full_peak_bytes,
            r.patch_peak_bytes,
            r.note
        )
        .ok();
    }
    println!("bench report -> {}", path.display());
    Ok(0)
}
