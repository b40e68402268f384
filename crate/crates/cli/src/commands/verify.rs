//! `verify`: run the numerical property suites and emit a pass/fail CSV.
//!
//! Suites: adjoint-dot, linearity, dense-oracle, patch-exactness,
//! frobenius-identity, gradient-check. The battery always covers every
//! shipped operator kind at desk scale and additionally includes the
//! operator described by the config. A `verify.ok` stamp (containing the
//! config hash) is written only when every case passes; `reconstruct
//! --publish` requires that stamp.

use std::io::Write;
use std::path::Path;

use partfact_core::factorfit::{frobenius_oracle, gradient_check_max_rel, monte_carlo_loss};
use partfact_core::grid::{rel_l2_diff, Field, Grid};
use partfact_core::linop::{
    dot_test, linearity_test, ConvOperator, DenseOracle, LinearOperator, MaskOperator,
    MriOperator, NormalOperator, Radon2D,
};
use partfact_core::partition::Selection;
use partfact_core::rng::{gaussian_probe, SeededRng};
use partfact_core::spectral::{DiagCirculantFactor, FactorVariant};
use partfact_core::tolerances::{
    ADJOINT_REL, DENSE_ORACLE_REL, GRADIENT_CHECK_REL, LINEARITY_REL, PATCH_EXACT_REL,
};

use crate::experiment::{build_operator, BuiltOperator, CliError, Experiment};

pub struct SuiteRow {
    pub suite: &'static str,
    pub case: String,
    pub pass: bool,
    pub detail: String,
}

type OperatorBattery = Vec<(String, Box<dyn LinearOperator>)>;

fn battery(exp: &Experiment) -> Result<OperatorBattery, CliError> {
    let mut rng = SeededRng::new(11_000);
    let mut ops: Vec<(String, Box<dyn LinearOperator>)> = Vec::new();
    let bits: Vec<f64> = (0..144).map(|_| (rng.next_f64() < 0.5) as u8 as f64).collect();
    ops.push((
        "builtin/inpainting-12x12".into(),
        Box::new(MaskOperator::new(Grid::from_real(&[12, 12], bits).unwrap()).unwrap()),
    ));
    let kernel = Grid::from_real(&[3, 3], vec![0.05, 0.1, 0.05, 0.1, 0.4, 0.1, 0.05, 0.1, 0.05])
        .unwrap();
    ops.push((
        "builtin/deconvolution-10x10".into(),
        Box::new(ConvOperator::new(&kernel, &[10, 10]).unwrap()),
    ));
    ops.push((
        "builtin/radon-12x12-7views".into(),
        Box::new(Radon2D::new(12, &Radon2D::uniform_angles(7), 19).unwrap()),
    ));
    let s1 = gaussian_probe(&[8, 8], Field::Complex, &mut rng).unwrap();
    let s2 = gaussian_probe(&[8, 8], Field::Complex, &mut rng).unwrap();
    let kbits: Vec<f64> = (0..64).map(|_| (rng.next_f64() < 0.4) as u8 as f64).collect();
    let kmask = Grid::from_real(&[8, 8], kbits).unwrap();
    ops.push((
        "builtin/mri-2coil-8x8".into(),
        Box::new(MriOperator::new(&[s1, s2], &kmask, None, true).unwrap()),
    ));

    if exp.config.has_section("operator") {
        let built = build_operator(exp, &exp.config_dir())?;
        let name = format!("config/{}", built.kind_name());
        let boxed: Box<dyn LinearOperator> = match built {
            BuiltOperator::Mask(op) => Box::new(op),
            BuiltOperator::BrokenMask(op) => Box::new(op),
            BuiltOperator::Conv(op) => Box::new(op),
            BuiltOperator::Radon(op) => Box::new(op),
            BuiltOperator::Mri(op) => Box::new(op),
        };
        ops.push((name, boxed));
    }
    Ok(ops)
}

fn run_operator_suites(rows: &mut Vec<SuiteRow>, ops: &[(String, Box<dyn LinearOperator>)]) {
    for (name, op) in ops {
        let mut rng = SeededRng::new(12_000);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            match dot_test(op.as_ref(), &mut rng) {
                Ok(d) => worst = worst.max(d),
                Err(e) => {
                    worst = f64::INFINITY;
                    rows.push(SuiteRow {
                        suite: "adjoint-dot",
                        case: name.clone(),
                        pass: false,
                        detail: e.to_string(),
                    });
                    break;
                }
            }
        }
        if worst.is_finite() {
            rows.push(SuiteRow {
                suite: "adjoint-dot",
                case: name.clone(),
                pass: worst < ADJOINT_REL,
                detail: format!("worst relative defect {worst:.3e} over 100 pairs"),
            });
        }

        let mut worst = 0.0f64;
        for _ in 0..20 {
            worst = worst.max(linearity_test(op.as_ref(), &mut rng).unwrap_or(f64::INFINITY));
        }
        rows.push(SuiteRow {
            suite: "linearity",
            case: name.clone(),
            pass: worst < LINEARITY_REL,
            detail: format!("worst relative defect {worst:.3e} over 20 pairs"),
        });

        let unknowns: usize = op.in_shape().iter().product();
        if unknowns <= partfact_core::tolerances::DENSE_ORACLE_MAX_UNKNOWNS {
            let pass_detail = (|| -> Result<(bool, String), partfact_core::CoreError> {
                let dense = DenseOracle::from_operator(op.as_ref())?;
                let mut worst = 0.0f64;
                for _ in 0..3 {
                    let x = gaussian_probe(op.in_shape(), op.in_field(), &mut rng)?;
                    let fast = op.apply(&x)?.to_complex();
                    let slow =
                        Grid::from_complex(op.out_shape(), dense.matvec(&x.complex_values()))?;
                    worst = worst.max(rel_l2_diff(&fast, &slow));
                    let y = gaussian_probe(op.out_shape(), op.out_field(), &mut rng)?;
                    let fast = op.adjoint(&y)?.to_complex();
                    let slow =
                        Grid::from_complex(op.in_shape(), dense.rmatvec(&y.complex_values()))?;
                    worst = worst.max(rel_l2_diff(&fast, &slow));
                }
                Ok((
                    worst < DENSE_ORACLE_REL,
                    format!("worst relative defect {worst:.3e}"),
                ))
            })();
            match pass_detail {
                Ok((pass, detail)) => rows.push(SuiteRow {
                    suite: "dense-oracle",
                    case: name.clone(),
                    pass,
                    detail,
                }),
                Err(e) => rows.push(SuiteRow {
                    suite: "dense-oracle",
                    case: name.clone(),
                    pass: false,
                    detail: e.to_string(),
                }),
            }
        }
    }
}

fn run_patch_exactness(rows: &mut Vec<SuiteRow>) {
    let volumes: [&[usize]; 3] = [&[37], &[12, 18], &[6, 5, 8]];
    let mut case = 0u64;
    for vol_shape in volumes {
        for variant in [FactorVariant::Plain, FactorVariant::SandwichMri] {
            for _ in 0..5 {
                case += 1;
                let mut rng = SeededRng::new(13_000 + case);
                let m = gaussian_probe(vol_shape, Field::Complex, &mut rng).unwrap();
                let lambda = gaussian_probe(vol_shape, Field::Complex, &mut rng).unwrap();
                let factor = DiagCirculantFactor::new(m, lambda, variant).unwrap();
                let extents: Vec<usize> = vol_shape
                    .iter()
                    .map(|&n| 1 + (rng.next_u64() % n as u64) as usize)
                    .collect();
                let origin: Vec<usize> = vol_shape
                    .iter()
                    .zip(&extents)
                    .map(|(&n, &p)| (rng.next_u64() % (n - p + 1) as u64) as usize)
                    .collect();
                let sel = Selection::new(vol_shape, &origin, &extents).unwrap();
                let x = gaussian_probe(&extents, Field::Complex, &mut rng).unwrap();
                let fast = sel.patch_factor(&factor).unwrap().apply(&x).unwrap();
                let slow = sel
                    .extract(&factor.apply(&sel.embed(&x).unwrap()).unwrap())
                    .unwrap();
                let defect = rel_l2_diff(&fast, &slow);
                rows.push(SuiteRow {
                    suite: "patch-exactness",
                    case: format!("{vol_shape:?}/{variant}/{case}"),
                    pass: defect < PATCH_EXACT_REL,
                    detail: format!("relative defect {defect:.3e}"),
                });
            }
        }
    }
}

fn run_frobenius_identity(rows: &mut Vec<SuiteRow>) {
    let shape = [16usize, 16];
    let mut rng = SeededRng::new(14_000);
    let bits: Vec<f64> = (0..256).map(|_| (rng.next_f64() < 0.5) as u8 as f64).collect();
    let mask_op = MaskOperator::new(Grid::from_real(&shape, bits).unwrap()).unwrap();
    let plain_target = NormalOperator::new(&mask_op);
    let m = gaussian_probe(&shape, Field::Real, &mut rng).unwrap();
    let lambda = gaussian_probe(&shape, Field::Complex, &mut rng).unwrap();
    let plain = DiagCirculantFactor::new(m, lambda, FactorVariant::Plain).unwrap();

    let sens = gaussian_probe(&shape, Field::Complex, &mut rng).unwrap();
    let kbits: Vec<f64> = (0..256).map(|_| (rng.next_f64() < 0.4) as u8 as f64).collect();
    let kmask = Grid::from_real(&shape, kbits).unwrap();
    let mri = MriOperator::new(&[sens], &kmask, None, false).unwrap();
    let mri_target = NormalOperator::new(&mri);
    let m = gaussian_probe(&shape, Field::Complex, &mut rng).unwrap();
    let lambda = gaussian_probe(&shape, Field::Complex, &mut rng).unwrap();
    let sandwich = DiagCirculantFactor::new(m, lambda, FactorVariant::SandwichMri).unwrap();

    let cases: [(&str, &dyn LinearOperator, &DiagCirculantFactor); 2] = [
        ("plain", &plain_target, &plain),
        ("sandwich", &mri_target, &sandwich),
    ];
    for (label, target, factor) in cases {
        let frob = match frobenius_oracle(target, factor) {
            Ok(f) => f,
            Err(e) => {
                rows.push(SuiteRow {
                    suite: "frobenius-identity",
                    case: label.into(),
                    pass: false,
                    detail: e.to_string(),
                });
                continue;
            }
        };
        for n_probes in [100usize, 1000, 10_000] {
            let mut rng = SeededRng::new(14_500);
            let (mean, se) = monte_carlo_loss(target, factor, n_probes, &mut rng).unwrap();
            let pass = (mean - frob).abs() <= 3.0 * se;
            rows.push(SuiteRow {
                suite: "frobenius-identity",
                case: format!("{label}/N={n_probes}"),
                pass,
                detail: format!("mc {mean:.6e} vs frobenius {frob:.6e} (se {se:.2e})"),
            });
        }
    }
}

fn run_gradient_checks(rows: &mut Vec<SuiteRow>) {
    for variant in [FactorVariant::Plain, FactorVariant::SandwichMri] {
        let mut worst = 0.0f64;
        for k in 0..20u64 {
            let shape: &[usize] = if k % 2 == 0 { &[7] } else { &[3, 4] };
            match gradient_check_max_rel(variant, shape, 15_000 + k) {
                Ok(rel) => worst = worst.max(rel),
                Err(e) => {
                    worst = f64::INFINITY;
                    rows.push(SuiteRow {
                        suite: "gradient-check",
                        case: format!("{variant}/{k}"),
                        pass: false,
                        detail: e.to_string(),
                    });
                }
            }
        }
        if worst.is_finite() {
            rows.push(SuiteRow {
                suite: "gradient-check",
                case: variant.to_string(),
                pass: worst < GRADIENT_CHECK_REL,
                detail: format!("worst relative error {worst:.3e} over 20 instances"),
            });
        }
    }
}

pub fn run(exp: &Experiment, filter: Option<&str>) -> Result<i32, CliError> {
    exp.ensure_out_dir()?;
    let known = [
        "adjoint-dot",
        "linearity",
        "dense-oracle",
        "patch-exactness",
        "frobenius-identity",
        "gradient-check",
    ];
    if let Some(f) = filter {
        if !known.contains(&f) {
            return Err(CliError::Config(format!(
                "unknown --filter '{f}' (known suites: {known:?})"
            )));
        }
    }
    let selected = |suite: &str| filter.is_none_or(|f| f == suite);

    let mut rows: Vec<SuiteRow> = Vec::new();
    if selected("adjoint-dot") || selected("linearity") || selected("dense-oracle") {
        let ops = battery(exp)?;
        run_operator_suites(&mut rows, &ops);
        rows.retain(|r| selected(r.suite));
    }
    if selected("patch-exactness") {
        run_patch_exactness(&mut rows);
    }
    if selected("frobenius-identity") {
        run_frobenius_identity(&mut rows);
    }
    if selected("gradient-check") {
        run_gradient_checks(&mut rows);
    }

    let csv_path = exp.out_dir.join("verify_report.csv");
    write_report(&csv_path, &rows, &exp.config.text_hash)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", csv_path.display())))?;

    let mut failures = 0usize;
    for row in &rows {
        if !row.pass {
            failures += 1;
            eprintln!("FAIL {} :: {} :: {}", row.suite, row.case, row.detail);
        }
    }
    println!(
        "verify: {} cases, {} failures (report: {})",
        rows.len(),
        failures,
        csv_path.display()
    );
    if failures == 0 && filter.is_none() {
        std::fs::write(exp.out_dir.join("verify.ok"), format!("{}\n", exp.config.text_hash))
            .map_err(|e| CliError::Config(format!("cannot write stamp: {e}")))?;
    }
    Ok(if failures == 0 { 0 } else { 1 })
}

fn write_report(path: &Path, rows: &[SuiteRow], config_hash: &str) -> std::io::Result<()> {
    let mut out = std::fs::File::create(path)?;
    writeln!(out, "# config_hash={config_hash}")?;
    writeln!(out, "suite,case,status,detail")?;
    for row in rows {
        let status = if row.pass { "pass" } else { "fail" };
        writeln!(
            out,
            "{},{},{},\"{}\"",
            row.suite,
            row.case,
            status,
            row.detail.replace('"', "'")
        )?;
    }
    Ok(())
}
