//! End-to-end tests of the command-line interface: exit codes, emitted
//! artifacts, fault injection, and flag semantics.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_partfact")
}

fn fresh_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("partfact-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

const SMALL_CT: &str = "\
[experiment]
name = t
seed = 11

[operator]
kind = radon2d
shape = 16 16
angle_count = 8
detector_bins = 25

[noise]
sigma = 0.1

[phantom]
kind = shepp2d
shape = 16 16

[solver]
method = gd
iters = 5
eta = auto

[metrics]
peak = 1.0
";

#[test]
fn verify_passes_on_sound_operators_and_writes_stamp() {
    let dir = fresh_dir("verify-pass");
    let cfg = write_config(
        &dir,
        "v.cfg",
        "[experiment]\nname = v\nseed = 3\n\n[operator]\nkind = inpainting\nshape = 12 12\nkeep_fraction = 0.5\n",
    );
    let out = run(&[
        "verify",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.join("verify_report.csv")).unwrap();
    assert!(report.contains("adjoint-dot"));
    assert!(report.contains("patch-exactness"));
    assert!(report.contains("frobenius-identity"));
    assert!(report.contains("gradient-check"));
    assert!(!report.contains(",fail,"));
    assert!(dir.join("verify.ok").exists());
}

#[test]
fn verify_catches_a_broken_adjoint() {
    let dir = fresh_dir("verify-broken");
    let cfg = write_config(
        &dir,
        "v.cfg",
        "[experiment]\nname = v\nseed = 3\n\n[operator]\nkind = broken-mask\nshape = 10 10\nkeep_fraction = 0.5\n",
    );
    let out = run(&[
        "verify",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let report = std::fs::read_to_string(dir.join("verify_report.csv")).unwrap();
    assert!(
        report.contains("adjoint-dot,config/broken-mask,fail"),
        "{report}"
    );
    assert!(!dir.join("verify.ok").exists());
}

#[test]
fn verify_filter_runs_a_single_suite() {
    let dir = fresh_dir("verify-filter");
    let cfg = write_config(
        &dir,
        "v.cfg",
        "[experiment]\nname = v\nseed = 3\n\n[operator]\nkind = inpainting\nshape = 8 8\n",
    );
    let out = run(&[
        "verify",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.to_str().unwrap(),
        "--filter",
        "patch-exactness",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let report = std::fs::read_to_string(dir.join("verify_report.csv")).unwrap();
    assert!(report.contains("patch-exactness"));
    assert!(!report.contains("adjoint-dot"));
    assert!(!report.contains("gradient-check"));
}

#[test]
fn config_errors_exit_2_with_line_diagnostics() {
    let dir = fresh_dir("config-error");
    let cfg = write_config(
        &dir,
        "bad.cfg",
        "[experiment]\nname = x\nseed = 5\n\n[operator]\nknid = typo\n",
    );
    let out = run(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bad.cfg:6"), "{stderr}");
    assert!(stderr.contains("knid"), "{stderr}");
}

#[test]
fn gd_with_zero_iterations_returns_the_scaled_adjoint_image() {
    let dir_a = fresh_dir("k0-gd");
    let dir_b = fresh_dir("k0-adj");
    let cfg_gd = write_config(&dir_a, "r.cfg", &SMALL_CT.replace("iters = 5", "iters = 0"));
    let cfg_adj = write_config(&dir_b, "r.cfg", &SMALL_CT.replace("method = gd", "method = adjoint"));
    let out = run(&[
        "reconstruct",
        "--config",
        cfg_gd.to_str().unwrap(),
        "--out-dir",
        dir_a.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&[
        "reconstruct",
        "--config",
        cfg_adj.to_str().unwrap(),
        "--out-dir",
        dir_b.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let a = std::fs::read(dir_a.join("reconstruction.grid")).unwrap();
    let b = std::fs::read(dir_b.join("reconstruction.grid")).unwrap();
    assert_eq!(a, b, "K = 0 output differs from the adjoint image");
}

#[test]
fn publish_requires_a_verify_stamp() {
    let dir = fresh_dir("publish");
    let cfg = write_config(&dir, "r.cfg", SMALL_CT);
    let out = run(&[
        "reconstruct",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.to_str().unwrap(),
        "--publish",
    ]);
    assert_eq!(out.status.code(), Some(1), "publish must fail without a stamp");
    // A green verify unlocks it.
    let out = run(&[
        "verify",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&[
        "reconstruct",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.to_str().unwrap(),
        "--publish",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn fit_factor_writes_manifest_trace_and_factor_grids() {
    let dir = fresh_dir("fit");
    let cfg = write_config(
        &dir,
        "f.cfg",
        "[experiment]\nname = f\nseed = 4\n\n[operator]\nkind = inpainting\nshape = 12 12\nkeep_fraction = 0.5\n\n[factorfit]\nsteps = 300\nbatch = 4\nlr = 2e-2\nseed = 1\n",
    );
    let out = run(&[
        "fit-factor",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["factor.factor", "factor.m.grid", "factor.lambda.grid", "fit_trace.csv"] {
        assert!(dir.join(file).exists(), "missing {file}");
    }
    let manifest = std::fs::read_to_string(dir.join("factor.factor")).unwrap();
    assert!(manifest.contains("variant = plain"));
    assert!(manifest.contains("oracle_loss"));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("frobenius oracle"), "{stdout}");
}

#[test]
fn sandwich_fit_records_the_variant_tag() {
    let dir = fresh_dir("fit-sandwich");
    let cfg = write_config(
        &dir,
        "f.cfg",
        "[experiment]\nname = f\nseed = 4\n\n[operator]\nkind = mri\nshape = 8 8\ncoils = 1\naccel = 2\nnormalized = false\n\n[factorfit]\nvariant = sandwich\nsteps = 200\nseed = 2\n",
    );
    let out = run(&[
        "fit-factor",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = std::fs::read_to_string(dir.join("factor.factor")).unwrap();
    assert!(manifest.contains("variant = sandwich-mri"), "{manifest}");
}

#[test]
fn two_step_and_step1_only_emit_paired_metrics() {
    let base = "\
[experiment]
name = pair
seed = 21

[operator]
kind = radon2d
shape = 24 24
angle_count = 12
detector_bins = 37

[noise]
sigma = 0.5

[phantom]
kind = shepp2d
shape = 24 24

[partition]
patch = 8 8
stride = 8 8

[solver]
method = two-step
iters = 2
step2_iters = 4
eta = auto
prior = gaussian:0.5

[metrics]
peak = 1.0
";
    let dir_two = fresh_dir("pair-two");
    let dir_one = fresh_dir("pair-one");
    let cfg_two = write_config(&dir_two, "p.cfg", base);
    let cfg_one = write_config(&dir_one, "p.cfg", &base.replace("method = two-step", "method = step1-only"));
    for (cfg, dir) in [(&cfg_two, &dir_two), (&cfg_one, &dir_one)] {
        let out = run(&[
            "reconstruct",
            "--config",
            cfg.to_str().unwrap(),
            "--out-dir",
            dir.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let two = std::fs::read_to_string(dir_two.join("metrics.txt")).unwrap();
    let one = std::fs::read_to_string(dir_one.join("metrics.txt")).unwrap();
    assert!(two.contains("method = twostep"));
    assert!(one.contains("method = step1only"));
    assert!(two.contains("psnr_db = "));
    assert!(one.contains("psnr_db = "));
}

#[test]
fn operators_load_masks_and_kernels_from_grid_files() {
    use partfact_core::grid::Grid;
    use partfact_core::gridio::save_grid;

    let dir = fresh_dir("grid-files");
    // Checkerboard mask written in the grid format.
    let bits: Vec<f64> = (0..64).map(|i| ((i / 8 + i % 8) % 2) as f64).collect();
    let mask = Grid::from_real(&[8, 8], bits).unwrap();
    save_grid(&mask, 1.0, &dir.join("mask.grid")).unwrap();
    // Small centered blur kernel.
    let kernel = Grid::from_real(&[3], vec![0.25, 0.5, 0.25]).unwrap();
    save_grid(&kernel, 1.0, &dir.join("kernel.grid")).unwrap();

    let cfg = write_config(
        &dir,
        "m.cfg",
        "[experiment]\nname = gm\nseed = 2\n\n[operator]\nkind = inpainting\nshape = 8 8\nmask_file = mask.grid\n\n[phantom]\nkind = shepp2d\nshape = 8 8\n\n[solver]\nmethod = cg\ncg_tol = 1e-10\n",
    );
    let out = run(&[
        "reconstruct",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let cfg = write_config(
        &dir,
        "k.cfg",
        "[experiment]\nname = gk\nseed = 2\n\n[operator]\nkind = deconvolution\nshape = 16\nkernel_file = kernel.grid\n\n[phantom]\nkind = piecewise1d\nshape = 16\n\n[solver]\nmethod = gd\niters = 5\neta = auto\n",
    );
    let out = run(&[
        "reconstruct",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    // A missing file is a config error (exit 2).
    let cfg = write_config(
        &dir,
        "missing.cfg",
        "[experiment]\nname = gm\nseed = 2\n\n[operator]\nkind = inpainting\nshape = 8 8\nmask_file = nope.grid\n\n[phantom]\nkind = shepp2d\nshape = 8 8\n\n[solver]\nmethod = adjoint\n",
    );
    let out = run(&[
        "reconstruct",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_writes_timing_and_memory_rows() {
    let dir = fresh_dir("bench");
    let cfg = write_config(
        &dir,
        "b.cfg",
        "[experiment]\nname = b\nseed = 5\n\n[operator]\nkind = radon2d\nshape = 16 16\nangle_count = 6\n\n[bench]\nsizes = 8 16\nrank = 2\npatch = 4\nmax_elements = 4096\n",
    );
    let out = run(&[
        "bench",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("bench.csv")).unwrap();
    assert!(csv.lines().count() >= 4, "{csv}");
    assert!(csv.contains("full_peak_bytes"));
}

#[test]
fn report_emits_gnuplot_data() {
    let dir = fresh_dir("report");
    let csv = dir.join("r.csv");
    std::fs::write(&csv, "# config_hash=x\niteration,residual\n0,1.5\n1,0.7\n").unwrap();
    let out = run(&["report", "--csv", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let dat = std::fs::read_to_string(dir.join("r.dat")).unwrap();
    assert!(dat.contains("0 1.5"), "{dat}");
    assert!(dat.contains("# iteration residual"), "{dat}");
}

#[test]
fn per_slice_metrics_for_volumes() {
    let dir = fresh_dir("per-slice");
    let cfg = write_config(
        &dir,
        "v.cfg",
        "\
[experiment]
name = v3
seed = 8

[operator]
kind = deconvolution
shape = 8 8 8
kernel_extent = 3
kernel_sigma = 0.8

[phantom]
kind = blobs3d
shape = 8 8 8

[solver]
method = gd
iters = 4
eta = auto

[metrics]
peak = 1.0
per_slice = true
",
    );
    let out = run(&[
        "reconstruct",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let per = std::fs::read_to_string(dir.join("per_slice_psnr.csv")).unwrap();
    assert_eq!(per.lines().count(), 9, "{per}"); // header + 8 slices
    let metrics = std::fs::read_to_string(dir.join("metrics.txt")).unwrap();
    assert!(metrics.contains("psnr_mode = per-slice"));
}
