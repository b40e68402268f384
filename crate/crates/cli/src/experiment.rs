//! Shared experiment assembly: turning a parsed config into operators,
//! phantoms, noise, partitions and solver settings.

use std::path::{Path, PathBuf};

use partfact_core::error::CoreError;
use partfact_core::grid::{Field, Grid};
use partfact_core::gridio;
use partfact_core::linop::{
    ConvOperator, LinearOperator, MaskOperator, MriOperator, Radon2D,
};
use partfact_core::rng::SeededRng;
use partfact_core::solvers::Prior;
use partfact_core::spectral::FactorVariant;

use crate::config::{fnv1a_hex, Config, ConfigError};

/// Errors mapped onto the documented exit codes:
/// 0 pass, 1 verification failure, 2 config error, 3 solver failure.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Verification(String),
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Verification(m) => write!(f, "verification failure: {m}"),
            CliError::Solver(m) => write!(f, "solver failure: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.message)
    }
}

/// Core errors during problem *construction* are config errors; use
/// [`solver_err`] for errors raised while solving.
pub fn config_err(e: CoreError) -> CliError {
    CliError::Config(e.to_string())
}

pub fn solver_err(e: CoreError) -> CliError {
    match e {
        CoreError::FitDiverged { .. }
        | CoreError::SolverDiverged { .. }
        | CoreError::SolverBreakdown { .. } => CliError::Solver(e.to_string()),
        other => CliError::Config(other.to_string()),
    }
}

pub struct Experiment {
    pub config: Config,
    pub name: String,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub threads: usize,
}

impl Experiment {
    /// Resolve the experiment header. Precedence for the output directory
    /// and thread cap: command-line flag, then environment
    /// (PARTFACT_OUT_DIR / PARTFACT_THREADS), then config.
    pub fn new(
        config: Config,
        out_dir_flag: Option<&str>,
        threads_flag: Option<usize>,
    ) -> Result<Experiment, CliError> {
        let name = config
            .get("experiment", "name")
            .unwrap_or("experiment")
            .to_string();
        let seed = config.get_u64("experiment", "seed")?.ok_or_else(|| {
            CliError::Config(format!(
                "{}: [experiment] seed is mandatory (no wall-clock seeding)",
                config.source
            ))
        })?;
        let out_dir = out_dir_flag
            .map(str::to_string)
            .or_else(|| std::env::var("PARTFACT_OUT_DIR").ok())
            .or_else(|| config.get("experiment", "out_dir").map(str::to_string))
            .unwrap_or_else(|| format!("results/{name}"));
        let threads = match threads_flag {
            Some(t) => t,
            None => match std::env::var("PARTFACT_THREADS").ok() {
                Some(v) => v.parse().map_err(|_| {
                    CliError::Config(format!("PARTFACT_THREADS = '{v}' is not an integer"))
                })?,
                None => config.get_usize("experiment", "threads")?.unwrap_or(0),
            },
        };
        Ok(Experiment {
            config,
            name,
            out_dir: PathBuf::from(out_dir),
            seed,
            threads,
        })
    }

    /// Deterministic per-purpose random stream: the experiment seed XORed
    /// with the FNV hash of the stream name.
    pub fn rng_for(&self, stream: &str) -> SeededRng {
        let tag = u64::from_str_radix(&fnv1a_hex(stream), 16).unwrap();
        SeededRng::new(self.seed ^ tag)
    }

    /// Directory of the config file; referenced input grids resolve here.
    pub fn config_dir(&self) -> PathBuf {
        Path::new(&self.config.source)
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn ensure_out_dir(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out_dir)
            .map_err(|e| CliError::Config(format!("cannot create {}: {e}", self.out_dir.display())))
    }
}

/// Fault-injection fixture: a masking operator whose adjoint is
/// deliberately mis-scaled so the dot test must fail. Only reachable
/// through `kind = broken-mask`; exists to prove the verifier catches
/// broken adjoints.
pub struct BrokenAdjointMask {
    inner: MaskOperator,
}

impl LinearOperator for BrokenAdjointMask {
    fn in_shape(&self) -> &[usize] {
        self.inner.in_shape()
    }
    fn out_shape(&self) -> &[usize] {
        self.inner.out_shape()
    }
    fn in_field(&self) -> Field {
        Field::Real
    }
    fn out_field(&self) -> Field {
        Field::Real
    }
    fn apply(&self, x: &Grid) -> partfact_core::Result<Grid> {
        self.inner.apply(x)
    }
    fn adjoint(&self, y: &Grid) -> partfact_core::Result<Grid> {
        let mut out = self.inner.adjoint(y)?;
        out.scale(1.01);
        Ok(out)
    }
}

pub enum BuiltOperator {
    Mask(MaskOperator),
    BrokenMask(BrokenAdjointMask),
    Conv(ConvOperator),
    Radon(Radon2D),
    Mri(MriOperator),
}

impl BuiltOperator {
    pub fn as_linop(&self) -> &dyn LinearOperator {
        match self {
            BuiltOperator::Mask(op) => op,
            BuiltOperator::BrokenMask(op) => op,
            BuiltOperator::Conv(op) => op,
            BuiltOperator::Radon(op) => op,
            BuiltOperator::Mri(op) => op,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            BuiltOperator::Mask(_) => "inpainting",
            BuiltOperator::BrokenMask(_) => "broken-mask",
            BuiltOperator::Conv(_) => "deconvolution",
            BuiltOperator::Radon(_) => "radon2d",
            BuiltOperator::Mri(_) => "mri",
        }
    }
}

fn load_grid_rel(base: &Path, file: &str) -> Result<Grid, CliError> {
    let path = if Path::new(file).is_absolute() {
        PathBuf::from(file)
    } else {
        base.join(file)
    };
    let (grid, _) = gridio::load_grid(&path)
        .map_err(|e| CliError::Config(format!("cannot load grid {}: {e}", path.display())))?;
    Ok(grid)
}

fn random_binary_mask(shape: &[usize], keep: f64, rng: &mut SeededRng) -> Result<Grid, CliError> {
    if !(0.0..=1.0).contains(&keep) {
        return Err(CliError::Config(format!(
            "keep fraction {keep} outside [0, 1]"
        )));
    }
    let n: usize = shape.iter().product();
    let bits: Vec<f64> = (0..n).map(|_| (rng.next_f64() < keep) as u8 as f64).collect();
    Grid::from_real(shape, bits).map_err(config_err)
}

fn gaussian_kernel(extent: usize, rank: usize, sigma: f64) -> Result<Grid, CliError> {
    if extent.is_multiple_of(2) || extent == 0 {
        return Err(CliError::Config(format!(
            "kernel_extent must be odd and positive, got {extent}"
        )));
    }
    if sigma <= 0.0 {
        return Err(CliError::Config(format!("kernel_sigma must be positive, got {sigma}")));
    }
    let shape = vec![extent; rank];
    let n = extent.pow(rank as u32);
    let mut taps = vec![0.0f64; n];
    for (flat, t) in taps.iter_mut().enumerate() {
        let mut rem = flat;
        let mut r2 = 0.0;
        for d in 0..rank {
            let stride = extent.pow((rank - 1 - d) as u32);
            let i = rem / stride;
            rem %= stride;
            let o = i as f64 - (extent / 2) as f64;
            r2 += o * o;
        }
        *t = (-0.5 * r2 / (sigma * sigma)).exp();
    }
    let mass: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= mass);
    Grid::from_real(&shape, taps).map_err(config_err)
}

/// Smooth synthetic coil sensitivities: per-coil Gaussian magnitude bumps
/// at staggered positions with a mild phase ramp.
fn synthetic_sensitivities(
    shape: &[usize],
    coils: usize,
    rng: &mut SeededRng,
) -> Result<Vec<Grid>, CliError> {
    use partfact_core::num_complex::Complex64;
    let rank = shape.len();
    let n: usize = shape.iter().product();
    let mut out = Vec::with_capacity(coils);
    for c in 0..coils {
        let angle = 2.0 * std::f64::consts::PI * (c as f64 + rng.next_f64() * 0.25) / coils as f64;
        // Bump center on a circle in the first two axes (or the line in 1-d).
        let center: Vec<f64> = (0..rank)
            .map(|d| match d {
                0 => 0.5 + 0.3 * angle.cos(),
                1 => 0.5 + 0.3 * angle.sin(),
                _ => 0.5,
            })
            .collect();
        let width = 0.45 + 0.1 * rng.next_f64();
        let ramp = 0.5 * rng.next_f64();
        let mut data = Vec::with_capacity(n);
        for flat in 0..n {
            let mut rem = flat;
            let mut r2 = 0.0;
            let mut ramp_arg = 0.0;
            for d in 0..rank {
                let stride: usize = shape[d + 1..].iter().product();
                let pos = ((rem / stride) as f64 + 0.5) / shape[d] as f64;
                rem %= stride;
                r2 += (pos - center[d]) * (pos - center[d]);
                ramp_arg += pos;
            }
            let mag = 0.4 + (-0.5 * r2 / (width * width)).exp();
            data.push(Complex64::from_polar(mag, ramp * ramp_arg));
        }
        out.push(Grid::from_complex(shape, data).map_err(config_err)?);
    }
    Ok(out)
}

/// Build the forward operator described by the `[operator]` section.
pub fn build_operator(exp: &Experiment, base: &Path) -> Result<BuiltOperator, CliError> {
    let cfg = &exp.config;
    let kind = cfg.require("operator", "kind")?;
    let shape = cfg
        .get_usize_list("operator", "shape")?
        .ok_or_else(|| CliError::Config("missing [operator] shape".into()))?;
    let mut rng = exp.rng_for("operator");

    match kind {
        "inpainting" | "broken-mask" => {
            let mask = match cfg.get("operator", "mask_file") {
                Some(file) => load_grid_rel(base, file)?,
                None => {
                    let keep = cfg.get_f64("operator", "keep_fraction")?.unwrap_or(0.5);
                    random_binary_mask(&shape, keep, &mut rng)?
                }
            };
            let inner = MaskOperator::new(mask).map_err(config_err)?;
            if kind == "broken-mask" {
                Ok(BuiltOperator::BrokenMask(BrokenAdjointMask { inner }))
            } else {
                Ok(BuiltOperator::Mask(inner))
            }
        }
        "deconvolution" => {
            let kernel = match cfg.get("operator", "kernel_file") {
                Some(file) => load_grid_rel(base, file)?,
                None => {
                    let extent = cfg.get_usize("operator", "kernel_extent")?.unwrap_or(5);
                    let sigma = cfg.get_f64("operator", "kernel_sigma")?.unwrap_or(1.0);
                    gaussian_kernel(extent, shape.len(), sigma)?
                }
            };
            Ok(BuiltOperator::Conv(
                ConvOperator::new(&kernel, &shape).map_err(config_err)?,
            ))
        }
        "radon2d" => {
            if shape.len() != 2 || shape[0] != shape[1] {
                return Err(CliError::Config(format!(
                    "radon2d needs a square 2-d shape, got {shape:?}"
                )));
            }
            let angles = match cfg.get_f64_list("operator", "angles")? {
                Some(a) => a,
                None => {
                    let count = cfg.get_usize("operator", "angle_count")?.ok_or_else(|| {
                        CliError::Config("radon2d needs 'angles' or 'angle_count'".into())
                    })?;
                    Radon2D::uniform_angles(count)
                }
            };
            let bins = cfg
                .get_usize("operator", "detector_bins")?
                .unwrap_or_else(|| (1.5 * shape[0] as f64).ceil() as usize);
            Ok(BuiltOperator::Radon(
                Radon2D::new(shape[0], &angles, bins).map_err(config_err)?,
            ))
        }
        "mri" => {
            let coils = cfg.get_usize("operator", "coils")?.unwrap_or(1);
            let sens = match cfg.get("operator", "sens_files") {
                Some(files) => {
                    let mut grids = Vec::new();
                    for file in files.split_whitespace() {
                        grids.push(load_grid_rel(base, file)?);
                    }
                    grids
                }
                None => synthetic_sensitivities(&shape, coils, &mut rng)?,
            };
            let mask = match cfg.get("operator", "mask_file") {
                Some(file) => load_grid_rel(base, file)?,
                None => {
                    let accel = cfg.get_f64("operator", "accel")?.unwrap_or(1.0);
                    if accel < 1.0 {
                        return Err(CliError::Config(format!(
                            "acceleration must be >= 1, got {accel}"
                        )));
                    }
                    let mut mask = random_binary_mask(&shape, 1.0 / accel, &mut rng)?;
                    // Always keep the zero-frequency sample.
                    mask.real_slice_mut().map_err(config_err)?[0] = 1.0;
                    mask
                }
            };
            let normalized = cfg.get_bool("operator", "normalized")?.unwrap_or(true);
            let fft_axes = cfg.get_usize_list("operator", "fft_axes")?;
            Ok(BuiltOperator::Mri(
                MriOperator::new(&sens, &mask, fft_axes.as_deref(), normalized)
                    .map_err(config_err)?,
            ))
        }
        other => Err(CliError::Config(format!(
            "unknown operator kind '{other}' (inpainting, deconvolution, radon2d, mri, broken-mask)"
        ))),
    }
}

/// Ground-truth phantom per the `[phantom]` section.
pub fn build_phantom(exp: &Experiment) -> Result<Grid, CliError> {
    let kind = exp.config.require("phantom", "kind")?;
    let shape = exp
        .config
        .get_usize_list("phantom", "shape")?
        .ok_or_else(|| CliError::Config("missing [phantom] shape".into()))?;
    let mut rng = exp.rng_for("phantom");
    crate::phantom::make(kind, &shape, &mut rng).ok_or_else(|| {
        CliError::Config(format!(
            "unknown phantom kind '{kind}' (shepp2d, blobs3d, piecewise1d)"
        ))
    })
}

pub struct FactorFitSettings {
    pub config: partfact_core::factorfit::FitConfig,
}

pub fn factorfit_settings(exp: &Experiment) -> Result<FactorFitSettings, CliError> {
    let cfg = &exp.config;
    let variant = match cfg.get("factorfit", "variant").unwrap_or("plain") {
        "plain" => FactorVariant::Plain,
        "sandwich" => FactorVariant::SandwichMri,
        other => {
            return Err(CliError::Config(format!(
                "unknown factor variant '{other}' (plain, sandwich)"
            )))
        }
    };
    let mut fit = match variant {
        FactorVariant::Plain => partfact_core::factorfit::FitConfig::tomography(),
        FactorVariant::SandwichMri => partfact_core::factorfit::FitConfig::mri(),
    };
    if let Some(steps) = cfg.get_usize("factorfit", "steps")? {
        fit.steps = steps;
    }
    if let Some(batch) = cfg.get_usize("factorfit", "batch")? {
        fit.batch = batch;
    }
    if let Some(lr) = cfg.get_f64("factorfit", "lr")? {
        fit.lr = lr;
    }
    match cfg.get("factorfit", "optimizer").unwrap_or("adam") {
        "adam" => {}
        "gd" => fit.optimizer = partfact_core::factorfit::Optimizer::GradientDescent,
        other => {
            return Err(CliError::Config(format!(
                "unknown optimizer '{other}' (adam, gd)"
            )))
        }
    }
    fit.seed = match cfg.get_u64("factorfit", "seed")? {
        Some(s) => s,
        None => exp.rng_for("factorfit").next_u64(),
    };
    Ok(FactorFitSettings { config: fit })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Adjoint,
    GradientDescent,
    ConjugateGradient,
    FistaTv,
    Unrolled,
    TwoStep,
    Step1Only,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContextKind {
    FirstPass,
    Zero,
    GroundTruth,
}

pub struct SolverSettings {
    pub method: Method,
    pub iters: usize,
    pub eta: Option<f64>,
    pub prior: Prior,
    pub tv_lambda: f64,
    pub tv_inner: usize,
    pub step2_iters: usize,
    pub step2_use_cg: bool,
    pub use_factor: bool,
    pub factor_file: Option<String>,
    pub context: ContextKind,
    pub patch_init_first_pass: bool,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
}

pub fn solver_settings(exp: &Experiment) -> Result<SolverSettings, CliError> {
    let cfg = &exp.config;
    let method = match cfg.require("solver", "method")? {
        "adjoint" => Method::Adjoint,
        "gd" => Method::GradientDescent,
        "cg" => Method::ConjugateGradient,
        "fista-tv" => Method::FistaTv,
        "unrolled" => Method::Unrolled,
        "two-step" => Method::TwoStep,
        "step1-only" => Method::Step1Only,
        other => {
            return Err(CliError::Config(format!(
                "unknown solver method '{other}' (adjoint, gd, cg, fista-tv, unrolled, two-step, step1-only)"
            )))
        }
    };
    let prior = match cfg.get("solver", "prior").unwrap_or("identity") {
        "identity" => Prior::Identity,
        spec if spec.starts_with("gaussian:") => {
            let sigma: f64 = spec["gaussian:".len()..].parse().map_err(|_| {
                CliError::Config(format!("bad prior spec '{spec}' (gaussian:<sigma>)"))
            })?;
            Prior::GaussianSmooth { sigma }
        }
        spec if spec.starts_with("tv:") => {
            let rest = &spec["tv:".len()..];
            let (lambda, inner) = match rest.split_once(':') {
                Some((l, i)) => (l, i),
                None => (rest, "20"),
            };
            Prior::TvProx {
                lambda: lambda.parse().map_err(|_| {
                    CliError::Config(format!("bad prior spec '{spec}' (tv:<lambda>[:<inner>])"))
                })?,
                inner_iters: inner.parse().map_err(|_| {
                    CliError::Config(format!("bad prior spec '{spec}' (tv:<lambda>[:<inner>])"))
                })?,
            }
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown prior '{other}' (identity, gaussian:<sigma>, tv:<lambda>[:<inner>])"
            )))
        }
    };
    let eta = match cfg.get("solver", "eta") {
        None | Some("auto") => None,
        Some(v) => Some(v.parse().map_err(|_| {
            CliError::Config(format!("[solver] eta = '{v}' is neither 'auto' nor a number"))
        })?),
    };
    let context = match cfg.get("solver", "context").unwrap_or("first-pass") {
        "first-pass" => ContextKind::FirstPass,
        "zero" => ContextKind::Zero,
        "ground-truth" => ContextKind::GroundTruth,
        other => {
            return Err(CliError::Config(format!(
                "unknown context '{other}' (first-pass, zero, ground-truth)"
            )))
        }
    };
    let patch_init_first_pass = match cfg.get("solver", "patch_init").unwrap_or("adjoint") {
        "adjoint" => false,
        "first-pass" => true,
        other => {
            return Err(CliError::Config(format!(
                "unknown patch_init '{other}' (adjoint, first-pass)"
            )))
        }
    };
    let step2_use_cg = match cfg.get("solver", "step2_solver").unwrap_or("unrolled") {
        "unrolled" => false,
        "cg" => true,
        other => {
            return Err(CliError::Config(format!(
                "unknown step2_solver '{other}' (unrolled, cg)"
            )))
        }
    };
    let use_factor = match cfg.get("solver", "data_mode").unwrap_or("exact") {
        "exact" => false,
        "factor" => true,
        other => {
            return Err(CliError::Config(format!(
                "unknown data_mode '{other}' (exact, factor)"
            )))
        }
    };
    Ok(SolverSettings {
        method,
        iters: cfg.get_usize("solver", "iters")?.unwrap_or(3),
        eta,
        prior,
        tv_lambda: cfg.get_f64("solver", "tv_lambda")?.unwrap_or(0.05),
        tv_inner: cfg.get_usize("solver", "tv_inner")?.unwrap_or(20),
        step2_iters: cfg.get_usize("solver", "step2_iters")?.unwrap_or(8),
        step2_use_cg,
        use_factor,
        factor_file: cfg.get("solver", "factor_file").map(str::to_string),
        context,
        patch_init_first_pass,
        cg_tol: cfg.get_f64("solver", "cg_tol")?.unwrap_or(1e-10),
        cg_max_iters: cfg.get_usize("solver", "cg_max_iters")?.unwrap_or(500),
    })
}

pub struct PartitionSettings {
    pub patch: Vec<usize>,
    pub stride: Vec<usize>,
}

pub fn partition_settings(exp: &Experiment, vol_shape: &[usize]) -> Result<PartitionSettings, CliError> {
    let patch = exp
        .config
        .get_usize_list("partition", "patch")?
        .unwrap_or_else(|| vol_shape.to_vec());
    let stride = exp
        .config
        .get_usize_list("partition", "stride")?
        .unwrap_or_else(|| patch.clone());
    Ok(PartitionSettings { patch, stride })
}

pub struct MetricSettings {
    pub peak: f64,
    pub per_slice: bool,
}

pub fn metric_settings(exp: &Experiment) -> Result<MetricSettings, CliError> {
    Ok(MetricSettings {
        peak: exp.config.get_f64("metrics", "peak")?.unwrap_or(1.0),
        per_slice: exp.config.get_bool("metrics", "per_slice")?.unwrap_or(false),
    })
}

pub fn noise_sigma(exp: &Experiment) -> Result<f64, CliError> {
    Ok(exp.config.get_f64("noise", "sigma")?.unwrap_or(0.0))
}
