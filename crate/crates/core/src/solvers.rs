//! Reconstruction algorithms: gradient data steps, conjugate gradient,
//! FISTA with a TV prior, the unrolled proximal-gradient loop with a
//! pluggable prior, and the two-step domain-partitioned driver.
//!
//! The data-consistency update is `x <- x - eta (N x - A'y)` where N is a
//! normal path: either the exact A'A composition or a fitted
//! diagonal-circulant surrogate (full-size or patch-restricted). The prior
//! is a swappable operator applied after each data step; with the identity
//! prior the unrolled loop *is* plain gradient descent (same code path, so
//! the equivalence is bit-level).
//!
//! The two-step driver first runs the unrolled loop on the full volume with
//! the prior applied patchwise and aggregated, then refines every scheduled
//! patch independently on its reduced subproblem with the first-pass result
//! as context.

use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::grid::{Field, Grid};
use crate::linop::LinearOperator;
use crate::metrics::{mse, psnr, ssim, MetricReport, SSIM_WINDOW};
use crate::partition::{aggregate, build_subproblem, PatchSchedule};
use crate::rng::SeededRng;
use crate::spectral::{DiagCirculantFactor, PatchFactor};

/// Residual growth beyond which iterative solvers abort.
pub const SOLVER_DIVERGENCE_FACTOR: f64 = 1e6;

/// A square, normal-operator-like evaluation path.
pub enum NormalPath<'a> {
    /// A'A through the operator's adjoint/apply composition (or fused path).
    ExactNormal(&'a dyn LinearOperator),
    /// A self-adjoint operator applied directly (symmetrized factors,
    /// dense normal matrices).
    SelfAdjoint(&'a dyn LinearOperator),
    /// Full-size fitted factor H(m, lambda).
    Factor(&'a DiagCirculantFactor),
    /// Patch-restricted factor S H S^T.
    FactorPatch(&'a PatchFactor),
    /// Symmetrized patch-restricted factor (S H S^T + (S H S^T)^H) / 2.
    FactorPatchSym(&'a PatchFactor),
}

impl NormalPath<'_> {
    pub fn shape(&self) -> &[usize] {
        match self {
            NormalPath::ExactNormal(op) => op.in_shape(),
            NormalPath::SelfAdjoint(op) => op.in_shape(),
            NormalPath::Factor(f) => f.shape(),
            NormalPath::FactorPatch(p) | NormalPath::FactorPatchSym(p) => p.patch_extents(),
        }
    }

    pub fn apply(&self, x: &Grid) -> Result<Grid> {
        match self {
            NormalPath::ExactNormal(op) => op.normal_apply(x),
            NormalPath::SelfAdjoint(op) => op.apply(x),
            NormalPath::Factor(f) => f.apply(x),
            NormalPath::FactorPatch(p) => p.apply(x),
            NormalPath::FactorPatchSym(p) => {
                let mut a = p.apply(x)?;
                let b = p.apply_adjoint(x)?;
                a.axpy(1.0, &b)?;
                a.scale(0.5);
                Ok(a)
            }
        }
    }
}

/// One least-squares gradient step with a precomputed right-hand side.
pub struct DataStep<'a> {
    path: NormalPath<'a>,
    eta: f64,
    /// A'y (or the reduced-problem analogue).
    rhs: Grid,
}

impl<'a> DataStep<'a> {
    pub fn new(path: NormalPath<'a>, eta: f64, rhs: Grid) -> Result<Self> {
        if eta <= 0.0 {
            return Err(CoreError::InvalidArgument(format!(
                "step size must be positive, got {eta}"
            )));
        }
        if rhs.shape() != path.shape() {
            return Err(CoreError::ShapeMismatch {
                context: "DataStep::new",
                expected: path.shape().to_vec(),
                got: rhs.shape().to_vec(),
            });
        }
        Ok(DataStep { path, eta, rhs })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn rhs(&self) -> &Grid {
        &self.rhs
    }

    /// Returns (updated iterate, normal-equation residual |N x - rhs|).
    ///
    /// Surrogate paths on real problems are projected back to the real
    /// field (the imaginary part is approximation error by construction).
    pub fn step(&self, x: &Grid) -> Result<(Grid, f64)> {
        let nx = self.path.apply(x)?;
        let nx = if self.rhs.is_real() { nx.real_part() } else { nx };
        let mut grad = nx;
        grad.axpy(-1.0, &self.rhs)?;
        let residual = grad.norm_l2();
        let mut out = x.clone();
        if !out.is_real() || !grad.is_real() {
            out = out.to_complex();
        }
        out.axpy(-self.eta, &grad)?;
        Ok((out, residual))
    }
}

/// Swappable prior applied between data steps.
#[derive(Clone, Debug, PartialEq)]
pub enum Prior {
    Identity,
    /// Circular Gaussian smoothing with the given standard deviation
    /// (pixels). The kernel radius adapts to fit the grid.
    GaussianSmooth { sigma: f64 },
    /// Isotropic total-variation proximal step with fixed dual iterations.
    TvProx { lambda: f64, inner_iters: usize },
}

impl Prior {
    pub fn apply(&self, x: &Grid) -> Result<Grid> {
        match self {
            Prior::Identity => Ok(x.clone()),
            Prior::GaussianSmooth { sigma } => gaussian_smooth(x, *sigma),
            Prior::TvProx {
                lambda,
                inner_iters,
            } => prox_tv(x, *lambda, *inner_iters),
        }
    }
}

fn gaussian_smooth(x: &Grid, sigma: f64) -> Result<Grid> {
    if sigma <= 0.0 {
        return Ok(x.clone());
    }
    let min_extent = *x.shape().iter().min().unwrap();
    let radius = ((3.0 * sigma).ceil() as usize).max(1).min((min_extent - 1) / 2);
    if radius == 0 {
        return Ok(x.clone());
    }
    let width = 2 * radius + 1;
    // Separable sampled Gaussian, normalized to unit mass.
    let mut line = Vec::with_capacity(width);
    for i in 0..width {
        let o = i as f64 - radius as f64;
        line.push((-0.5 * o * o / (sigma * sigma)).exp());
    }
    let mass: f64 = line.iter().sum();
    line.iter_mut().for_each(|v| *v /= mass);
    let d = x.ndim();
    let kernel_shape = vec![width; d];
    let mut taps = vec![0.0f64; width.pow(d as u32)];
    for (flat, t) in taps.iter_mut().enumerate() {
        let mut rem = flat;
        let mut w = 1.0;
        for dim in 0..d {
            let stride: usize = kernel_shape[dim + 1..].iter().product();
            w *= line[rem / stride];
            rem %= stride;
        }
        *t = w;
    }
    let kernel = Grid::from_real(&kernel_shape, taps)?;
    let conv = crate::linop::ConvOperator::new(&kernel, x.shape())?;
    conv.apply(x)
}

/// Isotropic TV proximal map: argmin_u  0.5 |u - v|^2 + weight TV(u),
/// via the dual fixed-point iteration (step 1/(4d), Neumann boundaries).
/// Complex grids are handled per real/imaginary component.
pub fn prox_tv(v: &Grid, weight: f64, inner_iters: usize) -> Result<Grid> {
    if weight <= 0.0 || inner_iters == 0 {
        return Ok(v.clone());
    }
    match v.field() {
        Field::Real => prox_tv_real(v, weight, inner_iters),
        Field::Complex => {
            let re = prox_tv_real(&v.real_part(), weight, inner_iters)?;
            let im_data: Vec<f64> = v.complex_slice()?.iter().map(|z| z.im).collect();
            let im = prox_tv_real(&Grid::from_real(v.shape(), im_data)?, weight, inner_iters)?;
            let data = re
                .real_slice()?
                .iter()
                .zip(im.real_slice()?)
                .map(|(&r, &i)| num_complex::Complex64::new(r, i))
                .collect();
            Grid::from_complex(v.shape(), data)
        }
    }
}

fn shape3(shape: &[usize]) -> [usize; 3] {
    let mut s = [1usize; 3];
    let offset = 3 - shape.len();
    for (d, &e) in shape.iter().enumerate() {
        s[offset + d] = e;
    }
    s
}

/// Forward differences with Neumann boundary; `out` holds 3 components.
fn tv_gradient(u: &[f64], s: [usize; 3], out: &mut [Vec<f64>; 3]) {
    let at = |i: usize, j: usize, k: usize| (i * s[1] + j) * s[2] + k;
    for i in 0..s[0] {
        for j in 0..s[1] {
            for k in 0..s[2] {
                let c = at(i, j, k);
                out[0][c] = if i + 1 < s[0] { u[at(i + 1, j, k)] - u[c] } else { 0.0 };
                out[1][c] = if j + 1 < s[1] { u[at(i, j + 1, k)] - u[c] } else { 0.0 };
                out[2][c] = if k + 1 < s[2] { u[at(i, j, k + 1)] - u[c] } else { 0.0 };
            }
        }
    }
}

/// Negative adjoint of [`tv_gradient`].
fn tv_divergence(p: &[Vec<f64>; 3], s: [usize; 3], out: &mut [f64]) {
    let at = |i: usize, j: usize, k: usize| (i * s[1] + j) * s[2] + k;
    for i in 0..s[0] {
        for j in 0..s[1] {
            for k in 0..s[2] {
                let c = at(i, j, k);
                let mut acc = 0.0;
                if i + 1 < s[0] {
                    acc += p[0][c];
                }
                if i > 0 {
                    acc -= p[0][at(i - 1, j, k)];
                }
                if j + 1 < s[1] {
                    acc += p[1][c];
                }
                if j > 0 {
                    acc -= p[1][at(i, j - 1, k)];
                }
                if k + 1 < s[2] {
                    acc += p[2][c];
                }
                if k > 0 {
                    acc -= p[2][at(i, j, k - 1)];
                }
                out[c] = acc;
            }
        }
    }
}

/// Isotropic total variation sum_i |grad u(i)|_2 (diagnostic).
pub fn tv_value(u: &Grid) -> Result<f64> {
    let ur = u.real_part();
    let uv = ur.real_slice()?;
    let s = shape3(u.shape());
    let n = uv.len();
    let mut g = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    tv_gradient(uv, s, &mut g);
    Ok((0..n)
        .map(|c| (g[0][c] * g[0][c] + g[1][c] * g[1][c] + g[2][c] * g[2][c]).sqrt())
        .sum())
}

fn prox_tv_real(v: &Grid, weight: f64, inner_iters: usize) -> Result<Grid> {
    let s = shape3(v.shape());
    let vv = v.real_slice()?;
    let n = vv.len();
    let d = v.ndim() as f64;
    let tau = 1.0 / (4.0 * d);
    let mut p = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut div = vec![0.0; n];
    let mut work = vec![0.0; n];
    let mut g = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for _ in 0..inner_iters {
        tv_divergence(&p, s, &mut div);
        for c in 0..n {
            work[c] = div[c] - vv[c] / weight;
        }
        tv_gradient(&work, s, &mut g);
        for c in 0..n {
            let norm = (g[0][c] * g[0][c] + g[1][c] * g[1][c] + g[2][c] * g[2][c]).sqrt();
            let denom = 1.0 + tau * norm;
            p[0][c] = (p[0][c] + tau * g[0][c]) / denom;
            p[1][c] = (p[1][c] + tau * g[1][c]) / denom;
            p[2][c] = (p[2][c] + tau * g[2][c]) / denom;
        }
    }
    tv_divergence(&p, s, &mut div);
    let out = (0..n).map(|c| vv[c] - weight * div[c]).collect();
    Grid::from_real(v.shape(), out)
}

/// Per-iteration observations of a solve.
#[derive(Clone, Debug, Default)]
pub struct SolveReport {
    pub iterations: usize,
    /// One residual per iteration: |A x_k - y| at the post-step iterate when
    /// the measurement pair is monitored; otherwise the normal-equation
    /// residual |N x - A'y| evaluated at the iterate entering the step.
    pub residuals: Vec<f64>,
    /// Metrics against the reference, when one is monitored. SSIM is NaN on
    /// grids smaller than the SSIM window.
    pub metrics: Vec<MetricReport>,
    pub wall_seconds: f64,
    /// Filled by instrumented callers (benchmarks), not by the solvers.
    pub peak_scratch_bytes: Option<u64>,
}

/// Optional observation hooks for iterative solvers.
#[derive(Default, Clone, Copy)]
pub struct Monitor<'a> {
    /// (A, y): report true data residuals |A x - y| instead of
    /// normal-equation residuals.
    pub measurement: Option<(&'a dyn LinearOperator, &'a Grid)>,
    /// (reference, peak): record metrics per iteration.
    pub reference: Option<(&'a Grid, f64)>,
}

impl Monitor<'_> {
    fn observe(&self, x: &Grid, normal_residual: f64, report: &mut SolveReport) -> Result<f64> {
        let residual = match self.measurement {
            Some((op, y)) => op.apply(x)?.sub(y)?.norm_l2(),
            None => normal_residual,
        };
        report.residuals.push(residual);
        if let Some((reference, peak)) = self.reference {
            let candidate = if reference.is_real() { x.magnitude_if_complex() } else { x.clone() };
            let m = mse(&candidate, reference)?;
            let p = psnr(&candidate, reference, peak)?;
            let s = if reference.ndim() >= 2
                && reference.shape().iter().all(|&e| e >= SSIM_WINDOW)
            {
                ssim(&candidate, reference, peak)?
            } else {
                f64::NAN
            };
            report.metrics.push(MetricReport {
                psnr: p,
                ssim: s,
                mse: m,
            });
        }
        Ok(residual)
    }
}

/// K iterations of the unrolled proximal-gradient loop: data step, then
/// prior. With [`Prior::Identity`] this is plain gradient descent.
pub fn unrolled_pgd(
    step: &DataStep,
    prior: &Prior,
    x0: &Grid,
    iters: usize,
    monitor: &Monitor,
) -> Result<(Grid, SolveReport)> {
    let start = std::time::Instant::now();
    let mut report = SolveReport::default();
    let mut x = x0.clone();
    let mut first_residual = None;
    for k in 0..iters {
        let (next, normal_residual) = step.step(&x)?;
        x = match prior {
            Prior::Identity => next,
            _ => prior.apply(&next)?,
        };
        let residual = monitor.observe(&x, normal_residual, &mut report)?;
        let first = *first_residual.get_or_insert(residual.max(1e-300));
        if !residual.is_finite() || residual > SOLVER_DIVERGENCE_FACTOR * first {
            return Err(CoreError::SolverDiverged {
                iteration: k,
                residual,
            });
        }
        report.iterations = k + 1;
    }
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok((x, report))
}

/// Plain least-squares gradient descent (the identity-prior unrolled loop).
pub fn gradient_descent(
    step: &DataStep,
    x0: &Grid,
    iters: usize,
    monitor: &Monitor,
) -> Result<(Grid, SolveReport)> {
    unrolled_pgd(step, &Prior::Identity, x0, iters, monitor)
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub x: Grid,
    pub iterations: usize,
    /// True relative residual |N x - rhs| / |rhs| of the returned iterate.
    pub relative_residual: f64,
    /// Recursive relative residual after each iteration.
    pub residual_history: Vec<f64>,
    pub converged: bool,
}

/// Conjugate gradient on N x = rhs for a self-adjoint positive
/// semidefinite normal path (symmetrize fitted factors first).
pub fn conjugate_gradient(
    path: &NormalPath,
    rhs: &Grid,
    tol: f64,
    max_iters: usize,
) -> Result<CgOutcome> {
    let bnorm = rhs.norm_l2();
    if bnorm == 0.0 {
        return Ok(CgOutcome {
            x: Grid::zeros(rhs.shape(), rhs.field())?,
            iterations: 0,
            relative_residual: 0.0,
            residual_history: Vec::new(),
            converged: true,
        });
    }
    let mut x = Grid::zeros(rhs.shape(), rhs.field())?;
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rs = r.norm_sq();
    let mut iterations = 0;
    let mut residual_history = Vec::new();
    for k in 0..max_iters {
        let np = path.apply(&p)?;
        let np = if rhs.is_real() { np.real_part() } else { np };
        let curvature = p.dot(&np)?.re;
        if curvature <= f64::EPSILON * p.norm_sq() {
            return Err(CoreError::SolverBreakdown {
                iteration: k,
                detail: format!("curvature {curvature:e} on a direction of norm {:e}", p.norm_l2()),
            });
        }
        let alpha = rs / curvature;
        x.axpy(alpha, &p)?;
        r.axpy(-alpha, &np)?;
        let rs_new = r.norm_sq();
        iterations = k + 1;
        residual_history.push(rs_new.sqrt() / bnorm);
        if rs_new.sqrt() <= tol * bnorm {
            break;
        }
        let beta = rs_new / rs;
        let mut p_next = r.clone();
        p_next.axpy(beta, &p)?;
        p = p_next;
        rs = rs_new;
    }
    // True residual for the report.
    let final_res = path.apply(&x)?;
    let final_res = if rhs.is_real() { final_res.real_part() } else { final_res };
    let rel = final_res.sub(rhs)?.norm_l2() / bnorm;
    Ok(CgOutcome {
        x,
        iterations,
        relative_residual: rel,
        residual_history,
        converged: rel <= tol,
    })
}

/// FISTA on 0.5 |A x - y|^2 + lambda_tv TV(x), starting from zero.
///
/// The TV proximal step runs `inner_iters` dual iterations; lambda_tv = 0
/// reduces to accelerated least squares.
pub fn fista_tv(
    op: &dyn LinearOperator,
    y: &Grid,
    lambda_tv: f64,
    iters: usize,
    eta: f64,
    inner_iters: usize,
    monitor: &Monitor,
) -> Result<(Grid, SolveReport)> {
    if eta <= 0.0 {
        return Err(CoreError::InvalidArgument(format!(
            "step size must be positive, got {eta}"
        )));
    }
    let start = std::time::Instant::now();
    let rhs = op.adjoint(y)?;
    let mut report = SolveReport::default();
    let mut x = Grid::zeros(op.in_shape(), op.in_field())?;
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut first_residual = None;
    for k in 0..iters {
        let mut grad = op.normal_apply(&z)?;
        grad.axpy(-1.0, &rhs)?;
        let mut candidate = z.clone();
        candidate.axpy(-eta, &grad)?;
        let x_next = if lambda_tv > 0.0 {
            prox_tv(&candidate, eta * lambda_tv, inner_iters)?
        } else {
            candidate
        };
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        let mut z_next = x_next.clone();
        z_next.scale(1.0 + beta);
        z_next.axpy(-beta, &x)?;
        x = x_next;
        z = z_next;
        t = t_next;

        let residual = monitor.observe(&x, f64::NAN, &mut report)?;
        let residual = if residual.is_nan() {
            // No measurement monitor: fall back to the data residual, which
            // FISTA needs anyway for its divergence guard.
            let r = op.apply(&x)?.sub(y)?.norm_l2();
            *report.residuals.last_mut().unwrap() = r;
            r
        } else {
            residual
        };
        let first = *first_residual.get_or_insert(residual.max(1e-300));
        if !residual.is_finite() || residual > SOLVER_DIVERGENCE_FACTOR * first {
            return Err(CoreError::SolverDiverged {
                iteration: k,
                residual,
            });
        }
        report.iterations = k + 1;
    }
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok((x, report))
}

/// Least-squares-scaled adjoint image: alpha A'y with alpha minimizing
/// |A (alpha A'y) - y|. The standard cheap initialization.
pub fn adjoint_scaled(op: &dyn LinearOperator, y: &Grid) -> Result<Grid> {
    let mut z = op.adjoint(y)?;
    let az = op.apply(&z)?;
    let denom = az.norm_sq();
    if denom == 0.0 {
        return Ok(z);
    }
    let alpha = az.dot(y)? / denom;
    if z.is_real() && alpha.im == 0.0 {
        z.scale(alpha.re);
    } else {
        z.scale_complex(alpha);
    }
    Ok(z)
}

/// eta = 1 / |A'A|_2 estimated by power iteration (seeded).
pub fn step_size_from_power_iteration(op: &dyn LinearOperator, seed: u64) -> Result<f64> {
    let mut rng = SeededRng::new(seed);
    let est = crate::linop::power_iteration_norm(op, &mut rng, 200, 1e-9)?;
    if est.value <= 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 / est.value)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataMode {
    ExactNormal,
    FactorNormal,
}

/// Where step 2 takes its known context from.
#[derive(Clone, Copy)]
pub enum ContextSource<'a> {
    /// The step-1 estimate (the deployable default).
    FirstPass,
    /// All zeros (ablation).
    Zero,
    /// An externally supplied volume (testing only; never headline metrics).
    GroundTruth(&'a Grid),
}

/// Initialization of each patch solve in step 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatchInit {
    /// Least-squares-scaled reduced adjoint image.
    AdjointScaled,
    /// The first-pass estimate restricted to the patch.
    FirstPass,
}

#[derive(Clone, Copy, Debug)]
pub enum PatchSolver {
    /// Unrolled proximal gradient with the configured prior.
    Unrolled,
    /// Conjugate gradient on the (symmetrized) reduced normal equations.
    ConjugateGradient { tol: f64, max_iters: usize },
}

#[derive(Clone, Copy)]
pub struct TwoStepConfig<'a> {
    pub step1_iters: usize,
    pub step1_data: DataMode,
    /// None skips the refinement entirely (MRI-style deployments).
    pub step2: Option<Step2Config>,
    /// None estimates eta = 1/L by seeded power iteration.
    pub eta: Option<f64>,
    pub context: ContextSource<'a>,
    pub patch_init: PatchInit,
    /// Seed for the step-size power iteration.
    pub seed: u64,
}

#[derive(Clone, Copy, Debug)]
pub struct Step2Config {
    pub iters: usize,
    pub data: DataMode,
    pub solver: PatchSolver,
}

pub struct TwoStepOutcome {
    /// Full-volume estimate after step 1.
    pub first_pass: Grid,
    /// Aggregated refinement (equals `first_pass` when step 2 is skipped).
    pub refined: Grid,
    pub report: SolveReport,
}

/// Two-step partitioned inference.
///
/// Step 1: `step1_iters` unrolled iterations on the full problem, with the
/// global data step and the prior applied per scheduled patch then
/// aggregated. Step 2 (optional): for every scheduled patch, build the
/// reduced subproblem with the configured context and solve it
/// independently (patch solves run in parallel; aggregation order is the
/// schedule order, so results are reproducible across thread counts).
pub fn two_step_partitioned(
    op: &dyn LinearOperator,
    y: &Grid,
    factor: Option<&DiagCirculantFactor>,
    schedule: &PatchSchedule,
    prior: &Prior,
    cfg: &TwoStepConfig,
    monitor: &Monitor,
) -> Result<TwoStepOutcome> {
    if schedule.vol_shape() != op.in_shape() {
        return Err(CoreError::ShapeMismatch {
            context: "two_step_partitioned",
            expected: op.in_shape().to_vec(),
            got: schedule.vol_shape().to_vec(),
        });
    }
    let start = std::time::Instant::now();
    let eta = match cfg.eta {
        Some(e) => e,
        None => step_size_from_power_iteration(op, cfg.seed)?,
    };
    let needs_factor = cfg.step1_data == DataMode::FactorNormal
        || matches!(
            cfg.step2,
            Some(Step2Config {
                data: DataMode::FactorNormal,
                ..
            })
        );
    if needs_factor && factor.is_none() {
        return Err(CoreError::InvalidArgument(
            "factor-normal mode requested without a fitted factor".into(),
        ));
    }

    // Step 1: global data step, patchwise prior, aggregate.
    let rhs = op.adjoint(y)?;
    let path = match cfg.step1_data {
        DataMode::ExactNormal => NormalPath::ExactNormal(op),
        DataMode::FactorNormal => NormalPath::Factor(factor.unwrap()),
    };
    let step = DataStep::new(path, eta, rhs)?;
    let mut report = SolveReport::default();
    let mut x = adjoint_scaled(op, y)?;
    let mut first_residual = None;
    for k in 0..cfg.step1_iters {
        let (next, normal_residual) = step.step(&x)?;
        let patches: Vec<Grid> = schedule
            .selections()
            .par_iter()
            .map(|sel| prior.apply(&sel.extract(&next)?))
            .collect::<Result<_>>()?;
        x = aggregate(schedule, &patches)?;
        let residual = monitor.observe(&x, normal_residual, &mut report)?;
        let first = *first_residual.get_or_insert(residual.max(1e-300));
        if !residual.is_finite() || residual > SOLVER_DIVERGENCE_FACTOR * first {
            return Err(CoreError::SolverDiverged {
                iteration: k,
                residual,
            });
        }
        report.iterations = k + 1;
    }
    let first_pass = x;

    let Some(step2) = cfg.step2 else {
        report.wall_seconds = start.elapsed().as_secs_f64();
        return Ok(TwoStepOutcome {
            refined: first_pass.clone(),
            first_pass,
            report,
        });
    };

    // Step 2: independent reduced solves per patch.
    let zero_context;
    let context: &Grid = match cfg.context {
        ContextSource::FirstPass => &first_pass,
        ContextSource::Zero => {
            zero_context = Grid::zeros(op.in_shape(), first_pass.field())?;
            &zero_context
        }
        ContextSource::GroundTruth(g) => g,
    };
    let step2_factor = match step2.data {
        DataMode::FactorNormal => factor,
        DataMode::ExactNormal => None,
    };
    let patch_results: Vec<Grid> = schedule
        .selections()
        .par_iter()
        .map(|sel| -> Result<Grid> {
            let sub = build_subproblem(op, y, context, sel, step2_factor)?;
            let x0 = match cfg.patch_init {
                PatchInit::AdjointScaled => {
                    let reduced = sub.reduced_operator();
                    adjoint_scaled(reduced, sub.reduced_data())?
                }
                PatchInit::FirstPass => sel.extract(&first_pass)?,
            };
            let path = match sub.patch_factor() {
                Some(pf) => match step2.solver {
                    PatchSolver::ConjugateGradient { .. } => NormalPath::FactorPatchSym(pf),
                    PatchSolver::Unrolled => NormalPath::FactorPatch(pf),
                },
                None => NormalPath::ExactNormal(sub.reduced_operator()),
            };
            match step2.solver {
                PatchSolver::Unrolled => {
                    let ds = DataStep::new(path, eta, sub.rhs().clone())?;
                    let (solution, _) =
                        unrolled_pgd(&ds, prior, &x0, step2.iters, &Monitor::default())?;
                    Ok(solution)
                }
                PatchSolver::ConjugateGradient { tol, max_iters } => {
                    let outcome = conjugate_gradient(&path, sub.rhs(), tol, max_iters)?;
                    Ok(outcome.x)
                }
            }
        })
        .collect::<Result<_>>()?;
    let mut refined = aggregate(schedule, &patch_results)?;
    if first_pass.is_real() && !refined.is_real() {
        refined = refined.real_part();
    }
    let normal_residual = f64::NAN;
    let residual = monitor.observe(&refined, normal_residual, &mut report)?;
    if residual.is_nan() {
        let r = op.apply(&refined)?.sub(y)?.norm_l2();
        *report.residuals.last_mut().unwrap() = r;
    }
    report.iterations += 1;
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(TwoStepOutcome {
        first_pass,
        refined,
        report,
    })
}
