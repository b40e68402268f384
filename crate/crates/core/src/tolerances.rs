//! Centralized numerical tolerances used by the verification suites.
//!
//! Every threshold asserted by the property and acceptance tests is defined
//! here with its rationale, so no ad-hoc magic numbers drift between the
//! library, the `verify` command, and the test suites.

/// Adjoint dot test: |<Ax,y> - <x,A'y>| / (|Ax| |y|) for matched
/// forward/adjoint pairs. Both sides are the same floating-point work in a
/// different order, so only rounding accumulates.
pub const ADJOINT_REL: f64 = 1e-10;

/// Linearity defect |A(ax + bz) - aAx - bAz| relative to the output norm.
pub const LINEARITY_REL: f64 = 1e-10;

/// Agreement between a matrix-free operator and its densely materialized
/// matrix on random inputs.
pub const DENSE_ORACLE_REL: f64 = 1e-10;

/// Patch-restricted factor evaluation against the full-size reference
/// `S H S^T`. The two routes are algebraically identical, so the tolerance
/// only covers FFT rounding at different transform sizes.
pub const PATCH_EXACT_REL: f64 = 1e-12;

/// Fused normal-operator fast paths against the adjoint(apply(x)) composition.
pub const FUSED_NORMAL_REL: f64 = 1e-12;

/// Reduced-problem consistency: for noiseless data and exact context the
/// subproblem residual must vanish up to rounding, relative to |y|.
pub const SUBPROBLEM_REL: f64 = 1e-12;

/// Analytic fit gradients against central finite differences (h = 1e-6).
/// Central differences carry O(h^2) truncation plus O(eps/h) cancellation,
/// i.e. ~1e-10 on O(1) gradients; 1e-5 leaves generous margin.
pub const GRADIENT_CHECK_REL: f64 = 1e-5;

/// Step size h for central finite differences in the gradient checks.
pub const GRADIENT_CHECK_STEP: f64 = 1e-6;

/// Oracle (squared Frobenius) loss below which a fitted factor is considered
/// an exact representation of its target.
pub const EXACT_FIT_LOSS: f64 = 1e-8;

/// Conjugate gradient agreement with a dense direct solve.
pub const CG_VS_DIRECT_REL: f64 = 1e-8;

/// Power iteration agreement with a dense eigenvalue oracle.
pub const POWER_ITER_REL: f64 = 1e-6;

/// Dense materialization refuses problems with more unknowns than this.
pub const DENSE_ORACLE_MAX_UNKNOWNS: usize = 4096;
