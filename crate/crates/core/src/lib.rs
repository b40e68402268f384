//! Matrix-free toolkit for linear inverse problems.
//!
//! The crate is organized around a small number of building blocks:
//!
//! * [`grid`] — dense 1/2/3-d arrays of real or complex f64 samples, the
//!   universal container for signals, volumes, masks and kernels.
//! * [`linop`] — the matrix-free [`linop::LinearOperator`] contract plus
//!   concrete forward models (inpainting, circular convolution, 2-d
//!   parallel-beam tomography, Cartesian MRI) and a dense oracle for
//!   desk-scale verification.
//! * [`spectral`] — diagonal-times-circulant surrogate operators
//!   `H = diag(m) F^-1 diag(lambda) F`, their multi-coil sandwich variant,
//!   and exact patch-restricted evaluation through kernel cropping.
//! * [`factorfit`] — data-free fitting of `(m, lambda)` to a target normal
//!   operator by stochastic gradient descent on Gaussian probes.
//! * [`partition`] — orthogonal patch/context decomposition of the signal
//!   domain, reduced subproblems, patch schedules and overlap aggregation.
//! * [`solvers`] — gradient descent, conjugate gradient, FISTA with a TV
//!   prior, the unrolled proximal-gradient loop with pluggable priors, and
//!   the two-step partitioned reconstruction driver.
//!
//! All randomized routines take an explicit [`rng::SeededRng`]; equal seeds
//! produce bit-identical results. All verification paths run in double
//! precision.

pub mod alloc_track;
pub mod error;
pub mod factorfit;
pub mod fft;
pub mod grid;
pub mod gridio;
pub mod linop;
pub mod metrics;
pub mod partition;
pub mod rng;
pub mod solvers;
pub mod spectral;
pub mod tolerances;

pub use error::{CoreError, Result};
pub use grid::{Field, Grid};
pub use rng::SeededRng;

// Complex samples appear throughout the public API.
pub use num_complex;
