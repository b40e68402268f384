//! Matrix-free linear operator contract and concrete forward models.
//!
//! An operator exposes `apply` (forward) and `adjoint` with declared shapes
//! and fields; nothing ever materializes a matrix except the desk-scale
//! [`DenseOracle`]. The adjoint is matched to the forward discretization,
//! so the dot test <Ax, y> = <x, A'y> holds to rounding for every shipped
//! operator.
//!
//! Real-domain operators accept real grids and promote complex inputs are
//! rejected; complex-domain operators accept real grids by promotion.

mod conv;
mod dense;
mod mask;
mod mri;
mod radon;

pub use conv::ConvOperator;
pub use dense::DenseOracle;
pub use mask::MaskOperator;
pub use mri::MriOperator;
pub use radon::Radon2D;

use num_complex::Complex64;

use crate::error::{CoreError, Result};
use crate::grid::{Field, Grid};
use crate::rng::{gaussian_probe, SeededRng};

pub trait LinearOperator: Send + Sync {
    fn in_shape(&self) -> &[usize];
    fn out_shape(&self) -> &[usize];
    fn in_field(&self) -> Field;
    fn out_field(&self) -> Field;

    /// Forward map y = A x.
    fn apply(&self, x: &Grid) -> Result<Grid>;

    /// Adjoint map x = A' y (conjugate transpose in the complex case).
    fn adjoint(&self, y: &Grid) -> Result<Grid>;

    /// Normal operator A'A x. The default is the adjoint/apply composition;
    /// operators with a fused fast path override it (and the fused path is
    /// tested against the composition).
    fn normal_apply(&self, x: &Grid) -> Result<Grid> {
        self.adjoint(&self.apply(x)?)
    }
}

/// Shape/field admission check shared by the operator implementations.
pub(crate) fn check_input(
    x: &Grid,
    shape: &[usize],
    field: Field,
    context: &'static str,
) -> Result<()> {
    if x.shape() != shape {
        return Err(CoreError::ShapeMismatch {
            context,
            expected: shape.to_vec(),
            got: x.shape().to_vec(),
        });
    }
    if field == Field::Real && x.field() == Field::Complex {
        return Err(CoreError::FieldMismatch(format!(
            "{context}: operator domain is real, got a complex grid"
        )));
    }
    Ok(())
}

/// View of A'A as a square operator in its own right.
pub struct NormalOperator<'a> {
    inner: &'a dyn LinearOperator,
}

impl<'a> NormalOperator<'a> {
    pub fn new(inner: &'a dyn LinearOperator) -> Self {
        NormalOperator { inner }
    }
}

impl LinearOperator for NormalOperator<'_> {
    fn in_shape(&self) -> &[usize] {
        self.inner.in_shape()
    }
    fn out_shape(&self) -> &[usize] {
        self.inner.in_shape()
    }
    fn in_field(&self) -> Field {
        self.inner.in_field()
    }
    fn out_field(&self) -> Field {
        self.inner.in_field()
    }
    fn apply(&self, x: &Grid) -> Result<Grid> {
        self.inner.normal_apply(x)
    }
    fn adjoint(&self, y: &Grid) -> Result<Grid> {
        // A'A is self-adjoint.
        self.inner.normal_apply(y)
    }
}

/// Relative adjoint defect |<Ax,y> - <x,A'y>| / (|Ax| |y|) on one seeded pair.
pub fn dot_test(op: &dyn LinearOperator, rng: &mut SeededRng) -> Result<f64> {
    let x = gaussian_probe(op.in_shape(), op.in_field(), rng)?;
    let y = gaussian_probe(op.out_shape(), op.out_field(), rng)?;
    let ax = op.apply(&x)?;
    let aty = op.adjoint(&y)?;
    let lhs = ax.dot(&y)?;
    let rhs = x.dot(&aty)?;
    let denom = (ax.norm_l2() * y.norm_l2()).max(1e-300);
    Ok((lhs - rhs).norm() / denom)
}

/// Relative linearity defect |A(ax + bz) - aAx - bAz| / |A(ax + bz)|.
pub fn linearity_test(op: &dyn LinearOperator, rng: &mut SeededRng) -> Result<f64> {
    let x = gaussian_probe(op.in_shape(), op.in_field(), rng)?;
    let z = gaussian_probe(op.in_shape(), op.in_field(), rng)?;
    let alpha = rng.next_normal();
    let beta = rng.next_normal();
    let mut combo = x.clone();
    combo.scale(alpha);
    combo.axpy(beta, &z)?;
    let lhs = op.apply(&combo)?;
    let mut rhs = op.apply(&x)?;
    rhs.scale(alpha);
    rhs.axpy(beta, &op.apply(&z)?)?;
    let denom = lhs.norm_l2().max(1e-300);
    Ok(lhs.sub(&rhs)?.norm_l2() / denom)
}

#[derive(Clone, Copy, Debug)]
pub struct SpectralNormEstimate {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Power iteration estimate of L = |A'A|_2, the step-size constant.
///
/// Iterates v <- A'A v / |A'A v| with the Rayleigh quotient as the
/// estimate; reports non-convergence (with the last iterate's value) if the
/// relative change never drops below `tol` within `max_iters`.
pub fn power_iteration_norm(
    op: &dyn LinearOperator,
    rng: &mut SeededRng,
    max_iters: usize,
    tol: f64,
) -> Result<SpectralNormEstimate> {
    let mut v = gaussian_probe(op.in_shape(), op.in_field(), rng)?;
    let n0 = v.norm_l2();
    if n0 == 0.0 {
        return Err(CoreError::InvalidArgument(
            "power iteration started from a zero vector".into(),
        ));
    }
    v.scale(1.0 / n0);
    let mut estimate = 0.0f64;
    for k in 0..max_iters {
        let w = op.normal_apply(&v)?;
        let rayleigh = v.dot(&w)?.re;
        let wn = w.norm_l2();
        if wn == 0.0 {
            // A'A annihilates the iterate: the norm estimate is 0.
            return Ok(SpectralNormEstimate {
                value: 0.0,
                converged: true,
                iterations: k + 1,
            });
        }
        let delta = (rayleigh - estimate).abs();
        estimate = rayleigh;
        v = w;
        v.scale(1.0 / wn);
        if delta <= tol * estimate.abs().max(1e-300) && k > 0 {
            return Ok(SpectralNormEstimate {
                value: estimate,
                converged: true,
                iterations: k + 1,
            });
        }
    }
    Ok(SpectralNormEstimate {
        value: estimate,
        converged: false,
        iterations: max_iters,
    })
}

/// Additive white Gaussian measurement noise with standard deviation sigma.
///
/// Complex measurements receive independent N(0, sigma^2/2) real and
/// imaginary parts, so E|eps|^2 = sigma^2 in both fields.
pub fn add_gaussian_noise(y: &Grid, sigma: f64, rng: &mut SeededRng) -> Result<Grid> {
    if sigma < 0.0 {
        return Err(CoreError::InvalidArgument(format!(
            "noise sigma must be nonnegative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(y.clone());
    }
    let mut noisy = y.clone();
    match noisy.field() {
        Field::Real => {
            for v in noisy.real_slice_mut()? {
                *v += sigma * rng.next_normal();
            }
        }
        Field::Complex => {
            let s = sigma * 0.5f64.sqrt();
            for z in noisy.complex_slice_mut()? {
                *z += Complex64::new(s * rng.next_normal(), s * rng.next_normal());
            }
        }
    }
    Ok(noisy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_operator_view_is_square_and_self_adjoint() {
        let mask = Grid::from_real(&[4], vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        let op = MaskOperator::new(mask).unwrap();
        let normal = NormalOperator::new(&op);
        assert_eq!(normal.in_shape(), normal.out_shape());
        let mut rng = SeededRng::new(17);
        let defect = dot_test(&normal, &mut rng).unwrap();
        assert!(defect < 1e-14);
    }

    #[test]
    fn power_iteration_on_projection_is_one() {
        let mask = Grid::from_real(&[8], vec![1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
        let op = MaskOperator::new(mask).unwrap();
        let mut rng = SeededRng::new(2);
        let est = power_iteration_norm(&op, &mut rng, 50, 1e-12).unwrap();
        assert!(est.converged);
        assert!((est.value - 1.0).abs() < 1e-12, "L = {}", est.value);
    }

    #[test]
    fn noise_energy_scales_with_sigma() {
        let y = Grid::zeros(&[4096], Field::Real).unwrap();
        let mut rng = SeededRng::new(5);
        let noisy = add_gaussian_noise(&y, 0.3, &mut rng).unwrap();
        let energy = (noisy.norm_sq() / 4096.0).sqrt();
        assert!((energy - 0.3).abs() < 0.02);
        // Complex field keeps the same per-sample energy convention.
        let yc = Grid::zeros(&[4096], Field::Complex).unwrap();
        let noisy = add_gaussian_noise(&yc, 0.3, &mut rng).unwrap();
        let energy = (noisy.norm_sq() / 4096.0).sqrt();
        assert!((energy - 0.3).abs() < 0.02);
    }
}
