//! Dense d-dimensional sample containers (d <= 3), real or complex f64.
//!
//! A [`Grid`] is a flat row-major buffer plus an explicit shape. Axis 0 is
//! the slowest-varying ("depth" for volumes), the last axis is contiguous.
//! Real grids are stored compactly as `Vec<f64>`; complex grids as
//! `Vec<Complex64>`, i.e. interleaved (re, im) pairs in memory. Real grids
//! promote to complex on demand and the promotion always carries a zero
//! imaginary part.
//!
//! Grids are immutable values in spirit: operators and solvers never mutate
//! their inputs, and every mutating helper on `Grid` is used on locally
//! owned buffers only, so sharing grids across threads is safe.

use std::borrow::Cow;

use num_complex::Complex64;

use crate::error::{CoreError, Result};

pub const MAX_NDIM: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Field {
    Real,
    Complex,
}

impl std::fmt::Display for Field {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Field::Real => write!(f, "real"),
            Field::Complex => write!(f, "complex"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum GridData {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    shape: Vec<usize>,
    data: GridData,
}

pub fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > MAX_NDIM {
        return Err(CoreError::InvalidShape(format!(
            "rank must be 1..={MAX_NDIM}, got {}",
            shape.len()
        )));
    }
    if shape.contains(&0) {
        return Err(CoreError::InvalidShape(format!(
            "zero extent in shape {shape:?}"
        )));
    }
    Ok(())
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Grid {
    pub fn zeros(shape: &[usize], field: Field) -> Result<Self> {
        check_shape(shape)?;
        let n = numel(shape);
        let data = match field {
            Field::Real => GridData::Real(vec![0.0; n]),
            Field::Complex => GridData::Complex(vec![Complex64::ZERO; n]),
        };
        Ok(Grid {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn constant(shape: &[usize], value: f64) -> Result<Self> {
        check_shape(shape)?;
        Ok(Grid {
            shape: shape.to_vec(),
            data: GridData::Real(vec![value; numel(shape)]),
        })
    }

    pub fn from_real(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_shape(shape)?;
        if numel(shape) != data.len() {
            return Err(CoreError::ShapeMismatch {
                context: "Grid::from_real",
                expected: shape.to_vec(),
                got: vec![data.len()],
            });
        }
        Ok(Grid {
            shape: shape.to_vec(),
            data: GridData::Real(data),
        })
    }

    pub fn from_complex(shape: &[usize], data: Vec<Complex64>) -> Result<Self> {
        check_shape(shape)?;
        if numel(shape) != data.len() {
            return Err(CoreError::ShapeMismatch {
                context: "Grid::from_complex",
                expected: shape.to_vec(),
                got: vec![data.len()],
            });
        }
        Ok(Grid {
            shape: shape.to_vec(),
            data: GridData::Complex(data),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.shape)
    }

    pub fn field(&self) -> Field {
        match self.data {
            GridData::Real(_) => Field::Real,
            GridData::Complex(_) => Field::Complex,
        }
    }

    pub fn is_real(&self) -> bool {
        self.field() == Field::Real
    }

    pub fn real_slice(&self) -> Result<&[f64]> {
        match &self.data {
            GridData::Real(v) => Ok(v),
            GridData::Complex(_) => Err(CoreError::FieldMismatch(
                "expected a real grid, got complex".into(),
            )),
        }
    }

    pub fn real_slice_mut(&mut self) -> Result<&mut [f64]> {
        match &mut self.data {
            GridData::Real(v) => Ok(v),
            GridData::Complex(_) => Err(CoreError::FieldMismatch(
                "expected a real grid, got complex".into(),
            )),
        }
    }

    pub fn complex_slice(&self) -> Result<&[Complex64]> {
        match &self.data {
            GridData::Complex(v) => Ok(v),
            GridData::Real(_) => Err(CoreError::FieldMismatch(
                "expected a complex grid, got real".into(),
            )),
        }
    }

    pub fn complex_slice_mut(&mut self) -> Result<&mut [Complex64]> {
        match &mut self.data {
            GridData::Complex(v) => Ok(v),
            GridData::Real(_) => Err(CoreError::FieldMismatch(
                "expected a complex grid, got real".into(),
            )),
        }
    }

    /// Complex view of the samples, borrowing when already complex.
    pub fn complex_values(&self) -> Cow<'_, [Complex64]> {
        match &self.data {
            GridData::Complex(v) => Cow::Borrowed(v),
            GridData::Real(v) => Cow::Owned(v.iter().map(|&x| Complex64::new(x, 0.0)).collect()),
        }
    }

    /// Promote to a complex grid (zero imaginary part for real inputs).
    pub fn to_complex(&self) -> Grid {
        Grid {
            shape: self.shape.clone(),
            data: GridData::Complex(self.complex_values().into_owned()),
        }
    }

    /// Real parts of the samples (identity for real grids).
    pub fn real_part(&self) -> Grid {
        let data = match &self.data {
            GridData::Real(v) => v.clone(),
            GridData::Complex(v) => v.iter().map(|z| z.re).collect(),
        };
        Grid {
            shape: self.shape.clone(),
            data: GridData::Real(data),
        }
    }

    /// Magnitudes for complex grids, identity for real grids (metric prep).
    pub fn magnitude_if_complex(&self) -> Grid {
        if self.is_real() {
            self.clone()
        } else {
            self.magnitude()
        }
    }

    /// Pointwise magnitudes |z| as a real grid.
    pub fn magnitude(&self) -> Grid {
        let data = match &self.data {
            GridData::Real(v) => v.iter().map(|x| x.abs()).collect(),
            GridData::Complex(v) => v.iter().map(|z| z.norm()).collect(),
        };
        Grid {
            shape: self.shape.clone(),
            data: GridData::Real(data),
        }
    }

    pub fn max_imag_abs(&self) -> f64 {
        match &self.data {
            GridData::Real(_) => 0.0,
            GridData::Complex(v) => v.iter().fold(0.0f64, |a, z| a.max(z.im.abs())),
        }
    }

    pub fn conj(&self) -> Grid {
        match &self.data {
            GridData::Real(_) => self.clone(),
            GridData::Complex(v) => Grid {
                shape: self.shape.clone(),
                data: GridData::Complex(v.iter().map(|z| z.conj()).collect()),
            },
        }
    }

    /// Row-major flat index of a multi-index.
    pub fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut flat = 0;
        for (i, &e) in idx.iter().zip(&self.shape) {
            debug_assert!(*i < e);
            flat = flat * e + i;
        }
        flat
    }

    pub fn real_at(&self, idx: &[usize]) -> f64 {
        let k = self.flat_index(idx);
        match &self.data {
            GridData::Real(v) => v[k],
            GridData::Complex(v) => v[k].re,
        }
    }

    pub fn complex_at(&self, idx: &[usize]) -> Complex64 {
        let k = self.flat_index(idx);
        match &self.data {
            GridData::Real(v) => Complex64::new(v[k], 0.0),
            GridData::Complex(v) => v[k],
        }
    }

    fn promote_in_place(&mut self) {
        if let GridData::Real(v) = &self.data {
            let c = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
            self.data = GridData::Complex(c);
        }
    }

    fn check_same_shape(&self, other: &Grid, context: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(CoreError::ShapeMismatch {
                context,
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// self += alpha * other, promoting to complex if either side is complex.
    pub fn axpy(&mut self, alpha: f64, other: &Grid) -> Result<()> {
        self.check_same_shape(other, "Grid::axpy")?;
        if other.field() == Field::Complex {
            self.promote_in_place();
        }
        match (&mut self.data, &other.data) {
            (GridData::Real(a), GridData::Real(b)) => {
                for (ai, bi) in a.iter_mut().zip(b) {
                    *ai += alpha * bi;
                }
            }
            (GridData::Complex(a), GridData::Real(b)) => {
                for (ai, bi) in a.iter_mut().zip(b) {
                    *ai += alpha * bi;
                }
            }
            (GridData::Complex(a), GridData::Complex(b)) => {
                for (ai, bi) in a.iter_mut().zip(b) {
                    *ai += alpha * bi;
                }
            }
            (GridData::Real(_), GridData::Complex(_)) => unreachable!(),
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        match &mut self.data {
            GridData::Real(v) => v.iter_mut().for_each(|x| *x *= alpha),
            GridData::Complex(v) => v.iter_mut().for_each(|z| *z *= alpha),
        }
    }

    pub fn scale_complex(&mut self, alpha: Complex64) {
        self.promote_in_place();
        if let GridData::Complex(v) = &mut self.data {
            v.iter_mut().for_each(|z| *z *= alpha);
        }
    }

    pub fn add(&self, other: &Grid) -> Result<Grid> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &Grid) -> Result<Grid> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    /// Pointwise product, promoting to complex if either side is complex.
    pub fn mul_elem(&self, other: &Grid) -> Result<Grid> {
        self.check_same_shape(other, "Grid::mul_elem")?;
        match (&self.data, &other.data) {
            (GridData::Real(a), GridData::Real(b)) => {
                let v = a.iter().zip(b).map(|(x, y)| x * y).collect();
                Ok(Grid {
                    shape: self.shape.clone(),
                    data: GridData::Real(v),
                })
            }
            _ => {
                let a = self.complex_values();
                let b = other.complex_values();
                let v = a.iter().zip(b.iter()).map(|(x, y)| x * y).collect();
                Ok(Grid {
                    shape: self.shape.clone(),
                    data: GridData::Complex(v),
                })
            }
        }
    }

    /// Conjugate inner product <self, other> = sum conj(self_i) * other_i.
    pub fn dot(&self, other: &Grid) -> Result<Complex64> {
        self.check_same_shape(other, "Grid::dot")?;
        match (&self.data, &other.data) {
            (GridData::Real(a), GridData::Real(b)) => {
                let s: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                Ok(Complex64::new(s, 0.0))
            }
            _ => {
                let a = self.complex_values();
                let b = other.complex_values();
                Ok(a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum())
            }
        }
    }

    pub fn norm_sq(&self) -> f64 {
        match &self.data {
            GridData::Real(v) => v.iter().map(|x| x * x).sum(),
            GridData::Complex(v) => v.iter().map(|z| z.norm_sqr()).sum(),
        }
    }

    pub fn norm_l2(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        match &self.data {
            GridData::Real(v) => v.iter().fold(0.0f64, |a, x| a.max(x.abs())),
            GridData::Complex(v) => v.iter().fold(0.0f64, |a, z| a.max(z.norm())),
        }
    }
}

/// Relative l2 distance |a - b| / max(|b|, floor), promoting fields as needed.
pub fn rel_l2_diff(a: &Grid, b: &Grid) -> f64 {
    let diff = a.sub(b).expect("rel_l2_diff: shape mismatch");
    let denom = b.norm_l2().max(1e-300);
    diff.norm_l2() / denom
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_validation() {
        assert!(Grid::zeros(&[4, 4], Field::Real).is_ok());
        assert!(Grid::zeros(&[], Field::Real).is_err());
        assert!(Grid::zeros(&[2, 0], Field::Real).is_err());
        assert!(Grid::zeros(&[2, 2, 2, 2], Field::Real).is_err());
        assert!(Grid::from_real(&[3], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn promotion_has_zero_imaginary_part() {
        let g = Grid::from_real(&[2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let c = g.to_complex();
        assert_eq!(c.max_imag_abs(), 0.0);
        assert_eq!(c.complex_at(&[1, 0]), Complex64::new(3.0, 0.0));
    }

    #[test]
    fn flat_index_is_row_major() {
        let g = Grid::zeros(&[2, 3, 4], Field::Real).unwrap();
        assert_eq!(g.flat_index(&[0, 0, 0]), 0);
        assert_eq!(g.flat_index(&[0, 0, 3]), 3);
        assert_eq!(g.flat_index(&[0, 1, 0]), 4);
        assert_eq!(g.flat_index(&[1, 0, 0]), 12);
        assert_eq!(g.flat_index(&[1, 2, 3]), 23);
    }

    #[test]
    fn dot_conjugates_left_argument() {
        let a = Grid::from_complex(&[2], vec![Complex64::new(0.0, 1.0), Complex64::ZERO]).unwrap();
        let b = Grid::from_complex(&[2], vec![Complex64::new(0.0, 1.0), Complex64::ZERO]).unwrap();
        let d = a.dot(&b).unwrap();
        assert_eq!(d, Complex64::new(1.0, 0.0));
    }

    #[test]
    fn axpy_promotes_when_needed() {
        let mut a = Grid::from_real(&[2], vec![1.0, 2.0]).unwrap();
        let b = Grid::from_complex(&[2], vec![Complex64::new(0.0, 1.0); 2]).unwrap();
        a.axpy(2.0, &b).unwrap();
        assert_eq!(a.field(), Field::Complex);
        assert_eq!(a.complex_at(&[0]), Complex64::new(1.0, 2.0));
    }
}
