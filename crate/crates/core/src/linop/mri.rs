//! Cartesian MRI forward model: coil sensitivities, unitary FFT, k-space mask.
//!
//! Forward per coil c: y_c = M . F(S_c . x); adjoint: sum_c conj(S_c) .
//! F^-1(M . y_c), so A'A = sum_c S_c^H F^-1 M'M F S_c. With C = 1, a flat
//! sensitivity and a full mask the normal operator is the identity (the DFT
//! is unitary).
//!
//! The transform may be restricted to a subset of axes (`fft_axes`) to model
//! hybrid acquisitions where one direction is already decoded; when axis 0
//! is excluded the operator is block-separable along depth and
//! [`MriOperator::restrict_depth`] returns the slab sub-operator.
//!
//! With C = 1 the output shape equals the volume shape; with C > 1 a
//! leading coil axis is prepended (the volume rank must then be <= 2).

use num_complex::Complex64;

use crate::error::{CoreError, Result};
use crate::fft::{fft_unitary_axes, FftDirection};
use crate::grid::{numel, Field, Grid};
use crate::linop::LinearOperator;

pub struct MriOperator {
    sens: Vec<Vec<Complex64>>,
    mask: Vec<f64>,
    vol_shape: Vec<usize>,
    fft_axes: Vec<usize>,
    out_shape: Vec<usize>,
}

impl MriOperator {
    /// Build from per-coil sensitivity grids and a binary k-space mask.
    ///
    /// `fft_axes = None` transforms every axis. With `normalize` the
    /// sensitivities are rescaled pointwise so sum_c |S_c|^2 = 1, matching
    /// the unit-spectral-norm convention.
    pub fn new(
        sens: &[Grid],
        mask: &Grid,
        fft_axes: Option<&[usize]>,
        normalize: bool,
    ) -> Result<Self> {
        if sens.is_empty() {
            return Err(CoreError::InvalidArgument("at least one coil required".into()));
        }
        let vol_shape = mask.shape().to_vec();
        let mask_values = mask
            .real_slice()
            .map_err(|_| CoreError::FieldMismatch("k-space mask must be a real 0/1 grid".into()))?;
        if mask_values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(CoreError::InvalidArgument(
                "k-space mask entries must be exactly 0 or 1".into(),
            ));
        }
        for s in sens {
            if s.shape() != vol_shape.as_slice() {
                return Err(CoreError::ShapeMismatch {
                    context: "MriOperator::new",
                    expected: vol_shape.clone(),
                    got: s.shape().to_vec(),
                });
            }
        }
        let coils = sens.len();
        let out_shape = if coils == 1 {
            vol_shape.clone()
        } else {
            if vol_shape.len() + 1 > crate::grid::MAX_NDIM {
                return Err(CoreError::InvalidShape(format!(
                    "multi-coil output [C, {vol_shape:?}] exceeds rank {}",
                    crate::grid::MAX_NDIM
                )));
            }
            let mut s = vec![coils];
            s.extend_from_slice(&vol_shape);
            s
        };
        let axes: Vec<usize> = match fft_axes {
            None => (0..vol_shape.len()).collect(),
            Some(a) => {
                let mut a = a.to_vec();
                a.sort_unstable();
                a.dedup();
                if a.iter().any(|&ax| ax >= vol_shape.len()) || a.is_empty() {
                    return Err(CoreError::InvalidArgument(format!(
                        "fft axes {a:?} invalid for volume rank {}",
                        vol_shape.len()
                    )));
                }
                a
            }
        };

        let mut sens_values: Vec<Vec<Complex64>> = sens
            .iter()
            .map(|s| s.complex_values().into_owned())
            .collect();
        if normalize {
            let n = numel(&vol_shape);
            for i in 0..n {
                let total: f64 = sens_values.iter().map(|s| s[i].norm_sqr()).sum();
                if total <= 0.0 {
                    return Err(CoreError::InvalidArgument(
                        "sensitivity normalization hit a zero pointwise sum".into(),
                    ));
                }
                let scale = 1.0 / total.sqrt();
                for s in sens_values.iter_mut() {
                    s[i] *= scale;
                }
            }
        }
        Ok(MriOperator {
            sens: sens_values,
            mask: mask_values.to_vec(),
            vol_shape,
            fft_axes: axes,
            out_shape,
        })
    }

    pub fn coils(&self) -> usize {
        self.sens.len()
    }

    pub fn fft_axes(&self) -> &[usize] {
        &self.fft_axes
    }

    /// Sum_c |S_c|^2 as a grid (diagnostic for the normalization).
    pub fn sensitivity_energy(&self) -> Grid {
        let n = numel(&self.vol_shape);
        let data = (0..n)
            .map(|i| self.sens.iter().map(|s| s[i].norm_sqr()).sum())
            .collect();
        Grid::from_real(&self.vol_shape, data).expect("valid shape")
    }

    /// Slab sub-operator along axis 0, valid when axis 0 is not transformed.
    pub fn restrict_depth(&self, lo: usize, hi: usize) -> Result<MriOperator> {
        if self.fft_axes.contains(&0) {
            return Err(CoreError::InvalidArgument(
                "depth restriction requires axis 0 to be outside the fft axes".into(),
            ));
        }
        if lo >= hi || hi > self.vol_shape[0] {
            return Err(CoreError::InvalidArgument(format!(
                "bad depth range {lo}..{hi} for extent {}",
                self.vol_shape[0]
            )));
        }
        let slab: usize = self.vol_shape[1..].iter().product();
        let range = lo * slab..hi * slab;
        let mut vol_shape = self.vol_shape.clone();
        vol_shape[0] = hi - lo;
        let sens = self
            .sens
            .iter()
            .map(|s| s[range.clone()].to_vec())
            .collect();
        let mask = self.mask[range.clone()].to_vec();
        let out_shape = if self.sens.len() == 1 {
            vol_shape.clone()
        } else {
            let mut s = vec![self.sens.len()];
            s.extend_from_slice(&vol_shape);
            s
        };
        Ok(MriOperator {
            sens,
            mask,
            vol_shape,
            fft_axes: self.fft_axes.clone(),
            out_shape,
        })
    }

    fn check_vol(&self, x: &Grid, context: &'static str) -> Result<()> {
        if x.shape() != self.vol_shape.as_slice() {
            return Err(CoreError::ShapeMismatch {
                context,
                expected: self.vol_shape.clone(),
                got: x.shape().to_vec(),
            });
        }
        Ok(())
    }
}

impl LinearOperator for MriOperator {
    fn in_shape(&self) -> &[usize] {
        &self.vol_shape
    }
    fn out_shape(&self) -> &[usize] {
        &self.out_shape
    }
    fn in_field(&self) -> Field {
        Field::Complex
    }
    fn out_field(&self) -> Field {
        Field::Complex
    }

    fn apply(&self, x: &Grid) -> Result<Grid> {
        self.check_vol(x, "MriOperator::apply")?;
        let xv = x.complex_values();
        let n = xv.len();
        let mut out = Vec::with_capacity(n * self.sens.len());
        for sens in &self.sens {
            let mut buf: Vec<Complex64> = sens.iter().zip(xv.iter()).map(|(s, x)| s * x).collect();
            fft_unitary_axes(&mut buf, &self.vol_shape, &self.fft_axes, FftDirection::Forward)?;
            for (b, &m) in buf.iter_mut().zip(&self.mask) {
                *b *= m;
            }
            out.extend_from_slice(&buf);
        }
        Grid::from_complex(&self.out_shape, out)
    }

    fn adjoint(&self, y: &Grid) -> Result<Grid> {
        if y.shape() != self.out_shape.as_slice() {
            return Err(CoreError::ShapeMismatch {
                context: "MriOperator::adjoint",
                expected: self.out_shape.clone(),
                got: y.shape().to_vec(),
            });
        }
        let yv = y.complex_values();
        let n = numel(&self.vol_shape);
        let mut acc = vec![Complex64::ZERO; n];
        for (c, sens) in self.sens.iter().enumerate() {
            let mut buf: Vec<Complex64> = yv[c * n..(c + 1) * n]
                .iter()
                .zip(&self.mask)
                .map(|(y, &m)| y * m)
                .collect();
            fft_unitary_axes(&mut buf, &self.vol_shape, &self.fft_axes, FftDirection::Inverse)?;
            for ((a, b), s) in acc.iter_mut().zip(&buf).zip(sens) {
                *a += s.conj() * b;
            }
        }
        Grid::from_complex(&self.vol_shape, acc)
    }
}
