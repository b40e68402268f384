//! Circular convolution forward model (deconvolution problems).
//!
//! The boundary rule is circular, so A'A is itself exactly circulant with
//! spectrum |DFT(kernel)|^2. The kernel is given as a small grid of spatial
//! taps with its center at index extent/2 per dimension (floor); taps are
//! embedded into the volume at wrapped offsets (index - center) mod n.

use num_complex::Complex64;

use crate::error::{CoreError, Result};
use crate::fft::{fft_unitary, spectrum_from_taps, FftDirection};
use crate::grid::{numel, Field, Grid};
use crate::linop::{check_input, LinearOperator};

pub struct ConvOperator {
    vol_shape: Vec<usize>,
    field: Field,
    spectrum: Vec<Complex64>,
}

impl ConvOperator {
    pub fn new(kernel: &Grid, vol_shape: &[usize]) -> Result<Self> {
        crate::grid::check_shape(vol_shape)?;
        if kernel.ndim() != vol_shape.len() {
            return Err(CoreError::InvalidShape(format!(
                "kernel rank {} does not match volume rank {}",
                kernel.ndim(),
                vol_shape.len()
            )));
        }
        if kernel
            .shape()
            .iter()
            .zip(vol_shape)
            .any(|(&k, &n)| k > n)
        {
            return Err(CoreError::InvalidShape(format!(
                "kernel {:?} larger than volume {:?}",
                kernel.shape(),
                vol_shape
            )));
        }
        // Embed taps at wrapped offsets relative to the kernel center.
        let mut taps = vec![Complex64::ZERO; numel(vol_shape)];
        let kvals = kernel.complex_values();
        let kshape = kernel.shape().to_vec();
        let center: Vec<usize> = kshape.iter().map(|&e| e / 2).collect();
        for (flat, &val) in kvals.iter().enumerate() {
            let mut rem = flat;
            let mut pos = 0usize;
            for d in 0..kshape.len() {
                let stride: usize = kshape[d + 1..].iter().product();
                let idx = rem / stride;
                rem %= stride;
                let offset = idx as isize - center[d] as isize;
                let n = vol_shape[d] as isize;
                let wrapped = offset.rem_euclid(n) as usize;
                pos = pos * vol_shape[d] + wrapped;
            }
            taps[pos] += val;
        }
        let spectrum = spectrum_from_taps(&taps, vol_shape)?;
        Ok(ConvOperator {
            vol_shape: vol_shape.to_vec(),
            field: kernel.field(),
            spectrum,
        })
    }

    /// Frequency response of the kernel (unnormalized DFT convention).
    pub fn spectrum(&self) -> &[Complex64] {
        &self.spectrum
    }

    /// Spectrum of the normal operator: |DFT(kernel)|^2.
    pub fn normal_spectrum(&self) -> Vec<Complex64> {
        self.spectrum
            .iter()
            .map(|z| Complex64::new(z.norm_sqr(), 0.0))
            .collect()
    }

    fn convolve(&self, x: &Grid, spectrum_map: impl Fn(Complex64) -> Complex64) -> Result<Grid> {
        let mut buf = x.complex_values().into_owned();
        fft_unitary(&mut buf, &self.vol_shape, FftDirection::Forward)?;
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= spectrum_map(*s);
        }
        fft_unitary(&mut buf, &self.vol_shape, FftDirection::Inverse)?;
        let out = Grid::from_complex(&self.vol_shape, buf)?;
        // Real kernel on real input: the imaginary part is pure rounding.
        if self.field == Field::Real && x.is_real() {
            Ok(out.real_part())
        } else {
            Ok(out)
        }
    }
}

impl LinearOperator for ConvOperator {
    fn in_shape(&self) -> &[usize] {
        &self.vol_shape
    }
    fn out_shape(&self) -> &[usize] {
        &self.vol_shape
    }
    fn in_field(&self) -> Field {
        self.field
    }
    fn out_field(&self) -> Field {
        self.field
    }

    fn apply(&self, x: &Grid) -> Result<Grid> {
        if x.shape() != self.vol_shape.as_slice() {
            return Err(CoreError::ShapeMismatch {
                context: "ConvOperator::apply",
                expected: self.vol_shape.clone(),
                got: x.shape().to_vec(),
            });
        }
        self.convolve(x, |s| s)
    }

    fn adjoint(&self, y: &Grid) -> Result<Grid> {
        if y.shape() != self.vol_shape.as_slice() {
            return Err(CoreError::ShapeMismatch {
                context: "ConvOperator::adjoint",
                expected: self.vol_shape.clone(),
                got: y.shape().to_vec(),
            });
        }
        self.convolve(y, |s| s.conj())
    }

    fn normal_apply(&self, x: &Grid) -> Result<Grid> {
        check_input(x, &self.vol_shape, Field::Complex, "ConvOperator::normal_apply")?;
        // Fused fast path: one round trip with |spectrum|^2.
        self.convolve(x, |s| Complex64::new(s.norm_sqr(), 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::rel_l2_diff;
    use crate::rng::{gaussian_probe, SeededRng};

    fn delta_kernel(extent: usize) -> Grid {
        let mut taps = vec![0.0; extent];
        taps[extent / 2] = 1.0;
        Grid::from_real(&[extent], taps).unwrap()
    }

    #[test]
    fn delta_kernel_is_identity() {
        let op = ConvOperator::new(&delta_kernel(3), &[8]).unwrap();
        let mut rng = SeededRng::new(1);
        let x = gaussian_probe(&[8], Field::Real, &mut rng).unwrap();
        assert!(rel_l2_diff(&op.apply(&x).unwrap(), &x) < 1e-14);
    }

    #[test]
    fn matches_direct_circular_convolution() {
        // Independent reference: O(n^2) circular convolution in the spatial
        // domain, with the same centered-tap convention.
        let kernel = Grid::from_real(&[3], vec![0.25, 0.5, 0.25]).unwrap();
        let n = 9usize;
        let op = ConvOperator::new(&kernel, &[n]).unwrap();
        let mut rng = SeededRng::new(2);
        let x = gaussian_probe(&[n], Field::Real, &mut rng).unwrap();
        let xs = x.real_slice().unwrap();
        let mut direct = vec![0.0f64; n];
        let taps = [(-1isize, 0.25), (0, 0.5), (1, 0.25)];
        for (i, d) in direct.iter_mut().enumerate() {
            for &(o, w) in &taps {
                let j = (i as isize - o).rem_euclid(n as isize) as usize;
                *d += w * xs[j];
            }
        }
        let direct = Grid::from_real(&[n], direct).unwrap();
        assert!(rel_l2_diff(&op.apply(&x).unwrap(), &direct) < 1e-12);
    }

    #[test]
    fn fused_normal_matches_composition() {
        let kernel = Grid::from_real(&[3, 3], vec![0.0, 0.2, 0.0, 0.2, 0.2, 0.2, 0.0, 0.2, 0.0])
            .unwrap();
        let op = ConvOperator::new(&kernel, &[6, 6]).unwrap();
        let mut rng = SeededRng::new(3);
        let x = gaussian_probe(&[6, 6], Field::Real, &mut rng).unwrap();
        let fused = op.normal_apply(&x).unwrap();
        let composed = op.adjoint(&op.apply(&x).unwrap()).unwrap();
        assert!(rel_l2_diff(&fused, &composed) < 1e-12);
    }

    #[test]
    fn normal_spectrum_is_squared_magnitude() {
        let kernel = Grid::from_real(&[3], vec![0.3, 0.4, 0.3]).unwrap();
        let op = ConvOperator::new(&kernel, &[8]).unwrap();
        for (ns, s) in op.normal_spectrum().iter().zip(op.spectrum()) {
            assert!((ns.re - s.norm_sqr()).abs() < 1e-14);
            assert_eq!(ns.im, 0.0);
        }
    }
}
