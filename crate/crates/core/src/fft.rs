//! Unitary multi-dimensional FFT helpers.
//!
//! Convention used throughout the crate: both transform directions are
//! orthonormal, i.e. forward and inverse each carry a 1/sqrt(N) factor over
//! the transformed axes, so `F^-1 = F^H` and adjoint identities hold
//! exactly. Under this convention a circular convolution with spatial taps
//! `t` is `F^-1 diag(lambda) F` where `lambda` is the *unnormalized* DFT of
//! `t` (frequency 0 at index 0).
//!
//! Every call plans its own transforms and owns its scratch buffers; there
//! is no shared mutable state, so concurrent evaluations are safe.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{CoreError, Result};
use crate::grid::numel;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FftDirection {
    Forward,
    Inverse,
}

/// In-place unitary FFT over all axes of a row-major buffer.
pub fn fft_unitary(data: &mut [Complex64], shape: &[usize], dir: FftDirection) -> Result<()> {
    let axes: Vec<usize> = (0..shape.len()).collect();
    fft_unitary_axes(data, shape, &axes, dir)
}

/// In-place unitary FFT over a subset of axes.
pub fn fft_unitary_axes(
    data: &mut [Complex64],
    shape: &[usize],
    axes: &[usize],
    dir: FftDirection,
) -> Result<()> {
    if data.len() != numel(shape) {
        return Err(CoreError::ShapeMismatch {
            context: "fft_unitary_axes",
            expected: shape.to_vec(),
            got: vec![data.len()],
        });
    }
    let mut transformed = 1usize;
    let mut planner = FftPlanner::<f64>::new();
    for &axis in axes {
        if axis >= shape.len() {
            return Err(CoreError::InvalidArgument(format!(
                "fft axis {axis} out of range for shape {shape:?}"
            )));
        }
        transform_axis(data, shape, axis, dir, &mut planner);
        transformed *= shape[axis];
    }
    let scale = 1.0 / (transformed as f64).sqrt();
    data.iter_mut().for_each(|z| *z *= scale);
    Ok(())
}

fn transform_axis(
    data: &mut [Complex64],
    shape: &[usize],
    axis: usize,
    dir: FftDirection,
    planner: &mut FftPlanner<f64>,
) {
    let len = shape[axis];
    if len == 1 {
        return;
    }
    let fft = match dir {
        FftDirection::Forward => planner.plan_fft_forward(len),
        FftDirection::Inverse => planner.plan_fft_inverse(len),
    };
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut line = vec![Complex64::ZERO; len];
    let mut scratch = vec![Complex64::ZERO; fft.get_inplace_scratch_len()];
    for o in 0..outer {
        let base_outer = o * len * inner;
        for i in 0..inner {
            let base = base_outer + i;
            for j in 0..len {
                line[j] = data[base + j * inner];
            }
            fft.process_with_scratch(&mut line, &mut scratch);
            for j in 0..len {
                data[base + j * inner] = line[j];
            }
        }
    }
}

/// Unnormalized forward DFT of spatial taps: the circulant spectrum.
pub fn spectrum_from_taps(taps: &[Complex64], shape: &[usize]) -> Result<Vec<Complex64>> {
    let mut buf = taps.to_vec();
    fft_unitary(&mut buf, shape, FftDirection::Forward)?;
    let scale = (numel(shape) as f64).sqrt();
    buf.iter_mut().for_each(|z| *z *= scale);
    Ok(buf)
}

/// Spatial taps of a circulant spectrum: unnormalized inverse DFT scaled by 1/N.
pub fn taps_from_spectrum(spectrum: &[Complex64], shape: &[usize]) -> Result<Vec<Complex64>> {
    let mut buf = spectrum.to_vec();
    fft_unitary(&mut buf, shape, FftDirection::Inverse)?;
    let scale = 1.0 / (numel(shape) as f64).sqrt();
    buf.iter_mut().for_each(|z| *z *= scale);
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Naive O(N^2) multi-dimensional DFT, the independent reference.
    fn naive_dft(data: &[Complex64], shape: &[usize], dir: FftDirection) -> Vec<Complex64> {
        let n = numel(shape);
        let sign = match dir {
            FftDirection::Forward => -1.0,
            FftDirection::Inverse => 1.0,
        };
        let mut out = vec![Complex64::ZERO; n];
        let unflatten = |mut flat: usize| -> Vec<usize> {
            let mut idx = vec![0; shape.len()];
            for d in (0..shape.len()).rev() {
                idx[d] = flat % shape[d];
                flat /= shape[d];
            }
            idx
        };
        for (k, out_k) in out.iter_mut().enumerate() {
            let ki = unflatten(k);
            let mut acc = Complex64::ZERO;
            for (j, &x) in data.iter().enumerate() {
                let ji = unflatten(j);
                let phase: f64 = ki
                    .iter()
                    .zip(&ji)
                    .zip(shape)
                    .map(|((&k_d, &j_d), &n_d)| (k_d * j_d) as f64 / n_d as f64)
                    .sum();
                acc += x * Complex64::from_polar(1.0, sign * 2.0 * std::f64::consts::PI * phase);
            }
            *out_k = acc / (n as f64).sqrt();
        }
        out
    }

    #[test]
    fn matches_naive_dft_in_all_ranks() {
        let shapes: [&[usize]; 3] = [&[8], &[4, 6], &[3, 4, 5]];
        for (s, shape) in shapes.iter().enumerate() {
            let mut rng = crate::rng::SeededRng::new(100 + s as u64);
            let n = numel(shape);
            let data: Vec<Complex64> = (0..n)
                .map(|_| Complex64::new(rng.next_normal(), rng.next_normal()))
                .collect();
            for dir in [FftDirection::Forward, FftDirection::Inverse] {
                let mut fast = data.clone();
                fft_unitary(&mut fast, shape, dir).unwrap();
                let slow = naive_dft(&data, shape, dir);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).norm() < 1e-10, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn unitary_round_trip() {
        let shape = [4, 4];
        let mut rng = crate::rng::SeededRng::new(9);
        let data: Vec<Complex64> = (0..16)
            .map(|_| Complex64::new(rng.next_normal(), rng.next_normal()))
            .collect();
        let mut buf = data.clone();
        fft_unitary(&mut buf, &shape, FftDirection::Forward).unwrap();
        // Parseval: unitary transforms preserve energy.
        let e0: f64 = data.iter().map(|z| z.norm_sqr()).sum();
        let e1: f64 = buf.iter().map(|z| z.norm_sqr()).sum();
        assert!((e0 - e1).abs() < 1e-10 * e0);
        fft_unitary(&mut buf, &shape, FftDirection::Inverse).unwrap();
        for (a, b) in buf.iter().zip(&data) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn axis_subset_leaves_other_axes_alone() {
        // Transforming along axis 1 only must act independently per row.
        let shape = [2, 4];
        let mut rng = crate::rng::SeededRng::new(11);
        let data: Vec<Complex64> = (0..8)
            .map(|_| Complex64::new(rng.next_normal(), 0.0))
            .collect();
        let mut full = data.clone();
        fft_unitary_axes(&mut full, &shape, &[1], FftDirection::Forward).unwrap();
        for row in 0..2 {
            let mut line: Vec<Complex64> = data[row * 4..(row + 1) * 4].to_vec();
            fft_unitary(&mut line, &[4], FftDirection::Forward).unwrap();
            for (a, b) in full[row * 4..(row + 1) * 4].iter().zip(&line) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn taps_spectrum_round_trip() {
        let shape = [6];
        let mut rng = crate::rng::SeededRng::new(5);
        let taps: Vec<Complex64> = (0..6)
            .map(|_| Complex64::new(rng.next_normal(), rng.next_normal()))
            .collect();
        let spec = spectrum_from_taps(&taps, &shape).unwrap();
        let back = taps_from_spectrum(&spec, &shape).unwrap();
        for (a, b) in back.iter().zip(&taps) {
            assert!((a - b).norm() < 1e-12);
        }
        // Delta taps have an all-one spectrum.
        let mut delta = vec![Complex64::ZERO; 6];
        delta[0] = Complex64::new(1.0, 0.0);
        let spec = spectrum_from_taps(&delta, &shape).unwrap();
        for z in spec {
            assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }
}
