//! Data-free fitting of diagonal-circulant factors to a target normal
//! operator.
//!
//! The loss is the Monte Carlo estimate of E ||T x - H(m, lambda) x||^2
//! over standard Gaussian probes x, which equals the squared Frobenius norm
//! of the operator residual T - H; fitting therefore needs nothing but the
//! target's apply capability (no problem data). [`frobenius_oracle`]
//! computes the exact Frobenius value densely at desk scale.
//!
//! Gradients are analytic. Complex parameters use the Wirtinger convention
//! packed as independent (re, im) reals, so the complex gradient
//! g = 2 dL/d(conj theta) carries exactly (dL/d re, dL/d im) and central
//! finite differences on the real view validate it elementwise. With the
//! unitary DFT convention, per probe x and residual r = H x - T x:
//!
//! * plain `H = diag(m) C`, `C = F^-1 diag(lambda) F`, u = C x:
//!   g_m = 2 Re(conj(u) . r) (m is kept real),
//!   g_lambda = 2 conj(F x) . F(conj(m) . r);
//! * sandwich `H = diag(m)^H C diag(m)`, w = m . x, v = C w:
//!   g_m = 2 (v . conj(r) + conj(x) . C^H(m . r)),
//!   g_lambda = 2 conj(F w) . F(m . r).
//!
//! The batch gradient is the probe mean. Probes are drawn sequentially from
//! the seeded stream and the batch reduction order is fixed, so fits are
//! bit-reproducible.

use num_complex::Complex64;

use crate::error::{CoreError, Result};
use crate::fft::{fft_unitary, spectrum_from_taps, FftDirection};
use crate::grid::{numel, Field, Grid};
use crate::linop::{DenseOracle, LinearOperator};
use crate::rng::{gaussian_probe, SeededRng};
use crate::spectral::{DiagCirculantFactor, FactorVariant};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    /// Adam with the standard moment constants.
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
    /// Plain stochastic gradient descent.
    GradientDescent,
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub variant: FactorVariant,
}

impl FitConfig {
    /// Defaults for tomography-like targets: 3000 steps, batch 4, lr 2e-2.
    pub fn tomography() -> Self {
        FitConfig {
            steps: 3000,
            batch: 4,
            lr: 2e-2,
            optimizer: Optimizer::adam(),
            seed: 0,
            variant: FactorVariant::Plain,
        }
    }

    /// Defaults for MRI-like targets: sandwich variant, lr 2.5e-2.
    pub fn mri() -> Self {
        FitConfig {
            steps: 3000,
            batch: 4,
            lr: 2.5e-2,
            optimizer: Optimizer::adam(),
            seed: 0,
            variant: FactorVariant::SandwichMri,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 {
            return Err(CoreError::InvalidArgument(
                "fit needs at least one step and one probe per batch".into(),
            ));
        }
        if self.lr <= 0.0 {
            return Err(CoreError::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FitTrace {
    /// Monte Carlo loss at every step (length = steps).
    pub losses: Vec<f64>,
    /// Loss of the returned (best) iterate.
    pub final_loss: f64,
    /// Step at which the returned iterate was observed.
    pub best_step: usize,
    pub wall_seconds: f64,
}

/// Loss threshold relative to the initial loss beyond which the fit aborts.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Batch loss and analytic gradients at (m, lambda) for the given probes.
///
/// Returns (loss, grad_m, grad_lambda); `grad_m` is real for the plain
/// variant and complex for the sandwich variant.
pub fn loss_and_grad(
    m: &Grid,
    lambda: &Grid,
    variant: FactorVariant,
    target: &dyn LinearOperator,
    probes: &[Grid],
) -> Result<(f64, Grid, Grid)> {
    if probes.is_empty() {
        return Err(CoreError::InvalidArgument("empty probe batch".into()));
    }
    let shape = m.shape().to_vec();
    let n = numel(&shape);
    let lambda_c = lambda.to_complex();
    let lam = lambda_c.complex_slice()?.to_vec();
    let mv = m.complex_values().into_owned();

    let mut loss = 0.0f64;
    let mut gm = vec![Complex64::ZERO; n];
    let mut gl = vec![Complex64::ZERO; n];

    for probe in probes {
        if probe.shape() != shape.as_slice() {
            return Err(CoreError::ShapeMismatch {
                context: "factorfit::loss_and_grad",
                expected: shape.clone(),
                got: probe.shape().to_vec(),
            });
        }
        let tx = target.apply(probe)?;
        let tx = tx.complex_values();
        let xv = probe.complex_values();

        match variant {
            FactorVariant::Plain => {
                // s = F x, u = F^-1 (lambda . s), hx = m . u.
                let mut s = xv.to_vec();
                fft_unitary(&mut s, &shape, FftDirection::Forward)?;
                let mut u = s.clone();
                for (z, l) in u.iter_mut().zip(&lam) {
                    *z *= l;
                }
                fft_unitary(&mut u, &shape, FftDirection::Inverse)?;
                let r: Vec<Complex64> = u
                    .iter()
                    .zip(mv.iter())
                    .zip(tx.iter())
                    .map(|((u, m), t)| m * u - t)
                    .collect();
                loss += r.iter().map(|z| z.norm_sqr()).sum::<f64>();
                for ((g, u), r) in gm.iter_mut().zip(&u).zip(&r) {
                    *g += Complex64::new(2.0 * (u.conj() * r).re, 0.0);
                }
                // g_lambda = 2 conj(s) . F(conj(m) . r).
                let mut fr: Vec<Complex64> =
                    mv.iter().zip(&r).map(|(m, r)| m.conj() * r).collect();
                fft_unitary(&mut fr, &shape, FftDirection::Forward)?;
                for ((g, s), fr) in gl.iter_mut().zip(&s).zip(&fr) {
                    *g += 2.0 * s.conj() * fr;
                }
            }
            FactorVariant::SandwichMri => {
                // w = m . x, s = F w, v = F^-1 (lambda . s), hx = conj(m) . v.
                let w: Vec<Complex64> = mv.iter().zip(xv.iter()).map(|(m, x)| m * x).collect();
                let mut s = w.clone();
                fft_unitary(&mut s, &shape, FftDirection::Forward)?;
                let mut v = s.clone();
                for (z, l) in v.iter_mut().zip(&lam) {
                    *z *= l;
                }
                fft_unitary(&mut v, &shape, FftDirection::Inverse)?;
                let r: Vec<Complex64> = v
                    .iter()
                    .zip(mv.iter())
                    .zip(tx.iter())
                    .map(|((v, m), t)| m.conj() * v - t)
                    .collect();
                loss += r.iter().map(|z| z.norm_sqr()).sum::<f64>();

                let mr: Vec<Complex64> = mv.iter().zip(&r).map(|(m, r)| m * r).collect();
                // g_lambda = 2 conj(s) . F(m . r).
                let mut fmr = mr.clone();
                fft_unitary(&mut fmr, &shape, FftDirection::Forward)?;
                for ((g, s), fmr) in gl.iter_mut().zip(&s).zip(&fmr) {
                    *g += 2.0 * s.conj() * fmr;
                }
                // g_m = 2 (v . conj(r) + conj(x) . C^H(m . r)).
                let mut chmr = mr;
                fft_unitary(&mut chmr, &shape, FftDirection::Forward)?;
                for (z, l) in chmr.iter_mut().zip(&lam) {
                    *z *= l.conj();
                }
                fft_unitary(&mut chmr, &shape, FftDirection::Inverse)?;
                for (((g, v), r), (x, c)) in gm
                    .iter_mut()
                    .zip(&v)
                    .zip(&r)
                    .zip(xv.iter().zip(&chmr))
                {
                    *g += 2.0 * (v * r.conj() + x.conj() * c);
                }
            }
        }
    }

    let scale = 1.0 / probes.len() as f64;
    loss *= scale;
    gm.iter_mut().for_each(|z| *z *= scale);
    gl.iter_mut().for_each(|z| *z *= scale);

    let grad_m = match variant {
        FactorVariant::Plain => Grid::from_real(&shape, gm.into_iter().map(|z| z.re).collect())?,
        FactorVariant::SandwichMri => Grid::from_complex(&shape, gm)?,
    };
    let grad_lambda = Grid::from_complex(&shape, gl)?;
    Ok((loss, grad_m, grad_lambda))
}

/// Spectrum of the best pure-circulant guess: the target's response to a
/// centered impulse, circularly shifted back to the origin and transformed.
pub fn impulse_spectrum_init(target: &dyn LinearOperator) -> Result<Grid> {
    let shape = target.in_shape().to_vec();
    let n = numel(&shape);
    let center: Vec<usize> = shape.iter().map(|&e| e / 2).collect();
    let mut delta = Grid::zeros(&shape, target.in_field())?;
    let c_flat = delta.flat_index(&center);
    match target.in_field() {
        Field::Real => delta.real_slice_mut()?[c_flat] = 1.0,
        Field::Complex => delta.complex_slice_mut()?[c_flat] = Complex64::new(1.0, 0.0),
    }
    let response = target.apply(&delta)?;
    let resp = response.complex_values();
    // taps[o] = response[(o + c) mod n], per dimension.
    let d = shape.len();
    let mut taps = vec![Complex64::ZERO; n];
    for (flat, tap) in taps.iter_mut().enumerate() {
        let mut rem = flat;
        let mut src = 0usize;
        for dim in 0..d {
            let stride: usize = shape[dim + 1..].iter().product();
            let idx = rem / stride;
            rem %= stride;
            src = src * shape[dim] + (idx + center[dim]) % shape[dim];
        }
        *tap = resp[src];
    }
    let spectrum = spectrum_from_taps(&taps, &shape)?;
    Grid::from_complex(&shape, spectrum)
}

/// Fit (m, lambda) to a square target operator by stochastic gradient
/// descent on Gaussian probes.
///
/// Initialization: m = 1 and lambda from [`impulse_spectrum_init`]. The fit
/// is deterministic given the config seed and returns the iterate with the
/// lowest observed batch loss. Aborts with the partial trace if the loss
/// exceeds [`DIVERGENCE_FACTOR`] times the initial loss.
pub fn fit_factor(
    target: &dyn LinearOperator,
    cfg: &FitConfig,
) -> Result<(DiagCirculantFactor, FitTrace)> {
    cfg.validate()?;
    if target.in_shape() != target.out_shape() {
        return Err(CoreError::InvalidArgument(
            "fit target must be square (a normal operator)".into(),
        ));
    }
    let start = std::time::Instant::now();
    let shape = target.in_shape().to_vec();
    let n = numel(&shape);

    let mut m = match cfg.variant {
        FactorVariant::Plain => Grid::constant(&shape, 1.0)?,
        FactorVariant::SandwichMri => Grid::constant(&shape, 1.0)?.to_complex(),
    };
    let mut lambda = impulse_spectrum_init(target)?;

    let param_len = match cfg.variant {
        FactorVariant::Plain => n + 2 * n,
        FactorVariant::SandwichMri => 2 * n + 2 * n,
    };
    let mut adam_m = vec![0.0f64; param_len];
    let mut adam_v = vec![0.0f64; param_len];
    let mut grad_flat = vec![0.0f64; param_len];
    let mut params = vec![0.0f64; param_len];
    let mut best_params = vec![0.0f64; param_len];
    let mut best_loss = f64::INFINITY;
    let mut best_step = 0usize;

    let mut rng = SeededRng::new(cfg.seed);
    let probe_field = target.in_field();

    let mut losses = Vec::with_capacity(cfg.steps);
    let mut initial_loss = None;

    for step in 0..cfg.steps {
        let probes: Vec<Grid> = (0..cfg.batch)
            .map(|_| gaussian_probe(&shape, probe_field, &mut rng))
            .collect::<Result<_>>()?;
        let (loss, grad_m, grad_lambda) =
            loss_and_grad(&m, &lambda, cfg.variant, target, &probes)?;
        losses.push(loss);
        let init = *initial_loss.get_or_insert(loss);
        // The floor keeps optimizer wander from a (near-)exact
        // initialization from tripping the guard; real blow-ups clear it.
        if !loss.is_finite() || loss > DIVERGENCE_FACTOR * init.max(1e-3) {
            return Err(CoreError::FitDiverged {
                step,
                initial_loss: init,
                loss,
                losses,
            });
        }
        pack_params(&grad_m, &grad_lambda, cfg.variant, &mut grad_flat)?;
        pack_params(&m, &lambda, cfg.variant, &mut params)?;
        if loss < best_loss {
            best_loss = loss;
            best_params.copy_from_slice(&params);
            best_step = step;
        }
        match cfg.optimizer {
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let t = (step + 1) as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for i in 0..param_len {
                    let g = grad_flat[i];
                    adam_m[i] = beta1 * adam_m[i] + (1.0 - beta1) * g;
                    adam_v[i] = beta2 * adam_v[i] + (1.0 - beta2) * g * g;
                    let mhat = adam_m[i] / bc1;
                    let vhat = adam_v[i] / bc2;
                    params[i] -= cfg.lr * mhat / (vhat.sqrt() + epsilon);
                }
            }
            Optimizer::GradientDescent => {
                for i in 0..param_len {
                    params[i] -= cfg.lr * grad_flat[i];
                }
            }
        }
        unpack_params(&params, cfg.variant, &mut m, &mut lambda)?;
    }

    // Keep the best iterate seen: the stochastic loss is non-monotone under
    // Adam and the last step need not be the best one.
    unpack_params(&best_params, cfg.variant, &mut m, &mut lambda)?;
    let trace = FitTrace {
        losses,
        final_loss: best_loss,
        best_step,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    let factor = DiagCirculantFactor::new(m, lambda, cfg.variant)?;
    Ok((factor, trace))
}

/// Exact squared Frobenius norm of the operator residual target - H,
/// computed densely (desk-scale size guard applies).
pub fn frobenius_oracle(target: &dyn LinearOperator, factor: &DiagCirculantFactor) -> Result<f64> {
    let dense_target = DenseOracle::from_operator(target)?;
    let dense_factor = DenseOracle::from_operator(factor)?;
    Ok(dense_target.sub(&dense_factor)?.frobenius_sq())
}

/// Monte Carlo loss estimate over `n_probes` fresh probes: (mean, stderr).
pub fn monte_carlo_loss(
    target: &dyn LinearOperator,
    factor: &DiagCirculantFactor,
    n_probes: usize,
    rng: &mut SeededRng,
) -> Result<(f64, f64)> {
    if n_probes == 0 {
        return Err(CoreError::InvalidArgument("need at least one probe".into()));
    }
    let shape = target.in_shape();
    let mut values = Vec::with_capacity(n_probes);
    for _ in 0..n_probes {
        let x = gaussian_probe(shape, target.in_field(), rng)?;
        let hx = factor.apply(&x)?;
        let tx = target.apply(&x)?;
        values.push(hx.sub(&tx)?.norm_sq());
    }
    let mean = values.iter().sum::<f64>() / n_probes as f64;
    let var = if n_probes > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n_probes - 1) as f64
    } else {
        0.0
    };
    Ok((mean, (var / n_probes as f64).sqrt()))
}

/// Worst elementwise relative disagreement between the analytic gradients
/// and central finite differences on a seeded random instance (random
/// binary-mask target, random factor parameters, two probes).
pub fn gradient_check_max_rel(
    variant: FactorVariant,
    shape: &[usize],
    seed: u64,
) -> Result<f64> {
    use crate::linop::{MaskOperator, NormalOperator};
    use crate::tolerances::GRADIENT_CHECK_STEP;

    let mut rng = SeededRng::new(seed);
    let n = numel(shape);
    let bits: Vec<f64> = (0..n).map(|_| (rng.next_f64() < 0.6) as u8 as f64).collect();
    let op = MaskOperator::new(Grid::from_real(shape, bits)?)?;
    let normal = NormalOperator::new(&op);
    let m0 = match variant {
        FactorVariant::Plain => gaussian_probe(shape, Field::Real, &mut rng)?,
        FactorVariant::SandwichMri => gaussian_probe(shape, Field::Complex, &mut rng)?,
    };
    let l0 = gaussian_probe(shape, Field::Complex, &mut rng)?;
    let probes: Vec<Grid> = (0..2)
        .map(|_| gaussian_probe(shape, Field::Real, &mut rng))
        .collect::<Result<_>>()?;
    let (_, gm, gl) = loss_and_grad(&m0, &l0, variant, &normal, &probes)?;
    let loss_at = |m: &Grid, l: &Grid| -> Result<f64> {
        Ok(loss_and_grad(m, l, variant, &normal, &probes)?.0)
    };

    let h = GRADIENT_CHECK_STEP;
    let mut max_rel = 0.0f64;
    for i in 0..n {
        let m_parts = if m0.is_real() { 1 } else { 2 };
        for part in 0..m_parts {
            let mut lo = m0.to_complex();
            let mut hi = m0.to_complex();
            let delta = if part == 0 {
                Complex64::new(h, 0.0)
            } else {
                Complex64::new(0.0, h)
            };
            hi.complex_slice_mut()?[i] += delta;
            lo.complex_slice_mut()?[i] -= delta;
            let (hi, lo) = if m0.is_real() {
                (hi.real_part(), lo.real_part())
            } else {
                (hi, lo)
            };
            let fd = (loss_at(&hi, &l0)? - loss_at(&lo, &l0)?) / (2.0 * h);
            let analytic = if m0.is_real() {
                gm.real_slice()?[i]
            } else if part == 0 {
                gm.complex_slice()?[i].re
            } else {
                gm.complex_slice()?[i].im
            };
            max_rel = max_rel.max((analytic - fd).abs() / fd.abs().max(1e-8));
        }
        for part in 0..2 {
            let mut lo = l0.clone();
            let mut hi = l0.clone();
            let delta = if part == 0 {
                Complex64::new(h, 0.0)
            } else {
                Complex64::new(0.0, h)
            };
            hi.complex_slice_mut()?[i] += delta;
            lo.complex_slice_mut()?[i] -= delta;
            let fd = (loss_at(&m0, &hi)? - loss_at(&m0, &lo)?) / (2.0 * h);
            let g = gl.complex_slice()?[i];
            let analytic = if part == 0 { g.re } else { g.im };
            max_rel = max_rel.max((analytic - fd).abs() / fd.abs().max(1e-8));
        }
    }
    Ok(max_rel)
}

fn pack_params(m: &Grid, lambda: &Grid, variant: FactorVariant, out: &mut [f64]) -> Result<()> {
    let n = m.numel();
    match variant {
        FactorVariant::Plain => {
            let mv = m.real_slice()?;
            out[..n].copy_from_slice(mv);
            let lv = lambda.complex_slice()?;
            for (i, z) in lv.iter().enumerate() {
                out[n + 2 * i] = z.re;
                out[n + 2 * i + 1] = z.im;
            }
        }
        FactorVariant::SandwichMri => {
            let mv = m.complex_slice()?;
            for (i, z) in mv.iter().enumerate() {
                out[2 * i] = z.re;
                out[2 * i + 1] = z.im;
            }
            let lv = lambda.complex_slice()?;
            for (i, z) in lv.iter().enumerate() {
                out[2 * n + 2 * i] = z.re;
                out[2 * n + 2 * i + 1] = z.im;
            }
        }
    }
    Ok(())
}

fn unpack_params(
    params: &[f64],
    variant: FactorVariant,
    m: &mut Grid,
    lambda: &mut Grid,
) -> Result<()> {
    let n = m.numel();
    match variant {
        FactorVariant::Plain => {
            m.real_slice_mut()?.copy_from_slice(&params[..n]);
            for (i, z) in lambda.complex_slice_mut()?.iter_mut().enumerate() {
                *z = Complex64::new(params[n + 2 * i], params[n + 2 * i + 1]);
            }
        }
        FactorVariant::SandwichMri => {
            for (i, z) in m.complex_slice_mut()?.iter_mut().enumerate() {
                *z = Complex64::new(params[2 * i], params[2 * i + 1]);
            }
            for (i, z) in lambda.complex_slice_mut()?.iter_mut().enumerate() {
                *z = Complex64::new(params[2 * n + 2 * i], params[2 * n + 2 * i + 1]);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::{MaskOperator, NormalOperator};

    fn half_mask_1d(n: usize) -> MaskOperator {
        let data: Vec<f64> = (0..n).map(|i| (i % 2 == 0) as u8 as f64).collect();
        MaskOperator::new(Grid::from_real(&[n], data).unwrap()).unwrap()
    }

    #[test]
    fn zero_residual_gives_zero_gradients() {
        // Exact factor for inpainting: m = mask, lambda = 1.
        let op = half_mask_1d(8);
        let normal = NormalOperator::new(&op);
        let m = op.mask().clone();
        let lambda = Grid::constant(&[8], 1.0).unwrap().to_complex();
        let mut rng = SeededRng::new(1);
        let probes: Vec<Grid> = (0..3)
            .map(|_| gaussian_probe(&[8], Field::Real, &mut rng).unwrap())
            .collect();
        let (loss, gm, gl) =
            loss_and_grad(&m, &lambda, FactorVariant::Plain, &normal, &probes).unwrap();
        assert!(loss < 1e-24);
        assert!(gm.max_abs() < 1e-12);
        assert!(gl.max_abs() < 1e-12);
    }

    #[test]
    fn plain_loss_is_invariant_under_scale_exchange() {
        // (m, lambda) -> (c m, lambda / c) leaves H and hence the loss fixed.
        let op = half_mask_1d(8);
        let normal = NormalOperator::new(&op);
        let mut rng = SeededRng::new(2);
        let m = Grid::constant(&[8], 1.0).unwrap();
        let lambda = gaussian_probe(&[8], Field::Complex, &mut rng).unwrap();
        let probes: Vec<Grid> = (0..4)
            .map(|_| gaussian_probe(&[8], Field::Real, &mut rng).unwrap())
            .collect();
        let (loss_a, _, _) =
            loss_and_grad(&m, &lambda, FactorVariant::Plain, &normal, &probes).unwrap();
        let c = 3.7f64;
        let mut m_scaled = m.clone();
        m_scaled.scale(c);
        let mut lambda_scaled = lambda.clone();
        lambda_scaled.scale(1.0 / c);
        let (loss_b, _, _) = loss_and_grad(
            &m_scaled,
            &lambda_scaled,
            FactorVariant::Plain,
            &normal,
            &probes,
        )
        .unwrap();
        assert!((loss_a - loss_b).abs() < 1e-10 * loss_a.max(1.0));
    }

    #[test]
    fn monte_carlo_loss_matches_counting_argument() {
        // Identity factor vs half-zero inpainting on n = 16: the residual is
        // a 0/1 diagonal with 8 nonzeros, so the Frobenius value is 8.
        let op = half_mask_1d(16);
        let normal = NormalOperator::new(&op);
        let factor = DiagCirculantFactor::identity(&[16]).unwrap();
        let frob = frobenius_oracle(&normal, &factor).unwrap();
        assert!((frob - 8.0).abs() < 1e-10);
        let mut rng = SeededRng::new(3);
        let (mean, se) = monte_carlo_loss(&normal, &factor, 10_000, &mut rng).unwrap();
        assert!((mean - 8.0).abs() <= 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn impulse_init_recovers_circulant_spectrum() {
        let kernel = Grid::from_real(&[3], vec![0.2, 0.5, 0.3]).unwrap();
        let conv = crate::linop::ConvOperator::new(&kernel, &[8]).unwrap();
        let normal = NormalOperator::new(&conv);
        let lambda0 = impulse_spectrum_init(&normal).unwrap();
        for (got, want) in lambda0
            .complex_slice()
            .unwrap()
            .iter()
            .zip(conv.normal_spectrum())
        {
            assert!((got - want).norm() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn divergence_guard_aborts_with_trace() {
        let op = half_mask_1d(8);
        let normal = NormalOperator::new(&op);
        let mut cfg = FitConfig::tomography();
        cfg.steps = 200;
        cfg.lr = 1e6; // absurd step size to force blow-up
        cfg.optimizer = Optimizer::GradientDescent;
        cfg.seed = 4;
        match fit_factor(&normal, &cfg) {
            Err(CoreError::FitDiverged { losses, .. }) => assert!(!losses.is_empty()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
