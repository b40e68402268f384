//! Factor-fit verification: finite-difference gradient checks, the
//! probe-loss/Frobenius identity, and exact-family recovery.

use num_complex::Complex64;
use partfact_core::factorfit::{
    fit_factor, frobenius_oracle, loss_and_grad, monte_carlo_loss, FitConfig,
};
use partfact_core::grid::{Field, Grid};
use partfact_core::linop::{ConvOperator, LinearOperator, MaskOperator, MriOperator, NormalOperator};
use partfact_core::rng::{gaussian_probe, SeededRng};
use partfact_core::spectral::{DiagCirculantFactor, FactorVariant};
use partfact_core::tolerances::{EXACT_FIT_LOSS, GRADIENT_CHECK_REL, GRADIENT_CHECK_STEP};

fn random_mask_op(shape: &[usize], keep: f64, seed: u64) -> MaskOperator {
    let mut rng = SeededRng::new(seed);
    let n: usize = shape.iter().product();
    let bits: Vec<f64> = (0..n).map(|_| (rng.next_f64() < keep) as u8 as f64).collect();
    MaskOperator::new(Grid::from_real(shape, bits).unwrap()).unwrap()
}

/// Central finite differences on the (re, im) view of the parameters,
/// matching the packed-real Wirtinger convention of the analytic gradients.
fn check_gradients_once(
    variant: FactorVariant,
    shape: &[usize],
    seed: u64,
) -> f64 {
    let mut rng = SeededRng::new(seed);
    let op = random_mask_op(shape, 0.6, seed + 1000);
    let normal = NormalOperator::new(&op);
    let m0 = match variant {
        FactorVariant::Plain => gaussian_probe(shape, Field::Real, &mut rng).unwrap(),
        FactorVariant::SandwichMri => gaussian_probe(shape, Field::Complex, &mut rng).unwrap(),
    };
    let l0 = gaussian_probe(shape, Field::Complex, &mut rng).unwrap();
    let probes: Vec<Grid> = (0..2)
        .map(|_| gaussian_probe(shape, Field::Real, &mut rng).unwrap())
        .collect();
    let (_, gm, gl) = loss_and_grad(&m0, &l0, variant, &normal, &probes).unwrap();
    let loss_at =
        |m: &Grid, l: &Grid| loss_and_grad(m, l, variant, &normal, &probes).unwrap().0;

    let h = GRADIENT_CHECK_STEP;
    let n: usize = shape.iter().product();
    let mut max_rel = 0.0f64;

    for i in 0..n {
        let m_parts = if m0.is_real() { 1 } else { 2 };
        for part in 0..m_parts {
            let perturbed = |delta: f64| {
                let mut mp = m0.to_complex();
                let s = mp.complex_slice_mut().unwrap();
                s[i] += if part == 0 {
                    Complex64::new(delta, 0.0)
                } else {
                    Complex64::new(0.0, delta)
                };
                let mp = if m0.is_real() { mp.real_part() } else { mp };
                loss_at(&mp, &l0)
            };
            let fd = (perturbed(h) - perturbed(-h)) / (2.0 * h);
            let analytic = if m0.is_real() {
                gm.real_slice().unwrap()[i]
            } else if part == 0 {
                gm.complex_slice().unwrap()[i].re
            } else {
                gm.complex_slice().unwrap()[i].im
            };
            max_rel = max_rel.max((analytic - fd).abs() / fd.abs().max(1e-8));
        }
        for part in 0..2 {
            let perturbed = |delta: f64| {
                let mut lp = l0.clone();
                let s = lp.complex_slice_mut().unwrap();
                s[i] += if part == 0 {
                    Complex64::new(delta, 0.0)
                } else {
                    Complex64::new(0.0, delta)
                };
                loss_at(&m0, &lp)
            };
            let fd = (perturbed(h) - perturbed(-h)) / (2.0 * h);
            let g = gl.complex_slice().unwrap()[i];
            let analytic = if part == 0 { g.re } else { g.im };
            max_rel = max_rel.max((analytic - fd).abs() / fd.abs().max(1e-8));
        }
    }
    max_rel
}

#[test]
fn analytic_gradients_match_finite_differences() {
    // 20 seeded instances per variant, split across 1-d and 2-d shapes.
    for variant in [FactorVariant::Plain, FactorVariant::SandwichMri] {
        for k in 0..20u64 {
            let shape: &[usize] = if k % 2 == 0 { &[7] } else { &[3, 4] };
            let rel = check_gradients_once(variant, shape, 3000 + k);
            assert!(
                rel < GRADIENT_CHECK_REL,
                "{variant:?} instance {k}: max relative error {rel:e}"
            );
        }
    }
}

#[test]
fn probe_loss_converges_to_frobenius_oracle() {
    // Plain variant on an inpainting target, sandwich variant on a
    // single-coil MRI target, all at 16x16; the Monte Carlo mean must agree
    // with the dense Frobenius value within 3 standard errors at every N.
    let shape = [16usize, 16];
    let mask_op = random_mask_op(&shape, 0.5, 42);
    let normal_plain = NormalOperator::new(&mask_op);
    let mut rng = SeededRng::new(43);
    let m = gaussian_probe(&shape, Field::Real, &mut rng).unwrap();
    let lambda = gaussian_probe(&shape, Field::Complex, &mut rng).unwrap();
    let plain = DiagCirculantFactor::new(m, lambda, FactorVariant::Plain).unwrap();

    let sens = gaussian_probe(&shape, Field::Complex, &mut rng).unwrap();
    let kbits: Vec<f64> = (0..256).map(|_| (rng.next_f64() < 0.4) as u8 as f64).collect();
    let kmask = Grid::from_real(&shape, kbits).unwrap();
    let mri = MriOperator::new(&[sens], &kmask, None, false).unwrap();
    let m = gaussian_probe(&shape, Field::Complex, &mut rng).unwrap();
    let lambda = gaussian_probe(&shape, Field::Complex, &mut rng).unwrap();
    let sandwich = DiagCirculantFactor::new(m, lambda, FactorVariant::SandwichMri).unwrap();

    let cases: [(&str, &dyn LinearOperator, &DiagCirculantFactor); 2] = [
        ("plain/inpainting", &normal_plain, &plain),
        ("sandwich/mri", &mri, &sandwich),
    ];
    for (label, target, factor) in cases {
        let target_normal = NormalOperator::new(target);
        let frob = frobenius_oracle(&target_normal, factor).unwrap();
        for n_probes in [100usize, 1000, 10_000] {
            let mut rng = SeededRng::new(44);
            let (mean, se) = monte_carlo_loss(&target_normal, factor, n_probes, &mut rng).unwrap();
            assert!(
                (mean - frob).abs() <= 3.0 * se,
                "{label} at N={n_probes}: mean {mean}, frobenius {frob}, se {se}"
            );
        }
    }
}

#[test]
fn exact_families_are_recovered_by_the_default_fit() {
    // Inpainting (plain family member): random half mask at 16x16.
    let op = random_mask_op(&[16, 16], 0.5, 77);
    let normal = NormalOperator::new(&op);
    let mut cfg = FitConfig::tomography();
    cfg.seed = 1;
    let (factor, trace) = fit_factor(&normal, &cfg).unwrap();
    let oracle = frobenius_oracle(&normal, &factor).unwrap();
    assert!(
        oracle < EXACT_FIT_LOSS,
        "inpainting oracle loss {oracle:e} (best step {})",
        trace.best_step
    );
    assert_eq!(trace.losses.len(), cfg.steps);

    // Fitted modulation should reproduce the mask pattern up to the scale
    // exchanged with lambda.
    let m = factor.modulation().real_part();
    let mv = m.real_slice().unwrap();
    let bits = op.mask().real_slice().unwrap();
    let kept: Vec<f64> = mv
        .iter()
        .zip(bits)
        .filter(|(_, &b)| b != 0.0)
        .map(|(&v, _)| v)
        .collect();
    let zeroed_max = mv
        .iter()
        .zip(bits)
        .filter(|(_, &b)| b == 0.0)
        .fold(0.0f64, |a, (&v, _)| a.max(v.abs()));
    let kept_mean = kept.iter().sum::<f64>() / kept.len() as f64;
    assert!(zeroed_max < 1e-4 * kept_mean.abs());
}

#[test]
fn deconvolution_fit_keeps_a_constant_modulation() {
    // Circular deconvolution lives in the plain family with m constant.
    let kernel = {
        let mut taps = vec![0.0f64; 9];
        for (i, t) in taps.iter_mut().enumerate() {
            let (a, b) = ((i / 3) as f64 - 1.0, (i % 3) as f64 - 1.0);
            *t = (-0.5 * (a * a + b * b)).exp();
        }
        let s: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= s);
        Grid::from_real(&[3, 3], taps).unwrap()
    };
    let conv = ConvOperator::new(&kernel, &[16, 16]).unwrap();
    let normal = NormalOperator::new(&conv);
    let cfg = FitConfig::tomography();
    let (factor, _) = fit_factor(&normal, &cfg).unwrap();
    let oracle = frobenius_oracle(&normal, &factor).unwrap();
    assert!(oracle < EXACT_FIT_LOSS, "deconvolution oracle {oracle:e}");

    // Coefficient of variation of m: essentially constant.
    let mv = factor.modulation().real_part();
    let mv = mv.real_slice().unwrap();
    let mean = mv.iter().sum::<f64>() / mv.len() as f64;
    let var = mv.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / mv.len() as f64;
    let cov = var.sqrt() / mean.abs();
    assert!(cov < 1e-3, "modulation coefficient of variation {cov:e}");

    // Fitted spectrum matches |DFT(kernel)|^2 after fixing the scale trade.
    let lam = factor.spectrum().complex_slice().unwrap();
    let want = conv.normal_spectrum();
    let scale = mean; // lambda absorbs 1/mean when m absorbs mean
    for (got, want) in lam.iter().zip(&want) {
        let scaled = got * scale;
        assert!(
            (scaled - want).norm() < 1e-4 * want.norm().max(1e-12),
            "{scaled} vs {want}"
        );
    }
}

#[test]
fn identity_mri_target_is_fit_to_machine_precision() {
    // Single-coil full-mask MRI: the normal operator is the identity, which
    // the sandwich family contains.
    let shape = [8usize, 8];
    let sens = Grid::constant(&shape, 1.0).unwrap().to_complex();
    let mask = Grid::constant(&shape, 1.0).unwrap();
    let mri = MriOperator::new(&[sens], &mask, None, false).unwrap();
    let normal = NormalOperator::new(&mri);
    let mut cfg = FitConfig::mri();
    cfg.seed = 5;
    let (factor, _) = fit_factor(&normal, &cfg).unwrap();
    let oracle = frobenius_oracle(&normal, &factor).unwrap();
    assert!(oracle < EXACT_FIT_LOSS, "identity mri oracle {oracle:e}");
}

#[test]
fn asymmetric_and_symmetrized_fits_are_comparably_good() {
    // Symmetrizing a fitted factor must not blow up the oracle loss on
    // inpainting-like targets.
    let op = random_mask_op(&[12, 12], 0.5, 99);
    let normal = NormalOperator::new(&op);
    let mut cfg = FitConfig::tomography();
    cfg.steps = 400;
    cfg.seed = 6;
    let (factor, _) = fit_factor(&normal, &cfg).unwrap();
    let plain_oracle = frobenius_oracle(&normal, &factor).unwrap();

    let sym = factor.symmetrize().unwrap();
    let dense_t = partfact_core::linop::DenseOracle::from_operator(&normal).unwrap();
    let dense_s = partfact_core::linop::DenseOracle::from_operator(&sym).unwrap();
    let sym_oracle = dense_t.sub(&dense_s).unwrap().frobenius_sq();
    assert!(
        sym_oracle <= 2.0 * plain_oracle.max(1e-12),
        "sym {sym_oracle:e} vs plain {plain_oracle:e}"
    );

    // Dense check that symmetrize really is (H + H^H)/2.
    let dense_h = partfact_core::linop::DenseOracle::from_operator(&factor).unwrap();
    for i in 0..dense_s.nrows() {
        for j in 0..dense_s.ncols() {
            let want = 0.5 * (dense_h.entry(i, j) + dense_h.entry(j, i).conj());
            let got = dense_s.entry(i, j);
            assert!((got - want).norm() < 1e-10);
        }
    }
}
