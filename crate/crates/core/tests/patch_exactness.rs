//! Exactness of patch-restricted factor evaluation: the cropped-kernel
//! route must reproduce S H S^T to rounding, in every rank, at random patch
//! positions, for both factor variants.

use num_complex::Complex64;
use partfact_core::grid::{rel_l2_diff, Field, Grid};
use partfact_core::partition::Selection;
use partfact_core::rng::{gaussian_probe, SeededRng};
use partfact_core::spectral::{DiagCirculantFactor, FactorVariant};
use partfact_core::tolerances::PATCH_EXACT_REL;

fn random_selection(vol_shape: &[usize], rng: &mut SeededRng) -> Selection {
    let extents: Vec<usize> = vol_shape
        .iter()
        .map(|&n| 1 + (rng.next_u64() % n as u64) as usize)
        .collect();
    let origin: Vec<usize> = vol_shape
        .iter()
        .zip(&extents)
        .map(|(&n, &p)| (rng.next_u64() % (n - p + 1) as u64) as usize)
        .collect();
    Selection::new(vol_shape, &origin, &extents).unwrap()
}

/// Full-size reference for S H S^T: embed, evaluate the factor, extract.
fn reference_patch_apply(
    factor: &DiagCirculantFactor,
    sel: &Selection,
    x_patch: &Grid,
) -> Grid {
    let embedded = sel.embed(x_patch).unwrap();
    let hx = factor.apply(&embedded).unwrap();
    sel.extract(&hx).unwrap()
}

#[test]
fn patch_evaluation_is_exact_across_ranks_and_variants() {
    let volumes: [&[usize]; 3] = [&[37], &[12, 18], &[6, 5, 8]];
    let mut case = 0u64;
    for vol_shape in volumes {
        for variant in [FactorVariant::Plain, FactorVariant::SandwichMri] {
            for _ in 0..5 {
                case += 1;
                let mut rng = SeededRng::new(9000 + case);
                let m = gaussian_probe(vol_shape, Field::Complex, &mut rng).unwrap();
                let lambda = gaussian_probe(vol_shape, Field::Complex, &mut rng).unwrap();
                let factor = DiagCirculantFactor::new(m, lambda, variant).unwrap();
                let sel = random_selection(vol_shape, &mut rng);
                let x_patch = gaussian_probe(sel.extents(), Field::Complex, &mut rng).unwrap();

                let fast = partfact_core::partition::patch_normal_apply(&factor, &sel, &x_patch)
                    .unwrap();
                let slow = reference_patch_apply(&factor, &sel, &x_patch);
                let defect = rel_l2_diff(&fast, &slow);
                assert!(
                    defect < PATCH_EXACT_REL,
                    "case {case}: volume {vol_shape:?} patch {:?} at {:?} variant {variant:?}: defect {defect:e}",
                    sel.extents(),
                    sel.origin()
                );
            }
        }
    }
    assert_eq!(case, 30);
}

#[test]
fn patch_adjoint_evaluation_is_exact_too() {
    let vol_shape = [9, 14];
    for variant in [FactorVariant::Plain, FactorVariant::SandwichMri] {
        let mut rng = SeededRng::new(501);
        let m = gaussian_probe(&vol_shape, Field::Complex, &mut rng).unwrap();
        let lambda = gaussian_probe(&vol_shape, Field::Complex, &mut rng).unwrap();
        let factor = DiagCirculantFactor::new(m, lambda, variant).unwrap();
        let sel = Selection::new(&vol_shape, &[2, 5], &[4, 6]).unwrap();
        let pf = sel.patch_factor(&factor).unwrap();
        let x = gaussian_probe(sel.extents(), Field::Complex, &mut rng).unwrap();

        // Reference: embed, H^H, extract.
        let embedded = sel.embed(&x).unwrap();
        let hh = factor.apply_adjoint(&embedded).unwrap();
        let slow = sel.extract(&hh).unwrap();
        let fast = pf.apply_adjoint(&x).unwrap();
        assert!(rel_l2_diff(&fast, &slow) < PATCH_EXACT_REL);

        // And the dot identity between the two patch routes.
        let y = gaussian_probe(sel.extents(), Field::Complex, &mut rng).unwrap();
        let lhs = pf.apply(&x).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&pf.apply_adjoint(&y).unwrap()).unwrap();
        assert!((lhs - rhs).norm() < 1e-10 * lhs.norm().max(1.0));
    }
}

#[test]
fn sandwich_factor_reproduces_single_coil_mri_normal_operator() {
    // m = sensitivity, lambda = mask values: the sandwich factor equals the
    // single-coil Cartesian normal operator exactly.
    let shape = [8, 8];
    let mut rng = SeededRng::new(502);
    let sens = gaussian_probe(&shape, Field::Complex, &mut rng).unwrap();
    let bits: Vec<f64> = (0..64).map(|_| (rng.next_f64() < 0.5) as u8 as f64).collect();
    let mask = Grid::from_real(&shape, bits.clone()).unwrap();
    let mri = partfact_core::linop::MriOperator::new(std::slice::from_ref(&sens), &mask, None, false).unwrap();

    let lambda = Grid::from_complex(
        &shape,
        bits.iter().map(|&b| Complex64::new(b, 0.0)).collect(),
    )
    .unwrap();
    let factor = DiagCirculantFactor::new(sens, lambda, FactorVariant::SandwichMri).unwrap();

    use partfact_core::linop::LinearOperator;
    let x = gaussian_probe(&shape, Field::Complex, &mut rng).unwrap();
    let via_mri = mri.normal_apply(&x).unwrap();
    let via_factor = factor.apply(&x).unwrap();
    assert!(rel_l2_diff(&via_factor, &via_mri) < PATCH_EXACT_REL);
}
