//! Domain decomposition: patch selections, reduced subproblems, schedules
//! and overlap aggregation.
//!
//! A [`Selection`] S splits the volume index set into a cuboid patch and
//! its complement (the context), giving the orthogonal decomposition
//! `x = S^T (S x) + Sc^T (Sc x)`. For a linear operator A and data y, fixing
//! the context turns the inverse problem into a reduced one:
//! `yt = y - A Sc^T x_context`, `At = A S^T`, solved for the patch only.
//!
//! Schedules tile the volume with strided patches (the last patch per axis
//! is clamped to end at the boundary) and [`aggregate`] merges per-patch
//! results by uniform averaging over covering patches, accumulating in
//! schedule order so the result is bit-reproducible; voxels covered once
//! pass through bit-exactly.

use num_complex::Complex64;

use crate::error::{CoreError, Result};
use crate::grid::{numel, Field, Grid};
use crate::linop::LinearOperator;
use crate::spectral::{DiagCirculantFactor, PatchFactor};

/// Cuboid patch geometry inside a volume: the selection operator S and its
/// complement Sc.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selection {
    vol_shape: Vec<usize>,
    origin: Vec<usize>,
    extents: Vec<usize>,
}

impl Selection {
    pub fn new(vol_shape: &[usize], origin: &[usize], extents: &[usize]) -> Result<Self> {
        crate::grid::check_shape(vol_shape)?;
        if origin.len() != vol_shape.len() || extents.len() != vol_shape.len() {
            return Err(CoreError::InvalidShape(
                "selection rank does not match the volume".into(),
            ));
        }
        if extents.contains(&0) {
            return Err(CoreError::InvalidShape("empty patch extents".into()));
        }
        if origin
            .iter()
            .zip(extents)
            .zip(vol_shape)
            .any(|((&o, &p), &n)| o + p > n)
        {
            return Err(CoreError::InvalidShape(format!(
                "patch at {origin:?} with extents {extents:?} leaves volume {vol_shape:?}"
            )));
        }
        Ok(Selection {
            vol_shape: vol_shape.to_vec(),
            origin: origin.to_vec(),
            extents: extents.to_vec(),
        })
    }

    pub fn whole_volume(vol_shape: &[usize]) -> Result<Self> {
        Selection::new(vol_shape, &vec![0; vol_shape.len()], vol_shape)
    }

    pub fn vol_shape(&self) -> &[usize] {
        &self.vol_shape
    }

    pub fn origin(&self) -> &[usize] {
        &self.origin
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn patch_len(&self) -> usize {
        numel(&self.extents)
    }

    pub fn context_len(&self) -> usize {
        numel(&self.vol_shape) - self.patch_len()
    }

    pub fn is_whole_volume(&self) -> bool {
        self.extents == self.vol_shape
    }

    fn check_volume(&self, x: &Grid, context: &'static str) -> Result<()> {
        if x.shape() != self.vol_shape.as_slice() {
            return Err(CoreError::ShapeMismatch {
                context,
                expected: self.vol_shape.clone(),
                got: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Volume-flat index of patch-flat index `flat`.
    fn volume_index(&self, flat: usize) -> usize {
        let mut rem = flat;
        let mut pos = 0usize;
        for dim in 0..self.vol_shape.len() {
            let stride: usize = self.extents[dim + 1..].iter().product();
            let idx = rem / stride;
            rem %= stride;
            pos = pos * self.vol_shape[dim] + self.origin[dim] + idx;
        }
        pos
    }

    /// S x: crop the patch out of the volume.
    pub fn extract(&self, x: &Grid) -> Result<Grid> {
        self.check_volume(x, "Selection::extract")?;
        match x.field() {
            Field::Real => {
                let xv = x.real_slice()?;
                let data = (0..self.patch_len())
                    .map(|i| xv[self.volume_index(i)])
                    .collect();
                Grid::from_real(&self.extents, data)
            }
            Field::Complex => {
                let xv = x.complex_slice()?;
                let data = (0..self.patch_len())
                    .map(|i| xv[self.volume_index(i)])
                    .collect();
                Grid::from_complex(&self.extents, data)
            }
        }
    }

    /// S^T x_patch: zero-pad the patch into the volume.
    pub fn embed(&self, x_patch: &Grid) -> Result<Grid> {
        if x_patch.shape() != self.extents.as_slice() {
            return Err(CoreError::ShapeMismatch {
                context: "Selection::embed",
                expected: self.extents.clone(),
                got: x_patch.shape().to_vec(),
            });
        }
        match x_patch.field() {
            Field::Real => {
                let pv = x_patch.real_slice()?;
                let mut data = vec![0.0; numel(&self.vol_shape)];
                for (i, &v) in pv.iter().enumerate() {
                    data[self.volume_index(i)] = v;
                }
                Grid::from_real(&self.vol_shape, data)
            }
            Field::Complex => {
                let pv = x_patch.complex_slice()?;
                let mut data = vec![Complex64::ZERO; numel(&self.vol_shape)];
                for (i, &v) in pv.iter().enumerate() {
                    data[self.volume_index(i)] = v;
                }
                Grid::from_complex(&self.vol_shape, data)
            }
        }
    }

    /// True iff volume-flat index `flat` lies inside the patch.
    pub fn contains_flat(&self, flat: usize) -> bool {
        let mut rem = flat;
        for dim in 0..self.vol_shape.len() {
            let stride: usize = self.vol_shape[dim + 1..].iter().product();
            let idx = rem / stride;
            rem %= stride;
            if idx < self.origin[dim] || idx >= self.origin[dim] + self.extents[dim] {
                return false;
            }
        }
        true
    }

    /// Sc x: the context entries, flattened in volume order.
    pub fn extract_complement(&self, x: &Grid) -> Result<Grid> {
        self.check_volume(x, "Selection::extract_complement")?;
        let q = self.context_len().max(1);
        match x.field() {
            Field::Real => {
                let xv = x.real_slice()?;
                let mut data = Vec::with_capacity(q);
                for (i, &v) in xv.iter().enumerate() {
                    if !self.contains_flat(i) {
                        data.push(v);
                    }
                }
                if data.is_empty() {
                    data.push(0.0); // whole-volume patch: empty context sentinel
                }
                Grid::from_real(&[data.len()], data)
            }
            Field::Complex => {
                let xv = x.complex_slice()?;
                let mut data = Vec::with_capacity(q);
                for (i, &v) in xv.iter().enumerate() {
                    if !self.contains_flat(i) {
                        data.push(v);
                    }
                }
                if data.is_empty() {
                    data.push(Complex64::ZERO);
                }
                Grid::from_complex(&[data.len()], data)
            }
        }
    }

    /// Sc^T Sc x: the volume with the patch region zeroed.
    pub fn zero_patch(&self, x: &Grid) -> Result<Grid> {
        self.check_volume(x, "Selection::zero_patch")?;
        let mut out = x.clone();
        match out.field() {
            Field::Real => {
                let ov = out.real_slice_mut()?;
                for i in 0..self.patch_len() {
                    ov[self.volume_index(i)] = 0.0;
                }
            }
            Field::Complex => {
                let ov = out.complex_slice_mut()?;
                for i in 0..self.patch_len() {
                    ov[self.volume_index(i)] = Complex64::ZERO;
                }
            }
        }
        Ok(out)
    }

    /// Patch-restricted factor evaluation S H S^T for this selection.
    pub fn patch_factor(&self, factor: &DiagCirculantFactor) -> Result<PatchFactor> {
        PatchFactor::new(factor, &self.origin, &self.extents)
    }
}

/// One-shot S H S^T evaluation. Crops the kernel on every call; hold a
/// [`PatchFactor`] instead when evaluating the same patch repeatedly.
pub fn patch_normal_apply(
    factor: &DiagCirculantFactor,
    selection: &Selection,
    x_patch: &Grid,
) -> Result<Grid> {
    selection.patch_factor(factor)?.apply(x_patch)
}

/// The reduced operator At = A S^T (embed, then apply).
pub struct ReducedOperator<'a> {
    op: &'a dyn LinearOperator,
    selection: Selection,
}

impl<'a> ReducedOperator<'a> {
    pub fn new(op: &'a dyn LinearOperator, selection: Selection) -> Self {
        ReducedOperator { op, selection }
    }

    pub fn selection(&self) -> &Selection {
        &self.selection
    }
}

impl LinearOperator for ReducedOperator<'_> {
    fn in_shape(&self) -> &[usize] {
        self.selection.extents()
    }
    fn out_shape(&self) -> &[usize] {
        self.op.out_shape()
    }
    fn in_field(&self) -> Field {
        self.op.in_field()
    }
    fn out_field(&self) -> Field {
        self.op.out_field()
    }
    fn apply(&self, x_patch: &Grid) -> Result<Grid> {
        self.op.apply(&self.selection.embed(x_patch)?)
    }
    fn adjoint(&self, y: &Grid) -> Result<Grid> {
        self.selection.extract(&self.op.adjoint(y)?)
    }
}

/// A reduced inverse problem on one patch.
pub struct Subproblem<'a> {
    reduced: ReducedOperator<'a>,
    /// yt = y - A Sc^T Sc x_context.
    reduced_data: Grid,
    /// At' yt, the reduced normal-equation right-hand side.
    rhs: Grid,
    /// Patch-restricted factor path for the reduced normal operator.
    patch_factor: Option<PatchFactor>,
}

/// Construct the reduced problem for one patch given a context volume.
///
/// The patch region of `x_context_full` is ignored; only its complement
/// enters the reduced data.
pub fn build_subproblem<'a>(
    op: &'a dyn LinearOperator,
    y: &Grid,
    x_context_full: &Grid,
    selection: &Selection,
    factor: Option<&DiagCirculantFactor>,
) -> Result<Subproblem<'a>> {
    if y.shape() != op.out_shape() {
        return Err(CoreError::ShapeMismatch {
            context: "build_subproblem",
            expected: op.out_shape().to_vec(),
            got: y.shape().to_vec(),
        });
    }
    let context = selection.zero_patch(x_context_full)?;
    let reduced_data = y.sub(&op.apply(&context)?)?;
    let reduced = ReducedOperator::new(op, selection.clone());
    let rhs = reduced.adjoint(&reduced_data)?;
    let patch_factor = match factor {
        Some(f) => Some(selection.patch_factor(f)?),
        None => None,
    };
    Ok(Subproblem {
        reduced,
        reduced_data,
        rhs,
        patch_factor,
    })
}

impl<'a> Subproblem<'a> {
    pub fn reduced_operator(&self) -> &ReducedOperator<'a> {
        &self.reduced
    }

    pub fn reduced_data(&self) -> &Grid {
        &self.reduced_data
    }

    pub fn rhs(&self) -> &Grid {
        &self.rhs
    }

    pub fn patch_factor(&self) -> Option<&PatchFactor> {
        self.patch_factor.as_ref()
    }

    pub fn selection(&self) -> &Selection {
        self.reduced.selection()
    }
}

/// Ordered patch tiling of a volume.
#[derive(Clone, Debug)]
pub struct PatchSchedule {
    vol_shape: Vec<usize>,
    selections: Vec<Selection>,
    stride: Vec<usize>,
}

/// Strided tiling with boundary clamping: per axis, origins advance by the
/// stride and the last origin is pulled back so the final patch ends exactly
/// at the boundary. Every voxel is covered at least once.
pub fn schedule_patches(
    vol_shape: &[usize],
    extents: &[usize],
    stride: &[usize],
) -> Result<PatchSchedule> {
    crate::grid::check_shape(vol_shape)?;
    if extents.len() != vol_shape.len() || stride.len() != vol_shape.len() {
        return Err(CoreError::InvalidShape(
            "patch/stride rank does not match the volume".into(),
        ));
    }
    if extents.iter().zip(vol_shape).any(|(&p, &n)| p == 0 || p > n) {
        return Err(CoreError::InvalidShape(format!(
            "patch {extents:?} does not fit inside volume {vol_shape:?}"
        )));
    }
    if stride.contains(&0) {
        return Err(CoreError::InvalidArgument("stride must be at least 1".into()));
    }
    if stride.iter().zip(extents).any(|(&s, &p)| s > p) {
        return Err(CoreError::InvalidArgument(format!(
            "stride {stride:?} exceeds patch extents {extents:?}; tiling would leave holes"
        )));
    }
    let axis_origins: Vec<Vec<usize>> = vol_shape
        .iter()
        .zip(extents)
        .zip(stride)
        .map(|((&n, &p), &s)| {
            let mut origins = Vec::new();
            let mut o = 0usize;
            loop {
                if o + p >= n {
                    origins.push(n - p); // clamp the last patch to the boundary
                    break;
                }
                origins.push(o);
                o += s;
            }
            origins.dedup();
            origins
        })
        .collect();

    let mut selections = Vec::new();
    let counts: Vec<usize> = axis_origins.iter().map(|v| v.len()).collect();
    let total: usize = counts.iter().product();
    for flat in 0..total {
        let mut rem = flat;
        let mut origin = vec![0usize; vol_shape.len()];
        for dim in 0..vol_shape.len() {
            let stride_c: usize = counts[dim + 1..].iter().product();
            origin[dim] = axis_origins[dim][rem / stride_c];
            rem %= stride_c;
        }
        selections.push(Selection::new(vol_shape, &origin, extents)?);
    }
    Ok(PatchSchedule {
        vol_shape: vol_shape.to_vec(),
        selections,
        stride: stride.to_vec(),
    })
}

impl PatchSchedule {
    pub fn selections(&self) -> &[Selection] {
        &self.selections
    }

    pub fn len(&self) -> usize {
        self.selections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selections.is_empty()
    }

    pub fn vol_shape(&self) -> &[usize] {
        &self.vol_shape
    }

    pub fn stride(&self) -> &[usize] {
        &self.stride
    }

    /// Per-voxel cover counts (every entry is >= 1 by construction).
    pub fn coverage(&self) -> Grid {
        let n = numel(&self.vol_shape);
        let mut counts = vec![0.0f64; n];
        for sel in &self.selections {
            for i in 0..sel.patch_len() {
                counts[sel.volume_index(i)] += 1.0;
            }
        }
        Grid::from_real(&self.vol_shape, counts).expect("valid shape")
    }
}

/// Merge per-patch results by averaging over covering patches.
///
/// Accumulation runs in schedule order (deterministic); where exactly one
/// patch covers a voxel the division by 1 preserves the value bit-exactly.
pub fn aggregate(schedule: &PatchSchedule, patch_results: &[Grid]) -> Result<Grid> {
    if patch_results.len() != schedule.len() {
        return Err(CoreError::InvalidArgument(format!(
            "expected {} patch results, got {}",
            schedule.len(),
            patch_results.len()
        )));
    }
    let n = numel(&schedule.vol_shape);
    let complex = patch_results.iter().any(|g| !g.is_real());
    let mut counts = vec![0.0f64; n];
    if complex {
        let mut acc = vec![Complex64::ZERO; n];
        for (sel, patch) in schedule.selections.iter().zip(patch_results) {
            if patch.shape() != sel.extents() {
                return Err(CoreError::ShapeMismatch {
                    context: "aggregate",
                    expected: sel.extents().to_vec(),
                    got: patch.shape().to_vec(),
                });
            }
            let pv = patch.complex_values();
            for (i, &v) in pv.iter().enumerate() {
                let j = sel.volume_index(i);
                acc[j] += v;
                counts[j] += 1.0;
            }
        }
        for (a, &c) in acc.iter_mut().zip(&counts) {
            *a /= c;
        }
        Grid::from_complex(&schedule.vol_shape, acc)
    } else {
        let mut acc = vec![0.0f64; n];
        for (sel, patch) in schedule.selections.iter().zip(patch_results) {
            if patch.shape() != sel.extents() {
                return Err(CoreError::ShapeMismatch {
                    context: "aggregate",
                    expected: sel.extents().to_vec(),
                    got: patch.shape().to_vec(),
                });
            }
            let pv = patch.real_slice()?;
            for (i, &v) in pv.iter().enumerate() {
                let j = sel.volume_index(i);
                acc[j] += v;
                counts[j] += 1.0;
            }
        }
        for (a, &c) in acc.iter_mut().zip(&counts) {
            *a /= c;
        }
        Grid::from_real(&schedule.vol_shape, acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::rel_l2_diff;
    use crate::linop::{ConvOperator, MaskOperator};
    use crate::rng::{gaussian_probe, SeededRng};

    #[test]
    fn extract_matches_direct_indexing() {
        let mut rng = SeededRng::new(1);
        let x = gaussian_probe(&[8, 8, 8], Field::Real, &mut rng).unwrap();
        let sel = Selection::new(&[8, 8, 8], &[1, 2, 3], &[2, 3, 4]).unwrap();
        let patch = sel.extract(&x).unwrap();
        for i0 in 0..2 {
            for i1 in 0..3 {
                for i2 in 0..4 {
                    let got = patch.real_at(&[i0, i1, i2]);
                    let want = x.real_at(&[1 + i0, 2 + i1, 3 + i2]);
                    assert_eq!(got, want);
                }
            }
        }
    }

    #[test]
    fn embed_then_extract_is_identity() {
        let mut rng = SeededRng::new(2);
        let sel = Selection::new(&[6, 6], &[2, 1], &[3, 4]).unwrap();
        let patch = gaussian_probe(&[3, 4], Field::Complex, &mut rng).unwrap();
        let embedded = sel.embed(&patch).unwrap();
        assert_eq!(sel.extract(&embedded).unwrap(), patch);
    }

    #[test]
    fn patch_and_context_recompose_bit_exactly() {
        let mut rng = SeededRng::new(3);
        let x = gaussian_probe(&[5, 7], Field::Real, &mut rng).unwrap();
        let sel = Selection::new(&[5, 7], &[1, 2], &[3, 3]).unwrap();
        let patch_part = sel.embed(&sel.extract(&x).unwrap()).unwrap();
        let context_part = sel.zero_patch(&x).unwrap();
        let sum = patch_part.add(&context_part).unwrap();
        assert_eq!(sum, x);
    }

    #[test]
    fn patch_and_context_are_orthogonal() {
        let mut rng = SeededRng::new(4);
        let sel = Selection::new(&[6, 6], &[0, 3], &[4, 2]).unwrap();
        let u = gaussian_probe(&[4, 2], Field::Complex, &mut rng).unwrap();
        let v = gaussian_probe(&[6, 6], Field::Complex, &mut rng).unwrap();
        let a = sel.embed(&u).unwrap();
        let b = sel.zero_patch(&v).unwrap();
        assert_eq!(a.dot(&b).unwrap(), Complex64::ZERO);
    }

    #[test]
    fn whole_volume_selection_is_identity() {
        let mut rng = SeededRng::new(5);
        let x = gaussian_probe(&[4, 4], Field::Real, &mut rng).unwrap();
        let sel = Selection::whole_volume(&[4, 4]).unwrap();
        assert_eq!(sel.extract(&x).unwrap(), x);
    }

    #[test]
    fn out_of_bounds_selection_rejected() {
        assert!(Selection::new(&[4, 4], &[2, 0], &[3, 4]).is_err());
    }

    #[test]
    fn clamped_origins_enumeration() {
        let schedule = schedule_patches(&[10], &[4], &[4]).unwrap();
        let origins: Vec<usize> = schedule
            .selections()
            .iter()
            .map(|s| s.origin()[0])
            .collect();
        assert_eq!(origins, vec![0, 4, 6]);
    }

    #[test]
    fn single_patch_when_extent_covers_volume() {
        let schedule = schedule_patches(&[8], &[8], &[3]).unwrap();
        assert_eq!(schedule.len(), 1);
        assert!(schedule.selections()[0].is_whole_volume());
    }

    #[test]
    fn coverage_is_complete_for_random_geometries() {
        let mut rng = SeededRng::new(6);
        for _ in 0..50 {
            let d = 1 + (rng.next_u64() % 3) as usize;
            let shape: Vec<usize> = (0..d).map(|_| 3 + (rng.next_u64() % 10) as usize).collect();
            let extents: Vec<usize> = shape
                .iter()
                .map(|&n| 1 + (rng.next_u64() % n as u64) as usize)
                .collect();
            let stride: Vec<usize> = extents
                .iter()
                .map(|&p| 1 + (rng.next_u64() % p as u64) as usize)
                .collect();
            let schedule = schedule_patches(&shape, &extents, &stride).unwrap();
            let cover = schedule.coverage();
            assert!(
                cover.real_slice().unwrap().iter().all(|&c| c >= 1.0),
                "hole in coverage for shape {shape:?} extents {extents:?} stride {stride:?}"
            );
        }
    }

    #[test]
    fn aggregate_averages_overlaps_and_passes_through_identity() {
        // Two overlapping 1-d patches with constant values a and b.
        let schedule = schedule_patches(&[6], &[4], &[2]).unwrap();
        assert_eq!(schedule.len(), 2);
        let a = Grid::constant(&[4], 1.0).unwrap();
        let b = Grid::constant(&[4], 3.0).unwrap();
        let merged = aggregate(&schedule, &[a, b]).unwrap();
        let mv = merged.real_slice().unwrap();
        assert_eq!(mv, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);

        // Identity per patch reproduces the volume.
        let mut rng = SeededRng::new(7);
        let x = gaussian_probe(&[9, 5], Field::Real, &mut rng).unwrap();
        let schedule = schedule_patches(&[9, 5], &[4, 3], &[3, 2]).unwrap();
        let patches: Vec<Grid> = schedule
            .selections()
            .iter()
            .map(|s| s.extract(&x).unwrap())
            .collect();
        let merged = aggregate(&schedule, &patches).unwrap();
        assert!(rel_l2_diff(&merged, &x) < 1e-15);
    }

    #[test]
    fn subproblem_identity_under_exact_context() {
        // Noiseless data and true context: yt = At (S x*).
        let kernel = Grid::from_real(&[3], vec![0.2, 0.5, 0.3]).unwrap();
        let op = ConvOperator::new(&kernel, &[12]).unwrap();
        let mut rng = SeededRng::new(8);
        let x_true = gaussian_probe(&[12], Field::Real, &mut rng).unwrap();
        let y = op.apply(&x_true).unwrap();
        let sel = Selection::new(&[12], &[3], &[5]).unwrap();
        let sub = build_subproblem(&op, &y, &x_true, &sel, None).unwrap();
        let predicted = sub
            .reduced_operator()
            .apply(&sel.extract(&x_true).unwrap())
            .unwrap();
        let defect = predicted.sub(sub.reduced_data()).unwrap().norm_l2();
        assert!(defect <= 1e-12 * y.norm_l2());
    }

    #[test]
    fn zero_context_leaves_data_unchanged() {
        let mask = Grid::from_real(&[6], vec![1.0, 0.0, 1.0, 1.0, 0.0, 1.0]).unwrap();
        let op = MaskOperator::new(mask).unwrap();
        let mut rng = SeededRng::new(9);
        let y = gaussian_probe(&[6], Field::Real, &mut rng).unwrap();
        let sel = Selection::new(&[6], &[2], &[2]).unwrap();
        let zero_ctx = Grid::zeros(&[6], Field::Real).unwrap();
        let sub = build_subproblem(&op, &y, &zero_ctx, &sel, None).unwrap();
        assert_eq!(sub.reduced_data(), &y);
    }
}
