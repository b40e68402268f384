//! Diagonal-circulant surrogate operators and exact patch-restricted
//! evaluation.
//!
//! The plain factor evaluates `H x = diag(m) F^-1 diag(lambda) F x`; the
//! sandwich variant (multi-coil MRI surrogate) evaluates
//! `H x = diag(m)^H F^-1 diag(lambda) F diag(m) x`. Under the unitary DFT
//! convention of [`crate::fft`], `lambda` is the unnormalized DFT of the
//! circulant's spatial taps.
//!
//! For a cuboid patch of extents p the circulant core can be restricted to
//! a cropped kernel of extent k = 2p per dimension without approximation:
//! offsets i - j between patch cells span [-(p-1), p-1], which embed
//! injectively into a k-periodic buffer, so the k-sized circular
//! convolution of the zero-padded patch reproduces `S H S^T` exactly while
//! touching only O(k^d) memory. Offset o maps to tap `t[(o mod n)]` of the
//! full circulant and to slot `o mod k` of the cropped buffer; the two
//! agree for every reachable offset, at any patch position and for any
//! patch extent up to the volume itself.

use num_complex::Complex64;

use crate::error::{CoreError, Result};
use crate::fft::{fft_unitary, spectrum_from_taps, taps_from_spectrum, FftDirection};
use crate::grid::{numel, Field, Grid};
use crate::linop::LinearOperator;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorVariant {
    Plain,
    SandwichMri,
}

impl std::fmt::Display for FactorVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FactorVariant::Plain => write!(f, "plain"),
            FactorVariant::SandwichMri => write!(f, "sandwich-mri"),
        }
    }
}

/// The pair (m, lambda) plus its evaluation rule.
#[derive(Clone, Debug)]
pub struct DiagCirculantFactor {
    m: Grid,
    lambda: Grid,
    variant: FactorVariant,
}

impl DiagCirculantFactor {
    pub fn new(m: Grid, lambda: Grid, variant: FactorVariant) -> Result<Self> {
        if m.shape() != lambda.shape() {
            return Err(CoreError::ShapeMismatch {
                context: "DiagCirculantFactor::new",
                expected: m.shape().to_vec(),
                got: lambda.shape().to_vec(),
            });
        }
        let lambda = lambda.to_complex();
        Ok(DiagCirculantFactor { m, lambda, variant })
    }

    /// The identity factor: m = 1, lambda = 1.
    pub fn identity(shape: &[usize]) -> Result<Self> {
        let m = Grid::constant(shape, 1.0)?;
        let lambda = Grid::constant(shape, 1.0)?;
        DiagCirculantFactor::new(m, lambda, FactorVariant::Plain)
    }

    pub fn shape(&self) -> &[usize] {
        self.m.shape()
    }

    pub fn modulation(&self) -> &Grid {
        &self.m
    }

    pub fn spectrum(&self) -> &Grid {
        &self.lambda
    }

    pub fn variant(&self) -> FactorVariant {
        self.variant
    }

    /// H x per the variant formula. Output is complex.
    pub fn apply(&self, x: &Grid) -> Result<Grid> {
        self.check(x)?;
        let shape = self.shape().to_vec();
        let lambda = self.lambda.complex_slice()?;
        let m = self.m.complex_values();
        match self.variant {
            FactorVariant::Plain => {
                let mut buf = x.complex_values().into_owned();
                fft_unitary(&mut buf, &shape, FftDirection::Forward)?;
                for (b, l) in buf.iter_mut().zip(lambda) {
                    *b *= l;
                }
                fft_unitary(&mut buf, &shape, FftDirection::Inverse)?;
                for (b, s) in buf.iter_mut().zip(m.iter()) {
                    *b *= s;
                }
                Grid::from_complex(&shape, buf)
            }
            FactorVariant::SandwichMri => {
                let xv = x.complex_values();
                let mut buf: Vec<Complex64> =
                    xv.iter().zip(m.iter()).map(|(x, s)| x * s).collect();
                fft_unitary(&mut buf, &shape, FftDirection::Forward)?;
                for (b, l) in buf.iter_mut().zip(lambda) {
                    *b *= l;
                }
                fft_unitary(&mut buf, &shape, FftDirection::Inverse)?;
                for (b, s) in buf.iter_mut().zip(m.iter()) {
                    *b *= s.conj();
                }
                Grid::from_complex(&shape, buf)
            }
        }
    }

    /// H^H x, the conjugate-transpose evaluation.
    pub fn apply_adjoint(&self, x: &Grid) -> Result<Grid> {
        self.check(x)?;
        let shape = self.shape().to_vec();
        let lambda = self.lambda.complex_slice()?;
        let m = self.m.complex_values();
        match self.variant {
            FactorVariant::Plain => {
                // (diag(m) F^-1 diag(l) F)^H = F^-1 diag(conj l) F diag(conj m).
                let xv = x.complex_values();
                let mut buf: Vec<Complex64> =
                    xv.iter().zip(m.iter()).map(|(x, s)| x * s.conj()).collect();
                fft_unitary(&mut buf, &shape, FftDirection::Forward)?;
                for (b, l) in buf.iter_mut().zip(lambda) {
                    *b *= l.conj();
                }
                fft_unitary(&mut buf, &shape, FftDirection::Inverse)?;
                Grid::from_complex(&shape, buf)
            }
            FactorVariant::SandwichMri => {
                // Sandwich with conjugated spectrum.
                let xv = x.complex_values();
                let mut buf: Vec<Complex64> =
                    xv.iter().zip(m.iter()).map(|(x, s)| x * s).collect();
                fft_unitary(&mut buf, &shape, FftDirection::Forward)?;
                for (b, l) in buf.iter_mut().zip(lambda) {
                    *b *= l.conj();
                }
                fft_unitary(&mut buf, &shape, FftDirection::Inverse)?;
                for (b, s) in buf.iter_mut().zip(m.iter()) {
                    *b *= s.conj();
                }
                Grid::from_complex(&shape, buf)
            }
        }
    }

    /// The self-adjoint average (H + H^H)/2 as an operator.
    pub fn symmetrize(&self) -> Result<SymmetrizedFactor> {
        if self.variant != FactorVariant::Plain {
            return Err(CoreError::InvalidArgument(
                "symmetrize expects the plain variant".into(),
            ));
        }
        Ok(SymmetrizedFactor {
            factor: self.clone(),
        })
    }

    /// Restrict the circulant core to a patch of the given extents.
    pub fn crop_kernel(&self, patch_extents: &[usize]) -> Result<CroppedKernel> {
        if self.variant != FactorVariant::Plain {
            return Err(CoreError::InvalidArgument(
                "crop_kernel expects the plain variant; patch-restrict sandwich \
                 factors through PatchFactor instead"
                    .into(),
            ));
        }
        CroppedKernel::from_spectrum(&self.lambda, patch_extents)
    }

    fn check(&self, x: &Grid) -> Result<()> {
        if x.shape() != self.shape() {
            return Err(CoreError::ShapeMismatch {
                context: "DiagCirculantFactor::apply",
                expected: self.shape().to_vec(),
                got: x.shape().to_vec(),
            });
        }
        Ok(())
    }
}

impl LinearOperator for DiagCirculantFactor {
    fn in_shape(&self) -> &[usize] {
        self.shape()
    }
    fn out_shape(&self) -> &[usize] {
        self.shape()
    }
    fn in_field(&self) -> Field {
        Field::Complex
    }
    fn out_field(&self) -> Field {
        Field::Complex
    }
    fn apply(&self, x: &Grid) -> Result<Grid> {
        DiagCirculantFactor::apply(self, x)
    }
    fn adjoint(&self, y: &Grid) -> Result<Grid> {
        self.apply_adjoint(y)
    }
}

/// (H + H^H)/2; self-adjoint by construction, usable as a CG normal path.
pub struct SymmetrizedFactor {
    factor: DiagCirculantFactor,
}

impl SymmetrizedFactor {
    pub fn apply(&self, x: &Grid) -> Result<Grid> {
        let mut a = self.factor.apply(x)?;
        let b = self.factor.apply_adjoint(x)?;
        a.axpy(1.0, &b)?;
        a.scale(0.5);
        Ok(a)
    }
}

impl LinearOperator for SymmetrizedFactor {
    fn in_shape(&self) -> &[usize] {
        self.factor.shape()
    }
    fn out_shape(&self) -> &[usize] {
        self.factor.shape()
    }
    fn in_field(&self) -> Field {
        Field::Complex
    }
    fn out_field(&self) -> Field {
        Field::Complex
    }
    fn apply(&self, x: &Grid) -> Result<Grid> {
        SymmetrizedFactor::apply(self, x)
    }
    fn adjoint(&self, y: &Grid) -> Result<Grid> {
        SymmetrizedFactor::apply(self, y)
    }
}

/// Circulant core restricted to a patch: taps at offsets [-(p-1), p-1] per
/// dimension wrapped into a k = 2p periodic buffer, with the k-sized
/// spectrum precomputed.
#[derive(Clone, Debug)]
pub struct CroppedKernel {
    patch_extents: Vec<usize>,
    crop_extents: Vec<usize>,
    taps: Vec<Complex64>,
    lambda_k: Vec<Complex64>,
}

impl CroppedKernel {
    /// Crop the circulant with full-size spectrum `lambda` to a patch.
    ///
    /// Construction touches the full volume once (the inverse DFT of
    /// lambda); evaluations afterwards are O(k^d).
    pub fn from_spectrum(lambda: &Grid, patch_extents: &[usize]) -> Result<Self> {
        let vol_shape = lambda.shape().to_vec();
        if patch_extents.len() != vol_shape.len() {
            return Err(CoreError::InvalidShape(format!(
                "patch rank {} vs volume rank {}",
                patch_extents.len(),
                vol_shape.len()
            )));
        }
        if patch_extents
            .iter()
            .zip(&vol_shape)
            .any(|(&p, &n)| p == 0 || p > n)
        {
            return Err(CoreError::InvalidShape(format!(
                "patch {patch_extents:?} does not fit inside volume {vol_shape:?}"
            )));
        }
        let lambda_c = lambda.to_complex();
        let full_taps = taps_from_spectrum(lambda_c.complex_slice()?, &vol_shape)?;

        let crop_extents: Vec<usize> = patch_extents.iter().map(|&p| 2 * p).collect();
        let mut taps = vec![Complex64::ZERO; numel(&crop_extents)];
        // Enumerate offsets o in prod_d [-(p_d - 1), p_d - 1]. Each offset
        // reads tap t[o mod n] and lands in slot o mod k; the offset range
        // has width 2p - 1 < k, so slots never collide.
        let d = vol_shape.len();
        let range_sizes: Vec<usize> = patch_extents.iter().map(|&p| 2 * p - 1).collect();
        let total: usize = range_sizes.iter().product();
        for flat in 0..total {
            let mut rem = flat;
            let mut src = 0usize;
            let mut dst = 0usize;
            for dim in 0..d {
                let stride: usize = range_sizes[dim + 1..].iter().product();
                let idx = rem / stride;
                rem %= stride;
                let o = idx as isize - (patch_extents[dim] as isize - 1);
                src = src * vol_shape[dim] + o.rem_euclid(vol_shape[dim] as isize) as usize;
                dst = dst * crop_extents[dim] + o.rem_euclid(crop_extents[dim] as isize) as usize;
            }
            taps[dst] = full_taps[src];
        }
        finish_crop(patch_extents, crop_extents, taps)
    }

    pub fn patch_extents(&self) -> &[usize] {
        &self.patch_extents
    }

    pub fn crop_extents(&self) -> &[usize] {
        &self.crop_extents
    }

    pub fn taps(&self) -> &[Complex64] {
        &self.taps
    }

    pub fn spectrum(&self) -> &[Complex64] {
        &self.lambda_k
    }

    /// k-periodic convolution of a zero-embedded patch, cropped back to the
    /// patch extents. Allocates O(k^d) only.
    pub fn convolve_patch(&self, x_patch: &[Complex64]) -> Result<Vec<Complex64>> {
        self.convolve_with(x_patch, false)
    }

    /// Adjoint of [`CroppedKernel::convolve_patch`] (conjugated spectrum).
    pub fn convolve_patch_adjoint(&self, x_patch: &[Complex64]) -> Result<Vec<Complex64>> {
        self.convolve_with(x_patch, true)
    }

    fn convolve_with(&self, x_patch: &[Complex64], conjugate: bool) -> Result<Vec<Complex64>> {
        if x_patch.len() != numel(&self.patch_extents) {
            return Err(CoreError::ShapeMismatch {
                context: "CroppedKernel::convolve_patch",
                expected: self.patch_extents.clone(),
                got: vec![x_patch.len()],
            });
        }
        let mut buf = vec![Complex64::ZERO; numel(&self.crop_extents)];
        embed_block(x_patch, &self.patch_extents, &mut buf, &self.crop_extents);
        fft_unitary(&mut buf, &self.crop_extents, FftDirection::Forward)?;
        if conjugate {
            for (b, l) in buf.iter_mut().zip(&self.lambda_k) {
                *b *= l.conj();
            }
        } else {
            for (b, l) in buf.iter_mut().zip(&self.lambda_k) {
                *b *= l;
            }
        }
        fft_unitary(&mut buf, &self.crop_extents, FftDirection::Inverse)?;
        let mut out = vec![Complex64::ZERO; x_patch.len()];
        extract_block(&buf, &self.crop_extents, &mut out, &self.patch_extents);
        Ok(out)
    }
}

fn finish_crop(
    patch_extents: &[usize],
    crop_extents: Vec<usize>,
    taps: Vec<Complex64>,
) -> Result<CroppedKernel> {
    let lambda_k = spectrum_from_taps(&taps, &crop_extents)?;
    Ok(CroppedKernel {
        patch_extents: patch_extents.to_vec(),
        crop_extents,
        taps,
        lambda_k,
    })
}

/// Copy a block of `src_extents` into the origin corner of a larger buffer.
fn embed_block(src: &[Complex64], src_extents: &[usize], dst: &mut [Complex64], dst_extents: &[usize]) {
    let d = src_extents.len();
    let count = src.len();
    for (flat, &v) in src.iter().enumerate().take(count) {
        let mut rem = flat;
        let mut out = 0usize;
        for dim in 0..d {
            let stride: usize = src_extents[dim + 1..].iter().product();
            let idx = rem / stride;
            rem %= stride;
            out = out * dst_extents[dim] + idx;
        }
        dst[out] = v;
    }
}

/// Extract the origin-corner block of `dst_extents` from a larger buffer.
fn extract_block(src: &[Complex64], src_extents: &[usize], dst: &mut [Complex64], dst_extents: &[usize]) {
    let d = dst_extents.len();
    for (flat, out) in dst.iter_mut().enumerate() {
        let mut rem = flat;
        let mut pos = 0usize;
        for dim in 0..d {
            let stride: usize = dst_extents[dim + 1..].iter().product();
            let idx = rem / stride;
            rem %= stride;
            pos = pos * src_extents[dim] + idx;
        }
        *out = src[pos];
    }
}

/// Patch-restricted factor evaluation: S H S^T as an O(k^d) operator.
///
/// Construction extracts S m and crops the circulant core (one full-size
/// pass); [`PatchFactor::apply`] then never allocates volume-sized buffers.
#[derive(Clone, Debug)]
pub struct PatchFactor {
    kernel: CroppedKernel,
    m_patch: Vec<Complex64>,
    variant: FactorVariant,
    patch_extents: Vec<usize>,
}

impl PatchFactor {
    pub fn new(
        factor: &DiagCirculantFactor,
        origin: &[usize],
        extents: &[usize],
    ) -> Result<Self> {
        let vol_shape = factor.shape();
        if origin.len() != vol_shape.len() || extents.len() != vol_shape.len() {
            return Err(CoreError::InvalidShape(
                "patch rank does not match the factor".into(),
            ));
        }
        if origin
            .iter()
            .zip(extents)
            .zip(vol_shape)
            .any(|((&o, &p), &n)| p == 0 || o + p > n)
        {
            return Err(CoreError::InvalidShape(format!(
                "patch at {origin:?} with extents {extents:?} leaves volume {vol_shape:?}"
            )));
        }
        let kernel = CroppedKernel::from_spectrum(&factor.lambda, extents)?;
        let m_all = factor.m.complex_values();
        let mut m_patch = vec![Complex64::ZERO; numel(extents)];
        let d = vol_shape.len();
        for (flat, out) in m_patch.iter_mut().enumerate() {
            let mut rem = flat;
            let mut pos = 0usize;
            for dim in 0..d {
                let stride: usize = extents[dim + 1..].iter().product();
                let idx = rem / stride;
                rem %= stride;
                pos = pos * vol_shape[dim] + origin[dim] + idx;
            }
            *out = m_all[pos];
        }
        Ok(PatchFactor {
            kernel,
            m_patch,
            variant: factor.variant,
            patch_extents: extents.to_vec(),
        })
    }

    pub fn patch_extents(&self) -> &[usize] {
        &self.patch_extents
    }

    /// Evaluate S H S^T x_patch.
    pub fn apply(&self, x_patch: &Grid) -> Result<Grid> {
        if x_patch.shape() != self.patch_extents.as_slice() {
            return Err(CoreError::ShapeMismatch {
                context: "PatchFactor::apply",
                expected: self.patch_extents.clone(),
                got: x_patch.shape().to_vec(),
            });
        }
        let xv = x_patch.complex_values();
        let mut buf: Vec<Complex64> = match self.variant {
            FactorVariant::Plain => xv.into_owned(),
            // The sandwich path applies diag(S m) on entry as well.
            FactorVariant::SandwichMri => {
                xv.iter().zip(&self.m_patch).map(|(x, s)| x * s).collect()
            }
        };
        buf = self.kernel.convolve_patch(&buf)?;
        match self.variant {
            FactorVariant::Plain => {
                for (b, s) in buf.iter_mut().zip(&self.m_patch) {
                    *b *= s;
                }
            }
            FactorVariant::SandwichMri => {
                for (b, s) in buf.iter_mut().zip(&self.m_patch) {
                    *b *= s.conj();
                }
            }
        }
        Grid::from_complex(&self.patch_extents, buf)
    }

    /// Evaluate (S H S^T)^H x_patch.
    pub fn apply_adjoint(&self, x_patch: &Grid) -> Result<Grid> {
        if x_patch.shape() != self.patch_extents.as_slice() {
            return Err(CoreError::ShapeMismatch {
                context: "PatchFactor::apply_adjoint",
                expected: self.patch_extents.clone(),
                got: x_patch.shape().to_vec(),
            });
        }
        let xv = x_patch.complex_values();
        let mut buf: Vec<Complex64> = match self.variant {
            // (diag(mp) K)^H = K^H diag(conj mp).
            FactorVariant::Plain => xv
                .iter()
                .zip(&self.m_patch)
                .map(|(x, s)| x * s.conj())
                .collect(),
            FactorVariant::SandwichMri => {
                xv.iter().zip(&self.m_patch).map(|(x, s)| x * s).collect()
            }
        };
        buf = self.kernel.convolve_patch_adjoint(&buf)?;
        match self.variant {
            FactorVariant::Plain => {}
            FactorVariant::SandwichMri => {
                for (b, s) in buf.iter_mut().zip(&self.m_patch) {
                    *b *= s.conj();
                }
            }
        }
        Grid::from_complex(&self.patch_extents, buf)
    }
}

pub const FACTOR_FORMAT: &str = "partfact-factor-v1";

/// Persist a factor as two grid files plus a text manifest at
/// `<dir>/<name>.factor`. Extra `metadata` pairs (fit loss, seed, ...) are
/// appended verbatim to the manifest.
pub fn save_factor(
    factor: &DiagCirculantFactor,
    dir: &std::path::Path,
    name: &str,
    metadata: &[(String, String)],
) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir)?;
    let m_file = format!("{name}.m.grid");
    let lambda_file = format!("{name}.lambda.grid");
    crate::gridio::save_grid(&factor.m, 1.0, &dir.join(&m_file))?;
    crate::gridio::save_grid(&factor.lambda, 1.0, &dir.join(&lambda_file))?;
    let shape_str = factor
        .shape()
        .iter()
        .map(|e| e.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    let mut manifest = format!(
        "format = {FACTOR_FORMAT}\nvariant = {}\nshape = {shape_str}\nm = {m_file}\nlambda = {lambda_file}\n",
        factor.variant
    );
    for (key, value) in metadata {
        manifest.push_str(&format!("{key} = {value}\n"));
    }
    let path = dir.join(format!("{name}.factor"));
    std::fs::write(&path, manifest)?;
    Ok(path)
}

pub fn load_factor(manifest_path: &std::path::Path) -> Result<DiagCirculantFactor> {
    let text = std::fs::read_to_string(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(std::path::Path::new("."));
    let mut variant = None;
    let mut m_file = None;
    let mut lambda_file = None;
    let mut format_ok = false;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CoreError::Parse(format!("bad manifest line: {line}")));
        };
        match (key.trim(), value.trim()) {
            ("format", v) => format_ok = v == FACTOR_FORMAT,
            ("variant", "plain") => variant = Some(FactorVariant::Plain),
            ("variant", "sandwich-mri") => variant = Some(FactorVariant::SandwichMri),
            ("variant", other) => {
                return Err(CoreError::Parse(format!("unknown variant '{other}'")))
            }
            ("m", v) => m_file = Some(v.to_string()),
            ("lambda", v) => lambda_file = Some(v.to_string()),
            // Shape is derived from the grids; metadata keys are ignored.
            _ => {}
        }
    }
    if !format_ok {
        return Err(CoreError::Parse(format!(
            "{}: not a {FACTOR_FORMAT} manifest",
            manifest_path.display()
        )));
    }
    let m_file = m_file.ok_or_else(|| CoreError::Parse("manifest missing m".into()))?;
    let lambda_file =
        lambda_file.ok_or_else(|| CoreError::Parse("manifest missing lambda".into()))?;
    let variant = variant.ok_or_else(|| CoreError::Parse("manifest missing variant".into()))?;
    let (m, _) = crate::gridio::load_grid(&dir.join(m_file))?;
    let (lambda, _) = crate::gridio::load_grid(&dir.join(lambda_file))?;
    DiagCirculantFactor::new(m, lambda, variant)
}
