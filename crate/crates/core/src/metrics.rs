//! Image quality metrics: MSE, PSNR and windowed SSIM.
//!
//! Conventions, fixed here because published variants differ:
//!
//! * PSNR = 10 log10(peak^2 / mse), capped at [`PSNR_CAP_DB`]; identical
//!   inputs (mse = 0) report exactly the cap.
//! * SSIM uses a uniform 7-wide window per dimension (d in {2, 3}), only
//!   windows fully inside the grid, population statistics (divide by the
//!   window size), and the standard stabilizers C1 = (0.01 peak)^2,
//!   C2 = (0.03 peak)^2.
//! * Both metrics operate on real grids; complex reconstructions are
//!   compared on magnitudes by the callers.

use crate::error::{CoreError, Result};
use crate::grid::Grid;

/// Sentinel PSNR reported when the mean squared error is zero.
pub const PSNR_CAP_DB: f64 = 300.0;

/// SSIM window extent per dimension.
pub const SSIM_WINDOW: usize = 7;

#[derive(Clone, Copy, Debug)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
}

pub fn mse(x: &Grid, reference: &Grid) -> Result<f64> {
    if x.shape() != reference.shape() {
        return Err(CoreError::ShapeMismatch {
            context: "metrics::mse",
            expected: reference.shape().to_vec(),
            got: x.shape().to_vec(),
        });
    }
    let diff = x.sub(reference)?;
    Ok(diff.norm_sq() / diff.numel() as f64)
}

pub fn psnr(x: &Grid, reference: &Grid, peak: f64) -> Result<f64> {
    if peak <= 0.0 {
        return Err(CoreError::InvalidArgument(format!(
            "psnr peak must be positive, got {peak}"
        )));
    }
    let m = mse(x, reference)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / m).log10()).min(PSNR_CAP_DB))
}

/// Per-slice PSNR along axis 0 of a 3-d volume.
pub fn psnr_per_slice(x: &Grid, reference: &Grid, peak: f64) -> Result<Vec<f64>> {
    if x.ndim() != 3 {
        return Err(CoreError::InvalidArgument(
            "per-slice psnr requires a 3-d volume".into(),
        ));
    }
    if x.shape() != reference.shape() {
        return Err(CoreError::ShapeMismatch {
            context: "metrics::psnr_per_slice",
            expected: reference.shape().to_vec(),
            got: x.shape().to_vec(),
        });
    }
    let depth = x.shape()[0];
    let slice_shape = [x.shape()[1], x.shape()[2]];
    let slice_len = slice_shape[0] * slice_shape[1];
    let xr = x.real_part();
    let rr = reference.real_part();
    let xv = xr.real_slice()?;
    let rv = rr.real_slice()?;
    let mut out = Vec::with_capacity(depth);
    for d in 0..depth {
        let xs = Grid::from_real(&slice_shape, xv[d * slice_len..(d + 1) * slice_len].to_vec())?;
        let rs = Grid::from_real(&slice_shape, rv[d * slice_len..(d + 1) * slice_len].to_vec())?;
        out.push(psnr(&xs, &rs, peak)?);
    }
    Ok(out)
}

pub fn ssim(x: &Grid, reference: &Grid, peak: f64) -> Result<f64> {
    if peak <= 0.0 {
        return Err(CoreError::InvalidArgument(format!(
            "ssim peak must be positive, got {peak}"
        )));
    }
    if x.shape() != reference.shape() {
        return Err(CoreError::ShapeMismatch {
            context: "metrics::ssim",
            expected: reference.shape().to_vec(),
            got: x.shape().to_vec(),
        });
    }
    if x.ndim() < 2 {
        return Err(CoreError::InvalidArgument(
            "ssim requires a 2-d or 3-d grid".into(),
        ));
    }
    if x.shape().iter().any(|&e| e < SSIM_WINDOW) {
        return Err(CoreError::InvalidArgument(format!(
            "grid {:?} smaller than the {SSIM_WINDOW}-wide ssim window",
            x.shape()
        )));
    }
    let xr = x.real_part();
    let rr = reference.real_part();
    let xv = xr.real_slice()?;
    let rv = rr.real_slice()?;

    // Embed 2-d inputs as depth-1 volumes; the window covers real axes only.
    let mut shape3 = [1usize; 3];
    let offset = 3 - x.ndim();
    for (d, &e) in x.shape().iter().enumerate() {
        shape3[offset + d] = e;
    }
    let mut window = [1usize; 3];
    window[offset..3].fill(SSIM_WINDOW);

    let prod: Vec<f64> = xv.iter().zip(rv).map(|(a, b)| a * b).collect();
    let sq_x: Vec<f64> = xv.iter().map(|a| a * a).collect();
    let sq_r: Vec<f64> = rv.iter().map(|b| b * b).collect();
    let t_x = SummedAreaTable::new(xv, shape3);
    let t_r = SummedAreaTable::new(rv, shape3);
    let t_xx = SummedAreaTable::new(&sq_x, shape3);
    let t_rr = SummedAreaTable::new(&sq_r, shape3);
    let t_xr = SummedAreaTable::new(&prod, shape3);

    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let count = (window[0] * window[1] * window[2]) as f64;

    let mut acc = 0.0;
    let mut windows = 0usize;
    for i0 in 0..=(shape3[0] - window[0]) {
        for i1 in 0..=(shape3[1] - window[1]) {
            for i2 in 0..=(shape3[2] - window[2]) {
                let lo = [i0, i1, i2];
                let mu_x = t_x.window_sum(lo, window) / count;
                let mu_r = t_r.window_sum(lo, window) / count;
                let var_x = t_xx.window_sum(lo, window) / count - mu_x * mu_x;
                let var_r = t_rr.window_sum(lo, window) / count - mu_r * mu_r;
                let cov = t_xr.window_sum(lo, window) / count - mu_x * mu_r;
                let num = (2.0 * mu_x * mu_r + c1) * (2.0 * cov + c2);
                let den = (mu_x * mu_x + mu_r * mu_r + c1) * (var_x + var_r + c2);
                acc += num / den;
                windows += 1;
            }
        }
    }
    Ok(acc / windows as f64)
}

pub fn metric_report(x: &Grid, reference: &Grid, peak: f64) -> Result<MetricReport> {
    Ok(MetricReport {
        psnr: psnr(x, reference, peak)?,
        ssim: ssim(x, reference, peak)?,
        mse: mse(x, reference)?,
    })
}

/// 3-d summed-area table with a zero border, for O(1) window sums.
struct SummedAreaTable {
    shape: [usize; 3],
    table: Vec<f64>,
}

impl SummedAreaTable {
    fn new(values: &[f64], shape: [usize; 3]) -> Self {
        let (a, b, c) = (shape[0] + 1, shape[1] + 1, shape[2] + 1);
        let mut table = vec![0.0; a * b * c];
        let at = |i: usize, j: usize, k: usize| (i * b + j) * c + k;
        for i in 1..a {
            for j in 1..b {
                for k in 1..c {
                    let v = values[((i - 1) * shape[1] + (j - 1)) * shape[2] + (k - 1)];
                    table[at(i, j, k)] = v
                        + table[at(i - 1, j, k)]
                        + table[at(i, j - 1, k)]
                        + table[at(i, j, k - 1)]
                        - table[at(i - 1, j - 1, k)]
                        - table[at(i - 1, j, k - 1)]
                        - table[at(i, j - 1, k - 1)]
                        + table[at(i - 1, j - 1, k - 1)];
                }
            }
        }
        SummedAreaTable { shape, table }
    }

    fn window_sum(&self, lo: [usize; 3], extent: [usize; 3]) -> f64 {
        let b = self.shape[1] + 1;
        let c = self.shape[2] + 1;
        let at = |i: usize, j: usize, k: usize| (i * b + j) * c + k;
        let hi = [lo[0] + extent[0], lo[1] + extent[1], lo[2] + extent[2]];
        self.table[at(hi[0], hi[1], hi[2])]
            - self.table[at(lo[0], hi[1], hi[2])]
            - self.table[at(hi[0], lo[1], hi[2])]
            - self.table[at(hi[0], hi[1], lo[2])]
            + self.table[at(lo[0], lo[1], hi[2])]
            + self.table[at(lo[0], hi[1], lo[2])]
            + self.table[at(hi[0], lo[1], lo[2])]
            - self.table[at(lo[0], lo[1], lo[2])]
    }
}
