//! Grid serialization: raw little-endian f64 buffers with a text sidecar,
//! plus 16-bit PGM export for eyeballing 2-d real grids.
//!
//! A grid stored at `p` consists of two files:
//!
//! * `p` — the flat row-major sample buffer as little-endian f64. Real
//!   grids store one value per sample; complex grids store interleaved
//!   (re, im) pairs, i.e. 2N values.
//! * `p.meta` — a `key = value` text header:
//!
//! ```text
//! format = partfact-grid-v1
//! field = real
//! shape = 64 64
//! peak = 1
//! ```
//!
//! `peak` declares the dynamic range used for PSNR when this grid is a
//! reference image; it defaults to 1.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{CoreError, Result};
use crate::grid::{Field, Grid};

pub const GRID_FORMAT: &str = "partfact-grid-v1";

pub fn save_grid(grid: &Grid, peak: f64, path: &Path) -> Result<()> {
    let mut bytes: Vec<u8> = Vec::with_capacity(grid.numel() * 8);
    match grid.field() {
        Field::Real => {
            for v in grid.real_slice()? {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        Field::Complex => {
            for z in grid.complex_slice()? {
                bytes.extend_from_slice(&z.re.to_le_bytes());
                bytes.extend_from_slice(&z.im.to_le_bytes());
            }
        }
    }
    fs::write(path, bytes)?;

    let shape_str = grid
        .shape()
        .iter()
        .map(|e| e.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    let meta = format!(
        "format = {GRID_FORMAT}\nfield = {}\nshape = {shape_str}\npeak = {peak}\n",
        grid.field()
    );
    fs::write(meta_path(path), meta)?;
    Ok(())
}

pub fn load_grid(path: &Path) -> Result<(Grid, f64)> {
    let meta = fs::read_to_string(meta_path(path))?;
    let mut format = None;
    let mut field = None;
    let mut shape: Option<Vec<usize>> = None;
    let mut peak = 1.0f64;
    for (lineno, line) in meta.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CoreError::Parse(format!("{}:{}: expected key = value", path.display(), lineno + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "format" => format = Some(value.to_string()),
            "field" => {
                field = Some(match value {
                    "real" => Field::Real,
                    "complex" => Field::Complex,
                    other => {
                        return Err(CoreError::Parse(format!("unknown field tag '{other}'")))
                    }
                })
            }
            "shape" => {
                let parsed: std::result::Result<Vec<usize>, _> =
                    value.split_whitespace().map(|t| t.parse()).collect();
                shape = Some(parsed.map_err(|e| CoreError::Parse(format!("bad shape: {e}")))?);
            }
            "peak" => {
                peak = value
                    .parse()
                    .map_err(|e| CoreError::Parse(format!("bad peak: {e}")))?
            }
            other => {
                return Err(CoreError::Parse(format!(
                    "{}: unknown header key '{other}'",
                    path.display()
                )))
            }
        }
    }
    if format.as_deref() != Some(GRID_FORMAT) {
        return Err(CoreError::Parse(format!(
            "{}: not a {GRID_FORMAT} header",
            path.display()
        )));
    }
    let field = field.ok_or_else(|| CoreError::Parse("missing field tag".into()))?;
    let shape = shape.ok_or_else(|| CoreError::Parse("missing shape".into()))?;

    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(CoreError::Parse(format!(
            "{}: data size {} is not a multiple of 8",
            path.display(),
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let grid = match field {
        Field::Real => Grid::from_real(&shape, values)?,
        Field::Complex => {
            if !values.len().is_multiple_of(2) {
                return Err(CoreError::Parse("odd value count for complex grid".into()));
            }
            let data: Vec<Complex64> = values
                .chunks_exact(2)
                .map(|p| Complex64::new(p[0], p[1]))
                .collect();
            Grid::from_complex(&shape, data)?
        }
    };
    Ok((grid, peak))
}

fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".meta");
    p.into()
}

/// Export a 2-d real grid as a 16-bit binary PGM, mapping [0, peak] to
/// [0, 65535] with clamping.
pub fn save_pgm16(grid: &Grid, peak: f64, path: &Path) -> Result<()> {
    if grid.ndim() != 2 {
        return Err(CoreError::InvalidArgument(
            "pgm export requires a 2-d grid".into(),
        ));
    }
    if peak <= 0.0 {
        return Err(CoreError::InvalidArgument("pgm peak must be positive".into()));
    }
    let data = grid.real_part();
    let values = data.real_slice()?;
    let (h, w) = (grid.shape()[0], grid.shape()[1]);
    let mut out = fs::File::create(path)?;
    write!(out, "P5\n{w} {h}\n65535\n")?;
    let mut bytes = Vec::with_capacity(values.len() * 2);
    for &v in values {
        let scaled = ((v / peak).clamp(0.0, 1.0) * 65535.0).round() as u16;
        // PGM stores 16-bit samples most significant byte first.
        bytes.extend_from_slice(&scaled.to_be_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}
