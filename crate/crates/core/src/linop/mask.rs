//! Diagonal binary masking (inpainting forward model).

use crate::error::{CoreError, Result};
use crate::grid::{Field, Grid};
use crate::linop::{check_input, LinearOperator};

/// Pointwise multiplication by a binary mask. Self-adjoint, idempotent
/// (A'A = A), spectral norm 1 for any nonempty mask.
pub struct MaskOperator {
    mask: Grid,
}

impl MaskOperator {
    pub fn new(mask: Grid) -> Result<Self> {
        let values = mask.real_slice().map_err(|_| {
            CoreError::FieldMismatch("mask grids must be real 0/1 data".into())
        })?;
        if values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(CoreError::InvalidArgument(
                "mask entries must be exactly 0 or 1".into(),
            ));
        }
        Ok(MaskOperator { mask })
    }

    pub fn mask(&self) -> &Grid {
        &self.mask
    }

    pub fn kept_count(&self) -> usize {
        self.mask
            .real_slice()
            .map(|v| v.iter().filter(|&&x| x != 0.0).count())
            .unwrap_or(0)
    }
}

impl LinearOperator for MaskOperator {
    fn in_shape(&self) -> &[usize] {
        self.mask.shape()
    }
    fn out_shape(&self) -> &[usize] {
        self.mask.shape()
    }
    fn in_field(&self) -> Field {
        Field::Real
    }
    fn out_field(&self) -> Field {
        Field::Real
    }

    fn apply(&self, x: &Grid) -> Result<Grid> {
        check_input(x, self.mask.shape(), Field::Real, "MaskOperator::apply")?;
        self.mask.mul_elem(x)
    }

    fn adjoint(&self, y: &Grid) -> Result<Grid> {
        // Symmetric diagonal: the adjoint is the forward map.
        self.apply(y)
    }

    fn normal_apply(&self, x: &Grid) -> Result<Grid> {
        // Idempotent: A'A = A for a 0/1 diagonal.
        self.apply(x)
    }
}
