//! Dense materialization of matrix-free operators, for desk-scale
//! verification only.
//!
//! The matrix is built column by column from basis-vector applies and the
//! size is guarded ([`crate::tolerances::DENSE_ORACLE_MAX_UNKNOWNS`]); this
//! is the independent reference for adjoint tests, normal-operator checks,
//! Frobenius norms, direct solves and eigenvalue comparisons.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::grid::{numel, Field, Grid};
use crate::linop::LinearOperator;
use crate::tolerances::DENSE_ORACLE_MAX_UNKNOWNS;

pub struct DenseOracle {
    nrows: usize,
    ncols: usize,
    /// Row-major entries.
    entries: Vec<Complex64>,
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
}

impl DenseOracle {
    /// Materialize an operator by applying it to every basis vector.
    pub fn from_operator(op: &dyn LinearOperator) -> Result<Self> {
        let ncols = numel(op.in_shape());
        let nrows = numel(op.out_shape());
        if ncols > DENSE_ORACLE_MAX_UNKNOWNS {
            return Err(CoreError::SizeGuard {
                context: "DenseOracle::from_operator",
                limit: DENSE_ORACLE_MAX_UNKNOWNS,
                got: ncols,
            });
        }
        let in_shape = op.in_shape().to_vec();
        let columns: Vec<Result<Vec<Complex64>>> = (0..ncols)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![0.0; ncols];
                e[j] = 1.0;
                let basis = match op.in_field() {
                    Field::Real => Grid::from_real(&in_shape, e)?,
                    Field::Complex => Grid::from_complex(
                        &in_shape,
                        e.into_iter().map(|v| Complex64::new(v, 0.0)).collect(),
                    )?,
                };
                Ok(op.apply(&basis)?.complex_values().into_owned())
            })
            .collect();
        let mut entries = vec![Complex64::ZERO; nrows * ncols];
        for (j, col) in columns.into_iter().enumerate() {
            let col = col?;
            for (i, v) in col.into_iter().enumerate() {
                entries[i * ncols + j] = v;
            }
        }
        Ok(DenseOracle {
            nrows,
            ncols,
            entries,
            in_shape,
            out_shape: op.out_shape().to_vec(),
        })
    }

    /// Wrap an explicit matrix (1-d domain/range shapes).
    pub fn from_matrix(nrows: usize, ncols: usize, entries: Vec<Complex64>) -> Result<Self> {
        if entries.len() != nrows * ncols || nrows == 0 || ncols == 0 {
            return Err(CoreError::InvalidShape(format!(
                "matrix {nrows}x{ncols} with {} entries",
                entries.len()
            )));
        }
        Ok(DenseOracle {
            nrows,
            ncols,
            entries,
            in_shape: vec![ncols],
            out_shape: vec![nrows],
        })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        self.entries[i * self.ncols + j]
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|i| {
                self.entries[i * self.ncols..(i + 1) * self.ncols]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// Conjugate-transpose product A^H y.
    pub fn rmatvec(&self, y: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(y.len(), self.nrows);
        let mut out = vec![Complex64::ZERO; self.ncols];
        for (row, &yi) in self.entries.chunks_exact(self.ncols).zip(y) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a.conj() * yi;
            }
        }
        out
    }

    /// Dense normal matrix A^H A.
    pub fn normal_matrix(&self) -> DenseOracle {
        let n = self.ncols;
        let mut entries = vec![Complex64::ZERO; n * n];
        for j in 0..n {
            for i in 0..n {
                let mut acc = Complex64::ZERO;
                for k in 0..self.nrows {
                    acc += self.entries[k * n + i].conj() * self.entries[k * n + j];
                }
                entries[i * n + j] = acc;
            }
        }
        DenseOracle {
            nrows: n,
            ncols: n,
            entries,
            in_shape: self.in_shape.clone(),
            out_shape: self.in_shape.clone(),
        }
    }

    pub fn sub(&self, other: &DenseOracle) -> Result<DenseOracle> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(CoreError::InvalidShape(format!(
                "matrix size mismatch {}x{} vs {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a - b)
            .collect();
        Ok(DenseOracle {
            nrows: self.nrows,
            ncols: self.ncols,
            entries,
            in_shape: self.in_shape.clone(),
            out_shape: self.out_shape.clone(),
        })
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.entries.iter().fold(0.0f64, |a, z| a.max(z.norm()))
    }

    /// Direct solve A x = b by LU with partial pivoting (square only).
    pub fn lu_solve(&self, b: &[Complex64]) -> Result<Vec<Complex64>> {
        if self.nrows != self.ncols {
            return Err(CoreError::InvalidArgument(
                "lu_solve requires a square matrix".into(),
            ));
        }
        let n = self.nrows;
        if b.len() != n {
            return Err(CoreError::InvalidShape(format!(
                "rhs length {} vs matrix order {n}",
                b.len()
            )));
        }
        let mut a = self.entries.clone();
        let mut x = b.to_vec();
        for k in 0..n {
            // Pivot on the largest magnitude in column k.
            let mut p = k;
            let mut best = a[k * n + k].norm();
            for i in (k + 1)..n {
                let mag = a[i * n + k].norm();
                if mag > best {
                    best = mag;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(CoreError::SolverBreakdown {
                    iteration: k,
                    detail: "singular matrix in LU solve".into(),
                });
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                x.swap(k, p);
            }
            let pivot = a[k * n + k];
            let xk = x[k];
            for i in (k + 1)..n {
                let f = a[i * n + k] / pivot;
                if f == Complex64::ZERO {
                    continue;
                }
                a[i * n + k] = Complex64::ZERO;
                for j in (k + 1)..n {
                    let akj = a[k * n + j];
                    a[i * n + j] -= f * akj;
                }
                x[i] -= f * xk;
            }
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in (i + 1)..n {
                acc -= a[i * n + j] * x[j];
            }
            x[i] = acc / a[i * n + i];
        }
        Ok(x)
    }

    /// Largest eigenvalue of a real symmetric matrix by cyclic Jacobi
    /// rotations. The independent oracle for power-iteration checks.
    pub fn max_eigenvalue_sym_real(&self) -> Result<f64> {
        if self.nrows != self.ncols {
            return Err(CoreError::InvalidArgument(
                "eigenvalues require a square matrix".into(),
            ));
        }
        let n = self.nrows;
        let scale = self.max_abs_entry().max(1e-300);
        let mut a = vec![0.0f64; n * n];
        for i in 0..n {
            for j in 0..n {
                let z = self.entry(i, j);
                if z.im.abs() > 1e-9 * scale {
                    return Err(CoreError::InvalidArgument(
                        "matrix is not real within tolerance".into(),
                    ));
                }
                a[i * n + j] = z.re;
            }
        }
        for i in 0..n {
            for j in 0..i {
                if (a[i * n + j] - a[j * n + i]).abs() > 1e-9 * scale {
                    return Err(CoreError::InvalidArgument(
                        "matrix is not symmetric within tolerance".into(),
                    ));
                }
            }
        }
        for _sweep in 0..100 {
            let mut off = 0.0f64;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += a[i * n + j] * a[i * n + j];
                }
            }
            if off.sqrt() < 1e-14 * scale {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[p * n + q];
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let (app, aqq) = (a[p * n + p], a[q * n + q]);
                    // Rotation angle zeroing a_pq: tan(2 phi) = 2 a_pq / (a_pp - a_qq).
                    let phi = 0.5 * (2.0 * apq).atan2(app - aqq);
                    let (c, s) = (phi.cos(), phi.sin());
                    for k in 0..n {
                        let akp = a[k * n + p];
                        let akq = a[k * n + q];
                        a[k * n + p] = c * akp + s * akq;
                        a[k * n + q] = -s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p * n + k];
                        let aqk = a[q * n + k];
                        a[p * n + k] = c * apk + s * aqk;
                        a[q * n + k] = -s * apk + c * aqk;
                    }
                }
            }
        }
        let mut best = f64::NEG_INFINITY;
        for i in 0..n {
            best = best.max(a[i * n + i]);
        }
        Ok(best)
    }
}

impl LinearOperator for DenseOracle {
    fn in_shape(&self) -> &[usize] {
        &self.in_shape
    }
    fn out_shape(&self) -> &[usize] {
        &self.out_shape
    }
    fn in_field(&self) -> Field {
        Field::Complex
    }
    fn out_field(&self) -> Field {
        Field::Complex
    }

    fn apply(&self, x: &Grid) -> Result<Grid> {
        if x.shape() != self.in_shape.as_slice() {
            return Err(CoreError::ShapeMismatch {
                context: "DenseOracle::apply",
                expected: self.in_shape.clone(),
                got: x.shape().to_vec(),
            });
        }
        let out = self.matvec(&x.complex_values());
        Grid::from_complex(&self.out_shape, out)
    }

    fn adjoint(&self, y: &Grid) -> Result<Grid> {
        if y.shape() != self.out_shape.as_slice() {
            return Err(CoreError::ShapeMismatch {
                context: "DenseOracle::adjoint",
                expected: self.out_shape.clone(),
                got: y.shape().to_vec(),
            });
        }
        let out = self.rmatvec(&y.complex_values());
        Grid::from_complex(&self.in_shape, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::MaskOperator;
    use crate::rng::SeededRng;

    fn random_matrix(nrows: usize, ncols: usize, seed: u64) -> DenseOracle {
        let mut rng = SeededRng::new(seed);
        let entries = (0..nrows * ncols)
            .map(|_| Complex64::new(rng.next_normal(), 0.0))
            .collect();
        DenseOracle::from_matrix(nrows, ncols, entries).unwrap()
    }

    #[test]
    fn materializes_a_diagonal_operator() {
        let mask = Grid::from_real(&[3], vec![1.0, 0.0, 1.0]).unwrap();
        let op = MaskOperator::new(mask).unwrap();
        let dense = DenseOracle::from_operator(&op).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j && i != 1 { 1.0 } else { 0.0 };
                assert_eq!(dense.entry(i, j), Complex64::new(expected, 0.0));
            }
        }
    }

    #[test]
    fn size_guard_rejects_large_domains() {
        let mask = Grid::constant(&[65, 65], 1.0).unwrap();
        let op = MaskOperator::new(mask).unwrap();
        assert!(matches!(
            DenseOracle::from_operator(&op),
            Err(CoreError::SizeGuard { .. })
        ));
    }

    #[test]
    fn lu_solve_inverts_matvec() {
        let a = random_matrix(12, 12, 31);
        let mut rng = SeededRng::new(32);
        let x: Vec<Complex64> = (0..12)
            .map(|_| Complex64::new(rng.next_normal(), rng.next_normal()))
            .collect();
        let b = a.matvec(&x);
        let back = a.lu_solve(&b).unwrap();
        for (u, v) in back.iter().zip(&x) {
            assert!((u - v).norm() < 1e-10);
        }
    }

    #[test]
    fn jacobi_matches_known_eigenvalues() {
        // [[2, 1], [1, 2]] has eigenvalues 1 and 3.
        let entries = vec![
            Complex64::new(2.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(2.0, 0.0),
        ];
        let a = DenseOracle::from_matrix(2, 2, entries).unwrap();
        let lmax = a.max_eigenvalue_sym_real().unwrap();
        assert!((lmax - 3.0).abs() < 1e-12);
    }

    #[test]
    fn jacobi_agrees_with_rayleigh_bound_on_random_normal_matrix() {
        let a = random_matrix(8, 8, 77);
        let normal = a.normal_matrix();
        let lmax = normal.max_eigenvalue_sym_real().unwrap();
        // lmax must dominate every Rayleigh quotient.
        let mut rng = SeededRng::new(78);
        for _ in 0..20 {
            let v: Vec<Complex64> = (0..8)
                .map(|_| Complex64::new(rng.next_normal(), 0.0))
                .collect();
            let nv = normal.matvec(&v);
            let num: f64 = v.iter().zip(&nv).map(|(a, b)| (a.conj() * b).re).sum();
            let den: f64 = v.iter().map(|z| z.norm_sqr()).sum();
            assert!(num / den <= lmax + 1e-9);
        }
    }
}
