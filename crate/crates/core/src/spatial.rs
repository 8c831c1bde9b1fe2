//! Finite-difference Dirichlet Laplacian on the unit interval or unit square,
//! with its sine eigenbasis and the Hilbert scales built on it.
//!
//! Grid functions live on the interior points only; the homogeneous
//! Dirichlet rows are eliminated. The discrete `L²` product carries the
//! weight `h^dim`, so the sine modes are orthonormal.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{self, MonotoneGraph};

/// Default cap on the number of interior points.
pub const MAX_POINTS: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("grid with {points} points exceeds the cap of {cap}")]
    SizeLimit { points: usize, cap: usize },
    #[error("unsupported grid: dim = {dim}, n = {n} (need dim in {{1,2}} and n >= 2)")]
    InvalidGrid { dim: usize, n: usize },
    #[error("operator mismatch: expected {expected:?}, found {found:?}")]
    OperatorMismatch { expected: Grid, found: Grid },
    #[error("field has {found} values, grid needs {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("non-finite field entry at index {0}")]
    NonFinite(usize),
    #[error("closed-form spectrum disagrees with dense eigensolver by {0:e}")]
    SpectralMismatch(f64),
    #[error("field CSV: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, OperatorError>;

/// Interior grid of the unit interval (`dim = 1`) or unit square (`dim = 2`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub n: usize,
}

impl Grid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(dim == 1 || dim == 2) || n < 2 {
            return Err(OperatorError::InvalidGrid { dim, n });
        }
        Ok(Self { dim, n })
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.n as f64 + 1.0)
    }

    /// Quadrature weight `h^dim` of one grid point.
    pub fn weight(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    /// Coordinates of a flat (row-major) index.
    pub fn point(&self, index: usize) -> (f64, f64) {
        let h = self.h();
        if self.dim == 1 {
            ((index + 1) as f64 * h, 0.0)
        } else {
            let i = index / self.n;
            let j = index % self.n;
            ((i + 1) as f64 * h, (j + 1) as f64 * h)
        }
    }
}

/// A real grid function.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(OperatorError::LengthMismatch { expected: grid.len(), found: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(OperatorError::NonFinite(i));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    /// Samples `f(x, y)` at the interior points (`y = 0` in 1D).
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|i| {
                let (x, y) = grid.point(i);
                f(x, y)
            })
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn scaled(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.zip(other, |a, b| a - b)
    }

    fn zip(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        if self.grid != other.grid {
            return Err(OperatorError::OperatorMismatch { expected: self.grid, found: other.grid });
        }
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(Field { grid: self.grid, values })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Flat CSV: a `dim,n` header line, then `n` rows of `n` values
    /// (a single row in 1D).
    pub fn to_csv(&self) -> String {
        let mut out = format!("dim,n\n{},{}\n", self.grid.dim, self.grid.n);
        let row_len = self.grid.n;
        for row in self.values.chunks(row_len) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let bad = |m: &str| OperatorError::Parse(m.to_string());
        if lines.next().map(str::trim) != Some("dim,n") {
            return Err(bad("missing `dim,n` header"));
        }
        let shape = lines.next().ok_or_else(|| bad("missing shape line"))?;
        let mut parts = shape.split(',').map(|s| s.trim().parse::<usize>());
        let dim = parts.next().and_then(|r| r.ok()).ok_or_else(|| bad("bad dim"))?;
        let n = parts.next().and_then(|r| r.ok()).ok_or_else(|| bad("bad n"))?;
        let grid = Grid::new(dim, n)?;
        let mut values = Vec::with_capacity(grid.len());
        for line in lines {
            for tok in line.split(',') {
                values.push(tok.trim().parse::<f64>().map_err(|e| bad(&e.to_string()))?);
            }
        }
        Field::new(grid, values)
    }
}

/// Dirichlet Laplacian `A = −Δ_h` with its closed-form spectral data.
#[derive(Clone, Debug)]
pub struct SpatialOperator {
    grid: Grid,
    /// 1D sine basis, `basis[k * n + i] = √2 sin((k+1)π x_i)`.
    basis: Vec<f64>,
    /// Ascending eigenvalues.
    eigenvalues: Vec<f64>,
    /// Mode multi-index `(k, l)` (0-based; `l = 0` in 1D) for each ordered eigenvalue.
    modes: Vec<(usize, usize)>,
    /// Inverse of `modes` on the `k * n + l` layout (2D only).
    slot: Vec<usize>,
}

impl SpatialOperator {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        Self::with_cap(dim, n, MAX_POINTS)
    }

    pub fn with_cap(dim: usize, n: usize, cap: usize) -> Result<Self> {
        let grid = Grid::new(dim, n)?;
        if grid.len() > cap {
            return Err(OperatorError::SizeLimit { points: grid.len(), cap });
        }
        let h = grid.h();
        let mut basis = vec![0.0; n * n];
        for k in 0..n {
            for i in 0..n {
                basis[k * n + i] = 2f64.sqrt() * (((k + 1) * (i + 1)) as f64 * PI * h).sin();
            }
        }
        let eig1d: Vec<f64> = (0..n)
            .map(|k| {
                let s = ((k + 1) as f64 * PI * h / 2.0).sin();
                4.0 / (h * h) * s * s
            })
            .collect();
        let mut modes: Vec<(usize, usize)> = if dim == 1 {
            (0..n).map(|k| (k, 0)).collect()
        } else {
            (0..n).flat_map(|k| (0..n).map(move |l| (k, l))).collect()
        };
        let value = |&(k, l): &(usize, usize)| {
            if dim == 1 {
                eig1d[k]
            } else {
                eig1d[k] + eig1d[l]
            }
        };
        // Ascending, ties broken lexicographically on the mode indices.
        modes.sort_by(|a, b| value(a).total_cmp(&value(b)).then(a.cmp(b)));
        let eigenvalues: Vec<f64> = modes.iter().map(value).collect();
        let mut slot = vec![0; if dim == 2 { n * n } else { 0 }];
        if dim == 2 {
            for (idx, &(k, l)) in modes.iter().enumerate() {
                slot[k * n + l] = idx;
            }
        }
        let op = Self { grid, basis, eigenvalues, modes, slot };
        if grid.len() <= 64 {
            let dev = op.dense_eigen_deviation();
            let scale = op.eigenvalues[op.eigenvalues.len() - 1];
            if dev > 1e-9 * scale {
                return Err(OperatorError::SpectralMismatch(dev));
            }
        }
        Ok(op)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn mode_indices(&self) -> &[(usize, usize)] {
        &self.modes
    }

    fn check(&self, u: &Field) -> Result<()> {
        if u.grid != self.grid {
            return Err(OperatorError::OperatorMismatch { expected: self.grid, found: u.grid });
        }
        Ok(())
    }

    /// `k`-th orthonormal eigenvector (0-based, ascending eigenvalue).
    pub fn eigenvector(&self, k: usize) -> Field {
        let mut c = vec![0.0; self.len()];
        c[k] = 1.0;
        Field { grid: self.grid, values: self.from_modes(&c) }
    }

    /// Stencil application `A u` on a raw value slice.
    pub fn apply_values(&self, u: &[f64]) -> Vec<f64> {
        let n = self.grid.n;
        let inv_h2 = 1.0 / (self.grid.h() * self.grid.h());
        let mut out = vec![0.0; u.len()];
        if self.grid.dim == 1 {
            for i in 0..n {
                let left = if i > 0 { u[i - 1] } else { 0.0 };
                let right = if i + 1 < n { u[i + 1] } else { 0.0 };
                out[i] = (2.0 * u[i] - left - right) * inv_h2;
            }
        } else {
            for i in 0..n {
                for j in 0..n {
                    let idx = i * n + j;
                    let mut acc = 4.0 * u[idx];
                    if i > 0 {
                        acc -= u[idx - n];
                    }
                    if i + 1 < n {
                        acc -= u[idx + n];
                    }
                    if j > 0 {
                        acc -= u[idx - 1];
                    }
                    if j + 1 < n {
                        acc -= u[idx + 1];
                    }
                    out[idx] = acc * inv_h2;
                }
            }
        }
        out
    }

    pub fn apply(&self, u: &Field) -> Result<Field> {
        self.check(u)?;
        Ok(Field { grid: self.grid, values: self.apply_values(&u.values) })
    }

    /// Eigen-coefficients `û_k = (u, e_k)` in ascending-eigenvalue order.
    pub fn to_modes(&self, u: &[f64]) -> Vec<f64> {
        let n = self.grid.n;
        let h = self.grid.h();
        if self.grid.dim == 1 {
            (0..n)
                .map(|k| {
                    let row = &self.basis[k * n..(k + 1) * n];
                    h * row.iter().zip(u).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect()
        } else {
            // C = h² S U Sᵀ, then reorder.
            let mut tmp = vec![0.0; n * n];
            for k in 0..n {
                let srow = &self.basis[k * n..(k + 1) * n];
                for j in 0..n {
                    let mut acc = 0.0;
                    for i in 0..n {
                        acc += srow[i] * u[i * n + j];
                    }
                    tmp[k * n + j] = acc;
                }
            }
            let mut out = vec![0.0; n * n];
            for k in 0..n {
                for l in 0..n {
                    let srow = &self.basis[l * n..(l + 1) * n];
                    let trow = &tmp[k * n..(k + 1) * n];
                    let acc: f64 = trow.iter().zip(srow).map(|(a, b)| a * b).sum();
                    out[self.slot[k * n + l]] = h * h * acc;
                }
            }
            out
        }
    }

    /// Inverse of [`to_modes`](Self::to_modes).
    pub fn from_modes(&self, c: &[f64]) -> Vec<f64> {
        let n = self.grid.n;
        if self.grid.dim == 1 {
            let mut out = vec![0.0; n];
            for k in 0..n {
                let ck = c[k];
                if ck == 0.0 {
                    continue;
                }
                let row = &self.basis[k * n..(k + 1) * n];
                for (o, b) in out.iter_mut().zip(row) {
                    *o += ck * b;
                }
            }
            out
        } else {
            // U = Sᵀ C S with C in (k, l) layout.
            let mut cm = vec![0.0; n * n];
            for k in 0..n {
                for l in 0..n {
                    cm[k * n + l] = c[self.slot[k * n + l]];
                }
            }
            let mut tmp = vec![0.0; n * n]; // (Sᵀ C)[i][l]
            for k in 0..n {
                let srow = &self.basis[k * n..(k + 1) * n];
                for l in 0..n {
                    let ckl = cm[k * n + l];
                    if ckl == 0.0 {
                        continue;
                    }
                    for i in 0..n {
                        tmp[i * n + l] += srow[i] * ckl;
                    }
                }
            }
            let mut out = vec![0.0; n * n];
            for i in 0..n {
                for l in 0..n {
                    let t = tmp[i * n + l];
                    if t == 0.0 {
                        continue;
                    }
                    let srow = &self.basis[l * n..(l + 1) * n];
                    for j in 0..n {
                        out[i * n + j] += t * srow[j];
                    }
                }
            }
            out
        }
    }

    /// `f(A) u` by spectral multiplication.
    pub fn apply_function_values(&self, u: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut c = self.to_modes(u);
        for (ck, &mu) in c.iter_mut().zip(&self.eigenvalues) {
            *ck *= f(mu);
        }
        self.from_modes(&c)
    }

    /// `A^{-1} u`.
    pub fn solve_values(&self, u: &[f64]) -> Vec<f64> {
        self.apply_function_values(u, |mu| 1.0 / mu)
    }

    pub fn inner_l2_values(&self, u: &[f64], v: &[f64]) -> f64 {
        self.grid.weight() * u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn norm_l2(&self, u: &Field) -> f64 {
        self.inner_l2_values(&u.values, &u.values).sqrt()
    }

    pub fn norm_l1(&self, u: &Field) -> f64 {
        self.grid.weight() * u.values.iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn norm_linf(&self, u: &Field) -> f64 {
        u.max_abs()
    }

    /// `⟨u, v⟩_{-1} = (A^{-1}u, v) = Σ û_k v̂_k / μ_k`.
    pub fn inner_h_minus1_values(&self, u: &[f64], v: &[f64]) -> f64 {
        let cu = self.to_modes(u);
        let cv = self.to_modes(v);
        cu.iter().zip(&cv).zip(&self.eigenvalues).map(|((a, b), mu)| a * b / mu).sum()
    }

    pub fn norm_h_minus1_values(&self, u: &[f64]) -> f64 {
        let c = self.to_modes(u);
        c.iter().zip(&self.eigenvalues).map(|(a, mu)| a * a / mu).sum::<f64>().sqrt()
    }

    pub fn inner_h_minus1(&self, u: &Field, v: &Field) -> Result<f64> {
        self.check(u)?;
        self.check(v)?;
        Ok(self.inner_h_minus1_values(&u.values, &v.values))
    }

    pub fn norm_h_minus1(&self, u: &Field) -> Result<f64> {
        self.check(u)?;
        Ok(self.norm_h_minus1_values(&u.values))
    }

    /// `|u|_{D(A^γ)} = (Σ μ_k^{2γ} û_k²)^{1/2}`.
    pub fn fractional_norm(&self, gamma: f64, u: &Field) -> Result<f64> {
        self.check(u)?;
        let c = self.to_modes(&u.values);
        Ok(c.iter()
            .zip(&self.eigenvalues)
            .map(|(a, mu)| mu.powf(2.0 * gamma) * a * a)
            .sum::<f64>()
            .sqrt())
    }

    /// `(1 + εA)^{-m} u`.
    pub fn smoothing_resolvent(&self, eps: f64, m: u32, u: &Field) -> Result<Field> {
        self.check(u)?;
        if eps == 0.0 {
            return Ok(u.clone());
        }
        let values = self.apply_function_values(&u.values, |mu| (1.0 + eps * mu).powi(-(m as i32)));
        Ok(Field { grid: self.grid, values })
    }

    /// Dense stencil matrix of `A`.
    pub fn dense_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.apply_values(&e);
            for i in 0..n {
                m[(i, j)] = col[i];
            }
            e[j] = 0.0;
        }
        m
    }

    /// Dense matrix of `f(A)` assembled from the eigenbasis.
    pub fn dense_function(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let n = self.len();
        let w = self.grid.weight();
        let vecs: Vec<Vec<f64>> = (0..n).map(|k| self.eigenvector(k).values).collect();
        let mut m = DMatrix::zeros(n, n);
        for (k, e) in vecs.iter().enumerate() {
            let fk = f(self.eigenvalues[k]) * w;
            for i in 0..n {
                let a = fk * e[i];
                for j in 0..n {
                    m[(i, j)] += a * e[j];
                }
            }
        }
        m
    }

    /// Diagonal of the matrix `A^{-1}`.
    pub fn inverse_diagonal(&self) -> Vec<f64> {
        self.function_diagonal(|mu| 1.0 / mu)
    }

    /// Diagonal of the matrix `f(A)`.
    pub fn function_diagonal(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let n = self.len();
        let w = self.grid.weight();
        let mut d = vec![0.0; n];
        for k in 0..n {
            let e = self.eigenvector(k).values;
            let fk = f(self.eigenvalues[k]) * w;
            for i in 0..n {
                d[i] += fk * e[i] * e[i];
            }
        }
        d
    }

    /// Largest deviation between the closed-form spectrum and a dense
    /// symmetric eigensolve of the stencil matrix.
    pub fn dense_eigen_deviation(&self) -> f64 {
        let eig = SymmetricEigen::new(self.dense_matrix());
        let mut dense: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        dense.sort_by(f64::total_cmp);
        dense.iter().zip(&self.eigenvalues).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Maximal pointwise violation of `j((1+εA)^{-m}u) ≤ (1+εA)^{-m} j(u)`,
    /// with the resolvent applied as a dense matrix.
    pub fn jensen_check(&self, eps: f64, m: u32, g: &MonotoneGraph, u: &Field) -> graph::Result<f64> {
        if u.grid != self.grid {
            return Err(graph::GraphError::InvalidParameter("field/operator grid mismatch".into()));
        }
        if eps == 0.0 {
            return Ok(0.0);
        }
        let r = self.dense_function(|mu| (1.0 + eps * mu).powi(-(m as i32)));
        let n = self.len();
        let ju: Vec<f64> = u.values.iter().map(|&v| g.potential(v)).collect::<graph::Result<_>>()?;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let mut smoothed = 0.0;
            let mut averaged = 0.0;
            for k in 0..n {
                smoothed += r[(i, k)] * u.values[k];
                averaged += r[(i, k)] * ju[k];
            }
            worst = worst.max(g.potential(smoothed)? - averaged);
        }
        Ok(worst.max(0.0))
    }
}
