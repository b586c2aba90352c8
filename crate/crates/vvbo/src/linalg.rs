//! Small dense linear-algebra helpers shared across the crate: a
//! row-extendable Cholesky factorization and an eigenvalue-sorted wrapper
//! around nalgebra's symmetric eigendecomposition.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, VvboError};

/// Cholesky factorization of a symmetric positive-definite matrix that can be
/// extended one row/column at a time.
///
/// The factor is stored as a packed lower triangle (row-major), so appending
/// an observation costs one forward solve instead of a full refactorization.
#[derive(Debug, Clone)]
pub struct GrowingCholesky {
    /// Packed rows of L: row i occupies `[i(i+1)/2, i(i+1)/2 + i]`.
    data: Vec<f64>,
    dim: usize,
}

impl GrowingCholesky {
    pub fn new() -> Self {
        GrowingCholesky {
            data: Vec::new(),
            dim: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        let start = i * (i + 1) / 2;
        &self.data[start..start + i + 1]
    }

    /// Extends the factor for the bordered matrix `[[A, b], [bᵀ, c]]`.
    pub fn extend(&mut self, b: &[f64], c: f64) -> Result<()> {
        debug_assert_eq!(b.len(), self.dim);
        let l = self.forward(b);
        let rest: f64 = l.iter().map(|v| v * v).sum();
        let d2 = c - rest;
        if d2 <= 0.0 || !d2.is_finite() {
            return Err(VvboError::Numerical(format!(
                "cholesky extension lost positive definiteness (pivot {d2:.3e})"
            )));
        }
        self.data.extend_from_slice(&l);
        self.data.push(d2.sqrt());
        self.dim += 1;
        Ok(())
    }

    /// Solves `L w = rhs`.
    pub fn forward(&self, rhs: &[f64]) -> Vec<f64> {
        debug_assert!(rhs.len() >= self.dim);
        let mut w = vec![0.0; self.dim];
        for i in 0..self.dim {
            let row = self.row(i);
            let mut s = rhs[i];
            for j in 0..i {
                s -= row[j] * w[j];
            }
            w[i] = s / row[i];
        }
        w
    }

    /// Solves `Lᵀ z = w` in place.
    fn backward(&self, w: &mut [f64]) {
        for i in (0..self.dim).rev() {
            let mut s = w[i];
            for j in (i + 1)..self.dim {
                s -= self.row(j)[i] * w[j];
            }
            w[i] = s / self.row(i)[i];
        }
    }

    /// Solves `L Lᵀ z = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> DVector<f64> {
        let mut w = self.forward(rhs);
        self.backward(&mut w);
        DVector::from_vec(w)
    }

    /// Returns `rhsᵀ (L Lᵀ)⁻¹ rhs = ‖L⁻¹ rhs‖²` without the backward pass.
    pub fn quad_form(&self, rhs: &[f64]) -> f64 {
        self.forward(rhs).iter().map(|v| v * v).sum()
    }

    /// Rebuilds the factor from the full matrix (drift control after many
    /// incremental extensions).
    pub fn refactor(&mut self, a: &DMatrix<f64>) -> Result<()> {
        let n = a.nrows();
        debug_assert_eq!(n, a.ncols());
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = vec![0.0; i + 1];
            for j in 0..=i {
                let mut s = a[(i, j)];
                let lower = if j == i { &row } else { &rows[j] };
                for k in 0..j {
                    s -= row[k] * lower[k];
                }
                if j == i {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(VvboError::Numerical(format!(
                            "refactorization lost positive definiteness (pivot {s:.3e})"
                        )));
                    }
                    row[j] = s.sqrt();
                } else {
                    row[j] = s / rows[j][j];
                }
            }
            rows.push(row);
        }
        self.data.clear();
        self.data.reserve(n * (n + 1) / 2);
        for row in rows {
            self.data.extend_from_slice(&row);
        }
        self.dim = n;
        Ok(())
    }
}

impl Default for GrowingCholesky {
    fn default() -> Self {
        Self::new()
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted in nonincreasing
/// order and eigenvectors as matching columns.
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(m.nrows(), n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// log det(A) for a symmetric positive-definite matrix, via Cholesky.
pub fn logdet_spd(a: &DMatrix<f64>) -> Result<f64> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| VvboError::Numerical("logdet of a non-SPD matrix".into()))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}
