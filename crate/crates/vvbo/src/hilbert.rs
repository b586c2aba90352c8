//! Finite, grid-based representation of the output Hilbert space: a scalar
//! RKHS over the trajectory index. Trajectories are fitted from grid samples
//! by kernel ridge regression and carried around as representer coefficients;
//! linear functionals (point evaluations, integrals, combinations) live in
//! the same basis.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, VvboError};
use crate::kernel::ScalarKernel;
use crate::linalg::sorted_symmetric_eigen;

static GRID_IDS: AtomicU64 = AtomicU64::new(0);

/// Relative eigenvalue cutoff below which grid Gram directions are dropped.
pub const EPS_SPD_REL: f64 = 1e-10;

/// Default number of grid points for the paper benchmarks.
pub const DEFAULT_N_GRID: usize = 50;

/// Default KRR fitting regularizer.
pub const DEFAULT_FIT_REG: f64 = 0.01;

/// Discretization of the output space: grid points on the trajectory index,
/// the output-kernel Gram matrix, and its clipped eigendecomposition.
///
/// The eigendecomposition defines canonical orthonormal coordinates
/// `c = Λ^{1/2} Vᵀ α` in which inner products are Euclidean; all measurement
/// and posterior algebra downstream works in those coordinates.
#[derive(Debug)]
pub struct OutputGrid {
    id: u64,
    points: Vec<f64>,
    kernel: ScalarKernel,
    gram: DMatrix<f64>,
    /// Retained eigenvalues, nonincreasing.
    eigvals: DVector<f64>,
    /// Matching orthonormal eigenvector columns (n_grid × rank).
    eigvecs: DMatrix<f64>,
    /// Λ^{1/2} Vᵀ — maps representer coefficients to canonical coordinates.
    canon: DMatrix<f64>,
    /// V Λ^{-1/2} — lifts canonical coordinates back to coefficients.
    canon_lift: DMatrix<f64>,
    fit_reg: f64,
    fit_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl OutputGrid {
    /// Builds a grid from explicit, strictly increasing points.
    pub fn build(points: Vec<f64>, kernel: ScalarKernel, fit_reg: f64) -> Result<Arc<Self>> {
        if points.is_empty() {
            return Err(VvboError::invalid("grid must contain at least one point"));
        }
        if kernel.dim() != 1 {
            return Err(VvboError::invalid("output kernel must be one-dimensional"));
        }
        if !(fit_reg > 0.0) {
            return Err(VvboError::invalid("fit_reg must be strictly positive"));
        }
        for w in points.windows(2) {
            if !(w[0] < w[1]) {
                return Err(VvboError::invalid(
                    "grid points must be strictly increasing and pairwise distinct",
                ));
            }
        }
        let n = points.len();
        let pts_nd: Vec<Vec<f64>> = points.iter().map(|t| vec![*t]).collect();
        let gram = kernel.gram(&pts_nd)?;
        let (vals, vecs) = sorted_symmetric_eigen(&gram);
        let cutoff = EPS_SPD_REL * vals[0].max(0.0);
        let rank = vals.iter().take_while(|v| **v > cutoff).count();
        if rank == 0 {
            return Err(VvboError::Numerical("grid Gram matrix has no positive spectrum".into()));
        }
        let eigvals = DVector::from_iterator(rank, vals.iter().take(rank).copied());
        let eigvecs = vecs.columns(0, rank).into_owned();
        let sqrt = eigvals.map(|v| v.sqrt());
        let canon = DMatrix::from_diagonal(&sqrt) * eigvecs.transpose();
        let canon_lift = &eigvecs * DMatrix::from_diagonal(&sqrt.map(|v| 1.0 / v));
        let fit_chol = (gram.clone() + DMatrix::identity(n, n) * fit_reg)
            .cholesky()
            .ok_or_else(|| VvboError::Numerical("grid fitting system is not SPD".into()))?;
        Ok(Arc::new(OutputGrid {
            id: GRID_IDS.fetch_add(1, Ordering::Relaxed),
            points,
            kernel,
            gram,
            eigvals,
            eigvecs,
            canon,
            canon_lift,
            fit_reg,
            fit_chol,
        }))
    }

    /// Uniform grid of `n` points on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, n: usize, kernel: ScalarKernel, fit_reg: f64) -> Result<Arc<Self>> {
        Self::build(uniform_points(lo, hi, n), kernel, fit_reg)
    }

    /// Uniform grid of `n` points on `[lo, hi]`, adjusted so every value in
    /// `required` appears exactly: each required point replaces the nearest
    /// still-free uniform point.
    pub fn uniform_with_required(
        lo: f64,
        hi: f64,
        n: usize,
        required: &[f64],
        kernel: ScalarKernel,
        fit_reg: f64,
    ) -> Result<Arc<Self>> {
        if required.len() > n {
            return Err(VvboError::invalid("more required points than grid points"));
        }
        let base = uniform_points(lo, hi, n);
        let mut pts = base.clone();
        let mut taken = vec![false; n];
        for &r in required {
            if !(lo..=hi).contains(&r) {
                return Err(VvboError::invalid(format!(
                    "required grid point {r} outside [{lo}, {hi}]"
                )));
            }
            let mut best = None;
            for (i, b) in base.iter().enumerate() {
                if taken[i] {
                    continue;
                }
                let d = (b - r).abs();
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((i, d));
                }
            }
            let (idx, _) = best.expect("free slot exists: required.len() <= n");
            pts[idx] = r;
            taken[idx] = true;
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        Self::build(pts, kernel, fit_reg)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of retained canonical directions after eigenvalue clipping.
    pub fn rank(&self) -> usize {
        self.eigvals.len()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn kernel(&self) -> &ScalarKernel {
        &self.kernel
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn eigvals(&self) -> &DVector<f64> {
        &self.eigvals
    }

    pub fn eigvecs(&self) -> &DMatrix<f64> {
        &self.eigvecs
    }

    pub fn fit_reg(&self) -> f64 {
        self.fit_reg
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Canonical coordinates of a coefficient vector.
    pub fn to_canonical(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        &self.canon * coeffs
    }

    /// Coefficient vector whose canonical coordinates are `c` (restricted to
    /// the retained directions).
    pub fn from_canonical(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.canon_lift * c
    }

    /// Trapezoid quadrature weights on the grid. A single-point grid has no
    /// length to integrate over and gets weight zero.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let n = self.points.len();
        if n == 1 {
            return vec![0.0];
        }
        let mut w = vec![0.0; n];
        w[0] = (self.points[1] - self.points[0]) / 2.0;
        w[n - 1] = (self.points[n - 1] - self.points[n - 2]) / 2.0;
        for j in 1..n - 1 {
            w[j] = (self.points[j + 1] - self.points[j - 1]) / 2.0;
        }
        w
    }

    /// Fits a trajectory from one sample per grid point by solving
    /// `(K + fit_reg·I) α = samples`.
    pub fn fit_from_samples(self: &Arc<Self>, samples: &[f64]) -> Result<HilbertVector> {
        if samples.len() != self.len() {
            return Err(VvboError::DimensionMismatch {
                expected: self.len(),
                got: samples.len(),
            });
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(VvboError::invalid("samples must be finite"));
        }
        let coeffs = self.fit_chol.solve(&DVector::from_column_slice(samples));
        Ok(HilbertVector {
            grid: Arc::clone(self),
            coeffs,
        })
    }

    /// Point-evaluation representer at a grid point: applying it to a fitted
    /// trajectory returns the fitted value at that point. `t0` must coincide
    /// with a grid point; no interpolation is performed.
    pub fn point_eval_functional(self: &Arc<Self>, t0: f64) -> Result<Functional> {
        let span = (self.points[self.len() - 1] - self.points[0]).abs().max(1.0);
        let idx = self
            .points
            .iter()
            .position(|t| (t - t0).abs() <= 1e-9 * span)
            .ok_or_else(|| {
                VvboError::invalid(format!("evaluation point {t0} does not lie on the grid"))
            })?;
        let mut coeffs = DVector::zeros(self.len());
        coeffs[idx] = 1.0;
        Ok(HilbertVector {
            grid: Arc::clone(self),
            coeffs,
        })
    }

    /// Integral-functional representer with weight curve `g` sampled on the
    /// grid, discretized by trapezoid quadrature.
    pub fn integral_functional(self: &Arc<Self>, g: &[f64]) -> Result<Functional> {
        if g.len() != self.len() {
            return Err(VvboError::DimensionMismatch {
                expected: self.len(),
                got: g.len(),
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(VvboError::invalid("integral weights must be finite"));
        }
        let w = self.trapezoid_weights();
        let coeffs = DVector::from_iterator(self.len(), g.iter().zip(&w).map(|(gi, wi)| gi * wi));
        Ok(HilbertVector {
            grid: Arc::clone(self),
            coeffs,
        })
    }

    /// Zero element of this output space.
    pub fn zero(self: &Arc<Self>) -> HilbertVector {
        HilbertVector {
            grid: Arc::clone(self),
            coeffs: DVector::zeros(self.len()),
        }
    }

    /// Wraps explicit representer coefficients.
    pub fn from_coeffs(self: &Arc<Self>, coeffs: Vec<f64>) -> Result<HilbertVector> {
        if coeffs.len() != self.len() {
            return Err(VvboError::DimensionMismatch {
                expected: self.len(),
                got: coeffs.len(),
            });
        }
        Ok(HilbertVector {
            grid: Arc::clone(self),
            coeffs: DVector::from_vec(coeffs),
        })
    }
}

/// Weighted combination Σ_j w_j ξ_j of functionals sharing one grid.
pub fn combine_functionals(functionals: &[Functional], weights: &[f64]) -> Result<Functional> {
    if functionals.is_empty() {
        return Err(VvboError::invalid("cannot combine an empty functional set"));
    }
    if functionals.len() != weights.len() {
        return Err(VvboError::DimensionMismatch {
            expected: functionals.len(),
            got: weights.len(),
        });
    }
    let grid = functionals[0].grid.clone();
    let mut coeffs = DVector::zeros(grid.len());
    for (f, w) in functionals.iter().zip(weights) {
        if f.grid.id != grid.id {
            return Err(VvboError::GridMismatch);
        }
        coeffs += &f.coeffs * *w;
    }
    Ok(HilbertVector { grid, coeffs })
}

/// An element of the output space as coefficients over the grid representer
/// basis: the element is Σ_j α_j k(·, t_j).
#[derive(Debug, Clone)]
pub struct HilbertVector {
    grid: Arc<OutputGrid>,
    coeffs: DVector<f64>,
}

/// A linear functional on the output space, stored as its representer.
pub type Functional = HilbertVector;

impl HilbertVector {
    pub fn grid(&self) -> &Arc<OutputGrid> {
        &self.grid
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    /// Canonical coordinates `Λ^{1/2} Vᵀ α` of this element.
    pub fn canonical_coords(&self) -> DVector<f64> {
        self.grid.to_canonical(&self.coeffs)
    }

    /// RKHS inner product ⟨u, v⟩ = α_uᵀ K_grid α_v.
    pub fn inner(&self, other: &HilbertVector) -> Result<f64> {
        if self.grid.id != other.grid.id {
            return Err(VvboError::GridMismatch);
        }
        Ok(self.coeffs.dot(&(self.grid.gram() * &other.coeffs)))
    }

    /// RKHS norm.
    pub fn norm(&self) -> f64 {
        self.inner(self).expect("same grid").max(0.0).sqrt()
    }

    /// Fitted value Σ_j α_j k(t_i, t_j) at grid index `i`.
    pub fn value_at_grid_index(&self, i: usize) -> f64 {
        self.grid.gram().row(i).transpose().dot(&self.coeffs)
    }

    /// Fitted values at all grid points, K_grid α.
    pub fn values_on_grid(&self) -> DVector<f64> {
        self.grid.gram() * &self.coeffs
    }

    pub fn scaled(&self, a: f64) -> HilbertVector {
        HilbertVector {
            grid: self.grid.clone(),
            coeffs: &self.coeffs * a,
        }
    }

    pub fn add(&self, other: &HilbertVector) -> Result<HilbertVector> {
        if self.grid.id != other.grid.id {
            return Err(VvboError::GridMismatch);
        }
        Ok(HilbertVector {
            grid: self.grid.clone(),
            coeffs: &self.coeffs + &other.coeffs,
        })
    }
}

fn uniform_points(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| {
            if i == 0 {
                lo
            } else if i + 1 == n {
                hi
            } else {
                lo + (i as f64 / (n - 1) as f64) * (hi - lo)
            }
        })
        .collect()
}
