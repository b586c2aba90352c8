//! Scalar-valued positive-definite kernels on box domains in ℝ^d and
//! Gram-matrix assembly. These are the scalar factor of the separable
//! operator-valued kernels used throughout the crate.

use nalgebra::{DMatrix, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VvboError};

/// Kernel family. Matérn is restricted to the two closed-form smoothness
/// orders; the linear kernel is a plain dot product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum KernelFamily {
    Rbf,
    Matern { nu: MaternNu },
    Linear,
}

/// Supported Matérn smoothness orders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaternNu {
    #[serde(rename = "1.5")]
    ThreeHalves,
    #[serde(rename = "2.5")]
    FiveHalves,
}

/// A stationary (or linear) scalar kernel with per-dimension length scales
/// and an overall variance scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarKernel {
    family: KernelFamily,
    length_scales: Vec<f64>,
    variance_scale: f64,
}

impl ScalarKernel {
    pub fn new(family: KernelFamily, length_scales: Vec<f64>, variance_scale: f64) -> Result<Self> {
        if length_scales.is_empty() {
            return Err(VvboError::invalid("length_scales must be nonempty"));
        }
        if length_scales.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(VvboError::invalid(
                "length_scales must be strictly positive and finite",
            ));
        }
        if !(variance_scale > 0.0) || !variance_scale.is_finite() {
            return Err(VvboError::invalid(
                "variance_scale must be strictly positive and finite",
            ));
        }
        Ok(ScalarKernel {
            family,
            length_scales,
            variance_scale,
        })
    }

    /// RBF kernel with unit variance scale.
    pub fn rbf(length_scales: Vec<f64>) -> Result<Self> {
        Self::new(KernelFamily::Rbf, length_scales, 1.0)
    }

    /// Isotropic RBF kernel in `dim` dimensions.
    pub fn rbf_iso(dim: usize, length_scale: f64) -> Result<Self> {
        Self::rbf(vec![length_scale; dim])
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    pub fn length_scales(&self) -> &[f64] {
        &self.length_scales
    }

    pub fn variance_scale(&self) -> f64 {
        self.variance_scale
    }

    /// Returns the same kernel with a different variance scale.
    pub fn with_variance(&self, variance_scale: f64) -> Result<Self> {
        Self::new(self.family, self.length_scales.clone(), variance_scale)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(VvboError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Evaluates G(x, s).
    pub fn eval(&self, x: &[f64], s: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        self.check_dim(s)?;
        Ok(self.eval_trusted(x, s))
    }

    /// Evaluation without the dimension check, for hot paths where inputs
    /// were validated on construction.
    #[inline]
    pub(crate) fn eval_trusted(&self, x: &[f64], s: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        debug_assert_eq!(s.len(), self.dim());
        match self.family {
            KernelFamily::Linear => {
                let dot: f64 = x.iter().zip(s).map(|(a, b)| a * b).sum();
                self.variance_scale * dot
            }
            KernelFamily::Rbf => {
                let r2 = self.scaled_sq_dist(x, s);
                self.variance_scale * (-0.5 * r2).exp()
            }
            KernelFamily::Matern { nu } => {
                let r = self.scaled_sq_dist(x, s).sqrt();
                let val = match nu {
                    MaternNu::ThreeHalves => {
                        let a = 3.0_f64.sqrt() * r;
                        (1.0 + a) * (-a).exp()
                    }
                    MaternNu::FiveHalves => {
                        let a = 5.0_f64.sqrt() * r;
                        (1.0 + a + 5.0 * r * r / 3.0) * (-a).exp()
                    }
                };
                self.variance_scale * val
            }
        }
    }

    #[inline]
    fn scaled_sq_dist(&self, x: &[f64], s: &[f64]) -> f64 {
        let mut r2 = 0.0;
        for i in 0..x.len() {
            let d = (x[i] - s[i]) / self.length_scales[i];
            r2 += d * d;
        }
        r2
    }

    /// Gram matrix of the kernel on `points`. The result is exactly
    /// symmetric: only the lower triangle is computed and then mirrored.
    /// Duplicate points are legal (regularization keeps downstream systems
    /// solvable) but are reported via a warning.
    pub fn gram(&self, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        for p in points {
            self.check_dim(p)?;
        }
        if has_duplicates(points, 1e-12) {
            log::warn!("gram: input set contains duplicate points (within 1e-12)");
        }
        let t = points.len();
        let mut g = DMatrix::zeros(t, t);
        for i in 0..t {
            for j in 0..=i {
                let v = self.eval_trusted(&points[i], &points[j]);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        Ok(g)
    }

    /// Row vector G(x, X) = [G(x, x_1), ..., G(x, x_t)].
    pub fn cross_gram(&self, x: &[f64], points: &[Vec<f64>]) -> Result<RowDVector<f64>> {
        self.check_dim(x)?;
        for p in points {
            self.check_dim(p)?;
        }
        Ok(RowDVector::from_iterator(
            points.len(),
            points.iter().map(|p| self.eval_trusted(x, p)),
        ))
    }
}

/// True when two points in the set coincide coordinate-wise within `tol`.
pub fn has_duplicates(points: &[Vec<f64>], tol: f64) -> bool {
    for i in 0..points.len() {
        for j in 0..i {
            if points[i]
                .iter()
                .zip(&points[j])
                .all(|(a, b)| (a - b).abs() <= tol)
            {
                return true;
            }
        }
    }
    false
}

/// Axis-aligned box domain in ℝ^d.
///
/// Degenerate axes (`lower == upper`) are allowed and collapse the search to
/// a single coordinate value; inverted bounds are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(VvboError::invalid("bounds must be nonempty, equal length"));
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite())
        {
            return Err(VvboError::invalid("requires lower[i] <= upper[i], finite"));
        }
        Ok(BoxDomain { lower, upper })
    }

    /// 1-D interval.
    pub fn interval(lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower], vec![upper])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    /// The i-th of `res` lattice points along `axis`.
    ///
    /// Computed as `lo + (i/(res-1))·(hi-lo)` with exact endpoints, so a
    /// lattice whose step divides another's produces bitwise-identical
    /// shared points (regret references stay consistent across resolutions).
    pub fn lattice_coord(&self, axis: usize, i: usize, res: usize) -> f64 {
        debug_assert!(res >= 2 || self.lower[axis] == self.upper[axis]);
        let (lo, hi) = (self.lower[axis], self.upper[axis]);
        if i == 0 {
            lo
        } else if i + 1 == res {
            hi
        } else {
            lo + (i as f64 / (res - 1) as f64) * (hi - lo)
        }
    }
}
