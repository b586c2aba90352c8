//! Linear measurement operators `M : Y -> M`, the induced operator
//! `B_M = M B M*` with its spectral decomposition and finite-rank truncation,
//! and coordinate transport of observations and objective functionals into
//! measurement space.
//!
//! Everything is expressed in the canonical orthonormal coordinates of the
//! output grid, where the identity operator is literally the identity matrix
//! and `B_M` is an ordinary symmetric matrix.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VvboError};
use crate::hilbert::{Functional, HilbertVector, OutputGrid};
use crate::linalg::sorted_symmetric_eigen;

/// How the spectrum of `B_M` is truncated to a finite rank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "value")]
pub enum TruncationPolicy {
    /// Keep at most this many leading eigendirections.
    FixedRank(usize),
    /// Keep the smallest leading set whose eigenvalue sum reaches this
    /// fraction of the trace.
    EnergyFraction(f64),
}

impl TruncationPolicy {
    /// Keep essentially everything; only numerically-zero directions drop.
    pub fn keep_all() -> Self {
        TruncationPolicy::EnergyFraction(1.0 - 1e-10)
    }
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self::keep_all()
    }
}

#[derive(Debug, Clone)]
enum Kind {
    Identity,
    /// Projection onto finitely many functionals; a scalar functional is the
    /// q = 1 case.
    Projection {
        functionals: Vec<Functional>,
    },
}

/// A bounded linear measurement operator, realized as a matrix from the
/// grid's canonical output coordinates to measurement coordinates.
#[derive(Debug, Clone)]
pub struct MeasurementOperator {
    kind: Kind,
    grid: Arc<OutputGrid>,
    /// q_eff × r map from canonical output coordinates to measurement
    /// coordinates. Identity on the retained directions for `M = I`.
    matrix_canon: DMatrix<f64>,
}

impl MeasurementOperator {
    /// Full observation: measurements are the canonical coordinates.
    pub fn identity(grid: &Arc<OutputGrid>) -> Self {
        let r = grid.rank();
        MeasurementOperator {
            kind: Kind::Identity,
            grid: Arc::clone(grid),
            matrix_canon: DMatrix::identity(r, r),
        }
    }

    /// Finite projection: measurement i is ⟨ξ_i, u⟩.
    pub fn projection(functionals: &[Functional]) -> Result<Self> {
        if functionals.is_empty() {
            return Err(VvboError::invalid("projection needs at least one functional"));
        }
        let grid = functionals[0].grid().clone();
        let q = functionals.len();
        let r = grid.rank();
        let mut matrix_canon = DMatrix::zeros(q, r);
        for (i, f) in functionals.iter().enumerate() {
            if f.grid().id() != grid.id() {
                return Err(VvboError::GridMismatch);
            }
            matrix_canon.row_mut(i).copy_from(&f.canonical_coords().transpose());
        }
        let rank = matrix_canon.rank(1e-10 * matrix_canon.amax().max(1.0));
        if rank < q.min(r) {
            log::warn!(
                "projection functionals are rank-deficient (rank {rank} of {q}); \
                 spectrum truncation will absorb the deficiency"
            );
        }
        Ok(MeasurementOperator {
            kind: Kind::Projection {
                functionals: functionals.to_vec(),
            },
            grid,
            matrix_canon,
        })
    }

    /// Scalar linear measurement, q = 1.
    pub fn scalar(functional: &Functional) -> Result<Self> {
        Self::projection(std::slice::from_ref(functional))
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, Kind::Identity)
    }

    pub fn grid(&self) -> &Arc<OutputGrid> {
        &self.grid
    }

    /// Dimension of the measurement space representation.
    pub fn out_dim(&self) -> usize {
        self.matrix_canon.nrows()
    }

    pub fn matrix_canon(&self) -> &DMatrix<f64> {
        &self.matrix_canon
    }

    /// Applies the operator: `M u` in measurement coordinates.
    pub fn measure(&self, u: &HilbertVector) -> Result<DVector<f64>> {
        if u.grid().id() != self.grid.id() {
            return Err(VvboError::GridMismatch);
        }
        Ok(&self.matrix_canon * u.canonical_coords())
    }

    /// Adjoint `M* v` as an element of the output space. Satisfies
    /// ⟨v, M u⟩ = ⟨M* v, u⟩ on the retained canonical directions.
    pub fn adjoint_lift(&self, v: &DVector<f64>) -> Result<HilbertVector> {
        if v.len() != self.out_dim() {
            return Err(VvboError::DimensionMismatch {
                expected: self.out_dim(),
                got: v.len(),
            });
        }
        let canonical = self.matrix_canon.transpose() * v;
        let coeffs = self.grid.from_canonical(&canonical);
        self.grid.from_coeffs(coeffs.iter().copied().collect())
    }

    /// Induced operator `B_M = M B M*` for a PSD `B` given in canonical
    /// output coordinates, returned as its truncated eigendecomposition.
    pub fn induced_operator(
        &self,
        b: &DMatrix<f64>,
        policy: TruncationPolicy,
    ) -> Result<InducedSpectrum> {
        let r = self.grid.rank();
        if b.nrows() != r || b.ncols() != r {
            return Err(VvboError::DimensionMismatch {
                expected: r,
                got: b.nrows(),
            });
        }
        let scale = b.amax().max(f64::MIN_POSITIVE);
        if (b - b.transpose()).amax() > 1e-10 * scale {
            return Err(VvboError::invalid("B must be symmetric"));
        }
        let (bvals, _) = sorted_symmetric_eigen(b);
        if bvals[bvals.len() - 1] < -1e-8 * scale {
            return Err(VvboError::invalid(format!(
                "B must be PSD (min eigenvalue {:.3e})",
                bvals[bvals.len() - 1]
            )));
        }
        let bm = &self.matrix_canon * b * self.matrix_canon.transpose();
        InducedSpectrum::from_matrix(&bm, policy)
    }

    /// Induced operator for the paper's experiment choice `B = I`.
    pub fn induced_identity(&self, policy: TruncationPolicy) -> Result<InducedSpectrum> {
        let r = self.grid.rank();
        self.induced_operator(&DMatrix::identity(r, r), policy)
    }

    /// Coordinates of the objective functional in the retained `φ` basis,
    /// along with its measurement-space norm ‖m‖.
    ///
    /// Under full observation the functional is an output-space element;
    /// under a projection it is the weight vector applied to the measured
    /// projections.
    pub fn functional_coords(
        &self,
        m: FunctionalRep<'_>,
        spectrum: &InducedSpectrum,
    ) -> Result<(DVector<f64>, f64)> {
        let m_meas = self.functional_in_measurement(m)?;
        Ok(spectrum.project_functional(&m_meas))
    }

    /// Measurement-space representation of an objective functional.
    pub fn functional_in_measurement(&self, m: FunctionalRep<'_>) -> Result<DVector<f64>> {
        match (&self.kind, m) {
            (Kind::Identity, FunctionalRep::OutputFunctional(f)) => {
                if f.grid().id() != self.grid.id() {
                    return Err(VvboError::GridMismatch);
                }
                Ok(f.canonical_coords())
            }
            (Kind::Projection { .. }, FunctionalRep::Weights(w)) => {
                if w.len() != self.out_dim() {
                    return Err(VvboError::DimensionMismatch {
                        expected: self.out_dim(),
                        got: w.len(),
                    });
                }
                Ok(DVector::from_column_slice(w))
            }
            (Kind::Identity, FunctionalRep::Weights(_)) => Err(VvboError::invalid(
                "identity measurement expects an output-space functional, not weights",
            )),
            (Kind::Projection { .. }, FunctionalRep::OutputFunctional(_)) => {
                Err(VvboError::invalid(
                    "projection measurement expects a weight vector over its functionals",
                ))
            }
        }
    }

    /// The projection functionals, when this operator is a projection.
    pub fn functionals(&self) -> Option<&[Functional]> {
        match &self.kind {
            Kind::Identity => None,
            Kind::Projection { functionals } => Some(functionals),
        }
    }
}

/// How an objective functional is handed to a measurement operator.
#[derive(Debug, Clone, Copy)]
pub enum FunctionalRep<'a> {
    /// m lives in the output space (full observation).
    OutputFunctional(&'a Functional),
    /// m = w applied to the measured projections (finite observation).
    Weights(&'a [f64]),
}

/// Truncated eigendecomposition of the induced operator `B_M`.
#[derive(Debug, Clone)]
pub struct InducedSpectrum {
    /// Retained eigenvalues, nonincreasing, strictly positive.
    eigvals: DVector<f64>,
    /// Matching orthonormal eigenvectors (q_eff × n) in measurement coords.
    eigvecs: DMatrix<f64>,
    /// Trace of the full `B_M` before truncation.
    trace: f64,
    policy: TruncationPolicy,
    q_eff: usize,
}

impl InducedSpectrum {
    /// Eigendecomposition + truncation of a symmetric PSD matrix.
    pub fn from_matrix(bm: &DMatrix<f64>, policy: TruncationPolicy) -> Result<Self> {
        let q = bm.nrows();
        let (vals, vecs) = sorted_symmetric_eigen(bm);
        let top = vals[0].max(0.0);
        if top <= 0.0 {
            return Err(VvboError::invalid("induced operator B_M is zero"));
        }
        let trace = bm.trace();
        // numerically-zero directions never survive
        let floor = 1e-14 * top;
        let positive = vals.iter().take_while(|v| **v > floor).count();
        let keep = match policy {
            TruncationPolicy::FixedRank(n) => positive.min(n.max(1)),
            TruncationPolicy::EnergyFraction(rho) => {
                if !(0.0 < rho && rho <= 1.0) {
                    return Err(VvboError::invalid("energy fraction must lie in (0, 1]"));
                }
                let mut acc = 0.0;
                let mut keep = positive;
                for i in 0..positive {
                    acc += vals[i];
                    if acc >= rho * trace {
                        keep = i + 1;
                        break;
                    }
                }
                keep
            }
        };
        Ok(InducedSpectrum {
            eigvals: DVector::from_iterator(keep, vals.iter().take(keep).copied()),
            eigvecs: vecs.columns(0, keep).into_owned(),
            trace,
            policy,
            q_eff: q,
        })
    }

    /// Rank-1 spectrum with a single eigenvalue (scalar measurement).
    pub fn rank_one(eigval: f64) -> Result<Self> {
        if !(eigval > 0.0) {
            return Err(VvboError::invalid("rank-one eigenvalue must be positive"));
        }
        Ok(InducedSpectrum {
            eigvals: DVector::from_element(1, eigval),
            eigvecs: DMatrix::identity(1, 1),
            trace: eigval,
            policy: TruncationPolicy::keep_all(),
            q_eff: 1,
        })
    }

    /// Explicit spectrum (already orthonormal columns); used by tests and
    /// snapshot restore.
    pub fn from_parts(eigvals: DVector<f64>, eigvecs: DMatrix<f64>) -> Result<Self> {
        if eigvals.len() != eigvecs.ncols() || eigvals.is_empty() {
            return Err(VvboError::invalid("eigvals/eigvecs size mismatch"));
        }
        if eigvals.iter().any(|v| !(*v > 0.0)) {
            return Err(VvboError::invalid("eigenvalues must be positive"));
        }
        let trace = eigvals.sum();
        let q_eff = eigvecs.nrows();
        Ok(InducedSpectrum {
            eigvals,
            eigvecs,
            trace,
            policy: TruncationPolicy::keep_all(),
            q_eff,
        })
    }

    /// Number of retained eigendirections.
    pub fn rank(&self) -> usize {
        self.eigvals.len()
    }

    /// Dimension of the ambient measurement space.
    pub fn measurement_dim(&self) -> usize {
        self.q_eff
    }

    pub fn eigvals(&self) -> &DVector<f64> {
        &self.eigvals
    }

    pub fn eigvecs(&self) -> &DMatrix<f64> {
        &self.eigvecs
    }

    /// Trace of `B_M` before truncation.
    pub fn trace(&self) -> f64 {
        self.trace
    }

    pub fn policy(&self) -> TruncationPolicy {
        self.policy
    }

    /// Reassembles the truncated matrix Φ Λ Φᵀ.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        &self.eigvecs * DMatrix::from_diagonal(&self.eigvals) * self.eigvecs.transpose()
    }

    /// Coordinates of a measurement-space vector in the `φ` basis.
    pub fn to_phi_coords(&self, v: &DVector<f64>) -> DVector<f64> {
        self.eigvecs.transpose() * v
    }

    /// Measurement-space vector with the given `φ` coordinates.
    pub fn from_phi_coords(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.eigvecs * c
    }

    /// Projects an objective functional: returns its `φ` coordinates and its
    /// measurement-space norm. Warns when the truncation discards a
    /// non-negligible share of the functional.
    pub fn project_functional(&self, m_meas: &DVector<f64>) -> (DVector<f64>, f64) {
        let mbar = self.to_phi_coords(m_meas);
        let norm = m_meas.norm();
        if let TruncationPolicy::EnergyFraction(rho) = self.policy {
            let kept = mbar.norm_squared();
            if norm > 0.0 && kept < rho * norm * norm {
                log::warn!(
                    "spectrum truncation discards {:.3e} of the objective functional's squared norm",
                    norm * norm - kept
                );
            }
        }
        (mbar, norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::ScalarKernel;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn test_grid() -> Arc<OutputGrid> {
        OutputGrid::uniform(0.0, 1.0, 30, ScalarKernel::rbf_iso(1, 0.2).unwrap(), 0.01).unwrap()
    }

    #[test]
    fn identity_with_b_identity_has_unit_spectrum() {
        let g = test_grid();
        let m = MeasurementOperator::identity(&g);
        let spec = m.induced_identity(TruncationPolicy::keep_all()).unwrap();
        assert_eq!(spec.rank(), g.rank());
        for v in spec.eigvals().iter() {
            assert_relative_eq!(*v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn scalar_functional_spectrum_is_its_squared_norm() {
        let g = test_grid();
        let xi = g.point_eval_functional(g.points()[4]).unwrap();
        let m = MeasurementOperator::scalar(&xi).unwrap();
        let spec = m.induced_identity(TruncationPolicy::keep_all()).unwrap();
        assert_eq!(spec.rank(), 1);
        assert_relative_eq!(spec.eigvals()[0], xi.inner(&xi).unwrap(), epsilon = 1e-10);
        assert_relative_eq!(spec.eigvecs()[(0, 0)].abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn orthonormal_projection_rows_give_unit_eigenvalues() {
        let g = test_grid();
        // functionals whose canonical coordinates are the first q unit vectors
        let q = 4;
        let mut fns = Vec::new();
        for i in 0..q {
            let mut c = DVector::zeros(g.rank());
            c[i] = 1.0;
            let coeffs = g.from_canonical(&c);
            fns.push(g.from_coeffs(coeffs.iter().copied().collect()).unwrap());
        }
        let m = MeasurementOperator::projection(&fns).unwrap();
        let spec = m.induced_identity(TruncationPolicy::keep_all()).unwrap();
        assert_eq!(spec.rank(), q);
        for v in spec.eigvals().iter() {
            assert_relative_eq!(*v, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn measure_zero_and_linearity() {
        let g = test_grid();
        let xi: Vec<_> = (0..5)
            .map(|j| g.point_eval_functional(g.points()[j * 5]).unwrap())
            .collect();
        let m = MeasurementOperator::projection(&xi).unwrap();
        assert_eq!(m.measure(&g.zero()).unwrap().amax(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let u = g
            .from_coeffs((0..30).map(|_| rng.random::<f64>() - 0.5).collect())
            .unwrap();
        let v = g
            .from_coeffs((0..30).map(|_| rng.random::<f64>() - 0.5).collect())
            .unwrap();
        let (a, b) = (1.3, -0.7);
        let lhs = m.measure(&u.scaled(a).add(&v.scaled(b)).unwrap()).unwrap();
        let rhs = m.measure(&u).unwrap() * a + m.measure(&v).unwrap() * b;
        assert!((lhs - rhs).amax() < 1e-10);
    }

    #[test]
    fn projection_measures_fitted_trajectory_values() {
        let g = OutputGrid::uniform_with_required(
            0.0,
            1.0,
            50,
            &[0.0, 0.1, 0.2, 0.3, 0.4],
            ScalarKernel::rbf_iso(1, 0.1).unwrap(),
            0.01,
        )
        .unwrap();
        let ts = [0.0, 0.1, 0.2, 0.3, 0.4];
        let fns: Vec<_> = ts.iter().map(|t| g.point_eval_functional(*t).unwrap()).collect();
        let m = MeasurementOperator::projection(&fns).unwrap();
        let traj = g
            .fit_from_samples(&g.points().iter().map(|t| (5.0 * t).sin()).collect::<Vec<_>>())
            .unwrap();
        let meas = m.measure(&traj).unwrap();
        for (i, t) in ts.iter().enumerate() {
            assert!((meas[i] - (5.0 * t).sin()).abs() < 0.03, "at t={t}");
        }
    }

    #[test]
    fn adjoint_identity_holds() {
        let g = test_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xi: Vec<_> = (0..3)
            .map(|j| g.point_eval_functional(g.points()[j * 9]).unwrap())
            .collect();
        for m in [MeasurementOperator::identity(&g), MeasurementOperator::projection(&xi).unwrap()] {
            for _ in 0..20 {
                let u = g
                    .from_coeffs((0..30).map(|_| rng.random::<f64>() - 0.5).collect())
                    .unwrap();
                let v = DVector::from_fn(m.out_dim(), |_, _| rng.random::<f64>() - 0.5);
                let lhs = v.dot(&m.measure(&u).unwrap());
                let rhs = m.adjoint_lift(&v).unwrap().inner(&u).unwrap();
                let scale = 1.0 + lhs.abs();
                assert!((lhs - rhs).abs() <= 1e-8 * scale, "adjoint identity: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn identity_adjoint_roundtrip_on_retained_directions() {
        let g = test_grid();
        let m = MeasurementOperator::identity(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let u = g
            .from_coeffs((0..30).map(|_| rng.random::<f64>() - 0.5).collect())
            .unwrap();
        let back = m.adjoint_lift(&m.measure(&u).unwrap()).unwrap();
        assert!((back.canonical_coords() - u.canonical_coords()).amax() < 1e-9);
    }

    #[test]
    fn scalar_adjoint_of_one_returns_functional() {
        let g = test_grid();
        let xi = g.point_eval_functional(g.points()[11]).unwrap();
        let m = MeasurementOperator::scalar(&xi).unwrap();
        let lifted = m.adjoint_lift(&DVector::from_element(1, 1.0)).unwrap();
        assert!((lifted.canonical_coords() - xi.canonical_coords()).amax() < 1e-9);
    }

    #[test]
    fn trace_preserved_by_decomposition() {
        let g = test_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let xi: Vec<_> = (0..4)
            .map(|j| g.point_eval_functional(g.points()[j * 7 + 1]).unwrap())
            .collect();
        let m = MeasurementOperator::projection(&xi).unwrap();
        let r = g.rank();
        let raw = DMatrix::from_fn(r, r, |_, _| rng.random::<f64>() - 0.5);
        let b = &raw * raw.transpose();
        let spec = m.induced_operator(&b, TruncationPolicy::keep_all()).unwrap();
        assert_relative_eq!(spec.eigvals().sum(), spec.trace(), epsilon = 1e-8);
    }

    #[test]
    fn energy_fraction_truncation_retains_enough() {
        let g = test_grid();
        let m = MeasurementOperator::identity(&g);
        let r = g.rank();
        let b = DMatrix::from_diagonal(&DVector::from_fn(r, |i, _| 1.0 / (i + 1) as f64));
        let rho = 0.9;
        let spec = m
            .induced_operator(&b, TruncationPolicy::EnergyFraction(rho))
            .unwrap();
        assert!(spec.rank() < r);
        assert!(spec.eigvals().sum() >= rho * spec.trace() - 1e-12);
    }

    #[test]
    fn fixed_rank_truncation() {
        let g = test_grid();
        let m = MeasurementOperator::identity(&g);
        let spec = m.induced_identity(TruncationPolicy::FixedRank(3)).unwrap();
        assert_eq!(spec.rank(), 3);
    }

    #[test]
    fn non_psd_b_rejected() {
        let g = test_grid();
        let m = MeasurementOperator::identity(&g);
        let r = g.rank();
        let mut b = DMatrix::identity(r, r);
        b[(0, 0)] = -1.0;
        assert!(m.induced_operator(&b, TruncationPolicy::keep_all()).is_err());
    }

    #[test]
    fn functional_coords_cases() {
        let g = test_grid();
        let xi: Vec<_> = (0..5)
            .map(|j| g.point_eval_functional(g.points()[j * 5 + 2]).unwrap())
            .collect();
        let m = MeasurementOperator::projection(&xi).unwrap();
        let spec = m.induced_identity(TruncationPolicy::keep_all()).unwrap();

        // zero functional
        let (mbar, norm) = m
            .functional_coords(FunctionalRep::Weights(&[0.0; 5]), &spec)
            .unwrap();
        assert_eq!(mbar.amax(), 0.0);
        assert_eq!(norm, 0.0);

        // w = e_2: coordinates are the phi-basis coordinates of e_2, norm 1
        let w = [0.0, 1.0, 0.0, 0.0, 0.0];
        let (mbar, norm) = m.functional_coords(FunctionalRep::Weights(&w), &spec).unwrap();
        assert_relative_eq!(norm, 1.0, epsilon = 1e-12);
        let expected = spec.to_phi_coords(&DVector::from_column_slice(&w));
        assert!((mbar - expected).amax() < 1e-12);

        // m aligned with phi_1 gives mbar = e_1
        let phi1 = spec.eigvecs().column(0).into_owned();
        let (mbar, norm) = spec.project_functional(&phi1);
        assert_relative_eq!(norm, 1.0, epsilon = 1e-10);
        assert_relative_eq!(mbar[0].abs(), 1.0, epsilon = 1e-10);
        for i in 1..mbar.len() {
            assert!(mbar[i].abs() < 1e-10);
        }

        // representation mismatches are input errors
        assert!(m
            .functional_coords(FunctionalRep::OutputFunctional(&xi[0]), &spec)
            .is_err());
        let ident = MeasurementOperator::identity(&g);
        let ispec = ident.induced_identity(TruncationPolicy::keep_all()).unwrap();
        assert!(ident
            .functional_coords(FunctionalRep::Weights(&[1.0]), &ispec)
            .is_err());
    }

    #[test]
    fn operator_boundedness_on_random_inputs() {
        let g = test_grid();
        let xi: Vec<_> = (0..4)
            .map(|j| g.point_eval_functional(g.points()[j * 6]).unwrap())
            .collect();
        let m = MeasurementOperator::projection(&xi).unwrap();
        let op_norm = m.matrix_canon().clone().svd(false, false).singular_values[0];
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..50 {
            let u = g
                .from_coeffs((0..30).map(|_| rng.random::<f64>() - 0.5).collect())
                .unwrap();
            let measured = m.measure(&u).unwrap().norm();
            assert!(measured <= op_norm * u.norm() + 1e-9);
        }
    }

    #[test]
    fn induced_dimension_mismatch() {
        let g = test_grid();
        let m = MeasurementOperator::identity(&g);
        let b = DMatrix::identity(3, 3);
        if g.rank() != 3 {
            assert!(m.induced_operator(&b, TruncationPolicy::keep_all()).is_err());
        }
    }
}
