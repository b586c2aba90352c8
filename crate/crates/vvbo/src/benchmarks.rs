//! Synthetic benchmark suite: ground-truth operators h(x, t) over decomposed
//! inputs u = (x, t), trajectory generation with noise, three-phase objective
//! schedules, and brute-force regret oracles.

use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VvboError};
use crate::hilbert::{combine_functionals, Functional, HilbertVector, OutputGrid};
use crate::kernel::{BoxDomain, ScalarKernel};
use crate::seed::derive_seed;

/// The seven test operators (the GP family counts once per input dimension).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkName {
    Gp,
    Gp3d,
    Ackley,
    Eggholder,
    Bukin,
    HolderTable,
    Shubert,
    Langermann,
}

impl BenchmarkName {
    pub fn all() -> [BenchmarkName; 8] {
        use BenchmarkName::*;
        [Gp, Gp3d, Ackley, Eggholder, Bukin, HolderTable, Shubert, Langermann]
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            BenchmarkName::Gp => "gp",
            BenchmarkName::Gp3d => "gp3d",
            BenchmarkName::Ackley => "ackley",
            BenchmarkName::Eggholder => "eggholder",
            BenchmarkName::Bukin => "bukin",
            BenchmarkName::HolderTable => "holder_table",
            BenchmarkName::Shubert => "shubert",
            BenchmarkName::Langermann => "langermann",
        }
    }
}

impl FromStr for BenchmarkName {
    type Err = VvboError;

    fn from_str(s: &str) -> Result<Self> {
        BenchmarkName::all()
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| VvboError::config(format!("unknown benchmark '{s}'")))
    }
}

/// Per-benchmark hyperparameters: regularizer, trajectory noise level, and
/// input/output RBF length scales.
#[derive(Debug, Clone, Copy)]
pub struct BenchmarkHyperparams {
    pub lambda: f64,
    pub noise_std: f64,
    pub input_length_scale: f64,
    pub output_length_scale: f64,
}

impl BenchmarkName {
    pub fn hyperparams(&self) -> BenchmarkHyperparams {
        let (lambda, noise_std, input, output) = match self {
            BenchmarkName::Gp => (1e-2, 1e-2, 0.1, 0.1),
            BenchmarkName::Gp3d => (1e-2, 1e-2, 0.1, 0.1),
            BenchmarkName::Ackley => (1e-2, 1e-2, 3.0, 3.0),
            BenchmarkName::Eggholder => (1e-2, 1.0, 50.0, 50.0),
            BenchmarkName::Bukin => (1e-2, 1.0, 0.6, 1.0),
            BenchmarkName::HolderTable => (1e-2, 1.0, 1.0, 1.0),
            BenchmarkName::Shubert => (1e-2, 1e-3, 0.5, 0.5),
            BenchmarkName::Langermann => (1e-2, 1e-3, 0.5, 0.5),
        };
        BenchmarkHyperparams {
            lambda,
            noise_std,
            input_length_scale: input,
            output_length_scale: output,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            BenchmarkName::Gp3d => 3,
            _ => 1,
        }
    }

    pub fn x_domain(&self) -> BoxDomain {
        let (lo, hi) = match self {
            BenchmarkName::Gp => (0.0, 1.0),
            BenchmarkName::Gp3d => {
                return BoxDomain::new(vec![0.0; 3], vec![1.0; 3]).expect("static bounds")
            }
            BenchmarkName::Ackley => (-32.768, 32.768),
            BenchmarkName::Eggholder => (-512.0, 512.0),
            BenchmarkName::Bukin => (-15.0, -5.0),
            BenchmarkName::HolderTable | BenchmarkName::Shubert => (-10.0, 10.0),
            BenchmarkName::Langermann => (0.0, 10.0),
        };
        BoxDomain::interval(lo, hi).expect("static bounds")
    }

    pub fn t_domain(&self) -> (f64, f64) {
        match self {
            BenchmarkName::Gp | BenchmarkName::Gp3d => (0.0, 1.0),
            BenchmarkName::Ackley => (-32.768, 32.768),
            BenchmarkName::Eggholder => (-512.0, 512.0),
            BenchmarkName::Bukin => (-3.0, 3.0),
            BenchmarkName::HolderTable | BenchmarkName::Shubert => (-10.0, 10.0),
            BenchmarkName::Langermann => (0.0, 10.0),
        }
    }
}

/// Frozen RBF expansion for the GP-family operators:
/// h(x, t) = G_{x, X_grid} · α · G_{T_grid, t} with ℓ = 0.1 on [0, 1] grids.
#[derive(Debug, Clone)]
struct GpExpansion {
    x_grid: Vec<Vec<f64>>,
    t_grid: Vec<f64>,
    alpha: DMatrix<f64>,
    x_kernel: ScalarKernel,
    t_kernel: ScalarKernel,
}

impl GpExpansion {
    fn new(dim: usize, seed: u64) -> Self {
        let x_grid: Vec<Vec<f64>> = if dim == 1 {
            (0..10).map(|i| vec![i as f64 / 9.0]).collect()
        } else {
            let axis: Vec<f64> = (0..5).map(|i| i as f64 / 4.0).collect();
            let mut pts = Vec::with_capacity(125);
            for &a in &axis {
                for &b in &axis {
                    for &c in &axis {
                        pts.push(vec![a, b, c]);
                    }
                }
            }
            pts
        };
        let t_grid: Vec<f64> = (0..10).map(|j| j as f64 / 9.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, "gp/alpha"));
        let alpha = DMatrix::from_fn(x_grid.len(), t_grid.len(), |_, _| {
            rng.random::<f64>() * 7.0 - 3.5
        });
        GpExpansion {
            x_grid,
            t_grid,
            alpha,
            x_kernel: ScalarKernel::rbf_iso(dim, 0.1).expect("static params"),
            t_kernel: ScalarKernel::rbf_iso(1, 0.1).expect("static params"),
        }
    }

    fn eval(&self, x: &[f64], t: f64) -> f64 {
        let gx = RowDVector::from_iterator(
            self.x_grid.len(),
            self.x_grid.iter().map(|p| self.x_kernel.eval_trusted(x, p)),
        );
        let gt = DVector::from_iterator(
            self.t_grid.len(),
            self.t_grid
                .iter()
                .map(|tj| self.t_kernel.eval_trusted(&[*tj], &[t])),
        );
        (gx * &self.alpha * gt)[(0, 0)]
    }

    /// h(x, ·) on many t values at once; the x-side kernel row is computed
    /// once per call.
    fn eval_row(&self, x: &[f64], ts: &[f64]) -> Vec<f64> {
        let gx = RowDVector::from_iterator(
            self.x_grid.len(),
            self.x_grid.iter().map(|p| self.x_kernel.eval_trusted(x, p)),
        );
        let w = gx * &self.alpha; // 1 × |t_grid|
        ts.iter()
            .map(|t| {
                let mut acc = 0.0;
                for (j, tj) in self.t_grid.iter().enumerate() {
                    acc += w[j] * self.t_kernel.eval_trusted(&[*tj], &[*t]);
                }
                acc
            })
            .collect()
    }
}

/// Ground-truth operator h(x, t) with its domains and frozen randomness.
#[derive(Debug, Clone)]
pub struct TestOperator {
    name: BenchmarkName,
    x_domain: BoxDomain,
    t_domain: (f64, f64),
    gp: Option<GpExpansion>,
}

use rand::SeedableRng;

impl TestOperator {
    pub fn new(name: BenchmarkName, benchmark_seed: u64) -> Self {
        let gp = match name {
            BenchmarkName::Gp => Some(GpExpansion::new(1, benchmark_seed)),
            BenchmarkName::Gp3d => Some(GpExpansion::new(3, benchmark_seed)),
            _ => None,
        };
        TestOperator {
            name,
            x_domain: name.x_domain(),
            t_domain: name.t_domain(),
            gp,
        }
    }

    pub fn name(&self) -> BenchmarkName {
        self.name
    }

    pub fn x_domain(&self) -> &BoxDomain {
        &self.x_domain
    }

    pub fn t_domain(&self) -> (f64, f64) {
        self.t_domain
    }

    /// Exact ground-truth value at (x, t); out-of-domain points are input
    /// errors.
    pub fn eval(&self, x: &[f64], t: f64) -> Result<f64> {
        if !self.x_domain.contains(x) {
            return Err(VvboError::invalid(format!(
                "x {x:?} outside the {} domain",
                self.name.as_str()
            )));
        }
        let (tlo, thi) = self.t_domain;
        if !(t >= tlo && t <= thi) {
            return Err(VvboError::invalid(format!(
                "t {t} outside [{tlo}, {thi}]"
            )));
        }
        Ok(self.eval_trusted(x, t))
    }

    fn eval_trusted(&self, x: &[f64], t: f64) -> f64 {
        match self.name {
            BenchmarkName::Gp | BenchmarkName::Gp3d => {
                self.gp.as_ref().expect("frozen expansion").eval(x, t)
            }
            BenchmarkName::Ackley => ackley(&[x[0], t]),
            BenchmarkName::Eggholder => eggholder(x[0], t),
            BenchmarkName::Bukin => bukin(x[0], t),
            BenchmarkName::HolderTable => holder_table(x[0], t),
            BenchmarkName::Shubert => shubert(x[0], t),
            BenchmarkName::Langermann => langermann(x[0], t),
        }
    }

    /// h(x, ·) sampled on all grid points.
    pub fn trajectory(&self, x: &[f64], ts: &[f64]) -> Vec<f64> {
        match &self.gp {
            Some(gp) => gp.eval_row(x, ts),
            None => ts.iter().map(|t| self.eval_trusted(x, *t)).collect(),
        }
    }
}

fn ackley(u: &[f64]) -> f64 {
    let d = u.len() as f64;
    let sq: f64 = u.iter().map(|v| v * v).sum::<f64>() / d;
    let cos: f64 = u.iter().map(|v| (0.2 * std::f64::consts::PI * v).cos()).sum::<f64>() / d;
    -(-20.0 * (-0.2 * sq.sqrt()).exp() - cos.exp() + 20.0 + std::f64::consts::E - 20.0)
}

fn eggholder(u1: f64, u2: f64) -> f64 {
    let a = u2 / 2.0 + 47.0;
    -(a) * (0.5 * (u2 / 2.0 + u1 / 4.0 + 47.0).abs()).sqrt().sin()
        - (u1 / 2.0) * (0.5 * (u1 / 2.0 - a).abs()).sqrt().sin()
}

fn bukin(u1: f64, u2: f64) -> f64 {
    -100.0 * (u2 - 0.01 * u1 * u1).abs().sqrt() + 0.01 * (u1 + 10.0).abs() + 180.0
}

fn holder_table(u1: f64, u2: f64) -> f64 {
    (u1.sin() * u2.cos() * (1.0 - (u1 * u1 + u2 * u2).sqrt() / std::f64::consts::PI).abs().exp())
        .abs()
}

fn shubert(u1: f64, u2: f64) -> f64 {
    let sum = |u: f64| -> f64 {
        (1..=5)
            .map(|i| i as f64 * ((i as f64 + 1.0) * u / 2.0 + i as f64).cos())
            .sum()
    };
    sum(u1) * sum(u2) / 100.0
}

fn langermann(u1: f64, u2: f64) -> f64 {
    const C: [f64; 5] = [1.0, 2.0, 5.0, 2.0, 3.0];
    const A: [[f64; 2]; 5] = [[3.0, 5.0], [5.0, 2.0], [2.0, 1.0], [1.0, 4.0], [7.0, 9.0]];
    let mut acc = 0.0;
    for i in 0..5 {
        let d0 = u1 / 2.0 - A[i][0];
        let d1 = u2 / 2.0 - A[i][1];
        let sq = d0 * d0 + d1 * d1;
        acc += C[i] * (-sq / std::f64::consts::PI).exp() * (std::f64::consts::PI * sq).cos();
    }
    acc
}

/// Trajectory noise: i.i.d. Gaussian per grid sample before fitting.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseModel {
    pub std: f64,
}

impl NoiseModel {
    pub fn new(std: f64) -> Result<Self> {
        if std < 0.0 || !std.is_finite() {
            return Err(VvboError::invalid("noise std must be nonnegative"));
        }
        Ok(NoiseModel { std })
    }

    pub fn perturb(&self, samples: &mut [f64], rng: &mut ChaCha8Rng) {
        if self.std == 0.0 {
            return;
        }
        let normal = Normal::new(0.0, self.std).expect("std validated");
        for s in samples.iter_mut() {
            *s += normal.sample(rng);
        }
    }
}

/// How one basis functional of a phase is constructed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FunctionalSpec {
    /// Point evaluation at a grid-aligned trajectory index.
    PointEval { t: f64 },
    /// Integral functional with a frozen uniform-[0,1] weight curve drawn
    /// from the named stream.
    IntegralRandom { stream: String },
}

/// Table data for one phase: the functional basis, weights, and the fixed
/// confidence parameter.
#[derive(Debug, Clone)]
pub struct PhaseSpec {
    pub basis: Vec<FunctionalSpec>,
    pub weights: Vec<f64>,
    pub beta: f64,
}

/// Phase definitions for a benchmark, plus the observation regime rule:
/// partial observation fixes the measurement to the phase-one basis and only
/// runs the weight-change transition (phases one and two).
#[derive(Debug, Clone)]
pub struct PhaseSchedule {
    pub phases: Vec<PhaseSpec>,
}

fn point_evals(ts: &[f64]) -> Vec<FunctionalSpec> {
    ts.iter().map(|t| FunctionalSpec::PointEval { t: *t }).collect()
}

fn integral_basis(stream_prefix: &str) -> Vec<FunctionalSpec> {
    (0..5)
        .map(|j| FunctionalSpec::IntegralRandom {
            stream: format!("{stream_prefix}/{j}"),
        })
        .collect()
}

impl PhaseSchedule {
    /// The three-phase schedule for a benchmark. Phase two shares the
    /// phase-one basis with different weights; phase three changes the basis
    /// (point-evaluation benchmarks move the evaluation points, the
    /// integral-functional benchmarks redraw their weight curves).
    pub fn table_for(name: BenchmarkName) -> Self {
        use BenchmarkName::*;
        let uniform5 = vec![0.2; 5];
        let (basis_a, basis_b, w1, w2, w3, betas): (
            Vec<FunctionalSpec>,
            Vec<FunctionalSpec>,
            Vec<f64>,
            Vec<f64>,
            Vec<f64>,
            [f64; 3],
        ) = match name {
            Gp | Gp3d => (
                point_evals(&[0.0, 0.1, 0.2, 0.3, 0.4]),
                point_evals(&[0.5, 0.6, 0.7, 0.8, 0.9]),
                uniform5.clone(),
                vec![0.0, 1.0, 0.0, 0.0, 0.0],
                uniform5.clone(),
                [6.0, 6.0, 6.0],
            ),
            Ackley => (
                integral_basis("xi_int/a"),
                integral_basis("xi_int/b"),
                uniform5.clone(),
                vec![0.25, 0.0, 0.25, 0.25, 0.25],
                uniform5.clone(),
                [10.0, 40.0, 70.0],
            ),
            Bukin => (
                point_evals(&[0.0, 0.5, 1.0, 1.5, 2.0]),
                point_evals(&[0.0, -0.5, -1.0, -1.5, -2.0]),
                uniform5.clone(),
                vec![0.0, 0.0, 0.0, 0.0, 1.0],
                uniform5.clone(),
                [100.0, 115.0, 80.0],
            ),
            Eggholder => (
                point_evals(&[500.0, 400.0, 300.0, 200.0, 100.0]),
                point_evals(&[0.0, -100.0, -200.0, -300.0, -400.0]),
                vec![1.0, 0.0, 0.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0, 0.0, 1.0],
                [400.0, 250.0, 300.0],
            ),
            HolderTable => (
                integral_basis("xi_int/a"),
                integral_basis("xi_int/b"),
                uniform5.clone(),
                vec![1.0, 0.0, 0.0, 0.0, 0.0],
                uniform5.clone(),
                [30.0, 30.0, 5.0],
            ),
            Shubert => (
                point_evals(&[0.0, 1.0, 2.0, 3.0, 4.0]),
                point_evals(&[0.0, -1.0, -2.0, -3.0, -4.0]),
                uniform5.clone(),
                vec![0.0, 0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 0.0, 0.0, 1.0],
                [0.5, 0.5, 1.0],
            ),
            Langermann => (
                point_evals(&[5.0, 6.0, 7.0, 8.0, 9.0]),
                point_evals(&[0.0, 1.0, 2.0, 3.0, 4.0]),
                uniform5.clone(),
                vec![1.0, 0.0, 0.0, 0.0, 0.0],
                vec![1.0, 0.0, 0.0, 0.0, 0.0],
                [3.0, 3.0, 3.0],
            ),
        };
        let schedule = PhaseSchedule {
            phases: vec![
                PhaseSpec {
                    basis: basis_a.clone(),
                    weights: w1,
                    beta: betas[0],
                },
                PhaseSpec {
                    basis: basis_a,
                    weights: w2,
                    beta: betas[1],
                },
                PhaseSpec {
                    basis: basis_b,
                    weights: w3,
                    beta: betas[2],
                },
            ],
        };
        schedule.assert_structural_rules();
        schedule
    }

    /// Phase one to two changes only the weights; two to three changes the
    /// basis (and possibly the weights).
    fn assert_structural_rules(&self) {
        let specs_eq = |a: &[FunctionalSpec], b: &[FunctionalSpec]| -> bool {
            a.len() == b.len()
                && a.iter().zip(b).all(|(x, y)| match (x, y) {
                    (FunctionalSpec::PointEval { t: ta }, FunctionalSpec::PointEval { t: tb }) => {
                        ta == tb
                    }
                    (
                        FunctionalSpec::IntegralRandom { stream: sa },
                        FunctionalSpec::IntegralRandom { stream: sb },
                    ) => sa == sb,
                    _ => false,
                })
        };
        assert!(specs_eq(&self.phases[0].basis, &self.phases[1].basis));
        assert!(self.phases[0].weights != self.phases[1].weights);
        assert!(!specs_eq(&self.phases[1].basis, &self.phases[2].basis));
    }

    /// Every point-evaluation index used by any phase (these must land on
    /// the output grid exactly).
    pub fn required_grid_points(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = self
            .phases
            .iter()
            .flat_map(|p| p.basis.iter())
            .filter_map(|s| match s {
                FunctionalSpec::PointEval { t } => Some(*t),
                FunctionalSpec::IntegralRandom { .. } => None,
            })
            .collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }
}

/// Resolved objective of one phase: the combined functional, the weight
/// vector over the basis, its norm, and the table β.
#[derive(Debug, Clone)]
pub struct PhaseObjective {
    pub functionals: Vec<Functional>,
    pub weights: Vec<f64>,
    pub combined: Functional,
    pub beta: f64,
}

/// A benchmark instance: the ground-truth operator, its output grid
/// (augmented with the schedule's evaluation points), the noise model, and
/// the resolved per-phase objectives.
pub struct SyntheticProblem {
    operator: TestOperator,
    grid: Arc<OutputGrid>,
    noise: NoiseModel,
    schedule: PhaseSchedule,
    objectives: Vec<PhaseObjective>,
    /// Per-phase collapsed weights u with F(x) = Σ_j u_j h(x, t_j).
    truth_weights: Vec<DVector<f64>>,
    oracle_cache: Vec<OnceLock<(Vec<f64>, f64)>>,
    benchmark_seed: u64,
}

impl SyntheticProblem {
    pub fn new(name: BenchmarkName, benchmark_seed: u64) -> Result<Self> {
        Self::with_grid_size(name, benchmark_seed, crate::hilbert::DEFAULT_N_GRID)
    }

    pub fn with_grid_size(name: BenchmarkName, benchmark_seed: u64, n_grid: usize) -> Result<Self> {
        Self::with_options(name, benchmark_seed, n_grid, &[])
    }

    /// As [`Self::with_grid_size`], additionally pinning `extra_points` onto
    /// the output grid (for custom point-evaluation measurements).
    pub fn with_options(
        name: BenchmarkName,
        benchmark_seed: u64,
        n_grid: usize,
        extra_points: &[f64],
    ) -> Result<Self> {
        let hp = name.hyperparams();
        let operator = TestOperator::new(name, benchmark_seed);
        let schedule = PhaseSchedule::table_for(name);
        let (tlo, thi) = operator.t_domain();
        let mut required = schedule.required_grid_points();
        required.extend_from_slice(extra_points);
        required.sort_by(f64::total_cmp);
        required.dedup();
        let grid = OutputGrid::uniform_with_required(
            tlo,
            thi,
            n_grid,
            &required,
            ScalarKernel::rbf_iso(1, hp.output_length_scale)?,
            crate::hilbert::DEFAULT_FIT_REG,
        )?;
        let noise = NoiseModel::new(hp.noise_std)?;

        let mut objectives = Vec::with_capacity(schedule.phases.len());
        for spec in &schedule.phases {
            let functionals: Vec<Functional> = spec
                .basis
                .iter()
                .map(|fs| match fs {
                    FunctionalSpec::PointEval { t } => grid.point_eval_functional(*t),
                    FunctionalSpec::IntegralRandom { stream } => {
                        let mut rng =
                            ChaCha8Rng::seed_from_u64(derive_seed(benchmark_seed, 0, stream));
                        let g: Vec<f64> = (0..grid.len()).map(|_| rng.random::<f64>()).collect();
                        grid.integral_functional(&g)
                    }
                })
                .collect::<Result<_>>()?;
            let combined = combine_functionals(&functionals, &spec.weights)?;
            objectives.push(PhaseObjective {
                functionals,
                weights: spec.weights.clone(),
                combined,
                beta: spec.beta,
            });
        }

        // collapse ⟨m, fit(samples)⟩ into per-grid-sample weights:
        // u = (K + rI)^{-1} K α_m, so F(x) = uᵀ h(x, grid)
        let mut truth_weights = Vec::with_capacity(objectives.len());
        for obj in &objectives {
            let k_alpha = obj.combined.values_on_grid();
            let fitted = grid.fit_from_samples(k_alpha.as_slice())?;
            truth_weights.push(fitted.coeffs().clone());
        }

        let oracle_cache = (0..objectives.len()).map(|_| OnceLock::new()).collect();
        Ok(SyntheticProblem {
            operator,
            grid,
            noise,
            schedule,
            objectives,
            truth_weights,
            oracle_cache,
            benchmark_seed,
        })
    }

    pub fn name(&self) -> BenchmarkName {
        self.operator.name()
    }

    pub fn operator(&self) -> &TestOperator {
        &self.operator
    }

    pub fn grid(&self) -> &Arc<OutputGrid> {
        &self.grid
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise
    }

    pub fn schedule(&self) -> &PhaseSchedule {
        &self.schedule
    }

    pub fn benchmark_seed(&self) -> u64 {
        self.benchmark_seed
    }

    pub fn x_domain(&self) -> &BoxDomain {
        self.operator.x_domain()
    }

    pub fn phase_count(&self) -> usize {
        self.objectives.len()
    }

    /// Resolved objective of a 1-based phase.
    pub fn phase_objective(&self, phase: usize) -> Result<&PhaseObjective> {
        self.objectives
            .get(phase.checked_sub(1).ok_or_else(|| {
                VvboError::invalid("phases are 1-based")
            })?)
            .ok_or_else(|| VvboError::invalid(format!("phase {phase} out of range")))
    }

    /// Noise-free fitted trajectory at x.
    pub fn clean_trajectory(&self, x: &[f64]) -> Result<HilbertVector> {
        let samples = self.operator.trajectory(x, self.grid.points());
        self.grid.fit_from_samples(&samples)
    }

    /// Noisy fitted trajectory: i.i.d. Gaussian noise on the grid samples
    /// before fitting. Deterministic given the rng state.
    pub fn query_trajectory(&self, x: &[f64], rng: &mut ChaCha8Rng) -> Result<HilbertVector> {
        if !self.x_domain().contains(x) {
            return Err(VvboError::invalid(format!("query {x:?} outside the domain")));
        }
        let mut samples = self.operator.trajectory(x, self.grid.points());
        self.noise.perturb(&mut samples, rng);
        self.grid.fit_from_samples(&samples)
    }

    /// Noise-free objective F_phase(x) = ⟨m_phase, fit(h(x, ·))⟩, evaluated
    /// through the collapsed per-sample weights.
    pub fn true_objective(&self, x: &[f64], phase: usize) -> Result<f64> {
        let w = self
            .truth_weights
            .get(phase - 1)
            .ok_or_else(|| VvboError::invalid(format!("phase {phase} out of range")))?;
        let samples = self.operator.trajectory(x, self.grid.points());
        Ok(w.iter().zip(&samples).map(|(a, b)| a * b).sum())
    }

    /// Noisy scalar observation of F_phase(x): the same trajectory noise
    /// pushed through the phase functional.
    pub fn query_scalar(&self, x: &[f64], phase: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
        let traj = self.query_trajectory(x, rng)?;
        self.objectives[phase - 1].combined.inner(&traj)
    }

    /// Collapsed per-sample weights u for an arbitrary objective functional:
    /// ⟨m, fit(samples)⟩ = uᵀ samples with u = (K + rI)^{-1} K α_m.
    pub fn collapse_functional(&self, m: &Functional) -> Result<DVector<f64>> {
        if m.grid().id() != self.grid.id() {
            return Err(VvboError::GridMismatch);
        }
        let k_alpha = m.values_on_grid();
        Ok(self.grid.fit_from_samples(k_alpha.as_slice())?.coeffs().clone())
    }

    /// Noise-free value of a custom functional objective from its collapsed
    /// weights.
    pub fn objective_via_weights(&self, x: &[f64], weights: &DVector<f64>) -> f64 {
        let samples = self.operator.trajectory(x, self.grid.points());
        weights.iter().zip(&samples).map(|(a, b)| a * b).sum()
    }

    /// Brute-force lattice optimum of a custom functional objective.
    pub fn oracle_for_functional(&self, m: &Functional, resolution: usize) -> Result<(Vec<f64>, f64)> {
        let weights = self.collapse_functional(m)?;
        let domain = self.x_domain();
        let d = domain.dim();
        let mut idx = vec![0usize; d];
        let mut x = vec![0.0; d];
        let mut best_x = vec![0.0; d];
        let mut best_v = f64::NEG_INFINITY;
        loop {
            for a in 0..d {
                x[a] = domain.lattice_coord(a, idx[a], resolution);
            }
            let v = self.objective_via_weights(&x, &weights);
            if v > best_v {
                best_v = v;
                best_x.copy_from_slice(&x);
            }
            let mut a = d;
            loop {
                if a == 0 {
                    return Ok((best_x, best_v));
                }
                a -= 1;
                idx[a] += 1;
                if idx[a] < resolution {
                    break;
                }
                idx[a] = 0;
            }
        }
    }

    /// Noisy scalar observation of a custom functional objective.
    pub fn query_scalar_for(&self, x: &[f64], m: &Functional, rng: &mut ChaCha8Rng) -> Result<f64> {
        let traj = self.query_trajectory(x, rng)?;
        m.inner(&traj)
    }

    fn oracle_resolution(&self) -> usize {
        match self.x_domain().dim() {
            1 => 10_001,
            2 => 501,
            3 => 51,
            _ => 11,
        }
    }

    /// Dense-lattice maximizer of the true objective for a 1-based phase,
    /// cached per phase. Ties break to the lexicographically smallest point.
    pub fn oracle_optimum(&self, phase: usize) -> Result<(Vec<f64>, f64)> {
        if phase == 0 || phase > self.objectives.len() {
            return Err(VvboError::invalid(format!("phase {phase} out of range")));
        }
        Ok(self.oracle_cache[phase - 1]
            .get_or_init(|| self.oracle_scan(phase, self.oracle_resolution()))
            .clone())
    }

    /// Exhaustive scan at an explicit per-axis resolution (also used by the
    /// oracle self-consistency checks).
    pub fn oracle_scan(&self, phase: usize, resolution: usize) -> (Vec<f64>, f64) {
        let domain = self.x_domain();
        let d = domain.dim();
        let mut idx = vec![0usize; d];
        let mut x = vec![0.0; d];
        let mut best_x = vec![0.0; d];
        let mut best_v = f64::NEG_INFINITY;
        loop {
            for a in 0..d {
                x[a] = domain.lattice_coord(a, idx[a], resolution);
            }
            let v = self
                .true_objective(&x, phase)
                .expect("lattice points lie inside the domain");
            if v > best_v {
                best_v = v;
                best_x.copy_from_slice(&x);
            }
            let mut a = d;
            loop {
                if a == 0 {
                    return (best_x, best_v);
                }
                a -= 1;
                idx[a] += 1;
                if idx[a] < resolution {
                    break;
                }
                idx[a] = 0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ackley_at_origin_is_twenty() {
        assert_relative_eq!(ackley(&[0.0, 0.0]), 20.0, epsilon = 1e-12);
    }

    #[test]
    fn holder_table_vanishes_at_zero_first_coordinate() {
        for t in [-10.0, -3.3, 0.0, 7.1, 10.0] {
            assert_eq!(holder_table(0.0, t), 0.0);
        }
    }

    #[test]
    fn bukin_closed_form_point() {
        assert_relative_eq!(bukin(-10.0, 1.0), 180.0, epsilon = 1e-12);
    }

    #[test]
    fn out_of_domain_is_an_error() {
        let op = TestOperator::new(BenchmarkName::Bukin, 7);
        assert!(op.eval(&[-10.0, 0.0], 0.0).is_err()); // wrong dim
        assert!(op.eval(&[0.0], 0.0).is_err()); // x outside [-15, -5]
        assert!(op.eval(&[-10.0], 5.0).is_err()); // t outside [-3, 3]
        assert_relative_eq!(op.eval(&[-10.0], 1.0).unwrap(), 180.0, epsilon = 1e-12);
    }

    #[test]
    fn gp_operator_is_frozen_by_seed() {
        let a = TestOperator::new(BenchmarkName::Gp, 7);
        let b = TestOperator::new(BenchmarkName::Gp, 7);
        let c = TestOperator::new(BenchmarkName::Gp, 8);
        let x = [0.37];
        assert_eq!(
            a.eval(&x, 0.21).unwrap().to_bits(),
            b.eval(&x, 0.21).unwrap().to_bits()
        );
        assert_ne!(a.eval(&x, 0.21).unwrap(), c.eval(&x, 0.21).unwrap());
    }

    #[test]
    fn gp_row_evaluation_matches_pointwise() {
        let op = TestOperator::new(BenchmarkName::Gp3d, 3);
        let x = [0.2, 0.8, 0.5];
        let ts = [0.0, 0.13, 0.77, 1.0];
        let row = op.trajectory(&x, &ts);
        for (t, v) in ts.iter().zip(&row) {
            assert_relative_eq!(*v, op.eval(&x, *t).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn schedules_satisfy_structural_rules() {
        for name in BenchmarkName::all() {
            let s = PhaseSchedule::table_for(name); // asserts internally
            assert_eq!(s.phases.len(), 3);
            for p in &s.phases {
                assert_eq!(p.basis.len(), 5);
                assert_eq!(p.weights.len(), 5);
            }
        }
    }

    #[test]
    fn gp_phase_objects_match_table() {
        let p = SyntheticProblem::new(BenchmarkName::Gp, 7).unwrap();
        let ph1 = p.phase_objective(1).unwrap();
        assert_eq!(ph1.weights, vec![0.2; 5]);
        assert_eq!(ph1.beta, 6.0);
        let ph2 = p.phase_objective(2).unwrap();
        assert_eq!(ph2.weights, vec![0.0, 1.0, 0.0, 0.0, 0.0]);
        // phase-two functional IS the second phase-one basis element
        assert_eq!(
            ph2.combined.coeffs(),
            ph1.functionals[1].coeffs()
        );
    }

    #[test]
    fn eggholder_phase_three_matches_table() {
        let p = SyntheticProblem::new(BenchmarkName::Eggholder, 7).unwrap();
        let ph3 = p.phase_objective(3).unwrap();
        assert_eq!(ph3.weights, vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(ph3.beta, 300.0);
        // w = e_5 reduces F to the single functional at t = -400
        assert_eq!(ph3.combined.coeffs(), ph3.functionals[4].coeffs());
    }

    #[test]
    fn grid_contains_every_evaluation_point() {
        for name in [
            BenchmarkName::Gp,
            BenchmarkName::Eggholder,
            BenchmarkName::Bukin,
            BenchmarkName::Shubert,
            BenchmarkName::Langermann,
        ] {
            let p = SyntheticProblem::new(name, 7).unwrap();
            for t in p.schedule().required_grid_points() {
                assert!(
                    p.grid().points().iter().any(|g| *g == t),
                    "{:?} missing eval point {t}",
                    name
                );
            }
            assert_eq!(p.grid().len(), 50);
        }
    }

    #[test]
    fn noiseless_queries_are_reproducible() {
        let p = SyntheticProblem::with_grid_size(BenchmarkName::Shubert, 7, 50).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(1);
        let a = p.query_trajectory(&[2.0], &mut r1).unwrap();
        let b = p.query_trajectory(&[2.0], &mut r2).unwrap();
        assert_eq!(a.coeffs(), b.coeffs());
        let mut r3 = ChaCha8Rng::seed_from_u64(2);
        let c = p.query_trajectory(&[2.0], &mut r3).unwrap();
        assert_ne!(a.coeffs(), c.coeffs());
    }

    #[test]
    fn zero_noise_matches_clean_trajectory() {
        let mut p = SyntheticProblem::new(BenchmarkName::Gp, 7).unwrap();
        p.noise = NoiseModel::new(0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = p.query_trajectory(&[0.4], &mut rng).unwrap();
        let b = p.clean_trajectory(&[0.4]).unwrap();
        assert_eq!(a.coeffs(), b.coeffs());
    }

    #[test]
    fn noisy_fit_mean_converges_to_clean_fit() {
        let p = SyntheticProblem::new(BenchmarkName::Gp, 7).unwrap();
        let x = [0.6];
        let clean = p.clean_trajectory(&x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 1000;
        let mut mean = DVector::zeros(p.grid().len());
        for _ in 0..n {
            mean += p.query_trajectory(&x, &mut rng).unwrap().coeffs();
        }
        mean /= n as f64;
        // per-coordinate deviation bounded by 3·std_coord/√n; the fit is a
        // linear map of the samples so coordinate stds are bounded by
        // ‖(K+rI)^{-1}‖ columns; use a conservative global bound
        let tol = 3.0 * p.noise().std / (n as f64).sqrt() * 100.0;
        assert!((mean - clean.coeffs()).amax() < tol);
    }

    #[test]
    fn truth_weights_match_inner_product_path() {
        let p = SyntheticProblem::new(BenchmarkName::Gp, 7).unwrap();
        for phase in 1..=3 {
            for x in [[0.05], [0.42], [0.98]] {
                let via_weights = p.true_objective(&x, phase).unwrap();
                let traj = p.clean_trajectory(&x).unwrap();
                let via_inner = p.phase_objective(phase).unwrap().combined.inner(&traj).unwrap();
                assert_relative_eq!(via_weights, via_inner, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn partial_and_full_objectives_agree() {
        // ⟨w, Ξ*f⟩ equals ⟨Ξw, f⟩
        let p = SyntheticProblem::new(BenchmarkName::Eggholder, 7).unwrap();
        let obj = p.phase_objective(1).unwrap();
        for x in [[-400.0], [0.0], [333.0]] {
            let traj = p.clean_trajectory(&x).unwrap();
            let full = obj.combined.inner(&traj).unwrap();
            let partial: f64 = obj
                .functionals
                .iter()
                .zip(&obj.weights)
                .map(|(xi, w)| w * xi.inner(&traj).unwrap())
                .sum();
            assert!((full - partial).abs() <= 1e-8 * (1.0 + full.abs()));
        }
    }

    #[test]
    fn fit_is_lipschitz_in_sample_noise() {
        let p = SyntheticProblem::new(BenchmarkName::Gp, 7).unwrap();
        let g = p.grid();
        let samples = p.operator().trajectory(&[0.3], g.points());
        let base = g.fit_from_samples(&samples).unwrap();
        let op_bound = {
            let n = g.len();
            let reg = g.gram().clone() + DMatrix::identity(n, n) * g.fit_reg();
            let inv = reg.try_inverse().unwrap();
            inv.symmetric_eigen().eigenvalues.amax()
        };
        let delta = 0.37;
        let mut bumped = samples.clone();
        bumped[13] += delta;
        let fit2 = g.fit_from_samples(&bumped).unwrap();
        let diff = (fit2.coeffs() - base.coeffs()).amax();
        assert!(diff <= op_bound * delta + 1e-12);
    }

    #[test]
    fn oracle_dominates_random_points() {
        let p = SyntheticProblem::new(BenchmarkName::Shubert, 7).unwrap();
        let (xstar, fstar) = p.oracle_optimum(1).unwrap();
        assert!(p.x_domain().contains(&xstar));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x = [-10.0 + 20.0 * rng.random::<f64>()];
            assert!(p.true_objective(&x, 1).unwrap() <= fstar + 1e-9);
        }
    }

    #[test]
    fn oracle_stable_under_refinement() {
        let p = SyntheticProblem::new(BenchmarkName::Gp, 7).unwrap();
        let (_, coarse) = p.oracle_optimum(1).unwrap();
        let (_, fine) = p.oracle_scan(1, 20_001);
        assert!((fine - coarse).abs() <= 0.005 * coarse.abs().max(1e-9));
    }
}
