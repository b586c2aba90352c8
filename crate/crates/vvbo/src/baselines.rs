//! Comparison methods: scalar GP-UCB (BO) and its retrained variant (rBO),
//! multi-task BO on fixed finite-dimensional measurements (MTBO/rMTBO), and
//! contextual BO over an augmented input space (CTBO), with FFBO as its
//! frozen-context special case.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use crate::acquisition::{
    maximize_acquisition, run_tv_vvbo, AcquisitionOptimizer, MeasuredProblem, ObjectiveSchedule,
    SchedulePhase,
};
use crate::error::{Result, VvboError};
use crate::kernel::{BoxDomain, ScalarKernel};
use crate::linalg::GrowingCholesky;
use crate::posterior::PosteriorState;
use crate::trace::{IterationRecord, RegretTrace};

/// Scalar kernel over an augmented input (x, m): the base kernel on x times
/// ⟨m₁, B m₂⟩ on context vectors in canonical output coordinates.
#[derive(Debug, Clone)]
pub struct AugmentedKernel {
    base: ScalarKernel,
    b: DMatrix<f64>,
    input_dim: usize,
}

impl AugmentedKernel {
    pub fn new(base: ScalarKernel, b: DMatrix<f64>) -> Result<Self> {
        if b.nrows() != b.ncols() || b.nrows() == 0 {
            return Err(VvboError::invalid("context operator B must be square"));
        }
        if (&b - b.transpose()).amax() > 1e-10 * b.amax().max(1.0) {
            return Err(VvboError::invalid("context operator B must be symmetric"));
        }
        let input_dim = base.dim();
        Ok(AugmentedKernel { base, b, input_dim })
    }

    /// B = I on `context_dim` canonical directions.
    pub fn with_identity_context(base: ScalarKernel, context_dim: usize) -> Result<Self> {
        let b = DMatrix::identity(context_dim, context_dim);
        Self::new(base, b)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn context_dim(&self) -> usize {
        self.b.nrows()
    }

    /// Evaluates K̃((x₁,m₁),(x₂,m₂)) on concatenated (x, m) points.
    pub fn eval(&self, p1: &[f64], p2: &[f64]) -> f64 {
        let d = self.input_dim;
        let x1 = &p1[..d];
        let x2 = &p2[..d];
        let m1 = DVector::from_column_slice(&p1[d..]);
        let m2 = DVector::from_column_slice(&p2[d..]);
        self.base.eval_trusted(x1, x2) * m1.dot(&(&self.b * m2))
    }
}

/// Kernel used by the scalar GP surrogates.
#[derive(Debug, Clone)]
pub enum BaselineKernel {
    Plain(ScalarKernel),
    Augmented(AugmentedKernel),
}

impl BaselineKernel {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            BaselineKernel::Plain(k) => k.eval_trusted(a, b),
            BaselineKernel::Augmented(k) => k.eval(a, b),
        }
    }

    fn point_dim(&self) -> Option<usize> {
        match self {
            BaselineKernel::Plain(k) => Some(k.dim()),
            // augmented points are (x, m); m length is the context dimension
            BaselineKernel::Augmented(k) => Some(k.input_dim() + k.context_dim()),
        }
    }
}

/// Standard scalar-valued GP regression state with a ridge regularizer.
#[derive(Debug, Clone)]
pub struct ScalarGp {
    kernel: BaselineKernel,
    lambda: f64,
    points: Vec<Vec<f64>>,
    y: Vec<f64>,
    gram: Vec<f64>,
    factor: GrowingCholesky,
    alpha: DVector<f64>,
    log_det: f64,
    since_refactor: usize,
}

const REFACTOR_EVERY: usize = 32;

impl ScalarGp {
    pub fn new(kernel: BaselineKernel, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(VvboError::invalid("lambda must be strictly positive"));
        }
        Ok(ScalarGp {
            kernel,
            lambda,
            points: Vec::new(),
            y: Vec::new(),
            gram: Vec::new(),
            factor: GrowingCholesky::new(),
            alpha: DVector::zeros(0),
            log_det: 0.0,
            since_refactor: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Drops all observations (phase re-initialization).
    pub fn reset(&mut self) {
        self.points.clear();
        self.y.clear();
        self.gram.clear();
        self.factor = GrowingCholesky::new();
        self.alpha = DVector::zeros(0);
        self.log_det = 0.0;
        self.since_refactor = 0;
    }

    fn cross(&self, x: &[f64]) -> Vec<f64> {
        self.points.iter().map(|p| self.kernel.eval(x, p)).collect()
    }

    pub fn update(&mut self, x: &[f64], y: f64) -> Result<()> {
        if let Some(d) = self.kernel.point_dim() {
            if x.len() != d {
                return Err(VvboError::DimensionMismatch {
                    expected: d,
                    got: x.len(),
                });
            }
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(VvboError::invalid("observations must be finite"));
        }
        let g = self.cross(x);
        let kxx = self.kernel.eval(x, x);
        let var = (kxx - self.factor.quad_form(&g)).max(0.0);
        self.log_det += (var / self.lambda).ln_1p();
        self.factor.extend(&g, kxx + self.lambda)?;
        self.gram.extend_from_slice(&g);
        self.gram.push(kxx);
        self.points.push(x.to_vec());
        self.y.push(y);
        self.since_refactor += 1;
        if self.since_refactor >= REFACTOR_EVERY {
            let t = self.len();
            let mut a = DMatrix::zeros(t, t);
            for i in 0..t {
                let start = i * (i + 1) / 2;
                for j in 0..=i {
                    a[(i, j)] = self.gram[start + j];
                    a[(j, i)] = self.gram[start + j];
                }
            }
            for i in 0..t {
                a[(i, i)] += self.lambda;
            }
            self.factor.refactor(&a)?;
            self.since_refactor = 0;
        }
        self.alpha = self.factor.solve(&self.y);
        Ok(())
    }

    /// Posterior mean and variance:
    /// mean = K_xX (K_XX + λI)^{-1} y, var = K(x,x) − K_xX (K_XX + λI)^{-1} K_Xx.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let kxx = self.kernel.eval(x, x);
        if self.is_empty() {
            return (0.0, kxx);
        }
        let g = self.cross(x);
        let mean: f64 = g.iter().zip(self.alpha.iter()).map(|(a, b)| a * b).sum();
        let var = (kxx - self.factor.quad_form(&g)).max(0.0);
        (mean, var)
    }
}

/// Phase description for the scalar baselines. `context` carries the
/// canonical coordinates of the phase functional for CTBO/FFBO.
#[derive(Clone)]
pub struct ScalarPhase {
    pub label: usize,
    pub iterations: usize,
    pub beta: f64,
    pub truth: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub optimum: f64,
    pub context: Option<DVector<f64>>,
}

/// Problem surface for methods that observe only scalar objective values.
pub trait ScalarPhaseProblem {
    fn domain(&self) -> &BoxDomain;
    /// Noisy observation of F_phase(x).
    fn query_scalar(&self, x: &[f64], phase_label: usize, rng: &mut ChaCha8Rng) -> Result<f64>;
}

/// Vanilla scalar GP-UCB over the phase objectives. The dataset persists
/// across phases even though the measured objective switches.
pub fn run_bo(
    problem: &dyn ScalarPhaseProblem,
    phases: &[ScalarPhase],
    kernel: ScalarKernel,
    lambda: f64,
    opt: &AcquisitionOptimizer,
    rng: &mut ChaCha8Rng,
) -> Result<RegretTrace> {
    let mut gp = ScalarGp::new(BaselineKernel::Plain(kernel), lambda)?;
    scalar_ucb_loop(problem, phases, &mut gp, opt, rng, false, ContextMode::None)
}

/// BO re-initialized at every phase boundary.
pub fn run_rbo(
    problem: &dyn ScalarPhaseProblem,
    phases: &[ScalarPhase],
    kernel: ScalarKernel,
    lambda: f64,
    opt: &AcquisitionOptimizer,
    rng: &mut ChaCha8Rng,
) -> Result<RegretTrace> {
    let mut gp = ScalarGp::new(BaselineKernel::Plain(kernel), lambda)?;
    scalar_ucb_loop(problem, phases, &mut gp, opt, rng, true, ContextMode::None)
}

/// Contextual BO: a scalar GP over (x, m) pairs where m is the canonical
/// representation of the current phase functional.
pub fn run_ctbo(
    problem: &dyn ScalarPhaseProblem,
    phases: &[ScalarPhase],
    kernel: AugmentedKernel,
    lambda: f64,
    opt: &AcquisitionOptimizer,
    rng: &mut ChaCha8Rng,
) -> Result<RegretTrace> {
    let mut gp = ScalarGp::new(BaselineKernel::Augmented(kernel), lambda)?;
    scalar_ucb_loop(problem, phases, &mut gp, opt, rng, false, ContextMode::PerPhase)
}

/// Function-on-function BO: CTBO with the context frozen at phase one while
/// observations remain the current-phase scalar objective.
pub fn run_ffbo(
    problem: &dyn ScalarPhaseProblem,
    phases: &[ScalarPhase],
    kernel: AugmentedKernel,
    lambda: f64,
    opt: &AcquisitionOptimizer,
    rng: &mut ChaCha8Rng,
) -> Result<RegretTrace> {
    let mut gp = ScalarGp::new(BaselineKernel::Augmented(kernel), lambda)?;
    scalar_ucb_loop(problem, phases, &mut gp, opt, rng, false, ContextMode::Frozen)
}

#[derive(Clone, Copy, PartialEq)]
enum ContextMode {
    None,
    PerPhase,
    Frozen,
}

fn scalar_ucb_loop(
    problem: &dyn ScalarPhaseProblem,
    phases: &[ScalarPhase],
    gp: &mut ScalarGp,
    opt: &AcquisitionOptimizer,
    rng: &mut ChaCha8Rng,
    reset_at_phase: bool,
    context_mode: ContextMode,
) -> Result<RegretTrace> {
    if phases.is_empty() {
        return Ok(RegretTrace::default());
    }
    let frozen_context = phases[0].context.clone();
    let mut trace = RegretTrace::default();
    let mut cumulative = 0.0;
    let mut t = 0usize;
    for (pi, phase) in phases.iter().enumerate() {
        if reset_at_phase && pi > 0 {
            gp.reset();
        }
        let context: Option<&DVector<f64>> = match context_mode {
            ContextMode::None => None,
            ContextMode::PerPhase => Some(phase.context.as_ref().ok_or_else(|| {
                VvboError::invalid("contextual baseline requires a phase context")
            })?),
            ContextMode::Frozen => Some(frozen_context.as_ref().ok_or_else(|| {
                VvboError::invalid("contextual baseline requires a phase context")
            })?),
        };
        let mut best_in_phase = f64::NEG_INFINITY;
        for _ in 0..phase.iterations {
            t += 1;
            let clock = std::time::Instant::now();
            let beta = phase.beta;
            let mut scorer = |x: &[f64]| {
                let point = augment(x, context);
                let (mean, var) = gp.predict(&point);
                mean + beta * var.sqrt()
            };
            let x = maximize_acquisition(opt, problem.domain(), &mut scorer, rng)?;
            let acquisition = scorer(&x);
            let y = problem.query_scalar(&x, phase.label, rng)?;
            let objective = (phase.truth)(&x);
            cumulative += phase.optimum - objective;
            best_in_phase = best_in_phase.max(objective);
            gp.update(&augment(&x, context), y)?;
            trace.records.push(IterationRecord {
                iteration: t,
                phase: phase.label,
                x,
                objective,
                simple_regret: phase.optimum - best_in_phase,
                cumulative_regret: cumulative,
                beta,
                acquisition,
                posterior_size: gp.len(),
                wall_clock_ms: clock.elapsed().as_secs_f64() * 1e3,
            });
        }
    }
    Ok(trace)
}

fn augment(x: &[f64], context: Option<&DVector<f64>>) -> Vec<f64> {
    match context {
        None => x.to_vec(),
        Some(m) => {
            let mut p = Vec::with_capacity(x.len() + m.len());
            p.extend_from_slice(x);
            p.extend(m.iter().copied());
            p
        }
    }
}

/// Multi-task BO: the vector-valued engine with the phase-one measurement
/// and scalarization kept for the whole run. Only the regret reference (and
/// the per-phase β) follows the schedule, so the method keeps optimizing the
/// stale objective after a switch.
pub fn run_mtbo(
    problem: &dyn MeasuredProblem,
    schedule: &ObjectiveSchedule,
    state: &mut PosteriorState,
    opt: &AcquisitionOptimizer,
    rng: &mut ChaCha8Rng,
) -> Result<RegretTrace> {
    if schedule.phases.is_empty() {
        return Ok(RegretTrace::default());
    }
    let stale = schedule.phases[0].objective.clone();
    let frozen = ObjectiveSchedule {
        phases: schedule
            .phases
            .iter()
            .map(|p| SchedulePhase {
                objective: stale.clone(),
                ..p.clone()
            })
            .collect(),
    };
    run_tv_vvbo(problem, &frozen, state, opt, rng)
}

/// One phase segment of a retrained multi-task run: its own measured
/// problem (the measurement operator changes with the phase), a fresh
/// posterior, and a single-phase schedule.
pub struct RetrainedSegment<'a> {
    pub problem: &'a dyn MeasuredProblem,
    pub state: PosteriorState,
    pub phase: SchedulePhase,
}

/// Retrained multi-task BO: re-initialized with the new measurement and
/// scalarization at every phase boundary.
pub fn run_rmtbo(
    segments: Vec<RetrainedSegment<'_>>,
    opt: &AcquisitionOptimizer,
    rng: &mut ChaCha8Rng,
) -> Result<RegretTrace> {
    let mut traces = Vec::with_capacity(segments.len());
    for mut seg in segments {
        let schedule = ObjectiveSchedule::constant(seg.phase);
        traces.push(run_tv_vvbo(seg.problem, &schedule, &mut seg.state, opt, rng)?);
    }
    Ok(concat_traces(traces))
}

/// Concatenates per-phase traces into one run: iteration numbering becomes
/// global and cumulative regret carries across segments.
pub fn concat_traces(traces: Vec<RegretTrace>) -> RegretTrace {
    let mut out = RegretTrace::default();
    let mut iter_offset = 0usize;
    let mut cum_offset = 0.0;
    for trace in traces {
        let last_cum = trace.final_cumulative_regret();
        for mut rec in trace.records {
            rec.iteration += iter_offset;
            rec.cumulative_regret += cum_offset;
            out.records.push(rec);
        }
        iter_offset = out.records.last().map_or(0, |r| r.iteration);
        cum_offset += last_cum;
    }
    out
}
