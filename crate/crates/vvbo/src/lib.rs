//! Bayesian optimization of black-box operators with structured
//! (vector-valued) measurements.
//!
//! The crate models an unknown operator `f : X -> Y` into a Hilbert space of
//! trajectories, observed through a known linear measurement operator
//! `M : Y -> M`. It provides:
//!
//! - scalar kernels and Gram assembly ([`kernel`]),
//! - a grid-based representation of the output space with trajectory fitting
//!   and linear-functional representers ([`hilbert`]),
//! - measurement operators and the induced operator `B_M = M B M*` with its
//!   truncated spectrum ([`measurement`]),
//! - the measurement-space kernel ridge regression posterior for separable
//!   operator-valued kernels, including log-determinants and confidence
//!   radii ([`posterior`]),
//! - UCB acquisition and the sequential optimization loops ([`acquisition`]),
//! - the comparison baselines ([`baselines`]),
//! - a synthetic benchmark suite with phase schedules and brute-force regret
//!   oracles ([`benchmarks`]),
//! - a config-driven, seeded experiment harness with CSV outputs
//!   ([`harness`]), also exposed through the `vvbo` CLI.

pub mod error;
pub mod kernel;
pub mod linalg;
pub mod hilbert;
pub mod measurement;
pub mod posterior;
pub mod trace;
pub mod acquisition;
pub mod baselines;
pub mod benchmarks;
pub mod harness;
pub mod seed;

pub use error::{Result, VvboError};
pub use hilbert::{combine_functionals, Functional, HilbertVector, OutputGrid};
pub use kernel::{BoxDomain, KernelFamily, MaternNu, ScalarKernel};
pub use measurement::{FunctionalRep, InducedSpectrum, MeasurementOperator, TruncationPolicy};
pub use posterior::{representer_oracle, PosteriorHyperparams, PosteriorSnapshot, PosteriorState};
pub use acquisition::{
    maximize_acquisition, run_lipschitz_vvbo, run_tv_vvbo, run_vvbo, ucb_score,
    AcquisitionOptimizer, LinearObjective, LipschitzObjective, MeasuredProblem, Objective,
    ObjectiveSchedule, SchedulePhase,
};
pub use baselines::{
    concat_traces, run_bo, run_ctbo, run_ffbo, run_mtbo, run_rbo, run_rmtbo, AugmentedKernel,
    BaselineKernel, RetrainedSegment, ScalarGp, ScalarPhase, ScalarPhaseProblem,
};
pub use benchmarks::{
    BenchmarkName, FunctionalSpec, NoiseModel, PhaseObjective, PhaseSchedule, PhaseSpec,
    SyntheticProblem, TestOperator,
};
pub use seed::derive_seed;
pub use trace::{IterationRecord, RegretTrace};
