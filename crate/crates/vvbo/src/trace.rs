//! Per-iteration regret records produced by the optimization loops.

use serde::{Deserialize, Serialize};

/// One iteration of a sequential optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based global iteration index.
    pub iteration: usize,
    /// 1-based phase label from the schedule.
    pub phase: usize,
    /// Query point chosen at this iteration.
    pub x: Vec<f64>,
    /// Noise-free objective value F_phase(x_t).
    pub objective: f64,
    /// Per-phase best-so-far optimality gap.
    pub simple_regret: f64,
    /// Running sum of instantaneous gaps across the whole run.
    pub cumulative_regret: f64,
    /// Confidence parameter β_{t-1} used when scoring.
    pub beta: f64,
    /// Acquisition value at the chosen point.
    pub acquisition: f64,
    /// Number of observations in the surrogate after the update.
    pub posterior_size: usize,
    /// Informational only; excluded from determinism checks.
    pub wall_clock_ms: f64,
}

/// The full record of one optimization run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub records: Vec<IterationRecord>,
}

impl RegretTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Final cumulative regret, 0 for an empty trace.
    pub fn final_cumulative_regret(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cumulative_regret)
    }

    /// True when two traces agree on every field except wall-clock times.
    pub fn same_modulo_wall_clock(&self, other: &RegretTrace) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.iteration == b.iteration
                    && a.phase == b.phase
                    && a.x == b.x
                    && a.objective.to_bits() == b.objective.to_bits()
                    && a.simple_regret.to_bits() == b.simple_regret.to_bits()
                    && a.cumulative_regret.to_bits() == b.cumulative_regret.to_bits()
                    && a.beta.to_bits() == b.beta.to_bits()
                    && a.acquisition.to_bits() == b.acquisition.to_bits()
                    && a.posterior_size == b.posterior_size
            })
    }
}
