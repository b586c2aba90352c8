//! Config-driven experiment runner: seeded multi-run execution, per-run CSV
//! traces, mean/std aggregation, long-format plot data, and a manifest of
//! every resolved parameter.

pub mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    run_tv_vvbo, LinearObjective, MeasuredProblem, ObjectiveSchedule, SchedulePhase,
};
use crate::baselines::{
    run_bo, run_ctbo, run_ffbo, run_mtbo, run_rbo, run_rmtbo, AugmentedKernel, RetrainedSegment,
    ScalarPhase, ScalarPhaseProblem,
};
use crate::benchmarks::SyntheticProblem;
use crate::error::{Result, VvboError};
use crate::hilbert::Functional;
use crate::kernel::BoxDomain;
use crate::measurement::{FunctionalRep, InducedSpectrum, MeasurementOperator};
use crate::posterior::{PosteriorHyperparams, PosteriorState};
use crate::seed::derive_seed;
use crate::trace::{IterationRecord, RegretTrace};

pub use config::{
    BetaConfig, ExperimentConfig, FunctionalConfig, KernelConfig, MeasurementConfig, Method,
    Observation, OptimizerConfig, ResolvedConfig, TruncationConfig, SCHEMA_VERSION,
};

/// Adapter exposing a benchmark through a measurement operator as the
/// φ-coordinate observation stream the posterior consumes.
pub struct MeasuredBenchmark {
    problem: Arc<SyntheticProblem>,
    measurement: MeasurementOperator,
    spectrum: Arc<InducedSpectrum>,
}

impl MeasuredBenchmark {
    pub fn new(
        problem: Arc<SyntheticProblem>,
        measurement: MeasurementOperator,
        spectrum: Arc<InducedSpectrum>,
    ) -> Self {
        MeasuredBenchmark {
            problem,
            measurement,
            spectrum,
        }
    }

    pub fn spectrum(&self) -> &Arc<InducedSpectrum> {
        &self.spectrum
    }

    pub fn measurement(&self) -> &MeasurementOperator {
        &self.measurement
    }
}

impl MeasuredProblem for MeasuredBenchmark {
    fn domain(&self) -> &BoxDomain {
        self.problem.x_domain()
    }

    fn query(&self, x: &[f64], rng: &mut ChaCha8Rng) -> Result<DVector<f64>> {
        let traj = self.problem.query_trajectory(x, rng)?;
        Ok(self.spectrum.to_phi_coords(&self.measurement.measure(&traj)?))
    }
}

/// Adapter exposing a benchmark's noisy scalar objective values.
pub struct ScalarBenchmark {
    problem: Arc<SyntheticProblem>,
}

impl ScalarPhaseProblem for ScalarBenchmark {
    fn domain(&self) -> &BoxDomain {
        self.problem.x_domain()
    }

    fn query_scalar(&self, x: &[f64], phase_label: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
        self.problem.query_scalar(x, phase_label, rng)
    }
}

fn truth_fn(
    problem: &Arc<SyntheticProblem>,
    phase: usize,
) -> Arc<dyn Fn(&[f64]) -> f64 + Send + Sync> {
    let p = Arc::clone(problem);
    Arc::new(move |x: &[f64]| p.true_objective(x, phase).expect("valid phase"))
}

fn phase_beta(resolved: &ResolvedConfig, table_beta: f64) -> Option<f64> {
    match resolved.beta {
        BetaConfig::Table => Some(table_beta),
        BetaConfig::Fixed { value } => Some(value),
        BetaConfig::Theoretical { .. } => None,
    }
}

fn hyper_for(resolved: &ResolvedConfig) -> Result<PosteriorHyperparams> {
    match resolved.beta {
        BetaConfig::Theoretical { gamma, sigma, zeta } => PosteriorHyperparams::with_theoretical(
            resolved.lambda,
            gamma,
            sigma.unwrap_or(resolved.noise_std),
            zeta,
        ),
        _ => PosteriorHyperparams::new(resolved.lambda),
    }
}

/// Custom projection basis from the config's measurement block: the built
/// functionals plus the surrogate-objective weights over them (uniform when
/// unspecified). `None` when the config leaves the measurement implicit.
fn custom_measurement(
    problem: &SyntheticProblem,
    resolved: &ResolvedConfig,
) -> Result<Option<(Vec<Functional>, Vec<f64>)>> {
    let Some(mc) = &resolved.measurement else {
        return Ok(None);
    };
    let Some(fns) = &mc.functionals else {
        return Ok(None);
    };
    let grid = problem.grid();
    let built: Vec<Functional> = fns
        .iter()
        .map(|fc| match fc {
            FunctionalConfig::PointEval { t } => grid.point_eval_functional(*t),
            FunctionalConfig::IntegralWeights { weights } => grid.integral_functional(weights),
            FunctionalConfig::Coefficients { coeffs } => grid.from_coeffs(coeffs.clone()),
        })
        .collect::<Result<_>>()?;
    let weights = match &mc.objective_weights {
        Some(w) => {
            if w.len() != built.len() {
                return Err(VvboError::config(format!(
                    "objective_weights has {} entries for {} functionals",
                    w.len(),
                    built.len()
                )));
            }
            w.clone()
        }
        None => vec![1.0 / built.len() as f64; built.len()],
    };
    Ok(Some((built, weights)))
}

/// Point-evaluation indices requested by custom measurement descriptors;
/// these must be pinned onto the output grid.
fn custom_grid_points(resolved: &ResolvedConfig) -> Vec<f64> {
    resolved
        .measurement
        .iter()
        .flat_map(|mc| mc.functionals.iter().flatten())
        .filter_map(|fc| match fc {
            FunctionalConfig::PointEval { t } => Some(*t),
            _ => None,
        })
        .collect()
}

/// Pre-resolved per-method run plan shared by all runs of an experiment.
enum MethodPlan {
    /// vvbo (full or partial) and mtbo share the measured-loop machinery.
    Measured {
        adapter: MeasuredBenchmark,
        schedule: ObjectiveSchedule,
        hyper: PosteriorHyperparams,
        stale_objective: bool, // mtbo
    },
    Retrained {
        segments: Vec<(MeasuredBenchmark, SchedulePhase)>,
        hyper: PosteriorHyperparams,
    },
    Scalar {
        phases: Vec<ScalarPhase>,
        reset: bool, // rbo
    },
    Contextual {
        phases: Vec<ScalarPhase>,
        kernel: AugmentedKernel,
        frozen: bool, // ffbo
    },
}

struct ExperimentPlan {
    problem: Arc<SyntheticProblem>,
    resolved: ResolvedConfig,
    plan: MethodPlan,
}

impl ExperimentPlan {
    fn new(resolved: ResolvedConfig) -> Result<Self> {
        let problem = Arc::new(SyntheticProblem::with_options(
            resolved.benchmark,
            resolved.benchmark_seed,
            resolved.n_grid,
            &custom_grid_points(&resolved),
        )?);
        let plan = build_method_plan(&problem, &resolved)?;
        Ok(ExperimentPlan {
            problem,
            resolved,
            plan,
        })
    }

    fn run_single(&self, run_index: usize) -> Result<RegretTrace> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            self.resolved.master_seed,
            run_index as u64,
            "run",
        ));
        let opt = &self.resolved.optimizer;
        match &self.plan {
            MethodPlan::Measured {
                adapter,
                schedule,
                hyper,
                stale_objective,
            } => {
                let mut state = PosteriorState::new(
                    self.resolved.kernel.clone(),
                    Arc::clone(adapter.spectrum()),
                    hyper.clone(),
                )?;
                if *stale_objective {
                    run_mtbo(adapter, schedule, &mut state, opt, &mut rng)
                } else {
                    run_tv_vvbo(adapter, schedule, &mut state, opt, &mut rng)
                }
            }
            MethodPlan::Retrained { segments, hyper } => {
                let segs = segments
                    .iter()
                    .map(|(adapter, phase)| {
                        Ok(RetrainedSegment {
                            problem: adapter as &dyn MeasuredProblem,
                            state: PosteriorState::new(
                                self.resolved.kernel.clone(),
                                Arc::clone(adapter.spectrum()),
                                hyper.clone(),
                            )?,
                            phase: phase.clone(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                run_rmtbo(segs, opt, &mut rng)
            }
            MethodPlan::Scalar { phases, reset } => {
                let scalar = ScalarBenchmark {
                    problem: Arc::clone(&self.problem),
                };
                if *reset {
                    run_rbo(
                        &scalar,
                        phases,
                        self.resolved.kernel.clone(),
                        self.resolved.lambda,
                        opt,
                        &mut rng,
                    )
                } else {
                    run_bo(
                        &scalar,
                        phases,
                        self.resolved.kernel.clone(),
                        self.resolved.lambda,
                        opt,
                        &mut rng,
                    )
                }
            }
            MethodPlan::Contextual {
                phases,
                kernel,
                frozen,
            } => {
                let scalar = ScalarBenchmark {
                    problem: Arc::clone(&self.problem),
                };
                if *frozen {
                    run_ffbo(
                        &scalar,
                        phases,
                        kernel.clone(),
                        self.resolved.lambda,
                        opt,
                        &mut rng,
                    )
                } else {
                    run_ctbo(
                        &scalar,
                        phases,
                        kernel.clone(),
                        self.resolved.lambda,
                        opt,
                        &mut rng,
                    )
                }
            }
        }
    }
}

fn build_method_plan(
    problem: &Arc<SyntheticProblem>,
    resolved: &ResolvedConfig,
) -> Result<MethodPlan> {
    let iters = resolved.iterations_per_phase;
    match resolved.method {
        Method::Vvbo | Method::Mtbo => {
            let custom = custom_measurement(problem, resolved)?;
            let measurement = match (resolved.method, resolved.observation) {
                (Method::Vvbo, Observation::Full) => MeasurementOperator::identity(problem.grid()),
                _ => {
                    let basis = match &custom {
                        Some((fns, _)) => fns.clone(),
                        None => problem.phase_objective(1)?.functionals.clone(),
                    };
                    MeasurementOperator::projection(&basis)?
                }
            };
            let spectrum = Arc::new(measurement.induced_identity(resolved.truncation)?);
            let mut phases = Vec::with_capacity(resolved.phases);
            for p in 1..=resolved.phases {
                let obj = problem.phase_objective(p)?;
                // mtbo scores with the stale phase-one functional; build
                // every phase from it so the schedule is explicit
                let scored = if resolved.method == Method::Mtbo {
                    problem.phase_objective(1)?
                } else {
                    obj
                };
                let (mbar, m_norm) = if measurement.is_identity() {
                    measurement
                        .functional_coords(FunctionalRep::OutputFunctional(&scored.combined), &spectrum)?
                } else {
                    let weights: &[f64] = match &custom {
                        Some((_, w)) => w,
                        None => &scored.weights,
                    };
                    measurement.functional_coords(FunctionalRep::Weights(weights), &spectrum)?
                };
                let (_, optimum) = problem.oracle_optimum(p)?;
                phases.push(SchedulePhase {
                    label: p,
                    iterations: iters,
                    objective: LinearObjective::new(mbar, m_norm)?,
                    beta_override: phase_beta(resolved, obj.beta),
                    truth: truth_fn(problem, p),
                    optimum,
                });
            }
            let adapter = MeasuredBenchmark::new(Arc::clone(problem), measurement, spectrum);
            Ok(MethodPlan::Measured {
                adapter,
                schedule: ObjectiveSchedule { phases },
                hyper: hyper_for(resolved)?,
                stale_objective: resolved.method == Method::Mtbo,
            })
        }
        Method::Rmtbo => {
            let custom = custom_measurement(problem, resolved)?;
            let mut segments = Vec::with_capacity(resolved.phases);
            for p in 1..=resolved.phases {
                let obj = problem.phase_objective(p)?;
                let basis = match &custom {
                    Some((fns, _)) => fns.clone(),
                    None => obj.functionals.clone(),
                };
                let measurement = MeasurementOperator::projection(&basis)?;
                let spectrum = Arc::new(measurement.induced_identity(resolved.truncation)?);
                let weights: &[f64] = match &custom {
                    Some((_, w)) => w,
                    None => &obj.weights,
                };
                let (mbar, m_norm) =
                    measurement.functional_coords(FunctionalRep::Weights(weights), &spectrum)?;
                let (_, optimum) = problem.oracle_optimum(p)?;
                let phase = SchedulePhase {
                    label: p,
                    iterations: iters,
                    objective: LinearObjective::new(mbar, m_norm)?,
                    beta_override: phase_beta(resolved, obj.beta),
                    truth: truth_fn(problem, p),
                    optimum,
                };
                segments.push((
                    MeasuredBenchmark::new(Arc::clone(problem), measurement, spectrum),
                    phase,
                ));
            }
            Ok(MethodPlan::Retrained {
                segments,
                hyper: hyper_for(resolved)?,
            })
        }
        Method::Bo | Method::Rbo | Method::Ctbo | Method::Ffbo => {
            let contextual = matches!(resolved.method, Method::Ctbo | Method::Ffbo);
            let mut phases = Vec::with_capacity(resolved.phases);
            for p in 1..=resolved.phases {
                let obj = problem.phase_objective(p)?;
                let beta = phase_beta(resolved, obj.beta).expect("scalar baselines use fixed beta");
                let (_, optimum) = problem.oracle_optimum(p)?;
                phases.push(ScalarPhase {
                    label: p,
                    iterations: iters,
                    beta,
                    truth: truth_fn(problem, p),
                    optimum,
                    context: contextual.then(|| obj.combined.canonical_coords()),
                });
            }
            if contextual {
                let kernel = AugmentedKernel::with_identity_context(
                    resolved.kernel.clone(),
                    problem.grid().rank(),
                )?;
                Ok(MethodPlan::Contextual {
                    phases,
                    kernel,
                    frozen: resolved.method == Method::Ffbo,
                })
            } else {
                Ok(MethodPlan::Scalar {
                    phases,
                    reset: resolved.method == Method::Rbo,
                })
            }
        }
    }
}

/// Everything an experiment produced on disk, plus the in-memory traces.
pub struct ExperimentOutputs {
    pub out_dir: PathBuf,
    pub traces: Vec<Option<RegretTrace>>,
    pub failures: Vec<(usize, String)>,
}

/// Runs all seeds of an experiment, writing per-run traces, the aggregate
/// table, plot data, and the manifest into `out_dir`. Failed runs leave a
/// marker file and do not abort the remaining runs.
pub fn run_experiment(
    resolved: &ResolvedConfig,
    out_dir: &Path,
    workers: usize,
) -> Result<ExperimentOutputs> {
    fs::create_dir_all(out_dir)?;
    let plan = ExperimentPlan::new(resolved.clone())?;

    let indices: Vec<usize> = (0..resolved.n_runs).collect();
    let results: Vec<std::result::Result<RegretTrace, String>> = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| VvboError::config(format!("worker pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            indices
                .par_iter()
                .map(|&i| plan.run_single(i).map_err(|e| e.to_string()))
                .collect()
        })
    } else {
        indices
            .iter()
            .map(|&i| plan.run_single(i).map_err(|e| e.to_string()))
            .collect()
    };

    let dim = resolved.benchmark.input_dim();
    let mut traces: Vec<Option<RegretTrace>> = Vec::with_capacity(resolved.n_runs);
    let mut failures = Vec::new();
    for (i, res) in results.into_iter().enumerate() {
        match res {
            Ok(trace) => {
                write_trace_csv(&out_dir.join(trace_file_name(i)), i, &trace, dim)?;
                traces.push(Some(trace));
            }
            Err(msg) => {
                fs::write(out_dir.join(format!("run_{i:03}.failed")), &msg)?;
                failures.push((i, msg));
                traces.push(None);
            }
        }
    }

    let complete: Vec<&RegretTrace> = traces.iter().flatten().collect();
    let aggregate = aggregate_traces(&complete)?;
    write_aggregate_csv(&out_dir.join("aggregate.csv"), &aggregate)?;
    emit_plotdata(
        &out_dir.join("plotdata.csv"),
        resolved.method.as_str(),
        resolved.benchmark.as_str(),
        resolved.method.regime(resolved.observation),
        &aggregate,
    )?;
    write_manifest(&out_dir.join("manifest.json"), resolved, &failures)?;

    Ok(ExperimentOutputs {
        out_dir: out_dir.to_path_buf(),
        traces,
        failures,
    })
}

pub fn trace_file_name(run_index: usize) -> String {
    format!("trace_run_{run_index:03}.csv")
}

/// Recomputes the regret columns from raw objective values and per-phase
/// optima: cumulative_t = Σ_{s<=t} (F*_{phase(s)} − F(x_s)), simple regret is
/// the per-phase best-so-far gap.
pub fn compute_regret(
    values: &[(usize, f64)],
    optima: &BTreeMap<usize, f64>,
) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(values.len());
    let mut cumulative = 0.0;
    let mut best = f64::NEG_INFINITY;
    let mut current_phase = usize::MAX;
    for (phase, f) in values {
        let fstar = optima.get(phase).ok_or_else(|| {
            VvboError::config(format!("no oracle optimum recorded for phase {phase}"))
        })?;
        if *phase != current_phase {
            current_phase = *phase;
            best = f64::NEG_INFINITY;
        }
        best = best.max(*f);
        cumulative += fstar - f;
        out.push((fstar - best, cumulative));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// CSV input/output
// ---------------------------------------------------------------------------

fn fmt(v: f64) -> String {
    // shortest round-trip decimal form; parses back bit-exactly
    format!("{v}")
}

/// Writes one run's trace. Columns: run, iteration, phase, x0..x{d-1},
/// objective, simple_regret, cumulative_regret, beta, acquisition,
/// posterior_size, wall_clock_ms.
pub fn write_trace_csv(path: &Path, run_index: usize, trace: &RegretTrace, dim: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["run".to_string(), "iteration".into(), "phase".into()];
    for a in 0..dim {
        header.push(format!("x{a}"));
    }
    header.extend(
        [
            "objective",
            "simple_regret",
            "cumulative_regret",
            "beta",
            "acquisition",
            "posterior_size",
            "wall_clock_ms",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for r in &trace.records {
        let mut rec = vec![
            run_index.to_string(),
            r.iteration.to_string(),
            r.phase.to_string(),
        ];
        for a in 0..dim {
            rec.push(fmt(r.x[a]));
        }
        rec.push(fmt(r.objective));
        rec.push(fmt(r.simple_regret));
        rec.push(fmt(r.cumulative_regret));
        rec.push(fmt(r.beta));
        rec.push(fmt(r.acquisition));
        rec.push(r.posterior_size.to_string());
        rec.push(fmt(r.wall_clock_ms));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trace written by [`write_trace_csv`].
pub fn read_trace_csv(path: &Path) -> Result<RegretTrace> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let dim = header.iter().filter(|h| h.starts_with('x')).count();
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| VvboError::config(format!("trace file missing column '{name}'")))
    };
    let (ci, cp) = (col("iteration")?, col("phase")?);
    let cx0 = col("x0")?;
    let (co, cs, cc) = (col("objective")?, col("simple_regret")?, col("cumulative_regret")?);
    let (cb, ca, cn, cw) = (
        col("beta")?,
        col("acquisition")?,
        col("posterior_size")?,
        col("wall_clock_ms")?,
    );
    let parse = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|e| VvboError::config(format!("bad float '{s}': {e}")))
    };
    let mut trace = RegretTrace::default();
    for rec in r.records() {
        let rec = rec?;
        trace.records.push(IterationRecord {
            iteration: rec[ci].parse().map_err(|_| VvboError::config("bad iteration"))?,
            phase: rec[cp].parse().map_err(|_| VvboError::config("bad phase"))?,
            x: (0..dim).map(|a| parse(&rec[cx0 + a])).collect::<Result<_>>()?,
            objective: parse(&rec[co])?,
            simple_regret: parse(&rec[cs])?,
            cumulative_regret: parse(&rec[cc])?,
            beta: parse(&rec[cb])?,
            acquisition: parse(&rec[ca])?,
            posterior_size: rec[cn].parse().map_err(|_| VvboError::config("bad size"))?,
            wall_clock_ms: parse(&rec[cw])?,
        });
    }
    Ok(trace)
}

/// Dumps trajectories as CSV rows of grid samples (one row per trajectory,
/// one column per grid point).
pub fn write_trajectories_csv(path: &Path, trajectories: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if let Some(first) = trajectories.first() {
        let header: Vec<String> = (0..first.len()).map(|j| format!("t{j}")).collect();
        w.write_record(&header)?;
        for row in trajectories {
            if row.len() != first.len() {
                return Err(VvboError::invalid("trajectory rows must share one grid"));
            }
            let rec: Vec<String> = row.iter().map(|v| fmt(*v)).collect();
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads trajectories written by [`write_trajectories_csv`].
pub fn read_trajectories_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row: Result<Vec<f64>> = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| VvboError::config(format!("bad trajectory value '{s}': {e}")))
            })
            .collect();
        out.push(row?);
    }
    Ok(out)
}

/// Mean/std of the regret metrics across runs, one row per iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub iteration: usize,
    pub phase: usize,
    pub simple_mean: f64,
    pub simple_std: f64,
    pub cumulative_mean: f64,
    pub cumulative_std: f64,
    pub n_runs: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Per-iteration mean and sample standard deviation across runs.
pub fn aggregate_traces(traces: &[&RegretTrace]) -> Result<Vec<AggregateRow>> {
    let Some(first) = traces.first() else {
        return Ok(Vec::new());
    };
    let horizon = first.len();
    if traces.iter().any(|t| t.len() != horizon) {
        return Err(VvboError::config(
            "cannot aggregate traces with different horizons",
        ));
    }
    let mut rows = Vec::with_capacity(horizon);
    for i in 0..horizon {
        let simple: Vec<f64> = traces.iter().map(|t| t.records[i].simple_regret).collect();
        let cumulative: Vec<f64> = traces
            .iter()
            .map(|t| t.records[i].cumulative_regret)
            .collect();
        let (sm, ss) = mean_std(&simple);
        let (cm, cs) = mean_std(&cumulative);
        rows.push(AggregateRow {
            iteration: first.records[i].iteration,
            phase: first.records[i].phase,
            simple_mean: sm,
            simple_std: ss,
            cumulative_mean: cm,
            cumulative_std: cs,
            n_runs: traces.len(),
        });
    }
    Ok(rows)
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "iteration",
        "phase",
        "simple_mean",
        "simple_std",
        "cumulative_mean",
        "cumulative_std",
        "n_runs",
    ])?;
    for r in rows {
        w.write_record(&[
            r.iteration.to_string(),
            r.phase.to_string(),
            fmt(r.simple_mean),
            fmt(r.simple_std),
            fmt(r.cumulative_mean),
            fmt(r.cumulative_std),
            r.n_runs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_aggregate_csv(path: &Path) -> Result<Vec<AggregateRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// Long-format plot data: one row per (iteration, metric) with columns
/// (method, benchmark, regime, iteration, metric, mean, std).
pub fn emit_plotdata(
    path: &Path,
    method: &str,
    benchmark: &str,
    regime: &str,
    rows: &[AggregateRow],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "benchmark", "regime", "iteration", "metric", "mean", "std"])?;
    for r in rows {
        w.write_record(&[
            method.to_string(),
            benchmark.to_string(),
            regime.to_string(),
            r.iteration.to_string(),
            "simple_regret".to_string(),
            fmt(r.simple_mean),
            fmt(r.simple_std),
        ])?;
        w.write_record(&[
            method.to_string(),
            benchmark.to_string(),
            regime.to_string(),
            r.iteration.to_string(),
            "cumulative_regret".to_string(),
            fmt(r.cumulative_mean),
            fmt(r.cumulative_std),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// All resolved parameters of a run, written next to its outputs. Every
/// tunable the runner consumed appears here with its resolved value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub schema_version: u32,
    pub benchmark: String,
    pub method: String,
    pub observation: String,
    pub regime: String,
    pub phases: usize,
    pub iterations_per_phase: usize,
    pub kernel_family: String,
    pub kernel_length_scales: Vec<f64>,
    pub kernel_variance_scale: f64,
    pub lambda: f64,
    pub noise_std: f64,
    pub n_grid: usize,
    pub fit_reg: f64,
    pub truncation: String,
    pub beta_source: String,
    pub optimizer: String,
    pub n_runs: usize,
    pub master_seed: u64,
    pub benchmark_seed: u64,
    pub failed_runs: Vec<usize>,
}

fn write_manifest(
    path: &Path,
    resolved: &ResolvedConfig,
    failures: &[(usize, String)],
) -> Result<()> {
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        schema_version: SCHEMA_VERSION,
        benchmark: resolved.benchmark.as_str().to_string(),
        method: resolved.method.as_str().to_string(),
        observation: match resolved.observation {
            Observation::Full => "full".into(),
            Observation::Partial => "partial".into(),
        },
        regime: resolved.method.regime(resolved.observation).to_string(),
        phases: resolved.phases,
        iterations_per_phase: resolved.iterations_per_phase,
        kernel_family: format!("{:?}", resolved.kernel.family()),
        kernel_length_scales: resolved.kernel.length_scales().to_vec(),
        kernel_variance_scale: resolved.kernel.variance_scale(),
        lambda: resolved.lambda,
        noise_std: resolved.noise_std,
        n_grid: resolved.n_grid,
        fit_reg: crate::hilbert::DEFAULT_FIT_REG,
        truncation: format!("{:?}", resolved.truncation),
        beta_source: format!("{:?}", resolved.beta),
        optimizer: format!("{:?}", resolved.optimizer),
        n_runs: resolved.n_runs,
        master_seed: resolved.master_seed,
        benchmark_seed: resolved.benchmark_seed,
        failed_runs: failures.iter().map(|(i, _)| *i).collect(),
    };
    fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Re-aggregates a finished experiment directory from its per-run CSVs,
/// rewriting aggregate.csv and plotdata.csv.
pub fn reaggregate_dir(dir: &Path) -> Result<Vec<AggregateRow>> {
    let manifest = read_manifest(&dir.join("manifest.json"))?;
    let mut traces = Vec::new();
    for i in 0..manifest.n_runs {
        let path = dir.join(trace_file_name(i));
        if path.exists() {
            traces.push(read_trace_csv(&path)?);
        }
    }
    if traces.is_empty() {
        return Err(VvboError::config(format!(
            "no trace files found under {}",
            dir.display()
        )));
    }
    let refs: Vec<&RegretTrace> = traces.iter().collect();
    let rows = aggregate_traces(&refs)?;
    write_aggregate_csv(&dir.join("aggregate.csv"), &rows)?;
    emit_plotdata(
        &dir.join("plotdata.csv"),
        &manifest.method,
        &manifest.benchmark,
        &manifest.regime,
        &rows,
    )?;
    Ok(rows)
}
