//! Experiment configuration: a versioned JSON document with benchmark
//! defaults filled in during resolution.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionOptimizer;
use crate::benchmarks::BenchmarkName;
use crate::error::{Result, VvboError};
use crate::kernel::{KernelFamily, MaternNu, ScalarKernel};
use crate::measurement::TruncationPolicy;

pub const SCHEMA_VERSION: u32 = 1;

/// Raw experiment config as parsed from JSON. Unset fields resolve to the
/// benchmark's table defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub benchmark: String,
    pub method: String,
    /// "full" or "partial"; only meaningful for vvbo.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations_per_phase: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement: Option<MeasurementConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<BetaConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_runs: Option<usize>,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// "rbf", "matern", or "linear".
    pub family: String,
    /// Matérn smoothness, 1.5 or 2.5 (defaults to 2.5 when omitted).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    pub length_scales: Vec<f64>,
    #[serde(default = "one")]
    pub variance_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl KernelConfig {
    pub fn build(&self) -> Result<ScalarKernel> {
        let family = match self.family.as_str() {
            "rbf" => KernelFamily::Rbf,
            "linear" => KernelFamily::Linear,
            "matern" => {
                let nu = match self.nu.unwrap_or(2.5) {
                    x if x == 1.5 => MaternNu::ThreeHalves,
                    x if x == 2.5 => MaternNu::FiveHalves,
                    other => {
                        return Err(VvboError::config(format!(
                            "matern nu must be 1.5 or 2.5, got {other}"
                        )))
                    }
                };
                KernelFamily::Matern { nu }
            }
            other => return Err(VvboError::config(format!("unknown kernel family '{other}'"))),
        };
        ScalarKernel::new(family, self.length_scales.clone(), self.variance_scale)
    }
}

/// Confidence-parameter source.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, tag = "source", rename_all = "snake_case")]
pub enum BetaConfig {
    /// Per-phase values from the benchmark table.
    Table,
    /// One fixed value for every phase.
    Fixed { value: f64 },
    /// Theorem radius Γ + (σ/√λ)√(2 log(1/ζ) + logdet); σ defaults to the
    /// benchmark noise level.
    Theoretical {
        gamma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma: Option<f64>,
        zeta: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, tag = "strategy", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Grid { resolution: usize },
    MultiStart { n_starts: usize, eval_budget: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementConfig {
    /// "identity", "projection", or "scalar"; defaults from method and
    /// observation regime.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    /// Explicit functional descriptors for projection/scalar measurements;
    /// defaults to the benchmark's phase-one basis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functionals: Option<Vec<FunctionalConfig>>,
    /// Surrogate-objective weights over the custom functionals (uniform 1/q
    /// when omitted). Regret is still scored against the benchmark's true
    /// phase objectives.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective_weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<TruncationConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum FunctionalConfig {
    PointEval { t: f64 },
    IntegralWeights { weights: Vec<f64> },
    Coefficients { coeffs: Vec<f64> },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, tag = "policy", rename_all = "snake_case")]
pub enum TruncationConfig {
    EnergyFraction { value: f64 },
    FixedRank { value: usize },
}

impl TruncationConfig {
    pub fn build(&self) -> TruncationPolicy {
        match self {
            TruncationConfig::EnergyFraction { value } => TruncationPolicy::EnergyFraction(*value),
            TruncationConfig::FixedRank { value } => TruncationPolicy::FixedRank(*value),
        }
    }
}

/// Optimization methods selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Vvbo,
    Bo,
    Rbo,
    Mtbo,
    Rmtbo,
    Ctbo,
    Ffbo,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Vvbo => "vvbo",
            Method::Bo => "bo",
            Method::Rbo => "rbo",
            Method::Mtbo => "mtbo",
            Method::Rmtbo => "rmtbo",
            Method::Ctbo => "ctbo",
            Method::Ffbo => "ffbo",
        }
    }

    pub fn all() -> [Method; 7] {
        [
            Method::Vvbo,
            Method::Bo,
            Method::Rbo,
            Method::Mtbo,
            Method::Rmtbo,
            Method::Ctbo,
            Method::Ffbo,
        ]
    }

    /// Observation-regime label used in plot data.
    pub fn regime(&self, observation: Observation) -> &'static str {
        match self {
            Method::Vvbo => match observation {
                Observation::Full => "full",
                Observation::Partial => "partial",
            },
            Method::Mtbo | Method::Rmtbo => "partial",
            Method::Bo | Method::Rbo | Method::Ctbo | Method::Ffbo => "scalar",
        }
    }
}

impl FromStr for Method {
    type Err = VvboError;

    fn from_str(s: &str) -> Result<Self> {
        Method::all()
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| VvboError::config(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observation {
    Full,
    Partial,
}

/// Fully-resolved configuration with all defaults applied.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub benchmark: BenchmarkName,
    pub method: Method,
    pub observation: Observation,
    pub phases: usize,
    pub iterations_per_phase: usize,
    pub kernel: ScalarKernel,
    pub lambda: f64,
    pub noise_std: f64,
    pub n_grid: usize,
    pub truncation: TruncationPolicy,
    pub measurement: Option<MeasurementConfig>,
    pub beta: BetaConfig,
    pub optimizer: AcquisitionOptimizer,
    pub n_runs: usize,
    pub master_seed: u64,
    pub benchmark_seed: u64,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(json)
            .map_err(|e| VvboError::config(format!("invalid config document: {e}")))?;
        Ok(cfg)
    }

    pub fn resolve(&self) -> Result<ResolvedConfig> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(VvboError::config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let benchmark: BenchmarkName = self.benchmark.parse()?;
        let method: Method = self.method.parse()?;
        let hp = benchmark.hyperparams();

        let observation = match self.observation.as_deref() {
            None => Observation::Full,
            Some("full") => Observation::Full,
            Some("partial") => {
                if method != Method::Vvbo {
                    return Err(VvboError::config(
                        "observation: 'partial' only applies to method 'vvbo' \
                         (mtbo/rmtbo are finite-measurement by definition, the \
                         scalar baselines observe objective values)",
                    ));
                }
                Observation::Partial
            }
            Some(other) => {
                return Err(VvboError::config(format!(
                    "observation must be 'full' or 'partial', got '{other}'"
                )))
            }
        };

        let default_phases = match (method, observation) {
            (Method::Vvbo, Observation::Partial) => 2,
            _ => 3,
        };
        let phases = self.phases.unwrap_or(default_phases);
        if phases == 0 || phases > 3 {
            return Err(VvboError::config("phases must be 1, 2, or 3"));
        }
        if method == Method::Vvbo && observation == Observation::Partial && phases > 2 {
            return Err(VvboError::config(
                "partial observation fixes the measurement basis, so only the \
                 weight-change transition runs (phases must be <= 2)",
            ));
        }

        let input_dim = benchmark.input_dim();
        let kernel = match &self.kernel {
            Some(kc) => {
                let k = kc.build()?;
                if k.dim() != input_dim {
                    return Err(VvboError::config(format!(
                        "kernel has {} length scales, benchmark input dimension is {input_dim}",
                        k.dim()
                    )));
                }
                k
            }
            None => ScalarKernel::rbf_iso(input_dim, hp.input_length_scale)?,
        };

        let lambda = self.lambda.unwrap_or(hp.lambda);
        if !(lambda > 0.0) {
            return Err(VvboError::config("lambda must be strictly positive"));
        }
        let noise_std = self.noise_std.unwrap_or(hp.noise_std);
        if noise_std < 0.0 {
            return Err(VvboError::config("noise_std must be nonnegative"));
        }
        let n_grid = self.n_grid.unwrap_or(crate::hilbert::DEFAULT_N_GRID);
        if n_grid < 2 {
            return Err(VvboError::config("n_grid must be at least 2"));
        }

        let truncation = self
            .measurement
            .as_ref()
            .and_then(|m| m.truncation.as_ref())
            .map(TruncationConfig::build)
            .unwrap_or_else(TruncationPolicy::keep_all);

        if let Some(m) = &self.measurement {
            if let Some(kind) = m.kind.as_deref() {
                let implied = match (method, observation) {
                    (Method::Vvbo, Observation::Full) => "identity",
                    (Method::Vvbo, Observation::Partial) | (Method::Mtbo, _) | (Method::Rmtbo, _) => {
                        "projection"
                    }
                    _ => "scalar",
                };
                if kind != implied {
                    return Err(VvboError::config(format!(
                        "measurement kind '{kind}' conflicts with method '{}' and its \
                         observation regime (implied kind '{implied}')",
                        method.as_str()
                    )));
                }
            }
        }

        let beta = self.beta.unwrap_or(BetaConfig::Table);
        if let BetaConfig::Theoretical { gamma, zeta, .. } = beta {
            if !(zeta > 0.0 && zeta < 1.0) || gamma < 0.0 {
                return Err(VvboError::config(
                    "theoretical beta requires gamma >= 0 and zeta in (0, 1)",
                ));
            }
            if !matches!(method, Method::Vvbo | Method::Mtbo | Method::Rmtbo) {
                return Err(VvboError::config(
                    "theoretical beta is only supported for the measurement-space \
                     methods (vvbo, mtbo, rmtbo); the scalar baselines take table \
                     or fixed values",
                ));
            }
        }

        let optimizer = match &self.optimizer {
            Some(OptimizerConfig::Grid { resolution }) => AcquisitionOptimizer::grid(*resolution)?,
            Some(OptimizerConfig::MultiStart {
                n_starts,
                eval_budget,
            }) => AcquisitionOptimizer::multi_start(*n_starts, *eval_budget)?,
            None => AcquisitionOptimizer::default_for_dim(input_dim),
        };

        let n_runs = self.n_runs.unwrap_or(10);
        if n_runs < 1 {
            return Err(VvboError::config("n_runs must be at least 1"));
        }

        Ok(ResolvedConfig {
            benchmark,
            method,
            observation,
            phases,
            iterations_per_phase: self.iterations_per_phase.unwrap_or(50),
            kernel,
            lambda,
            noise_std,
            n_grid,
            truncation,
            measurement: self.measurement.clone(),
            beta,
            optimizer,
            n_runs,
            master_seed: self.master_seed,
            benchmark_seed: self.benchmark_seed.unwrap_or(2024),
            output_dir: self.output_dir.as_ref().map(PathBuf::from),
        })
    }
}
