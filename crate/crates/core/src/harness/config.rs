//! Experiment configuration, parsed from TOML with dotted section keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::environments::{GainProcess, LoadProcess, SlicingProcess};
use crate::error::{Error, Result};
use crate::learners::Regularizer;
use crate::predictors::PredictorKind;

/// A complete experiment: environment, learner, predictors and outputs.
///
/// ```toml
/// horizon = 10000
/// seed = 7
/// checkpoints = [100, 1000, 10000]
/// environment.kind = "caching"
/// environment.files = 1000
/// environment.cap = 50
/// environment.trace.kind = "zipf"
/// environment.trace.zeta = 1.1
/// learner.kind = "oftrl"
/// predictor.kind = "rho_accurate"
/// predictor.rho = 0.8
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub replicas: usize,
    /// Slots at which the prefix benchmark and bounds are evaluated; the
    /// horizon is used when empty.
    #[serde(default)]
    pub checkpoints: Vec<usize>,
    pub environment: EnvironmentSpec,
    pub learner: LearnerSpec,
    /// Predictor feeding optimistic learners; absent means no predictions.
    #[serde(default)]
    pub predictor: Option<PredictorKind>,
    /// Predictor panel for the experts learners.
    #[serde(default)]
    pub panel: Vec<PredictorKind>,
    #[serde(default)]
    pub output: OutputSpec,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Slot log CSV path.
    #[serde(default)]
    pub log: Option<PathBuf>,
    /// Summary JSON path.
    #[serde(default)]
    pub summary: Option<PathBuf>,
    /// Also log the full decision vector of every slot.
    #[serde(default)]
    pub full_vectors: bool,
}

/// Request trace sources for the caching environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TraceSpec {
    /// I.i.d. Zipf(`zeta`) requests with unit weight.
    Zipf { zeta: f64 },
    /// I.i.d. uniform requests with unit weight.
    Uniform,
    /// Blocks of `phase` identical requests for a random file, weights drawn
    /// from `U[max_weight/2, max_weight]`.
    Adversarial {
        #[serde(default = "unit")]
        max_weight: f64,
        #[serde(default = "default_phase")]
        phase: usize,
    },
    /// A `t,file_id[,user_id,weight]` CSV; truncated to the horizon.
    Csv { path: PathBuf },
}

fn unit() -> f64 {
    1.0
}

fn default_phase() -> usize {
    25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentSpec {
    /// Single cache, fractional storage, utility `w ⟨e_n, x⟩`.
    Caching { files: usize, cap: usize, trace: TraceSpec },
    /// Bipartite user–cache network with random links.
    CacheNetwork {
        files: usize,
        cap: usize,
        caches: usize,
        users: usize,
        #[serde(default = "half")]
        link_prob: f64,
        trace: TraceSpec,
    },
    /// Whole files of integer sizes `1..=max_size`; scored by α-regret.
    SizedCaching {
        files: usize,
        cap: f64,
        #[serde(default = "default_max_size")]
        max_size: usize,
        #[serde(default = "half")]
        alpha: f64,
        trace: TraceSpec,
    },
    PowerControl {
        channels: usize,
        p_max: f64,
        gains: GainProcess,
        #[serde(default = "default_restarts")]
        restarts: usize,
    },
    Slicing {
        resources: usize,
        z_max: f64,
        market: SlicingProcess,
        #[serde(default = "default_restarts")]
        restarts: usize,
    },
    /// Linear costs on `[0,1]^dim` under one budget constraint.
    Budget {
        dim: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default = "default_share")]
        budget_share: f64,
    },
    /// O-RAN load assignment under α-fairness.
    Fairness { users: usize, servers: usize, alpha: f64, u_min: f64, u_max: f64, loads: LoadProcess },
    /// Linear costs on the simplex plus an ℓ1 switching cost.
    Switching { dim: usize },
    /// Scalar decision on `[−1, 1]` with costs alternating `−1, +1, …`.
    Alternating,
}

fn half() -> f64 {
    0.5
}

fn default_max_size() -> usize {
    4
}

fn default_restarts() -> usize {
    5
}

fn default_noise() -> f64 {
    0.2
}

fn default_share() -> f64 {
    0.4
}

impl EnvironmentSpec {
    pub fn name(&self) -> &'static str {
        match self {
            EnvironmentSpec::Caching { .. } => "caching",
            EnvironmentSpec::CacheNetwork { .. } => "cache_network",
            EnvironmentSpec::SizedCaching { .. } => "sized_caching",
            EnvironmentSpec::PowerControl { .. } => "power_control",
            EnvironmentSpec::Slicing { .. } => "slicing",
            EnvironmentSpec::Budget { .. } => "budget",
            EnvironmentSpec::Fairness { .. } => "fairness",
            EnvironmentSpec::Switching { .. } => "switching",
            EnvironmentSpec::Alternating => "alternating",
        }
    }

    fn one_hot(&self) -> bool {
        matches!(self, EnvironmentSpec::Caching { .. } | EnvironmentSpec::SizedCaching { .. })
    }

    fn generic(&self) -> bool {
        matches!(
            self,
            EnvironmentSpec::Caching { .. }
                | EnvironmentSpec::CacheNetwork { .. }
                | EnvironmentSpec::PowerControl { .. }
                | EnvironmentSpec::Slicing { .. }
                | EnvironmentSpec::Alternating
        )
    }
}

/// OGD step-size rules; `L` and `D` come from the environment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OgdRate {
    #[default]
    Anytime,
    FixedHorizon,
    Adagrad,
    StronglyConvex { alpha: f64 },
}

/// FTRL regularization schedules; `L` and `D` come from the environment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FtrlRate {
    FixedHorizon,
    #[default]
    Anytime,
    GradientAdaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LearnerSpec {
    Ogd {
        #[serde(default)]
        rate: OgdRate,
    },
    Ftl,
    Ftrl {
        #[serde(default = "quadratic")]
        regularizer: Regularizer,
        #[serde(default)]
        schedule: FtrlRate,
    },
    /// Optimistic FTRL; caching environments default to the proximal
    /// regularizer with `σ = √2/D`, others to `σ = 1/(√2 D)`.
    Oftrl {
        #[serde(default)]
        regularizer: Option<Regularizer>,
        #[serde(default)]
        sigma: Option<f64>,
    },
    /// Optimistic OMD (quadratic), rate `D/(L√(2T))` unless given.
    Oomd {
        #[serde(default)]
        eta: Option<f64>,
    },
    /// Proximal OFTRL plus Madow sampling of whole files.
    DiscreteOftrl,
    Oftpl,
    SizedOftpl,
    /// One proximal-OFTRL expert per panel predictor, plus a prediction-free
    /// one when `pessimistic`.
    ActionFusion {
        #[serde(default = "yes")]
        pessimistic: bool,
    },
    GradientFusion {
        #[serde(default)]
        rate: Option<f64>,
        #[serde(default)]
        eta: Option<f64>,
    },
    Llp {
        #[serde(default = "unit")]
        sigma: f64,
        #[serde(default = "unit")]
        sigma0: f64,
        #[serde(default = "unit")]
        a: f64,
        #[serde(default = "half")]
        beta: f64,
    },
    Fairness,
    MemoryOftrl {
        #[serde(default)]
        sigma: Option<f64>,
    },
}

fn quadratic() -> Regularizer {
    Regularizer::Quadratic
}

fn yes() -> bool {
    true
}

impl LearnerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LearnerSpec::Ogd { .. } => "ogd",
            LearnerSpec::Ftl => "ftl",
            LearnerSpec::Ftrl { .. } => "ftrl",
            LearnerSpec::Oftrl { .. } => "oftrl",
            LearnerSpec::Oomd { .. } => "oomd",
            LearnerSpec::DiscreteOftrl => "discrete_oftrl",
            LearnerSpec::Oftpl => "oftpl",
            LearnerSpec::SizedOftpl => "sized_oftpl",
            LearnerSpec::ActionFusion { .. } => "action_fusion",
            LearnerSpec::GradientFusion { .. } => "gradient_fusion",
            LearnerSpec::Llp { .. } => "llp",
            LearnerSpec::Fairness => "fairness",
            LearnerSpec::MemoryOftrl { .. } => "memory_oftrl",
        }
    }

    fn uses_predictor(&self) -> bool {
        !matches!(
            self,
            LearnerSpec::Ogd { .. }
                | LearnerSpec::Ftl
                | LearnerSpec::Ftrl { .. }
                | LearnerSpec::ActionFusion { .. }
                | LearnerSpec::GradientFusion { .. }
        )
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checkpoints actually evaluated: the configured ones, or the horizon.
    pub fn effective_checkpoints(&self) -> Vec<usize> {
        let mut c = if self.checkpoints.is_empty() && self.horizon > 0 { vec![self.horizon] } else { self.checkpoints.clone() };
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Cross-checks environment, learner and predictor choices.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.replicas == 0 {
            return bad("replicas must be >= 1".into());
        }
        if let Some(&c) = self.checkpoints.iter().find(|c| **c == 0 || **c > self.horizon) {
            return bad(format!("checkpoint {c} outside 1..={}", self.horizon));
        }
        let env = &self.environment;
        let learner = &self.learner;
        let compatible = match learner {
            LearnerSpec::Ogd { .. }
            | LearnerSpec::Ftl
            | LearnerSpec::Ftrl { .. }
            | LearnerSpec::Oftrl { .. }
            | LearnerSpec::Oomd { .. }
            | LearnerSpec::ActionFusion { .. }
            | LearnerSpec::GradientFusion { .. } => env.generic(),
            LearnerSpec::DiscreteOftrl | LearnerSpec::Oftpl => matches!(env, EnvironmentSpec::Caching { .. }),
            LearnerSpec::SizedOftpl => matches!(env, EnvironmentSpec::SizedCaching { .. }),
            LearnerSpec::Llp { .. } => matches!(env, EnvironmentSpec::Budget { .. }),
            LearnerSpec::Fairness => matches!(env, EnvironmentSpec::Fairness { .. }),
            LearnerSpec::MemoryOftrl { .. } => matches!(env, EnvironmentSpec::Switching { .. }),
        };
        if !compatible {
            return bad(format!("learner {} cannot run on environment {}", learner.name(), env.name()));
        }
        match learner {
            LearnerSpec::Ftrl { regularizer, .. } | LearnerSpec::Oftrl { regularizer: Some(regularizer), .. }
                if *regularizer == Regularizer::Entropic =>
            {
                return bad(format!("entropic regularization needs a simplex decision set, {} has none", env.name()));
            }
            LearnerSpec::ActionFusion { pessimistic } => {
                if self.panel.is_empty() && !pessimistic {
                    return bad("action fusion needs a predictor panel or the pessimistic expert".into());
                }
            }
            LearnerSpec::GradientFusion { .. } if self.panel.is_empty() => {
                return bad("gradient fusion needs a predictor panel".into());
            }
            LearnerSpec::Llp { sigma, sigma0, a, beta } => {
                crate::constrained::LlpConfig { sigma: *sigma, sigma0: *sigma0, a: *a, beta: *beta }
                    .validate()
                    .map_err(|e| Error::Config(e.to_string()))?;
            }
            _ => {}
        }
        if self.predictor.is_some() && !learner.uses_predictor() {
            return bad(format!("learner {} takes no predictions; use panel for the experts learners", learner.name()));
        }
        if !self.panel.is_empty() && !matches!(learner, LearnerSpec::ActionFusion { .. } | LearnerSpec::GradientFusion { .. }) {
            return bad(format!("learner {} takes no predictor panel", learner.name()));
        }
        for p in self.predictor.iter().chain(&self.panel) {
            p.validate().map_err(|e| Error::Config(e.to_string()))?;
            if matches!(p, PredictorKind::RhoAccurate { .. }) && !env.one_hot() {
                return bad(format!("rho-accurate predictions need one-hot gradients, {} has none", env.name()));
            }
            if matches!(learner, LearnerSpec::Fairness)
                && !matches!(p, PredictorKind::Perfect | PredictorKind::Lagged | PredictorKind::Zero)
            {
                return bad("the fairness learner accepts perfect, lagged or zero load predictions".into());
            }
        }
        self.validate_environment()
    }

    fn validate_environment(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        match &self.environment {
            EnvironmentSpec::Caching { files, cap, trace } => {
                if *cap == 0 || cap >= files {
                    return bad("caching needs 0 < cap < files");
                }
                validate_trace(trace)
            }
            EnvironmentSpec::CacheNetwork { files, cap, caches, users, link_prob, trace } => {
                if *cap == 0 || cap >= files || *caches == 0 || *users == 0 || !(0.0..=1.0).contains(link_prob) {
                    return bad("cache network needs 0 < cap < files, caches, users >= 1 and link_prob in [0,1]");
                }
                validate_trace(trace)
            }
            EnvironmentSpec::SizedCaching { files, cap, max_size, alpha, trace } => {
                if *files == 0 || *max_size == 0 || !(*cap >= 1.0) || cap.fract() != 0.0 || !(*alpha > 0.0 && *alpha <= 1.0) {
                    return bad("sized caching needs files, max_size >= 1, an integer cap >= 1 and alpha in (0,1]");
                }
                if *cap >= *files as f64 * std::f64::consts::E {
                    return bad("sized caching needs cap < files·e");
                }
                validate_trace(trace)
            }
            EnvironmentSpec::PowerControl { channels, p_max, gains, .. } => {
                if *channels == 0 || !(*p_max > 0.0) {
                    return bad("power control needs channels >= 1 and p_max > 0");
                }
                gains.validate().map_err(|e| Error::Config(e.to_string()))
            }
            EnvironmentSpec::Slicing { resources, z_max, .. } => {
                if *resources == 0 || !(*z_max > 0.0) {
                    return bad("slicing needs resources >= 1 and z_max > 0");
                }
                Ok(())
            }
            EnvironmentSpec::Budget { dim, noise, budget_share } => {
                if *dim == 0 || !(*noise >= 0.0) || !(*budget_share > 0.0 && *budget_share < 1.0) {
                    return bad("budget needs dim >= 1, noise >= 0 and budget_share in (0,1)");
                }
                Ok(())
            }
            EnvironmentSpec::Fairness { users, servers, alpha, u_min, u_max, loads } => {
                crate::fairness::FairnessProblem::new(*users, *servers, *alpha, *u_min, *u_max)
                    .map_err(|e| Error::Config(e.to_string()))?;
                let LoadProcess::Stationary { load_mean, cap_mean, .. } = loads;
                if load_mean.len() != *users || cap_mean.len() != *servers {
                    return bad("load_mean needs one entry per user and cap_mean one per server");
                }
                Ok(())
            }
            EnvironmentSpec::Switching { dim } => {
                if *dim < 2 {
                    return bad("switching needs dim >= 2");
                }
                Ok(())
            }
            EnvironmentSpec::Alternating => Ok(()),
        }
    }
}

fn validate_trace(trace: &TraceSpec) -> Result<()> {
    match trace {
        TraceSpec::Zipf { zeta } if !(*zeta > 0.0) => Err(Error::Config("zipf exponent must be positive".into())),
        TraceSpec::Adversarial { max_weight, phase } if !(*max_weight > 0.0) || *phase == 0 => {
            Err(Error::Config("adversarial trace needs max_weight > 0 and phase >= 1".into()))
        }
        _ => Ok(()),
    }
}

/// Overrides one dotted key (`learner.sigma=0.5`) of a TOML document. The
/// value is parsed as TOML and kept as a string when that fails.
pub fn set_dotted(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().ok_or_else(|| Error::Config("empty key".into()))?;
    let mut table = doc;
    for p in path {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {p} is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&probe) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}
