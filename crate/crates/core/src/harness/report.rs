//! Closed-form regret bounds evaluated against logged regret.

use serde::{Deserialize, Serialize};

use super::config::{EnvironmentSpec, ExperimentConfig, FtrlRate, LearnerSpec, OgdRate};
use super::SlotRecord;
use crate::caching::{optimistic_caching_bound, sized_oftpl_regret_bound};
use crate::learners::Regularizer;
use crate::optimistic::oftpl_regret_bound;

/// Which bound applies to a run, with the constants it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundSpec {
    /// No closed form for this learner; the report is informational.
    None,
    /// `(3/2) L D √t`
    OgdAnytime { lipschitz: f64, diameter: f64 },
    /// `D L √T`
    OgdFixedHorizon { lipschitz: f64, diameter: f64, horizon: usize },
    /// `D √Σ||g||²`
    OgdAdagrad { diameter: f64 },
    /// `(L²/α)(1 + ln t)`
    OgdStronglyConvex { lipschitz: f64, alpha: f64 },
    /// `D L √(2T)`
    FtrlFixedHorizon { lipschitz: f64, diameter: f64, horizon: usize },
    /// `2√2 D L √t`
    FtrlAnytime { lipschitz: f64, diameter: f64 },
    /// `2√2 D √Σ||g||²`
    FtrlGradientAdaptive { diameter: f64 },
    /// `2√2 D √ε_{1:t}`
    OptimisticFtrl { diameter: f64 },
    /// `2√(1 + J C) √ε_{1:t}`
    OptimisticCaching { caches: usize, cap: f64 },
    /// `3.68 √C (ln(Ne/C))^{1/4} √Σ||q − q̃||₁²`, in expectation.
    Oftpl { files: usize, cap: usize },
    /// `1.84 √C (ln(Ne/C))^{1/4} √Σ||q − q̃||₁²` on ½-regret, in expectation.
    SizedOftpl { files: usize, cap: f64 },
}

impl BoundSpec {
    /// Bounds on expected regret cannot be checked on a single run.
    pub fn in_expectation(&self) -> bool {
        matches!(self, BoundSpec::Oftpl { .. } | BoundSpec::SizedOftpl { .. })
    }

    /// Bound after `t` slots given `Σ||g||²` and `ε_{1:t}`.
    pub fn evaluate(&self, t: usize, grad_sq_sum: f64, eps_sum: f64) -> Option<f64> {
        let s2 = std::f64::consts::SQRT_2;
        let tf = t as f64;
        Some(match *self {
            BoundSpec::None => return None,
            BoundSpec::OgdAnytime { lipschitz, diameter } => 1.5 * lipschitz * diameter * tf.sqrt(),
            BoundSpec::OgdFixedHorizon { lipschitz, diameter, horizon } => diameter * lipschitz * (horizon as f64).sqrt(),
            BoundSpec::OgdAdagrad { diameter } => diameter * grad_sq_sum.sqrt(),
            BoundSpec::OgdStronglyConvex { lipschitz, alpha } => lipschitz * lipschitz / alpha * (1.0 + tf.ln()),
            BoundSpec::FtrlFixedHorizon { lipschitz, diameter, horizon } => diameter * lipschitz * (2.0 * horizon as f64).sqrt(),
            BoundSpec::FtrlAnytime { lipschitz, diameter } => 2.0 * s2 * diameter * lipschitz * tf.sqrt(),
            BoundSpec::FtrlGradientAdaptive { diameter } => 2.0 * s2 * diameter * grad_sq_sum.sqrt(),
            BoundSpec::OptimisticFtrl { diameter } => 2.0 * s2 * diameter * eps_sum.sqrt(),
            BoundSpec::OptimisticCaching { caches, cap } => optimistic_caching_bound(caches, cap, eps_sum),
            BoundSpec::Oftpl { files, cap } => oftpl_regret_bound(files, cap, eps_sum),
            BoundSpec::SizedOftpl { files, cap } => sized_oftpl_regret_bound(files, cap, eps_sum),
        })
    }
}

/// The bound matching a configuration, given the environment's Lipschitz
/// constant, decision-set diameter and number of caches.
pub fn bound_spec(cfg: &ExperimentConfig, lipschitz: f64, diameter: f64, caches: usize) -> BoundSpec {
    let caching_cap = match &cfg.environment {
        EnvironmentSpec::Caching { cap, .. } | EnvironmentSpec::CacheNetwork { cap, .. } => Some(*cap),
        _ => None,
    };
    match &cfg.learner {
        LearnerSpec::Ogd { rate } => match *rate {
            OgdRate::Anytime => BoundSpec::OgdAnytime { lipschitz, diameter },
            OgdRate::FixedHorizon => BoundSpec::OgdFixedHorizon { lipschitz, diameter, horizon: cfg.horizon },
            OgdRate::Adagrad => BoundSpec::OgdAdagrad { diameter },
            OgdRate::StronglyConvex { alpha } => BoundSpec::OgdStronglyConvex { lipschitz, alpha },
        },
        LearnerSpec::Ftrl { regularizer: Regularizer::Quadratic, schedule } => match schedule {
            FtrlRate::FixedHorizon => BoundSpec::FtrlFixedHorizon { lipschitz, diameter, horizon: cfg.horizon },
            FtrlRate::Anytime => BoundSpec::FtrlAnytime { lipschitz, diameter },
            FtrlRate::GradientAdaptive => BoundSpec::FtrlGradientAdaptive { diameter },
        },
        LearnerSpec::Oftrl { regularizer, sigma: None } => match (regularizer, caching_cap) {
            (None | Some(Regularizer::QuadraticProximal), Some(cap)) => BoundSpec::OptimisticCaching { caches, cap: cap as f64 },
            (None | Some(Regularizer::Quadratic), None) => BoundSpec::OptimisticFtrl { diameter },
            _ => BoundSpec::None,
        },
        LearnerSpec::DiscreteOftrl => match caching_cap {
            Some(cap) => BoundSpec::OptimisticCaching { caches: 1, cap: cap as f64 },
            None => BoundSpec::None,
        },
        LearnerSpec::Oftpl => match &cfg.environment {
            EnvironmentSpec::Caching { files, cap, .. } => BoundSpec::Oftpl { files: *files, cap: *cap },
            _ => BoundSpec::None,
        },
        LearnerSpec::SizedOftpl => match &cfg.environment {
            EnvironmentSpec::SizedCaching { files, cap, .. } => BoundSpec::SizedOftpl { files: *files, cap: *cap },
            _ => BoundSpec::None,
        },
        _ => BoundSpec::None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointBound {
    pub t: usize,
    pub bound: Option<f64>,
    pub empirical: f64,
    /// `bound − empirical`.
    pub margin: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub replica: usize,
    pub spec: BoundSpec,
    pub in_expectation: bool,
    pub checkpoints: Vec<CheckpointBound>,
}

impl BoundReport {
    /// A deterministic bound was exceeded somewhere.
    pub fn exceeded(&self) -> bool {
        !self.in_expectation && self.checkpoints.iter().any(|c| !c.pass)
    }
}

/// Evaluates `spec` at every logged checkpoint (rows with a prefix regret)
/// of one replica's log, using the logged gradient norms and errors.
pub fn report_bounds(spec: &BoundSpec, records: &[SlotRecord]) -> BoundReport {
    let replica = records.first().map(|r| r.replica).unwrap_or(0);
    let mut grad_sq = 0.0;
    let mut checkpoints = Vec::new();
    for r in records {
        grad_sq += r.grad_norm * r.grad_norm;
        let Some(empirical) = r.prefix_regret else { continue };
        let bound = spec.evaluate(r.t, grad_sq, r.eps_sum);
        let slack = 1e-9 * (1.0 + r.t as f64);
        let pass = bound.is_none_or(|b| empirical <= b + slack);
        checkpoints.push(CheckpointBound { t: r.t, bound, empirical, margin: bound.map(|b| b - empirical), pass });
    }
    BoundReport { replica, in_expectation: spec.in_expectation(), spec: spec.clone(), checkpoints }
}
