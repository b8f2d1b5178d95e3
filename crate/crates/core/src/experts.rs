//! Meta-learning over several predictors: gradient fusion feeding optimistic
//! mirror descent, and Hedge-weighted fusion of expert actions.

use crate::error::{check_dim, Error, Result};
use crate::learners::{check_finite, OnlineLearner};
use crate::optimistic::Oomd;
use crate::predictors::{measure_error, ErrorMode};
use crate::sets::{dot, DenseVector};

/// Normalized exponential weights, kept in log space so that persistently
/// bad experts never underflow to exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertWeights {
    log_w: Vec<f64>,
}

impl ExpertWeights {
    pub fn uniform(count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Parameter("need at least one expert".into()));
        }
        Ok(Self { log_w: vec![0.0; count] })
    }

    pub fn from_weights(w: &[f64]) -> Result<Self> {
        if w.is_empty() || w.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Parameter("weights must be positive and finite".into()));
        }
        Ok(Self { log_w: w.iter().map(|v| v.ln()).collect() })
    }

    pub fn len(&self) -> usize {
        self.log_w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_w.is_empty()
    }

    /// Normalized weights summing to one.
    pub fn weights(&self) -> Vec<f64> {
        let m = self.log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = self.log_w.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| (v / z).max(f64::MIN_POSITIVE)).collect()
    }

    /// `w_p ← w_p · exp(−rate · loss_p)`, then renormalize.
    pub fn multiplicative_update(&mut self, losses: &[f64], rate: f64) -> Result<()> {
        check_dim(self.log_w.len(), losses.len())?;
        check_finite(losses, "expert losses")?;
        for (l, loss) in self.log_w.iter_mut().zip(losses) {
            *l -= rate * loss;
        }
        let m = self.log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for l in &mut self.log_w {
            *l -= m;
        }
        Ok(())
    }

    /// Gradient-fusion update `w_p ∝ w_p exp(−rate·||g̃_p − g||²)`.
    pub fn update_gradfusion(&mut self, errors: &[f64], rate: f64) -> Result<()> {
        if errors.iter().any(|e| *e < 0.0) {
            return Err(Error::Parameter("prediction errors must be nonnegative".into()));
        }
        self.multiplicative_update(errors, rate)
    }

    /// Hedge on rewards: `w_p ∝ w_p exp(η·reward_p)`.
    pub fn hedge_rewards(&mut self, rewards: &[f64], eta: f64) -> Result<()> {
        let losses: Vec<f64> = rewards.iter().map(|r| -r).collect();
        self.multiplicative_update(&losses, eta)
    }
}

/// Convex combination `Σ_p w_p v_p`.
pub fn fuse(weights: &[f64], vectors: &[DenseVector]) -> Result<DenseVector> {
    check_dim(weights.len(), vectors.len())?;
    let first = vectors.first().ok_or_else(|| Error::Parameter("nothing to fuse".into()))?;
    let mut out = DenseVector::zeros(first.len());
    for (w, v) in weights.iter().zip(vectors) {
        check_dim(first.len(), v.len())?;
        out.add_scaled(*w, v);
    }
    Ok(out)
}

/// Fuses gradient predictions with exponentially updated weights and feeds the
/// result to optimistic mirror descent.
#[derive(Debug, Clone)]
pub struct GradientFusion {
    oomd: Oomd,
    weights: ExpertWeights,
    rate: f64,
    pending: Option<Vec<DenseVector>>,
}

impl GradientFusion {
    pub fn new(oomd: Oomd, experts: usize, rate: f64) -> Result<Self> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::Parameter(format!("weight update rate must be positive, got {rate}")));
        }
        Ok(Self { oomd, weights: ExpertWeights::uniform(experts)?, rate, pending: None })
    }

    pub fn weights(&self) -> Vec<f64> {
        self.weights.weights()
    }

    pub fn learner(&self) -> &Oomd {
        &self.oomd
    }

    /// Decision from the current weights and this slot's predictions.
    pub fn decide(&mut self, predictions: &[DenseVector]) -> Result<DenseVector> {
        let fused = fuse(&self.weights.weights(), predictions)?;
        let x = self.oomd.decide(Some(&fused))?;
        self.pending = Some(predictions.to_vec());
        Ok(x)
    }

    pub fn observe(&mut self, g: &[f64]) -> Result<()> {
        let preds = self
            .pending
            .take()
            .ok_or_else(|| Error::Protocol("observe called without a pending decision".into()))?;
        let errors = preds
            .iter()
            .map(|p| measure_error(g, p, ErrorMode::SqL2))
            .collect::<Result<Vec<_>>>()?;
        self.weights.update_gradfusion(&errors, self.rate)?;
        self.oomd.observe(g)
    }
}

/// Hedge step size `√(8 ln K / T)/G` for losses with per-slot spread `G`.
pub fn hedge_rate(experts: usize, horizon: usize, spread: f64) -> f64 {
    (8.0 * (experts as f64).ln() / horizon as f64).sqrt() / spread
}

/// Action fusion: each expert proposes a decision, the meta-learner plays the
/// weighted average and updates weights by Hedge on the experts' linear losses.
///
/// Without a known horizon the doubling trick restarts the weights at slots
/// `2^k` with the rate tuned to each epoch's length.
pub struct ActionFusion {
    experts: Vec<Box<dyn OnlineLearner>>,
    weights: ExpertWeights,
    horizon: Option<usize>,
    spread: f64,
    t: usize,
    epoch_end: usize,
    eta: f64,
    proposals: Option<Vec<DenseVector>>,
}

impl ActionFusion {
    /// `spread` bounds `max_p ⟨g, x_p⟩ − min_p ⟨g, x_p⟩` per slot.
    pub fn new(experts: Vec<Box<dyn OnlineLearner>>, horizon: Option<usize>, spread: f64) -> Result<Self> {
        let k = experts.len();
        if k == 0 {
            return Err(Error::Parameter("need at least one expert".into()));
        }
        let dim = experts[0].dim();
        for e in &experts {
            check_dim(dim, e.dim())?;
        }
        if !(spread > 0.0) {
            return Err(Error::Parameter("loss spread must be positive".into()));
        }
        let epoch_len = horizon.unwrap_or(1).max(1);
        let eta = if k == 1 { 0.0 } else { hedge_rate(k, epoch_len, spread) };
        Ok(Self {
            experts,
            weights: ExpertWeights::uniform(k)?,
            horizon,
            spread,
            t: 0,
            epoch_end: epoch_len,
            eta,
            proposals: None,
        })
    }

    pub fn weights(&self) -> Vec<f64> {
        self.weights.weights()
    }

    pub fn with_rate(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    /// Last slot's proposals, one per expert.
    pub fn proposals(&self) -> Option<&[DenseVector]> {
        self.proposals.as_deref()
    }

    /// `hints[p]` is the prediction handed to expert `p` (`None` for a
    /// pessimistic expert).
    pub fn decide(&mut self, hints: &[Option<&[f64]>]) -> Result<DenseVector> {
        check_dim(self.experts.len(), hints.len())?;
        let proposals = self
            .experts
            .iter_mut()
            .zip(hints)
            .map(|(e, h)| e.decide(*h))
            .collect::<Result<Vec<_>>>()?;
        let x = fuse(&self.weights.weights(), &proposals)?;
        self.proposals = Some(proposals);
        Ok(x)
    }

    pub fn observe(&mut self, g: &[f64]) -> Result<()> {
        let proposals = self
            .proposals
            .as_ref()
            .ok_or_else(|| Error::Protocol("observe called without a pending decision".into()))?;
        let losses: Vec<f64> = proposals.iter().map(|x| dot(g, x)).collect();
        self.weights.multiplicative_update(&losses, self.eta)?;
        for e in &mut self.experts {
            e.observe(g)?;
        }
        self.t += 1;
        if self.horizon.is_none() && self.t >= self.epoch_end && self.experts.len() > 1 {
            let len = self.epoch_end;
            self.epoch_end += 2 * len;
            self.weights = ExpertWeights::uniform(self.experts.len())?;
            self.eta = hedge_rate(self.experts.len(), 2 * len, self.spread);
        }
        self.proposals = None;
        Ok(())
    }
}
