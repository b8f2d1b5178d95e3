//! Non-optimistic online learners: OGD, entropic OMD, FTRL, FTL and FTPL.
//!
//! All learners minimize. Environments that maximize a utility feed negated
//! gradients.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::sets::{dot, top_k, DenseVector, FeasibleSet, ENTROPIC_FLOOR};

/// Common slot interface: `decide` once, then `observe` the revealed gradient.
pub trait OnlineLearner: Send {
    fn dim(&self) -> usize;
    /// Decision for the coming slot. Optimistic learners use `hint` as the
    /// predicted gradient; others ignore it.
    fn decide(&mut self, hint: Option<&[f64]>) -> Result<DenseVector>;
    fn observe(&mut self, grad: &[f64]) -> Result<()>;
    /// Aggregate regularization weight used by the next decision, when defined.
    fn sigma_sum(&self) -> Option<f64> {
        None
    }
    /// Accumulated prediction error, for optimistic learners.
    fn error_sum(&self) -> Option<f64> {
        None
    }
    /// Error of the most recently observed slot, for optimistic learners.
    fn last_error(&self) -> Option<f64> {
        None
    }
}

impl<L: OnlineLearner + ?Sized> OnlineLearner for Box<L> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn decide(&mut self, hint: Option<&[f64]>) -> Result<DenseVector> {
        (**self).decide(hint)
    }
    fn observe(&mut self, grad: &[f64]) -> Result<()> {
        (**self).observe(grad)
    }
    fn sigma_sum(&self) -> Option<f64> {
        (**self).sigma_sum()
    }
    fn error_sum(&self) -> Option<f64> {
        (**self).error_sum()
    }
    fn last_error(&self) -> Option<f64> {
        (**self).last_error()
    }
}

/// Tracks decide/observe alternation.
#[derive(Debug, Clone, Default)]
pub(crate) struct SlotGuard {
    awaiting: bool,
}

impl SlotGuard {
    pub(crate) fn decided(&mut self) {
        self.awaiting = true;
    }

    pub(crate) fn observing(&mut self) -> Result<()> {
        if !self.awaiting {
            return Err(Error::Protocol("observe called without a pending decision for this slot".into()));
        }
        self.awaiting = false;
        Ok(())
    }
}

pub(crate) fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("{what} contains non-finite entries")));
    }
    Ok(())
}

/// Step-size rule for gradient and mirror descent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateSchedule {
    /// `η = D/(L√T)`.
    FixedHorizon { diameter: f64, lipschitz: f64, horizon: usize },
    /// `η_t = D/(L√t)`.
    Anytime { diameter: f64, lipschitz: f64 },
    /// `η_t = D/√(2 Σ_{τ≤t} ||g_τ||²)`.
    Adagrad { diameter: f64 },
    /// `η_t = 1/(αt)`.
    StronglyConvex { alpha: f64 },
}

impl RateSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            RateSchedule::FixedHorizon { diameter, lipschitz, horizon } => diameter > 0.0 && lipschitz > 0.0 && horizon > 0,
            RateSchedule::Anytime { diameter, lipschitz } => diameter > 0.0 && lipschitz > 0.0,
            RateSchedule::Adagrad { diameter } => diameter > 0.0,
            RateSchedule::StronglyConvex { alpha } => alpha > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("rate schedule needs positive parameters: {self:?}")))
        }
    }

    /// Rate applied to the gradient of slot `t` (1-based). `None` means the
    /// step is skipped (adagrad before any nonzero gradient).
    pub fn rate(&self, t: usize, grad_sq_sum: f64) -> Option<f64> {
        match *self {
            RateSchedule::FixedHorizon { diameter, lipschitz, horizon } => Some(diameter / (lipschitz * (horizon as f64).sqrt())),
            RateSchedule::Anytime { diameter, lipschitz } => Some(diameter / (lipschitz * (t as f64).sqrt())),
            RateSchedule::Adagrad { diameter } => {
                if grad_sq_sum > 0.0 {
                    Some(diameter / (2.0 * grad_sq_sum).sqrt())
                } else {
                    None
                }
            }
            RateSchedule::StronglyConvex { alpha } => Some(1.0 / (alpha * t as f64)),
        }
    }
}

/// Online gradient descent `x_{t+1} = Π(x_t − η_t g_t)`.
#[derive(Debug, Clone)]
pub struct Ogd {
    set: FeasibleSet,
    schedule: RateSchedule,
    x: DenseVector,
    t: usize,
    grad_sq_sum: f64,
    guard: SlotGuard,
}

impl Ogd {
    /// Starts from `Π(0)`.
    pub fn new(set: FeasibleSet, schedule: RateSchedule) -> Result<Self> {
        let x0 = set.project(&vec![0.0; set.dim()])?;
        Self::with_start(set, schedule, x0)
    }

    pub fn with_start(set: FeasibleSet, schedule: RateSchedule, x0: DenseVector) -> Result<Self> {
        schedule.validate()?;
        check_dim(set.dim(), x0.len())?;
        let x = set.project(&x0)?;
        Ok(Self { set, schedule, x, t: 0, grad_sq_sum: 0.0, guard: SlotGuard::default() })
    }

    pub fn current(&self) -> &DenseVector {
        &self.x
    }

    /// One projected step with an explicit rate.
    pub fn step_with_rate(&mut self, g: &[f64], eta: f64) -> Result<DenseVector> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::Parameter(format!("learning rate must be positive, got {eta}")));
        }
        check_dim(self.x.len(), g.len())?;
        check_finite(g, "gradient")?;
        let target: Vec<f64> = self.x.iter().zip(g).map(|(x, gi)| x - eta * gi).collect();
        self.x = self.set.project(&target)?;
        Ok(self.x.clone())
    }
}

impl OnlineLearner for Ogd {
    fn dim(&self) -> usize {
        self.x.len()
    }

    fn decide(&mut self, _hint: Option<&[f64]>) -> Result<DenseVector> {
        self.guard.decided();
        Ok(self.x.clone())
    }

    fn observe(&mut self, g: &[f64]) -> Result<()> {
        check_dim(self.x.len(), g.len())?;
        check_finite(g, "gradient")?;
        self.guard.observing()?;
        self.t += 1;
        self.grad_sq_sum += dot(g, g);
        if let Some(eta) = self.schedule.rate(self.t, self.grad_sq_sum) {
            self.step_with_rate(g, eta)?;
        }
        Ok(())
    }
}

/// Row-wise softmax of `scores`, rows of length `cols`.
pub fn softmax_rows(scores: &[f64], cols: usize) -> DenseVector {
    let mut out = Vec::with_capacity(scores.len());
    for row in scores.chunks(cols) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / z));
    }
    out.into()
}

/// Entropic mirror descent `x_{t+1,i} ∝ x_{t,i} exp(−η_t g_{t,i})`, per simplex row.
#[derive(Debug, Clone)]
pub struct OmdEntropic {
    cols: usize,
    schedule: RateSchedule,
    x: DenseVector,
    t: usize,
    grad_sq_sum: f64,
    guard: SlotGuard,
}

impl OmdEntropic {
    /// Starts from the uniform point of each row.
    pub fn new(set: &FeasibleSet, schedule: RateSchedule) -> Result<Self> {
        let (rows, cols) = set
            .simplex_rows()
            .ok_or_else(|| Error::Unsupported("entropic mirror descent needs a (multi-)simplex".into()))?;
        Self::with_start(set, schedule, DenseVector::filled(rows * cols, 1.0 / cols as f64))
    }

    pub fn with_start(set: &FeasibleSet, schedule: RateSchedule, x0: DenseVector) -> Result<Self> {
        schedule.validate()?;
        let (_, cols) = set
            .simplex_rows()
            .ok_or_else(|| Error::Unsupported("entropic mirror descent needs a (multi-)simplex".into()))?;
        check_dim(set.dim(), x0.len())?;
        if !set.contains(&x0, 1e-9) || x0.iter().any(|v| *v <= 0.0) {
            return Err(Error::Domain("entropic mirror descent needs a strictly positive start".into()));
        }
        Ok(Self { cols, schedule, x: x0, t: 0, grad_sq_sum: 0.0, guard: SlotGuard::default() })
    }

    pub fn current(&self) -> &DenseVector {
        &self.x
    }

    pub fn step_with_rate(&mut self, g: &[f64], eta: f64) -> Result<DenseVector> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::Parameter(format!("learning rate must be positive, got {eta}")));
        }
        check_dim(self.x.len(), g.len())?;
        check_finite(g, "gradient")?;
        self.x = entropic_step(&self.x, g, eta, self.cols);
        Ok(self.x.clone())
    }
}

/// `argmin_y ⟨g, y⟩ + KL(y, x)/η` on each simplex row.
pub fn entropic_step(x: &[f64], g: &[f64], eta: f64, cols: usize) -> DenseVector {
    let scores: Vec<f64> = x.iter().zip(g).map(|(xi, gi)| xi.max(ENTROPIC_FLOOR).ln() - eta * gi).collect();
    softmax_rows(&scores, cols)
}

impl OnlineLearner for OmdEntropic {
    fn dim(&self) -> usize {
        self.x.len()
    }

    fn decide(&mut self, _hint: Option<&[f64]>) -> Result<DenseVector> {
        self.guard.decided();
        Ok(self.x.clone())
    }

    fn observe(&mut self, g: &[f64]) -> Result<()> {
        check_dim(self.x.len(), g.len())?;
        check_finite(g, "gradient")?;
        self.guard.observing()?;
        self.t += 1;
        self.grad_sq_sum += dot(g, g);
        if let Some(eta) = self.schedule.rate(self.t, self.grad_sq_sum) {
            self.step_with_rate(g, eta)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    /// `r_{1:t}(x) = σ_{1:t} ||x||²`
    Quadratic,
    /// `r_{1:t}(x) = Σ_τ (σ_τ/2) ||x − x_τ||²`
    QuadraticProximal,
    /// `r_{1:t}(x) = σ_{1:t} Σ x ln x`, on (multi-)simplices
    Entropic,
}

/// Closed-form linearized FTRL decision.
///
/// `anchor_sum` is `Σ_τ σ_τ x_τ` and is only read by the proximal regularizer.
/// A zero `sigma_sum` falls back to the linear minimizer of `g_sum + extra`.
pub fn ftrl_decision(
    set: &FeasibleSet,
    reg: Regularizer,
    sigma_sum: f64,
    g_sum: &[f64],
    extra: &[f64],
    anchor_sum: &[f64],
) -> Result<DenseVector> {
    check_dim(set.dim(), g_sum.len())?;
    check_dim(set.dim(), extra.len())?;
    if !(sigma_sum >= 0.0) || !sigma_sum.is_finite() {
        return Err(Error::Parameter(format!("aggregate regularization must be finite and >= 0, got {sigma_sum}")));
    }
    let total: Vec<f64> = g_sum.iter().zip(extra).map(|(a, b)| a + b).collect();
    if sigma_sum == 0.0 {
        // on a box the vanishing-regularization limit of the quadratic rule
        // keeps zero-cost coordinates at the projection of the origin
        if let (Regularizer::Quadratic, FeasibleSet::Box { lower, upper }) = (reg, set) {
            return Ok((0..total.len())
                .map(|i| match total[i].partial_cmp(&0.0) {
                    Some(std::cmp::Ordering::Less) => upper[i],
                    Some(std::cmp::Ordering::Greater) => lower[i],
                    _ => 0.0f64.clamp(lower[i], upper[i]),
                })
                .collect());
        }
        if let (Regularizer::Entropic, Some((_, cols))) = (reg, set.simplex_rows()) {
            // softmax limit: uniform over each row's minimizers
            return Ok(total
                .chunks(cols)
                .flat_map(|row| {
                    let m = row.iter().cloned().fold(f64::INFINITY, f64::min);
                    let k = row.iter().filter(|v| **v == m).count() as f64;
                    row.iter().map(move |v| if *v == m { 1.0 / k } else { 0.0 })
                })
                .collect());
        }
        return set.linear_minimizer(&total);
    }
    match reg {
        Regularizer::Quadratic => {
            let target: Vec<f64> = total.iter().map(|v| -v / (2.0 * sigma_sum)).collect();
            set.project(&target)
        }
        Regularizer::QuadraticProximal => {
            check_dim(set.dim(), anchor_sum.len())?;
            let target: Vec<f64> = anchor_sum.iter().zip(&total).map(|(a, v)| (a - v) / sigma_sum).collect();
            set.project(&target)
        }
        Regularizer::Entropic => {
            let (_, cols) = set
                .simplex_rows()
                .ok_or_else(|| Error::Unsupported("entropic regularizer needs a (multi-)simplex".into()))?;
            let scores: Vec<f64> = total.iter().map(|v| -v / sigma_sum).collect();
            Ok(softmax_rows(&scores, cols))
        }
    }
}

/// Aggregate regularization schedules `σ_{1:t}` for non-optimistic FTRL.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FtrlSchedule {
    /// `L√T/D`
    FixedHorizon { diameter: f64, lipschitz: f64, horizon: usize },
    /// `L√t/(√2 D)`
    Anytime { diameter: f64, lipschitz: f64 },
    /// `√(Σ_{τ≤t} ||g_τ||²)/(√2 D)`
    GradientAdaptive { diameter: f64 },
}

impl FtrlSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            FtrlSchedule::FixedHorizon { diameter, lipschitz, horizon } => diameter > 0.0 && lipschitz > 0.0 && horizon > 0,
            FtrlSchedule::Anytime { diameter, lipschitz } => diameter > 0.0 && lipschitz > 0.0,
            FtrlSchedule::GradientAdaptive { diameter } => diameter > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("FTRL schedule needs positive parameters: {self:?}")))
        }
    }

    pub fn sigma_sum(&self, t: usize, grad_sq_sum: f64) -> f64 {
        let s2 = std::f64::consts::SQRT_2;
        match *self {
            FtrlSchedule::FixedHorizon { diameter, lipschitz, horizon } => lipschitz * (horizon as f64).sqrt() / diameter,
            FtrlSchedule::Anytime { diameter, lipschitz } => lipschitz * (t as f64).sqrt() / (s2 * diameter),
            FtrlSchedule::GradientAdaptive { diameter } => (1.0 / (s2 * diameter)) * grad_sq_sum.sqrt(),
        }
    }
}

/// Linearized FTRL with a closed-form regularizer.
#[derive(Debug, Clone)]
pub struct Ftrl {
    set: FeasibleSet,
    reg: Regularizer,
    schedule: FtrlSchedule,
    g_sum: DenseVector,
    grad_sq_sum: f64,
    t: usize,
    sigma: f64,
    anchor_sum: DenseVector,
    last: Option<DenseVector>,
    guard: SlotGuard,
}

impl Ftrl {
    pub fn new(set: FeasibleSet, reg: Regularizer, schedule: FtrlSchedule) -> Result<Self> {
        schedule.validate()?;
        if reg == Regularizer::Entropic && set.simplex_rows().is_none() {
            return Err(Error::Config("entropic regularizer needs a (multi-)simplex".into()));
        }
        let n = set.dim();
        let sigma = schedule.sigma_sum(0, 0.0);
        // a constant schedule regularizes from slot 1: anchor it at Π(0)
        let anchor_sum = set.project(&vec![0.0; n])?.scaled(sigma);
        Ok(Self {
            set,
            reg,
            schedule,
            g_sum: DenseVector::zeros(n),
            grad_sq_sum: 0.0,
            t: 0,
            sigma,
            anchor_sum,
            last: None,
            guard: SlotGuard::default(),
        })
    }

    pub fn gradient_sum(&self) -> &DenseVector {
        &self.g_sum
    }

    /// Decision with an additional linear term added to the gradient sum.
    pub fn decide_with_extra(&mut self, extra: &[f64]) -> Result<DenseVector> {
        let x = ftrl_decision(&self.set, self.reg, self.sigma, &self.g_sum, extra, &self.anchor_sum)?;
        self.last = Some(x.clone());
        self.guard.decided();
        Ok(x)
    }
}

impl OnlineLearner for Ftrl {
    fn dim(&self) -> usize {
        self.g_sum.len()
    }

    fn decide(&mut self, _hint: Option<&[f64]>) -> Result<DenseVector> {
        let zeros = vec![0.0; self.g_sum.len()];
        self.decide_with_extra(&zeros)
    }

    fn observe(&mut self, g: &[f64]) -> Result<()> {
        check_dim(self.g_sum.len(), g.len())?;
        check_finite(g, "gradient")?;
        self.guard.observing()?;
        self.g_sum.add_scaled(1.0, g);
        self.grad_sq_sum += dot(g, g);
        self.t += 1;
        let next = self.schedule.sigma_sum(self.t, self.grad_sq_sum);
        if let Some(x) = &self.last {
            self.anchor_sum.add_scaled(next - self.sigma, x);
        }
        self.sigma = next;
        Ok(())
    }

    fn sigma_sum(&self) -> Option<f64> {
        Some(self.sigma)
    }
}

/// Follow-the-leader: the linear minimizer of the gradient sum.
#[derive(Debug, Clone)]
pub struct Ftl {
    set: FeasibleSet,
    g_sum: DenseVector,
    guard: SlotGuard,
}

impl Ftl {
    pub fn new(set: FeasibleSet) -> Self {
        let n = set.dim();
        Self { set, g_sum: DenseVector::zeros(n), guard: SlotGuard::default() }
    }
}

impl OnlineLearner for Ftl {
    fn dim(&self) -> usize {
        self.g_sum.len()
    }

    fn decide(&mut self, _hint: Option<&[f64]>) -> Result<DenseVector> {
        self.guard.decided();
        self.set.linear_minimizer(&self.g_sum)
    }

    fn observe(&mut self, g: &[f64]) -> Result<()> {
        check_dim(self.g_sum.len(), g.len())?;
        check_finite(g, "gradient")?;
        self.guard.observing()?;
        self.g_sum.add_scaled(1.0, g);
        Ok(())
    }
}

/// Follow-the-perturbed-leader over `{x ∈ {0,1}^N : Σx ≤ C}` in maximization
/// orientation. The perturbation `γ ~ N(0, I)` is drawn once.
#[derive(Debug, Clone)]
pub struct Ftpl {
    cap: usize,
    reward_sum: DenseVector,
    gamma: DenseVector,
}

impl Ftpl {
    pub fn new<R: Rng + ?Sized>(dim: usize, cap: usize, rng: &mut R) -> Result<Self> {
        let gamma = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Self::with_perturbation(dim, cap, gamma)
    }

    pub fn with_perturbation(dim: usize, cap: usize, gamma: DenseVector) -> Result<Self> {
        if cap > dim {
            return Err(Error::Config(format!("cache size {cap} exceeds library size {dim}")));
        }
        check_dim(dim, gamma.len())?;
        Ok(Self { cap, reward_sum: DenseVector::zeros(dim), gamma })
    }

    pub fn dim(&self) -> usize {
        self.reward_sum.len()
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn perturbation(&self) -> &DenseVector {
        &self.gamma
    }

    pub fn reward_sum(&self) -> &DenseVector {
        &self.reward_sum
    }

    /// Top-`C` indices of `q_{1:t} + extra + η γ`, sorted by score.
    pub fn select(&self, eta: f64, extra: Option<&[f64]>) -> Result<Vec<usize>> {
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(Error::Parameter(format!("perturbation scale must be >= 0, got {eta}")));
        }
        let mut scores: Vec<f64> = self.reward_sum.iter().zip(self.gamma.iter()).map(|(q, g)| q + eta * g).collect();
        if let Some(e) = extra {
            check_dim(scores.len(), e.len())?;
            for (s, v) in scores.iter_mut().zip(e) {
                *s += v;
            }
        }
        Ok(top_k(&scores, self.cap))
    }

    pub fn observe_reward(&mut self, q: &[f64]) -> Result<()> {
        check_dim(self.reward_sum.len(), q.len())?;
        check_finite(q, "reward")?;
        self.reward_sum.add_scaled(1.0, q);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_argmin_1d<F: Fn(f64) -> f64>(lo: f64, hi: f64, n: usize, f: F) -> f64 {
        (0..=n)
            .map(|i| lo + (hi - lo) * i as f64 / n as f64)
            .fold((f64::INFINITY, 0.0), |(bv, bx), x| {
                let v = f(x);
                if v < bv {
                    (v, x)
                } else {
                    (bv, bx)
                }
            })
            .1
    }

    #[test]
    fn ogd_zero_gradient_keeps_point() {
        let set = FeasibleSet::uniform_box(2, -1.0, 1.0).unwrap();
        let mut ogd = Ogd::with_start(set, RateSchedule::Anytime { diameter: 1.0, lipschitz: 1.0 }, vec![0.3, -0.2].into()).unwrap();
        assert_eq!(ogd.step_with_rate(&[0.0, 0.0], 0.7).unwrap().as_slice(), &[0.3, -0.2]);
    }

    #[test]
    fn ogd_step_matches_grid_oracle() {
        let set = FeasibleSet::uniform_box(2, -1.0, 1.0).unwrap();
        let mut ogd = Ogd::with_start(set, RateSchedule::Adagrad { diameter: 1.0 }, DenseVector::zeros(2)).unwrap();
        let x = ogd.step_with_rate(&[1.0, -2.0], 0.5).unwrap();
        // the projected step minimizes ⟨g, y⟩ + ||y − x||²/(2η) per coordinate on a box
        let o0 = grid_argmin_1d(-1.0, 1.0, 2000, |y| y + y * y);
        let o1 = grid_argmin_1d(-1.0, 1.0, 2000, |y| -2.0 * y + y * y);
        assert!((x[0] - o0).abs() < 1e-3 && (x[1] - o1).abs() < 1e-3);
        assert_eq!(x.as_slice(), &[-0.5, 1.0]);
    }

    #[test]
    fn ogd_clamps_and_rejects_bad_rate() {
        let set = FeasibleSet::uniform_box(1, -1.0, 1.0).unwrap();
        let mut ogd = Ogd::with_start(set, RateSchedule::Adagrad { diameter: 2.0 }, DenseVector::zeros(1)).unwrap();
        assert_eq!(ogd.step_with_rate(&[1.0], 5.0).unwrap().as_slice(), &[-1.0]);
        assert!(matches!(ogd.step_with_rate(&[1.0], 0.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn adagrad_skips_zero_gradients() {
        let set = FeasibleSet::uniform_box(1, -1.0, 1.0).unwrap();
        let mut ogd = Ogd::with_start(set, RateSchedule::Adagrad { diameter: 2.0 }, vec![0.5].into()).unwrap();
        ogd.decide(None).unwrap();
        ogd.observe(&[0.0]).unwrap();
        assert_eq!(ogd.current().as_slice(), &[0.5]);
    }

    #[test]
    fn observe_without_decide_is_protocol_error() {
        let set = FeasibleSet::uniform_box(1, -1.0, 1.0).unwrap();
        let mut ogd = Ogd::new(set, RateSchedule::Adagrad { diameter: 2.0 }).unwrap();
        assert!(matches!(ogd.observe(&[1.0]), Err(Error::Protocol(_))));
    }

    #[test]
    fn omd_entropic_examples() {
        let set = FeasibleSet::unit_simplex(2).unwrap();
        let sched = RateSchedule::Anytime { diameter: 1.0, lipschitz: 1.0 };
        let mut omd = OmdEntropic::new(&set, sched).unwrap();
        let x = omd.step_with_rate(&[2.0_f64.ln(), 0.0], 1.0).unwrap();
        assert!((x[0] - 1.0 / 3.0).abs() < 1e-12 && (x[1] - 2.0 / 3.0).abs() < 1e-12);
        // grid oracle on ⟨g,y⟩ + KL(y, x0)/η with y = (p, 1-p)
        let p = grid_argmin_1d(1e-9, 1.0 - 1e-9, 100_000, |p| {
            p * 2.0_f64.ln() + p * (p / 0.5).ln() + (1.0 - p) * ((1.0 - p) / 0.5).ln()
        });
        assert!((x[0] - p).abs() < 1e-4);
        let y = omd.step_with_rate(&[0.3, 0.3], 2.0).unwrap();
        assert!((y[0] - x[0]).abs() < 1e-12);
        assert!(matches!(
            OmdEntropic::new(&FeasibleSet::uniform_box(2, 0.0, 1.0).unwrap(), sched),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn omd_matches_grid_oracle_three_dims() {
        let set = FeasibleSet::unit_simplex(3).unwrap();
        let x0: DenseVector = vec![0.2, 0.5, 0.3].into();
        let mut omd = OmdEntropic::with_start(&set, RateSchedule::Adagrad { diameter: 1.0 }, x0.clone()).unwrap();
        let g = [0.4, -0.3, 0.1];
        let x = omd.step_with_rate(&g, 0.8).unwrap();
        let mut best = (f64::INFINITY, [0.0; 3]);
        let n = 600;
        for i in 1..n {
            for j in 1..(n - i) {
                let y = [i as f64 / n as f64, j as f64 / n as f64, (n - i - j) as f64 / n as f64];
                let v: f64 = (0..3).map(|k| g[k] * y[k] + y[k] * (y[k] / x0[k]).ln() / 0.8).sum();
                if v < best.0 {
                    best = (v, y);
                }
            }
        }
        for k in 0..3 {
            assert!((x[k] - best.1[k]).abs() < 3e-3);
        }
    }

    #[test]
    fn ftrl_decision_examples() {
        let cs = FeasibleSet::capped_simplex(3, 1.0).unwrap();
        let z = [0.0; 3];
        let x = ftrl_decision(&cs, Regularizer::Quadratic, 1.0, &z, &z, &z).unwrap();
        assert_eq!(x, cs.project(&z).unwrap());
        let x = ftrl_decision(&cs, Regularizer::Quadratic, 1.0, &[-2.0, 0.0, 0.0], &z, &z).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && x[1].abs() < 1e-12 && x[2].abs() < 1e-12);
        let s = FeasibleSet::unit_simplex(2).unwrap();
        let x = ftrl_decision(&s, Regularizer::Entropic, 1.0, &[2.0_f64.ln(), 0.0], &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        let p = grid_argmin_1d(1e-9, 1.0 - 1e-9, 100_000, |p| {
            p * 2.0_f64.ln() + p * p.ln() + (1.0 - p) * (1.0 - p).ln()
        });
        assert!((x[0] - 1.0 / 3.0).abs() < 1e-12 && (x[0] - p).abs() < 1e-4);
    }

    #[test]
    fn ftl_examples() {
        let set = FeasibleSet::uniform_box(1, -1.0, 1.0).unwrap();
        let mut ftl = Ftl::new(set);
        assert_eq!(ftl.decide(None).unwrap().as_slice(), &[-1.0]);
        ftl.observe(&[1.0]).unwrap();
        assert_eq!(ftl.decide(None).unwrap().as_slice(), &[-1.0]);
    }

    #[test]
    fn ftl_ping_pong() {
        let set = FeasibleSet::uniform_box(1, -1.0, 1.0).unwrap();
        let mut ftl = Ftl::new(set);
        let mut xs = Vec::new();
        for t in 1..=10 {
            xs.push(ftl.decide(None).unwrap()[0]);
            ftl.observe(&[(-1.0f64).powi(t)]).unwrap();
        }
        for w in xs.windows(2) {
            assert_eq!(w[0], -w[1]);
            assert_eq!(w[0].abs(), 1.0);
        }
    }

    #[test]
    fn ftpl_examples() {
        let mut f = Ftpl::with_perturbation(3, 1, DenseVector::zeros(3)).unwrap();
        f.observe_reward(&[5.0, 3.0, 1.0]).unwrap();
        assert_eq!(f.select(0.0, None).unwrap(), vec![0]);
        let mut f = Ftpl::with_perturbation(3, 1, DenseVector::zeros(3)).unwrap();
        f.observe_reward(&[5.0, 5.0, 1.0]).unwrap();
        assert_eq!(f.select(0.0, None).unwrap(), vec![0]);
        let mut f = Ftpl::with_perturbation(3, 2, vec![0.1, -0.2, 0.0].into()).unwrap();
        f.observe_reward(&[5.0, 3.0, 1.0]).unwrap();
        let mut got = f.select(10.0, None).unwrap();
        got.sort();
        // direct sort oracle over (6, 1, 1)
        let scores = [6.0, 1.0, 1.0];
        let mut idx: Vec<usize> = (0..3).collect();
        idx.sort_by(|a, b| scores[*b].partial_cmp(&scores[*a]).unwrap().then(a.cmp(b)));
        let mut want = idx[..2].to_vec();
        want.sort();
        assert_eq!(got, want);
        assert!(matches!(Ftpl::with_perturbation(2, 3, DenseVector::zeros(2)), Err(Error::Config(_))));
    }

    #[test]
    fn ftrl_vs_ftl_alternating_costs() {
        let set = FeasibleSet::uniform_box(1, -1.0, 1.0).unwrap();
        let horizon = 50;
        let mut ftl = Ftl::new(set.clone());
        let mut ftrl = Ftrl::new(set, Regularizer::Quadratic, FtrlSchedule::Anytime { diameter: 2.0, lipschitz: 1.0 }).unwrap();
        let (mut c_ftl, mut c_ftrl, mut c_sum) = (0.0, 0.0, 0.0);
        for t in 1..=horizon {
            let c = (-1.0f64).powi(t);
            c_ftl += c * ftl.decide(None).unwrap()[0];
            c_ftrl += c * ftrl.decide(None).unwrap()[0];
            ftl.observe(&[c]).unwrap();
            ftrl.observe(&[c]).unwrap();
            c_sum += c;
        }
        let best = -c_sum.abs();
        assert!((c_ftl - best) / horizon as f64 >= 0.4);
        assert!((c_ftrl - best) / horizon as f64 <= 0.2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn ogd_anytime_bound_holds(seed in 0u64..1_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 5;
            let set = FeasibleSet::uniform_box(n, 0.0, 1.0).unwrap();
            let d = set.diameter(crate::sets::NormKind::L2).unwrap();
            let mut ogd = Ogd::new(set, RateSchedule::Anytime { diameter: d, lipschitz: 1.0 }).unwrap();
            let mut g_sum = vec![0.0; n];
            let mut cost = 0.0;
            for t in 1..=400usize {
                let x = ogd.decide(None).unwrap();
                let mut g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let gn = crate::sets::norm(&g, crate::sets::NormKind::L2);
                if gn > 1.0 { g.iter_mut().for_each(|v| *v /= gn); }
                cost += dot(&g, &x);
                for (a, b) in g_sum.iter_mut().zip(&g) { *a += b; }
                ogd.observe(&g).unwrap();
                let best: f64 = g_sum.iter().map(|v| v.min(0.0)).sum();
                prop_assert!(cost - best <= 1.5 * d * (t as f64).sqrt() + 1e-9);
            }
        }

        #[test]
        fn learners_stay_feasible(seed in 0u64..1_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let set = FeasibleSet::capped_simplex(6, 2.0).unwrap();
            let simplex = FeasibleSet::multi_simplex(2, 3).unwrap();
            let sched = RateSchedule::Anytime { diameter: 2.0, lipschitz: 1.0 };
            let fs = FtrlSchedule::Anytime { diameter: 2.0, lipschitz: 1.0 };
            let mut ls: Vec<(Box<dyn OnlineLearner>, FeasibleSet)> = vec![
                (Box::new(Ogd::new(set.clone(), sched).unwrap()), set.clone()),
                (Box::new(OmdEntropic::new(&simplex, sched).unwrap()), simplex.clone()),
                (Box::new(Ftrl::new(set.clone(), Regularizer::Quadratic, fs).unwrap()), set.clone()),
                (Box::new(Ftrl::new(set.clone(), Regularizer::QuadraticProximal, fs).unwrap()), set.clone()),
                (Box::new(Ftrl::new(simplex.clone(), Regularizer::Entropic, fs).unwrap()), simplex.clone()),
                (Box::new(Ftl::new(set.clone())), set.clone()),
            ];
            for _ in 0..30 {
                let g: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
                for (l, s) in ls.iter_mut() {
                    let x = l.decide(None).unwrap();
                    prop_assert!(s.contains(&x, 1e-9));
                    l.observe(&g).unwrap();
                }
            }
        }

        #[test]
        fn gradient_sum_is_exact(gs in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 3), 1..50)) {
            let set = FeasibleSet::uniform_box(3, -1.0, 1.0).unwrap();
            let mut f = Ftrl::new(set, Regularizer::Quadratic, FtrlSchedule::GradientAdaptive { diameter: 1.0 }).unwrap();
            let mut expect = [0.0f64; 3];
            for g in &gs {
                f.decide(None).unwrap();
                f.observe(g).unwrap();
                for k in 0..3 { expect[k] += g[k]; }
            }
            for k in 0..3 {
                prop_assert_eq!(f.gradient_sum()[k].to_bits(), expect[k].to_bits());
            }
        }
    }
}
