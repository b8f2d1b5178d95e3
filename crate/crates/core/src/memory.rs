//! Online learning with memory: component-decomposed costs, forward
//! functions, hybrid predictions and an optimistic FTRL learner that treats
//! memory as gradient delay.

use std::collections::VecDeque;

use crate::error::{check_dim, Error, Result};
use crate::learners::{check_finite, ftrl_decision, Regularizer, SlotGuard};
use crate::optimistic::oftrl_sigma_sum;
use crate::predictors::{measure_error, ErrorMode};
use crate::sets::{dot, DenseVector, FeasibleSet};

/// A linear cost component `⟨grad, x⟩ + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearComponent {
    pub grad: DenseVector,
    pub offset: f64,
}

impl LinearComponent {
    pub fn new(grad: DenseVector, offset: f64) -> Self {
        Self { grad, offset }
    }

    pub fn zero(dim: usize) -> Self {
        Self { grad: DenseVector::zeros(dim), offset: 0.0 }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        dot(&self.grad, x) + self.offset
    }
}

/// Costs `f_t(x_{t−m}, …, x_t) = Σ_i f_t^i(x_{t−i})` for slots `1..=T`.
///
/// `components[t−1][i]` is `f_t^i`. Components whose argument slot falls
/// before slot 1 are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryCosts {
    pub memory: usize,
    pub dim: usize,
    pub components: Vec<Vec<LinearComponent>>,
}

impl MemoryCosts {
    pub fn new(memory: usize, dim: usize, components: Vec<Vec<LinearComponent>>) -> Result<Self> {
        for (t, row) in components.iter().enumerate() {
            check_dim(memory + 1, row.len())?;
            for c in row {
                check_dim(dim, c.grad.len())?;
                if !c.grad.is_finite() || !c.offset.is_finite() {
                    return Err(Error::Parameter(format!("slot {}: non-finite component", t + 1)));
                }
            }
        }
        Ok(Self { memory, dim, components })
    }

    pub fn horizon(&self) -> usize {
        self.components.len()
    }

    /// `f_t^i` for 1-based `t`, if inside the horizon.
    pub fn component(&self, t: usize, i: usize) -> Option<&LinearComponent> {
        if t == 0 || t > self.horizon() {
            return None;
        }
        self.components[t - 1].get(i)
    }

    /// `f_t` on the trajectory `xs[0] = x_1, …`.
    pub fn memory_cost(&self, t: usize, xs: &[DenseVector]) -> Result<f64> {
        let row = self
            .components
            .get(t.wrapping_sub(1))
            .ok_or_else(|| Error::Protocol(format!("slot {t} outside the horizon")))?;
        let mut v = 0.0;
        for (i, c) in row.iter().enumerate() {
            if t > i {
                let x = xs.get(t - i - 1).ok_or_else(|| Error::Protocol(format!("decision {} missing", t - i)))?;
                v += c.value(x);
            }
        }
        Ok(v)
    }

    /// `F_t(x) = Σ_i f_{t+i}^i(x)`, truncated at the horizon.
    pub fn forward_cost(&self, t: usize, x: &[f64]) -> f64 {
        (0..=self.memory).filter_map(|i| self.component(t + i, i)).map(|c| c.value(x)).sum()
    }

    /// `G_t = Σ_i g_{t+i}^{(i)}`, truncated at the horizon.
    pub fn forward_gradient(&self, t: usize) -> DenseVector {
        let mut g = DenseVector::zeros(self.dim);
        for i in 0..=self.memory {
            if let Some(c) = self.component(t + i, i) {
                g.add_scaled(1.0, &c.grad);
            }
        }
        g
    }

    /// Forward function from components that must all be present.
    pub fn forward_cost_strict(&self, t: usize, x: &[f64]) -> Result<f64> {
        if t == 0 || t + self.memory > self.horizon() {
            return Err(Error::Protocol(format!("components for slots {t}..={} are not all available", t + self.memory)));
        }
        Ok(self.forward_cost(t, x))
    }

    /// Total memory cost and total forward cost along a trajectory, and their
    /// difference.
    pub fn cost_equivalence(&self, xs: &[DenseVector]) -> Result<(f64, f64, f64)> {
        check_dim(self.horizon(), xs.len())?;
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for t in 1..=self.horizon() {
            lhs += self.memory_cost(t, xs)?;
            rhs += self.forward_cost(t, &xs[t - 1]);
        }
        Ok((lhs, rhs, lhs - rhs))
    }

    /// Gradient of `Σ_t f_t(x, …, x)` in `x`.
    pub fn constant_play_gradient(&self) -> DenseVector {
        let mut g = DenseVector::zeros(self.dim);
        for t in 1..=self.horizon() {
            for i in 0..=self.memory.min(t - 1) {
                g.add_scaled(1.0, &self.components[t - 1][i].grad);
            }
        }
        g
    }

    /// `Σ_t f_t(x, …, x)`.
    pub fn constant_play_cost(&self, x: &[f64]) -> f64 {
        let mut v = 0.0;
        for t in 1..=self.horizon() {
            for i in 0..=self.memory.min(t - 1) {
                v += self.components[t - 1][i].value(x);
            }
        }
        v
    }
}

/// Assembles `H_t` at the end of slot `t`: the observed part of every pending
/// forward gradient, forecasts for its unobserved components, and the full
/// forecast of `G_{t+1}`.
///
/// `observed(k, j)` returns `g_{k+j}^{(j)}` for `k + j ≤ t`; `forecast(s, j)`
/// predicts `g_s^{(j)}` for `s > t`. Slots before 1 are skipped.
pub fn build_hybrid<O, P>(t: usize, memory: usize, dim: usize, mut observed: O, mut forecast: P) -> Result<DenseVector>
where
    O: FnMut(usize, usize) -> Result<DenseVector>,
    P: FnMut(usize, usize) -> Result<DenseVector>,
{
    let mut h = DenseVector::zeros(dim);
    for back in (0..memory).rev() {
        // pending decision x_k with k in (t − m, t]
        let Some(k) = t.checked_sub(back).filter(|k| *k >= 1) else { continue };
        for j in 0..=memory {
            let v = if k + j <= t { observed(k, j)? } else { forecast(k + j, j)? };
            check_dim(dim, v.len())?;
            h.add_scaled(1.0, &v);
        }
    }
    for j in 0..=memory {
        let v = forecast(t + 1 + j, j)?;
        check_dim(dim, v.len())?;
        h.add_scaled(1.0, &v);
    }
    Ok(h)
}

/// Optimistic FTRL for costs with memory.
///
/// Decisions use `⟨G_{1:t−m} + H_t, x⟩ + σ_{1:t}||x||²`. The error of `H_t`
/// only becomes measurable `m` slots late, so the regularization counts each
/// still-open window at the worst case `(2(m+1)L)²` and replaces it by the
/// measured error once the window closes; `σ_{1:t}` never decreases.
#[derive(Debug, Clone)]
pub struct MemoryOftrl {
    set: FeasibleSet,
    memory: usize,
    sigma: f64,
    window_bound: f64,
    t: usize,
    fwd_sum: DenseVector,
    /// observed parts of `G_k` for decisions whose window is still open
    partial: VecDeque<(usize, DenseVector)>,
    /// completed `G_k`, kept while some open `H` still needs them
    complete: VecDeque<(usize, DenseVector)>,
    /// `H_τ` awaiting its error measurement
    open: VecDeque<(usize, DenseVector)>,
    eps_closed: f64,
    eps_hat: f64,
    last_err: Option<f64>,
    guard: SlotGuard,
}

impl MemoryOftrl {
    /// `lipschitz` bounds the l2 norm of every component gradient.
    pub fn new(set: FeasibleSet, memory: usize, sigma: f64, lipschitz: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Parameter(format!("sigma must be positive, got {sigma}")));
        }
        if !(lipschitz >= 0.0) || !lipschitz.is_finite() {
            return Err(Error::Parameter("lipschitz bound must be finite and >= 0".into()));
        }
        let n = set.dim();
        Ok(Self {
            set,
            memory,
            sigma,
            window_bound: (2.0 * (memory as f64 + 1.0) * lipschitz).powi(2),
            t: 0,
            fwd_sum: DenseVector::zeros(n),
            partial: VecDeque::new(),
            complete: VecDeque::new(),
            open: VecDeque::new(),
            eps_closed: 0.0,
            eps_hat: 0.0,
            last_err: None,
            guard: SlotGuard::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    /// Slots observed so far.
    pub fn slots(&self) -> usize {
        self.t
    }

    pub fn sigma_sum(&self) -> f64 {
        oftrl_sigma_sum(0.0, self.sigma, self.eps_hat)
    }

    /// Cautious error proxy currently driving the regularization.
    pub fn error_proxy(&self) -> f64 {
        self.eps_hat
    }

    /// Sum of measured errors of closed windows.
    pub fn closed_error_sum(&self) -> f64 {
        self.eps_closed
    }

    pub fn last_error(&self) -> Option<f64> {
        self.last_err
    }

    /// `G_{1:t−m}`.
    pub fn forward_gradient_sum(&self) -> &DenseVector {
        &self.fwd_sum
    }

    /// Decides `x_{t+1}`; `forecast(s, j)` predicts `g_s^{(j)}` for `s > t`.
    pub fn decide<P>(&mut self, forecast: P) -> Result<DenseVector>
    where
        P: FnMut(usize, usize) -> Result<DenseVector>,
    {
        let n = self.dim();
        let t = self.t;
        let partial = &self.partial;
        let h = build_hybrid(
            t,
            self.memory,
            n,
            |k, j| {
                // observed components of G_k are stored summed; lag 0 is
                // always observed for a pending decision, so it carries them
                if j > 0 {
                    return Ok(DenseVector::zeros(n));
                }
                Ok(partial.iter().find(|(s, _)| *s == k).map(|(_, g)| g.clone()).unwrap_or_else(|| DenseVector::zeros(n)))
            },
            forecast,
        )?;
        self.decide_with_hybrid(h)
    }

    /// Decides with an already assembled `H_t`.
    pub fn decide_with_hybrid(&mut self, h: DenseVector) -> Result<DenseVector> {
        check_dim(self.dim(), h.len())?;
        check_finite(&h, "hybrid prediction")?;
        let x = ftrl_decision(&self.set, Regularizer::Quadratic, self.sigma_sum(), &self.fwd_sum, &h, &[])?;
        self.open.push_back((self.t, h));
        self.guard.decided();
        Ok(x)
    }

    /// Reveals `f_t` as its component gradients `g_t^{(0)}, …, g_t^{(m)}`.
    pub fn observe(&mut self, components: &[DenseVector]) -> Result<()> {
        check_dim(self.memory + 1, components.len())?;
        for c in components {
            check_dim(self.dim(), c.len())?;
            check_finite(c, "component gradient")?;
        }
        self.guard.observing()?;
        self.t += 1;
        let t = self.t;
        let m = self.memory;
        for (i, c) in components.iter().enumerate() {
            if t <= i {
                continue;
            }
            let k = t - i;
            match self.partial.iter_mut().find(|(s, _)| *s == k) {
                Some((_, g)) => g.add_scaled(1.0, c),
                None => self.partial.push_back((k, c.clone())),
            }
        }
        // G_{t−m} is now complete
        if t > m {
            let k = t - m;
            if let Some(pos) = self.partial.iter().position(|(s, _)| *s == k) {
                let (_, g) = self.partial.remove(pos).expect("position is valid");
                self.fwd_sum.add_scaled(1.0, &g);
                self.complete.push_back((k, g));
            }
        }
        // H_τ closes once G_{τ+1} is complete
        while let Some((tau, _)) = self.open.front() {
            if tau + 1 + m > t {
                break;
            }
            let (tau, h) = self.open.pop_front().expect("front exists");
            let lo = (tau + 1).saturating_sub(m).max(1);
            let mut truth = DenseVector::zeros(self.dim());
            for (k, g) in &self.complete {
                if (lo..=tau + 1).contains(k) {
                    truth.add_scaled(1.0, g);
                }
            }
            let err = measure_error(&truth, &h, ErrorMode::SqL2)?;
            self.eps_closed += err;
            self.last_err = Some(err);
            // no later window reaches back past τ + 2 − m
            let keep_from = (tau + 2).saturating_sub(m);
            while self.complete.front().is_some_and(|(k, _)| *k < keep_from) {
                self.complete.pop_front();
            }
        }
        let proxy = if m == 0 { self.eps_closed } else { self.eps_closed + self.open.len() as f64 * self.window_bound };
        if proxy > self.eps_hat {
            self.eps_hat = proxy;
        }
        Ok(())
    }
}

/// Switching-cost run: linear costs `⟨c_t, x_t⟩ + ||x_t − x_{t−1}||₁`
/// linearized at the played trajectory into memory-one components.
#[derive(Debug, Clone)]
pub struct SwitchingRun {
    pub decisions: Vec<DenseVector>,
    pub raw_cost: f64,
    pub costs: MemoryCosts,
}

/// Plays `learner` (memory one) against `costs`, forecasting `g_s^{(0)}` by
/// `predictions[s−1]` and the switching components by zero.
pub fn run_switching(learner: &mut MemoryOftrl, costs: &[DenseVector], predictions: &[DenseVector]) -> Result<SwitchingRun> {
    if learner.memory() != 1 {
        return Err(Error::Config("switching costs have memory one".into()));
    }
    check_dim(costs.len(), predictions.len())?;
    let n = learner.dim();
    let mut decisions: Vec<DenseVector> = Vec::with_capacity(costs.len());
    let mut components = Vec::with_capacity(costs.len());
    let mut raw = 0.0;
    for t in 1..=costs.len() {
        let x = learner.decide(|s, j| {
            Ok(if j == 0 && s <= predictions.len() { predictions[s - 1].clone() } else { DenseVector::zeros(n) })
        })?;
        let c = &costs[t - 1];
        check_dim(n, c.len())?;
        let sign: DenseVector = match decisions.last() {
            Some(prev) => x.iter().zip(prev.iter()).map(|(a, b)| (a - b).signum() * f64::from(u8::from(a != b))).collect(),
            None => DenseVector::zeros(n),
        };
        raw += dot(c, &x) + decisions.last().map_or(0.0, |p| x.iter().zip(p.iter()).map(|(a, b)| (a - b).abs()).sum());
        let mut g0 = c.clone();
        g0.add_scaled(1.0, &sign);
        let g1 = sign.scaled(-1.0);
        learner.observe(&[g0.clone(), g1.clone()])?;
        components.push(vec![LinearComponent::new(g0, 0.0), LinearComponent::new(g1, 0.0)]);
        decisions.push(x);
    }
    Ok(SwitchingRun { decisions, raw_cost: raw, costs: MemoryCosts::new(1, n, components)? })
}
