//! Long-term α-fair load assignment: the conjugate proxy, a primal-dual
//! optimistic learner over assignment multi-simplices and fairness regret.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::learners::{OnlineLearner, Regularizer};
use crate::optimistic::Oftrl;
use crate::predictors::ErrorMode;
use crate::sets::{DenseVector, FeasibleSet, NormKind};
use crate::solver::{projected_gradient, SolverOptions};

/// `(u^{1−α} − 1)/(1 − α)`, or `ln u` when `α = 1`.
pub fn f_alpha(u: f64, alpha: f64) -> Result<f64> {
    if !(u > 0.0) {
        return Err(Error::Domain(format!("fairness utility must be positive, got {u}")));
    }
    if alpha == 1.0 {
        Ok(u.ln())
    } else {
        Ok((u.powf(1.0 - alpha) - 1.0) / (1.0 - alpha))
    }
}

pub fn big_f_alpha(u: &[f64], alpha: f64) -> Result<f64> {
    u.iter().map(|v| f_alpha(*v, alpha)).sum()
}

fn dual_magnitudes(theta: &[f64]) -> Result<Vec<f64>> {
    theta
        .iter()
        .map(|t| {
            if *t < 0.0 {
                Ok(-t)
            } else {
                Err(Error::Domain(format!("dual variables must be negative, got {t}")))
            }
        })
        .collect()
}

/// Conjugate proxy `Ψ(θ, u) = Σ h_α(−θ_i) − ⟨θ, u⟩` whose minimum over `θ < 0`
/// is `F_α(u)`.
pub fn proxy_psi(theta: &[f64], u: &[f64], alpha: f64) -> Result<f64> {
    check_dim(theta.len(), u.len())?;
    let s = dual_magnitudes(theta)?;
    let mut v = 0.0;
    for (si, ui) in s.iter().zip(u) {
        let h = if alpha == 1.0 {
            -1.0 - si.ln()
        } else if alpha == 0.0 {
            // the α → 0 limit pins θ = −1
            -1.0
        } else {
            (alpha * si.powf(1.0 - 1.0 / alpha) - 1.0) / (1.0 - alpha)
        };
        v += h + si * ui;
    }
    Ok(v)
}

/// `∂Ψ/∂θ_i = (−θ_i)^{−1/α} − u_i`.
pub fn proxy_grad_theta(theta: &[f64], u: &[f64], alpha: f64) -> Result<DenseVector> {
    check_dim(theta.len(), u.len())?;
    let s = dual_magnitudes(theta)?;
    Ok(s.iter()
        .zip(u)
        .map(|(si, ui)| if alpha == 0.0 { 1.0 - ui } else { si.powf(-1.0 / alpha) - ui })
        .collect())
}

/// An O-RAN assignment instance: `users` vBSs, `servers` processing units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessProblem {
    pub users: usize,
    pub servers: usize,
    pub alpha: f64,
    pub u_min: f64,
    pub u_max: f64,
}

impl FairnessProblem {
    pub fn new(users: usize, servers: usize, alpha: f64, u_min: f64, u_max: f64) -> Result<Self> {
        if users == 0 || servers < 2 {
            return Err(Error::Parameter("need at least one vBS and two servers".into()));
        }
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::Parameter(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        if !(u_min > 0.0) || !(u_max > u_min) || !u_max.is_finite() {
            return Err(Error::Parameter("utility range must satisfy 0 < u_min < u_max".into()));
        }
        Ok(Self { users, servers, alpha, u_min, u_max })
    }

    pub fn dim(&self) -> usize {
        self.users * self.servers
    }

    pub fn assignment_set(&self) -> Result<FeasibleSet> {
        FeasibleSet::multi_simplex(self.users, self.servers)
    }

    /// `(θ_lo, θ_hi) = (u_max^{−α}, u_min^{−α})`, so that `θ* = −u^{−α}` is
    /// always inside `Θ = [−θ_hi, −θ_lo]^I`.
    pub fn theta_bounds(&self) -> (f64, f64) {
        (self.u_max.powf(-self.alpha), self.u_min.powf(-self.alpha))
    }

    pub fn dual_set(&self) -> Result<FeasibleSet> {
        let (lo, hi) = self.theta_bounds();
        FeasibleSet::uniform_box(self.users, -hi, -lo)
    }

    /// Per-vBS utility `clamp(λ_i Σ_j x_ij min(1, C_j/Λ), u_min, u_max)`.
    pub fn utility(&self, loads: &[f64], caps: &[f64], x: &[f64]) -> Result<DenseVector> {
        let d = self.discounts(loads, caps)?;
        check_dim(self.dim(), x.len())?;
        Ok((0..self.users)
            .map(|i| {
                let raw: f64 = (0..self.servers).map(|j| x[i * self.servers + j] * d[j]).sum::<f64>() * loads[i];
                raw.clamp(self.u_min, self.u_max)
            })
            .collect())
    }

    fn discounts(&self, loads: &[f64], caps: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.users, loads.len())?;
        check_dim(self.servers, caps.len())?;
        if loads.iter().chain(caps).any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Parameter("loads and capacities must be finite and >= 0".into()));
        }
        let total: f64 = loads.iter().sum();
        Ok(caps.iter().map(|c| if total > 0.0 { (c / total).min(1.0) } else { 1.0 }).collect())
    }

    /// `∇_x Ψ(θ, x) = Σ_i (−θ_i) ∇u_i(x)`; clamped utilities contribute zero.
    pub fn proxy_grad_x(&self, theta: &[f64], loads: &[f64], caps: &[f64], x: &[f64]) -> Result<DenseVector> {
        check_dim(self.users, theta.len())?;
        let d = self.discounts(loads, caps)?;
        check_dim(self.dim(), x.len())?;
        let s = dual_magnitudes(theta)?;
        let mut g = DenseVector::zeros(self.dim());
        for i in 0..self.users {
            let raw: f64 = (0..self.servers).map(|j| x[i * self.servers + j] * d[j]).sum::<f64>() * loads[i];
            if raw < self.u_min || raw > self.u_max {
                continue;
            }
            for j in 0..self.servers {
                g[i * self.servers + j] = s[i] * loads[i] * d[j];
            }
        }
        Ok(g)
    }
}

/// Slot outcome of the primal-dual learner.
#[derive(Debug, Clone, PartialEq)]
pub struct FairSlot {
    pub utility: DenseVector,
    /// Primal loss gradient `−∇_x Ψ_t(θ_t, x_t)`.
    pub primal_grad: DenseVector,
    /// Dual gradient `κ_t = ∇_θ Ψ_t(θ_t, x_t)`.
    pub dual_grad: DenseVector,
    pub proxy: f64,
}

/// Saddle-point learner: entropic OFTRL on assignments, quadratic OFTRL on
/// the conjugate variables.
pub struct FairnessLearner {
    problem: FairnessProblem,
    primal: Oftrl,
    dual: Oftrl,
    x: Option<DenseVector>,
    theta: Option<DenseVector>,
}

impl FairnessLearner {
    pub fn new(problem: FairnessProblem) -> Result<Self> {
        let sigma_x = (2.0 / (problem.users as f64 * (problem.servers as f64).ln())).sqrt();
        let dual_set = problem.dual_set()?;
        let d_theta = dual_set.diameter(NormKind::L2)?;
        let sigma_theta = if d_theta > 0.0 { 1.0 / (std::f64::consts::SQRT_2 * d_theta) } else { 1.0 };
        Self::with_scales(problem, sigma_x, sigma_theta)
    }

    pub fn with_scales(problem: FairnessProblem, sigma_x: f64, sigma_theta: f64) -> Result<Self> {
        let primal = Oftrl::new(problem.assignment_set()?, Regularizer::Entropic, ErrorMode::SqLinf, sigma_x)?;
        let dual = Oftrl::new(problem.dual_set()?, Regularizer::Quadratic, ErrorMode::SqL2, sigma_theta)?;
        Ok(Self { problem, primal, dual, x: None, theta: None })
    }

    pub fn problem(&self) -> &FairnessProblem {
        &self.problem
    }

    pub fn primal_sigma_sum(&self) -> f64 {
        self.primal.current_sigma_sum()
    }

    pub fn dual_sigma_sum(&self) -> f64 {
        self.dual.current_sigma_sum()
    }

    /// Decides `(x_t, θ_t)`. With predicted loads and capacities for the
    /// slot, the primal hint is `−∇_x Ψ` at the previous `θ` and `x`, and the
    /// dual hint is `∇_θ Ψ` at the previous `θ` with the predicted utility.
    pub fn decide(&mut self, prediction: Option<(&[f64], &[f64])>) -> Result<(DenseVector, DenseVector)> {
        let hints = match (prediction, &self.x, &self.theta) {
            (Some((loads, caps)), Some(x), Some(theta)) => {
                let gx = self.problem.proxy_grad_x(theta, loads, caps, x)?.scaled(-1.0);
                let u = self.problem.utility(loads, caps, x)?;
                let gt = proxy_grad_theta(theta, &u, self.problem.alpha)?;
                Some((gx, gt))
            }
            _ => None,
        };
        let x = self.primal.decide(hints.as_ref().map(|h| h.0.as_slice()))?;
        let theta = self.dual.decide(hints.as_ref().map(|h| h.1.as_slice()))?;
        self.x = Some(x.clone());
        self.theta = Some(theta.clone());
        Ok((x, theta))
    }

    /// Reveals `λ_t` and `C_t`.
    pub fn observe(&mut self, loads: &[f64], caps: &[f64]) -> Result<FairSlot> {
        let (x, theta) = match (&self.x, &self.theta) {
            (Some(x), Some(t)) => (x.clone(), t.clone()),
            _ => return Err(Error::Protocol("observe called before the first decision".into())),
        };
        let utility = self.problem.utility(loads, caps, &x)?;
        let primal_grad = self.problem.proxy_grad_x(&theta, loads, caps, &x)?.scaled(-1.0);
        let dual_grad = proxy_grad_theta(&theta, &utility, self.problem.alpha)?;
        let proxy = proxy_psi(&theta, &utility, self.problem.alpha)?;
        self.primal.observe(&primal_grad)?;
        self.dual.observe(&dual_grad)?;
        Ok(FairSlot { utility, primal_grad, dual_grad, proxy })
    }
}

/// Best fixed assignment for `F_α` of the horizon-averaged utilities.
pub fn fairness_benchmark(
    problem: &FairnessProblem,
    slots: &[(Vec<f64>, Vec<f64>)],
    opts: SolverOptions,
) -> Result<(DenseVector, f64)> {
    if slots.is_empty() {
        return Err(Error::Parameter("benchmark needs at least one slot".into()));
    }
    let set = problem.assignment_set()?;
    let (n, m) = (problem.users, problem.servers);
    // per-slot effective rates λ_i d_j
    let mut rates = Vec::with_capacity(slots.len());
    for (loads, caps) in slots {
        let d = problem.discounts(loads, caps)?;
        rates.push((0..n * m).map(|k| loads[k / m] * d[k % m]).collect::<Vec<f64>>());
    }
    let t = slots.len() as f64;
    let alpha = problem.alpha;
    let (lo, hi) = (problem.u_min, problem.u_max);
    let objective = |x: &[f64], g: &mut [f64]| -> f64 {
        let mut mean = vec![0.0; n];
        let mut slope = vec![0.0; n * m];
        for r in &rates {
            for i in 0..n {
                let raw: f64 = (0..m).map(|j| x[i * m + j] * r[i * m + j]).sum();
                mean[i] += raw.clamp(lo, hi) / t;
                if (lo..=hi).contains(&raw) {
                    for j in 0..m {
                        slope[i * m + j] += r[i * m + j] / t;
                    }
                }
            }
        }
        let mut v = 0.0;
        for i in 0..n {
            v -= f_alpha(mean[i], alpha).unwrap_or(f64::NEG_INFINITY);
            let fp = mean[i].powf(-alpha);
            for j in 0..m {
                g[i * m + j] = -fp * slope[i * m + j];
            }
        }
        v
    };
    let start = DenseVector::filled(n * m, 1.0 / m as f64);
    let out = projected_gradient(&set, &start, objective, opts)?;
    // rows are independent: the best vertex per row is a valid restart
    let mut best = (out.x.clone(), -out.value);
    let vertex_value = |x: &[f64]| -> f64 {
        let mut g = vec![0.0; n * m];
        -objective(x, &mut g)
    };
    let mut vertex = DenseVector::zeros(n * m);
    for i in 0..n {
        let j = (0..m)
            .max_by(|&a, &b| {
                let ra: f64 = rates.iter().map(|r| r[i * m + a]).sum();
                let rb: f64 = rates.iter().map(|r| r[i * m + b]).sum();
                ra.partial_cmp(&rb).unwrap_or(std::cmp::Ordering::Equal).then(b.cmp(&a))
            })
            .unwrap_or(0);
        vertex[i * m + j] = 1.0;
    }
    let vv = vertex_value(&vertex);
    if vv > best.1 {
        best = (vertex, vv);
    }
    Ok(best)
}

/// `F_α(ū*) − F_α(ū)` for horizon-averaged utilities.
pub fn fairness_regret(benchmark_mean: &[f64], achieved_mean: &[f64], alpha: f64) -> Result<f64> {
    check_dim(benchmark_mean.len(), achieved_mean.len())?;
    Ok(big_f_alpha(benchmark_mean, alpha)? - big_f_alpha(achieved_mean, alpha)?)
}

/// Horizon-averaged utility vector of a fixed assignment.
pub fn mean_utility(problem: &FairnessProblem, slots: &[(Vec<f64>, Vec<f64>)], x: &[f64]) -> Result<DenseVector> {
    let mut mean = DenseVector::zeros(problem.users);
    for (loads, caps) in slots {
        mean.add_scaled(1.0 / slots.len() as f64, &problem.utility(loads, caps, x)?);
    }
    Ok(mean)
}
