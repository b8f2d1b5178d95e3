//! Online convex optimization with long-term constraints: lazy Lagrangians
//! with predictions.

use serde::{Deserialize, Serialize};

use crate::caching::dantzig_solve;
use crate::error::{check_dim, Error, Result};
use crate::learners::check_finite;
use crate::sets::{dot, DenseVector, FeasibleSet};
use crate::solver::{projected_gradient, SolverOptions};

/// A separable convex constraint `½Σ q_i x_i² + ⟨a, x⟩ + b ≤ 0` with `q ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub quad: Vec<f64>,
    pub lin: Vec<f64>,
    pub offset: f64,
}

impl Constraint {
    pub fn affine(lin: Vec<f64>, offset: f64) -> Self {
        let n = lin.len();
        Self { quad: vec![0.0; n], lin, offset }
    }

    pub fn diag_quadratic(quad: Vec<f64>, lin: Vec<f64>, offset: f64) -> Result<Self> {
        check_dim(lin.len(), quad.len())?;
        if quad.iter().any(|q| !(*q >= 0.0) || !q.is_finite()) {
            return Err(Error::Parameter("quadratic constraint coefficients must be finite and >= 0".into()));
        }
        Ok(Self { quad, lin, offset })
    }

    /// The all-zero constraint on `dim` variables.
    pub fn zero(dim: usize) -> Self {
        Self::affine(vec![0.0; dim], 0.0)
    }

    pub fn dim(&self) -> usize {
        self.lin.len()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut v = self.offset;
        for i in 0..x.len() {
            v += 0.5 * self.quad[i] * x[i] * x[i] + self.lin[i] * x[i];
        }
        v
    }

    pub fn gradient(&self, x: &[f64]) -> DenseVector {
        x.iter().enumerate().map(|(i, xi)| self.quad[i] * xi + self.lin[i]).collect()
    }
}

/// Values of every constraint in a bundle at `x`.
pub fn bundle_values(bundle: &[Constraint], x: &[f64]) -> DenseVector {
    bundle.iter().map(|c| c.value(x)).collect()
}

/// `||[Σ_t c_t(x_t)]₊||₂` from the accumulated constraint values.
pub fn violation(accumulated: &[f64]) -> f64 {
    accumulated.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt()
}

/// `[(Σ c_τ(z_τ) + c̃_{t+1}) / φ_{1:t}]₊`, the maximizer of the regularized
/// dual objective.
pub fn dual_closed_form(c_sum: &[f64], c_pred: &[f64], phi_sum: f64) -> Result<DenseVector> {
    check_dim(c_sum.len(), c_pred.len())?;
    if !(phi_sum > 0.0) {
        return Err(Error::Parameter("dual regularization must be positive".into()));
    }
    Ok(c_sum.iter().zip(c_pred).map(|(a, b)| ((a + b) / phi_sum).max(0.0)).collect())
}

/// `1/a_t = max(√Σ||c(z) − c̃(x̃)||², t^β) / a`.
pub fn dual_phi_sum(a: f64, beta: f64, t: usize, c_err_sq_sum: f64) -> f64 {
    c_err_sq_sum.sqrt().max((t as f64).powf(beta)) / a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LlpConfig {
    /// Primal scale `σ` in `σ_t = σ(√ξ_{1:t} − √ξ_{1:t−1})`.
    pub sigma: f64,
    /// Weight of the anchor term `(σ_0/2)||x − x_1||²`.
    pub sigma0: f64,
    pub a: f64,
    pub beta: f64,
}

impl Default for LlpConfig {
    fn default() -> Self {
        Self { sigma: 1.0, sigma0: 1.0, a: 1.0, beta: 0.5 }
    }
}

impl LlpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !(self.sigma0 > 0.0) || !(self.a > 0.0) {
            return Err(Error::Parameter("sigma, sigma0 and a must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Parameter(format!("beta must lie in [0,1), got {}", self.beta)));
        }
        Ok(())
    }
}

/// Sum of Lagrangian terms, kept as a separable quadratic `½Σh_i x_i² + ⟨b, x⟩`.
#[derive(Debug, Clone)]
struct DiagQuadratic {
    h: Vec<f64>,
    b: Vec<f64>,
}

impl DiagQuadratic {
    fn add_constraints(&mut self, mu: &[f64], bundle: &[Constraint]) {
        for (m, c) in mu.iter().zip(bundle) {
            if *m == 0.0 {
                continue;
            }
            for i in 0..self.h.len() {
                self.h[i] += m * c.quad[i];
                self.b[i] += m * c.lin[i];
            }
        }
    }

    fn add_linear(&mut self, g: &[f64]) {
        for (bi, gi) in self.b.iter_mut().zip(g) {
            *bi += gi;
        }
    }
}

fn minimize(set: &FeasibleSet, q: &DiagQuadratic, start: &[f64], opts: SolverOptions) -> Result<DenseVector> {
    let n = q.h.len();
    if q.h.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::Numerical("lagrangian curvature vanished".into()));
    }
    let unconstrained: Vec<f64> = (0..n).map(|i| -q.b[i] / q.h[i]).collect();
    // isotropic curvature: the minimizer is a Euclidean projection
    if q.h.iter().all(|h| *h == q.h[0]) {
        return set.project(&unconstrained);
    }
    if let FeasibleSet::Box { lower, upper } = set {
        return Ok((0..n).map(|i| unconstrained[i].clamp(lower[i], upper[i])).collect());
    }
    let out = projected_gradient(
        set,
        start,
        |x, g| {
            let mut v = 0.0;
            for i in 0..n {
                g[i] = q.h[i] * x[i] + q.b[i];
                v += 0.5 * q.h[i] * x[i] * x[i] + q.b[i] * x[i];
            }
            v
        },
        opts,
    )?;
    if !out.converged {
        return Err(Error::Numerical(format!(
            "inner solver stopped after {} iterations with residual {:.3e}",
            out.iterations, out.residual
        )));
    }
    Ok(out.x)
}

/// Per-slot diagnostics of the primal-dual learner.
#[derive(Debug, Clone, PartialEq)]
pub struct LlpSlot {
    pub x: DenseVector,
    pub z: DenseVector,
    pub xi: f64,
    pub mu_next: DenseVector,
    pub constraint_values: DenseVector,
}

/// Primal-dual optimistic learner for linear costs and separable convex
/// constraints. Each slot calls `decide` with the cost prediction, then
/// `observe` with the revealed cost gradient, constraints, and the next
/// slot's constraint predictions.
#[derive(Debug, Clone)]
pub struct Llp {
    set: FeasibleSet,
    cfg: LlpConfig,
    opts: SolverOptions,
    d: usize,
    history: DiagQuadratic,
    t: usize,
    mu: DenseVector,
    xi_sum: f64,
    c_err_sq_sum: f64,
    c_z_sum: DenseVector,
    c_x_sum: DenseVector,
    phi_sum: f64,
    pred_bundle: Vec<Constraint>,
    pred_value: DenseVector,
    pending: Option<(DenseVector, DenseVector)>,
    x_prev: DenseVector,
}

impl Llp {
    /// `x1` is the anchor and first-slot reference point; `d` the number of
    /// long-term constraints.
    pub fn new(set: FeasibleSet, cfg: LlpConfig, x1: &[f64], d: usize) -> Result<Self> {
        cfg.validate()?;
        let n = set.dim();
        check_dim(n, x1.len())?;
        let x1 = set.project(x1)?;
        let history = DiagQuadratic { h: vec![cfg.sigma0; n], b: x1.iter().map(|v| -cfg.sigma0 * v).collect() };
        Ok(Self {
            set,
            cfg,
            opts: SolverOptions::default(),
            d,
            history,
            t: 0,
            mu: DenseVector::zeros(d),
            xi_sum: 0.0,
            c_err_sq_sum: 0.0,
            c_z_sum: DenseVector::zeros(d),
            c_x_sum: DenseVector::zeros(d),
            phi_sum: 0.0,
            pred_bundle: vec![Constraint::zero(n); d],
            pred_value: DenseVector::zeros(d),
            pending: None,
            x_prev: x1,
        })
    }

    pub fn with_solver(mut self, opts: SolverOptions) -> Self {
        self.opts = opts;
        self
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    pub fn dual(&self) -> &DenseVector {
        &self.mu
    }

    pub fn slots(&self) -> usize {
        self.t
    }

    /// `σ_0 + σ√ξ_{1:t}`.
    pub fn sigma_sum(&self) -> f64 {
        self.cfg.sigma0 + self.cfg.sigma * self.xi_sum.sqrt()
    }

    pub fn xi_sum(&self) -> f64 {
        self.xi_sum
    }

    pub fn phi_sum(&self) -> f64 {
        self.phi_sum
    }

    /// `Σ_t c_t(x_t)` per constraint.
    pub fn constraint_sum(&self) -> &DenseVector {
        &self.c_x_sum
    }

    pub fn violation(&self) -> f64 {
        violation(&self.c_x_sum)
    }

    /// Primal decision `x_t` given the cost prediction `g̃_t`.
    pub fn decide(&mut self, g_tilde: &[f64]) -> Result<DenseVector> {
        let n = self.dim();
        check_dim(n, g_tilde.len())?;
        check_finite(g_tilde, "prediction")?;
        if self.pending.is_some() {
            return Err(Error::Protocol("decide called twice without observe".into()));
        }
        let mut obj = self.history.clone();
        obj.add_linear(g_tilde);
        obj.add_constraints(&self.mu, &self.pred_bundle);
        let x = minimize(&self.set, &obj, &self.x_prev, self.opts)?;
        self.pending = Some((x.clone(), g_tilde.into()));
        Ok(x)
    }

    /// Reveals `g_t` and `c_t`, computes the prescient point and the next dual.
    /// `next_pred` holds `c̃_{t+1}(·)`; its value at `x̃_{t+1} = x_t` feeds the
    /// dual update.
    pub fn observe(&mut self, g: &[f64], constraints: &[Constraint], next_pred: &[Constraint]) -> Result<LlpSlot> {
        let n = self.dim();
        check_dim(n, g.len())?;
        check_finite(g, "gradient")?;
        check_dim(self.d, constraints.len())?;
        check_dim(self.d, next_pred.len())?;
        for c in constraints.iter().chain(next_pred) {
            check_dim(n, c.dim())?;
        }
        let (x, g_tilde) = self
            .pending
            .take()
            .ok_or_else(|| Error::Protocol("observe called without a pending decision".into()))?;
        self.t += 1;

        // modulated prediction error
        let mut e: Vec<f64> = g.iter().zip(g_tilde.iter()).map(|(a, b)| a - b).collect();
        for k in 0..self.d {
            if self.mu[k] == 0.0 {
                continue;
            }
            let gc = constraints[k].gradient(&x);
            let gp = self.pred_bundle[k].gradient(&x);
            for i in 0..n {
                e[i] += self.mu[k] * (gc[i] - gp[i]);
            }
        }
        let xi = dot(&e, &e);
        let before = self.sigma_sum();
        self.xi_sum += xi;
        let sigma_t = self.sigma_sum() - before;

        // L_t(·, μ_t) joins the history
        for i in 0..n {
            self.history.h[i] += sigma_t;
            self.history.b[i] -= sigma_t * x[i];
        }
        self.history.add_linear(g);
        self.history.add_constraints(&self.mu, constraints);
        let z = minimize(&self.set, &self.history, &x, self.opts)?;

        let cx = bundle_values(constraints, &x);
        let cz = bundle_values(constraints, &z);
        self.c_x_sum.add_scaled(1.0, &cx);
        self.c_z_sum.add_scaled(1.0, &cz);
        self.c_err_sq_sum += cz.iter().zip(self.pred_value.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        self.phi_sum = dual_phi_sum(self.cfg.a, self.cfg.beta, self.t, self.c_err_sq_sum);

        let pred_value = bundle_values(next_pred, &x);
        self.mu = dual_closed_form(&self.c_z_sum, &pred_value, self.phi_sum)?;
        self.pred_value = pred_value;
        self.pred_bundle = next_pred.to_vec();
        self.x_prev = x.clone();
        Ok(LlpSlot { x, z, xi, mu_next: self.mu.clone(), constraint_values: cx })
    }
}

/// Best fixed point in `[0,1]^n` for linear costs `g_{1:T}` under a single
/// budget `⟨p, x⟩ ≤ B` with `p > 0`, and its total cost.
pub fn budget_benchmark(g_sum: &[f64], price: &[f64], budget: f64) -> Result<(DenseVector, f64)> {
    let profits: Vec<f64> = g_sum.iter().map(|v| -v).collect();
    let sol = dantzig_solve(budget, &profits, price)?;
    Ok((sol.x, -sol.objective))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{OnlineLearner, Regularizer};
    use crate::optimistic::Oftrl;
    use crate::predictors::ErrorMode;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn violation_examples() {
        assert_eq!(violation(&[-1.0, 0.0]), 0.0);
        assert_eq!(violation(&[3.0]), 3.0);
        assert_eq!(violation(&[2.0, -5.0]), 2.0);
    }

    #[test]
    fn dual_examples() {
        let mu = dual_closed_form(&[2.0], &[1.0], 4.0).unwrap();
        assert_eq!(mu.as_slice(), &[0.75]);
        // grid maximization of ⟨μ, 3⟩ − 2μ²
        let best = (0..=100_000).map(|k| k as f64 * 1e-5).fold((0.0, f64::NEG_INFINITY), |acc, m| {
            let v = 3.0 * m - 2.0 * m * m;
            if v > acc.1 { (m, v) } else { acc }
        });
        assert!((best.0 - 0.75).abs() < 1e-5);
        assert_eq!(dual_closed_form(&[-3.0], &[1.0], 1.0).unwrap().as_slice(), &[0.0]);
    }

    #[test]
    fn zero_history_returns_anchor() {
        let set = FeasibleSet::uniform_box(3, 0.0, 1.0).unwrap();
        let mut l = Llp::new(set, LlpConfig::default(), &[0.2, 0.5, 0.9], 1).unwrap();
        assert_eq!(l.decide(&[0.0; 3]).unwrap().as_slice(), &[0.2, 0.5, 0.9]);
        // all-zero functions keep the prescient point at the anchor too
        let s = l.observe(&[0.0; 3], &[Constraint::zero(3)], &[Constraint::zero(3)]).unwrap();
        assert_eq!(s.z.as_slice(), &[0.2, 0.5, 0.9]);
        assert_eq!(s.mu_next.as_slice(), &[0.0]);
    }

    #[test]
    fn never_violated_keeps_dual_zero() {
        let set = FeasibleSet::uniform_box(2, 0.0, 1.0).unwrap();
        let mut l = Llp::new(set, LlpConfig::default(), &[0.5, 0.5], 1).unwrap();
        let c = Constraint::affine(vec![1.0, 1.0], -5.0);
        for _ in 0..20 {
            l.decide(&[0.0, 0.0]).unwrap();
            let s = l.observe(&[-1.0, 0.5], &[c.clone()], &[Constraint::zero(2)]).unwrap();
            assert_eq!(s.mu_next.as_slice(), &[0.0]);
        }
    }

    #[test]
    fn exact_predictions_make_prescient_equal_primal() {
        let set = FeasibleSet::uniform_box(2, 0.0, 1.0).unwrap();
        let mut l = Llp::new(set, LlpConfig::default(), &[0.5, 0.5], 1).unwrap();
        let c = Constraint::affine(vec![1.0, 1.0], -1.0);
        for t in 0..15 {
            let g = [-(1.0 + (t % 3) as f64), -0.5];
            let x = l.decide(&g).unwrap();
            let s = l.observe(&g, &[c.clone()], &[c.clone()]).unwrap();
            assert!((s.xi) == 0.0);
            for i in 0..2 {
                assert!((s.z[i] - x[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reduces_to_proximal_oftrl_without_constraints() {
        let set = FeasibleSet::uniform_box(3, -1.0, 1.0).unwrap();
        let cfg = LlpConfig { sigma: 0.7, sigma0: 0.3, a: 1.0, beta: 0.5 };
        let x1 = [0.1, -0.2, 0.3];
        let mut l = Llp::new(set.clone(), cfg, &x1, 1).unwrap();
        let mut o = Oftrl::new(set, Regularizer::QuadraticProximal, ErrorMode::SqL2, 0.7)
            .unwrap()
            .with_initial_regularization(0.3, &x1)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..40 {
            let g: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let gt: Vec<f64> = g.iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
            let a = l.decide(&gt).unwrap();
            let b = o.decide(Some(&gt)).unwrap();
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() < 1e-12, "{a:?} vs {b:?}");
            }
            l.observe(&g, &[Constraint::zero(3)], &[Constraint::zero(3)]).unwrap();
            o.observe(&g).unwrap();
        }
    }

    #[test]
    fn slot_two_primal_matches_grid() {
        // X=[0,1], f(x)=x, c(x)=0.5−x, zero predictions, anchor 0.5
        let set = FeasibleSet::uniform_box(1, 0.0, 1.0).unwrap();
        let cfg = LlpConfig::default();
        let mut l = Llp::new(set, cfg, &[0.5], 1).unwrap();
        let c = Constraint::affine(vec![-1.0], 0.5);
        let x1 = l.decide(&[0.0]).unwrap();
        let s1 = l.observe(&[1.0], &[c.clone()], &[c.clone()]).unwrap();
        let x2 = l.decide(&[0.0]).unwrap();
        // independent oracle: rebuild the slot-2 objective by hand
        let xi1 = 1.0f64;
        let sigma1 = cfg.sigma * xi1.sqrt();
        let mu2 = s1.mu_next[0];
        let obj = |x: f64| {
            0.5 * cfg.sigma0 * (x - 0.5).powi(2) + 0.5 * sigma1 * (x - x1[0]).powi(2) + x + mu2 * (0.5 - x)
        };
        let grid = (0..=1_000_000).map(|k| k as f64 * 1e-6).fold((0.0, f64::INFINITY), |acc, x| {
            let v = obj(x);
            if v < acc.1 { (x, v) } else { acc }
        });
        assert!((x2[0] - grid.0).abs() < 1e-6, "{} vs {}", x2[0], grid.0);
        // the dual uses the prescient point and predicted c at x̃ = x_1
        let phi = dual_phi_sum(1.0, 0.5, 1, (0.5 - s1.z[0]).powi(2));
        let expect = ((0.5 - s1.z[0]) + (0.5 - x1[0])) / phi;
        assert!((mu2 - expect.max(0.0)).abs() < 1e-12);
    }

    #[test]
    fn prescient_closed_form_quadratic() {
        // non-isotropic curvature on a simplex forces the iterative path
        let set = FeasibleSet::unit_simplex(3).unwrap();
        let mut l = Llp::new(set.clone(), LlpConfig::default(), &[1.0 / 3.0; 3], 1).unwrap();
        let c = Constraint::diag_quadratic(vec![2.0, 0.0, 4.0], vec![0.0, 0.0, 0.0], 0.1).unwrap();
        // force a positive dual by predicting a violated constraint
        l.decide(&[0.0; 3]).unwrap();
        l.observe(&[0.0; 3], &[c.clone()], &[Constraint::affine(vec![0.0; 3], 3.0)]).unwrap();
        let mu = l.dual()[0];
        assert!(mu > 0.0);
        l.decide(&[0.0; 3]).unwrap();
        let g = [0.3, -0.2, 0.1];
        let s = l.observe(&g, &[c.clone()], &[Constraint::zero(3)]).unwrap();
        // oracle: KKT on the simplex for Σ½h_i x_i² + b_i x_i
        let x2 = s.x.clone();
        let xi: f64 = g.iter().map(|v| v * v).sum::<f64>()
            + {
                let gc = c.gradient(&x2);
                // predicted bundle was affine with zero gradient
                let e: Vec<f64> = (0..3).map(|i| g[i] + mu * gc[i]).collect();
                e.iter().map(|v| v * v).sum::<f64>() - g.iter().map(|v| v * v).sum::<f64>()
            };
        assert!((s.xi - xi).abs() < 1e-12);
        let sigma1 = 1.0 * (l.xi_sum() - s.xi).sqrt();
        let sigma2 = l.sigma_sum() - 1.0 - sigma1;
        let x1 = [1.0 / 3.0; 3];
        let h: Vec<f64> = (0..3).map(|i| 1.0 + sigma1 + sigma2 + mu * c.quad[i]).collect();
        let b: Vec<f64> =
            (0..3).map(|i| -x1[i] - sigma1 * x1[i] - sigma2 * x2[i] + g[i] + mu * c.lin[i]).collect();
        // bisection on the simplex multiplier
        let total = |nu: f64| (0..3).map(|i| ((-b[i] - nu) / h[i]).max(0.0)).sum::<f64>() - 1.0;
        let (mut lo, mut hi) = (-100.0, 100.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if total(mid) > 0.0 { lo = mid } else { hi = mid }
        }
        let nu = 0.5 * (lo + hi);
        for i in 0..3 {
            let zi = ((-b[i] - nu) / h[i]).max(0.0);
            assert!((s.z[i] - zi).abs() < 1e-8, "{:?} vs {zi}", s.z);
        }
    }

    #[test]
    fn protocol_errors() {
        let set = FeasibleSet::uniform_box(1, 0.0, 1.0).unwrap();
        let mut l = Llp::new(set, LlpConfig::default(), &[0.5], 1).unwrap();
        assert!(matches!(l.observe(&[0.0], &[Constraint::zero(1)], &[Constraint::zero(1)]), Err(Error::Protocol(_))));
        l.decide(&[0.0]).unwrap();
        assert!(matches!(l.decide(&[0.0]), Err(Error::Protocol(_))));
        assert!(LlpConfig { beta: 1.0, ..LlpConfig::default() }.validate().is_err());
    }

    #[test]
    fn budget_benchmark_is_fractional_knapsack() {
        let (x, v) = budget_benchmark(&[-6.0, -4.0, 1.0], &[2.0, 2.0, 2.0], 3.0).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 0.5, 0.0]);
        assert_eq!(v, -8.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn dual_matches_numerical_maximization(
            c_sum in proptest::collection::vec(-5.0f64..5.0, 2),
            pred in proptest::collection::vec(-2.0f64..2.0, 2),
            phi in 0.1f64..10.0,
        ) {
            let mu = dual_closed_form(&c_sum, &pred, phi).unwrap();
            prop_assert!(mu.iter().all(|m| *m >= 0.0));
            // separable: maximize each coordinate of ⟨μ, s⟩ − φ/2 μ² on a grid
            for k in 0..2 {
                let s = c_sum[k] + pred[k];
                let hi = (s / phi).abs() * 2.0 + 1.0;
                let mut best = (0.0, 0.0);
                for j in 0..=200_000 {
                    let m = hi * j as f64 / 200_000.0;
                    let v = s * m - 0.5 * phi * m * m;
                    if v > best.1 { best = (m, v); }
                }
                prop_assert!((mu[k] - best.0).abs() <= 1e-6 * (1.0 + hi) * 10.0);
            }
        }
    }
}
