//! Optimistic learners: OFTRL, optimistic OMD and optimistic FTPL.

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::learners::{check_finite, entropic_step, ftrl_decision, OnlineLearner, Regularizer, SlotGuard};
use crate::predictors::{measure_error, ErrorMode};
use crate::sets::{BregmanKind, DenseVector, FeasibleSet, NormKind};
use crate::learners::Ftpl;

/// The error mode a regularizer is strongly convex against.
pub fn paired_error_mode(reg: Regularizer) -> ErrorMode {
    match reg {
        Regularizer::Quadratic | Regularizer::QuadraticProximal => ErrorMode::SqL2,
        Regularizer::Entropic => ErrorMode::SqLinf,
    }
}

/// `σ = 1/(√2 D)`, the scaling that yields the `2√2·D·√ε_{1:T}` bound.
pub fn default_sigma(set: &FeasibleSet) -> Result<f64> {
    Ok(1.0 / (std::f64::consts::SQRT_2 * set.diameter(NormKind::L2)?))
}

/// `σ_{1:t} = σ_0 + σ·√ε_{1:t}` for an error sum.
pub fn oftrl_sigma_sum(sigma0: f64, sigma: f64, eps_sum: f64) -> f64 {
    sigma0 + sigma * eps_sum.sqrt()
}

/// Optimistic FTRL with prediction-error-adaptive regularization.
///
/// The first decision uses `σ_{1:0} = σ_0` (zero by default, i.e. a pure
/// be-the-leader step on the hint); regularization grows with the first
/// nonzero error.
#[derive(Debug, Clone)]
pub struct Oftrl {
    set: FeasibleSet,
    reg: Regularizer,
    mode: ErrorMode,
    sigma: f64,
    sigma0: f64,
    g_sum: DenseVector,
    eps_sum: f64,
    anchor_sum: DenseVector,
    last_x: Option<DenseVector>,
    last_hint: DenseVector,
    last_err: Option<f64>,
    guard: SlotGuard,
}

impl Oftrl {
    pub fn new(set: FeasibleSet, reg: Regularizer, mode: ErrorMode, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Parameter(format!("sigma must be positive, got {sigma}")));
        }
        if mode != paired_error_mode(reg) {
            return Err(Error::Config(format!(
                "{reg:?} regularizer measures errors in {:?}, not {mode:?}",
                paired_error_mode(reg)
            )));
        }
        if reg == Regularizer::Entropic && set.simplex_rows().is_none() {
            return Err(Error::Config("entropic regularizer needs a (multi-)simplex".into()));
        }
        let n = set.dim();
        Ok(Self {
            set,
            reg,
            mode,
            sigma,
            sigma0: 0.0,
            g_sum: DenseVector::zeros(n),
            eps_sum: 0.0,
            anchor_sum: DenseVector::zeros(n),
            last_x: None,
            last_hint: DenseVector::zeros(n),
            last_err: None,
            guard: SlotGuard::default(),
        })
    }

    /// Adds a fixed proximal term `(σ_0/2)||x − x_1||²` (proximal only).
    pub fn with_initial_regularization(mut self, sigma0: f64, x1: &[f64]) -> Result<Self> {
        if self.reg != Regularizer::QuadraticProximal {
            return Err(Error::Config("an initial anchor needs the proximal regularizer".into()));
        }
        if !(sigma0 >= 0.0) {
            return Err(Error::Parameter("initial regularization must be >= 0".into()));
        }
        check_dim(self.g_sum.len(), x1.len())?;
        self.sigma0 = sigma0;
        self.anchor_sum = DenseVector::from(x1).scaled(sigma0);
        Ok(self)
    }

    pub fn regularizer(&self) -> Regularizer {
        self.reg
    }

    pub fn gradient_sum(&self) -> &DenseVector {
        &self.g_sum
    }

    pub fn current_sigma_sum(&self) -> f64 {
        oftrl_sigma_sum(self.sigma0, self.sigma, self.eps_sum)
    }
}

impl OnlineLearner for Oftrl {
    fn dim(&self) -> usize {
        self.g_sum.len()
    }

    fn decide(&mut self, hint: Option<&[f64]>) -> Result<DenseVector> {
        let hint: DenseVector = match hint {
            Some(h) => {
                check_dim(self.g_sum.len(), h.len())?;
                check_finite(h, "prediction")?;
                h.into()
            }
            None => DenseVector::zeros(self.g_sum.len()),
        };
        let x = ftrl_decision(&self.set, self.reg, self.current_sigma_sum(), &self.g_sum, &hint, &self.anchor_sum)?;
        self.last_hint = hint;
        self.last_x = Some(x.clone());
        self.guard.decided();
        Ok(x)
    }

    fn observe(&mut self, g: &[f64]) -> Result<()> {
        check_dim(self.g_sum.len(), g.len())?;
        check_finite(g, "gradient")?;
        self.guard.observing()?;
        let err = measure_error(g, &self.last_hint, self.mode)?;
        let before = self.current_sigma_sum();
        self.eps_sum += err;
        let after = self.current_sigma_sum();
        if self.reg == Regularizer::QuadraticProximal {
            if let Some(x) = &self.last_x {
                self.anchor_sum.add_scaled(after - before, x);
            }
        }
        self.g_sum.add_scaled(1.0, g);
        self.last_err = Some(err);
        Ok(())
    }

    fn sigma_sum(&self) -> Option<f64> {
        Some(self.current_sigma_sum())
    }

    fn error_sum(&self) -> Option<f64> {
        Some(self.eps_sum)
    }

    fn last_error(&self) -> Option<f64> {
        self.last_err
    }
}

/// Optimistic mirror descent with a fixed rate:
/// `x_t = argmin ⟨g̃_t, x⟩ + B(x, y_t)/η`, `y_{t+1} = argmin ⟨g_t, y⟩ + B(y, y_t)/η`.
#[derive(Debug, Clone)]
pub struct Oomd {
    set: FeasibleSet,
    kind: BregmanKind,
    eta: f64,
    cols: usize,
    y: DenseVector,
    x: DenseVector,
    last_hint: DenseVector,
    eps_sum: f64,
    last_err: Option<f64>,
    guard: SlotGuard,
}

impl Oomd {
    pub fn new(set: FeasibleSet, kind: BregmanKind, eta: f64) -> Result<Self> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::Parameter(format!("learning rate must be positive, got {eta}")));
        }
        let n = set.dim();
        let (y, cols) = match kind {
            BregmanKind::Quadratic => (set.project(&vec![0.0; n])?, n),
            BregmanKind::Entropic => {
                let (_, cols) = set
                    .simplex_rows()
                    .ok_or_else(|| Error::Unsupported("entropic mirror descent needs a (multi-)simplex".into()))?;
                (DenseVector::filled(n, 1.0 / cols as f64), cols)
            }
        };
        Ok(Self {
            set,
            kind,
            eta,
            cols,
            x: y.clone(),
            y,
            last_hint: DenseVector::zeros(n),
            eps_sum: 0.0,
            last_err: None,
            guard: SlotGuard::default(),
        })
    }

    /// `η = D/(L√(2T))`.
    pub fn default_rate(set: &FeasibleSet, lipschitz: f64, horizon: usize) -> Result<f64> {
        Ok(set.diameter(NormKind::L2)? / (lipschitz * (2.0 * horizon as f64).sqrt()))
    }

    pub fn with_start(mut self, y1: &[f64]) -> Result<Self> {
        check_dim(self.y.len(), y1.len())?;
        if !self.set.contains(y1, 1e-9) {
            return Err(Error::Domain("start point is infeasible".into()));
        }
        self.y = y1.into();
        self.x = self.y.clone();
        Ok(self)
    }

    fn mirror_step(&self, from: &[f64], g: &[f64]) -> Result<DenseVector> {
        match self.kind {
            BregmanKind::Quadratic => {
                let target: Vec<f64> = from.iter().zip(g).map(|(a, b)| a - self.eta * b).collect();
                self.set.project(&target)
            }
            BregmanKind::Entropic => Ok(entropic_step(from, g, self.eta, self.cols)),
        }
    }

    fn error_mode(&self) -> ErrorMode {
        match self.kind {
            BregmanKind::Quadratic => ErrorMode::SqL2,
            BregmanKind::Entropic => ErrorMode::SqLinf,
        }
    }

    pub fn auxiliary(&self) -> &DenseVector {
        &self.y
    }

    /// Absorbs `g_t` and returns the decision for the next slot under `g̃_{t+1}`.
    pub fn step(&mut self, g: &[f64], g_tilde_next: &[f64]) -> Result<DenseVector> {
        check_dim(self.y.len(), g.len())?;
        check_dim(self.y.len(), g_tilde_next.len())?;
        self.y = self.mirror_step(&self.y, g)?;
        self.x = self.mirror_step(&self.y, g_tilde_next)?;
        self.last_hint = g_tilde_next.into();
        Ok(self.x.clone())
    }
}

impl OnlineLearner for Oomd {
    fn dim(&self) -> usize {
        self.y.len()
    }

    fn decide(&mut self, hint: Option<&[f64]>) -> Result<DenseVector> {
        let hint: DenseVector = match hint {
            Some(h) => {
                check_dim(self.y.len(), h.len())?;
                check_finite(h, "prediction")?;
                h.into()
            }
            None => DenseVector::zeros(self.y.len()),
        };
        self.x = self.mirror_step(&self.y, &hint)?;
        self.last_hint = hint;
        self.guard.decided();
        Ok(self.x.clone())
    }

    fn observe(&mut self, g: &[f64]) -> Result<()> {
        check_dim(self.y.len(), g.len())?;
        check_finite(g, "gradient")?;
        self.guard.observing()?;
        let err = measure_error(g, &self.last_hint, self.error_mode())?;
        self.eps_sum += err;
        self.last_err = Some(err);
        self.y = self.mirror_step(&self.y, g)?;
        Ok(())
    }

    fn error_sum(&self) -> Option<f64> {
        Some(self.eps_sum)
    }

    fn last_error(&self) -> Option<f64> {
        self.last_err
    }
}

/// `1.3/√C · (ln(Ne/C))^{-1/4}`, the perturbation scale per unit root error.
pub fn oftpl_rate_constant(n: usize, cap: usize) -> f64 {
    let (n, c) = (n as f64, cap as f64);
    1.3 / c.sqrt() * (1.0 / (n * std::f64::consts::E / c).ln()).powf(0.25)
}

/// `3.68·√C·(ln(Ne/C))^{1/4}·√Σ||q − q̃||₁²`.
pub fn oftpl_regret_bound(n: usize, cap: usize, l1_sq_error_sum: f64) -> f64 {
    let (nf, c) = (n as f64, cap as f64);
    3.68 * c.sqrt() * (nf * std::f64::consts::E / c).ln().powf(0.25) * l1_sq_error_sum.sqrt()
}

/// Optimistic FTPL for whole-file caching (maximization of hits).
#[derive(Debug, Clone)]
pub struct Oftpl {
    inner: Ftpl,
    rate_constant: f64,
    err_sum: f64,
    last_hint: Option<DenseVector>,
    last_err: Option<f64>,
}

impl Oftpl {
    pub fn new<R: Rng + ?Sized>(n: usize, cap: usize, rng: &mut R) -> Result<Self> {
        Self::from_ftpl(Ftpl::new(n, cap, rng)?)
    }

    pub fn with_perturbation(n: usize, cap: usize, gamma: DenseVector) -> Result<Self> {
        Self::from_ftpl(Ftpl::with_perturbation(n, cap, gamma)?)
    }

    fn from_ftpl(inner: Ftpl) -> Result<Self> {
        if inner.cap() == 0 {
            return Err(Error::Config("cache size must be at least 1".into()));
        }
        let rate_constant = oftpl_rate_constant(inner.dim(), inner.cap());
        Ok(Self { inner, rate_constant, err_sum: 0.0, last_hint: None, last_err: None })
    }

    pub fn eta(&self) -> f64 {
        self.rate_constant * self.err_sum.sqrt()
    }

    pub fn error_sum(&self) -> f64 {
        self.err_sum
    }

    pub fn last_error(&self) -> Option<f64> {
        self.last_err
    }

    pub fn reward_sum(&self) -> &DenseVector {
        self.inner.reward_sum()
    }

    /// Files to cache for the coming slot given the predicted request `q̃_t`.
    pub fn select(&mut self, q_tilde: &[f64]) -> Result<Vec<usize>> {
        check_dim(self.inner.dim(), q_tilde.len())?;
        let sel = self.inner.select(self.eta(), Some(q_tilde))?;
        self.last_hint = Some(q_tilde.into());
        Ok(sel)
    }

    pub fn observe(&mut self, q: &[f64]) -> Result<()> {
        let hint = self
            .last_hint
            .take()
            .ok_or_else(|| Error::Protocol("observe called without a pending selection".into()))?;
        let err = measure_error(q, &hint, ErrorMode::SqL1)?;
        self.inner.observe_reward(q)?;
        self.err_sum += err;
        self.last_err = Some(err);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{Ftrl, FtrlSchedule};
    use crate::sets::dot;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pairing_enforced() {
        let set = FeasibleSet::capped_simplex(3, 1.0).unwrap();
        assert!(matches!(
            Oftrl::new(set.clone(), Regularizer::Quadratic, ErrorMode::SqLinf, 1.0),
            Err(Error::Config(_))
        ));
        let s = FeasibleSet::unit_simplex(3).unwrap();
        assert!(Oftrl::new(s, Regularizer::Entropic, ErrorMode::SqLinf, 1.0).is_ok());
    }

    #[test]
    fn capped_simplex_hint_example() {
        // g_{1:t} = −(2,1,0), hint −(1,0,0), σ_{1:t} = 1 → (1,0,0)
        let set = FeasibleSet::capped_simplex(3, 1.0).unwrap();
        let x = ftrl_decision(&set, Regularizer::Quadratic, 1.0, &[-2.0, -1.0, 0.0], &[-1.0, 0.0, 0.0], &[0.0; 3]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && x[1].abs() < 1e-12 && x[2].abs() < 1e-12);
    }

    #[test]
    fn sigma_telescoping_examples() {
        let set = FeasibleSet::uniform_box(2, -1.0, 1.0).unwrap();
        let mut o = Oftrl::new(set, Regularizer::Quadratic, ErrorMode::SqL2, 1.0).unwrap();
        o.decide(Some(&[0.0, 0.0])).unwrap();
        o.observe(&[0.0, 0.0]).unwrap();
        assert_eq!(o.sigma_sum(), Some(0.0));
        // error 2 from a one-hot swap
        o.decide(Some(&[1.0, 0.0])).unwrap();
        o.observe(&[0.0, 1.0]).unwrap();
        assert!((o.sigma_sum().unwrap() - 2f64.sqrt()).abs() < 1e-15);
        o.decide(Some(&[1.0, 0.0])).unwrap();
        o.observe(&[0.0, 1.0]).unwrap();
        assert!((o.sigma_sum().unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(o.observe(&[0.0, 1.0]), Err(Error::Protocol(_))));
    }

    #[test]
    fn zero_hint_matches_gradient_adaptive_ftrl() {
        let set = FeasibleSet::capped_simplex(5, 2.0).unwrap();
        let d = set.diameter(NormKind::L2).unwrap();
        let mut o = Oftrl::new(set.clone(), Regularizer::Quadratic, ErrorMode::SqL2, 1.0 / (2f64.sqrt() * d)).unwrap();
        let mut f = Ftrl::new(set, Regularizer::Quadratic, FtrlSchedule::GradientAdaptive { diameter: d }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let xo = o.decide(Some(&[0.0; 5])).unwrap();
            let xf = f.decide(None).unwrap();
            assert_eq!(xo, xf);
            let g: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            o.observe(&g).unwrap();
            f.observe(&g).unwrap();
        }
    }

    #[test]
    fn perfect_hints_play_be_the_leader() {
        let set = FeasibleSet::capped_simplex(4, 1.0).unwrap();
        let mut o = Oftrl::new(set.clone(), Regularizer::QuadraticProximal, ErrorMode::SqL2, 1.0).unwrap();
        let mut g_sum = [0.0; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let g = DenseVector::one_hot(4, rng.random_range(0..4), -1.0);
            let x = o.decide(Some(&g)).unwrap();
            let total: Vec<f64> = g_sum.iter().zip(g.iter()).map(|(a, b)| a + b).collect();
            assert_eq!(x, set.linear_minimizer(&total).unwrap());
            o.observe(&g).unwrap();
            for k in 0..4 {
                g_sum[k] += g[k];
            }
        }
        assert_eq!(o.sigma_sum(), Some(0.0));
    }

    #[test]
    fn oomd_simplex_example() {
        let set = FeasibleSet::unit_simplex(2).unwrap();
        let mut o = Oomd::new(set, BregmanKind::Entropic, 1.0).unwrap();
        let x = o.step(&[2f64.ln(), 0.0], &[0.0, 0.0]).unwrap();
        assert!((x[0] - 1.0 / 3.0).abs() < 1e-12 && (x[1] - 2.0 / 3.0).abs() < 1e-12);
        let mut o2 = o.clone();
        let x2 = o2.step(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(x, x2);
    }

    #[test]
    fn oomd_free_space_two_step() {
        // a ball large enough never to bind behaves as free space
        let set = FeasibleSet::ball(2, 1e6).unwrap();
        let eta = 0.3;
        let mut o = Oomd::new(set, BregmanKind::Quadratic, eta).unwrap();
        let gt0 = [0.5, -1.0];
        let x0 = o.decide(Some(&gt0)).unwrap();
        o.observe(&[1.0, 2.0]).unwrap();
        let gt1 = [-0.25, 0.75];
        let x1 = o.decide(Some(&gt1)).unwrap();
        for k in 0..2 {
            let want = x0[k] - eta * ([1.0, 2.0][k] + gt1[k]) + eta * gt0[k];
            assert!((x1[k] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn oftpl_examples() {
        let mut f = Oftpl::with_perturbation(3, 1, vec![0.3, -0.1, 0.2].into()).unwrap();
        assert_eq!(f.eta(), 0.0);
        assert_eq!(f.select(&[1.0, 0.0, 0.0]).unwrap(), vec![0]);
        // hand-built state: q_{1:t−1} = (3,2,2,0), η = 1, γ = (0,0.5,−0.5,0)
        let gamma: DenseVector = vec![0.0, 0.5, -0.5, 0.0].into();
        let mut f = Ftpl::with_perturbation(4, 2, gamma).unwrap();
        f.observe_reward(&[3.0, 2.0, 2.0, 0.0]).unwrap();
        let mut got = f.select(1.0, Some(&[0.0; 4])).unwrap();
        got.sort();
        assert_eq!(got, vec![0, 1]);
        assert!(Oftpl::with_perturbation(2, 3, DenseVector::zeros(2)).is_err());
    }

    #[test]
    fn oftpl_rate_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut f = Oftpl::new(20, 11, &mut rng).unwrap();
        let errs = [1.0, 0.0, 4.0];
        let mut acc = 0.0f64;
        for (i, e) in errs.iter().enumerate() {
            let q = DenseVector::one_hot(20, i, 1.0);
            let hint = if *e == 0.0 { q.clone() } else if *e == 4.0 { DenseVector::one_hot(20, 19, 1.0) } else { DenseVector::zeros(20) };
            f.select(&hint).unwrap();
            f.observe(&q).unwrap();
            acc += e;
            let want = 1.3 / 11f64.sqrt() * (1.0 / (20.0 * std::f64::consts::E / 11.0).ln()).powf(0.25) * acc.sqrt();
            assert!((f.eta() - want).abs() < 1e-15);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn sigma_telescopes(errs in proptest::collection::vec(0.0f64..5.0, 1..60)) {
            let set = FeasibleSet::uniform_box(1, -10.0, 10.0).unwrap();
            let mut o = Oftrl::new(set, Regularizer::QuadraticProximal, ErrorMode::SqL2, 0.7).unwrap();
            let mut incr = 0.0;
            let mut prev_root = 0.0f64;
            let mut eps = 0.0f64;
            for e in &errs {
                o.decide(Some(&[0.0])).unwrap();
                o.observe(&[e.sqrt()]).unwrap();
                eps += e.sqrt() * e.sqrt();
                let root = eps.sqrt();
                incr += 0.7 * (root - prev_root);
                prev_root = root;
            }
            let s = o.sigma_sum().unwrap();
            prop_assert!((s - 0.7 * eps.sqrt()).abs() <= 1e-12 * s.max(1.0));
            prop_assert!((s - incr).abs() <= 1e-12 * s.max(1.0));
        }

        #[test]
        fn oftrl_quadratic_bound(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let set = FeasibleSet::uniform_box(4, -1.0, 1.0).unwrap();
            let d = set.diameter(NormKind::L2).unwrap();
            let mut o = Oftrl::new(set, Regularizer::Quadratic, ErrorMode::SqL2, 1.0 / (2f64.sqrt() * d)).unwrap();
            let mut g_sum = [0.0f64; 4];
            let mut cost = 0.0;
            let mut eps = 0.0f64;
            for _ in 0..300 {
                let g: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let noise = rng.random_range(0.0..1.5);
                let hint: Vec<f64> = g.iter().map(|v| v + noise * rng.random_range(-1.0..1.0)).collect();
                let x = o.decide(Some(&hint)).unwrap();
                cost += dot(&g, &x);
                o.observe(&g).unwrap();
                eps += g.iter().zip(&hint).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                for k in 0..4 { g_sum[k] += g[k]; }
                let best: f64 = g_sum.iter().map(|v| -v.abs()).sum();
                prop_assert!(cost - best <= 2.0 * 2f64.sqrt() * d * eps.sqrt() + 1e-9);
            }
        }
    }
}
