//! Non-caching environments and their perturbation streams: wireless power
//! control, slice reservation, O-RAN loads and budgeted linear costs.
//!
//! Power control is a minimization (`Σ x − Σ log(1 + w x)`), slicing a
//! maximization; learners always receive loss gradients.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::sets::{dot, DenseVector, FeasibleSet};
use crate::solver::{projected_gradient, SolverOptions};

/// `Σ_s x_s − Σ_s log(1 + w_s x_s)`.
pub fn power_cost(w: &[f64], x: &[f64]) -> Result<f64> {
    check_dim(w.len(), x.len())?;
    check_gains(w)?;
    Ok(w.iter().zip(x).map(|(ws, xs)| xs - (ws * xs).ln_1p()).sum())
}

/// `g_s = 1 − w_s/(1 + w_s x_s)`.
pub fn power_grad(w: &[f64], x: &[f64]) -> Result<DenseVector> {
    check_dim(w.len(), x.len())?;
    check_gains(w)?;
    Ok(w.iter().zip(x).map(|(ws, xs)| 1.0 - ws / (1.0 + ws * xs)).collect())
}

fn check_gains(w: &[f64]) -> Result<()> {
    if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain("channel gains must be finite and >= 0".into()));
    }
    Ok(())
}

/// Channel-gain processes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GainProcess {
    /// I.i.d. `U[lo, hi]` per channel and slot.
    Uniform { lo: f64, hi: f64 },
    /// Two regimes: gains `U[lo, hi]` scaled by 1 or `bad_scale`; the regime
    /// persists with probability `stay` per slot.
    Markov { lo: f64, hi: f64, bad_scale: f64, stay: f64 },
    /// Regimes alternate at the listed slots (1-based). In the first regime
    /// channel 0 is strong and the rest draw `U[lo, hi/4]`; the next regime
    /// favours the last channel, and so on.
    Switching { lo: f64, hi: f64, switch_at: Vec<usize> },
}

impl GainProcess {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = match self {
            GainProcess::Uniform { lo, hi } | GainProcess::Switching { lo, hi, .. } => (*lo, *hi),
            GainProcess::Markov { lo, hi, bad_scale, stay } => {
                if !(*bad_scale > 0.0) || !(0.0..=1.0).contains(stay) {
                    return Err(Error::Parameter("markov gains need bad_scale > 0 and stay in [0,1]".into()));
                }
                (*lo, *hi)
            }
        };
        if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
            return Err(Error::Parameter(format!("gain range must satisfy 0 < lo <= hi, got [{lo}, {hi}]")));
        }
        Ok(())
    }

    /// Largest gain the process can emit.
    pub fn max_gain(&self) -> f64 {
        match self {
            GainProcess::Uniform { hi, .. } | GainProcess::Switching { hi, .. } => *hi,
            GainProcess::Markov { hi, bad_scale, .. } => hi * bad_scale.max(1.0),
        }
    }

    /// `horizon` gain vectors over `channels`, deterministic in `seed`.
    pub fn generate(&self, channels: usize, horizon: usize, seed: u64) -> Result<Vec<DenseVector>> {
        self.validate()?;
        if channels == 0 {
            return Err(Error::Parameter("need at least one channel".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(horizon);
        match self {
            GainProcess::Uniform { lo, hi } => {
                for _ in 0..horizon {
                    out.push((0..channels).map(|_| uniform(&mut rng, *lo, *hi)).collect());
                }
            }
            GainProcess::Markov { lo, hi, bad_scale, stay } => {
                let mut good = true;
                for _ in 0..horizon {
                    let scale = if good { 1.0 } else { *bad_scale };
                    out.push((0..channels).map(|_| scale * uniform(&mut rng, *lo, *hi)).collect());
                    if rng.random::<f64>() >= *stay {
                        good = !good;
                    }
                }
            }
            GainProcess::Switching { lo, hi, switch_at } => {
                let weak_hi = (hi / 4.0).max(*lo);
                for t in 1..=horizon {
                    let regime = switch_at.iter().filter(|s| **s <= t).count();
                    let strong = if regime % 2 == 0 { 0 } else { channels - 1 };
                    out.push(
                        (0..channels)
                            .map(|s| if s == strong { uniform(&mut rng, weak_hi, *hi) } else { uniform(&mut rng, *lo, weak_hi) })
                            .collect(),
                    );
                }
            }
        }
        Ok(out)
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Power allocation over `channels` with total budget `p_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerControl {
    pub gains: Vec<DenseVector>,
    pub p_max: f64,
}

impl PowerControl {
    pub fn new(gains: Vec<DenseVector>, p_max: f64) -> Result<Self> {
        let s = gains.first().map(|g| g.len()).unwrap_or(0);
        for g in &gains {
            check_dim(s, g.len())?;
            check_gains(g)?;
        }
        if !(p_max > 0.0) {
            return Err(Error::Parameter("power budget must be positive".into()));
        }
        Ok(Self { gains, p_max })
    }

    pub fn channels(&self) -> usize {
        self.gains.first().map(|g| g.len()).unwrap_or(0)
    }

    pub fn set(&self) -> Result<FeasibleSet> {
        FeasibleSet::sum_cap_nonneg(self.channels(), self.p_max)
    }

    /// Best fixed allocation for slots `[from, to)`.
    pub fn benchmark(&self, from: usize, to: usize, restarts: usize, seed: u64) -> Result<OfflineOptimum> {
        let window = &self.gains[from..to];
        offline_minimize(
            &self.set()?,
            |x, g| {
                g.iter_mut().for_each(|v| *v = 0.0);
                let mut v = 0.0;
                for w in window {
                    for s in 0..x.len() {
                        v += x[s] - (w[s] * x[s]).ln_1p();
                        g[s] += 1.0 - w[s] / (1.0 + w[s] * x[s]);
                    }
                }
                v
            },
            restarts,
            seed,
        )
    }
}

/// Result of the offline horizon solver.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineOptimum {
    pub x: DenseVector,
    pub value: f64,
    pub residual: f64,
    pub converged: bool,
}

/// Minimizes a smooth convex horizon objective with projected gradient from
/// the projection of the origin plus `restarts` random starts.
pub fn offline_minimize<F>(set: &FeasibleSet, mut objective: F, restarts: usize, seed: u64) -> Result<OfflineOptimum>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = set.dim();
    let opts = SolverOptions { tol: 1e-9, max_iter: 20_000, initial_step: 1.0 };
    let mut best: Option<OfflineOptimum> = None;
    for r in 0..=restarts {
        let start = if r == 0 {
            set.project(&vec![0.0; n])?
        } else {
            set.project(&(0..n).map(|_| rng.random_range(-1.0..1.0) * set_scale(set)).collect::<Vec<_>>())?
        };
        let out = projected_gradient(set, &start, &mut objective, opts)?;
        if best.as_ref().is_none_or(|b| out.value < b.value) {
            best = Some(OfflineOptimum { x: out.x, value: out.value, residual: out.residual, converged: out.converged });
        }
    }
    best.ok_or_else(|| Error::Numerical("no solver run".into()))
}

fn set_scale(set: &FeasibleSet) -> f64 {
    set.diameter(crate::sets::NormKind::L2).unwrap_or(1.0).max(1.0)
}

/// One slot of the slicing market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicingParams {
    pub alpha: f64,
    pub phi: Vec<f64>,
    pub advance: Vec<f64>,
    pub spot: Vec<f64>,
}

/// `α log(1 + ⟨φ, x + y⟩) − ⟨p, x⟩ − ⟨u, y⟩` with `z = (x, y)`.
pub fn slicing_utility(p: &SlicingParams, z: &[f64]) -> Result<f64> {
    let m = p.phi.len();
    check_dim(2 * m, z.len())?;
    let (x, y) = z.split_at(m);
    let served: f64 = (0..m).map(|k| p.phi[k] * (x[k] + y[k])).sum();
    Ok(p.alpha * served.ln_1p() - dot(&p.advance, x) - dot(&p.spot, y))
}

/// Utility gradient `(αφ/(1+⟨φ,x+y⟩) − p, αφ/(1+⟨φ,x+y⟩) − u)`.
pub fn slicing_grad(p: &SlicingParams, z: &[f64]) -> Result<DenseVector> {
    let m = p.phi.len();
    check_dim(2 * m, z.len())?;
    let (x, y) = z.split_at(m);
    let served: f64 = (0..m).map(|k| p.phi[k] * (x[k] + y[k])).sum();
    let scale = p.alpha / (1.0 + served);
    let mut g = DenseVector::zeros(2 * m);
    for k in 0..m {
        g[k] = scale * p.phi[k] - p.advance[k];
        g[m + k] = scale * p.phi[k] - p.spot[k];
    }
    Ok(g)
}

/// Market parameter processes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SlicingProcess {
    /// Independent slots: advance prices `U[p_lo, p_hi]`, spot prices a
    /// `U[1, spot_premium]` multiple of them, intensity `U[alpha_lo,
    /// alpha_hi]`, composition uniform then normalized.
    Iid { p_lo: f64, p_hi: f64, spot_premium: f64, alpha_lo: f64, alpha_hi: f64 },
    /// Intensity follows `mean·(1 + amplitude·sin(2πt/period))` plus
    /// `U[−noise, noise]`; prices and composition as in the i.i.d. case.
    Diurnal { p_lo: f64, p_hi: f64, spot_premium: f64, mean: f64, amplitude: f64, period: usize, noise: f64 },
}

impl SlicingProcess {
    pub fn generate(&self, resources: usize, horizon: usize, seed: u64) -> Result<Vec<SlicingParams>> {
        if resources == 0 {
            return Err(Error::Parameter("need at least one resource type".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p_lo, p_hi, premium) = match self {
            SlicingProcess::Iid { p_lo, p_hi, spot_premium, .. } | SlicingProcess::Diurnal { p_lo, p_hi, spot_premium, .. } => {
                (*p_lo, *p_hi, *spot_premium)
            }
        };
        if !(p_lo >= 0.0) || !(p_hi >= p_lo) || !(premium >= 1.0) {
            return Err(Error::Parameter("prices need 0 <= p_lo <= p_hi and spot_premium >= 1".into()));
        }
        let mut out = Vec::with_capacity(horizon);
        for t in 1..=horizon {
            let alpha = match self {
                SlicingProcess::Iid { alpha_lo, alpha_hi, .. } => {
                    if !(*alpha_lo >= 0.0) || !(alpha_hi >= alpha_lo) {
                        return Err(Error::Parameter("intensity range must satisfy 0 <= lo <= hi".into()));
                    }
                    uniform(&mut rng, *alpha_lo, *alpha_hi)
                }
                SlicingProcess::Diurnal { mean, amplitude, period, noise, .. } => {
                    if *period == 0 {
                        return Err(Error::Parameter("diurnal period must be positive".into()));
                    }
                    let phase = 2.0 * std::f64::consts::PI * t as f64 / *period as f64;
                    (mean * (1.0 + amplitude * phase.sin()) + uniform(&mut rng, -noise, *noise)).max(0.0)
                }
            };
            let advance: Vec<f64> = (0..resources).map(|_| uniform(&mut rng, p_lo, p_hi)).collect();
            let spot: Vec<f64> = advance.iter().map(|p| p * uniform(&mut rng, 1.0, premium)).collect();
            let raw: Vec<f64> = (0..resources).map(|_| uniform(&mut rng, 0.1, 1.0)).collect();
            let total: f64 = raw.iter().sum();
            out.push(SlicingParams { alpha, phi: raw.iter().map(|v| v / total).collect(), advance, spot });
        }
        Ok(out)
    }
}

/// Slice reservation over a per-resource box `[0, z_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Slicing {
    pub params: Vec<SlicingParams>,
    pub z_max: f64,
}

impl Slicing {
    pub fn new(params: Vec<SlicingParams>, z_max: f64) -> Result<Self> {
        let m = params.first().map(|p| p.phi.len()).unwrap_or(0);
        for p in &params {
            check_dim(m, p.phi.len())?;
            check_dim(m, p.advance.len())?;
            check_dim(m, p.spot.len())?;
            if !(p.alpha >= 0.0) || p.advance.iter().chain(&p.spot).any(|v| !(*v >= 0.0)) {
                return Err(Error::Parameter("prices and intensity must be >= 0".into()));
            }
        }
        if !(z_max > 0.0) {
            return Err(Error::Parameter("reservation cap must be positive".into()));
        }
        Ok(Self { params, z_max })
    }

    pub fn resources(&self) -> usize {
        self.params.first().map(|p| p.phi.len()).unwrap_or(0)
    }

    pub fn set(&self) -> Result<FeasibleSet> {
        FeasibleSet::uniform_box(2 * self.resources(), 0.0, self.z_max)
    }

    /// Best fixed reservation (maximum utility) for slots `[from, to)`.
    pub fn benchmark(&self, from: usize, to: usize, restarts: usize, seed: u64) -> Result<OfflineOptimum> {
        let window = &self.params[from..to];
        let mut out = offline_minimize(
            &self.set()?,
            |z, g| {
                g.iter_mut().for_each(|v| *v = 0.0);
                let mut v = 0.0;
                for p in window {
                    v -= slicing_utility(p, z).unwrap_or(f64::NAN);
                    let gp = slicing_grad(p, z).unwrap_or_else(|_| DenseVector::zeros(z.len()));
                    for i in 0..z.len() {
                        g[i] -= gp[i];
                    }
                }
                v
            },
            restarts,
            seed,
        )?;
        out.value = -out.value;
        Ok(out)
    }
}

/// O-RAN load and capacity streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoadProcess {
    /// Stationary: server `j` has mean capacity `cap_mean[j]`; loads and
    /// capacities draw i.i.d. multiplicative noise `U[1 − spread, 1 + spread]`.
    Stationary { load_mean: Vec<f64>, cap_mean: Vec<f64>, spread: f64 },
}

impl LoadProcess {
    pub fn generate(&self, horizon: usize, seed: u64) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        let LoadProcess::Stationary { load_mean, cap_mean, spread } = self;
        if !(0.0..1.0).contains(spread) {
            return Err(Error::Parameter("spread must lie in [0,1)".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..horizon)
            .map(|_| {
                let l = load_mean.iter().map(|m| m * uniform(&mut rng, 1.0 - spread, 1.0 + spread)).collect();
                let c = cap_mean.iter().map(|m| m * uniform(&mut rng, 1.0 - spread, 1.0 + spread)).collect();
                (l, c)
            })
            .collect())
    }
}

/// Linear costs `⟨g_t, x⟩` on `[0,1]^n` under a fixed budget `⟨p, x⟩ ≤ B`.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetInstance {
    pub costs: Vec<DenseVector>,
    pub price: Vec<f64>,
    pub budget: f64,
}

impl BudgetInstance {
    /// Costs `g_t = −v + U[−noise, noise]^n` with values `v ~ U[0.5, 1.5]^n`,
    /// prices `U[0.5, 1.5]^n`; the budget covers `budget_share` of the total
    /// price, so the constraint binds at the benchmark.
    pub fn random(n: usize, horizon: usize, noise: f64, budget_share: f64, seed: u64) -> Result<Self> {
        if n == 0 || !(budget_share > 0.0 && budget_share < 1.0) || !(noise >= 0.0) {
            return Err(Error::Parameter("need n >= 1, budget share in (0,1) and noise >= 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
        let price: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
        let budget = budget_share * price.iter().sum::<f64>();
        let costs = (0..horizon).map(|_| values.iter().map(|v| -v + uniform(&mut rng, -noise, noise)).collect()).collect();
        Ok(Self { costs, price, budget })
    }

    pub fn dim(&self) -> usize {
        self.price.len()
    }

    pub fn set(&self) -> Result<FeasibleSet> {
        FeasibleSet::uniform_box(self.dim(), 0.0, 1.0)
    }

    /// The per-slot budget constraint `c_t(x) = ⟨p, x⟩ − B`.
    pub fn constraint(&self) -> crate::constrained::Constraint {
        crate::constrained::Constraint::affine(self.price.clone(), -self.budget)
    }
}

/// Writes streams as long-format `t,entity_id,value` rows (1-based `t`).
pub fn write_long_csv<W: Write>(rows: &[DenseVector], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t", "entity_id", "value"])?;
    for (t, row) in rows.iter().enumerate() {
        for (e, v) in row.iter().enumerate() {
            wr.write_record([(t + 1).to_string(), e.to_string(), format!("{v:?}")])?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Reads long-format `t,entity_id,value` rows into dense per-slot vectors.
pub fn read_long_csv<R: Read>(r: R) -> Result<Vec<DenseVector>> {
    #[derive(Deserialize)]
    struct Row {
        t: usize,
        entity_id: usize,
        value: f64,
    }
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut rows: Vec<Row> = Vec::new();
    for rec in rd.deserialize() {
        rows.push(rec?);
    }
    let horizon = rows.iter().map(|r| r.t).max().unwrap_or(0);
    let width = rows.iter().map(|r| r.entity_id + 1).max().unwrap_or(0);
    let mut out = vec![DenseVector::filled(width, f64::NAN); horizon];
    for r in rows {
        if r.t == 0 {
            return Err(Error::Config("slot indices start at 1".into()));
        }
        out[r.t - 1][r.entity_id] = r.value;
    }
    if out.iter().any(|row| !row.is_finite()) {
        return Err(Error::Config("stream CSV has missing or non-finite entries".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn fd<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], i: usize, h: f64) -> f64 {
        let mut a = x.to_vec();
        let mut b = x.to_vec();
        a[i] += h;
        b[i] -= h;
        (f(&a) - f(&b)) / (2.0 * h)
    }

    #[test]
    fn power_examples() {
        let w = [2.0, 0.5, 3.0];
        assert_eq!(power_cost(&w, &[0.0; 3]).unwrap(), 0.0);
        assert_eq!(power_grad(&w, &[0.0; 3]).unwrap().as_slice(), &[-1.0, 0.5, -2.0]);
        assert_eq!(power_grad(&[0.0], &[0.7]).unwrap()[0], 1.0);
        let g = power_grad(&[3.0], &[1.0]).unwrap()[0];
        assert_eq!(g, 0.25);
        let d = fd(|x| power_cost(&[3.0], x).unwrap(), &[1.0], 0, 1e-6);
        assert!((g - d).abs() < 1e-4);
        assert!(matches!(power_cost(&[-1.0], &[0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn slicing_examples() {
        let p = SlicingParams { alpha: 2.0, phi: vec![0.5, 0.5], advance: vec![0.3, 0.4], spot: vec![0.6, 0.8] };
        assert_eq!(slicing_utility(&p, &[0.0; 4]).unwrap(), 0.0);
        let q = SlicingParams { alpha: 0.0, ..p.clone() };
        let z = [1.0, 2.0, 0.5, 0.25];
        assert!((slicing_utility(&q, &z).unwrap() + (0.3 + 0.8 + 0.3 + 0.2)).abs() < 1e-15);
        assert_eq!(slicing_grad(&q, &z).unwrap().as_slice(), &[-0.3, -0.4, -0.6, -0.8]);
    }

    #[test]
    fn streams_are_seed_stable() {
        let g = GainProcess::Uniform { lo: 0.5, hi: 4.0 };
        assert_eq!(g.generate(4, 50, 7).unwrap(), g.generate(4, 50, 7).unwrap());
        let s = SlicingProcess::Iid { p_lo: 0.1, p_hi: 0.5, spot_premium: 2.0, alpha_lo: 1.0, alpha_hi: 3.0 };
        assert_eq!(s.generate(3, 20, 1).unwrap(), s.generate(3, 20, 1).unwrap());
        let parsed: std::result::Result<GainProcess, _> = serde_json::from_str(r#"{"kind":"nope"}"#);
        assert!(parsed.is_err());
    }

    #[test]
    fn uniform_gain_mean() {
        let g = GainProcess::Uniform { lo: 0.5, hi: 4.0 }.generate(1, 100_000, 3).unwrap();
        let mean = g.iter().map(|v| v[0]).sum::<f64>() / 1e5;
        let sd = (3.5f64 * 3.5 / 12.0).sqrt();
        assert!((mean - 2.25).abs() <= 4.0 * sd / 1e5f64.sqrt());
    }

    #[test]
    fn switching_changes_best_channel() {
        let p = GainProcess::Switching { lo: 0.5, hi: 8.0, switch_at: vec![501] };
        let gains = p.generate(3, 1000, 5).unwrap();
        let env = PowerControl::new(gains, 2.0).unwrap();
        let a = env.benchmark(0, 500, 0, 1).unwrap();
        let b = env.benchmark(500, 1000, 0, 1).unwrap();
        let arg = |x: &DenseVector| crate::sets::argmax(x);
        assert_eq!(arg(&a.x), 0);
        assert_eq!(arg(&b.x), 2);
    }

    #[test]
    fn constant_power_benchmark_matches_slot_optimum() {
        let w: DenseVector = vec![3.0, 1.5, 0.4].into();
        let env = PowerControl::new(vec![w.clone(); 20], 1.0).unwrap();
        let horizon = env.benchmark(0, 20, 2, 0).unwrap();
        let slot = env.benchmark(0, 1, 2, 0).unwrap();
        for s in 0..3 {
            assert!((horizon.x[s] - slot.x[s]).abs() < 1e-6);
        }
        assert!((horizon.value - 20.0 * slot.value).abs() < 1e-8);
    }

    #[test]
    fn long_csv_roundtrip() {
        let rows: Vec<DenseVector> = vec![vec![1.0, 2.5].into(), vec![0.1, 1e-17].into()];
        let mut buf = Vec::new();
        write_long_csv(&rows, &mut buf).unwrap();
        assert_eq!(read_long_csv(buf.as_slice()).unwrap(), rows);
        assert!(read_long_csv("t,entity_id,value\n1,1,2.0\n".as_bytes()).is_err());
    }

    #[test]
    fn budget_instance_binds() {
        let b = BudgetInstance::random(5, 100, 0.2, 0.4, 3).unwrap();
        let g_sum = b.costs.iter().fold(DenseVector::zeros(5), |mut acc, g| {
            acc.add_scaled(1.0, g);
            acc
        });
        let (x, _) = crate::constrained::budget_benchmark(&g_sum, &b.price, b.budget).unwrap();
        assert!((dot(&x, &b.price) - b.budget).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn power_gradient_and_convexity(seed in 0u64..1_000_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..5.0)).collect();
            let set = FeasibleSet::sum_cap_nonneg(4, 2.0).unwrap();
            let x = set.project(&(0..4).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<_>>()).unwrap();
            let g = power_grad(&w, &x).unwrap();
            for i in 0..4 {
                let d = fd(|z| power_cost(&w, z).unwrap(), &x, i, 1e-6);
                prop_assert!((g[i] - d).abs() <= 1e-4 * d.abs().max(1.0));
            }
            let y = set.project(&(0..4).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<_>>()).unwrap();
            let mid: Vec<f64> = x.iter().zip(y.iter()).map(|(a, b)| 0.5 * (a + b)).collect();
            let lhs = power_cost(&w, &mid).unwrap();
            let rhs = 0.5 * (power_cost(&w, &x).unwrap() + power_cost(&w, &y).unwrap());
            prop_assert!(lhs <= rhs + 1e-12);
        }

        #[test]
        fn slicing_gradient(seed in 0u64..1_000_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = SlicingProcess::Iid { p_lo: 0.1, p_hi: 1.0, spot_premium: 2.0, alpha_lo: 0.5, alpha_hi: 4.0 }
                .generate(3, 1, seed)
                .unwrap()
                .remove(0);
            let z: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..2.0)).collect();
            let g = slicing_grad(&p, &z).unwrap();
            for i in 0..6 {
                let d = fd(|v| slicing_utility(&p, v).unwrap(), &z, i, 1e-5);
                prop_assert!((g[i] - d).abs() <= 1e-4 * d.abs().max(1.0));
            }
        }
    }
}
