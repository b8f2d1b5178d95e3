//! Vectors, norms, Bregman divergences and feasible decision sets.
//!
//! Every set here is closed, convex and nonempty, and supports an exact
//! Euclidean projection. Projections of box-capped sum constraints share a
//! single sort-based water-filling routine ([`project_bounded_sum`]).

use std::cmp::Ordering;
use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Feasibility tolerance for projection outputs.
pub const FEAS_TOL: f64 = 1e-9;
/// Tolerance used when checking variational (obtuse-angle) optimality.
pub const OPT_TOL: f64 = 1e-7;
/// Interior floor applied before logarithms in entropic learner updates.
pub const ENTROPIC_FLOOR: f64 = 1e-12;

/// A finite-dimensional real vector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Self(vec![value; dim])
    }

    /// Unit vector `e_index` scaled by `value`.
    pub fn one_hot(dim: usize, index: usize, value: f64) -> Self {
        let mut v = Self::zeros(dim);
        v.0[index] = value;
        v
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm(&self, kind: NormKind) -> f64 {
        norm(&self.0, kind)
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, scale: f64, other: &[f64]) {
        debug_assert_eq!(self.0.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += scale * b;
        }
    }

    pub fn scaled(&self, scale: f64) -> Self {
        self.0.iter().map(|v| v * scale).collect()
    }
}

impl Deref for DenseVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for DenseVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl From<&[f64]> for DenseVector {
    fn from(v: &[f64]) -> Self {
        Self(v.to_vec())
    }
}

impl FromIterator<f64> for DenseVector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Norm selector. The dual of l1 is linf and l2 is self-dual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    L1,
    L2,
    Linf,
}

impl NormKind {
    pub fn dual(self) -> NormKind {
        match self {
            NormKind::L1 => NormKind::Linf,
            NormKind::L2 => NormKind::L2,
            NormKind::Linf => NormKind::L1,
        }
    }
}

pub fn norm(x: &[f64], kind: NormKind) -> f64 {
    match kind {
        NormKind::L1 => x.iter().map(|v| v.abs()).sum(),
        NormKind::L2 => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
        NormKind::Linf => x.iter().fold(0.0, |m, v| m.max(v.abs())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BregmanKind {
    Quadratic,
    Entropic,
}

/// Bregman divergence `B(x, y)`.
///
/// The entropic branch evaluates the generalized KL divergence
/// `Σ x ln(x/y) − x + y`, which coincides with `Σ x ln(x/y)` whenever `x` and
/// `y` carry the same mass (e.g. both lie on the same (multi-)simplex).
pub fn bregman(kind: BregmanKind, x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim(x.len(), y.len())?;
    match kind {
        BregmanKind::Quadratic => Ok(0.5 * x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>()),
        BregmanKind::Entropic => {
            let mut total = 0.0;
            for (&a, &b) in x.iter().zip(y) {
                if a < 0.0 || b < 0.0 {
                    return Err(Error::Domain("entropic divergence needs nonnegative arguments".into()));
                }
                if a == 0.0 {
                    total += b;
                    continue;
                }
                if b == 0.0 {
                    return Err(Error::Domain("entropic divergence with y_i = 0 < x_i".into()));
                }
                total += (a * (a / b).ln() - a + b).max(0.0);
            }
            Ok(total)
        }
    }
}

/// Indices of the `k` largest scores; ties go to the lowest index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let k = k.min(scores.len());
    if k == 0 {
        return Vec::new();
    }
    let order = |a: &usize, b: &usize| -> Ordering {
        scores[*b]
            .partial_cmp(&scores[*a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(b))
    };
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, order);
        idx.truncate(k);
    }
    idx.sort_unstable_by(order);
    idx
}

/// A closed convex decision region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeasibleSet {
    /// Per-coordinate interval `[lower_i, upper_i]`.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// `{x ∈ [0,1]^dim : Σx ≤ cap}`.
    CappedSimplex { dim: usize, cap: f64 },
    /// Product of `blocks` capped simplices of size `dim` each, stored block-major.
    BlockCappedSimplex { blocks: usize, dim: usize, cap: f64 },
    /// `{x ≥ 0 : Σx = 1}`.
    UnitSimplex { dim: usize },
    /// `rows` independent unit simplices of size `cols`, stored row-major.
    MultiSimplex { rows: usize, cols: usize },
    /// `{x : ||x||₂ ≤ radius}`.
    Ball { dim: usize, radius: f64 },
    NonnegOrthant { dim: usize },
    /// `{x ≥ 0 : Σx ≤ budget}`.
    SumCapNonneg { dim: usize, budget: f64 },
}

impl FeasibleSet {
    pub fn uniform_box(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new_box(vec![lower; dim], vec![upper; dim])
    }

    pub fn new_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::Parameter("box needs finite lower <= upper".into()));
        }
        Ok(FeasibleSet::Box { lower, upper })
    }

    pub fn capped_simplex(dim: usize, cap: f64) -> Result<Self> {
        if dim == 0 || !(cap > 0.0) || !cap.is_finite() {
            return Err(Error::Parameter(format!("capped simplex needs dim >= 1 and cap > 0 (got {dim}, {cap})")));
        }
        Ok(FeasibleSet::CappedSimplex { dim, cap })
    }

    pub fn block_capped_simplex(blocks: usize, dim: usize, cap: f64) -> Result<Self> {
        if blocks == 0 {
            return Err(Error::Parameter("need at least one block".into()));
        }
        Self::capped_simplex(dim, cap)?;
        Ok(FeasibleSet::BlockCappedSimplex { blocks, dim, cap })
    }

    pub fn unit_simplex(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("simplex needs dim >= 1".into()));
        }
        Ok(FeasibleSet::UnitSimplex { dim })
    }

    pub fn multi_simplex(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Parameter("multi-simplex needs rows, cols >= 1".into()));
        }
        Ok(FeasibleSet::MultiSimplex { rows, cols })
    }

    pub fn ball(dim: usize, radius: f64) -> Result<Self> {
        if dim == 0 || !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::Parameter("ball needs dim >= 1 and finite radius >= 0".into()));
        }
        Ok(FeasibleSet::Ball { dim, radius })
    }

    pub fn sum_cap_nonneg(dim: usize, budget: f64) -> Result<Self> {
        if dim == 0 || !(budget >= 0.0) || !budget.is_finite() {
            return Err(Error::Parameter("power set needs dim >= 1 and finite budget >= 0".into()));
        }
        Ok(FeasibleSet::SumCapNonneg { dim, budget })
    }

    pub fn dim(&self) -> usize {
        match self {
            FeasibleSet::Box { lower, .. } => lower.len(),
            FeasibleSet::CappedSimplex { dim, .. } => *dim,
            FeasibleSet::BlockCappedSimplex { blocks, dim, .. } => blocks * dim,
            FeasibleSet::UnitSimplex { dim } => *dim,
            FeasibleSet::MultiSimplex { rows, cols } => rows * cols,
            FeasibleSet::Ball { dim, .. } => *dim,
            FeasibleSet::NonnegOrthant { dim } => *dim,
            FeasibleSet::SumCapNonneg { dim, .. } => *dim,
        }
    }

    /// Row structure `(rows, cols)` for sets that are products of unit simplices.
    pub fn simplex_rows(&self) -> Option<(usize, usize)> {
        match self {
            FeasibleSet::UnitSimplex { dim } => Some((1, *dim)),
            FeasibleSet::MultiSimplex { rows, cols } => Some((*rows, *cols)),
            _ => None,
        }
    }

    /// Euclidean projection `argmin_{y ∈ X} ½||y − x||²`.
    pub fn project(&self, x: &[f64]) -> Result<DenseVector> {
        check_dim(self.dim(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("cannot project a non-finite vector".into()));
        }
        let out = match self {
            FeasibleSet::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (l, u))| v.clamp(*l, *u))
                .collect(),
            FeasibleSet::CappedSimplex { cap, .. } => project_bounded_sum(x, 1.0, *cap, false).into(),
            FeasibleSet::BlockCappedSimplex { dim, cap, .. } => x
                .chunks(*dim)
                .flat_map(|block| project_bounded_sum(block, 1.0, *cap, false))
                .collect(),
            FeasibleSet::UnitSimplex { .. } => project_bounded_sum(x, f64::INFINITY, 1.0, true).into(),
            FeasibleSet::MultiSimplex { cols, .. } => x
                .chunks(*cols)
                .flat_map(|row| project_bounded_sum(row, f64::INFINITY, 1.0, true))
                .collect(),
            FeasibleSet::Ball { radius, .. } => {
                let n = norm(x, NormKind::L2);
                if n <= *radius {
                    x.into()
                } else {
                    x.iter().map(|v| v * radius / n).collect()
                }
            }
            FeasibleSet::NonnegOrthant { .. } => x.iter().map(|v| v.max(0.0)).collect(),
            FeasibleSet::SumCapNonneg { budget, .. } => project_bounded_sum(x, f64::INFINITY, *budget, false).into(),
        };
        Ok(out)
    }

    /// Membership test with absolute tolerance `tol`.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        let in_unit_capped = |block: &[f64], cap: f64| {
            block.iter().all(|v| *v >= -tol && *v <= 1.0 + tol) && block.iter().sum::<f64>() <= cap + tol
        };
        let on_simplex = |row: &[f64]| row.iter().all(|v| *v >= -tol) && (row.iter().sum::<f64>() - 1.0).abs() <= tol;
        match self {
            FeasibleSet::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol),
            FeasibleSet::CappedSimplex { cap, .. } => in_unit_capped(x, *cap),
            FeasibleSet::BlockCappedSimplex { dim, cap, .. } => x.chunks(*dim).all(|b| in_unit_capped(b, *cap)),
            FeasibleSet::UnitSimplex { .. } => on_simplex(x),
            FeasibleSet::MultiSimplex { cols, .. } => x.chunks(*cols).all(on_simplex),
            FeasibleSet::Ball { radius, .. } => norm(x, NormKind::L2) <= radius + tol,
            FeasibleSet::NonnegOrthant { .. } => x.iter().all(|v| *v >= -tol),
            FeasibleSet::SumCapNonneg { budget, .. } => {
                x.iter().all(|v| *v >= -tol) && x.iter().sum::<f64>() <= budget + tol
            }
        }
    }

    /// Diameter of the set measured in the given norm.
    ///
    /// The capped-simplex value is exact for integral caps (`√min(2C, N)` in
    /// l2); fractional caps use the vertex with `⌊C⌋` ones plus a fractional
    /// coordinate and are exact whenever `2⌈C⌉ ≤ N`.
    pub fn diameter(&self, kind: NormKind) -> Result<f64> {
        let capped = |dim: usize, cap: f64| -> f64 {
            let c = cap.min(dim as f64);
            let whole = c.floor();
            let frac = c - whole;
            let disjoint = 2.0 * c.ceil() <= dim as f64;
            match kind {
                NormKind::L2 => {
                    if disjoint {
                        (2.0 * (whole + frac * frac)).sqrt()
                    } else {
                        (2.0 * (whole + frac * frac)).min(dim as f64).sqrt()
                    }
                }
                NormKind::L1 => (2.0 * c).min(dim as f64),
                NormKind::Linf => 1.0,
            }
        };
        let d = match self {
            FeasibleSet::Box { lower, upper } => {
                let widths: Vec<f64> = upper.iter().zip(lower).map(|(u, l)| u - l).collect();
                norm(&widths, kind)
            }
            FeasibleSet::CappedSimplex { dim, cap } => capped(*dim, *cap),
            FeasibleSet::BlockCappedSimplex { blocks, dim, cap } => {
                let per = capped(*dim, *cap);
                match kind {
                    NormKind::L2 => per * (*blocks as f64).sqrt(),
                    NormKind::L1 => per * *blocks as f64,
                    NormKind::Linf => per,
                }
            }
            FeasibleSet::UnitSimplex { dim } => simplex_diameter(*dim, kind),
            FeasibleSet::MultiSimplex { rows, cols } => {
                let per = simplex_diameter(*cols, kind);
                match kind {
                    NormKind::L2 => per * (*rows as f64).sqrt(),
                    NormKind::L1 => per * *rows as f64,
                    NormKind::Linf => per,
                }
            }
            FeasibleSet::Ball { dim, radius } => match kind {
                NormKind::L2 | NormKind::Linf => 2.0 * radius,
                NormKind::L1 => 2.0 * radius * (*dim as f64).sqrt(),
            },
            FeasibleSet::NonnegOrthant { .. } => {
                return Err(Error::Unsupported("the nonnegative orthant is unbounded".into()))
            }
            FeasibleSet::SumCapNonneg { dim, budget } => {
                if *dim == 1 {
                    *budget
                } else {
                    match kind {
                        NormKind::L2 => budget * std::f64::consts::SQRT_2,
                        NormKind::L1 => 2.0 * budget,
                        NormKind::Linf => *budget,
                    }
                }
            }
        };
        Ok(d)
    }

    /// A minimizer of `⟨c, x⟩` over the set.
    ///
    /// Ties resolve toward the lowest coordinate index and, for coordinates
    /// whose coefficient is exactly zero, toward the lower bound.
    pub fn linear_minimizer(&self, c: &[f64]) -> Result<DenseVector> {
        check_dim(self.dim(), c.len())?;
        let capped = |block: &[f64], cap: f64| -> Vec<f64> {
            let neg: Vec<f64> = block.iter().map(|v| -v).collect();
            let whole = cap.floor() as usize;
            let frac = cap - cap.floor();
            let mut out = vec![0.0; block.len()];
            let chosen = top_k(&neg, whole + usize::from(frac > 0.0));
            for (rank, &i) in chosen.iter().enumerate() {
                if block[i] < 0.0 {
                    out[i] = if rank < whole { 1.0 } else { frac };
                }
            }
            out
        };
        let simplex_vertex = |row: &[f64]| -> Vec<f64> {
            let best = argmin(row);
            let mut out = vec![0.0; row.len()];
            out[best] = 1.0;
            out
        };
        let out: DenseVector = match self {
            FeasibleSet::Box { lower, upper } => c
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(ci, (l, u))| if *ci < 0.0 { *u } else { *l })
                .collect(),
            FeasibleSet::CappedSimplex { cap, .. } => capped(c, *cap).into(),
            FeasibleSet::BlockCappedSimplex { dim, cap, .. } => {
                c.chunks(*dim).flat_map(|b| capped(b, *cap)).collect()
            }
            FeasibleSet::UnitSimplex { .. } => simplex_vertex(c).into(),
            FeasibleSet::MultiSimplex { cols, .. } => c.chunks(*cols).flat_map(simplex_vertex).collect(),
            FeasibleSet::Ball { radius, .. } => {
                let n = norm(c, NormKind::L2);
                if n == 0.0 {
                    let mut v = DenseVector::zeros(c.len());
                    v[0] = -radius;
                    v
                } else {
                    c.iter().map(|v| -radius * v / n).collect()
                }
            }
            FeasibleSet::NonnegOrthant { .. } => {
                if c.iter().any(|v| *v < 0.0) {
                    return Err(Error::Unsupported("linear objective unbounded below on the orthant".into()));
                }
                DenseVector::zeros(c.len())
            }
            FeasibleSet::SumCapNonneg { budget, .. } => {
                let best = argmin(c);
                let mut v = DenseVector::zeros(c.len());
                if c[best] < 0.0 {
                    v[best] = *budget;
                }
                v
            }
        };
        Ok(out)
    }
}

fn simplex_diameter(dim: usize, kind: NormKind) -> f64 {
    if dim < 2 {
        return 0.0;
    }
    match kind {
        NormKind::L2 => std::f64::consts::SQRT_2,
        NormKind::L1 => 2.0,
        NormKind::Linf => 1.0,
    }
}

/// Index of the smallest entry, lowest index on ties.
pub fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Projects `x` onto `{y ∈ [0, upper]^n : Σy ≤ total}` (or `= total` when
/// `equality` is set) by locating the water level `τ` with
/// `Σ clip(x_i − τ, 0, upper) = total`.
///
/// The breakpoints `x_i` and `x_i − upper` are swept in decreasing order; the
/// level function is piecewise linear between them, so the root is exact.
pub fn project_bounded_sum(x: &[f64], upper: f64, total: f64, equality: bool) -> Vec<f64> {
    let clip = |v: f64| v.clamp(0.0, upper);
    if !equality {
        let s: f64 = x.iter().map(|&v| clip(v)).sum();
        if s <= total {
            return x.iter().map(|&v| clip(v)).collect();
        }
    }
    // (breakpoint, +1 when a coordinate enters the interior, -1 when it saturates)
    let mut events: Vec<(f64, i32)> = Vec::with_capacity(2 * x.len());
    for &v in x {
        events.push((v, 1));
        if upper.is_finite() {
            events.push((v - upper, -1));
        }
    }
    events.sort_unstable_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));

    let mut level = 0.0;
    let mut active: i64 = 0;
    let mut prev = events[0].0;
    let mut tau = None;
    for &(b, delta) in &events {
        let next = level + active as f64 * (prev - b);
        if active > 0 && next >= total {
            tau = Some(prev - (total - level) / active as f64);
            break;
        }
        level = next;
        prev = b;
        active += i64::from(delta);
    }
    let tau = match tau {
        Some(t) => t,
        // Past the last breakpoint: only reachable with an unbounded top.
        None if active > 0 => prev - (total - level) / active as f64,
        // Every coordinate saturated and the target is still above: clip.
        None => return x.iter().map(|&v| clip(v - prev)).collect(),
    };
    x.iter().map(|&v| clip(v - tau)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn capped_simplex_symmetric_split() {
        let set = FeasibleSet::capped_simplex(3, 1.0).unwrap();
        let p = set.project(&[1.0, 1.0, 1.0]).unwrap();
        assert!(close(&p, &[1.0 / 3.0; 3], 1e-12));
    }

    #[test]
    fn box_clamps_per_coordinate() {
        let set = FeasibleSet::uniform_box(2, -1.0, 1.0).unwrap();
        assert_eq!(set.project(&[1.5, -0.2]).unwrap().as_slice(), &[1.0, -0.2]);
    }

    #[test]
    fn capped_simplex_matches_grid_oracle() {
        // brute-force minimization of ½||y − x||² over a 1e-3 lattice
        let x = [0.9, 0.3];
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        for i in 0..=1000 {
            for j in 0..=(1000 - i) {
                let y = [i as f64 * 1e-3, j as f64 * 1e-3];
                let d = (y[0] - x[0]).powi(2) + (y[1] - x[1]).powi(2);
                if d < best.0 {
                    best = (d, y);
                }
            }
        }
        let set = FeasibleSet::capped_simplex(2, 1.0).unwrap();
        let p = set.project(&x).unwrap();
        assert!(close(&p, &best.1, 2e-3));
        assert!(close(&p, &[0.8, 0.2], 1e-12));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let set = FeasibleSet::capped_simplex(3, 1.0).unwrap();
        assert!(matches!(set.project(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn bregman_values() {
        assert_eq!(bregman(BregmanKind::Quadratic, &[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(bregman(BregmanKind::Entropic, &[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        // direct summation: 1·ln(1/0.5) + 0·ln 0 = ln 2
        let direct = 1.0f64 * (1.0f64 / 0.5).ln();
        let b = bregman(BregmanKind::Entropic, &[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((b - direct).abs() < 1e-15);
        assert!((b - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(matches!(
            bregman(BregmanKind::Entropic, &[0.5, 0.5], &[1.0, 0.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn norms_and_duals() {
        assert_eq!(norm(&[1.0, -2.0], NormKind::L1), 3.0);
        assert_eq!(norm(&[1.0, -2.0], NormKind::Linf), 2.0);
        assert_eq!(NormKind::L1.dual(), NormKind::Linf);
        for k in [NormKind::L1, NormKind::L2, NormKind::Linf] {
            assert_eq!(k.dual().dual(), k);
        }
    }

    #[test]
    fn diameters() {
        let cs = FeasibleSet::capped_simplex(100, 10.0).unwrap();
        assert!((cs.diameter(NormKind::L2).unwrap() - 20f64.sqrt()).abs() < 1e-12);
        let b = FeasibleSet::uniform_box(7, 0.0, 1.0).unwrap();
        assert!((b.diameter(NormKind::L2).unwrap() - 7f64.sqrt()).abs() < 1e-12);
        // brute force over simplex vertices
        let verts: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 1.0]];
        let mut brute: f64 = 0.0;
        for a in &verts {
            for b in &verts {
                brute = brute.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
            }
        }
        let s = FeasibleSet::unit_simplex(2).unwrap();
        assert!((s.diameter(NormKind::L2).unwrap() - brute).abs() < 1e-15);
        let o = FeasibleSet::NonnegOrthant { dim: 2 };
        assert!(matches!(o.diameter(NormKind::L2), Err(Error::Unsupported(_))));
    }

    #[test]
    fn capped_simplex_diameter_matches_vertex_enumeration() {
        for (n, c) in [(4usize, 1.0), (4, 2.0), (5, 3.0), (6, 2.0)] {
            let set = FeasibleSet::capped_simplex(n, c).unwrap();
            let k = c as usize;
            let mut verts = Vec::new();
            for mask in 0u32..(1 << n) {
                if mask.count_ones() as usize <= k {
                    verts.push((0..n).map(|i| f64::from((mask >> i) & 1)).collect::<Vec<_>>());
                }
            }
            let mut best: f64 = 0.0;
            for a in &verts {
                for b in &verts {
                    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
                    best = best.max(d.sqrt());
                }
            }
            assert!((set.diameter(NormKind::L2).unwrap() - best).abs() < 1e-12, "n={n} c={c}");
        }
    }

    #[test]
    fn linear_minimizer_tie_breaks() {
        let b = FeasibleSet::uniform_box(1, -1.0, 1.0).unwrap();
        assert_eq!(b.linear_minimizer(&[1.0]).unwrap().as_slice(), &[-1.0]);
        assert_eq!(b.linear_minimizer(&[0.0]).unwrap().as_slice(), &[-1.0]);
        assert_eq!(b.linear_minimizer(&[-1.0]).unwrap().as_slice(), &[1.0]);
        let cs = FeasibleSet::capped_simplex(4, 2.0).unwrap();
        assert_eq!(cs.linear_minimizer(&[-1.0, -3.0, -1.0, 2.0]).unwrap().as_slice(), &[1.0, 1.0, 0.0, 0.0]);
        let s = FeasibleSet::unit_simplex(3).unwrap();
        assert_eq!(s.linear_minimizer(&[0.0, 0.0, 1.0]).unwrap().as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn top_k_breaks_ties_low() {
        assert_eq!(top_k(&[5.0, 5.0, 1.0], 1), vec![0]);
        assert_eq!(top_k(&[1.0, 5.0, 5.0, 3.0], 2), vec![1, 2]);
        assert_eq!(top_k(&[1.0, 2.0], 5), vec![1, 0]);
    }

    fn sets() -> Vec<FeasibleSet> {
        vec![
            FeasibleSet::uniform_box(6, -1.0, 2.0).unwrap(),
            FeasibleSet::capped_simplex(6, 2.0).unwrap(),
            FeasibleSet::capped_simplex(6, 2.5).unwrap(),
            FeasibleSet::block_capped_simplex(2, 3, 1.0).unwrap(),
            FeasibleSet::unit_simplex(6).unwrap(),
            FeasibleSet::multi_simplex(2, 3).unwrap(),
            FeasibleSet::ball(6, 1.5).unwrap(),
            FeasibleSet::NonnegOrthant { dim: 6 },
            FeasibleSet::sum_cap_nonneg(6, 3.0).unwrap(),
        ]
    }

    fn feasible_point(set: &FeasibleSet, raw: &[f64]) -> DenseVector {
        set.project(&raw.iter().map(|v| v * 3.0).collect::<Vec<_>>()).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn projection_idempotent_feasible_and_optimal(
            x in proptest::collection::vec(-5.0f64..5.0, 6),
            y in proptest::collection::vec(-1.0f64..1.0, 6),
        ) {
            for set in sets() {
                let p = set.project(&x).unwrap();
                prop_assert!(set.contains(&p, FEAS_TOL), "{set:?} {p:?}");
                let pp = set.project(&p).unwrap();
                prop_assert!(close(&p, &pp, 1e-12), "{set:?}");
                let f = feasible_point(&set, &y);
                let inner: f64 = x.iter().zip(p.iter()).zip(f.iter()).map(|((xi, pi), fi)| (xi - pi) * (fi - pi)).sum();
                prop_assert!(inner <= OPT_TOL, "{set:?} inner={inner}");
            }
        }

        #[test]
        fn holder_inequality(
            x in proptest::collection::vec(-5.0f64..5.0, 5),
            y in proptest::collection::vec(-5.0f64..5.0, 5),
        ) {
            for k in [NormKind::L1, NormKind::L2, NormKind::Linf] {
                prop_assert!(dot(&x, &y) <= norm(&x, k) * norm(&y, k.dual()) + 1e-12);
            }
        }

        #[test]
        fn bregman_nonnegative(
            a in proptest::collection::vec(0.0f64..1.0, 4),
            b in proptest::collection::vec(0.01f64..1.0, 4),
        ) {
            let sa: f64 = a.iter().sum::<f64>() + 1e-9;
            let sb: f64 = b.iter().sum();
            let x: Vec<f64> = a.iter().map(|v| (v + 1e-9 / 4.0) / sa).collect();
            let y: Vec<f64> = b.iter().map(|v| v / sb).collect();
            for kind in [BregmanKind::Quadratic, BregmanKind::Entropic] {
                prop_assert!(bregman(kind, &x, &y).unwrap() >= 0.0);
                prop_assert!(bregman(kind, &y, &y).unwrap().abs() < 1e-15);
            }
        }
    }
}
