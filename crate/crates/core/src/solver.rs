//! Projected-gradient minimization with Armijo backtracking.

use crate::error::{check_dim, Result};
use crate::sets::{dot, norm, DenseVector, FeasibleSet, NormKind};

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Stop once the projected step `||x⁺ − x||` falls below `tol · (1 + ||x||)`.
    pub tol: f64,
    pub max_iter: usize,
    /// First trial step; grows by 2x after each accepted step.
    pub initial_step: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 10_000, initial_step: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub x: DenseVector,
    pub value: f64,
    pub iterations: usize,
    /// Norm of the final gradient mapping `(x − Π(x − s∇f))/s`.
    pub residual: f64,
    pub converged: bool,
}

/// Minimizes a smooth convex `objective` over `set` starting from `x0`.
///
/// `objective(x, grad)` returns `f(x)` and writes `∇f(x)` into `grad`.
pub fn projected_gradient<F>(set: &FeasibleSet, x0: &[f64], mut objective: F, opts: SolverOptions) -> Result<SolveOutcome>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    check_dim(set.dim(), x0.len())?;
    let n = x0.len();
    let mut x = set.project(x0)?;
    let mut grad = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];
    let mut value = objective(&x, &mut grad);
    let mut step = opts.initial_step;
    let mut residual = f64::INFINITY;
    for it in 0..opts.max_iter {
        let mut accepted = None;
        for _ in 0..200 {
            let target: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi - step * gi).collect();
            let y = set.project(&target)?;
            let d: Vec<f64> = y.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
            let dd = dot(&d, &d);
            let fy = objective(&y, &mut trial_grad);
            // for convex objectives this curvature test implies the Armijo
            // model bound and stays reliable once value differences reach
            // rounding level
            let curv: f64 = trial_grad.iter().zip(&grad).zip(&d).map(|((a, b), di)| (a - b) * di).sum();
            if fy.is_finite() && curv <= dd / (2.0 * step) {
                accepted = Some((y, fy, dd.sqrt()));
                break;
            }
            step *= 0.5;
        }
        let Some((y, fy, moved)) = accepted else {
            return Ok(SolveOutcome { x, value, iterations: it, residual, converged: false });
        };
        residual = moved / step;
        let scale = 1.0 + norm(&x, NormKind::L2);
        x = y;
        value = fy;
        std::mem::swap(&mut grad, &mut trial_grad);
        if moved <= opts.tol * scale {
            return Ok(SolveOutcome { x, value, iterations: it + 1, residual, converged: true });
        }
        step *= 2.0;
    }
    Ok(SolveOutcome { x, value, iterations: opts.max_iter, residual, converged: false })
}
