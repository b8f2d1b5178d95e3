//! Next-slot gradient predictors and prediction-error measurement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::sets::{norm, DenseVector, NormKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorKind {
    Perfect,
    /// Correct one-hot guess with probability `rho`, otherwise a uniformly
    /// drawn wrong index carrying the same value.
    RhoAccurate { rho: f64 },
    /// Repeats the last observed gradient (zero before any observation).
    Lagged,
    /// Truth plus i.i.d. `N(0, scale²)` noise per coordinate.
    GaussianNoise { scale: f64 },
    Zero,
}

impl PredictorKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PredictorKind::RhoAccurate { rho } if !(0.0..=1.0).contains(&rho) => {
                Err(Error::Parameter(format!("rho must lie in [0,1], got {rho}")))
            }
            PredictorKind::GaussianNoise { scale } if !(scale >= 0.0) || !scale.is_finite() => {
                Err(Error::Parameter(format!("noise scale must be >= 0, got {scale}")))
            }
            _ => Ok(()),
        }
    }
}

/// What a predictor may look at when forming its guess for the next slot.
#[derive(Debug, Clone, Copy)]
pub struct PredictionContext<'a> {
    pub dim: usize,
    /// The true upcoming gradient (simulation privilege).
    pub next_true: Option<&'a [f64]>,
    /// The most recently revealed gradient.
    pub last_observed: Option<&'a [f64]>,
}

#[derive(Debug, Clone)]
pub struct Predictor {
    kind: PredictorKind,
    rng: ChaCha8Rng,
}

impl Predictor {
    pub fn new(kind: PredictorKind, seed: u64) -> Result<Self> {
        kind.validate()?;
        Ok(Self { kind, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn kind(&self) -> PredictorKind {
        self.kind
    }

    pub fn needs_future(&self) -> bool {
        matches!(
            self.kind,
            PredictorKind::Perfect | PredictorKind::RhoAccurate { .. } | PredictorKind::GaussianNoise { .. }
        )
    }

    pub fn predict(&mut self, ctx: &PredictionContext<'_>) -> Result<DenseVector> {
        let truth = || {
            ctx.next_true
                .ok_or_else(|| Error::Protocol("predictor needs the upcoming gradient but none was supplied".into()))
                .and_then(|v| {
                    check_dim(ctx.dim, v.len())?;
                    Ok(v)
                })
        };
        match self.kind {
            PredictorKind::Perfect => Ok(truth()?.into()),
            PredictorKind::Zero => Ok(DenseVector::zeros(ctx.dim)),
            PredictorKind::Lagged => match ctx.last_observed {
                Some(v) => {
                    check_dim(ctx.dim, v.len())?;
                    Ok(v.into())
                }
                None => Ok(DenseVector::zeros(ctx.dim)),
            },
            PredictorKind::GaussianNoise { scale } => {
                let v = truth()?;
                if scale == 0.0 {
                    return Ok(v.into());
                }
                let normal = Normal::new(0.0, scale).map_err(|e| Error::Parameter(e.to_string()))?;
                Ok(v.iter().map(|x| x + normal.sample(&mut self.rng)).collect())
            }
            PredictorKind::RhoAccurate { rho } => {
                let v = truth()?;
                let nz: Vec<usize> = (0..v.len()).filter(|&i| v[i] != 0.0).collect();
                if nz.len() != 1 {
                    return Err(Error::Unsupported("rho-accurate prediction needs one-hot gradients".into()));
                }
                let hit = self.rng.random::<f64>() < rho;
                if hit || v.len() == 1 {
                    return Ok(v.into());
                }
                let idx = nz[0];
                let mut wrong = self.rng.random_range(0..v.len() - 1);
                if wrong >= idx {
                    wrong += 1;
                }
                Ok(DenseVector::one_hot(v.len(), wrong, v[idx]))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMode {
    SqL2,
    SqLinf,
    SqL1,
}

impl ErrorMode {
    pub fn norm(self) -> NormKind {
        match self {
            ErrorMode::SqL2 => NormKind::L2,
            ErrorMode::SqLinf => NormKind::Linf,
            ErrorMode::SqL1 => NormKind::L1,
        }
    }
}

/// Squared distance `||g − g̃||²` in the mode's norm.
pub fn measure_error(g: &[f64], g_tilde: &[f64], mode: ErrorMode) -> Result<f64> {
    check_dim(g.len(), g_tilde.len())?;
    let diff: Vec<f64> = g.iter().zip(g_tilde).map(|(a, b)| a - b).collect();
    Ok(match mode {
        ErrorMode::SqL2 => diff.iter().map(|d| d * d).sum(),
        _ => norm(&diff, mode.norm()).powi(2),
    })
}
