//! Seed derivation and perturbation streams for each environment.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{EnvironmentSpec, ExperimentConfig, TraceSpec};
use crate::caching::{zipf_trace, BipartiteGraph, Request, RequestTrace};
use crate::environments::{write_long_csv, BudgetInstance};
use crate::error::{Error, Result};
use crate::sets::DenseVector;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replica `r`; replica 0 uses the configured seed unchanged.
pub fn replica_seed(seed: u64, replica: usize) -> u64 {
    if replica == 0 {
        seed
    } else {
        splitmix(seed ^ splitmix(replica as u64))
    }
}

/// Independent sub-stream `k` of a replica seed.
pub(crate) fn stream(seed: u64, k: u64) -> u64 {
    splitmix(seed.wrapping_add(k.wrapping_mul(0xD6E8_FEB8_6659_FD93)))
}

pub(crate) const TRACE: u64 = 1;
pub(crate) const PREDICTOR: u64 = 2;
pub(crate) const LEARNER: u64 = 3;
pub(crate) const LAYOUT: u64 = 4;
pub(crate) const BENCHMARK: u64 = 5;

/// The request trace for a caching environment.
pub fn build_trace(spec: &TraceSpec, files: usize, users: usize, horizon: usize, seed: u64) -> Result<RequestTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = match spec {
        TraceSpec::Zipf { zeta } => zipf_trace(files, *zeta, horizon, &mut rng)?,
        TraceSpec::Uniform => RequestTrace::new(
            files,
            1,
            (0..horizon).map(|_| Request { file: rng.random_range(0..files), user: 0, weight: 1.0 }).collect(),
        )?,
        TraceSpec::Adversarial { max_weight, phase } => {
            let mut reqs = Vec::with_capacity(horizon);
            let mut file = 0;
            for t in 0..horizon {
                if t % phase == 0 {
                    file = rng.random_range(0..files);
                }
                let weight = max_weight * (0.5 + 0.5 * rng.random::<f64>());
                reqs.push(Request { file, user: 0, weight });
            }
            RequestTrace::new(files, 1, reqs)?
        }
        TraceSpec::Csv { path } => {
            let mut tr = RequestTrace::load(path, Some(files))?;
            if tr.len() < horizon {
                return Err(Error::Config(format!("{} holds {} requests, horizon is {horizon}", path.display(), tr.len())));
            }
            tr.requests.truncate(horizon);
            if tr.users > users {
                return Err(Error::Config(format!("trace has {} users, environment {users}", tr.users)));
            }
            tr.users = users;
            return Ok(tr);
        }
    };
    if users > 1 {
        for r in &mut trace.requests {
            r.user = rng.random_range(0..users);
        }
        trace.users = users;
    }
    Ok(trace)
}

/// Random links with probability `p`; isolated users get one random cache.
pub(crate) fn random_graph(users: usize, caches: usize, p: f64, seed: u64) -> Result<BipartiteGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let links = (0..users)
        .map(|_| {
            let mut row: Vec<bool> = (0..caches).map(|_| rng.random::<f64>() < p).collect();
            if !row.iter().any(|b| *b) {
                row[rng.random_range(0..caches)] = true;
            }
            row
        })
        .collect();
    BipartiteGraph::new(links)
}

/// Integer file sizes `1..=max_size`.
pub(crate) fn random_sizes(files: usize, max_size: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..files).map(|_| rng.random_range(1..=max_size) as f64).collect()
}

/// Alternating costs `c_t = (−1)^t`.
pub(crate) fn alternating(horizon: usize) -> Vec<DenseVector> {
    (1..=horizon).map(|t| DenseVector::from(vec![if t % 2 == 0 { 1.0 } else { -1.0 }])).collect()
}

/// Linear costs `U[0,1]^dim` for the switching environment.
pub(crate) fn switching_costs(dim: usize, horizon: usize, seed: u64) -> Vec<DenseVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..horizon).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect()
}

pub(crate) fn budget_instance(dim: usize, noise: f64, share: f64, horizon: usize, seed: u64) -> Result<BudgetInstance> {
    BudgetInstance::random(dim, horizon, noise, share, seed)
}

/// Writes the perturbation stream that replica `replica` of `cfg` would see:
/// a request trace for caching environments, long-format
/// `t,entity_id,value` otherwise.
pub fn export_streams(cfg: &ExperimentConfig, replica: usize, path: &Path) -> Result<()> {
    let seed = stream(replica_seed(cfg.seed, replica), TRACE);
    let t = cfg.horizon;
    let file = || -> Result<std::io::BufWriter<std::fs::File>> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
    };
    match &cfg.environment {
        EnvironmentSpec::Caching { files, trace, .. } | EnvironmentSpec::SizedCaching { files, trace, .. } => {
            build_trace(trace, *files, 1, t, seed)?.write_csv(file()?)
        }
        EnvironmentSpec::CacheNetwork { files, users, trace, .. } => build_trace(trace, *files, *users, t, seed)?.write_csv(file()?),
        EnvironmentSpec::PowerControl { channels, gains, .. } => write_long_csv(&gains.generate(*channels, t, seed)?, file()?),
        EnvironmentSpec::Slicing { resources, market, .. } => {
            // entity 0 is α, then φ, advance prices, spot prices
            let rows: Vec<DenseVector> = market
                .generate(*resources, t, seed)?
                .into_iter()
                .map(|p| std::iter::once(p.alpha).chain(p.phi).chain(p.advance).chain(p.spot).collect())
                .collect();
            write_long_csv(&rows, file()?)
        }
        EnvironmentSpec::Budget { dim, noise, budget_share } => {
            write_long_csv(&budget_instance(*dim, *noise, *budget_share, t, seed)?.costs, file()?)
        }
        EnvironmentSpec::Fairness { loads, .. } => {
            // loads first, then capacities
            let rows: Vec<DenseVector> = loads.generate(t, seed)?.into_iter().map(|(l, c)| l.into_iter().chain(c).collect()).collect();
            write_long_csv(&rows, file()?)
        }
        EnvironmentSpec::Switching { dim } => write_long_csv(&switching_costs(*dim, t, seed), file()?),
        EnvironmentSpec::Alternating => write_long_csv(&alternating(t), file()?),
    }
}
