//! Experiment orchestration: configuration, the per-slot protocol, slot logs,
//! benchmark computation and bound reports.

mod config;
mod report;
mod run;
mod streams;

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use config::{
    set_dotted, EnvironmentSpec, ExperimentConfig, FtrlRate, LearnerSpec, OgdRate, OutputSpec, TraceSpec,
};
pub use report::{bound_spec, report_bounds, BoundReport, BoundSpec, CheckpointBound};
pub use run::{run_experiment, run_replica, BenchmarkInfo, ReplicaSummary, RunOutput, RunSummary};
pub use streams::{build_trace, export_streams, replica_seed};

/// The events of one slot, in their mandatory order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Predict,
    Decide,
    Incur,
    Reveal,
    Measure,
    Update,
}

impl Phase {
    fn next(self) -> Phase {
        match self {
            Phase::Predict => Phase::Decide,
            Phase::Decide => Phase::Incur,
            Phase::Incur => Phase::Reveal,
            Phase::Reveal => Phase::Measure,
            Phase::Measure => Phase::Update,
            Phase::Update => Phase::Predict,
        }
    }
}

/// Enforces predict → decide → incur → reveal → measure → update.
#[derive(Debug, Clone)]
pub struct SlotProtocol {
    expected: Phase,
    completed: usize,
}

impl Default for SlotProtocol {
    fn default() -> Self {
        Self::new()
    }
}

impl SlotProtocol {
    pub fn new() -> Self {
        Self { expected: Phase::Predict, completed: 0 }
    }

    /// Number of fully completed slots.
    pub fn completed(&self) -> usize {
        self.completed
    }

    pub fn expected(&self) -> Phase {
        self.expected
    }

    pub fn advance(&mut self, phase: Phase) -> Result<()> {
        if phase != self.expected {
            return Err(Error::Protocol(format!(
                "slot {}: {phase:?} attempted while {:?} was due",
                self.completed + 1,
                self.expected
            )));
        }
        if phase == Phase::Update {
            self.completed += 1;
        }
        self.expected = phase.next();
        Ok(())
    }
}

/// One row of the slot log. Costs are in the environment's native sense
/// (utility for maximization problems); regret is always "benchmark better
/// than learner" positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub t: usize,
    pub replica: usize,
    pub digest: String,
    pub cost: f64,
    /// The full-horizon benchmark's value in this slot.
    pub benchmark_cost: f64,
    pub eps: f64,
    pub eps_sum: f64,
    pub sigma_sum: Option<f64>,
    pub grad_norm: f64,
    /// Regret so far against the full-horizon benchmark.
    pub regret: f64,
    /// Regret against the best decision for slots `1..=t`; filled at
    /// checkpoints.
    pub prefix_regret: Option<f64>,
    pub violation: Option<f64>,
    pub fairness_regret: Option<f64>,
    /// Space-separated decision vector when full vectors are requested.
    pub x: Option<String>,
}

/// SHA-256 over the little-endian bytes of `x`, first 16 bytes in hex.
pub fn decision_digest(x: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in x {
        h.update(v.to_le_bytes());
    }
    hex::encode(&h.finalize()[..16])
}

pub fn write_log<W: Write>(records: &[SlotRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    if records.is_empty() {
        wr.write_record(LOG_COLUMNS)?;
    }
    for r in records {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_log<R: Read>(r: R) -> Result<Vec<SlotRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rd.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

pub fn save_log(records: &[SlotRecord], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_log(records, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_log(path: &Path) -> Result<Vec<SlotRecord>> {
    read_log(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Checks that each replica's rows are the append-only sequence `t = 1, 2, …`
/// and replicas appear in order.
pub fn check_log(records: &[SlotRecord]) -> Result<()> {
    let mut expect = (0usize, 1usize);
    for r in records {
        if r.replica > expect.0 && r.t == 1 {
            expect = (r.replica, 1);
        }
        if (r.replica, r.t) != expect {
            return Err(Error::Protocol(format!(
                "log row (replica {}, t {}) out of order, expected (replica {}, t {})",
                r.replica, r.t, expect.0, expect.1
            )));
        }
        expect.1 += 1;
    }
    Ok(())
}

pub const LOG_COLUMNS: [&str; 14] = [
    "t",
    "replica",
    "digest",
    "cost",
    "benchmark_cost",
    "eps",
    "eps_sum",
    "sigma_sum",
    "grad_norm",
    "regret",
    "prefix_regret",
    "violation",
    "fairness_regret",
    "x",
];
