use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use oplearn::caching::zipf_trace;
use oplearn::error::{Error, Result};
use oplearn::harness::{
    check_log, export_streams, load_log, report_bounds, run_experiment, save_log, set_dotted, BoundReport, ExperimentConfig, RunSummary,
};

#[derive(Parser)]
#[command(name = "oplearn", version, about = "Optimistic online learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a request trace (caching) or perturbation stream (others).
    TraceGen {
        /// Experiment config whose environment stream is exported.
        #[arg(long, conflicts_with_all = ["files", "zeta"])]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        replica: usize,
        /// Zipf catalogue size, when no config is given.
        #[arg(long, requires_all = ["zeta", "horizon"])]
        files: Option<usize>,
        #[arg(long)]
        zeta: Option<f64>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment; writes the slot log CSV and the summary JSON.
    Run {
        config: PathBuf,
        /// Override `key=value` entries of the config.
        #[arg(long = "set")]
        overrides: Vec<String>,
        /// Directory for outputs not named in the config.
        #[arg(long, env = "OPLEARN_OUT_DIR")]
        out_dir: Option<PathBuf>,
    },
    /// Re-evaluate the regret bounds of a slot log.
    Report {
        #[arg(long)]
        log: PathBuf,
        /// Summary JSON of the same run; supplies the bound constants.
        #[arg(long)]
        summary: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit with status 4 when a deterministic bound is exceeded.
        #[arg(long)]
        strict: bool,
    },
    /// Run the cartesian grid of `key=v1,v2,...` overrides.
    Sweep {
        config: PathBuf,
        #[arg(long = "set", required = true)]
        grid: Vec<String>,
        #[arg(long, env = "OPLEARN_OUT_DIR")]
        out_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("oplearn: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::Parameter(_) | Error::Json(_) => 2,
                Error::Protocol(_) => 3,
                _ => 1,
            })
        }
    }
}

fn dispatch(cmd: Command) -> Result<u8> {
    match cmd {
        Command::TraceGen { config, replica, files, zeta, horizon, seed, out } => {
            match config {
                Some(path) => {
                    let cfg = ExperimentConfig::load(&path)?;
                    if replica >= cfg.replicas {
                        return Err(Error::Config(format!("replica {replica} >= replicas {}", cfg.replicas)));
                    }
                    export_streams(&cfg, replica, &out)?;
                }
                None => {
                    let (Some(files), Some(zeta), Some(horizon)) = (files, zeta, horizon) else {
                        return Err(Error::Config("trace-gen needs --config or --files/--zeta/--horizon".into()));
                    };
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    zipf_trace(files, zeta, horizon, &mut rng)?.save(&out)?;
                }
            }
            Ok(0)
        }
        Command::Run { config, overrides, out_dir } => {
            let mut doc = read_doc(&config)?;
            for o in &overrides {
                set_dotted(&mut doc, o)?;
            }
            let cfg = parse_doc(&doc)?;
            let summary = run_to_disk(cfg, &stem(&config), out_dir.as_deref())?;
            if summary.flagged {
                eprintln!("oplearn: benchmark solver did not converge");
            }
            Ok(0)
        }
        Command::Report { log, summary, out, strict } => {
            let records = load_log(&log)?;
            check_log(&records)?;
            let summary: RunSummary = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(&summary)?))?;
            let mut reports: Vec<BoundReport> = Vec::new();
            for rep in &summary.replicas {
                let rows: Vec<_> = records.iter().filter(|r| r.replica == rep.replica).cloned().collect();
                let mut report = report_bounds(&rep.bounds.spec, &rows);
                report.replica = rep.replica;
                reports.push(report);
            }
            let text = serde_json::to_string_pretty(&reports)?;
            match out {
                Some(p) => std::fs::write(p, text + "\n")?,
                None => println!("{text}"),
            }
            let exceeded = reports.iter().any(BoundReport::exceeded);
            if exceeded {
                eprintln!("oplearn: regret bound exceeded");
            }
            Ok(if strict && exceeded { 4 } else { 0 })
        }
        Command::Sweep { config, grid, out_dir } => {
            let base = read_doc(&config)?;
            let axes = grid.iter().map(|g| parse_axis(g)).collect::<Result<Vec<_>>>()?;
            let combos = cartesian(&axes);
            let dir = out_dir.unwrap_or_else(|| PathBuf::from("."));
            let name = stem(&config);
            // validate every point before running any
            let cfgs = combos
                .iter()
                .map(|combo| {
                    let mut doc = base.clone();
                    for a in combo {
                        set_dotted(&mut doc, a)?;
                    }
                    parse_doc(&doc)
                })
                .collect::<Result<Vec<_>>>()?;
            let results = cfgs
                .into_par_iter()
                .enumerate()
                .map(|(i, mut cfg)| {
                    cfg.output.log = None;
                    cfg.output.summary = None;
                    let summary = run_to_disk(cfg, &format!("{name}-{i:03}"), Some(&dir))?;
                    Ok(SweepPoint { index: i, overrides: combos[i].clone(), summary })
                })
                .collect::<Result<Vec<_>>>()?;
            let path = dir.join(format!("{name}.sweep.json"));
            std::fs::write(&path, serde_json::to_string_pretty(&results)? + "\n")?;
            Ok(0)
        }
    }
}

#[derive(Serialize)]
struct SweepPoint {
    index: usize,
    overrides: Vec<String>,
    summary: RunSummary,
}

fn read_doc(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn parse_doc(doc: &toml::Table) -> Result<ExperimentConfig> {
    ExperimentConfig::from_toml(&toml::to_string(doc).map_err(|e| Error::Config(e.to_string()))?)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into())
}

fn run_to_disk(mut cfg: ExperimentConfig, name: &str, out_dir: Option<&Path>) -> Result<RunSummary> {
    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let log = cfg.output.log.take().unwrap_or_else(|| dir.join(format!("{name}.csv")));
    let summary_path = cfg.output.summary.take().unwrap_or_else(|| dir.join(format!("{name}.summary.json")));
    let out = run_experiment(&cfg)?;
    save_log(&out.records, &log)?;
    if let Some(d) = summary_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(d)?;
    }
    std::fs::write(&summary_path, serde_json::to_string_pretty(&out.summary)? + "\n")?;
    Ok(out.summary)
}

/// `key=v1,v2` → `["key=v1", "key=v2"]`; commas inside brackets or quotes
/// do not split.
fn parse_axis(spec: &str) -> Result<Vec<String>> {
    let (key, values) = spec.split_once('=').ok_or_else(|| Error::Config(format!("expected key=v1,v2,..., got {spec:?}")))?;
    let mut out = Vec::new();
    let (mut depth, mut quoted, mut cur) = (0i32, false, String::new());
    for ch in values.chars() {
        match ch {
            '"' => quoted = !quoted,
            '[' | '{' if !quoted => depth += 1,
            ']' | '}' if !quoted => depth -= 1,
            ',' if depth == 0 && !quoted => {
                out.push(format!("{key}={}", cur.trim()));
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    out.push(format!("{key}={}", cur.trim()));
    Ok(out)
}

fn cartesian(axes: &[Vec<String>]) -> Vec<Vec<String>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v.clone());
                    p
                })
            })
            .collect()
    })
}
