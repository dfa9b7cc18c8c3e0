//! Command-line driver: flag/config parsing, paper-preset experiment
//! suites, and CSV/JSON metric output.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::algorithms::{AlgorithmKind, CalibrationSchedule, OrientationPolicy};
use crate::data::{parse_libsvm, partition_dirichlet, partition_iid, partition_shard, Partition};
use crate::engine::{MetricsRecord, RunConfig, RunOutput};
use crate::error::{FedsimError, Result};
use crate::heterogeneity::{StepMode, StepSchedule};
use crate::numeric::{ParamVector, RngStream};
use crate::objectives::{LinearToyClient, LogisticClient, ObjectiveSpec, QuadraticClient};
use crate::oracle::OracleMethod;
use rand::Rng;

/// Flat, serializable experiment recipe. This is what config files and
/// manifests contain; a [`RunConfig`] is built from it deterministically.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: String,
    pub mu_prox: f64,
    pub policy: String,
    pub lambda: f64,
    pub lambda_schedule: Option<String>,
    pub eta: f64,
    pub rounds: usize,
    pub clients: usize,
    pub dim: usize,
    pub steps_mean: f64,
    pub steps_var: f64,
    pub steps_mode: String,
    pub steps_explicit: Option<Vec<usize>>,
    pub partition: String,
    pub dataset: Option<String>,
    pub objective: String,
    pub quad_centers: Option<Vec<f64>>,
    pub sigma: f64,
    pub l2_reg: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub transport: String,
    pub port: u16,
    pub threads: usize,
    pub eval_every: usize,
    pub reconstruction: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            algorithm: "fedagrac".into(),
            mu_prox: 0.1,
            policy: "default".into(),
            lambda: 1.0,
            lambda_schedule: None,
            eta: 0.1,
            rounds: 100,
            clients: 10,
            dim: 10,
            steps_mean: 50.0,
            steps_var: 400.0,
            steps_mode: "fixed".into(),
            steps_explicit: None,
            partition: "iid".into(),
            dataset: None,
            objective: "quadratic".into(),
            quad_centers: None,
            sigma: 0.5,
            l2_reg: 1e-3,
            batch_size: 20,
            seed: 42,
            transport: "inproc".into(),
            port: 0,
            threads: 1,
            eval_every: 1,
            reconstruction: true,
        }
    }
}

fn parse_policy(name: &str) -> Result<OrientationPolicy> {
    match name {
        "default" => Ok(OrientationPolicy::Default),
        "avg" => Ok(OrientationPolicy::Avg),
        "first" => Ok(OrientationPolicy::First),
        "reverse" => Ok(OrientationPolicy::Reverse),
        other => Err(FedsimError::config(format!("unknown policy '{other}'"))),
    }
}

fn parse_step_mode(name: &str) -> Result<StepMode> {
    match name {
        "fixed" => Ok(StepMode::Fixed),
        "random" => Ok(StepMode::Random),
        other => Err(FedsimError::config(format!("unknown steps-mode '{other}'"))),
    }
}

impl ExperimentConfig {
    pub fn algorithm_kind(&self) -> Result<AlgorithmKind> {
        match self.algorithm.as_str() {
            "fedavg" => Ok(AlgorithmKind::FedAvg),
            "fednova" => Ok(AlgorithmKind::FedNova),
            "fedprox" => Ok(AlgorithmKind::FedProx { mu_prox: self.mu_prox }),
            "scaffold" => Ok(AlgorithmKind::scaffold()),
            "fedagrac" => {
                let schedule = match self.lambda_schedule.as_deref() {
                    None => CalibrationSchedule::Constant(self.lambda),
                    Some("increase") => CalibrationSchedule::increase(),
                    Some(other) => {
                        return Err(FedsimError::config(format!(
                            "unknown lambda-schedule '{other}'"
                        )))
                    }
                };
                Ok(AlgorithmKind::FedaGrac {
                    schedule,
                    policy: parse_policy(&self.policy)?,
                })
            }
            other => Err(FedsimError::config(format!("unknown algorithm '{other}'"))),
        }
    }

    fn build_partition(&self, labels: &[i32]) -> Result<Partition> {
        let mut stream = RngStream::for_partition(self.seed);
        let m = self.clients;
        if let Some(rest) = self.partition.strip_prefix("dirichlet:") {
            let alpha: f64 = rest
                .parse()
                .map_err(|_| FedsimError::config(format!("bad dirichlet alpha '{rest}'")))?;
            partition_dirichlet(labels, alpha, m, &mut stream)
        } else if let Some(rest) = self.partition.strip_prefix("shard:") {
            let classes: usize = rest
                .parse()
                .map_err(|_| FedsimError::config(format!("bad shard class count '{rest}'")))?;
            partition_shard(labels, classes, m, &mut stream)
        } else if self.partition == "iid" {
            partition_iid(labels.len(), m, &mut stream)
        } else {
            Err(FedsimError::config(format!(
                "unknown partition '{}'",
                self.partition
            )))
        }
    }

    fn build_objective(&self) -> Result<(ObjectiveSpec, Vec<f64>)> {
        match self.objective.as_str() {
            "quadratic" => {
                let centers: Vec<ParamVector> = match &self.quad_centers {
                    Some(values) => values
                        .iter()
                        .map(|&b| ParamVector::new(vec![b]))
                        .collect::<Result<_>>()?,
                    None => {
                        let mut stream = RngStream::for_partition(self.seed);
                        (0..self.clients)
                            .map(|_| {
                                ParamVector::new(
                                    (0..self.dim)
                                        .map(|_| stream.rng().random_range(-5.0..5.0))
                                        .collect(),
                                )
                            })
                            .collect::<Result<_>>()?
                    }
                };
                let m = centers.len();
                let spec = ObjectiveSpec::quadratic(
                    centers.into_iter().map(QuadraticClient::identity).collect(),
                    self.sigma,
                )?;
                Ok((spec, vec![1.0 / m as f64; m]))
            }
            "logistic" => {
                let path = self
                    .dataset
                    .as_ref()
                    .ok_or_else(|| FedsimError::config("logistic objective needs --dataset"))?;
                let text = fs::read_to_string(path).map_err(|e| {
                    FedsimError::config(format!("unreadable dataset file '{path}': {e}"))
                })?;
                let dataset = parse_libsvm(&text)?;
                let partition = self.build_partition(&dataset.labels())?;
                let mut clients = Vec::with_capacity(partition.num_clients());
                for indices in &partition.assignment {
                    let rows = indices.iter().map(|&i| dataset.samples[i].features.clone()).collect();
                    let labels: Vec<f64> = indices
                        .iter()
                        .map(|&i| {
                            let l = dataset.samples[i].label;
                            if l == 1 || l == -1 {
                                Ok(l as f64)
                            } else {
                                Err(FedsimError::config(format!(
                                    "logistic objective needs binary labels, got {l}"
                                )))
                            }
                        })
                        .collect::<Result<_>>()?;
                    clients.push(LogisticClient::new(rows, labels, self.l2_reg, self.batch_size)?);
                }
                let spec = ObjectiveSpec::logistic(clients, dataset.dim, self.sigma)?;
                Ok((spec, partition.weights))
            }
            "lineartoy" => {
                let mut stream = RngStream::for_partition(self.seed);
                let clients: Vec<LinearToyClient> = (0..self.clients)
                    .map(|_| {
                        let slope = stream.rng().random_range(-2.0..2.0);
                        let intercept = stream.rng().random_range(-2.0..2.0);
                        LinearToyClient::generate(slope, intercept, 50, 0.5, &mut stream)
                    })
                    .collect();
                let m = clients.len();
                let spec = ObjectiveSpec::linear_toy(clients, self.sigma)?;
                Ok((spec, vec![1.0 / m as f64; m]))
            }
            other => Err(FedsimError::config(format!("unknown objective '{other}'"))),
        }
    }

    pub fn build(&self) -> Result<RunConfig> {
        if self.eta <= 0.0 {
            return Err(FedsimError::config("eta must be > 0"));
        }
        if self.rounds == 0 {
            return Err(FedsimError::config("rounds must be >= 1"));
        }
        let (objective, weights) = self.build_objective()?;
        let step_schedule = match &self.steps_explicit {
            Some(steps) => {
                if steps.len() != weights.len() {
                    return Err(FedsimError::config("steps_explicit must list one K per client"));
                }
                StepSchedule::explicit(steps.clone())?
            }
            None => StepSchedule::gaussian(self.steps_mean, self.steps_var, parse_step_mode(&self.steps_mode)?)?,
        };
        let dim = objective.dim();
        let config = RunConfig {
            algorithm: self.algorithm_kind()?,
            eta: self.eta,
            rounds: self.rounds,
            objective,
            weights,
            step_schedule,
            seed: self.seed,
            eval_every: self.eval_every,
            worker_threads: self.threads.max(1),
            x_init: ParamVector::zeros(dim),
            reconstruction: self.reconstruction,
            compute_oracle: true,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn execute(&self) -> Result<RunOutput> {
        let config = self.build()?;
        match self.transport.as_str() {
            "inproc" => crate::engine::run(&config),
            "tcp" => crate::transport::run_tcp(&config, self.port),
            other => Err(FedsimError::config(format!("unknown transport '{other}'"))),
        }
    }
}

/// Bundled experiment suites mirroring the study's headline comparisons.
pub fn preset(name: &str, seed: u64) -> Result<Vec<(String, ExperimentConfig)>> {
    let base = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    };
    match name {
        "inconsistency-demo" => {
            let instance = ExperimentConfig {
                objective: "quadratic".into(),
                quad_centers: Some(vec![0.0, 10.0]),
                clients: 2,
                sigma: 0.0,
                eta: 0.1,
                steps_explicit: Some(vec![1, 20]),
                ..base
            };
            Ok(vec![
                (
                    "fedavg".into(),
                    ExperimentConfig {
                        algorithm: "fedavg".into(),
                        rounds: 2000,
                        ..instance.clone()
                    },
                ),
                (
                    "fedagrac".into(),
                    ExperimentConfig {
                        algorithm: "fedagrac".into(),
                        lambda: 1.0,
                        policy: "default".into(),
                        rounds: 500,
                        ..instance
                    },
                ),
            ])
        }
        "orientation-ablation" => {
            let instance = ExperimentConfig {
                algorithm: "fedagrac".into(),
                lambda: 1.0,
                rounds: 300,
                clients: 10,
                dim: 5,
                sigma: 0.5,
                eta: 0.01,
                steps_mean: 50.0,
                steps_var: 400.0,
                steps_mode: "random".into(),
                ..base
            };
            Ok(["default", "avg", "first", "reverse"]
                .iter()
                .map(|policy| {
                    (
                        format!("fedagrac_{policy}"),
                        ExperimentConfig {
                            policy: (*policy).into(),
                            ..instance.clone()
                        },
                    )
                })
                .collect())
        }
        "variance-sweep" => {
            let instance = ExperimentConfig {
                algorithm: "fedagrac".into(),
                lambda: 1.0,
                rounds: 40,
                clients: 10,
                dim: 5,
                sigma: 0.5,
                eta: 0.01,
                steps_mean: 50.0,
                ..base
            };
            let mut runs = vec![(
                "v0".to_string(),
                ExperimentConfig {
                    steps_var: 0.0,
                    steps_mode: "fixed".into(),
                    ..instance.clone()
                },
            )];
            for variance in [100.0, 10000.0] {
                for mode in ["fixed", "random"] {
                    runs.push((
                        format!("v{}_{mode}", variance as u64),
                        ExperimentConfig {
                            steps_var: variance,
                            steps_mode: mode.into(),
                            ..instance.clone()
                        },
                    ));
                }
            }
            Ok(runs)
        }
        "lambda-sweep" => {
            let instance = ExperimentConfig {
                algorithm: "fedagrac".into(),
                rounds: 200,
                clients: 10,
                dim: 5,
                sigma: 0.5,
                eta: 0.01,
                steps_mean: 50.0,
                steps_var: 400.0,
                steps_mode: "random".into(),
                ..base
            };
            let mut runs: Vec<(String, ExperimentConfig)> = [0.0, 0.1, 0.5, 1.0]
                .iter()
                .map(|&lambda| {
                    (
                        format!("lambda_{lambda}"),
                        ExperimentConfig {
                            lambda,
                            ..instance.clone()
                        },
                    )
                })
                .collect();
            runs.push((
                "lambda_increase".into(),
                ExperimentConfig {
                    lambda_schedule: Some("increase".into()),
                    ..instance
                },
            ));
            Ok(runs)
        }
        other => Err(FedsimError::config(format!("unknown preset '{other}'"))),
    }
}

fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes metric records as CSV with 17-significant-digit floats. On any
/// I/O failure the partial file is removed.
pub fn emit_csv(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let mut out = String::from("round,global_loss,grad_norm_sq,optimality_gap,kbar,bytes_up,bytes_down\n");
    for r in records {
        let gap = r.optimality_gap.map(format_float).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.round,
            format_float(r.global_loss),
            format_float(r.grad_norm_sq),
            gap,
            format_float(r.kbar),
            r.bytes_up,
            r.bytes_down
        ));
    }
    if let Err(e) = fs::write(path, out) {
        let _ = fs::remove_file(path);
        return Err(e.into());
    }
    Ok(())
}

/// Inverse of [`emit_csv`]; lossless thanks to the 17-digit rendering.
pub fn parse_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != "round,global_loss,grad_norm_sq,optimality_gap,kbar,bytes_up,bytes_down" {
        return Err(FedsimError::Parse {
            line: 1,
            message: "unexpected CSV header".into(),
        });
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(FedsimError::Parse {
                line: lineno,
                message: format!("expected 7 fields, got {}", fields.len()),
            });
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| FedsimError::Parse {
                line: lineno,
                message: format!("bad float '{s}'"),
            })
        };
        records.push(MetricsRecord {
            round: fields[0].parse().map_err(|_| FedsimError::Parse {
                line: lineno,
                message: "bad round".into(),
            })?,
            global_loss: parse_f(fields[1])?,
            grad_norm_sq: parse_f(fields[2])?,
            optimality_gap: if fields[3].is_empty() {
                None
            } else {
                Some(parse_f(fields[3])?)
            },
            kbar: parse_f(fields[4])?,
            bytes_up: fields[5].parse().map_err(|_| FedsimError::Parse {
                line: lineno,
                message: "bad bytes_up".into(),
            })?,
            bytes_down: fields[6].parse().map_err(|_| FedsimError::Parse {
                line: lineno,
                message: "bad bytes_down".into(),
            })?,
        });
    }
    Ok(records)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestOracle {
    pub x_star: Vec<f64>,
    pub f_star: f64,
    pub residual: f64,
    pub method: String,
}

/// Everything needed to reproduce a run bit-identically.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub label: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub oracle: Option<ManifestOracle>,
    pub wall_time_secs: f64,
    pub csv: String,
}

#[derive(Parser, Debug)]
#[command(name = "fedsim", about = "Deterministic federated-optimization simulator")]
struct CliArgs {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Subcommand, Debug)]
enum CliCommand {
    /// Run an experiment (preset, config file, manifest replay, or flags).
    Run(Box<RunArgs>),
    /// Parse and validate a config file without running it.
    ValidateConfig { file: PathBuf },
}

#[derive(clap::Args, Debug, Default)]
struct RunArgs {
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replay a previously emitted manifest bit-identically.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long = "lambda-schedule")]
    lambda_schedule: Option<String>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long = "steps-mean")]
    steps_mean: Option<f64>,
    #[arg(long = "steps-var")]
    steps_var: Option<f64>,
    #[arg(long = "steps-mode")]
    steps_mode: Option<String>,
    #[arg(long)]
    partition: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    objective: Option<String>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    transport: Option<String>,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

impl RunArgs {
    fn overlay(&self, mut cfg: ExperimentConfig) -> ExperimentConfig {
        if let Some(v) = &self.algorithm {
            cfg.algorithm = v.clone();
        }
        if let Some(v) = &self.policy {
            cfg.policy = v.clone();
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
            cfg.lambda_schedule = None;
        }
        if let Some(v) = &self.lambda_schedule {
            cfg.lambda_schedule = Some(v.clone());
        }
        if let Some(v) = self.eta {
            cfg.eta = v;
        }
        if let Some(v) = self.rounds {
            cfg.rounds = v;
        }
        if let Some(v) = self.clients {
            cfg.clients = v;
        }
        if let Some(v) = self.steps_mean {
            cfg.steps_mean = v;
        }
        if let Some(v) = self.steps_var {
            cfg.steps_var = v;
        }
        if let Some(v) = &self.steps_mode {
            cfg.steps_mode = v.clone();
        }
        if let Some(v) = &self.partition {
            cfg.partition = v.clone();
        }
        if let Some(v) = &self.dataset {
            cfg.dataset = Some(v.clone());
        }
        if let Some(v) = &self.objective {
            cfg.objective = v.clone();
        }
        if let Some(v) = self.sigma {
            cfg.sigma = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.transport {
            cfg.transport = v.clone();
        }
        if let Some(v) = self.port {
            cfg.port = v;
        }
        if let Some(v) = self.threads {
            cfg.threads = v;
        }
        cfg
    }
}

fn env_seed() -> Option<u64> {
    std::env::var("FEDSIM_SEED").ok().and_then(|s| s.parse().ok())
}

/// Runs one experiment and writes `<label>.csv` plus `<label>.manifest.json`
/// under `out_dir`. Returns true if the run diverged.
pub fn execute_run(cfg: &ExperimentConfig, label: &str, out_dir: &Path) -> Result<bool> {
    fs::create_dir_all(out_dir)?;
    let start = Instant::now();
    let output = cfg.execute()?;
    let wall = start.elapsed().as_secs_f64();
    let csv_name = format!("{label}.csv");
    emit_csv(&output.records, &out_dir.join(&csv_name))?;
    let manifest = Manifest {
        label: label.to_string(),
        config: cfg.clone(),
        seed: cfg.seed,
        oracle: output.oracle.as_ref().map(|o| ManifestOracle {
            x_star: o.x_star.values().to_vec(),
            f_star: o.f_star,
            residual: o.residual,
            method: match o.method {
                OracleMethod::ClosedForm => "closed_form".into(),
                OracleMethod::LongGd => "long_gd".into(),
            },
        }),
        wall_time_secs: wall,
        csv: csv_name,
    };
    fs::write(
        out_dir.join(format!("{label}.manifest.json")),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    if let Some(failure) = &output.failure {
        eprintln!("{label}: diverged: {failure}");
        return Ok(true);
    }
    let last = output.records.last().expect("at least the initial record");
    println!(
        "{label}: rounds={} final_loss={:.6e} gap={}",
        last.round,
        last.global_loss,
        last.optimality_gap.map(|g| format!("{g:.6e}")).unwrap_or_else(|| "n/a".into())
    );
    Ok(false)
}

fn read_config_file(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| FedsimError::config(format!("unreadable config '{}': {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| FedsimError::config(format!("bad config: {e}")))
}

fn run_command(args: &RunArgs) -> Result<bool> {
    let runs: Vec<(String, ExperimentConfig)> = if let Some(manifest_path) = &args.manifest {
        let text = fs::read_to_string(manifest_path).map_err(|e| {
            FedsimError::config(format!("unreadable manifest '{}': {e}", manifest_path.display()))
        })?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| FedsimError::config(format!("bad manifest: {e}")))?;
        vec![(manifest.label.clone(), args.overlay(manifest.config))]
    } else if let Some(name) = &args.preset {
        let seed = args.seed.or_else(env_seed).unwrap_or(ExperimentConfig::default().seed);
        preset(name, seed)?
            .into_iter()
            .map(|(label, cfg)| (label, args.overlay(cfg)))
            .collect()
    } else {
        let mut base = match &args.config {
            Some(path) => read_config_file(path)?,
            None => ExperimentConfig::default(),
        };
        if args.seed.is_none() {
            if let Some(seed) = env_seed() {
                base.seed = seed;
            }
        }
        let cfg = args.overlay(base);
        vec![(cfg.algorithm.clone(), cfg)]
    };
    let mut diverged = false;
    for (label, cfg) in &runs {
        diverged |= execute_run(cfg, label, &args.out)?;
    }
    Ok(diverged)
}

/// Entry point: returns the process exit code (0 success, 1 configuration
/// error, 2 divergence).
pub fn main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match CliArgs::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match args.command {
        CliCommand::Run(run_args) => match run_command(&run_args) {
            Ok(false) => 0,
            Ok(true) => 2,
            Err(e) => {
                eprintln!("error: {e}");
                1
            }
        },
        CliCommand::ValidateConfig { file } => match read_config_file(&file).and_then(|c| c.build()) {
            Ok(_) => {
                println!("config ok");
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                1
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let records = vec![
            MetricsRecord {
                round: 0,
                global_loss: 12.5,
                grad_norm_sq: 1.0 / 3.0,
                optimality_gap: None,
                kbar: 0.0,
                bytes_up: 0,
                bytes_down: 0,
            },
            MetricsRecord {
                round: 1,
                global_loss: 0.123_456_789_012_345_68,
                grad_norm_sq: 1e-300,
                optimality_gap: Some(-1.5e-13),
                kbar: 10.5,
                bytes_up: 808,
                bytes_down: 1608,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        emit_csv(&records, &path).unwrap();
        let parsed = parse_csv(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(parsed, records);
    }

    #[test]
    fn empty_and_single_record_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        emit_csv(&[], &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        let one = vec![MetricsRecord {
            round: 3,
            global_loss: 1.0,
            grad_norm_sq: 2.0,
            optimality_gap: Some(0.5),
            kbar: 4.0,
            bytes_up: 1,
            bytes_down: 2,
        }];
        emit_csv(&one, &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 2);
    }

    #[test]
    fn config_validation_messages() {
        let cfg = ExperimentConfig {
            eta: -1.0,
            ..ExperimentConfig::default()
        };
        let err = cfg.build().unwrap_err().to_string();
        assert!(err.contains("eta must be > 0"), "{err}");
        let cfg = ExperimentConfig {
            rounds: 0,
            ..ExperimentConfig::default()
        };
        let err = cfg.build().unwrap_err().to_string();
        assert!(err.contains("rounds must be >= 1"), "{err}");
    }

    #[test]
    fn unknown_preset_rejected() {
        assert!(preset("nope", 1).is_err());
    }

    #[test]
    fn presets_expand() {
        assert_eq!(preset("inconsistency-demo", 7).unwrap().len(), 2);
        assert_eq!(preset("orientation-ablation", 7).unwrap().len(), 4);
        assert_eq!(preset("variance-sweep", 7).unwrap().len(), 5);
        assert_eq!(preset("lambda-sweep", 7).unwrap().len(), 5);
    }

    #[test]
    fn scaffold_maps_to_calibrated_avg() {
        let cfg = ExperimentConfig {
            algorithm: "scaffold".into(),
            ..ExperimentConfig::default()
        };
        assert_eq!(cfg.algorithm_kind().unwrap(), AlgorithmKind::scaffold());
    }
}
