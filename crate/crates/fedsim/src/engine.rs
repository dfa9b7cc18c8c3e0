//! Round orchestration: step planning, parallel client execution, two-phase
//! exchange, aggregation, and metric collection.

use crate::algorithms::{
    lambda_at, local_update_fedagrac, local_update_fedprox, server_round_fedagrac,
    server_round_fedavg, server_round_fednova, AlgorithmKind, CalibrationState, ClientReport,
    OrientationPolicy,
};
use crate::error::{FedsimError, Result};
use crate::heterogeneity::{draw_steps, StepSchedule};
use crate::numeric::{ParamVector, RngStream};
use crate::objectives::ObjectiveSpec;
use crate::oracle::{best_oracle, OracleResult};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub algorithm: AlgorithmKind,
    pub eta: f64,
    pub rounds: usize,
    pub objective: ObjectiveSpec,
    /// Per-client weights omega_i (from the data partition).
    pub weights: Vec<f64>,
    pub step_schedule: StepSchedule,
    pub seed: u64,
    pub eval_every: usize,
    pub worker_threads: usize,
    pub x_init: ParamVector,
    /// Skip the slower clients' orientation upload and reconstruct it
    /// server-side (affects bytes accounting only).
    pub reconstruction: bool,
    /// Compute the ground-truth optimum up front so the optimality gap can
    /// be reported.
    pub compute_oracle: bool,
}

impl RunConfig {
    pub fn num_clients(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta <= 0.0 {
            return Err(FedsimError::config("eta must be > 0"));
        }
        if self.rounds == 0 {
            return Err(FedsimError::config("rounds must be >= 1"));
        }
        if self.weights.is_empty() || self.weights.len() != self.objective.num_clients() {
            return Err(FedsimError::config(
                "partition client count must match the objective",
            ));
        }
        if self.eval_every == 0 {
            return Err(FedsimError::config("eval_every must be >= 1"));
        }
        if self.x_init.dim() != self.objective.dim() {
            return Err(FedsimError::config("x_init dimension mismatch"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub round: usize,
    pub global_loss: f64,
    pub grad_norm_sq: f64,
    pub optimality_gap: Option<f64>,
    pub kbar: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
}

#[derive(Debug)]
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub final_model: ParamVector,
    pub oracle: Option<OracleResult>,
    /// Set when a client diverged; records up to the failing round are kept.
    pub failure: Option<String>,
}

/// Per-client, per-round traffic in bytes: 8 per scalar, 8 d per vector.
/// `sent_first` marks the first-gradient branch of the orientation policy.
pub fn bytes_accounting(
    dim: usize,
    algorithm: &AlgorithmKind,
    sent_first: bool,
    reconstruction_enabled: bool,
) -> (u64, u64) {
    let vec_bytes = 8 * dim as u64;
    match algorithm {
        AlgorithmKind::FedAvg | AlgorithmKind::FedNova | AlgorithmKind::FedProx { .. } => {
            // up: model + K_i; down: model
            (vec_bytes + 8, vec_bytes)
        }
        AlgorithmKind::FedaGrac { .. } => {
            // down: model + nu + kbar announce
            let down = 2 * vec_bytes + 8;
            // up: model + K_i, plus the orientation unless it is an averaged
            // gradient the server can reconstruct
            let orientation = if sent_first || !reconstruction_enabled {
                vec_bytes
            } else {
                0
            };
            (vec_bytes + 8 + orientation, down)
        }
    }
}

/// Runs every client's local work for one round. Client work items are
/// independent; the reduction order downstream is fixed, so the outcome is
/// identical for any worker count.
fn compute_reports<F>(m: usize, worker_threads: usize, job: F) -> Vec<Result<ClientReport>>
where
    F: Fn(usize) -> Result<ClientReport> + Sync,
{
    if worker_threads <= 1 || m <= 1 {
        return (0..m).map(&job).collect();
    }
    let mut slots: Vec<Option<Result<ClientReport>>> = (0..m).map(|_| None).collect();
    let chunk = m.div_ceil(worker_threads);
    std::thread::scope(|scope| {
        for (offset, slot_chunk) in slots.chunks_mut(chunk).enumerate() {
            let job = &job;
            scope.spawn(move || {
                for (j, slot) in slot_chunk.iter_mut().enumerate() {
                    *slot = Some(job(offset * chunk + j));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("worker filled slot")).collect()
}

pub(crate) fn evaluate(
    config: &RunConfig,
    x: &ParamVector,
    round: usize,
    kbar: f64,
    bytes: (u64, u64),
    f_star: Option<f64>,
) -> Result<MetricsRecord> {
    let global_loss = config.objective.global_objective(&config.weights, x)?;
    let grad_norm_sq = config.objective.global_gradient(&config.weights, x)?.norm_sq();
    Ok(MetricsRecord {
        round,
        global_loss,
        grad_norm_sq,
        optimality_gap: f_star.map(|fs| global_loss - fs),
        kbar,
        bytes_up: bytes.0,
        bytes_down: bytes.1,
    })
}

/// Per-round traffic totals for one aggregation step.
pub(crate) fn round_bytes(config: &RunConfig, reports: &[ClientReport], kbar: f64) -> (u64, u64) {
    let policy = match &config.algorithm {
        AlgorithmKind::FedaGrac { policy, .. } => Some(*policy),
        _ => None,
    };
    let mut bytes = (0u64, 0u64);
    for report in reports {
        let sent_first = match policy {
            Some(OrientationPolicy::Default) => report.steps as f64 > kbar,
            Some(OrientationPolicy::Avg) => false,
            Some(OrientationPolicy::First) => true,
            Some(OrientationPolicy::Reverse) => report.steps as f64 <= kbar,
            None => false,
        };
        let (up, down) = bytes_accounting(
            config.objective.dim(),
            &config.algorithm,
            sent_first,
            config.reconstruction,
        );
        bytes.0 += up;
        bytes.1 += down;
    }
    bytes
}

/// Executes `config.rounds` communication rounds and returns the metric
/// sequence. Deterministic for a given seed, independent of worker count.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let oracle = if config.compute_oracle {
        best_oracle(&config.objective, &config.weights).ok()
    } else {
        None
    };
    let f_star = oracle.as_ref().map(|o| o.f_star);
    let m = config.num_clients();

    let mut x = config.x_init.clone();
    let mut state = match &config.algorithm {
        AlgorithmKind::FedaGrac { .. } => {
            Some(CalibrationState::init(&config.objective, &config.weights, &x)?)
        }
        _ => None,
    };

    let mut records = vec![evaluate(config, &x, 0, 0.0, (0, 0), f_star)?];
    let mut failure = None;

    for round in 1..=config.rounds {
        let plan = draw_steps(
            &config.step_schedule,
            round,
            m,
            &config.weights,
            config.seed,
        )?;
        let lambda = match &config.algorithm {
            AlgorithmKind::FedaGrac { schedule, .. } => lambda_at(schedule, round),
            _ => 0.0,
        };

        let spec = &config.objective;
        let algorithm = &config.algorithm;
        let state_ref = state.as_ref();
        let plan_ref = &plan;
        let x_ref = &x;
        let results = compute_reports(m, config.worker_threads, |client| {
            let mut stream = RngStream::for_client_round(config.seed, client, round);
            let k_i = plan_ref.steps[client];
            match algorithm {
                AlgorithmKind::FedaGrac { .. } => {
                    let st = state_ref.expect("calibration state exists");
                    local_update_fedagrac(
                        x_ref,
                        &st.nu,
                        &st.nu_client[client],
                        k_i,
                        config.eta,
                        lambda,
                        spec,
                        client,
                        &mut stream,
                    )
                }
                AlgorithmKind::FedProx { mu_prox } => local_update_fedprox(
                    x_ref, k_i, config.eta, *mu_prox, spec, client, &mut stream,
                ),
                AlgorithmKind::FedAvg | AlgorithmKind::FedNova => {
                    crate::algorithms::local_update_fedavg(
                        x_ref, k_i, config.eta, spec, client, &mut stream,
                    )
                }
            }
        });

        let mut reports = Vec::with_capacity(m);
        for result in results {
            match result {
                Ok(report) => reports.push(report),
                Err(e) => {
                    failure = Some(e.to_string());
                    break;
                }
            }
        }
        if failure.is_some() {
            break;
        }

        let kbar = plan.kbar;
        let bytes = round_bytes(config, &reports, kbar);

        x = match &config.algorithm {
            AlgorithmKind::FedaGrac { policy, .. } => {
                let st = state.take().expect("calibration state exists");
                let (new_x, new_state, _) =
                    server_round_fedagrac(&reports, &config.weights, &st, *policy)?;
                state = Some(new_state);
                new_x
            }
            AlgorithmKind::FedNova => {
                server_round_fednova(&x, &reports, &config.weights, config.eta)?
            }
            AlgorithmKind::FedAvg | AlgorithmKind::FedProx { .. } => {
                server_round_fedavg(&reports, &config.weights)?
            }
        };

        if round % config.eval_every == 0 || round == config.rounds {
            records.push(evaluate(config, &x, round, plan.kbar, bytes, f_star)?);
        }
    }

    Ok(RunOutput {
        records,
        final_model: x,
        oracle,
        failure,
    })
}
