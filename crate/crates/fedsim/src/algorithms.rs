//! Client-side local update rules and server-side aggregation rules for
//! calibrated federated optimization and its baselines.
//!
//! The calibrated method adds a per-round correction term to every local
//! gradient step, steering client iterates toward the estimated global
//! direction. With a constant calibration rate of 1 and the always-average
//! orientation policy it coincides with SCAFFOLD; with rate 0 it reduces to
//! FedAvg exactly.

use serde::{Deserialize, Serialize};

use crate::error::{FedsimError, Result};
use crate::numeric::{axpy, weighted_sum, ParamVector, RngStream};
use crate::objectives::ObjectiveSpec;

/// Iterates whose coordinates exceed this are treated as divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Calibration rate schedule for the correction term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CalibrationSchedule {
    Constant(f64),
    /// Each breakpoint (r, lambda) applies lambda to rounds <= r; `tail`
    /// applies afterwards. Breakpoints must be strictly increasing.
    Piecewise {
        breakpoints: Vec<(usize, f64)>,
        tail: f64,
    },
}

impl CalibrationSchedule {
    /// The increasing preset: 0.1 for rounds 1-50, 0.5 for 51-150, 1 after.
    pub fn increase() -> Self {
        CalibrationSchedule::Piecewise {
            breakpoints: vec![(50, 0.1), (150, 0.5)],
            tail: 1.0,
        }
    }
}

/// Calibration rate in effect at `round` (1-based).
pub fn lambda_at(schedule: &CalibrationSchedule, round: usize) -> f64 {
    match schedule {
        CalibrationSchedule::Constant(l) => *l,
        CalibrationSchedule::Piecewise { breakpoints, tail } => breakpoints
            .iter()
            .find(|(r, _)| round <= *r)
            .map(|(_, l)| *l)
            .unwrap_or(*tail),
    }
}

/// Which gradient summary a client transmits as its orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrientationPolicy {
    /// Averaged gradient iff K_i <= K-bar, else the first gradient.
    Default,
    /// Always the averaged gradient (the SCAFFOLD rule).
    Avg,
    /// Always the first gradient.
    First,
    /// Averaged gradient iff K_i > K-bar.
    Reverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AlgorithmKind {
    FedAvg,
    FedNova,
    FedProx { mu_prox: f64 },
    FedaGrac { schedule: CalibrationSchedule, policy: OrientationPolicy },
}

impl AlgorithmKind {
    /// SCAFFOLD is the calibrated method with lambda fixed at 1 and the
    /// always-average policy; there is no second code path.
    pub fn scaffold() -> Self {
        AlgorithmKind::FedaGrac {
            schedule: CalibrationSchedule::Constant(1.0),
            policy: OrientationPolicy::Avg,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            AlgorithmKind::FedAvg => "fedavg",
            AlgorithmKind::FedNova => "fednova",
            AlgorithmKind::FedProx { .. } => "fedprox",
            AlgorithmKind::FedaGrac { schedule, policy } => {
                if *schedule == CalibrationSchedule::Constant(1.0) && *policy == OrientationPolicy::Avg {
                    "scaffold"
                } else {
                    "fedagrac"
                }
            }
        }
    }
}

/// Global reference orientation nu and the per-client orientations nu^(i).
#[derive(Debug, Clone)]
pub struct CalibrationState {
    pub nu: ParamVector,
    pub nu_client: Vec<ParamVector>,
}

impl CalibrationState {
    /// Initial state: nu^(i) is the full local-batch gradient at the initial
    /// model and nu their weighted sum.
    pub fn init(spec: &ObjectiveSpec, weights: &[f64], x_init: &ParamVector) -> Result<Self> {
        let nu_client: Vec<ParamVector> = (0..spec.num_clients())
            .map(|i| spec.exact_gradient(i, x_init))
            .collect::<Result<_>>()?;
        let refs: Vec<&ParamVector> = nu_client.iter().collect();
        let nu = weighted_sum(weights, &refs)?;
        Ok(CalibrationState { nu, nu_client })
    }
}

/// What a client pushes back after a round of local work.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientReport {
    pub final_model: ParamVector,
    pub steps: usize,
    pub first_grad: ParamVector,
    pub avg_grad: ParamVector,
    pub bytes_sent: usize,
}

fn check_finite(x: &ParamVector, client: usize, step: usize) -> Result<()> {
    if !x.is_finite() || x.max_abs() > DIVERGENCE_LIMIT {
        return Err(FedsimError::Divergence {
            client,
            step,
            message: format!("iterate magnitude {:.3e}", x.max_abs()),
        });
    }
    Ok(())
}

/// K_i calibrated SGD steps. The correction term lambda * (nu - nu_i) is
/// computed once before the loop and held fixed for the whole round.
#[allow(clippy::too_many_arguments)]
pub fn local_update_fedagrac(
    x_start: &ParamVector,
    nu: &ParamVector,
    nu_i: &ParamVector,
    k_i: usize,
    eta: f64,
    lambda: f64,
    spec: &ObjectiveSpec,
    client: usize,
    stream: &mut RngStream,
) -> Result<ClientReport> {
    if k_i == 0 {
        return Err(FedsimError::config("K_i must be >= 1"));
    }
    // lambda == 0 skips the correction entirely so the trajectory is
    // bit-identical to plain local SGD.
    let correction = if lambda == 0.0 {
        None
    } else {
        Some(nu.sub(nu_i).scale(lambda))
    };
    let mut x = x_start.clone();
    let mut first_grad: Option<ParamVector> = None;
    let mut grad_sum = ParamVector::zeros(x.dim());
    for k in 0..k_i {
        let g = spec.stochastic_gradient(client, &x, stream)?;
        if first_grad.is_none() {
            first_grad = Some(g.clone());
        }
        grad_sum = axpy(1.0, &g, &grad_sum)?;
        let step = match &correction {
            Some(c) => axpy(1.0, c, &g)?,
            None => g,
        };
        x = axpy(-eta, &step, &x)?;
        check_finite(&x, client, k)?;
    }
    Ok(ClientReport {
        final_model: x,
        steps: k_i,
        first_grad: first_grad.expect("k_i >= 1"),
        avg_grad: grad_sum.scale(1.0 / k_i as f64),
        bytes_sent: 0,
    })
}

/// Plain local SGD: the calibrated update with lambda identically 0.
pub fn local_update_fedavg(
    x_start: &ParamVector,
    k_i: usize,
    eta: f64,
    spec: &ObjectiveSpec,
    client: usize,
    stream: &mut RngStream,
) -> Result<ClientReport> {
    let zero = ParamVector::zeros(x_start.dim());
    local_update_fedagrac(x_start, &zero, &zero, k_i, eta, 0.0, spec, client, stream)
}

/// Proximal local SGD anchored at the round's start point:
/// x_{k+1} = x_k - eta * (g_k + mu_prox * (x_k - x_start)).
pub fn local_update_fedprox(
    x_start: &ParamVector,
    k_i: usize,
    eta: f64,
    mu_prox: f64,
    spec: &ObjectiveSpec,
    client: usize,
    stream: &mut RngStream,
) -> Result<ClientReport> {
    if k_i == 0 {
        return Err(FedsimError::config("K_i must be >= 1"));
    }
    if mu_prox < 0.0 {
        return Err(FedsimError::config("mu_prox must be >= 0"));
    }
    if mu_prox == 0.0 {
        return local_update_fedavg(x_start, k_i, eta, spec, client, stream);
    }
    let mut x = x_start.clone();
    let mut first_grad: Option<ParamVector> = None;
    let mut grad_sum = ParamVector::zeros(x.dim());
    for k in 0..k_i {
        let g = spec.stochastic_gradient(client, &x, stream)?;
        if first_grad.is_none() {
            first_grad = Some(g.clone());
        }
        grad_sum = axpy(1.0, &g, &grad_sum)?;
        let anchor = x.sub(x_start);
        let step = axpy(mu_prox, &anchor, &g)?;
        x = axpy(-eta, &step, &x)?;
        check_finite(&x, client, k)?;
    }
    Ok(ClientReport {
        final_model: x,
        steps: k_i,
        first_grad: first_grad.expect("k_i >= 1"),
        avg_grad: grad_sum.scale(1.0 / k_i as f64),
        bytes_sent: 0,
    })
}

/// The orientation a client transmits (and stores as its nu^(i) for the
/// next round).
pub fn choose_orientation(
    policy: OrientationPolicy,
    k_i: usize,
    kbar: f64,
    report: &ClientReport,
) -> ParamVector {
    let avg_branch = match policy {
        OrientationPolicy::Default => k_i as f64 <= kbar,
        OrientationPolicy::Avg => true,
        OrientationPolicy::First => false,
        OrientationPolicy::Reverse => k_i as f64 > kbar,
    };
    if avg_branch {
        report.avg_grad.clone()
    } else {
        report.first_grad.clone()
    }
}

/// Server aggregation for the calibrated method: new global model is the
/// weighted sum of final models; each client's transmitted orientation is
/// selected against the freshly computed K-bar and folded into the new nu.
pub fn server_round_fedagrac(
    reports: &[ClientReport],
    weights: &[f64],
    state: &CalibrationState,
    policy: OrientationPolicy,
) -> Result<(ParamVector, CalibrationState, f64)> {
    if reports.len() != weights.len() || reports.is_empty() {
        return Err(FedsimError::Protocol {
            offset: 0,
            message: format!(
                "expected {} client reports, got {}",
                weights.len(),
                reports.len()
            ),
        });
    }
    let finals: Vec<&ParamVector> = reports.iter().map(|r| &r.final_model).collect();
    let new_global = weighted_sum(weights, &finals)?;
    let kbar: f64 = weights
        .iter()
        .zip(reports)
        .map(|(w, r)| w * r.steps as f64)
        .sum();
    let transmitted: Vec<ParamVector> = reports
        .iter()
        .map(|r| choose_orientation(policy, r.steps, kbar, r))
        .collect();
    let refs: Vec<&ParamVector> = transmitted.iter().collect();
    let new_nu = weighted_sum(weights, &refs)?;
    let _ = state;
    Ok((
        new_global,
        CalibrationState {
            nu: new_nu,
            nu_client: transmitted,
        },
        kbar,
    ))
}

/// Plain weighted model averaging.
pub fn server_round_fedavg(reports: &[ClientReport], weights: &[f64]) -> Result<ParamVector> {
    if reports.len() != weights.len() || reports.is_empty() {
        return Err(FedsimError::Protocol {
            offset: 0,
            message: "missing client report".into(),
        });
    }
    let finals: Vec<&ParamVector> = reports.iter().map(|r| &r.final_model).collect();
    weighted_sum(weights, &finals)
}

/// Normalized averaging: per-client normalized updates
/// d_i = (x - final_i) / (eta * K_i) recombined with effective step count
/// tau_eff = K-bar. Homogeneous step counts reduce algebraically to plain
/// weighted averaging, which is taken literally to keep the identity bitwise.
pub fn server_round_fednova(
    x_global: &ParamVector,
    reports: &[ClientReport],
    weights: &[f64],
    eta: f64,
) -> Result<ParamVector> {
    if reports.len() != weights.len() || reports.is_empty() {
        return Err(FedsimError::Protocol {
            offset: 0,
            message: "missing client report".into(),
        });
    }
    let homogeneous = reports.iter().all(|r| r.steps == reports[0].steps);
    if homogeneous {
        return server_round_fedavg(reports, weights);
    }
    let kbar: f64 = weights
        .iter()
        .zip(reports)
        .map(|(w, r)| w * r.steps as f64)
        .sum();
    let normalized: Vec<ParamVector> = reports
        .iter()
        .map(|r| x_global.sub(&r.final_model).scale(1.0 / (eta * r.steps as f64)))
        .collect();
    let refs: Vec<&ParamVector> = normalized.iter().collect();
    let mean_direction = weighted_sum(weights, &refs)?;
    axpy(-eta * kbar, &mean_direction, x_global)
}

/// Server-side recovery of a slower client's averaged gradient from its
/// final model: (x - final) / (eta K_i) - lambda (nu - nu_i).
pub fn reconstruct_avg_grad(
    x_global: &ParamVector,
    final_model: &ParamVector,
    eta: f64,
    k_i: usize,
    lambda: f64,
    nu: &ParamVector,
    nu_i: &ParamVector,
) -> Result<ParamVector> {
    if eta <= 0.0 || k_i == 0 {
        return Err(FedsimError::config("need eta > 0 and K_i >= 1"));
    }
    let displacement = x_global.sub(final_model).scale(1.0 / (eta * k_i as f64));
    axpy(-lambda, &nu.sub(nu_i), &displacement)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::QuadraticClient;
    use rand::Rng;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn quad_spec(centers: &[f64], sigma: f64) -> ObjectiveSpec {
        ObjectiveSpec::quadratic(
            centers.iter().map(|&b| QuadraticClient::identity(pv(&[b]))).collect(),
            sigma,
        )
        .unwrap()
    }

    #[test]
    fn lambda_schedules() {
        assert_eq!(lambda_at(&CalibrationSchedule::Constant(0.05), 999), 0.05);
        let inc = CalibrationSchedule::increase();
        assert_eq!(lambda_at(&inc, 1), 0.1);
        assert_eq!(lambda_at(&inc, 50), 0.1);
        assert_eq!(lambda_at(&inc, 51), 0.5);
        assert_eq!(lambda_at(&inc, 150), 0.5);
        assert_eq!(lambda_at(&inc, 151), 1.0);
    }

    #[test]
    fn single_plain_gd_step() {
        let spec = quad_spec(&[0.0], 0.0);
        let zero = pv(&[0.0]);
        let mut s = RngStream::for_client_round(1, 0, 1);
        let r = local_update_fedagrac(&pv(&[10.0]), &zero, &zero, 1, 0.1, 0.0, &spec, 0, &mut s).unwrap();
        assert_eq!(r.final_model, pv(&[9.0]));
        assert_eq!(r.first_grad, pv(&[10.0]));
        assert_eq!(r.avg_grad, pv(&[10.0]));
    }

    #[test]
    fn zero_correction_matches_lambda_zero() {
        let spec = quad_spec(&[0.0, 10.0], 1.0);
        let nu = pv(&[0.7]);
        let a = local_update_fedagrac(
            &pv(&[4.0]), &nu, &nu, 8, 0.05, 1.0, &spec, 1,
            &mut RngStream::for_client_round(5, 1, 1),
        )
        .unwrap();
        let b = local_update_fedagrac(
            &pv(&[4.0]), &nu, &nu, 8, 0.05, 0.0, &spec, 1,
            &mut RngStream::for_client_round(5, 1, 1),
        )
        .unwrap();
        assert_eq!(a.final_model, b.final_model);
        assert_eq!(a.avg_grad, b.avg_grad);
    }

    #[test]
    fn geometric_contraction_closed_form() {
        // GD on 0.5 (x - b)^2 contracts by (1 - eta) per step.
        let spec = quad_spec(&[0.0, 10.0], 0.0);
        let zero = pv(&[0.0]);
        let x_start = 3.0;
        let r = local_update_fedagrac(
            &pv(&[x_start]), &zero, &zero, 20, 0.1, 0.0, &spec, 1,
            &mut RngStream::for_client_round(1, 1, 1),
        )
        .unwrap();
        let expected = 10.0 + 0.9_f64.powi(20) * (x_start - 10.0);
        assert!((r.final_model[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn fedavg_two_steps() {
        let spec = quad_spec(&[0.0], 0.0);
        let r = local_update_fedavg(&pv(&[1.0]), 2, 0.5, &spec, 0, &mut RngStream::for_client_round(1, 0, 1)).unwrap();
        assert_eq!(r.final_model, pv(&[0.25]));
    }

    #[test]
    fn fedavg_divergence_detected() {
        let spec = quad_spec(&[0.0], 0.0);
        let err = local_update_fedavg(&pv(&[1.0]), 200, 3.0, &spec, 0, &mut RngStream::for_client_round(1, 0, 1))
            .unwrap_err();
        match err {
            FedsimError::Divergence { client, .. } => assert_eq!(client, 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn fedprox_hand_rolled_steps() {
        let spec = quad_spec(&[0.0], 0.0);
        let mut s = RngStream::for_client_round(1, 0, 1);
        let r = local_update_fedprox(&pv(&[1.0]), 1, 0.1, 1.0, &spec, 0, &mut s).unwrap();
        assert!((r.final_model[0] - 0.9).abs() < 1e-15);
        let mut s = RngStream::for_client_round(1, 0, 1);
        let r2 = local_update_fedprox(&pv(&[1.0]), 2, 0.1, 1.0, &spec, 0, &mut s).unwrap();
        // step 2: x = 0.9 - 0.1*((0.9 - 0) + 1*(0.9 - 1.0)) = 0.9 - 0.1*0.8
        assert!((r2.final_model[0] - 0.82).abs() < 1e-15);
    }

    #[test]
    fn fedprox_zero_mu_matches_fedavg() {
        let spec = quad_spec(&[0.0, 10.0], 1.0);
        let a = local_update_fedprox(&pv(&[2.0]), 6, 0.05, 0.0, &spec, 0, &mut RngStream::for_client_round(2, 0, 3)).unwrap();
        let b = local_update_fedavg(&pv(&[2.0]), 6, 0.05, &spec, 0, &mut RngStream::for_client_round(2, 0, 3)).unwrap();
        assert_eq!(a.final_model, b.final_model);
    }

    #[test]
    fn fedprox_large_mu_anchors() {
        let spec = quad_spec(&[0.0], 0.0);
        let mut s = RngStream::for_client_round(1, 0, 1);
        let r = local_update_fedprox(&pv(&[5.0]), 50, 1e-7, 1e6, &spec, 0, &mut s).unwrap();
        assert!((r.final_model[0] - 5.0).abs() < 1e-3);
    }

    #[test]
    fn orientation_policy_cases() {
        let report = ClientReport {
            final_model: pv(&[0.0]),
            steps: 0,
            first_grad: pv(&[1.0]),
            avg_grad: pv(&[2.0]),
            bytes_sent: 0,
        };
        assert_eq!(choose_orientation(OrientationPolicy::Default, 5, 10.5, &report), pv(&[2.0]));
        assert_eq!(choose_orientation(OrientationPolicy::Default, 20, 10.5, &report), pv(&[1.0]));
        assert_eq!(choose_orientation(OrientationPolicy::Reverse, 20, 10.5, &report), pv(&[2.0]));
        assert_eq!(choose_orientation(OrientationPolicy::Reverse, 5, 10.5, &report), pv(&[1.0]));
        assert_eq!(choose_orientation(OrientationPolicy::Avg, 20, 10.5, &report), pv(&[2.0]));
        assert_eq!(choose_orientation(OrientationPolicy::First, 5, 10.5, &report), pv(&[1.0]));
        // tie goes to the averaged gradient
        assert_eq!(choose_orientation(OrientationPolicy::Default, 10, 10.0, &report), pv(&[2.0]));
    }

    #[test]
    fn server_round_consensus_and_midpoint() {
        let spec = quad_spec(&[0.0, 10.0], 0.0);
        let state = CalibrationState::init(&spec, &[0.5, 0.5], &pv(&[5.0])).unwrap();
        let mk = |f: f64, k: usize| ClientReport {
            final_model: pv(&[f]),
            steps: k,
            first_grad: pv(&[0.0]),
            avg_grad: pv(&[0.0]),
            bytes_sent: 0,
        };
        let (x, _, kbar) =
            server_round_fedagrac(&[mk(0.0, 1), mk(8.0, 20)], &[0.5, 0.5], &state, OrientationPolicy::Default).unwrap();
        assert_eq!(x, pv(&[4.0]));
        assert_eq!(kbar, 10.5);
        // single client
        let single = CalibrationState::init(
            &quad_spec(&[3.0], 0.0), &[1.0], &pv(&[5.0]),
        )
        .unwrap();
        let (x1, st1, _) = server_round_fedagrac(&[mk(7.0, 4)], &[1.0], &single, OrientationPolicy::Default).unwrap();
        assert_eq!(x1, pv(&[7.0]));
        assert_eq!(st1.nu, st1.nu_client[0]);
    }

    #[test]
    fn nu_is_weighted_sum_of_client_orientations() {
        let spec = quad_spec(&[0.0, 10.0, -4.0], 0.5);
        let weights = [0.2, 0.5, 0.3];
        let x = pv(&[1.0]);
        let state = CalibrationState::init(&spec, &weights, &x).unwrap();
        let reports: Vec<ClientReport> = (0..3)
            .map(|i| {
                local_update_fedagrac(
                    &x, &state.nu, &state.nu_client[i], 3 + i, 0.05, 1.0, &spec, i,
                    &mut RngStream::for_client_round(8, i, 1),
                )
                .unwrap()
            })
            .collect();
        let (_, new_state, _) =
            server_round_fedagrac(&reports, &weights, &state, OrientationPolicy::Default).unwrap();
        let refs: Vec<&ParamVector> = new_state.nu_client.iter().collect();
        let expect = weighted_sum(&weights, &refs).unwrap();
        for j in 0..expect.dim() {
            assert!((new_state.nu[j] - expect[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn fednova_single_client_and_homogeneous() {
        let spec = quad_spec(&[0.0, 10.0], 0.0);
        let _ = spec;
        let mk = |f: f64, k: usize| ClientReport {
            final_model: pv(&[f]),
            steps: k,
            first_grad: pv(&[0.0]),
            avg_grad: pv(&[0.0]),
            bytes_sent: 0,
        };
        let x = pv(&[5.0]);
        assert_eq!(server_round_fednova(&x, &[mk(2.5, 7)], &[1.0], 0.1).unwrap(), pv(&[2.5]));
        let homog = server_round_fednova(&x, &[mk(1.0, 5), mk(3.0, 5)], &[0.5, 0.5], 0.1).unwrap();
        let plain = server_round_fedavg(&[mk(1.0, 5), mk(3.0, 5)], &[0.5, 0.5]).unwrap();
        assert_eq!(homog, plain);
    }

    #[test]
    fn reconstruction_identity_randomized() {
        let mut seeder = RngStream::new(99, 0);
        for trial in 0..100 {
            let b1 = seeder.rng().random_range(-5.0..5.0);
            let b2 = seeder.rng().random_range(-5.0..5.0);
            let spec = quad_spec(&[b1, b2], seeder.rng().random_range(0.0..2.0));
            let weights = [0.5, 0.5];
            let x = pv(&[seeder.rng().random_range(-3.0..3.0)]);
            let state = CalibrationState::init(&spec, &weights, &x).unwrap();
            let lambda: f64 = seeder.rng().random_range(0.0..1.5);
            let eta = seeder.rng().random_range(0.01..0.2);
            let k_i = seeder.rng().random_range(1..40);
            let client = trial % 2;
            let report = local_update_fedagrac(
                &x, &state.nu, &state.nu_client[client], k_i, eta, lambda, &spec, client,
                &mut RngStream::for_client_round(trial as u64, client, 1),
            )
            .unwrap();
            let rec = reconstruct_avg_grad(
                &x, &report.final_model, eta, k_i, lambda, &state.nu, &state.nu_client[client],
            )
            .unwrap();
            for j in 0..rec.dim() {
                assert!(
                    (rec[j] - report.avg_grad[j]).abs() < 1e-9,
                    "trial {trial}: {} vs {}",
                    rec[j],
                    report.avg_grad[j]
                );
            }
        }
    }

    #[test]
    fn scaffold_alias_labels() {
        assert_eq!(AlgorithmKind::scaffold().label(), "scaffold");
        assert_eq!(
            AlgorithmKind::FedaGrac {
                schedule: CalibrationSchedule::Constant(1.0),
                policy: OrientationPolicy::Default
            }
            .label(),
            "fedagrac"
        );
    }
}
