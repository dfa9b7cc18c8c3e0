//! Independent ground-truth computations: exact optima, closed-form fixed
//! points of the deterministic round maps, and a long gradient-descent
//! reference for objectives without closed forms.

use nalgebra::{DMatrix, DVector};

use crate::error::{FedsimError, Result};
use crate::numeric::{axpy, weighted_sum, ParamVector};
use crate::objectives::{ObjectiveSpec, QuadraticClient};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    ClosedForm,
    LongGd,
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub x_star: ParamVector,
    pub f_star: f64,
    pub method: OracleMethod,
    /// Gradient norm at x_star.
    pub residual: f64,
}

/// Minimizer of the weighted quadratic family via a direct linear solve of
/// (sum_i w_i A_i) x = sum_i w_i A_i b_i.
pub fn optimum_quadratic(spec: &ObjectiveSpec, weights: &[f64]) -> Result<OracleResult> {
    let clients = spec
        .quadratic_clients()
        .ok_or_else(|| FedsimError::config("optimum_quadratic needs a quadratic objective"))?;
    if clients.len() != weights.len() {
        return Err(FedsimError::config("weight count mismatch"));
    }
    let d = spec.dim();
    let mut lhs = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    for (w, c) in weights.iter().zip(&clients) {
        lhs += &c.curvature * *w;
        let b = DVector::from_column_slice(c.center.values());
        rhs += (&c.curvature * b) * *w;
    }
    let x = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| FedsimError::config("singular curvature system"))?;
    let x_star = ParamVector::new(x.iter().copied().collect())?;
    let f_star = spec.global_objective(weights, &x_star)?;
    let residual = spec.global_gradient(weights, &x_star)?.norm_sq().sqrt();
    Ok(OracleResult {
        x_star,
        f_star,
        method: OracleMethod::ClosedForm,
        residual,
    })
}

fn contraction_factors(eta: f64, steps: &[usize]) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&eta) || eta == 0.0 {
        return Err(FedsimError::config("eta must lie in (0, 1)"));
    }
    Ok(steps.iter().map(|&k| 1.0 - (1.0 - eta).powi(k as i32)).collect())
}

/// Fixed point of the deterministic FedAvg round map on identity-curvature
/// quadratics: local GD contracts x -> b_i + (1-eta)^{K_i} (x - b_i), and
/// aggregation fixes x_inf = sum_i w_i (1-(1-eta)^{K_i}) b_i / sum_i w_i (1-(1-eta)^{K_i}).
pub fn fedavg_fixed_point_quadratic(
    centers: &[ParamVector],
    weights: &[f64],
    eta: f64,
    steps: &[usize],
) -> Result<ParamVector> {
    if centers.len() != weights.len() || centers.len() != steps.len() || centers.is_empty() {
        return Err(FedsimError::config("centers, weights, steps must align"));
    }
    let c = contraction_factors(eta, steps)?;
    let denom: f64 = weights.iter().zip(&c).map(|(w, ci)| w * ci).sum();
    let coeffs: Vec<f64> = weights.iter().zip(&c).map(|(w, ci)| w * ci / denom).collect();
    let refs: Vec<&ParamVector> = centers.iter().collect();
    weighted_sum(&coeffs, &refs)
}

/// Fixed point of the deterministic FedNova round map in the same setting:
/// solves sum_i w_i c_i (x - b_i) = 0 with c_i = (1-(1-eta)^{K_i}) / K_i.
pub fn fednova_fixed_point_quadratic(
    centers: &[ParamVector],
    weights: &[f64],
    eta: f64,
    steps: &[usize],
) -> Result<ParamVector> {
    if centers.len() != weights.len() || centers.len() != steps.len() || centers.is_empty() {
        return Err(FedsimError::config("centers, weights, steps must align"));
    }
    let raw = contraction_factors(eta, steps)?;
    let c: Vec<f64> = raw.iter().zip(steps).map(|(ci, &k)| ci / k as f64).collect();
    let denom: f64 = weights.iter().zip(&c).map(|(w, ci)| w * ci).sum();
    let coeffs: Vec<f64> = weights.iter().zip(&c).map(|(w, ci)| w * ci / denom).collect();
    let refs: Vec<&ParamVector> = centers.iter().collect();
    weighted_sum(&coeffs, &refs)
}

/// Full-batch gradient descent with backtracking line search until the
/// gradient norm drops below `tolerance`.
pub fn optimum_long_gd(spec: &ObjectiveSpec, weights: &[f64], tolerance: f64) -> Result<OracleResult> {
    const MAX_ITERS: usize = 1_000_000;
    let mut x = ParamVector::zeros(spec.dim());
    let mut f = spec.global_objective(weights, &x)?;
    let mut eta = 1.0 / spec.l_smooth().max(1e-12);
    for _ in 0..MAX_ITERS {
        let g = spec.global_gradient(weights, &x)?;
        let gnorm_sq = g.norm_sq();
        if gnorm_sq.sqrt() <= tolerance {
            return Ok(OracleResult {
                x_star: x,
                f_star: f,
                method: OracleMethod::LongGd,
                residual: gnorm_sq.sqrt(),
            });
        }
        // Backtrack until the Armijo condition holds, then re-expand a little
        // so a single bad region does not pin the step size.
        let mut step = eta;
        loop {
            let candidate = axpy(-step, &g, &x)?;
            let fc = spec.global_objective(weights, &candidate)?;
            // The slack keeps the search from stalling once the certified
            // decrease drops below the ulp of f; step <= 1/L still
            // guarantees descent analytically.
            let slack = 1e-14 * f.abs().max(1.0);
            if fc <= f - 0.5 * step * gnorm_sq + slack || step < 1e-18 {
                x = candidate;
                f = fc;
                eta = (step * 1.5).min(1.0 / spec.mu().max(spec.l_smooth()).max(1e-12));
                break;
            }
            step *= 0.5;
        }
    }
    Err(FedsimError::Oracle(format!(
        "gradient descent did not reach tolerance {tolerance} within {MAX_ITERS} iterations"
    )))
}

/// The inconsistency scale factor sum_i w_i (K_i / K_min - 1) F_i(x_star).
pub fn theorem1_bias_bound(
    spec: &ObjectiveSpec,
    weights: &[f64],
    steps: &[usize],
    x_star: &ParamVector,
) -> Result<f64> {
    if steps.len() != weights.len() {
        return Err(FedsimError::config("steps/weights mismatch"));
    }
    let kmin = *steps.iter().min().ok_or_else(|| FedsimError::config("empty steps"))? as f64;
    let mut total = 0.0;
    for (i, (w, &k)) in weights.iter().zip(steps).enumerate() {
        total += w * (k as f64 / kmin - 1.0) * spec.client_loss(i, x_star)?;
    }
    Ok(total)
}

/// Best available oracle for a spec: closed form for quadratics, long GD
/// otherwise (requires strong convexity).
pub fn best_oracle(spec: &ObjectiveSpec, weights: &[f64]) -> Result<OracleResult> {
    if spec.quadratic_clients().is_some() {
        optimum_quadratic(spec, weights)
    } else {
        optimum_long_gd(spec, weights, 1e-10)
    }
}

/// Re-exported here so oracle consumers can build the standard analytic
/// two-client instance without repeating it.
pub fn two_point_instance(b1: f64, b2: f64) -> Result<(ObjectiveSpec, Vec<f64>)> {
    let spec = ObjectiveSpec::quadratic(
        vec![
            QuadraticClient::identity(ParamVector::new(vec![b1])?),
            QuadraticClient::identity(ParamVector::new(vec![b2])?),
        ],
        0.0,
    )?;
    Ok((spec, vec![0.5, 0.5]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::RngStream;
    use rand::Rng;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn quadratic_optimum_identity_curvature() {
        let (spec, w) = two_point_instance(0.0, 10.0).unwrap();
        let res = optimum_quadratic(&spec, &w).unwrap();
        assert!((res.x_star[0] - 5.0).abs() < 1e-12);
        assert!((res.f_star - 12.5).abs() < 1e-12);
        assert!(res.residual <= 1e-12);
    }

    #[test]
    fn quadratic_optimum_single_client() {
        let spec = ObjectiveSpec::quadratic(vec![QuadraticClient::identity(pv(&[3.0, -1.0]))], 0.0).unwrap();
        let res = optimum_quadratic(&spec, &[1.0]).unwrap();
        assert_eq!(res.x_star, pv(&[3.0, -1.0]));
        assert_eq!(res.f_star, 0.0);
    }

    #[test]
    fn fedavg_fixed_point_hand_value() {
        // (1-0.9) = 0.1 and (1-0.9^20) ~ 0.8784
        let x = fedavg_fixed_point_quadratic(&[pv(&[0.0]), pv(&[10.0])], &[0.5, 0.5], 0.1, &[1, 20]).unwrap();
        let c2 = 1.0 - 0.9_f64.powi(20);
        let expected = (0.5 * c2 * 10.0) / (0.5 * 0.1 + 0.5 * c2);
        assert!((x[0] - expected).abs() < 1e-14);
        assert!((x[0] - 8.978).abs() < 1e-3);
    }

    #[test]
    fn fedavg_fixed_point_homogeneous_is_optimum() {
        let x = fedavg_fixed_point_quadratic(&[pv(&[0.0]), pv(&[10.0])], &[0.5, 0.5], 0.1, &[7, 7]).unwrap();
        assert!((x[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn fedavg_fixed_point_identical_centers() {
        let x = fedavg_fixed_point_quadratic(&[pv(&[4.0]), pv(&[4.0])], &[0.5, 0.5], 0.1, &[1, 50]).unwrap();
        assert!((x[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn fednova_fixed_point_limits() {
        let x = fednova_fixed_point_quadratic(&[pv(&[0.0]), pv(&[10.0])], &[0.5, 0.5], 0.1, &[7, 7]).unwrap();
        assert!((x[0] - 5.0).abs() < 1e-12);
        let x = fednova_fixed_point_quadratic(&[pv(&[0.0]), pv(&[10.0])], &[0.5, 0.5], 1e-4, &[1, 20]).unwrap();
        assert!((x[0] - 5.0).abs() < 1e-2);
    }

    #[test]
    fn eta_out_of_range_rejected() {
        assert!(fedavg_fixed_point_quadratic(&[pv(&[0.0])], &[1.0], 1.5, &[3]).is_err());
        assert!(fedavg_fixed_point_quadratic(&[pv(&[0.0])], &[1.0], 0.0, &[3]).is_err());
    }

    #[test]
    fn long_gd_agrees_with_closed_form() {
        let mut seeder = RngStream::new(31, 0);
        for _ in 0..20 {
            let d = 3;
            let centers: Vec<ParamVector> = (0..3)
                .map(|_| {
                    ParamVector::new((0..d).map(|_| seeder.rng().random_range(-4.0..4.0)).collect()).unwrap()
                })
                .collect();
            let spec = ObjectiveSpec::quadratic(
                centers.iter().map(|c| QuadraticClient::identity(c.clone())).collect(),
                0.0,
            )
            .unwrap();
            let w = [0.2, 0.3, 0.5];
            let closed = optimum_quadratic(&spec, &w).unwrap();
            let gd = optimum_long_gd(&spec, &w, 1e-10).unwrap();
            assert!(gd.residual <= 1e-10);
            let diff = closed.x_star.sub(&gd.x_star).norm_sq().sqrt();
            assert!(diff < 1e-8, "closed vs gd differ by {diff}");
        }
    }

    #[test]
    fn long_gd_logistic_reaches_stationarity() {
        use crate::objectives::LogisticClient;
        // One effective sample with y*x = +1, so the optimum w solves
        // sigmoid(-w) = l2 * w exactly; check that first-order condition.
        let rows = vec![vec![(0, 1.0)], vec![(0, -1.0)]];
        let labels = vec![1.0, -1.0];
        let client = LogisticClient::new(rows, labels, 1e-3, 2).unwrap();
        let spec = ObjectiveSpec::logistic(vec![client], 1, 0.0).unwrap();
        let res = optimum_long_gd(&spec, &[1.0], 1e-10).unwrap();
        assert!(res.residual <= 1e-10);
        let w = res.x_star[0];
        let sig = 1.0 / (1.0 + w.exp());
        assert!((sig - 1e-3 * w).abs() < 1e-9, "w = {w}");

        // Opposite labels on the same feature make the loss even in w, so
        // the optimum is exactly 0.
        let rows = vec![vec![(0, 1.0)], vec![(0, 1.0)]];
        let labels = vec![1.0, -1.0];
        let client = LogisticClient::new(rows, labels, 1e-3, 2).unwrap();
        let spec = ObjectiveSpec::logistic(vec![client], 1, 0.0).unwrap();
        let res = optimum_long_gd(&spec, &[1.0], 1e-10).unwrap();
        assert!(res.x_star[0].abs() < 1e-9);
    }

    #[test]
    fn bias_bound_values() {
        let (spec, w) = two_point_instance(0.0, 10.0).unwrap();
        let x_star = optimum_quadratic(&spec, &w).unwrap().x_star;
        assert_eq!(theorem1_bias_bound(&spec, &w, &[5, 5], &x_star).unwrap(), 0.0);
        let v = theorem1_bias_bound(&spec, &w, &[1, 20], &x_star).unwrap();
        assert!((v - 118.75).abs() < 1e-9);
        // identical data: every F_i(x_star) = 0
        let (iid, wi) = two_point_instance(3.0, 3.0).unwrap();
        let xs = optimum_quadratic(&iid, &wi).unwrap().x_star;
        assert!(theorem1_bias_bound(&iid, &wi, &[1, 50], &xs).unwrap().abs() < 1e-12);
    }

    #[test]
    fn fedavg_fixed_point_matches_simulation() {
        // Deterministic FedAvg simulation as an independent cross-check.
        let mut seeder = RngStream::new(77, 0);
        for _ in 0..20 {
            let b: Vec<f64> = (0..2).map(|_| seeder.rng().random_range(-5.0..5.0)).collect();
            let w0: f64 = seeder.rng().random_range(0.2..0.8);
            let weights = [w0, 1.0 - w0];
            let eta: f64 = seeder.rng().random_range(0.05..0.5);
            let steps = [seeder.rng().random_range(1..10usize), seeder.rng().random_range(1..40usize)];
            let centers = [pv(&[b[0]]), pv(&[b[1]])];
            let predicted = fedavg_fixed_point_quadratic(&centers, &weights, eta, &steps).unwrap();
            let mut x = 0.0;
            for _ in 0..2000 {
                let mut next = 0.0;
                for i in 0..2 {
                    let contraction = (1.0 - eta).powi(steps[i] as i32);
                    next += weights[i] * (b[i] + contraction * (x - b[i]));
                }
                x = next;
            }
            assert!((x - predicted[0]).abs() < 1e-8, "sim {x} vs predicted {}", predicted[0]);
        }
    }

    #[test]
    fn bias_zero_iff_homogeneous_or_identical() {
        let centers = [pv(&[0.0]), pv(&[10.0])];
        let w = [0.5, 0.5];
        // heterogeneous steps, distinct centers: biased
        let x = fedavg_fixed_point_quadratic(&centers, &w, 0.1, &[1, 20]).unwrap();
        assert!((x[0] - 5.0).abs() > 1e-3);
        // homogeneous steps: unbiased
        let x = fedavg_fixed_point_quadratic(&centers, &w, 0.1, &[9, 9]).unwrap();
        assert!((x[0] - 5.0).abs() < 1e-12);
        // identical centers: unbiased
        let same = [pv(&[2.0]), pv(&[2.0])];
        let x = fedavg_fixed_point_quadratic(&same, &w, 0.1, &[1, 20]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12);
    }
}
