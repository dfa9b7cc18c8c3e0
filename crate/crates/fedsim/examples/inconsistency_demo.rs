//! Shows plain FedAvg converging to a biased fixed point when clients run
//! unequal numbers of local steps, and the calibrated method converging to
//! the true optimum on the same instance.
//!
//! Two one-dimensional quadratic clients centered at 0 and 10 with equal
//! weights; the optimum is x = 5. One client takes a single local step per
//! round, the other twenty.

use fedsim::cli::{preset, ExperimentConfig};
use fedsim::oracle::{fedavg_fixed_point_quadratic, theorem1_bias_bound, two_point_instance};

fn final_gap(cfg: &ExperimentConfig) -> f64 {
    let output = cfg.execute().expect("run succeeds");
    output
        .records
        .last()
        .and_then(|r| r.optimality_gap)
        .expect("oracle gap available")
}

fn main() {
    let runs = preset("inconsistency-demo", 7).expect("preset exists");

    let (spec, weights) = two_point_instance(0.0, 10.0).unwrap();
    let centers = vec![
        fedsim::ParamVector::new(vec![0.0]).unwrap(),
        fedsim::ParamVector::new(vec![10.0]).unwrap(),
    ];
    let predicted = fedavg_fixed_point_quadratic(&centers, &weights, 0.1, &[1, 20]).unwrap();
    let x_star = fedsim::oracle::optimum_quadratic(&spec, &weights).unwrap().x_star;
    let bound = theorem1_bias_bound(&spec, &weights, &[1, 20], &x_star).unwrap();

    println!("true optimum:              x = {:.4}", x_star[0]);
    println!("predicted FedAvg endpoint: x = {:.4}", predicted[0]);
    println!("residual-error scale:      {bound:.4}");
    println!();

    for (label, cfg) in &runs {
        let gap = final_gap(cfg);
        println!("{label:>9}: final optimality gap = {gap:.3e}");
    }
}
