//! Sweeps the variance of the per-client step counts, in both the fixed
//! regime (one draw reused every round) and the random regime (fresh draws
//! each round), and reports the calibrated method's final gap for each.

use fedsim::cli::preset;

fn main() {
    println!("{:>12}  {:>12}  {:>10}", "setting", "gap", "kbar");
    for (label, cfg) in preset("variance-sweep", 42).expect("preset exists") {
        let output = cfg.execute().expect("run succeeds");
        let last = output.records.last().unwrap();
        println!(
            "{label:>12}  {:>12.4e}  {:>10.2}",
            last.optimality_gap.unwrap(),
            last.kbar
        );
    }
}
