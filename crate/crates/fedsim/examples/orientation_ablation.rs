//! Compares the four orientation policies on a noisy quadratic instance
//! with randomly drawn local-step counts.
//!
//! `default` sends the averaged local gradient from slow clients and the
//! first gradient from fast ones; `avg` and `first` always use one or the
//! other; `reverse` flips the default rule.

use fedsim::cli::preset;

fn main() {
    for (label, cfg) in preset("orientation-ablation", 42).expect("preset exists") {
        let output = cfg.execute().expect("run succeeds");
        let last = output.records.last().unwrap();
        println!(
            "{label:>17}: gap = {:.4e}  loss = {:.4e}",
            last.optimality_gap.unwrap(),
            last.global_loss
        );
    }
}
