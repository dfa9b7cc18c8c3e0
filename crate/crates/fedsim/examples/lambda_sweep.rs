//! Sweeps the calibration weight: constants 0, 0.1, 0.5, 1 plus the
//! staged schedule that increases the weight over the first 150 rounds.
//! A weight of 0 degenerates to FedAvg.

use fedsim::cli::preset;

fn main() {
    for (label, cfg) in preset("lambda-sweep", 42).expect("preset exists") {
        let output = cfg.execute().expect("run succeeds");
        let last = output.records.last().unwrap();
        println!("{label:>15}: gap = {:.4e}", last.optimality_gap.unwrap());
    }
}
