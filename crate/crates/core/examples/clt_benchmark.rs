//! A reduced white-noise benchmark: variance of N^{d/2} S_N against
//! B_1 = 1 and the KS distance to a centered normal.

use sheclt::montecarlo::{clt_reports, run_experiment, ExperimentConfig};

fn main() -> sheclt::Result<()> {
    let mut cfg = ExperimentConfig::benchmark();
    cfg.replicas = 400;
    cfg.grid.dx = 0.125;
    let data = run_experiment(&cfg)?;
    for r in clt_reports(&data) {
        println!(
            "N = {} psi = {} g = {}: var {:.4} (predicted {:?}), KS {:.4} vs {:.4}",
            r.n, r.psi, r.g, r.variance, r.predicted_variance, r.ks.unwrap_or(f64::NAN), r.ks_critical
        );
    }
    Ok(())
}
