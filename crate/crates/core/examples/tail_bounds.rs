//! Empirical exceedance probabilities against the sub-Gaussian tail bound.

use sheclt::montecarlo::{run_experiment, tail_reports, ExperimentConfig};

fn main() -> sheclt::Result<()> {
    let mut cfg = ExperimentConfig::benchmark();
    cfg.replicas = 400;
    cfg.grid.dx = 0.125;
    let data = run_experiment(&cfg)?;
    for t in tail_reports(&data)? {
        println!("scale B = {:.2} (bound vacuous below)", t.scale);
        for r in t.rows.iter().step_by(4) {
            println!("  ell {:>10.3}  P {:.4} [{:.4}, {:.4}]  bound {:.3e}", r.ell, r.empirical, r.ci_low, r.ci_high, r.bound);
        }
        println!("violations: {}", t.violations);
    }
    Ok(())
}
