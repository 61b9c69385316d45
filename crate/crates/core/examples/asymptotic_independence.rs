//! ECF gaps for three disjoint boxes along a short N ladder.

use sheclt::montecarlo::{independence_report, run_experiment, ExperimentConfig, IndependenceConfig, NamedPsi};
use sheclt::occupation::TestFunction;

fn main() -> sheclt::Result<()> {
    let mut cfg = ExperimentConfig::benchmark();
    cfg.psi = [("a", 0.0), ("b", 2.0), ("c", 4.0)]
        .iter()
        .map(|(n, lo)| Ok(NamedPsi::new(n, TestFunction::interval(*lo, lo + 1.0)?)))
        .collect::<sheclt::Result<_>>()?;
    cfg.n_ladder = vec![8.0, 16.0, 32.0];
    cfg.grid.dx = 0.25;
    cfg.replicas = 600;
    cfg.independence = Some(IndependenceConfig {
        psi: vec!["a".into(), "b".into(), "c".into()],
        permutations: 100,
        g: 0,
    });
    cfg.stats.independence = true;
    let data = run_experiment(&cfg)?;
    let report = independence_report(&data)?;
    for e in &report.entries {
        println!("N = {:>3} {:<7} gap {:.4} null p99 {:.4}", e.n, e.subset.join("+"), e.statistic, e.null.p99);
    }
    println!("monotone: {}, below null at largest N: {}", report.monotone, report.final_below_null);
    Ok(())
}
