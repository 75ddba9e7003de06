//! A reduced run of the 49-arm discovery study: false discovery and discovery
//! rates for both outcome models at two sample sizes.
//!
//! Usage: `cargo run --release --example simulation_study_one [replicates]`

use hte_svm::simulation::{run_monte_carlo, MonteCarloConfig, ScenarioKind};

fn main() -> anyhow::Result<()> {
    let replicates = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(10);
    let cfg = MonteCarloConfig {
        scenarios: vec![ScenarioKind::OneCorrect, ScenarioKind::OneMisspecified],
        sizes: vec![250, 1000],
        replicates,
        calibration_draws: 200_000,
        jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
        ..MonteCarloConfig::default()
    };
    let out = run_monte_carlo(&cfg)?;
    for p in &out.params {
        println!(
            "{}: leading true effects {:?} pp",
            p.kind.tag(),
            p.leading_arms(3)
                .iter()
                .map(|&j| format!("{:.2}", 100.0 * p.true_ate[j]))
                .collect::<Vec<_>>()
        );
    }
    println!("{:<26} {:>5} {:>8} {:>6} {:>6}", "scenario", "n", "mode", "FDR", "DR");
    for r in &out.fdr_dr {
        println!("{:<26} {:>5} {:>8} {:>6} {:>6.3}", r.scenario, r.n, r.mode, r.fdr, r.dr);
    }
    Ok(())
}
