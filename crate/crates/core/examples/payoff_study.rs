//! Budget-free payoff of the plug-in targeting rule in the second simulation
//! design, against the oracle and the two trivial rules, plus a few points of
//! the benefit/harm curve.

use hte_svm::simulation::{run_monte_carlo, MonteCarloConfig, ScenarioKind};

fn main() -> anyhow::Result<()> {
    let replicates = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(5);
    let cfg = MonteCarloConfig {
        scenarios: vec![ScenarioKind::Two],
        sizes: vec![1000],
        replicates,
        calibration_draws: 200_000,
        ..MonteCarloConfig::default()
    };
    let out = run_monte_carlo(&cfg)?;
    let cal = &out.params[0].calibration;
    println!(
        "calibration targets {:?} pp, realized {:?} pp",
        cal.targets, cal.realized
    );
    for r in &out.payoff {
        println!("{:<16} n={:<5} payoff {:>8} % of oracle", r.method, r.n, r.payoff_pct);
    }
    println!("{:>10} {:>8} {:>8} {:>8}", "percentile", "benefit", "harm", "net");
    for c in out.curves.iter().filter(|c| c.percentile % 20 == 0) {
        println!("{:>10} {:>8.4} {:>8.4} {:>8.4}", c.percentile, c.benefit, c.harm, c.net);
    }
    Ok(())
}
