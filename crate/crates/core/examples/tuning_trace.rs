//! The alternating GCV line search over both log-penalties, with its trace
//! written to a CSV file.

use hte_svm::simulation::{gen_scenario_one, ScenarioKind, ScenarioParams};
use hte_svm::tuning::{search, SearchSettings};

fn main() -> anyhow::Result<()> {
    let params = ScenarioParams::with_calibration_draws(ScenarioKind::OneCorrect, 1, 100_000)?;
    let data = gen_scenario_one(&params, 1000, 0)?;
    let res = search(&data.design, &SearchSettings::default())?;

    println!("{} fits evaluated, {} trace rows", res.evaluations, res.trace.len());
    println!(
        "{:>5} {:>9} {:>9} {:>4} {:>5} {:>10}",
        "round", "log lz", "log lv", "l", "a", "gcv"
    );
    for r in res.trace.iter().step_by((res.trace.len() / 15).max(1)) {
        println!(
            "{:>5} {:>9.4} {:>9.4} {:>4} {:>5} {:>10.6}",
            r.round,
            r.lambda_z.ln(),
            r.lambda_v.ln(),
            r.l,
            r.a,
            r.gcv
        );
    }
    let b = &res.best;
    println!(
        "selected log lz = {:.4}, log lv = {:.4}, gcv = {:.6}",
        b.log_lambda_z, b.log_lambda_v, b.gcv
    );
    let path = std::env::temp_dir().join("hte_svm_trace.csv");
    res.write_trace_csv(&path)?;
    println!("trace written to {}", path.display());
    Ok(())
}
