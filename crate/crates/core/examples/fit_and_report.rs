//! File-based workflow: write a CSV, fit it, then produce the effect tables,
//! as the `fit` and `effects` subcommands do.

use hte_svm::cli::{cmd_effects, cmd_fit, EffectsArgs, FitArgs, RoleArgs};
use rand::{rngs::StdRng, Rng, SeedableRng};
use std::io::Write;

fn main() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join("hte_svm_fit_and_report");
    std::fs::create_dir_all(&dir)?;
    let data = dir.join("data.csv");
    let mut f = std::fs::File::create(&data)?;
    writeln!(f, "voted,visit,phone,age,female")?;
    let mut rng = StdRng::seed_from_u64(5);
    for i in 0..1200 {
        let (visit, phone) = (i % 2, (i / 2) % 2);
        let age: f64 = rng.gen_range(18.0..90.0);
        let female = rng.gen_bool(0.5) as u8;
        let p = 0.3 + 0.08 * visit as f64 + 0.002 * (age - 50.0);
        writeln!(f, "{},{visit},{phone},{age:.0},{female}", rng.gen_bool(p) as u8)?;
    }
    drop(f);

    let roles = || RoleArgs {
        data: Some(data.clone()),
        outcome: Some("voted".into()),
        treatment: vec!["visit".into(), "phone".into()],
        covariates: vec!["age,female".into()],
        derived: vec!["square:age".into()],
        output: Some(dir.clone()),
        ..RoleArgs::default()
    };
    let summary = cmd_fit(&FitArgs {
        roles: roles(),
        trace: true,
        ..FitArgs::default()
    })?;
    let fit = &summary.document.fit;
    println!(
        "log lambda_z = {:.3}, log lambda_v = {:.3}, gcv = {:?}",
        fit.log_lambda_z, fit.log_lambda_v, fit.gcv
    );

    cmd_effects(&EffectsArgs {
        roles: roles(),
        fit: dir.join("fit.json"),
        top_k: Some(5),
        unit_cates: false,
    })?;
    for name in ["coefficients.csv", "ranked_treatments.csv"] {
        println!("--- {name}");
        print!("{}", std::fs::read_to_string(dir.join(name))?);
    }
    println!("outputs in {}", dir.display());
    Ok(())
}
