//! A 2 x 3 factorial experiment: tune both penalties by GCV, then rank every
//! treatment combination by its estimated ATE.

use hte_svm::design::{DesignSpec, Encoding, Factor, NumericColumn};
use hte_svm::effects::rank_treatments;
use hte_svm::tuning::{search, SearchSettings};
use hte_svm::{CausalDesign, RawDataset};
use rand::{rngs::StdRng, Rng, SeedableRng};

fn main() -> anyhow::Result<()> {
    let mut rng = StdRng::seed_from_u64(7);
    let n = 1500;
    let mail = ["none", "letter"];
    let call = ["none", "short", "long"];
    let lift = [[0.0, 0.02, 0.06], [0.05, 0.07, 0.15]];

    let (mut y, mut f1, mut f2, mut age) = (vec![], vec![], vec![], vec![]);
    for i in 0..n {
        let (a, b) = (i % 2, (i / 2) % 3);
        let x: f64 = rng.gen_range(18.0..80.0);
        let p = 0.2 + 0.003 * (x - 50.0) + lift[a][b];
        y.push((rng.gen::<f64>() < p) as u8 as f64);
        f1.push(mail[a].to_string());
        f2.push(call[b].to_string());
        age.push(x);
    }
    let raw = RawDataset {
        outcome: y,
        treatments: vec![Factor::new("mail", f1), Factor::new("call", f2)],
        covariates: vec![NumericColumn::new("age", age)],
        weights: None,
    };
    let spec = DesignSpec {
        encoding: Encoding::Factorial {
            baseline: vec!["none".into(), "none".into()],
        },
        derived: vec![],
    };
    let design = CausalDesign::build(&raw, &spec)?;
    println!(
        "Z columns: {:?}",
        design.z_meta.iter().map(|m| &m.name).collect::<Vec<_>>()
    );

    let res = search(&design, &SearchSettings::default())?;
    let best = &res.best;
    println!(
        "log lambda_z = {:.3}, log lambda_v = {:.3}, GCV = {:.5}, l = {}, a = {}",
        best.log_lambda_z, best.log_lambda_v, best.gcv, best.nonzero, best.active_size
    );
    for r in rank_treatments(&best.fit, &design)? {
        match r.ate {
            Some(a) => println!("{:>20}  {:+.2} pp", r.label, 100.0 * a),
            None => println!("{:>20}  not estimable", r.label),
        }
    }
    Ok(())
}
