//! Binary treatment interacted with covariates: heterogeneous effects by
//! covariate profile, and the units with the highest and lowest CATE.

use hte_svm::design::{DerivedTerm, DesignSpec, Encoding, Factor, NumericColumn};
use hte_svm::effects::{group_extremes, unit_cates, Treatment};
use hte_svm::tuning::{search, SearchSettings};
use hte_svm::{CausalDesign, RawDataset};
use rand::{rngs::StdRng, Rng, SeedableRng};

fn main() -> anyhow::Result<()> {
    let mut rng = StdRng::seed_from_u64(21);
    let n = 2000;
    let (mut y, mut t, mut age, mut prior) = (vec![], vec![], vec![], vec![]);
    for i in 0..n {
        let ti = (i % 2) as f64;
        let a: f64 = rng.gen_range(20.0..70.0);
        let v = (rng.gen::<f64>() < 0.4) as u8 as f64;
        // Only past voters respond to treatment.
        let p = 0.25 + 0.3 * v + ti * v * 0.12;
        y.push((rng.gen::<f64>() < p) as u8 as f64);
        t.push(ti);
        age.push(a);
        prior.push(v);
    }
    let raw = RawDataset {
        outcome: y,
        treatments: vec![Factor::binary("treat", &t)],
        covariates: vec![
            NumericColumn::new("age", age),
            NumericColumn::new("voted_before", prior),
        ],
        weights: None,
    };
    let spec = DesignSpec {
        encoding: Encoding::Interaction { heterogeneity: None },
        derived: vec![DerivedTerm::parse("square:age")?],
    };
    let design = CausalDesign::build(&raw, &spec)?;
    let res = search(&design, &SearchSettings::default())?;
    let fit = &res.best.fit;
    for (m, b) in design.z_meta.iter().zip(&fit.beta) {
        println!("{:>22}  {b:+.4}", m.name);
    }

    let cates = unit_cates(fit, &design, Treatment::Treated)?;
    let by_prior = |flag: f64| {
        let sel: Vec<f64> = (0..n)
            .filter(|&i| raw.covariates[1].values[i] == flag)
            .map(|i| cates[i])
            .collect();
        100.0 * sel.iter().sum::<f64>() / sel.len() as f64
    };
    println!("mean CATE, past voters:  {:+.2} pp", by_prior(1.0));
    println!("mean CATE, non-voters:   {:+.2} pp", by_prior(0.0));

    let g = group_extremes(fit, &design, Treatment::Treated, 3)?;
    for (name, members) in [("highest", &g.highest), ("lowest", &g.lowest)] {
        for m in members {
            println!(
                "{name:>8} unit {:>5}  {:+.2} pp  profile {:?}",
                m.unit,
                100.0 * m.cate,
                m.profile
            );
        }
    }
    Ok(())
}
