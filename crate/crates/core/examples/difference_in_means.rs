//! With one binary treatment, no covariates and small penalties, the fitted
//! ATE equals the difference in observed response rates.

use hte_svm::design::{DesignSpec, Encoding, Factor};
use hte_svm::effects::{ate, Treatment};
use hte_svm::{svm, CausalDesign, PenaltyPair, RawDataset};
use rand::{rngs::StdRng, Rng, SeedableRng};

fn main() -> anyhow::Result<()> {
    let mut rng = StdRng::seed_from_u64(11);
    let n = 2000;
    let t: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
    let y: Vec<f64> = t
        .iter()
        .map(|&ti| (rng.gen::<f64>() < 0.30 + 0.08 * ti) as u8 as f64)
        .collect();

    let raw = RawDataset {
        outcome: y.clone(),
        treatments: vec![Factor::binary("treat", &t)],
        covariates: vec![],
        weights: None,
    };
    let spec = DesignSpec {
        encoding: Encoding::Interaction { heterogeneity: None },
        derived: vec![],
    };
    let design = CausalDesign::build(&raw, &spec)?;
    let fit = svm::fit(&design, PenaltyPair::new(1e-8, 1e-8)?, None)?;

    let rate = |arm: f64| {
        let (s, c) = y
            .iter()
            .zip(&t)
            .filter(|(_, &ti)| ti == arm)
            .fold((0.0, 0.0), |(s, c), (yi, _)| (s + yi, c + 1.0));
        s / c
    };
    let dim = rate(1.0) - rate(0.0);
    let est = ate(&fit, &design, Treatment::Treated)?;
    println!("difference in means: {:.4} pp", 100.0 * dim);
    println!("fitted ATE:          {:.4} pp", 100.0 * est);
    println!("mu = {:.4}, beta = {:?}", fit.mu, fit.beta.to_vec());
    Ok(())
}
