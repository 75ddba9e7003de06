//! Calibrated outcome models of the simulation designs for several seeds.

use hte_svm::simulation::{ScenarioKind, ScenarioParams};

fn main() -> anyhow::Result<()> {
    for seed in 1..=3 {
        for kind in [
            ScenarioKind::OneCorrect,
            ScenarioKind::OneMisspecified,
            ScenarioKind::Two,
        ] {
            let p = ScenarioParams::with_calibration_draws(kind, seed, 200_000)?;
            let c = &p.calibration;
            println!(
                "seed {seed} {:<24} a={:.5} b={:.4} targets {:?} realized {:?} clamped {:.3}%",
                kind.tag(),
                p.affine.a,
                p.affine.b,
                c.targets,
                c.realized
                    .iter()
                    .map(|r| (r * 100.0).round() / 100.0)
                    .collect::<Vec<_>>(),
                100.0 * c.clamp_fraction
            );
        }
    }
    Ok(())
}
