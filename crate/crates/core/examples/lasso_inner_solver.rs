//! The weighted coordinate-descent LASSO used inside every SVM iteration,
//! traced along a decreasing penalty path with warm starts.

use hte_svm::lasso::{solve_with, LassoProblem, LassoSettings};
use ndarray::{Array1, Array2};
use rand::{rngs::StdRng, SeedableRng};
use rand_distr::{Distribution, Normal};

fn main() -> anyhow::Result<()> {
    let mut rng = StdRng::seed_from_u64(3);
    let normal = Normal::new(0.0, 1.0)?;
    let (n, p) = (200, 8);
    let x = Array2::from_shape_fn((n, p), |_| normal.sample(&mut rng));
    let truth = Array1::from(vec![2.0, -1.5, 0.0, 0.0, 0.8, 0.0, 0.0, 0.0]);
    let y = x.dot(&truth) + Array1::from_shape_fn(n, |_| 0.5 * normal.sample(&mut rng));
    let w = Array1::ones(n);

    let settings = LassoSettings {
        trace: true,
        ..LassoSettings::default()
    };
    let mut warm: Option<Array1<f64>> = None;
    println!("{:>8} {:>6} {:>5}  coefficients", "lambda", "passes", "nnz");
    for lambda in [400.0, 100.0, 30.0, 10.0, 1.0] {
        let penalty = vec![lambda; p];
        let problem = LassoProblem::new(x.view(), y.view(), w.view(), &penalty, 1.0)?;
        let sol = solve_with(&problem, warm.as_ref().map(|b| b.view()), &settings)?;
        let nnz = sol.coefficients.iter().filter(|b| **b != 0.0).count();
        let coefs: Vec<String> = sol.coefficients.iter().map(|b| format!("{b:6.3}")).collect();
        println!("{lambda:>8} {:>6} {nnz:>5}  {}", sol.passes, coefs.join(" "));
        assert!(sol.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        warm = Some(sol.coefficients);
    }
    Ok(())
}
