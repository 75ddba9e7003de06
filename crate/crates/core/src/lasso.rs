//! Weighted LASSO by cyclic coordinate descent.
//!
//! Minimizes
//!
//! ```text
//! loss_scale * sum_i w_i (y_i - x_i'b)^2 + sum_j penalty_j |b_j|
//! ```
//!
//! without an intercept; callers center `X` and `y` beforehand. The solver works
//! on the weighted second moments (`X'WX`, `X'Wy`), so one pass costs
//! `O(p^2)` regardless of the number of rows.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LassoSettings {
    /// Largest coefficient change in a full pass that counts as converged.
    pub tol: f64,
    /// Largest subgradient slack accepted at convergence.
    pub kkt_tol: f64,
    pub max_passes: usize,
    /// Record the objective after every pass.
    pub trace: bool,
}

impl Default for LassoSettings {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            kkt_tol: 1e-7,
            max_passes: 10_000,
            trace: false,
        }
    }
}

pub fn soft_threshold(z: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Weighted second moments of a least-squares problem.
#[derive(Clone, Debug, PartialEq)]
pub struct Gram {
    pub xtx: Array2<f64>,
    pub xty: Array1<f64>,
    pub yty: f64,
}

impl Gram {
    pub fn from_data(x: ArrayView2<f64>, y: ArrayView1<f64>, w: ArrayView1<f64>) -> Self {
        let p = x.ncols();
        let mut xtx = Array2::zeros((p, p));
        let mut xty = Array1::zeros(p);
        let mut yty = 0.0;
        for ((row, &yi), &wi) in x.rows().into_iter().zip(y).zip(w) {
            yty += wi * yi * yi;
            for j in 0..p {
                let wx = wi * row[j];
                if wx == 0.0 {
                    continue;
                }
                xty[j] += wx * yi;
                for k in j..p {
                    xtx[[j, k]] += wx * row[k];
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                xtx[[j, k]] = xtx[[k, j]];
            }
        }
        Self { xtx, xty, yty }
    }

    pub fn p(&self) -> usize {
        self.xty.len()
    }

    /// Penalized objective evaluated through the moments.
    pub fn objective(&self, b: ArrayView1<f64>, penalty: &[f64], loss_scale: f64) -> f64 {
        let quad = b.dot(&self.xtx.dot(&b));
        let rss = (self.yty - 2.0 * b.dot(&self.xty) + quad).max(0.0);
        loss_scale * rss + l1(b, penalty)
    }
}

fn l1(b: ArrayView1<f64>, penalty: &[f64]) -> f64 {
    b.iter()
        .zip(penalty)
        .map(|(bj, pj)| if *bj == 0.0 { 0.0 } else { pj * bj.abs() })
        .sum()
}

/// A weighted LASSO problem over explicit data.
#[derive(Clone, Debug)]
pub struct LassoProblem<'a> {
    pub x: ArrayView2<'a, f64>,
    pub y: ArrayView1<'a, f64>,
    pub w: ArrayView1<'a, f64>,
    pub penalty: &'a [f64],
    pub loss_scale: f64,
}

impl<'a> LassoProblem<'a> {
    pub fn new(
        x: ArrayView2<'a, f64>,
        y: ArrayView1<'a, f64>,
        w: ArrayView1<'a, f64>,
        penalty: &'a [f64],
        loss_scale: f64,
    ) -> Result<Self> {
        let n = x.nrows();
        if y.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: y.len(),
            });
        }
        if w.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: w.len(),
            });
        }
        if penalty.len() != x.ncols() {
            return Err(Error::Dimension {
                expected: x.ncols(),
                got: penalty.len(),
            });
        }
        if x.iter().chain(y.iter()).chain(w.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("lasso inputs must be finite".into()));
        }
        if penalty.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Data("penalty factors must be finite and nonnegative".into()));
        }
        if !(loss_scale.is_finite() && loss_scale > 0.0) {
            return Err(Error::Data(format!("loss scale must be positive, got {loss_scale}")));
        }
        Ok(Self {
            x,
            y,
            w,
            penalty,
            loss_scale,
        })
    }

    /// Objective computed directly from the rows.
    pub fn objective(&self, b: ArrayView1<f64>) -> f64 {
        let fitted = self.x.dot(&b);
        let rss: f64 = self
            .y
            .iter()
            .zip(&fitted)
            .zip(self.w)
            .map(|((yi, fi), wi)| wi * (yi - fi) * (yi - fi))
            .sum();
        self.loss_scale * rss + l1(b, self.penalty)
    }

    /// Largest KKT slack at `b`, computed from the rows.
    pub fn kkt_violation(&self, b: ArrayView1<f64>) -> f64 {
        let fitted = self.x.dot(&b);
        let resid: Array1<f64> = (&self.y - &fitted) * &self.w;
        let corr = self.x.t().dot(&resid);
        kkt_from_correlation(corr.view(), b, self.penalty, self.loss_scale)
    }
}

/// `corr` is `X'W(y - Xb)`.
fn kkt_from_correlation(corr: ArrayView1<f64>, b: ArrayView1<f64>, penalty: &[f64], loss_scale: f64) -> f64 {
    let two_s = 2.0 * loss_scale;
    corr.iter()
        .zip(b)
        .zip(penalty)
        .map(|((&c, &bj), &pj)| {
            let g = -two_s * c;
            if bj == 0.0 {
                (g.abs() - pj).max(0.0)
            } else {
                (g + pj * bj.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LassoSolution {
    pub coefficients: Array1<f64>,
    pub objective: f64,
    pub passes: usize,
    pub kkt_violation: f64,
    /// False when the pass cap was reached; the coefficients are the last iterate.
    pub converged: bool,
    /// Objective after each pass, when tracing was requested.
    pub objective_trace: Vec<f64>,
}

pub fn solve(problem: &LassoProblem, warm_start: Option<ArrayView1<f64>>) -> Result<LassoSolution> {
    solve_with(problem, warm_start, &LassoSettings::default())
}

pub fn solve_with(
    problem: &LassoProblem,
    warm_start: Option<ArrayView1<f64>>,
    settings: &LassoSettings,
) -> Result<LassoSolution> {
    if let Some(w) = warm_start {
        if w.len() != problem.x.ncols() {
            return Err(Error::Dimension {
                expected: problem.x.ncols(),
                got: w.len(),
            });
        }
    }
    let gram = Gram::from_data(problem.x, problem.y, problem.w);
    let mut sol = solve_gram(&gram, problem.penalty, problem.loss_scale, warm_start, settings);
    sol.objective = problem.objective(sol.coefficients.view());
    sol.kkt_violation = problem.kkt_violation(sol.coefficients.view());
    Ok(sol)
}

/// Coordinate descent on precomputed moments.
pub fn solve_gram(
    gram: &Gram,
    penalty: &[f64],
    loss_scale: f64,
    warm_start: Option<ArrayView1<f64>>,
    settings: &LassoSettings,
) -> LassoSolution {
    let p = gram.p();
    assert_eq!(penalty.len(), p, "penalty length must match the number of columns");
    let xtx = &gram.xtx;
    let max_diag = (0..p).map(|j| xtx[[j, j]]).fold(1.0, f64::max);
    let flat = 1e-12 * max_diag;
    let two_s = 2.0 * loss_scale;

    let mut b: Array1<f64> = match warm_start {
        Some(w) => w.to_owned(),
        None => Array1::zeros(p),
    };
    for j in 0..p {
        if xtx[[j, j]] <= flat {
            b[j] = 0.0;
        }
    }
    let mut r = &gram.xty - &xtx.dot(&b);
    let mut trace = Vec::new();
    let mut passes = 0;
    let mut converged = false;
    let mut kkt = f64::INFINITY;

    while passes < settings.max_passes {
        passes += 1;
        let mut max_delta: f64 = 0.0;
        for j in 0..p {
            let hjj = xtx[[j, j]];
            if hjj <= flat {
                continue;
            }
            let rho = r[j] + hjj * b[j];
            let new = soft_threshold(rho, penalty[j] / two_s) / hjj;
            let delta = new - b[j];
            if delta != 0.0 {
                for k in 0..p {
                    r[k] -= xtx[[k, j]] * delta;
                }
                b[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if settings.trace {
            trace.push(gram.objective(b.view(), penalty, loss_scale));
        }
        if max_delta < settings.tol {
            // Refresh the residual correlation to shed accumulated rounding.
            r = &gram.xty - &xtx.dot(&b);
            kkt = kkt_gram(r.view(), b.view(), penalty, loss_scale, xtx, flat);
            if kkt <= settings.kkt_tol {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        r = &gram.xty - &xtx.dot(&b);
        kkt = kkt_gram(r.view(), b.view(), penalty, loss_scale, xtx, flat);
    }
    LassoSolution {
        objective: gram.objective(b.view(), penalty, loss_scale),
        coefficients: b,
        passes,
        kkt_violation: kkt,
        converged,
        objective_trace: trace,
    }
}

/// KKT slack ignoring columns that are numerically zero on the supplied rows.
fn kkt_gram(
    r: ArrayView1<f64>,
    b: ArrayView1<f64>,
    penalty: &[f64],
    loss_scale: f64,
    xtx: &Array2<f64>,
    flat: f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..b.len() {
        if xtx[[j, j]] <= flat {
            continue;
        }
        let slack = kkt_from_correlation(
            r.slice(ndarray::s![j..j + 1]),
            b.slice(ndarray::s![j..j + 1]),
            &penalty[j..j + 1],
            loss_scale,
        );
        worst = worst.max(slack);
    }
    worst
}
