//! Squared-hinge SVM with separate LASSO penalties on `Z` and `V`.
//!
//! Objective:
//!
//! ```text
//! sum_i w_i |1 - y*_i W_i|_+^2 + lambda_Z sum|beta_j| + lambda_V sum|gamma_j|,
//! W_i = mu + beta'Z_i + gamma'V_i
//! ```
//!
//! Since `|1 - yW|_+^2 = (y - W)^2 1{1 >= yW}` for `y` in `{-1, +1}`, the fit
//! alternates between a weighted LASSO over the active observations
//! `A = {i : 1 >= y*_i W_i}` (centered within `A`, loss scaled by `1/|A|`) and a
//! refresh of the margins and of `A`. The LASSO is solved on the original
//! column scale with per-column penalties `lambda_Z`/`lambda_V`, which is the
//! same problem as the unit-penalty form on `Z/lambda_Z`, `V/lambda_V`; the
//! rescaled coefficients are `beta~ = lambda_Z beta`, `gamma~ = lambda_V gamma`.
//!
//! Each outer iteration: solve the LASSO, update `mu`, update the margins,
//! refresh the active set.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::hash::{Hash, Hasher};

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::design::{CausalDesign, ColumnKind};
use crate::error::{Error, Result};
use crate::lasso::{solve_gram, Gram, LassoSettings};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyPair {
    pub lambda_z: f64,
    pub lambda_v: f64,
}

impl PenaltyPair {
    pub fn new(lambda_z: f64, lambda_v: f64) -> Result<Self> {
        for (name, v) in [("lambda_Z", lambda_z), ("lambda_V", lambda_v)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(Self { lambda_z, lambda_v })
    }

    /// Penalties given on the natural-log scale.
    pub fn from_log(log_z: f64, log_v: f64) -> Result<Self> {
        Self::new(log_z.exp(), log_v.exp())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SvmSettings {
    pub max_outer: usize,
    /// Coefficient and intercept change below which the iteration stops.
    pub tol: f64,
    pub lasso: LassoSettings,
}

impl Default for SvmSettings {
    fn default() -> Self {
        Self {
            max_outer: 200,
            tol: 1e-6,
            lasso: LassoSettings::default(),
        }
    }
}

/// `sgn` with `sgn(0) = +1`.
pub fn sign(w: f64) -> f64 {
    if w >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

pub fn squared_hinge(y: f64, w: f64) -> f64 {
    let h = (1.0 - y * w).max(0.0);
    h * h
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvmFit {
    pub mu: f64,
    /// Coefficients on `Z`, original scale.
    pub beta: Array1<f64>,
    /// Coefficients on `V`, original scale.
    pub gamma: Array1<f64>,
    pub penalties: PenaltyPair,
    pub margins: Array1<f64>,
    /// Membership in `{i : 1 >= y*_i W_i}` derived from `margins`.
    pub active: Vec<bool>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Outer iterations whose full-sample objective rose above the previous one.
    pub objective_increases: usize,
    pub lasso_passes: usize,
    /// KKT slack of the last inner LASSO solve.
    pub kkt_violation: f64,
}

impl SvmFit {
    pub fn beta_tilde(&self) -> Array1<f64> {
        &self.beta * self.penalties.lambda_z
    }

    pub fn gamma_tilde(&self) -> Array1<f64> {
        &self.gamma * self.penalties.lambda_v
    }

    /// Nonzero slope coefficients (intercept excluded).
    pub fn nonzero_count(&self) -> usize {
        self.beta.iter().chain(self.gamma.iter()).filter(|v| **v != 0.0).count()
    }

    pub fn causal_nonzero_count(&self) -> usize {
        self.beta.iter().filter(|v| **v != 0.0).count()
    }

    pub fn active_size(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    pub fn predict_margin(&self, z_row: ArrayView1<f64>, v_row: ArrayView1<f64>) -> Result<f64> {
        if z_row.len() != self.beta.len() {
            return Err(Error::Dimension {
                expected: self.beta.len(),
                got: z_row.len(),
            });
        }
        if v_row.len() != self.gamma.len() {
            return Err(Error::Dimension {
                expected: self.gamma.len(),
                got: v_row.len(),
            });
        }
        Ok(self.mu + self.beta.dot(&z_row) + self.gamma.dot(&v_row))
    }

    pub fn classify(&self, z_row: ArrayView1<f64>, v_row: ArrayView1<f64>) -> Result<f64> {
        self.predict_margin(z_row, v_row).map(sign)
    }

    /// `sum_i w_i |1 - y*_i W_i|_+^2` over the full sample.
    pub fn hinge_loss(&self, design: &CausalDesign) -> f64 {
        design
            .y_star
            .iter()
            .zip(&self.margins)
            .zip(&design.weights)
            .map(|((&y, &m), &w)| w * squared_hinge(y, m))
            .sum()
    }

    /// `sum_{i in A} w_i (y*_i - W_i)^2`.
    pub fn active_squared_error(&self, design: &CausalDesign) -> f64 {
        (0..design.n())
            .filter(|&i| self.active[i])
            .map(|i| {
                let r = design.y_star[i] - self.margins[i];
                design.weights[i] * r * r
            })
            .sum()
    }
}

/// Running weighted moments over the active observations.
struct ActiveStats {
    count: usize,
    sw: f64,
    sy: f64,
    syy: f64,
    sx: Array1<f64>,
    sxy: Array1<f64>,
    /// Upper triangle of `sum w x x'`.
    sxx: Array2<f64>,
    updates_since_rebuild: usize,
}

impl ActiveStats {
    fn build(x: &Array2<f64>, y: &Array1<f64>, w: &Array1<f64>, active: &[bool]) -> Self {
        let p = x.ncols();
        let mut stats = ActiveStats {
            count: 0,
            sw: 0.0,
            sy: 0.0,
            syy: 0.0,
            sx: Array1::zeros(p),
            sxy: Array1::zeros(p),
            sxx: Array2::zeros((p, p)),
            updates_since_rebuild: 0,
        };
        for (i, &a) in active.iter().enumerate() {
            if a {
                stats.add(x.row(i), y[i], w[i], 1.0);
            }
        }
        stats
    }

    fn add(&mut self, row: ArrayView1<f64>, y: f64, w: f64, sign: f64) {
        let ws = w * sign;
        if sign > 0.0 {
            self.count += 1;
        } else {
            self.count -= 1;
        }
        self.sw += ws;
        self.sy += ws * y;
        self.syy += ws * y * y;
        let p = row.len();
        for j in 0..p {
            let wx = ws * row[j];
            if wx == 0.0 {
                continue;
            }
            self.sx[j] += wx;
            self.sxy[j] += wx * y;
            for k in j..p {
                self.sxx[[j, k]] += wx * row[k];
            }
        }
    }

    fn centered(&self) -> Gram {
        let p = self.sx.len();
        let mut xtx = Array2::zeros((p, p));
        for j in 0..p {
            for k in j..p {
                let v = self.sxx[[j, k]] - self.sx[j] * self.sx[k] / self.sw;
                xtx[[j, k]] = v;
                xtx[[k, j]] = v;
            }
        }
        Gram {
            xtx,
            xty: &self.sxy - &(&self.sx * (self.sy / self.sw)),
            yty: self.syy - self.sy * self.sy / self.sw,
        }
    }
}

fn hash_active(active: &[bool]) -> u64 {
    let mut h = DefaultHasher::new();
    active.hash(&mut h);
    h.finish()
}

#[derive(Clone)]
struct Iterate {
    mu: f64,
    coef: Array1<f64>,
    margins: Array1<f64>,
    active: Vec<bool>,
    objective: f64,
    kkt: f64,
}

/// A design prepared for repeated fits (the tuning search reuses one).
pub struct SvmProblem<'a> {
    pub design: &'a CausalDesign,
    x: Array2<f64>,
}

impl<'a> SvmProblem<'a> {
    pub fn new(design: &'a CausalDesign) -> Self {
        let x =
            concatenate(Axis(1), &[design.z.view(), design.v.view()]).expect("Z and V have the same number of rows");
        Self { design, x }
    }

    pub fn fit(&self, penalties: PenaltyPair, init: Option<&SvmFit>) -> Result<SvmFit> {
        self.fit_with(penalties, init, &SvmSettings::default())
    }

    pub fn fit_with(&self, penalties: PenaltyPair, init: Option<&SvmFit>, settings: &SvmSettings) -> Result<SvmFit> {
        let d = self.design;
        let (n, l_z, l_v) = (d.n(), d.l_z(), d.l_v());
        let p = l_z + l_v;
        let penalty: Vec<f64> = std::iter::repeat(penalties.lambda_z)
            .take(l_z)
            .chain(std::iter::repeat(penalties.lambda_v).take(l_v))
            .collect();
        let y = &d.y_star;
        let w = &d.weights;

        let (mut coef, mut mu_prev, mut active) = match init {
            None => (Array1::zeros(p), f64::NAN, vec![true; n]),
            Some(f) => {
                if f.beta.len() != l_z || f.gamma.len() != l_v {
                    return Err(Error::Dimension {
                        expected: p,
                        got: f.beta.len() + f.gamma.len(),
                    });
                }
                let coef = concatenate(Axis(0), &[f.beta.view(), f.gamma.view()]).unwrap();
                let margins = self.x.dot(&coef) + f.mu;
                let active: Vec<bool> = y.iter().zip(&margins).map(|(&yi, &m)| 1.0 >= yi * m).collect();
                (coef, f.mu, active)
            }
        };
        if !active.iter().any(|a| *a) {
            return Err(Error::DegenerateFit("initial active set is empty".into()));
        }

        let mut stats = ActiveStats::build(&self.x, y, w, &active);
        let mut seen = HashSet::new();
        seen.insert(hash_active(&active));
        let mut best: Option<Iterate> = None;
        let mut prev_objective = f64::INFINITY;
        let mut increases = 0;
        let mut passes = 0;

        for iter in 1..=settings.max_outer {
            if stats.count == 0 || stats.sw <= 0.0 {
                return Err(Error::DegenerateFit(format!(
                    "active set became empty at iteration {iter}"
                )));
            }
            let gram = stats.centered();
            let sol = solve_gram(
                &gram,
                &penalty,
                1.0 / stats.count as f64,
                Some(coef.view()),
                &settings.lasso,
            );
            passes += sol.passes;
            let new = sol.coefficients;
            let mu = (stats.sy - stats.sx.dot(&new)) / stats.sw;
            let margins = self.x.dot(&new) + mu;
            let new_active: Vec<bool> = y.iter().zip(&margins).map(|(&yi, &m)| 1.0 >= yi * m).collect();

            let hinge: f64 = y
                .iter()
                .zip(&margins)
                .zip(w)
                .map(|((&yi, &m), &wi)| wi * squared_hinge(yi, m))
                .sum();
            let objective = hinge
                + penalties.lambda_z * new.slice(s![..l_z]).mapv(f64::abs).sum()
                + penalties.lambda_v * new.slice(s![l_z..]).mapv(f64::abs).sum();
            if objective > prev_objective + 1e-12 * prev_objective.abs().max(1.0) {
                increases += 1;
            }
            prev_objective = objective;

            let delta = (&new - &coef).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let mu_delta = (mu - mu_prev).abs();
            let state = Iterate {
                mu,
                coef: new.clone(),
                margins,
                active: new_active.clone(),
                objective,
                kkt: sol.kkt_violation,
            };
            if best.as_ref().map_or(true, |b| objective < b.objective) {
                best = Some(state.clone());
            }
            coef = new;
            mu_prev = mu;

            let fixed_point = new_active == active;
            if fixed_point || (delta < settings.tol && mu_delta < settings.tol) {
                return Ok(self.finish(state, penalties, true, iter, increases, passes));
            }
            if !seen.insert(hash_active(&new_active)) {
                let b = best.expect("at least one iterate");
                return Ok(self.finish(b, penalties, false, iter, increases, passes));
            }

            let changes = active.iter().zip(&new_active).filter(|(a, b)| a != b).count();
            if changes * 4 > stats.count || stats.updates_since_rebuild > 50 {
                stats = ActiveStats::build(&self.x, y, w, &new_active);
            } else {
                for i in 0..n {
                    if active[i] != new_active[i] {
                        stats.add(self.x.row(i), y[i], w[i], if new_active[i] { 1.0 } else { -1.0 });
                    }
                }
                stats.updates_since_rebuild += 1;
            }
            active = new_active;
        }
        let b = best.expect("max_outer is at least one");
        Ok(self.finish(b, penalties, false, settings.max_outer, increases, passes))
    }

    fn finish(
        &self,
        it: Iterate,
        penalties: PenaltyPair,
        converged: bool,
        iterations: usize,
        objective_increases: usize,
        lasso_passes: usize,
    ) -> SvmFit {
        let l_z = self.design.l_z();
        SvmFit {
            mu: it.mu,
            beta: it.coef.slice(s![..l_z]).to_owned(),
            gamma: it.coef.slice(s![l_z..]).to_owned(),
            penalties,
            margins: it.margins,
            active: it.active,
            objective: it.objective,
            converged,
            iterations,
            objective_increases,
            lasso_passes,
            kkt_violation: it.kkt,
        }
    }
}

/// Fits the model for one penalty pair, optionally warm-started.
pub fn fit(design: &CausalDesign, penalties: PenaltyPair, init: Option<&SvmFit>) -> Result<SvmFit> {
    SvmProblem::new(design).fit(penalties, init)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientReport {
    pub name: String,
    pub kind: ColumnKind,
    /// Coefficient on the penalty-rescaled column (`lambda * coefficient`).
    pub rescaled: f64,
    pub coefficient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub lambda_z: f64,
    pub lambda_v: f64,
    pub log_lambda_z: f64,
    pub log_lambda_v: f64,
    pub mu: f64,
    pub beta: Vec<CoefficientReport>,
    pub gamma: Vec<CoefficientReport>,
    pub n: usize,
    pub active_size: usize,
    pub nonzero: usize,
    pub objective: f64,
    pub gcv: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl FitReport {
    pub fn new(fit: &SvmFit, design: &CausalDesign, gcv: Option<f64>) -> Self {
        let rows = |coef: &Array1<f64>, lambda: f64, meta: &[crate::design::ColumnMeta]| {
            coef.iter()
                .zip(meta)
                .map(|(&c, m)| CoefficientReport {
                    name: m.name.clone(),
                    kind: m.kind,
                    rescaled: c * lambda,
                    coefficient: c,
                })
                .collect::<Vec<_>>()
        };
        FitReport {
            lambda_z: fit.penalties.lambda_z,
            lambda_v: fit.penalties.lambda_v,
            log_lambda_z: fit.penalties.lambda_z.ln(),
            log_lambda_v: fit.penalties.lambda_v.ln(),
            mu: fit.mu,
            beta: rows(&fit.beta, fit.penalties.lambda_z, &design.z_meta),
            gamma: rows(&fit.gamma, fit.penalties.lambda_v, &design.v_meta),
            n: design.n(),
            active_size: fit.active_size(),
            nonzero: fit.nonzero_count(),
            objective: fit.objective,
            gcv: gcv.filter(|g| g.is_finite()),
            converged: fit.converged,
            iterations: fit.iterations,
        }
    }

    /// Rebuilds a fit against a design with the same column schema.
    pub fn restore(&self, design: &CausalDesign) -> Result<SvmFit> {
        let check = |rows: &[CoefficientReport], meta: &[crate::design::ColumnMeta], block: &str| {
            let got: Vec<&str> = rows.iter().map(|r| r.name.as_str()).collect();
            let want: Vec<&str> = meta.iter().map(|m| m.name.as_str()).collect();
            if got != want {
                return Err(Error::Data(format!(
                    "fit {block} columns {got:?} do not match the data's {want:?}"
                )));
            }
            Ok(())
        };
        check(&self.beta, &design.z_meta, "Z")?;
        check(&self.gamma, &design.v_meta, "V")?;
        let penalties = PenaltyPair::new(self.lambda_z, self.lambda_v)?;
        let beta: Array1<f64> = self.beta.iter().map(|r| r.coefficient).collect();
        let gamma: Array1<f64> = self.gamma.iter().map(|r| r.coefficient).collect();
        let margins = design.z.dot(&beta) + design.v.dot(&gamma) + self.mu;
        let active = design
            .y_star
            .iter()
            .zip(&margins)
            .map(|(&y, &m)| 1.0 >= y * m)
            .collect();
        Ok(SvmFit {
            mu: self.mu,
            beta,
            gamma,
            penalties,
            margins,
            active,
            objective: self.objective,
            converged: self.converged,
            iterations: self.iterations,
            objective_increases: 0,
            lasso_passes: 0,
            kkt_violation: 0.0,
        })
    }
}
