//! Data-generating processes for the two simulation studies.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::design::{CausalDesign, DesignSpec, Encoding, Factor, NumericColumn, RawDataset};
use crate::error::{Error, Result};
use crate::simulation::stream_rng;

/// Number of arms (control included) in the first study.
pub const ARMS: usize = 50;
/// Default calibration sample size.
pub const CALIBRATION_DRAWS: usize = 1_000_000;
/// Coefficients of the `x1*x2` and `x3^2` terms in the misspecified process.
pub const MISSPECIFIED_TERMS: (f64, f64) = (20.0, -20.0);

const SCENARIO_ONE_LEADING: [f64; 3] = [7.5, 3.3, -2.0];
const SCENARIO_ONE_GAMMA: [f64; 3] = [50.0, -30.0, 30.0];
const SCENARIO_ONE_TARGETS: [f64; 3] = [7.0, 5.0, -3.0];
const SCENARIO_TWO_INTERACTIONS: [f64; 4] = [-2.7, 2.7, -6.7, -6.7];
const SCENARIO_TWO_GAMMA: [f64; 5] = [50.0, -30.0, 30.0, 20.0, -20.0];
const SCENARIO_TWO_TARGETS: [f64; 2] = [4.0, 1.7];
/// Covariates whose one-sd increase defines the calibrated CATE profiles.
const SCENARIO_TWO_PROFILES: [usize; 2] = [2, 1];
const SMALL_EFFECT: f64 = 0.7;
const BISECTION_STEPS: usize = 60;
/// Standard deviation of the control index after rescaling.
pub const CONTROL_INDEX_SD: f64 = 15.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum ScenarioKind {
    #[serde(rename = "scenario-1-correct")]
    OneCorrect,
    #[serde(rename = "scenario-1-misspecified")]
    OneMisspecified,
    #[serde(rename = "scenario-2")]
    Two,
}

impl ScenarioKind {
    pub fn tag(self) -> &'static str {
        match self {
            ScenarioKind::OneCorrect => "scenario-1-correct",
            ScenarioKind::OneMisspecified => "scenario-1-misspecified",
            ScenarioKind::Two => "scenario-2",
        }
    }

    pub fn parse(s: &str) -> Result<Vec<Self>> {
        match s.trim() {
            "scenario-1-correct" => Ok(vec![ScenarioKind::OneCorrect]),
            "scenario-1-misspecified" => Ok(vec![ScenarioKind::OneMisspecified]),
            "scenario-1" | "1" => Ok(vec![ScenarioKind::OneCorrect, ScenarioKind::OneMisspecified]),
            "scenario-2" | "2" => Ok(vec![ScenarioKind::Two]),
            other => Err(Error::Config(format!("unknown scenario '{other}'"))),
        }
    }

    pub fn is_first_study(self) -> bool {
        !matches!(self, ScenarioKind::Two)
    }

    /// Parameter draws are shared by the two variants of the first study.
    fn family(self) -> &'static str {
        if self.is_first_study() {
            "scenario-1"
        } else {
            "scenario-2"
        }
    }
}

/// Probability model `p = clamp(a * eta + b, 0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Affine {
    pub a: f64,
    pub b: f64,
}

impl Affine {
    pub fn prob(&self, eta: f64) -> f64 {
        (self.a * eta + self.b).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub sample_size: usize,
    pub steps: usize,
    /// Target effects in percentage points.
    pub targets: Vec<f64>,
    /// Realized effects in percentage points, in target order.
    pub realized: Vec<f64>,
    /// Range of the realized ATEs of the negligible arms, percentage points.
    pub negligible_range: Option<(f64, f64)>,
    /// Share of control-condition probabilities that hit the clamp.
    pub clamp_fraction: f64,
    pub mean_control_probability: f64,
    pub index_scale: f64,
}

/// Immutable parameters of one scenario.
#[derive(Clone, Debug)]
pub struct ScenarioParams {
    pub kind: ScenarioKind,
    pub seed: u64,
    /// `Sigma = U'U`.
    pub u: Array2<f64>,
    /// Population standard deviations used to scale the covariates.
    pub sd: Array1<f64>,
    /// Covariates `0..dichotomized` are thresholded at 0.5.
    pub dichotomized: usize,
    /// First study: effect of arm `k` is `beta[k-1]`. Second study: treatment
    /// main effect followed by one interaction per covariate.
    pub beta: Array1<f64>,
    pub gamma: Array1<f64>,
    /// Multiplier applied to the control index so that its standard deviation
    /// does not exceed [`CONTROL_INDEX_SD`].
    pub index_scale: f64,
    pub affine: Affine,
    pub calibration: CalibrationReport,
    /// First study: true ATE of each arm `1..=49` on the probability scale.
    pub true_ate: Vec<f64>,
}

/// One generated data set.
#[derive(Clone, Debug)]
pub struct SimData {
    pub raw: RawDataset,
    pub design: CausalDesign,
    /// Second study: the true CATE of treatment for every unit.
    pub true_cate: Vec<f64>,
    pub diagnostics: Vec<String>,
}

impl ScenarioParams {
    pub fn new(kind: ScenarioKind, seed: u64) -> Result<Self> {
        Self::with_calibration_draws(kind, seed, CALIBRATION_DRAWS)
    }

    pub fn with_calibration_draws(kind: ScenarioKind, seed: u64, draws: usize) -> Result<Self> {
        if draws == 0 {
            return Err(Error::Config("calibration sample must be nonempty".into()));
        }
        let mut rng = stream_rng(seed, &format!("{}|params", kind.family()), 0, 0);
        let k = if kind.is_first_study() { 3 } else { 20 };
        let u = Array2::from_shape_fn((k, k), |_| rng.sample::<f64, _>(StandardNormal));
        let sd = u.t().dot(&u).diag().mapv(f64::sqrt);
        let (beta, gamma, dichotomized) = if kind.is_first_study() {
            let mut beta = Array1::zeros(ARMS - 1);
            for (j, b) in beta.iter_mut().enumerate() {
                *b = if j < 3 {
                    SCENARIO_ONE_LEADING[j]
                } else {
                    rng.gen_range(-SMALL_EFFECT..=SMALL_EFFECT)
                };
            }
            (beta, Array1::from(SCENARIO_ONE_GAMMA.to_vec()), 0)
        } else {
            let mut beta = Array1::zeros(21);
            for (j, b) in beta.iter_mut().enumerate() {
                *b = match j {
                    1..=4 => SCENARIO_TWO_INTERACTIONS[j - 1],
                    _ => rng.gen_range(-SMALL_EFFECT..=SMALL_EFFECT),
                };
            }
            let mut gamma = Array1::zeros(20);
            for (j, g) in gamma.iter_mut().enumerate() {
                *g = if j < 5 {
                    SCENARIO_TWO_GAMMA[j]
                } else {
                    rng.gen_range(-SMALL_EFFECT..=SMALL_EFFECT)
                };
            }
            (beta, gamma, 5)
        };
        let mut params = ScenarioParams {
            kind,
            seed,
            u,
            sd,
            dichotomized,
            beta,
            gamma,
            index_scale: 1.0,
            affine: Affine { a: 0.0, b: 0.5 },
            calibration: CalibrationReport {
                sample_size: draws,
                steps: 0,
                targets: vec![],
                realized: vec![],
                negligible_range: None,
                clamp_fraction: 0.0,
                mean_control_probability: 0.5,
                index_scale: 1.0,
            },
            true_ate: vec![],
        };
        let mut crng = stream_rng(seed, &format!("{}|calibration", kind.tag()), 0, 0);
        let x = params.draw_covariates(draws, &mut crng);
        let raw: Array1<f64> = x.axis_iter(Axis(0)).map(|r| params.control_index(r)).collect();
        let raw_sd = raw.std(0.0);
        if raw_sd > CONTROL_INDEX_SD {
            params.index_scale = CONTROL_INDEX_SD / raw_sd;
        }
        if kind.is_first_study() {
            params.calibrate_first(&x)?;
        } else {
            params.calibrate_second(&x)?;
        }
        Ok(params)
    }

    pub fn covariate_count(&self) -> usize {
        self.u.nrows()
    }

    /// Multivariate normal draws scaled to unit variance, with the leading
    /// `dichotomized` columns thresholded.
    pub fn draw_covariates<R: Rng>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        let k = self.covariate_count();
        let z = Array2::from_shape_fn((n, k), |_| rng.sample::<f64, _>(StandardNormal));
        let mut x = z.dot(&self.u);
        for mut row in x.axis_iter_mut(Axis(0)) {
            for j in 0..k {
                row[j] /= self.sd[j];
                if j < self.dichotomized {
                    row[j] = if row[j] > 0.5 { 1.0 } else { 0.0 };
                }
            }
        }
        x
    }

    /// Linear index of the control condition.
    pub fn control_index(&self, x: ndarray::ArrayView1<f64>) -> f64 {
        let mut eta = self.gamma.dot(&x);
        if self.kind == ScenarioKind::OneMisspecified {
            eta += MISSPECIFIED_TERMS.0 * x[0] * x[1] + MISSPECIFIED_TERMS.1 * x[2] * x[2];
        }
        self.index_scale * eta
    }

    /// Shift of the linear index under treatment (second study).
    pub fn treatment_shift(&self, x: ndarray::ArrayView1<f64>) -> f64 {
        self.beta[0] + self.beta.slice(ndarray::s![1..]).dot(&x)
    }

    fn calibrate_first(&mut self, x: &Array2<f64>) -> Result<()> {
        let eta: Vec<f64> = x.axis_iter(Axis(0)).map(|r| self.control_index(r)).collect();
        let balance = ProbabilityBalance::new(&eta);
        let lead = self.beta[0];
        let effect = |a: f64| {
            let b = balance.offset(a);
            mean_shift(&eta, a, b, lead)
        };
        let (a, steps) = bisect_scale(effect, SCENARIO_ONE_TARGETS[0] / 100.0)?;
        let b = balance.offset(a);
        self.affine = Affine { a, b };
        self.true_ate = self.beta.iter().map(|&bt| mean_shift(&eta, a, b, bt)).collect();
        let negligible = &self.true_ate[3..];
        let lo = negligible.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = negligible.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.calibration = CalibrationReport {
            sample_size: eta.len(),
            steps,
            targets: SCENARIO_ONE_TARGETS.to_vec(),
            realized: self.true_ate[..3].iter().map(|v| 100.0 * v).collect(),
            negligible_range: Some((100.0 * lo, 100.0 * hi)),
            clamp_fraction: clamp_fraction(&eta, self.affine),
            mean_control_probability: balance.mean(a, b),
            index_scale: self.index_scale,
        };
        Ok(())
    }

    fn calibrate_second(&mut self, x: &Array2<f64>) -> Result<()> {
        let eta: Vec<f64> = x.axis_iter(Axis(0)).map(|r| self.control_index(r)).collect();
        let shift: Vec<f64> = x.axis_iter(Axis(0)).map(|r| self.treatment_shift(r)).collect();
        let balance = ProbabilityBalance::new(&eta);
        // Mean CATE change when covariate k moves one standard deviation up.
        let profile = |a: f64, b: f64, k: usize| {
            let aff = Affine { a, b };
            let step = x.column(k).std(0.0);
            let (g, bk) = (self.index_scale * self.gamma[k] * step, self.beta[k + 1] * step);
            let mut total = 0.0;
            for i in 0..eta.len() {
                let base = aff.prob(eta[i] + shift[i]) - aff.prob(eta[i]);
                let up = aff.prob(eta[i] + g + shift[i] + bk) - aff.prob(eta[i] + g);
                total += up - base;
            }
            total / eta.len() as f64
        };
        let lead = SCENARIO_TWO_PROFILES[0];
        let (a, steps) = bisect_scale(
            |a| profile(a, balance.offset(a), lead).abs(),
            SCENARIO_TWO_TARGETS[0] / 100.0,
        )?;
        let b = balance.offset(a);
        self.affine = Affine { a, b };
        self.calibration = CalibrationReport {
            sample_size: eta.len(),
            steps,
            targets: SCENARIO_TWO_TARGETS.to_vec(),
            realized: SCENARIO_TWO_PROFILES
                .iter()
                .map(|&k| 100.0 * profile(a, b, k))
                .collect(),
            negligible_range: None,
            clamp_fraction: clamp_fraction(&eta, self.affine),
            mean_control_probability: balance.mean(a, b),
            index_scale: self.index_scale,
        };
        Ok(())
    }

    /// Draws one data set of size `n` and builds the fitted design.
    pub fn generate<R: Rng>(&self, n: usize, rng: &mut R) -> Result<SimData> {
        if n == 0 {
            return Err(Error::Simulation("sample size must be positive".into()));
        }
        let x = self.draw_covariates(n, rng);
        let mut diagnostics = Vec::new();
        let covariates: Vec<NumericColumn> = (0..self.covariate_count())
            .map(|j| NumericColumn::new(format!("x{}", j + 1), x.column(j).to_vec()))
            .collect();
        let mut outcome = Vec::with_capacity(n);
        let mut true_cate = Vec::new();
        let (treatments, spec) = if self.kind.is_first_study() {
            if n % ARMS != 0 {
                diagnostics.push(format!(
                    "n = {n} is not a multiple of {ARMS}; arm sizes differ by at most one"
                ));
            }
            let mut arms: Vec<usize> = (0..n).map(|i| i % ARMS).collect();
            arms.shuffle(rng);
            for (i, &arm) in arms.iter().enumerate() {
                let mut eta = self.control_index(x.row(i));
                if arm > 0 {
                    eta += self.beta[arm - 1];
                }
                outcome.push(bernoulli(rng, self.affine.prob(eta)));
            }
            let factor = Factor::new("arm", arms.iter().map(|a| a.to_string()).collect());
            let spec = DesignSpec {
                encoding: Encoding::Factorial {
                    baseline: vec!["0".into()],
                },
                derived: vec![],
            };
            (vec![factor], spec)
        } else {
            let mut t: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
            t.shuffle(rng);
            for i in 0..n {
                let e0 = self.control_index(x.row(i));
                let e1 = e0 + self.treatment_shift(x.row(i));
                let (p0, p1) = (self.affine.prob(e0), self.affine.prob(e1));
                true_cate.push(p1 - p0);
                outcome.push(bernoulli(rng, if t[i] == 1.0 { p1 } else { p0 }));
            }
            let spec = DesignSpec {
                encoding: Encoding::Interaction { heterogeneity: None },
                derived: vec![],
            };
            (vec![Factor::binary("treat", &t)], spec)
        };
        let raw = RawDataset {
            outcome,
            treatments,
            covariates,
            weights: None,
        };
        let design = CausalDesign::build(&raw, &spec)?;
        diagnostics.extend(design.diagnostics.iter().cloned());
        Ok(SimData {
            raw,
            design,
            true_cate,
            diagnostics,
        })
    }

    /// Index of the arm with the largest absolute true ATE (first study).
    pub fn leading_arms(&self, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.true_ate.len()).collect();
        idx.sort_by(|&a, &b| {
            self.true_ate[b]
                .abs()
                .partial_cmp(&self.true_ate[a].abs())
                .unwrap()
                .then(a.cmp(&b))
        });
        idx.truncate(k);
        idx
    }
}

fn bernoulli<R: Rng>(rng: &mut R, p: f64) -> f64 {
    if rng.gen::<f64>() < p {
        1.0
    } else {
        0.0
    }
}

/// Mean of `clamp(a (eta + shift) + b) - clamp(a eta + b)`.
fn mean_shift(eta: &[f64], a: f64, b: f64, shift: f64) -> f64 {
    let aff = Affine { a, b };
    eta.iter().map(|&e| aff.prob(e + shift) - aff.prob(e)).sum::<f64>() / eta.len() as f64
}

fn clamp_fraction(eta: &[f64], aff: Affine) -> f64 {
    let hits = eta
        .iter()
        .filter(|&&e| {
            let p = aff.a * e + aff.b;
            !(0.0..=1.0).contains(&p)
        })
        .count();
    hits as f64 / eta.len() as f64
}

/// Finds `b` with mean `clamp(a eta + b)` equal to one half, via sorted prefix sums.
struct ProbabilityBalance {
    sorted: Vec<f64>,
    prefix: Vec<f64>,
}

impl ProbabilityBalance {
    fn new(eta: &[f64]) -> Self {
        let mut sorted = eta.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut prefix = Vec::with_capacity(sorted.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for &v in &sorted {
            acc += v;
            prefix.push(acc);
        }
        Self { sorted, prefix }
    }

    fn mean(&self, a: f64, b: f64) -> f64 {
        let n = self.sorted.len();
        if a == 0.0 {
            return b.clamp(0.0, 1.0);
        }
        // a > 0: units below lo clamp to 0, at or above hi clamp to 1.
        let lo = self.sorted.partition_point(|&e| a * e + b <= 0.0);
        let hi = self.sorted.partition_point(|&e| a * e + b < 1.0);
        let middle = a * (self.prefix[hi] - self.prefix[lo]) + b * (hi - lo) as f64;
        (middle + (n - hi) as f64) / n as f64
    }

    fn offset(&self, a: f64) -> f64 {
        if a == 0.0 {
            return 0.5;
        }
        let (mut lo, mut hi) = (-a * self.sorted[self.sorted.len() - 1], 1.0 - a * self.sorted[0]);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.mean(a, mid) < 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Bisection for the scale `a` at which `effect(a)` reaches `target`.
fn bisect_scale(effect: impl Fn(f64) -> f64, target: f64) -> Result<(f64, usize)> {
    let mut hi = 1e-3;
    let mut grow = 0;
    while effect(hi) < target {
        hi *= 2.0;
        grow += 1;
        if grow > BISECTION_STEPS {
            return Err(Error::Calibration(format!(
                "target effect {:.3} pp not reachable; largest effect {:.3} pp at a = {hi:e}",
                100.0 * target,
                100.0 * effect(hi)
            )));
        }
    }
    let mut lo = 0.0;
    let mut steps = 0;
    while steps < BISECTION_STEPS {
        steps += 1;
        let mid = 0.5 * (lo + hi);
        let v = effect(mid);
        if (v - target).abs() < 1e-6 {
            return Ok((mid, steps));
        }
        if v < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = 0.5 * (lo + hi);
    let v = effect(a);
    if (v - target).abs() < 0.005 {
        Ok((a, steps))
    } else {
        Err(Error::Calibration(format!(
            "bisection stopped after {steps} steps at a = {a:e} with effect {:.3} pp (target {:.3})",
            100.0 * v,
            100.0 * target
        )))
    }
}

/// A fresh generator for replicate data of scenario `kind` at size `n`.
/// Both variants of the first study draw identical covariates and arms.
pub fn replicate_rng(seed: u64, kind: ScenarioKind, purpose: &str, n: usize, replicate: u64) -> ChaCha8Rng {
    stream_rng(seed, &format!("{}|{purpose}", kind.family()), n as u64, replicate)
}

/// Generates one first-study data set; see [`ScenarioParams::generate`].
pub fn gen_scenario_one(params: &ScenarioParams, n: usize, replicate: u64) -> Result<SimData> {
    if !params.kind.is_first_study() {
        return Err(Error::Simulation("parameters belong to the second study".into()));
    }
    let mut rng = replicate_rng(params.seed, params.kind, "data", n, replicate);
    params.generate(n, &mut rng)
}

/// Generates one second-study data set; see [`ScenarioParams::generate`].
pub fn gen_scenario_two(params: &ScenarioParams, n: usize, replicate: u64) -> Result<SimData> {
    if params.kind != ScenarioKind::Two {
        return Err(Error::Simulation("parameters belong to the first study".into()));
    }
    if n < 50 {
        return Err(Error::Simulation(format!("second study needs n >= 50, got {n}")));
    }
    let mut rng = replicate_rng(params.seed, params.kind, "data", n, replicate);
    params.generate(n, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_scale_gives_constant_probability() {
        let eta = [-3.0, 0.0, 2.0, 10.0];
        let bal = ProbabilityBalance::new(&eta);
        assert_eq!(bal.mean(0.0, 0.3), 0.3);
        assert_eq!(mean_shift(&eta, 0.0, 0.3, 7.5), 0.0);
    }

    #[test]
    fn balance_matches_direct_mean() {
        let eta: Vec<f64> = (0..101).map(|i| (i as f64 - 30.0) * 0.37).collect();
        let bal = ProbabilityBalance::new(&eta);
        for &(a, b) in &[(0.01, 0.4), (0.05, 0.2), (0.2, 0.9), (1.0, -3.0)] {
            let aff = Affine { a, b };
            let direct = eta.iter().map(|&e| aff.prob(e)).sum::<f64>() / eta.len() as f64;
            assert!((bal.mean(a, b) - direct).abs() < 1e-12);
        }
        let b = bal.offset(0.05);
        assert!((bal.mean(0.05, b) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn first_study_dimensions_and_balance() {
        let p = ScenarioParams::with_calibration_draws(ScenarioKind::OneCorrect, 3, 20_000).unwrap();
        let d = gen_scenario_one(&p, 5000, 0).unwrap();
        assert_eq!(d.design.l_z(), 49);
        assert_eq!(d.design.l_v(), 3);
        let counts = d.design.z.sum_axis(Axis(0));
        assert!(counts.iter().all(|&c| c == 100.0));
        assert!((p.calibration.realized[0] - 7.0).abs() < 0.01);
    }

    #[test]
    fn second_study_dimensions_and_dichotomies() {
        let p = ScenarioParams::with_calibration_draws(ScenarioKind::Two, 3, 20_000).unwrap();
        let d = gen_scenario_two(&p, 400, 0).unwrap();
        assert_eq!(d.design.l_z(), 21);
        assert_eq!(d.design.l_v(), 20);
        for c in &d.raw.covariates[..5] {
            assert!(c.values.iter().all(|&v| v == 0.0 || v == 1.0));
        }
        assert!((p.calibration.realized[0].abs() - 4.0).abs() < 0.01);
        assert_eq!(d.true_cate.len(), 400);
    }

    #[test]
    fn variants_share_parameters_but_not_processes() {
        let a = ScenarioParams::with_calibration_draws(ScenarioKind::OneCorrect, 9, 5000).unwrap();
        let b = ScenarioParams::with_calibration_draws(ScenarioKind::OneMisspecified, 9, 5000).unwrap();
        assert_eq!(a.u, b.u);
        assert_eq!(a.beta, b.beta);
        let da = gen_scenario_one(&a, 250, 1).unwrap();
        let db = gen_scenario_one(&b, 250, 1).unwrap();
        assert_eq!(da.design.z, db.design.z);
        assert_eq!(da.design.v, db.design.v);
        assert_eq!(
            da.design.z_meta.iter().map(|m| &m.name).collect::<Vec<_>>(),
            db.design.z_meta.iter().map(|m| &m.name).collect::<Vec<_>>()
        );
    }
}
