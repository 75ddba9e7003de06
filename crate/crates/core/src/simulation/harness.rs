//! Replicate scheduling, aggregation and the output bundle.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::design::{CausalDesign, Treatment, TreatmentEncoding};
use crate::effects::unit_cates;
use crate::error::{Error, Result};
use crate::output::{write_csv, write_json};
use crate::simulation::metrics::{fdr_dr, payoff_record, treatment_curve, CurvePoint, DiscoveryMode, PayoffRecord};
use crate::simulation::scenario::{replicate_rng, ScenarioKind, ScenarioParams, ARMS};
use crate::svm::SvmFit;
use crate::tuning::{search, SearchSettings};

#[derive(Clone, Debug)]
pub struct MonteCarloConfig {
    pub scenarios: Vec<ScenarioKind>,
    pub sizes: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    /// Size of each independent evaluation sample (second study).
    pub eval_n: usize,
    /// Cap on treated units; `None` treats every positive estimate.
    pub budget: Option<usize>,
    pub jobs: usize,
    pub calibration_draws: usize,
    pub search: SearchSettings,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            scenarios: vec![
                ScenarioKind::OneCorrect,
                ScenarioKind::OneMisspecified,
                ScenarioKind::Two,
            ],
            sizes: vec![250, 500, 1000, 5000],
            replicates: 100,
            seed: 1,
            eval_n: 2000,
            budget: None,
            jobs: 1,
            calibration_draws: super::CALIBRATION_DRAWS,
            search: SearchSettings::default(),
        }
    }
}

#[derive(Serialize)]
struct ConfigView<'a> {
    scenarios: Vec<&'static str>,
    sizes: &'a [usize],
    replicates: usize,
    seed: u64,
    eval_n: usize,
    budget: Option<usize>,
    calibration_draws: usize,
    grid: &'a [f64],
    precision: f64,
    max_rounds: usize,
    max_outer: usize,
    outer_tol: f64,
    lasso_tol: f64,
    lasso_kkt_tol: f64,
    lasso_max_passes: usize,
}

impl MonteCarloConfig {
    fn view(&self) -> ConfigView<'_> {
        ConfigView {
            scenarios: self.scenarios.iter().map(|k| k.tag()).collect(),
            sizes: &self.sizes,
            replicates: self.replicates,
            seed: self.seed,
            eval_n: self.eval_n,
            budget: self.budget,
            calibration_draws: self.calibration_draws,
            grid: &self.search.grid,
            precision: self.search.precision,
            max_rounds: self.search.max_rounds,
            max_outer: self.search.svm.max_outer,
            outer_tol: self.search.svm.tol,
            lasso_tol: self.search.svm.lasso.tol,
            lasso_kkt_tol: self.search.svm.lasso.kkt_tol,
            lasso_max_passes: self.search.svm.lasso.max_passes,
        }
    }

    /// SHA-256 of the canonical JSON form of every result-affecting setting.
    /// The worker count is excluded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&self.view()).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(Error::Config(
                "sizes must be a nonempty list of positive integers".into(),
            ));
        }
        if self.scenarios.is_empty() {
            return Err(Error::Config("no scenario selected".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if self.scenarios.contains(&ScenarioKind::Two) && self.eval_n == 0 {
            return Err(Error::Config("eval_n must be positive".into()));
        }
        Ok(())
    }
}

/// Result of one replicate.
#[derive(Clone, Debug, Serialize)]
pub struct ReplicateRecord {
    pub scenario: ScenarioKind,
    pub n: usize,
    pub replicate: usize,
    pub log_lambda_z: f64,
    pub log_lambda_v: f64,
    pub gcv: f64,
    pub nonzero: usize,
    /// First study: estimated effect of arms `1..=49`, zero when unobserved.
    pub coefficients: Vec<f64>,
    pub payoff: Option<PayoffRecord>,
    #[serde(skip)]
    pub curve: Vec<CurvePoint>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FdrDrRow {
    pub scenario: String,
    pub n: usize,
    pub mode: String,
    #[serde(rename = "FDR")]
    pub fdr: String,
    #[serde(rename = "DR")]
    pub dr: f64,
    pub replicates_used: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PayoffRow {
    pub method: String,
    pub n: usize,
    pub payoff_pct: String,
    pub replicates_used: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveRow {
    pub n: usize,
    pub percentile: u32,
    pub benefit: f64,
    pub harm: f64,
    pub net: f64,
}

#[derive(Clone, Debug, Serialize)]
struct FailureCount {
    scenario: &'static str,
    n: usize,
    failed: usize,
    replicates: usize,
}

#[derive(Clone, Debug, Serialize)]
struct ScenarioSummary {
    scenario: &'static str,
    affine: crate::simulation::Affine,
    calibration: crate::simulation::CalibrationReport,
    leading_true_effects_pp: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SimOutcome {
    pub config: MonteCarloConfig,
    pub params: Vec<ScenarioParams>,
    /// Ordered by scenario, then size, then replicate index.
    pub records: Vec<ReplicateRecord>,
    pub fdr_dr: Vec<FdrDrRow>,
    pub payoff: Vec<PayoffRow>,
    pub curves: Vec<CurveRow>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

impl SimOutcome {
    /// `(scenario, n, failed, total)` per cell.
    pub fn failure_counts(&self) -> Vec<(ScenarioKind, usize, usize, usize)> {
        let mut map: BTreeMap<(ScenarioKind, usize), (usize, usize)> = BTreeMap::new();
        for r in &self.records {
            let e = map.entry((r.scenario, r.n)).or_default();
            e.0 += r.error.is_some() as usize;
            e.1 += 1;
        }
        map.into_iter().map(|((k, n), (f, t))| (k, n, f, t)).collect()
    }

    /// Largest failed share over all (scenario, n) cells.
    pub fn worst_failure_rate(&self) -> f64 {
        self.failure_counts()
            .iter()
            .map(|&(_, _, f, t)| f as f64 / t as f64)
            .fold(0.0, f64::max)
    }

    fn manifest(&self) -> serde_json::Value {
        let failures: Vec<FailureCount> = self
            .failure_counts()
            .into_iter()
            .map(|(k, n, failed, replicates)| FailureCount {
                scenario: k.tag(),
                n,
                failed,
                replicates,
            })
            .collect();
        let scenarios: Vec<ScenarioSummary> = self
            .params
            .iter()
            .map(|p| ScenarioSummary {
                scenario: p.kind.tag(),
                affine: p.affine,
                calibration: p.calibration.clone(),
                leading_true_effects_pp: p.true_ate.iter().take(3).map(|v| 100.0 * v).collect(),
            })
            .collect();
        let errors: Vec<_> = self
            .records
            .iter()
            .filter_map(|r| {
                r.error.as_ref().map(|e| {
                    serde_json::json!({"scenario": r.scenario.tag(), "n": r.n, "replicate": r.replicate, "error": e})
                })
            })
            .collect();
        serde_json::json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": "simulate",
            "seed": self.config.seed,
            "seed_scheme": "ChaCha8 keyed by sha256(seed, purpose, n); stream = replicate index",
            "config": self.config.view(),
            "config_hash": self.config.hash(),
            "scenarios": scenarios,
            "failures": failures,
            "replicate_errors": errors,
        })
    }

    /// Writes `fdr_dr.csv`, `payoff.csv`, `curves.csv`, `payoff_replicates.csv`
    /// and `manifest.json` into `dir`.
    pub fn write_bundle(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        if !self.fdr_dr.is_empty() {
            write_csv(&dir.join("fdr_dr.csv"), &[], &self.fdr_dr)?;
        }
        if !self.payoff.is_empty() {
            write_csv(
                &dir.join("payoff.csv"),
                &["payoff as a percentage of the oracle payoff on the same evaluation sample"],
                &self.payoff,
            )?;
            write_csv(
                &dir.join("curves.csv"),
                &["proportions of the evaluation sample treated and helped (benefit) or harmed (harm)"],
                &self.curves,
            )?;
            #[derive(Serialize)]
            struct Row {
                n: usize,
                replicate: usize,
                svm: String,
                oracle: String,
                treat_everyone: String,
                treat_nobody: String,
            }
            let rows: Vec<Row> = self
                .records
                .iter()
                .filter_map(|r| {
                    r.payoff.map(|p| Row {
                        n: r.n,
                        replicate: r.replicate,
                        svm: fmt_opt(p.svm),
                        oracle: fmt_opt(p.oracle),
                        treat_everyone: fmt_opt(p.treat_everyone),
                        treat_nobody: fmt_opt(p.treat_nobody),
                    })
                })
                .collect();
            write_csv(&dir.join("payoff_replicates.csv"), &[], &rows)?;
        }
        write_json(&dir.join("manifest.json"), &self.manifest())
    }
}

/// Estimated effect of arms `1..=49`, zero for arms without a column.
fn arm_coefficients(fit: &SvmFit, design: &CausalDesign) -> Vec<f64> {
    let TreatmentEncoding::Factorial(enc) = &design.encoding else {
        return vec![];
    };
    (1..ARMS)
        .map(|arm| match enc.lookup(&[&arm.to_string()]) {
            Ok(Some(j)) => fit.beta[j],
            _ => 0.0,
        })
        .collect()
}

/// Payoff of a fitted model on a fresh evaluation sample of size `eval_n`.
pub fn payoff_eval(
    fit: &SvmFit,
    design: &CausalDesign,
    params: &ScenarioParams,
    budget: Option<usize>,
    eval_n: usize,
    rng: &mut impl rand::Rng,
) -> Result<(PayoffRecord, Vec<CurvePoint>)> {
    if params.kind != ScenarioKind::Two {
        return Err(Error::Simulation("payoff is defined for the second study".into()));
    }
    let eval = params.generate(eval_n, rng)?;
    let projected = design.project(&eval.raw)?;
    let tau_hat = unit_cates(fit, &projected, Treatment::Treated)?.to_vec();
    Ok((
        payoff_record(&tau_hat, &eval.true_cate, budget),
        treatment_curve(&tau_hat, &eval.true_cate),
    ))
}

fn run_replicate(cfg: &MonteCarloConfig, params: &ScenarioParams, n: usize, r: usize) -> ReplicateRecord {
    let mut rec = ReplicateRecord {
        scenario: params.kind,
        n,
        replicate: r,
        log_lambda_z: f64::NAN,
        log_lambda_v: f64::NAN,
        gcv: f64::NAN,
        nonzero: 0,
        coefficients: vec![],
        payoff: None,
        curve: vec![],
        error: None,
    };
    let outcome = (|| -> Result<()> {
        let mut rng = replicate_rng(params.seed, params.kind, "data", n, r as u64);
        let data = params.generate(n, &mut rng)?;
        let best = search(&data.design, &cfg.search)?.best;
        rec.log_lambda_z = best.log_lambda_z;
        rec.log_lambda_v = best.log_lambda_v;
        rec.gcv = best.gcv;
        rec.nonzero = best.nonzero;
        if params.kind.is_first_study() {
            rec.coefficients = arm_coefficients(&best.fit, &data.design);
        } else {
            let mut erng = replicate_rng(params.seed, params.kind, "eval", n, r as u64);
            let (p, c) = payoff_eval(&best.fit, &data.design, params, cfg.budget, cfg.eval_n, &mut erng)?;
            rec.payoff = Some(p);
            rec.curve = c;
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        rec.error = Some(e.to_string());
    }
    rec
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> (Option<f64>, usize) {
    let (sum, count) = values.flatten().fold((0.0, 0), |(s, c), v| (s + v, c + 1));
    ((count > 0).then(|| sum / count as f64), count)
}

/// Runs every (scenario, size, replicate) job and aggregates the results.
pub fn run_monte_carlo(cfg: &MonteCarloConfig) -> Result<SimOutcome> {
    cfg.validate()?;
    let mut kinds = cfg.scenarios.clone();
    kinds.sort();
    kinds.dedup();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Simulation(format!("thread pool: {e}")))?;
    pool.install(|| {
        let params: Vec<ScenarioParams> = kinds
            .par_iter()
            .map(|&k| ScenarioParams::with_calibration_draws(k, cfg.seed, cfg.calibration_draws))
            .collect::<Result<_>>()?;
        let mut jobs = Vec::new();
        for (p, _) in params.iter().zip(&kinds) {
            for &n in &cfg.sizes {
                for r in 0..cfg.replicates {
                    jobs.push((p, n, r));
                }
            }
        }
        let records: Vec<ReplicateRecord> = jobs.par_iter().map(|&(p, n, r)| run_replicate(cfg, p, n, r)).collect();
        Ok(aggregate(cfg.clone(), params, records))
    })
}

fn aggregate(config: MonteCarloConfig, params: Vec<ScenarioParams>, records: Vec<ReplicateRecord>) -> SimOutcome {
    let mut fdr_rows = Vec::new();
    let mut payoff_rows = Vec::new();
    let mut curve_rows = Vec::new();
    for p in &params {
        for &n in &config.sizes {
            let cell: Vec<&ReplicateRecord> = records
                .iter()
                .filter(|r| r.scenario == p.kind && r.n == n && r.error.is_none())
                .collect();
            if p.kind.is_first_study() {
                let estimates: Vec<Vec<f64>> = cell.iter().map(|r| r.coefficients.clone()).collect();
                for mode in [DiscoveryMode::Largest, DiscoveryMode::TopK(3)] {
                    if let Ok(m) = fdr_dr(&estimates, &p.true_ate, mode) {
                        fdr_rows.push(FdrDrRow {
                            scenario: p.kind.tag().into(),
                            n,
                            mode: mode.label(),
                            fdr: fmt_opt(m.fdr),
                            dr: m.dr,
                            replicates_used: m.replicates,
                        });
                    }
                }
            } else {
                let payoffs: Vec<PayoffRecord> = cell.iter().filter_map(|r| r.payoff).collect();
                let methods: [(&str, fn(&PayoffRecord) -> Option<f64>); 4] = [
                    ("svm", |p| p.svm),
                    ("oracle", |p| p.oracle),
                    ("treat_everyone", |p| p.treat_everyone),
                    ("treat_nobody", |p| p.treat_nobody),
                ];
                for (name, get) in methods {
                    let (mean, used) = mean_defined(payoffs.iter().map(get));
                    payoff_rows.push(PayoffRow {
                        method: name.into(),
                        n,
                        payoff_pct: fmt_opt(mean),
                        replicates_used: used,
                    });
                }
                let curves: Vec<&Vec<CurvePoint>> = cell.iter().map(|r| &r.curve).filter(|c| !c.is_empty()).collect();
                if !curves.is_empty() {
                    let m = curves.len() as f64;
                    for k in 0..100 {
                        let (mut b, mut h) = (0.0, 0.0);
                        for c in &curves {
                            b += c[k].benefit;
                            h += c[k].harm;
                        }
                        curve_rows.push(CurveRow {
                            n,
                            percentile: curves[0][k].percentile,
                            benefit: b / m,
                            harm: h / m,
                            net: (b - h) / m,
                        });
                    }
                }
            }
        }
    }
    SimOutcome {
        config,
        params,
        records,
        fdr_dr: fdr_rows,
        payoff: payoff_rows,
        curves: curve_rows,
    }
}
