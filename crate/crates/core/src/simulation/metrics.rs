//! Replicate-level metrics: discovery rates and budget-constrained payoff.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum DiscoveryMode {
    /// The largest true effect is estimated nonzero, with the correct sign, and
    /// as the largest estimate in absolute value.
    Largest,
    /// Each of the `k` largest true effects is estimated nonzero with the
    /// correct sign.
    TopK(usize),
}

impl DiscoveryMode {
    pub fn label(self) -> String {
        match self {
            DiscoveryMode::Largest => "largest".into(),
            DiscoveryMode::TopK(k) => format!("top-{k}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FdrDr {
    /// `None` when no replicate estimated any nonzero effect.
    pub fdr: Option<f64>,
    pub dr: f64,
    pub replicates: usize,
    /// Replicates with at least one nonzero estimate.
    pub qualifying: usize,
}

fn top_indices(truth: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..truth.len()).collect();
    idx.sort_by(|&a, &b| {
        truth[b]
            .abs()
            .partial_cmp(&truth[a].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

/// Whether `estimate` discovers `truth` under `mode`.
pub fn discovers(estimate: &[f64], truth: &[f64], mode: DiscoveryMode) -> bool {
    let right_sign = |j: usize| estimate[j] != 0.0 && estimate[j].signum() == truth[j].signum();
    match mode {
        DiscoveryMode::Largest => {
            let j = top_indices(truth, 1)[0];
            right_sign(j) && estimate.iter().all(|e| e.abs() <= estimate[j].abs())
        }
        DiscoveryMode::TopK(k) => top_indices(truth, k).into_iter().all(right_sign),
    }
}

/// Discovery rate and false discovery rate over replicate estimates.
pub fn fdr_dr(estimates: &[Vec<f64>], truth: &[f64], mode: DiscoveryMode) -> Result<FdrDr> {
    if truth.is_empty() {
        return Err(Error::Simulation("no true effects supplied".into()));
    }
    if let DiscoveryMode::TopK(k) = mode {
        if k == 0 || k > truth.len() {
            return Err(Error::Config(format!("top-k needs 1 <= k <= {}", truth.len())));
        }
    }
    let mut discoveries = 0;
    let mut qualifying = 0;
    let mut false_discoveries = 0;
    for e in estimates {
        if e.len() != truth.len() {
            return Err(Error::Dimension {
                expected: truth.len(),
                got: e.len(),
            });
        }
        let hit = discovers(e, truth, mode);
        let any = e.iter().any(|&v| v != 0.0);
        discoveries += hit as usize;
        if any {
            qualifying += 1;
            false_discoveries += (!hit) as usize;
        }
    }
    let r = estimates.len();
    Ok(FdrDr {
        fdr: (qualifying > 0).then(|| false_discoveries as f64 / qualifying as f64),
        dr: if r == 0 { 0.0 } else { discoveries as f64 / r as f64 },
        replicates: r,
        qualifying,
    })
}

/// Units treated by the plug-in rule: descending `tau_hat` among positive
/// estimates, ties by index, at most `budget` units.
pub fn plug_in_rule(tau_hat: &[f64], budget: Option<usize>) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..tau_hat.len()).filter(|&i| tau_hat[i] > 0.0).collect();
    idx.sort_by(|&a, &b| {
        tau_hat[b]
            .partial_cmp(&tau_hat[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    if let Some(b) = budget {
        idx.truncate(b);
    }
    let mut treated = vec![false; tau_hat.len()];
    for i in idx {
        treated[i] = true;
    }
    treated
}

/// Treats exactly the units whose true effect is positive.
pub fn oracle_rule(tau: &[f64]) -> Vec<bool> {
    tau.iter().map(|&t| t > 0.0).collect()
}

/// `+0.5` per treated unit that is helped, `-0.5` per treated unit that is harmed.
pub fn payoff_score(treated: &[bool], tau: &[f64]) -> f64 {
    treated
        .iter()
        .zip(tau)
        .filter(|(&t, _)| t)
        .map(|(_, &v)| {
            if v > 0.0 {
                0.5
            } else if v < 0.0 {
                -0.5
            } else {
                0.0
            }
        })
        .sum()
}

/// Payoff as a percentage of the oracle payoff; `None` when nobody can be helped.
pub fn payoff_pct(treated: &[bool], tau: &[f64]) -> Option<f64> {
    let oracle = payoff_score(&oracle_rule(tau), tau);
    (oracle > 0.0).then(|| 100.0 * payoff_score(treated, tau) / oracle)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PayoffRecord {
    pub svm: Option<f64>,
    pub oracle: Option<f64>,
    pub treat_everyone: Option<f64>,
    pub treat_nobody: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub percentile: u32,
    /// Share of the evaluation sample that is treated and helped.
    pub benefit: f64,
    /// Share of the evaluation sample that is treated and harmed.
    pub harm: f64,
    pub net: f64,
}

/// Payoff of the plug-in rule and the three baselines.
pub fn payoff_record(tau_hat: &[f64], tau: &[f64], budget: Option<usize>) -> PayoffRecord {
    let n = tau.len();
    PayoffRecord {
        svm: payoff_pct(&plug_in_rule(tau_hat, budget), tau),
        oracle: payoff_pct(&oracle_rule(tau), tau),
        treat_everyone: payoff_pct(&vec![true; n], tau),
        treat_nobody: payoff_pct(&vec![false; n], tau),
    }
}

/// Benefit and harm when the top `p` percent of units by `tau_hat` are offered
/// treatment, for `p = 1..=100`.
pub fn treatment_curve(tau_hat: &[f64], tau: &[f64]) -> Vec<CurvePoint> {
    let n = tau.len();
    let mut order: Vec<usize> = (0..tau_hat.len()).filter(|&i| tau_hat[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        tau_hat[b]
            .partial_cmp(&tau_hat[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut helped = vec![0usize; order.len() + 1];
    let mut harmed = vec![0usize; order.len() + 1];
    for (k, &i) in order.iter().enumerate() {
        helped[k + 1] = helped[k] + (tau[i] > 0.0) as usize;
        harmed[k + 1] = harmed[k] + (tau[i] < 0.0) as usize;
    }
    (1..=100u32)
        .map(|p| {
            let budget = (p as usize * n).div_ceil(100).min(order.len());
            let benefit = helped[budget] as f64 / n as f64;
            let harm = harmed[budget] as f64 / n as f64;
            CurvePoint {
                percentile: p,
                benefit,
                harm,
                net: benefit - harm,
            }
        })
        .collect()
}
