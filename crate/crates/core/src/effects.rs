//! Treatment effect estimates from a fitted model.
//!
//! For unit `i` and treatment `t`, `W_i(t)` is the margin with the unit's `Z`
//! row replaced by its counterfactual under `t` (indicator set for factorial
//! designs, interactions recomputed for interaction designs):
//!
//! * CTE  `= (sgn W(t) - sgn W(0)) / 2`, in `{-1, 0, 1}`;
//! * CATE `= (W*(t) - W*(0)) / 2` with `W*` the margin clamped to `[-1, 1]`;
//! * ATE  = weighted mean of the unit CATEs.
//!
//! All quantities are on the `[-1, 1]` probability-difference scale; output
//! tables multiply by 100 to report percentage points.

use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::design::{CausalDesign, TreatmentEncoding};
use crate::error::{Error, Result};
use crate::svm::{sign, SvmFit};

pub use crate::design::Treatment;

/// Header line stating the unit convention of effect tables.
pub const SCALE_NOTE: &str =
    "effects in percentage points: 100 * 0.5 * (clamp(W(t),-1,1) - clamp(W(control),-1,1)); W = mu + beta'Z + gamma'V";

pub fn truncate(w: f64) -> f64 {
    w.clamp(-1.0, 1.0)
}

pub fn cte_from_margins(w_t: f64, w_0: f64) -> f64 {
    0.5 * (sign(w_t) - sign(w_0))
}

pub fn cate_from_margins(w_t: f64, w_0: f64) -> f64 {
    0.5 * (truncate(w_t) - truncate(w_0))
}

pub fn counterfactual_margin(fit: &SvmFit, design: &CausalDesign, unit: usize, t: Treatment) -> Result<f64> {
    let z = design.counterfactual_z(unit, t)?;
    fit.predict_margin(z.view(), design.v.row(unit))
}

fn margin_pair(fit: &SvmFit, design: &CausalDesign, unit: usize, t: Treatment) -> Result<(f64, f64)> {
    if unit >= design.n() {
        return Err(Error::Dimension {
            expected: design.n(),
            got: unit,
        });
    }
    Ok((
        counterfactual_margin(fit, design, unit, t)?,
        counterfactual_margin(fit, design, unit, Treatment::Control)?,
    ))
}

pub fn cte(fit: &SvmFit, design: &CausalDesign, unit: usize, t: Treatment) -> Result<f64> {
    let (wt, w0) = margin_pair(fit, design, unit, t)?;
    Ok(cte_from_margins(wt, w0))
}

pub fn cate(fit: &SvmFit, design: &CausalDesign, unit: usize, t: Treatment) -> Result<f64> {
    let (wt, w0) = margin_pair(fit, design, unit, t)?;
    Ok(cate_from_margins(wt, w0))
}

/// CATE of `t` for every unit.
pub fn unit_cates(fit: &SvmFit, design: &CausalDesign, t: Treatment) -> Result<Array1<f64>> {
    (0..design.n()).map(|i| cate(fit, design, i, t)).collect()
}

/// Weighted mean CATE of `t` over the design's units.
pub fn ate(fit: &SvmFit, design: &CausalDesign, t: Treatment) -> Result<f64> {
    let c = unit_cates(fit, design, t)?;
    Ok(weighted_mean(&c, &design.weights))
}

fn weighted_mean(x: &Array1<f64>, w: &Array1<f64>) -> f64 {
    x.dot(w) / w.sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EffectEstimates {
    pub treatments: Vec<Treatment>,
    /// Units x treatments.
    pub per_unit_cate: Array2<f64>,
    pub per_unit_cte: Array2<f64>,
    pub per_treatment_ate: Vec<f64>,
}

pub fn estimate(fit: &SvmFit, design: &CausalDesign) -> Result<EffectEstimates> {
    let treatments = design.treatments();
    let n = design.n();
    let mut cates = Array2::zeros((n, treatments.len()));
    let mut ctes = Array2::zeros((n, treatments.len()));
    for i in 0..n {
        let w0 = counterfactual_margin(fit, design, i, Treatment::Control)?;
        for (k, &t) in treatments.iter().enumerate() {
            let wt = counterfactual_margin(fit, design, i, t)?;
            cates[[i, k]] = cate_from_margins(wt, w0);
            ctes[[i, k]] = cte_from_margins(wt, w0);
        }
    }
    let per_treatment_ate = (0..treatments.len())
        .map(|k| weighted_mean(&cates.column(k).to_owned(), &design.weights))
        .collect();
    Ok(EffectEstimates {
        treatments,
        per_unit_cate: cates,
        per_unit_cte: ctes,
        per_treatment_ate,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedTreatment {
    pub label: String,
    #[serde(skip)]
    pub treatment: Option<Treatment>,
    /// `None` for combinations that were never observed.
    pub ate: Option<f64>,
}

/// Treatments by ATE, descending; ties by label. Unobserved combinations follow,
/// flagged as not estimable.
pub fn rank_treatments(fit: &SvmFit, design: &CausalDesign) -> Result<Vec<RankedTreatment>> {
    let est = estimate(fit, design)?;
    let mut rows: Vec<RankedTreatment> = est
        .treatments
        .iter()
        .zip(&est.per_treatment_ate)
        .map(|(&t, &a)| RankedTreatment {
            label: design.treatment_label(t),
            treatment: Some(t),
            ate: Some(a),
        })
        .collect();
    rows.sort_by(|a, b| {
        b.ate
            .partial_cmp(&a.ate)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.label.cmp(&b.label))
    });
    if let TreatmentEncoding::Factorial(enc) = &design.encoding {
        let mut missing: Vec<RankedTreatment> = enc
            .unobserved_combinations(100_000)
            .iter()
            .map(|c| RankedTreatment {
                label: enc.label_of(c),
                treatment: None,
                ate: None,
            })
            .collect();
        missing.sort_by(|a, b| a.label.cmp(&b.label));
        rows.extend(missing);
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupMember {
    pub unit: usize,
    pub cate: f64,
    /// Raw covariate values of the unit.
    pub profile: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupExtremes {
    pub highest: Vec<GroupMember>,
    pub lowest: Vec<GroupMember>,
}

/// The `k` units with the highest and the `k` with the lowest CATE of `t`.
///
/// Units are ordered by CATE descending with ties by row index; the highest
/// group is the head of that order and the lowest group its tail.
pub fn group_extremes(fit: &SvmFit, design: &CausalDesign, t: Treatment, k: usize) -> Result<GroupExtremes> {
    let c = unit_cates(fit, design, t)?;
    Ok(extremes_from_cates(&c, design, k))
}

pub fn extremes_from_cates(cates: &Array1<f64>, design: &CausalDesign, k: usize) -> GroupExtremes {
    let n = cates.len();
    let k = k.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        cates[b]
            .partial_cmp(&cates[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let member = |i: usize| GroupMember {
        unit: i,
        cate: cates[i],
        profile: design.covariates.row(i).to_vec(),
    };
    GroupExtremes {
        highest: order[..k].iter().map(|&i| member(i)).collect(),
        lowest: order[n - k..].iter().map(|&i| member(i)).collect(),
    }
}
