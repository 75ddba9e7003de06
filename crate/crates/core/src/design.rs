//! Construction of the causal design: outcome recoding, treatment encodings,
//! standardized pre-treatment columns and mean-one weights.
//!
//! Two encodings of the causal-heterogeneity block `Z` are supported:
//!
//! * **factorial**: one `{0,1}` indicator per observed non-baseline
//!   combination of the treatment factors; control rows are all zero.
//! * **interaction**: a single binary treatment `T` followed by `T * v_j` for
//!   every selected standardized pre-treatment column `v_j`.
//!
//! Main effects in `V` are centered and divided by the population standard
//! deviation. Squares and pairwise products are computed from the standardized
//! mains and are not standardized again.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance under which a column is treated as constant.
const ZERO_VARIANCE_TOL: f64 = 1e-10;

/// A categorical treatment factor, one level label per unit.
#[derive(Clone, Debug, PartialEq)]
pub struct Factor {
    pub name: String,
    pub levels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NumericColumn {
    pub name: String,
    pub values: Vec<f64>,
}

impl NumericColumn {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }
}

impl Factor {
    pub fn new(name: impl Into<String>, levels: Vec<String>) -> Self {
        Self {
            name: name.into(),
            levels,
        }
    }

    /// Binary factor from a `{0,1}` vector, labelled `"0"`/`"1"`.
    pub fn binary(name: impl Into<String>, values: &[f64]) -> Self {
        Self::new(
            name,
            values
                .iter()
                .map(|&v| if v > 0.5 { "1" } else { "0" }.to_string())
                .collect(),
        )
    }
}

/// Unprocessed experimental data.
#[derive(Clone, Debug, Default)]
pub struct RawDataset {
    /// Binary outcome in `{0, 1}`.
    pub outcome: Vec<f64>,
    pub treatments: Vec<Factor>,
    pub covariates: Vec<NumericColumn>,
    pub weights: Option<Vec<f64>>,
}

impl RawDataset {
    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::Data("dataset has no rows".into()));
        }
        for (i, &y) in self.outcome.iter().enumerate() {
            if y != 0.0 && y != 1.0 {
                return Err(Error::Data(format!(
                    "outcome must be 0 or 1, found {y} in row {}",
                    i + 1
                )));
            }
        }
        if self.treatments.is_empty() {
            return Err(Error::Config("at least one treatment column is required".into()));
        }
        for f in &self.treatments {
            if f.levels.len() != n {
                return Err(Error::Data(format!(
                    "treatment column '{}' has {} rows, expected {n}",
                    f.name,
                    f.levels.len()
                )));
            }
        }
        for c in &self.covariates {
            if c.values.len() != n {
                return Err(Error::Data(format!(
                    "covariate '{}' has {} rows, expected {n}",
                    c.name,
                    c.values.len()
                )));
            }
            if let Some(i) = c.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "covariate '{}' is not finite in row {}",
                    c.name,
                    i + 1
                )));
            }
        }
        if let Some(w) = &self.weights {
            if w.len() != n {
                return Err(Error::Data(format!("weights have {} rows, expected {n}", w.len())));
            }
        }
        Ok(())
    }
}

/// A term computed from standardized main effects.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DerivedTerm {
    Square(String),
    Interact(String, String),
}

impl DerivedTerm {
    /// Parses `square:<col>` or `interact:<col>:<col>`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').map(str::trim).collect();
        match parts.as_slice() {
            ["square", a] if !a.is_empty() => Ok(DerivedTerm::Square(a.to_string())),
            ["interact", a, b] if !a.is_empty() && !b.is_empty() => {
                Ok(DerivedTerm::Interact(a.to_string(), b.to_string()))
            }
            _ => Err(Error::Config(format!(
                "cannot parse derived term '{s}' (expected square:<col> or interact:<col>:<col>)"
            ))),
        }
    }

    pub fn name(&self) -> String {
        match self {
            DerivedTerm::Square(a) => format!("{a}^2"),
            DerivedTerm::Interact(a, b) => format!("{a}:{b}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    TreatmentIndicator,
    TreatmentInteraction,
    MainEffect,
    DerivedTerm,
}

/// Centering and scaling applied to one raw covariate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    /// Index into [`RawDataset::covariates`].
    pub covariate: usize,
    pub center: f64,
    pub scale: f64,
}

impl Standardization {
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.center) / self.scale
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.scale + self.center
    }
}

/// How a design column is computed from raw data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnSource {
    /// Indicator of factorial combination `index`.
    Combination {
        index: usize,
    },
    /// The binary treatment itself.
    Treatment,
    /// Treatment times column `v_column` of `V`.
    Interaction {
        v_column: usize,
    },
    Main(Standardization),
    Square(Standardization),
    Product(Standardization, Standardization),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
    pub source: ColumnSource,
}

/// Standardized pre-treatment block.
#[derive(Clone, Debug)]
pub struct Standardized {
    pub values: Array2<f64>,
    pub columns: Vec<ColumnMeta>,
    pub diagnostics: Vec<String>,
}

/// Mean and population standard deviation.
pub fn mean_sd(x: ArrayView1<f64>) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn is_constant(x: ArrayView1<f64>) -> bool {
    let (mean, sd) = mean_sd(x);
    sd <= ZERO_VARIANCE_TOL * mean.abs().max(1.0)
}

/// Standardizes main effects and computes derived terms from the standardized mains.
///
/// Constant mains and constant or duplicated derived columns are dropped with a
/// diagnostic. Derived terms referencing a dropped main are dropped as well.
pub fn standardize(mains: &[NumericColumn], derived: &[DerivedTerm]) -> Result<Standardized> {
    standardize_rows(mains.first().map_or(0, |c| c.values.len()), mains, derived)
}

/// [`standardize`] with an explicit row count, for designs without covariates.
pub fn standardize_rows(n: usize, mains: &[NumericColumn], derived: &[DerivedTerm]) -> Result<Standardized> {
    let mut diagnostics = Vec::new();
    let mut cols: Vec<Array1<f64>> = Vec::new();
    let mut meta: Vec<ColumnMeta> = Vec::new();
    let mut by_name: HashMap<&str, Standardization> = HashMap::new();

    for (k, c) in mains.iter().enumerate() {
        if c.values.len() != n {
            return Err(Error::Data(format!("covariate '{}' has inconsistent length", c.name)));
        }
        if let Some(i) = c.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "covariate '{}' is not finite in row {}",
                c.name,
                i + 1
            )));
        }
        let x = ArrayView1::from(&c.values[..]);
        if is_constant(x) {
            diagnostics.push(format!("dropped constant covariate '{}'", c.name));
            continue;
        }
        let (center, scale) = mean_sd(x);
        let s = Standardization {
            covariate: k,
            center,
            scale,
        };
        cols.push(x.mapv(|v| s.apply(v)));
        meta.push(ColumnMeta {
            name: c.name.clone(),
            kind: ColumnKind::MainEffect,
            source: ColumnSource::Main(s),
        });
        by_name.insert(c.name.as_str(), s);
    }

    let known: Vec<&str> = mains.iter().map(|c| c.name.as_str()).collect();
    for term in derived {
        let lookup = |name: &str| -> Result<Option<Standardization>> {
            if !known.contains(&name) {
                return Err(Error::Config(format!(
                    "derived term '{}' references unknown covariate '{name}'",
                    term.name()
                )));
            }
            Ok(by_name.get(name).copied())
        };
        let (source, col) = match term {
            DerivedTerm::Square(a) => match lookup(a)? {
                Some(sa) => {
                    let x = standardized_values(&mains[sa.covariate], &sa);
                    (ColumnSource::Square(sa), x.mapv(|v| v * v))
                }
                None => {
                    diagnostics.push(format!("dropped '{}': base covariate was dropped", term.name()));
                    continue;
                }
            },
            DerivedTerm::Interact(a, b) => match (lookup(a)?, lookup(b)?) {
                (Some(sa), Some(sb)) => {
                    let xa = standardized_values(&mains[sa.covariate], &sa);
                    let xb = standardized_values(&mains[sb.covariate], &sb);
                    (ColumnSource::Product(sa, sb), xa * xb)
                }
                _ => {
                    diagnostics.push(format!("dropped '{}': base covariate was dropped", term.name()));
                    continue;
                }
            },
        };
        cols.push(col);
        meta.push(ColumnMeta {
            name: term.name(),
            kind: ColumnKind::DerivedTerm,
            source,
        });
    }

    let (values, columns, mut dropped) = assemble_dropping_degenerate(n, cols, meta);
    diagnostics.append(&mut dropped);
    Ok(Standardized {
        values,
        columns,
        diagnostics,
    })
}

fn standardized_values(c: &NumericColumn, s: &Standardization) -> Array1<f64> {
    c.values.iter().map(|&v| s.apply(v)).collect()
}

/// Stacks columns, dropping constant columns and exact duplicates of earlier ones.
fn assemble_dropping_degenerate(
    n: usize,
    cols: Vec<Array1<f64>>,
    meta: Vec<ColumnMeta>,
) -> (Array2<f64>, Vec<ColumnMeta>, Vec<String>) {
    let mut keep_cols: Vec<Array1<f64>> = Vec::new();
    let mut keep_meta: Vec<ColumnMeta> = Vec::new();
    let mut diagnostics = Vec::new();
    for (c, m) in cols.into_iter().zip(meta) {
        if is_constant(c.view()) {
            diagnostics.push(format!("dropped constant column '{}'", m.name));
            continue;
        }
        if let Some(dup) = keep_cols.iter().position(|k| k == &c) {
            diagnostics.push(format!(
                "dropped column '{}': duplicate of '{}'",
                m.name, keep_meta[dup].name
            ));
            continue;
        }
        keep_cols.push(c);
        keep_meta.push(m);
    }
    let mut values = Array2::zeros((n, keep_cols.len()));
    for (j, c) in keep_cols.iter().enumerate() {
        values.column_mut(j).assign(c);
    }
    (values, keep_meta, diagnostics)
}

/// Rescales positive weights to mean one; `None` yields all ones.
pub fn normalize_weights(w: Option<&[f64]>, n: usize) -> Result<Array1<f64>> {
    match w {
        None => Ok(Array1::ones(n)),
        Some(w) => {
            if w.len() != n {
                return Err(Error::Data(format!("weights have {} rows, expected {n}", w.len())));
            }
            if let Some(i) = w.iter().position(|&v| !(v.is_finite() && v > 0.0)) {
                return Err(Error::Data(format!(
                    "weights must be positive and finite, found {} in row {}",
                    w[i],
                    i + 1
                )));
            }
            let total: f64 = w.iter().sum();
            let scale = n as f64 / total;
            Ok(w.iter().map(|&v| v * scale).collect())
        }
    }
}

/// Orders level labels numerically when every label parses as a number.
fn sort_levels(levels: &mut [String]) {
    let numeric: Option<Vec<f64>> = levels.iter().map(|l| l.trim().parse::<f64>().ok()).collect();
    if numeric.is_some() {
        levels.sort_by(|a, b| {
            let x: f64 = a.trim().parse().unwrap();
            let y: f64 = b.trim().parse().unwrap();
            x.partial_cmp(&y).unwrap_or(Ordering::Equal).then_with(|| a.cmp(b))
        });
    } else {
        levels.sort();
    }
}

/// Factorial treatment encoding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorialEncoding {
    pub factor_names: Vec<String>,
    /// Sorted levels per factor.
    pub levels: Vec<Vec<String>>,
    /// Baseline level index per factor.
    pub baseline: Vec<usize>,
    /// Observed non-baseline combinations (level indices), in column order.
    pub combinations: Vec<Vec<usize>>,
    /// Combination column per unit; `None` for control units.
    pub unit_combination: Vec<Option<usize>>,
}

impl FactorialEncoding {
    pub fn label_of(&self, combo: &[usize]) -> String {
        self.factor_names
            .iter()
            .zip(combo)
            .zip(&self.levels)
            .map(|((name, &l), levels)| format!("{name}={}", levels[l]))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn label(&self, index: usize) -> String {
        self.label_of(&self.combinations[index])
    }

    pub fn control_label(&self) -> String {
        self.label_of(&self.baseline)
    }

    /// Locates the combination column of a tuple of level labels.
    pub fn lookup(&self, labels: &[&str]) -> Result<Option<usize>> {
        if labels.len() != self.factor_names.len() {
            return Err(Error::Dimension {
                expected: self.factor_names.len(),
                got: labels.len(),
            });
        }
        let mut combo = Vec::with_capacity(labels.len());
        for (f, &l) in labels.iter().enumerate() {
            match self.levels[f].iter().position(|x| x == l) {
                Some(i) => combo.push(i),
                None => {
                    return Err(Error::NotEstimable(format!(
                        "level '{l}' of '{}' was not observed",
                        self.factor_names[f]
                    )))
                }
            }
        }
        if combo == self.baseline {
            return Ok(None);
        }
        match self.combinations.iter().position(|c| c == &combo) {
            Some(i) => Ok(Some(i)),
            None => Err(Error::NotEstimable(format!(
                "combination '{}' was not observed",
                self.label_of(&combo)
            ))),
        }
    }

    /// Every non-baseline combination of observed levels that has no column.
    /// Returns an empty list when the full product exceeds `limit`.
    pub fn unobserved_combinations(&self, limit: usize) -> Vec<Vec<usize>> {
        let total: usize = self.levels.iter().map(Vec::len).product();
        if total > limit {
            return Vec::new();
        }
        let mut out = Vec::new();
        let mut combo = vec![0usize; self.levels.len()];
        for _ in 0..total {
            if combo != self.baseline && !self.combinations.contains(&combo) {
                out.push(combo.clone());
            }
            for f in (0..combo.len()).rev() {
                combo[f] += 1;
                if combo[f] < self.levels[f].len() {
                    break;
                }
                combo[f] = 0;
            }
        }
        out
    }
}

/// One `{0,1}` indicator column per observed non-baseline combination.
pub fn encode_factorial(factors: &[Factor], baseline: &[String]) -> Result<(FactorialEncoding, Array2<f64>)> {
    if factors.is_empty() {
        return Err(Error::Config("factorial encoding needs at least one factor".into()));
    }
    if baseline.len() != factors.len() {
        return Err(Error::Config(format!(
            "baseline has {} levels but there are {} treatment factors",
            baseline.len(),
            factors.len()
        )));
    }
    let n = factors[0].levels.len();
    let mut levels = Vec::with_capacity(factors.len());
    let mut base_idx = Vec::with_capacity(factors.len());
    for (f, b) in factors.iter().zip(baseline) {
        let mut lv: Vec<String> = f.levels.clone();
        sort_levels(&mut lv);
        lv.dedup();
        let bi = lv.iter().position(|l| l == b).ok_or_else(|| {
            Error::Config(format!(
                "baseline level '{b}' of '{}' does not occur in the data",
                f.name
            ))
        })?;
        levels.push(lv);
        base_idx.push(bi);
    }
    let index_of: Vec<HashMap<&str, usize>> = levels
        .iter()
        .map(|lv| lv.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect())
        .collect();
    let unit_tuples: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            factors
                .iter()
                .enumerate()
                .map(|(f, fac)| index_of[f][fac.levels[i].as_str()])
                .collect()
        })
        .collect();

    let mut observed: BTreeMap<Vec<usize>, ()> = BTreeMap::new();
    let mut has_control = false;
    for t in &unit_tuples {
        if *t == base_idx {
            has_control = true;
        } else {
            observed.insert(t.clone(), ());
        }
    }
    if !has_control {
        return Err(Error::Data("no unit is in the baseline (control) condition".into()));
    }
    let combinations: Vec<Vec<usize>> = observed.into_keys().collect();
    let column_of: HashMap<&Vec<usize>, usize> = combinations.iter().enumerate().map(|(j, c)| (c, j)).collect();
    let mut z = Array2::zeros((n, combinations.len()));
    let mut unit_combination = Vec::with_capacity(n);
    for (i, t) in unit_tuples.iter().enumerate() {
        let col = column_of.get(t).copied();
        if let Some(j) = col {
            z[[i, j]] = 1.0;
        }
        unit_combination.push(col);
    }
    Ok((
        FactorialEncoding {
            factor_names: factors.iter().map(|f| f.name.clone()).collect(),
            levels,
            baseline: base_idx,
            combinations,
            unit_combination,
        },
        z,
    ))
}

/// Parses a binary treatment factor into `{0.0, 1.0}`.
pub fn binary_treatment(f: &Factor) -> Result<Vec<f64>> {
    f.levels
        .iter()
        .enumerate()
        .map(|(i, l)| match l.trim().parse::<f64>() {
            Ok(v) if v == 0.0 || v == 1.0 => Ok(v),
            _ => Err(Error::Config(format!(
                "treatment '{}' is not binary (row {} has '{l}'); use the factorial encoding",
                f.name,
                i + 1
            ))),
        })
        .collect()
}

/// Treatment main effect followed by the treatment times each covariate column.
///
/// Covariates are expected on the standardized scale; the treatment is not.
pub fn build_interactions(
    treatment: &[f64],
    covariates: ArrayView2<f64>,
    names: &[String],
    treatment_name: &str,
) -> Result<(Array2<f64>, Vec<String>)> {
    let n = treatment.len();
    if covariates.nrows() != n {
        return Err(Error::Dimension {
            expected: n,
            got: covariates.nrows(),
        });
    }
    if let Some(i) = treatment.iter().position(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::Config(format!(
            "treatment must be binary for interactions, found {} in row {}",
            treatment[i],
            i + 1
        )));
    }
    let p = covariates.ncols();
    let mut z = Array2::zeros((n, p + 1));
    let mut out_names = Vec::with_capacity(p + 1);
    out_names.push(treatment_name.to_string());
    for i in 0..n {
        z[[i, 0]] = treatment[i];
        for j in 0..p {
            z[[i, j + 1]] = treatment[i] * covariates[[i, j]];
        }
    }
    for name in names {
        out_names.push(format!("{treatment_name}*{name}"));
    }
    Ok((z, out_names))
}

/// Requested treatment encoding.
#[derive(Clone, Debug, PartialEq)]
pub enum Encoding {
    /// Indicators of treatment-factor combinations relative to `baseline`.
    Factorial { baseline: Vec<String> },
    /// Binary treatment interacted with the named `V` columns (all when `None`).
    Interaction { heterogeneity: Option<Vec<String>> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesignSpec {
    pub encoding: Encoding,
    pub derived: Vec<DerivedTerm>,
}

/// A treatment condition against which effects are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Treatment {
    Control,
    /// Column index of a factorial combination.
    Combination(usize),
    /// The active arm of a binary treatment.
    Treated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentEncoding {
    Factorial(FactorialEncoding),
    Interaction {
        treatment_name: String,
        /// Observed treatment per unit.
        treatment: Vec<f64>,
    },
}

/// Model-ready design: recoded outcome, `Z` and `V` blocks and weights.
#[derive(Clone, Debug)]
pub struct CausalDesign {
    /// Outcome recoded to `{-1, +1}`.
    pub y_star: Array1<f64>,
    pub z: Array2<f64>,
    pub v: Array2<f64>,
    /// Weights with mean one.
    pub weights: Array1<f64>,
    pub z_meta: Vec<ColumnMeta>,
    pub v_meta: Vec<ColumnMeta>,
    pub encoding: TreatmentEncoding,
    /// Raw covariate names, in input order.
    pub covariate_names: Vec<String>,
    /// Raw covariate values (n x covariates), used for reporting profiles.
    pub covariates: Array2<f64>,
    pub diagnostics: Vec<String>,
}

impl CausalDesign {
    pub fn build(raw: &RawDataset, spec: &DesignSpec) -> Result<Self> {
        raw.validate()?;
        let n = raw.n();
        let standardized = standardize_rows(raw.n(), &raw.covariates, &spec.derived)?;
        let mut diagnostics = standardized.diagnostics;
        let v = standardized.values;
        let v_meta = standardized.columns;

        let (z, z_meta, encoding) = match &spec.encoding {
            Encoding::Factorial { baseline } => {
                let (enc, z) = encode_factorial(&raw.treatments, baseline)?;
                let meta = (0..enc.combinations.len())
                    .map(|j| ColumnMeta {
                        name: enc.label(j),
                        kind: ColumnKind::TreatmentIndicator,
                        source: ColumnSource::Combination { index: j },
                    })
                    .collect();
                (z, meta, TreatmentEncoding::Factorial(enc))
            }
            Encoding::Interaction { heterogeneity } => {
                if raw.treatments.len() != 1 {
                    return Err(Error::Config(
                        "the interaction encoding needs exactly one binary treatment".into(),
                    ));
                }
                let factor = &raw.treatments[0];
                let t = binary_treatment(factor)?;
                if !t.iter().any(|&x| x == 0.0) {
                    return Err(Error::Data("no unit is in the control condition".into()));
                }
                if !t.iter().any(|&x| x == 1.0) {
                    return Err(Error::Data("no unit received the treatment".into()));
                }
                let selected: Vec<usize> = match heterogeneity {
                    None => (0..v_meta.len()).collect(),
                    Some(names) => names
                        .iter()
                        .map(|name| {
                            v_meta.iter().position(|m| &m.name == name).ok_or_else(|| {
                                Error::Config(format!("heterogeneity column '{name}' is not a pre-treatment column"))
                            })
                        })
                        .collect::<Result<_>>()?,
                };
                let sub = v.select(Axis(1), &selected);
                let names: Vec<String> = selected.iter().map(|&j| v_meta[j].name.clone()).collect();
                let (zfull, znames) = build_interactions(&t, sub.view(), &names, &factor.name)?;
                let mut cols = Vec::with_capacity(zfull.ncols());
                let mut meta = Vec::with_capacity(zfull.ncols());
                for (j, name) in znames.into_iter().enumerate() {
                    cols.push(zfull.column(j).to_owned());
                    meta.push(ColumnMeta {
                        name,
                        kind: if j == 0 {
                            ColumnKind::TreatmentIndicator
                        } else {
                            ColumnKind::TreatmentInteraction
                        },
                        source: if j == 0 {
                            ColumnSource::Treatment
                        } else {
                            ColumnSource::Interaction {
                                v_column: selected[j - 1],
                            }
                        },
                    });
                }
                let (z, meta, mut dropped) = assemble_dropping_degenerate(n, cols, meta);
                diagnostics.append(&mut dropped);
                (
                    z,
                    meta,
                    TreatmentEncoding::Interaction {
                        treatment_name: factor.name.clone(),
                        treatment: t,
                    },
                )
            }
        };
        if z.ncols() == 0 {
            return Err(Error::Data("design has no causal-heterogeneity columns".into()));
        }

        let weights = normalize_weights(raw.weights.as_deref(), n)?;
        let y_star = raw.outcome.iter().map(|&y| 2.0 * y - 1.0).collect();
        let mut covariates = Array2::zeros((n, raw.covariates.len()));
        for (k, c) in raw.covariates.iter().enumerate() {
            covariates.column_mut(k).assign(&ArrayView1::from(&c.values[..]));
        }
        Ok(CausalDesign {
            y_star,
            z,
            v,
            weights,
            z_meta,
            v_meta,
            encoding,
            covariate_names: raw.covariates.iter().map(|c| c.name.clone()).collect(),
            covariates,
            diagnostics,
        })
    }

    pub fn n(&self) -> usize {
        self.y_star.len()
    }

    pub fn l_z(&self) -> usize {
        self.z.ncols()
    }

    pub fn l_v(&self) -> usize {
        self.v.ncols()
    }

    /// Applies this design's encodings and standardization to new data.
    ///
    /// Factorial units in a combination without a column are rejected as not
    /// estimable. The new data's own weights are normalized independently.
    pub fn project(&self, raw: &RawDataset) -> Result<CausalDesign> {
        raw.validate()?;
        let names: Vec<&str> = raw.covariates.iter().map(|c| c.name.as_str()).collect();
        if names != self.covariate_names.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Data(format!(
                "covariates {:?} do not match the design's {:?}",
                names, self.covariate_names
            )));
        }
        let n = raw.n();
        let cov = |s: &Standardization, i: usize| s.apply(raw.covariates[s.covariate].values[i]);
        let mut v = Array2::zeros((n, self.l_v()));
        for (j, m) in self.v_meta.iter().enumerate() {
            for i in 0..n {
                v[[i, j]] = match &m.source {
                    ColumnSource::Main(s) => cov(s, i),
                    ColumnSource::Square(s) => cov(s, i).powi(2),
                    ColumnSource::Product(a, b) => cov(a, i) * cov(b, i),
                    other => unreachable!("V column with source {other:?}"),
                };
            }
        }
        let mut z = Array2::zeros((n, self.l_z()));
        let encoding = match &self.encoding {
            TreatmentEncoding::Factorial(enc) => {
                if raw.treatments.len() != enc.factor_names.len() {
                    return Err(Error::Data("treatment factors do not match the design".into()));
                }
                let mut unit_combination = Vec::with_capacity(n);
                for i in 0..n {
                    let labels: Vec<&str> = raw.treatments.iter().map(|f| f.levels[i].as_str()).collect();
                    let col = enc.lookup(&labels)?;
                    if let Some(j) = col {
                        z[[i, j]] = 1.0;
                    }
                    unit_combination.push(col);
                }
                TreatmentEncoding::Factorial(FactorialEncoding {
                    unit_combination,
                    ..enc.clone()
                })
            }
            TreatmentEncoding::Interaction { treatment_name, .. } => {
                if raw.treatments.len() != 1 {
                    return Err(Error::Data("expected one binary treatment".into()));
                }
                let t = binary_treatment(&raw.treatments[0])?;
                for i in 0..n {
                    let row = interaction_row(&self.z_meta, t[i], v.row(i));
                    z.row_mut(i).assign(&row);
                }
                TreatmentEncoding::Interaction {
                    treatment_name: treatment_name.clone(),
                    treatment: t,
                }
            }
        };
        let mut covariates = Array2::zeros((n, raw.covariates.len()));
        for (k, c) in raw.covariates.iter().enumerate() {
            covariates.column_mut(k).assign(&ArrayView1::from(&c.values[..]));
        }
        Ok(CausalDesign {
            y_star: raw.outcome.iter().map(|&y| 2.0 * y - 1.0).collect(),
            z,
            v,
            weights: normalize_weights(raw.weights.as_deref(), n)?,
            z_meta: self.z_meta.clone(),
            v_meta: self.v_meta.clone(),
            encoding,
            covariate_names: self.covariate_names.clone(),
            covariates,
            diagnostics: Vec::new(),
        })
    }

    /// Every non-control treatment with a column in `Z`.
    pub fn treatments(&self) -> Vec<Treatment> {
        match &self.encoding {
            TreatmentEncoding::Factorial(enc) => (0..enc.combinations.len()).map(Treatment::Combination).collect(),
            TreatmentEncoding::Interaction { .. } => vec![Treatment::Treated],
        }
    }

    pub fn treatment_label(&self, t: Treatment) -> String {
        match (&self.encoding, t) {
            (TreatmentEncoding::Factorial(enc), Treatment::Control) => enc.control_label(),
            (TreatmentEncoding::Factorial(enc), Treatment::Combination(j)) if j < enc.combinations.len() => {
                enc.label(j)
            }
            (TreatmentEncoding::Interaction { treatment_name, .. }, Treatment::Control) => {
                format!("{treatment_name}=0")
            }
            (TreatmentEncoding::Interaction { treatment_name, .. }, Treatment::Treated) => {
                format!("{treatment_name}=1")
            }
            (_, t) => format!("{t:?}"),
        }
    }

    /// The `Z` row unit `i` would have under treatment `t`.
    pub fn counterfactual_z(&self, i: usize, t: Treatment) -> Result<Array1<f64>> {
        let mut row = Array1::zeros(self.l_z());
        match (&self.encoding, t) {
            (_, Treatment::Control) => {}
            (TreatmentEncoding::Factorial(enc), Treatment::Combination(j)) => {
                if j >= enc.combinations.len() {
                    return Err(Error::NotEstimable(format!("combination column {j} does not exist")));
                }
                row[j] = 1.0;
            }
            (TreatmentEncoding::Interaction { .. }, Treatment::Treated) => {
                row = interaction_row(&self.z_meta, 1.0, self.v.row(i));
            }
            (_, t) => return Err(Error::NotEstimable(format!("{t:?} is not encoded in this design"))),
        }
        Ok(row)
    }
}

fn interaction_row(z_meta: &[ColumnMeta], t: f64, v_row: ArrayView1<f64>) -> Array1<f64> {
    z_meta
        .iter()
        .map(|m| match m.source {
            ColumnSource::Treatment => t,
            ColumnSource::Interaction { v_column } => t * v_row[v_column],
            _ => 0.0,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn full_two_by_three_factorial_has_five_columns() {
        let a = Factor::new("a", strings(&["0", "0", "0", "1", "1", "1"]));
        let b = Factor::new("b", strings(&["0", "1", "2", "0", "1", "2"]));
        let (enc, z) = encode_factorial(&[a, b], &strings(&["0", "0"])).unwrap();
        assert_eq!(z.ncols(), 5);
        assert_eq!(enc.unit_combination[0], None);
        for i in 0..6 {
            let s = z.row(i).sum();
            assert!(s == 0.0 || s == 1.0);
        }
        assert_eq!(z.row(0).sum(), 0.0);
        assert_eq!(enc.label(0), "a=0;b=1");
    }

    #[test]
    fn single_binary_factor_is_the_treatment_itself() {
        let t = [0.0, 1.0, 1.0, 0.0, 1.0];
        let (_, z) = encode_factorial(&[Factor::binary("t", &t)], &strings(&["0"])).unwrap();
        assert_eq!(z.ncols(), 1);
        assert_eq!(z.column(0).to_vec(), t.to_vec());
    }

    #[test]
    fn unknown_baseline_is_a_config_error() {
        let f = Factor::new("f", strings(&["a", "b"]));
        let err = encode_factorial(&[f], &strings(&["c"])).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn factorial_levels_sort_numerically() {
        let f = Factor::new("m", strings(&["10", "2", "0", "1"]));
        let (enc, _) = encode_factorial(&[f], &strings(&["0"])).unwrap();
        assert_eq!(enc.levels[0], strings(&["0", "1", "2", "10"]));
    }

    #[test]
    fn unobserved_combinations_are_listed() {
        let a = Factor::new("a", strings(&["0", "1", "0"]));
        let b = Factor::new("b", strings(&["0", "0", "1"]));
        let (enc, z) = encode_factorial(&[a, b], &strings(&["0", "0"])).unwrap();
        assert_eq!(z.ncols(), 2);
        assert_eq!(enc.unobserved_combinations(1000), vec![vec![1, 1]]);
        assert!(matches!(enc.lookup(&["1", "1"]), Err(Error::NotEstimable(_))));
    }

    #[test]
    fn standardize_simple_column() {
        let s = standardize(&[NumericColumn::new("x", vec![1.0, 2.0, 3.0])], &[]).unwrap();
        let sd = (2.0f64 / 3.0).sqrt();
        let col = s.values.column(0);
        assert_abs_diff_eq!(col[0], -1.0 / sd, epsilon = 1e-12);
        assert_abs_diff_eq!(col[1], 0.0, epsilon = 1e-12);
        let (m, d) = mean_sd(col);
        assert_abs_diff_eq!(m, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_column_is_dropped_with_diagnostic() {
        let s = standardize(
            &[
                NumericColumn::new("c", vec![4.0; 5]),
                NumericColumn::new("x", vec![1.0, 2.0, 3.0, 4.0, 6.0]),
            ],
            &[DerivedTerm::Square("c".into())],
        )
        .unwrap();
        assert_eq!(s.values.ncols(), 1);
        assert_eq!(s.columns[0].name, "x");
        assert_eq!(s.diagnostics.len(), 2);
    }

    #[test]
    fn non_finite_covariate_is_rejected() {
        let err = standardize(&[NumericColumn::new("x", vec![1.0, f64::NAN])], &[]).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn interaction_of_standardized_mains_is_not_recentered() {
        let a = [1.0, 2.0, 4.0, 7.0, 11.0];
        let b = [3.0, -1.0, 0.5, 2.0, 2.0];
        let s = standardize(
            &[NumericColumn::new("a", a.to_vec()), NumericColumn::new("b", b.to_vec())],
            &[DerivedTerm::Interact("a".into(), "b".into())],
        )
        .unwrap();
        // Hand computation: population mean/sd of each main.
        let (ma, sa) = (5.0, (((16.0 + 9.0 + 1.0 + 4.0 + 36.0) / 5.0) as f64).sqrt());
        let mb = 6.5 / 5.0;
        let sb = (b.iter().map(|x| (x - mb) * (x - mb)).sum::<f64>() / 5.0).sqrt();
        for i in 0..5 {
            let expect = (a[i] - ma) / sa * (b[i] - mb) / sb;
            assert_abs_diff_eq!(s.values[[i, 2]], expect, epsilon = 1e-12);
        }
        assert_eq!(s.columns[2].name, "a:b");
        let (m, _) = mean_sd(s.values.column(2));
        assert!(m.abs() > 1e-3, "product column must keep its mean");
    }

    #[test]
    fn standardization_round_trip_and_idempotence() {
        let x = vec![3.5, -2.0, 8.25, 0.0, 1.0, 1.0];
        let s = standardize(&[NumericColumn::new("x", x.clone())], &[]).unwrap();
        let ColumnSource::Main(rec) = s.columns[0].source else {
            panic!()
        };
        for (i, &xi) in x.iter().enumerate() {
            assert_abs_diff_eq!(rec.invert(s.values[[i, 0]]), xi, epsilon = 1e-10);
        }
        let again = standardize(&[NumericColumn::new("x", s.values.column(0).to_vec())], &[]).unwrap();
        for i in 0..x.len() {
            assert_abs_diff_eq!(again.values[[i, 0]], s.values[[i, 0]], epsilon = 1e-10);
        }
    }

    #[test]
    fn weights_normalize_to_mean_one() {
        assert_eq!(
            normalize_weights(Some(&[2.0, 2.0, 2.0]), 3).unwrap().to_vec(),
            vec![1.0; 3]
        );
        assert_eq!(
            normalize_weights(Some(&[1.0, 3.0]), 2).unwrap().to_vec(),
            vec![0.5, 1.5]
        );
        assert_eq!(normalize_weights(None, 4).unwrap().to_vec(), vec![1.0; 4]);
        assert!(normalize_weights(Some(&[1.0, 0.0]), 2).is_err());
        assert!(normalize_weights(Some(&[1.0, -2.0]), 2).is_err());
    }

    #[test]
    fn interactions_use_raw_treatment_and_standardized_covariates() {
        let t = [1.0, 0.0, 1.0];
        let cov = ndarray::array![[0.5, -1.0], [2.0, 1.0], [-0.5, 0.0]];
        let (z, names) = build_interactions(&t, cov.view(), &strings(&["x", "y"]), "T").unwrap();
        assert_eq!(names, strings(&["T", "T*x", "T*y"]));
        assert_eq!(z.row(0).to_vec(), vec![1.0, 0.5, -1.0]);
        assert_eq!(z.row(1).to_vec(), vec![0.0, 0.0, 0.0]);
        let (z, _) = build_interactions(&t, Array2::zeros((3, 0)).view(), &[], "T").unwrap();
        assert_eq!(z.ncols(), 1);
        assert!(build_interactions(&[0.0, 2.0], Array2::zeros((2, 0)).view(), &[], "T").is_err());
    }

    fn toy_raw() -> RawDataset {
        RawDataset {
            outcome: vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0],
            treatments: vec![Factor::binary("t", &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0])],
            covariates: vec![
                NumericColumn::new("age", vec![20.0, 30.0, 40.0, 25.0, 35.0, 50.0]),
                NumericColumn::new("edu", vec![10.0, 12.0, 12.0, 16.0, 8.0, 11.0]),
            ],
            weights: Some(vec![1.0, 2.0, 1.0, 2.0, 1.0, 1.0]),
        }
    }

    #[test]
    fn interaction_design_dimensions_and_projection() {
        let raw = toy_raw();
        let spec = DesignSpec {
            encoding: Encoding::Interaction { heterogeneity: None },
            derived: vec![DerivedTerm::Square("age".into())],
        };
        let d = CausalDesign::build(&raw, &spec).unwrap();
        assert_eq!(d.l_v(), 3);
        assert_eq!(d.l_z(), 4);
        assert_eq!(d.y_star.to_vec(), vec![1.0, -1.0, 1.0, 1.0, -1.0, -1.0]);
        assert_abs_diff_eq!(d.weights.mean().unwrap(), 1.0, epsilon = 1e-12);
        // Projecting the training data reproduces the design exactly.
        let p = d.project(&raw).unwrap();
        assert_eq!(p.z, d.z);
        assert_eq!(p.v, d.v);
        // Counterfactual rows recompute the interactions.
        let treated = d.counterfactual_z(1, Treatment::Treated).unwrap();
        assert_eq!(treated[0], 1.0);
        assert_abs_diff_eq!(treated[1], d.v[[1, 0]], epsilon = 0.0);
        assert_eq!(d.counterfactual_z(1, Treatment::Control).unwrap().sum(), 0.0);
        assert!(d.counterfactual_z(1, Treatment::Combination(0)).is_err());
    }

    #[test]
    fn design_requires_control_units() {
        let mut raw = toy_raw();
        raw.treatments = vec![Factor::binary("t", &[1.0; 6])];
        let spec = DesignSpec {
            encoding: Encoding::Interaction { heterogeneity: None },
            derived: vec![],
        };
        assert_eq!(CausalDesign::build(&raw, &spec).unwrap_err().exit_code(), 3);
        let spec = DesignSpec {
            encoding: Encoding::Factorial {
                baseline: strings(&["0"]),
            },
            derived: vec![],
        };
        assert!(CausalDesign::build(&raw, &spec).is_err());
    }

    #[test]
    fn outcome_must_be_binary() {
        let mut raw = toy_raw();
        raw.outcome[2] = 2.0;
        let spec = DesignSpec {
            encoding: Encoding::Interaction { heterogeneity: None },
            derived: vec![],
        };
        assert!(matches!(CausalDesign::build(&raw, &spec), Err(Error::Data(_))));
    }

    #[test]
    fn derived_term_parsing() {
        assert_eq!(
            DerivedTerm::parse("square:age").unwrap(),
            DerivedTerm::Square("age".into())
        );
        assert_eq!(
            DerivedTerm::parse("interact:a:b").unwrap(),
            DerivedTerm::Interact("a".into(), "b".into())
        );
        assert!(DerivedTerm::parse("cube:a").is_err());
    }
}
