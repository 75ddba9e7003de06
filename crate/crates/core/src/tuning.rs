//! Penalty selection by generalized cross-validation.
//!
//! ```text
//! GCV(lambda_Z, lambda_V) = sum_i w_i |1 - y*_i W_i|_+^2 / (n (1 - l/a)^2)
//! ```
//!
//! with `l` the number of nonzero slope coefficients and `a` the size of the
//! active set. The search fixes `lambda_Z` at the top of the grid, scans
//! `lambda_V`, then scans `lambda_Z`, alternating until neither incumbent
//! moves. It then refines around the incumbent with candidate offsets of half
//! the previous spacing until the spacing reaches the requested precision.
//! Refinement candidates stay within the range of the coarse grid.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::rc::Rc;

use serde::Serialize;

use crate::design::CausalDesign;
use crate::error::{Error, Result};
use crate::svm::{PenaltyPair, SvmFit, SvmProblem, SvmSettings};

/// GCV of a fit; `+inf` when `l >= a`.
pub fn gcv(fit: &SvmFit, design: &CausalDesign) -> f64 {
    let l = fit.nonzero_count();
    let a = fit.active_size();
    gcv_value(fit.hinge_loss(design), design.n(), l, a)
}

pub fn gcv_value(hinge_loss: f64, n: usize, l: usize, a: usize) -> f64 {
    if l >= a {
        return f64::INFINITY;
    }
    let shrink = 1.0 - l as f64 / a as f64;
    hinge_loss / (n as f64 * shrink * shrink)
}

#[derive(Clone, Debug)]
pub struct GcvRecord {
    pub log_lambda_z: f64,
    pub log_lambda_v: f64,
    pub penalties: PenaltyPair,
    pub gcv: f64,
    pub nonzero: usize,
    pub active_size: usize,
    pub fit: SvmFit,
}

#[derive(Clone, Debug)]
pub struct SearchSettings {
    /// Coarse grid of natural-log penalties, shared by both parameters.
    pub grid: Vec<f64>,
    /// Final spacing of the refinement in log-penalty units.
    pub precision: f64,
    /// Cap on alternation rounds at each resolution.
    pub max_rounds: usize,
    pub svm: SvmSettings,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            grid: default_grid(),
            precision: 1e-4,
            max_rounds: 50,
            svm: SvmSettings::default(),
        }
    }
}

/// Integer log-penalties from -15 to 10.
pub fn default_grid() -> Vec<f64> {
    (-15..=10).map(f64::from).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub round: usize,
    pub lambda_z: f64,
    pub lambda_v: f64,
    pub l: usize,
    pub a: usize,
    pub gcv: f64,
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub best: GcvRecord,
    pub trace: Vec<TraceRow>,
    pub evaluations: usize,
}

impl SearchResult {
    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        writeln!(buf, "round,lambda_z,lambda_v,l,a,gcv")?;
        for r in &self.trace {
            writeln!(
                buf,
                "{},{},{},{},{},{}",
                r.round, r.lambda_z, r.lambda_v, r.l, r.a, r.gcv
            )?;
        }
        crate::output::write_atomic(path, &buf)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Coordinate {
    Z,
    V,
}

struct Searcher<'a> {
    problem: SvmProblem<'a>,
    settings: &'a SearchSettings,
    memo: HashMap<(u64, u64), Option<Rc<GcvRecord>>>,
    bounds: (f64, f64),
    trace: Vec<TraceRow>,
    round: usize,
}

fn key(lz: f64, lv: f64) -> (u64, u64) {
    (lz.to_bits(), lv.to_bits())
}

/// Strict improvement beyond rounding noise, so flat stretches never move the incumbent.
fn improves(candidate: f64, incumbent: f64) -> bool {
    candidate < incumbent && (incumbent.is_infinite() || incumbent - candidate > 1e-12 * incumbent.abs())
}

fn gcv_of(rec: &Option<Rc<GcvRecord>>) -> f64 {
    rec.as_ref().map_or(f64::INFINITY, |r| r.gcv)
}

impl<'a> Searcher<'a> {
    fn evaluate(&mut self, lz: f64, lv: f64, warm: Option<&Rc<GcvRecord>>) -> Option<Rc<GcvRecord>> {
        if let Some(hit) = self.memo.get(&key(lz, lv)) {
            return hit.clone();
        }
        let rec = PenaltyPair::from_log(lz, lv).ok().and_then(|pen| {
            let fit = self
                .problem
                .fit_with(pen, warm.map(|r| &r.fit), &self.settings.svm)
                .ok()?;
            let g = gcv(&fit, self.problem.design);
            Some(Rc::new(GcvRecord {
                log_lambda_z: lz,
                log_lambda_v: lv,
                penalties: pen,
                gcv: g,
                nonzero: fit.nonzero_count(),
                active_size: fit.active_size(),
                fit,
            }))
        });
        self.trace.push(TraceRow {
            round: self.round,
            lambda_z: lz.exp(),
            lambda_v: lv.exp(),
            l: rec.as_ref().map_or(0, |r| r.nonzero),
            a: rec.as_ref().map_or(0, |r| r.active_size),
            gcv: gcv_of(&rec),
        });
        self.memo.insert(key(lz, lv), rec.clone());
        rec
    }

    /// Scans one coordinate over `candidates`; returns the new incumbent value.
    ///
    /// The incumbent only moves to a strictly smaller GCV; among equally good
    /// candidates the larger penalty wins.
    fn line(&mut self, coord: Coordinate, incumbent: (f64, f64), candidates: &[f64]) -> (f64, f64) {
        self.round += 1;
        let (lo, hi) = self.bounds;
        let mut sorted: Vec<f64> = candidates.iter().map(|c| c.clamp(lo, hi)).collect();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        sorted.dedup();
        let start = self.evaluate(incumbent.0, incumbent.1, None);
        let mut best_value = gcv_of(&start);
        let mut best = incumbent;
        let mut warm = start;
        for c in sorted {
            let point = match coord {
                Coordinate::Z => (c, incumbent.1),
                Coordinate::V => (incumbent.0, c),
            };
            let rec = self.evaluate(point.0, point.1, warm.as_ref());
            let value = gcv_of(&rec);
            if improves(value, best_value) {
                best_value = value;
                best = point;
            }
            if rec.is_some() {
                warm = rec;
            }
        }
        best
    }

    fn alternate(&mut self, mut incumbent: (f64, f64), offsets: Option<f64>) -> (f64, f64) {
        let grid = self.settings.grid.clone();
        for _ in 0..self.settings.max_rounds {
            let before = incumbent;
            let v_candidates = match offsets {
                None => grid.clone(),
                Some(h) => vec![incumbent.1 - h, incumbent.1, incumbent.1 + h],
            };
            incumbent = self.line(Coordinate::V, incumbent, &v_candidates);
            let z_candidates = match offsets {
                None => grid.clone(),
                Some(h) => vec![incumbent.0 - h, incumbent.0, incumbent.0 + h],
            };
            incumbent = self.line(Coordinate::Z, incumbent, &z_candidates);
            if incumbent == before {
                break;
            }
        }
        incumbent
    }
}

/// Runs the alternating GCV line search and returns the best record visited.
pub fn search(design: &CausalDesign, settings: &SearchSettings) -> Result<SearchResult> {
    if settings.grid.is_empty() {
        return Err(Error::Config("penalty grid is empty".into()));
    }
    if !(settings.precision > 0.0) {
        return Err(Error::Config("search precision must be positive".into()));
    }
    if settings.grid.iter().any(|g| !g.is_finite()) {
        return Err(Error::Config("penalty grid must be finite".into()));
    }
    let mut grid = settings.grid.clone();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    let settings = SearchSettings {
        grid,
        ..settings.clone()
    };
    let top = *settings.grid.last().unwrap();
    let spacing = settings
        .grid
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);

    let mut s = Searcher {
        problem: SvmProblem::new(design),
        settings: &settings,
        memo: HashMap::new(),
        bounds: (settings.grid[0], top),
        trace: Vec::new(),
        round: 0,
    };
    let mut incumbent = s.alternate((top, top), None);
    if spacing.is_finite() {
        let mut h = spacing / 2.0;
        while h > settings.precision / 2.0 {
            incumbent = s.alternate(incumbent, Some(h));
            h /= 2.0;
        }
    }

    let finite: Vec<&Rc<GcvRecord>> = s.memo.values().flatten().filter(|r| r.gcv.is_finite()).collect();
    let min = finite.iter().map(|r| r.gcv).fold(f64::INFINITY, f64::min);
    let best = finite
        .into_iter()
        .filter(|r| !improves(min, r.gcv))
        .max_by(|a, b| {
            (a.log_lambda_z + a.log_lambda_v)
                .partial_cmp(&(b.log_lambda_z + b.log_lambda_v))
                .unwrap()
                .then_with(|| a.log_lambda_z.partial_cmp(&b.log_lambda_z).unwrap())
        })
        .cloned()
        .ok_or_else(|| Error::Tuning("every evaluated penalty pair has an infinite GCV".into()))?;
    let evaluations = s.trace.len();
    Ok(SearchResult {
        best: (*best).clone(),
        trace: s.trace,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gcv_guard_and_formula() {
        assert_eq!(gcv_value(3.0, 10, 8, 8), f64::INFINITY);
        assert_eq!(gcv_value(3.0, 10, 9, 8), f64::INFINITY);
        // n=10, l=2, a=8, hinge losses summing to 2.4: 2.4 / (10 * 0.75^2).
        let hinge = [0.16, 0.25, 0.09, 0.49, 0.36, 0.04, 0.81, 0.2];
        let total: f64 = hinge.iter().sum();
        assert!((total - 2.4).abs() < 1e-12);
        assert!((gcv_value(total, 10, 2, 8) - 2.4 / 5.625).abs() < 1e-12);
        assert_eq!(gcv_value(5.0, 10, 0, 10), 0.5);
    }

    #[test]
    fn default_grid_spans_minus_fifteen_to_ten() {
        let g = default_grid();
        assert_eq!(g.len(), 26);
        assert_eq!(g[0], -15.0);
        assert_eq!(g[25], 10.0);
    }
}
