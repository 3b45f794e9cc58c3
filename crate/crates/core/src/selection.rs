//! Feature selection: ANOVA-F ranking, recursive feature elimination, and
//! L1-sparse selection.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::svm::{self, Gram, Regularization, SvmParams, WarmStart};

/// Default magnitude below which an L1 coefficient counts as zero.
pub const L1_ZERO_TOL: f64 = 1e-6;

/// Range searched for `C` when targeting an L1 selection size.
pub const L1_C_RANGE: (f64, f64) = (1e-4, 1e4);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "select_k_best")]
    SelectKBest,
    #[serde(rename = "rfe")]
    Rfe,
    #[serde(rename = "l1_svm")]
    L1Svm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::SelectKBest => "select_k_best",
            Method::Rfe => "rfe",
            Method::L1Svm => "l1_svm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "selectkbest" | "kbest" | "anova" => Ok(Method::SelectKBest),
            "rfe" => Ok(Method::Rfe),
            "l1svm" | "l1" => Ok(Method::L1Svm),
            _ => Err(Error::Parameter(format!(
                "unknown selection method {s:?} (expected select_k_best, rfe or l1_svm)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub method: Method,
    pub indices: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

fn class_counts(labels: &[bool]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    for (label, count) in [("positive", pos), ("negative", neg)] {
        if count < 2 {
            return Err(Error::DegenerateClass {
                label: label.into(),
                count,
                required: 2,
            });
        }
    }
    Ok((pos, neg))
}

/// One-way ANOVA F statistic for two classes.
///
/// Returns `0` when the class means coincide and `+∞` when every class is
/// constant but the means differ. Both cases are detected with a tolerance
/// relative to the column scale.
pub fn anova_f(column: ArrayView1<'_, f64>, labels: &[bool]) -> Result<f64> {
    if column.len() != labels.len() {
        return Err(Error::dimension("label count", column.len(), labels.len()));
    }
    let (pos, neg) = class_counts(labels)?;
    Ok(f_statistic(column, labels, pos, neg))
}

fn f_statistic(column: ArrayView1<'_, f64>, labels: &[bool], pos: usize, neg: usize) -> f64 {
    let n = labels.len() as f64;
    let (mut s1, mut s0) = (0.0, 0.0);
    let mut scale: f64 = 0.0;
    for (&v, &l) in column.iter().zip(labels) {
        if l {
            s1 += v;
        } else {
            s0 += v;
        }
        scale = scale.max(v.abs());
    }
    let (n1, n0) = (pos as f64, neg as f64);
    let (m1, m0) = (s1 / n1, s0 / n0);
    let mean = (s1 + s0) / n;
    let between = n1 * (m1 - mean).powi(2) + n0 * (m0 - mean).powi(2);
    let within: f64 = column
        .iter()
        .zip(labels)
        .map(|(&v, &l)| (v - if l { m1 } else { m0 }).powi(2))
        .sum();
    let tol = n * (scale * 1e-12).powi(2);
    if between <= tol {
        0.0
    } else if within <= tol {
        f64::INFINITY
    } else {
        between / (within / (n - 2.0))
    }
}

/// F statistics of every column.
pub fn anova_f_all(x: ArrayView2<'_, f64>, labels: &[bool]) -> Result<Vec<f64>> {
    if x.nrows() != labels.len() {
        return Err(Error::dimension("label count", x.nrows(), labels.len()));
    }
    let (pos, neg) = class_counts(labels)?;
    Ok((0..x.ncols())
        .into_par_iter()
        .map(|j| f_statistic(x.column(j), labels, pos, neg))
        .collect())
}

/// Column indices by descending score, ties by ascending index.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn check_k(k: usize, d: usize) -> Result<()> {
    if k == 0 || k > d {
        return Err(Error::Parameter(format!("k must be in 1..={d}, got {k}")));
    }
    Ok(())
}

/// The `k` columns with the largest F statistic.
pub fn select_k_best(x: ArrayView2<'_, f64>, labels: &[bool], k: usize) -> Result<SelectionResult> {
    check_k(k, x.ncols())?;
    let scores = anova_f_all(x, labels)?;
    let mut indices = rank_descending(&scores);
    indices.truncate(k);
    Ok(SelectionResult {
        method: Method::SelectKBest,
        indices,
        scores: Some(scores),
    })
}

/// One state of an elimination run: the surviving columns and the
/// standardized weights of the SVM trained on them.
#[derive(Debug, Clone, PartialEq)]
pub struct RfeState {
    pub survivors: Vec<usize>,
    pub weights: Vec<f64>,
}

/// The sequence of trained states visited by recursive elimination down to
/// `k_min`. Every target `k ≥ k_min` with the same step passes through a
/// prefix of these states, so one path answers a whole sweep.
#[derive(Debug, Clone)]
pub struct RfePath {
    pub n_features: usize,
    pub step: usize,
    pub states: Vec<RfeState>,
}

/// Surviving columns ordered by ascending index.
fn drop_smallest(state: &RfeState, count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..state.survivors.len()).collect();
    order.sort_by(|&a, &b| {
        state.weights[a]
            .abs()
            .total_cmp(&state.weights[b].abs())
            .then(state.survivors[a].cmp(&state.survivors[b]))
    });
    let mut kept: Vec<usize> = order[count..].iter().map(|&p| state.survivors[p]).collect();
    kept.sort_unstable();
    kept
}

impl RfePath {
    /// Survivors of elimination with target `k`.
    pub fn survivors(&self, k: usize) -> Result<Vec<usize>> {
        check_k(k, self.n_features)?;
        if k == self.n_features {
            return Ok((0..k).collect());
        }
        let state = self
            .states
            .iter()
            .find(|s| s.survivors.len().saturating_sub(k) <= self.step)
            .ok_or_else(|| {
                Error::Parameter(format!("elimination path does not reach {k} features"))
            })?;
        Ok(drop_smallest(state, state.survivors.len() - k))
    }

    pub fn select(&self, k: usize) -> Result<SelectionResult> {
        Ok(SelectionResult {
            method: Method::Rfe,
            indices: self.survivors(k)?,
            scores: None,
        })
    }

    /// Survivor counts of the visited states.
    pub fn sizes(&self) -> Vec<usize> {
        self.states.iter().map(|s| s.survivors.len()).collect()
    }
}

/// Runs recursive elimination down to `k_min` survivors, recording each
/// trained state. Features are standardized once on `x`; importance is the
/// magnitude of the standardized weight.
pub fn rfe_path(
    x: ArrayView2<'_, f64>,
    labels: &[bool],
    k_min: usize,
    step: usize,
    params: &SvmParams,
) -> Result<RfePath> {
    let d = x.ncols();
    check_k(k_min, d)?;
    if step == 0 {
        return Err(Error::Parameter("RFE step must be at least 1".into()));
    }
    if x.nrows() != labels.len() {
        return Err(Error::dimension("label count", x.nrows(), labels.len()));
    }
    let std = svm::fit_standardization(x)?;
    let z = std.apply(x)?;
    let cached = z.nrows() <= svm::GRAM_CACHE_MAX_ROWS;
    let mut gram = cached.then(|| Gram::new(z.view()));
    let mut survivors: Vec<usize> = (0..d).collect();
    let mut warm: Option<WarmStart> = None;
    let mut states = Vec::new();

    while survivors.len() > k_min {
        let solution = match &gram {
            Some(g) => svm::train_l2_with_gram(z.view(), &survivors, g, labels, params, warm.as_ref(), false),
            None => svm::train_l2(z.select(Axis(1), &survivors).view(), labels, params, warm.as_ref()),
        }
        .map_err(|e| e.context(format!("RFE with {} features", survivors.len())))?;
        let state = RfeState {
            survivors: survivors.clone(),
            weights: solution.model.weights,
        };
        let remove = step.min(survivors.len() - k_min);
        let next = drop_smallest(&state, remove);
        if let Some(g) = gram.as_mut() {
            for &j in survivors.iter().filter(|j| next.binary_search(j).is_err()) {
                let column: Vec<f64> = z.column(j).to_vec();
                g.remove_column(&column);
            }
        }
        states.push(state);
        survivors = next;
        warm = Some(solution.warm);
    }
    Ok(RfePath {
        n_features: d,
        step,
        states,
    })
}

/// Recursive feature elimination to `k` survivors.
pub fn rfe(
    x: ArrayView2<'_, f64>,
    labels: &[bool],
    k: usize,
    step: usize,
    params: &SvmParams,
) -> Result<SelectionResult> {
    rfe_path(x, labels, k, step, params)?.select(k)
}

/// Trains the L1-penalized model on standardized `x` and keeps the columns
/// whose weight exceeds `zero_tol`, ordered by descending magnitude.
pub fn l1_select(
    x: ArrayView2<'_, f64>,
    labels: &[bool],
    c: f64,
    zero_tol: f64,
    params: &SvmParams,
) -> Result<SelectionResult> {
    if !(zero_tol >= 0.0) {
        return Err(Error::Parameter(format!("zero_tol must be nonnegative, got {zero_tol}")));
    }
    let z = svm::fit_standardization(x)?.apply(x)?;
    l1_on_standardized(&z, labels, c, zero_tol, params)
}

fn l1_on_standardized(
    z: &Array2<f64>,
    labels: &[bool],
    c: f64,
    zero_tol: f64,
    params: &SvmParams,
) -> Result<SelectionResult> {
    let params = SvmParams { c, ..*params };
    let model = svm::train_linear_svm(z.view(), labels, Regularization::L1, &params)?;
    let magnitude: Vec<f64> = model.weights.iter().map(|w| w.abs()).collect();
    let indices = rank_descending(&magnitude)
        .into_iter()
        .take_while(|&j| magnitude[j] > zero_tol)
        .collect();
    Ok(SelectionResult {
        method: Method::L1Svm,
        indices,
        scores: Some(model.weights),
    })
}

/// Bisects `log C` over [`L1_C_RANGE`] for the largest `C` whose L1
/// selection has at most `k` columns.
pub fn l1_select_k(
    x: ArrayView2<'_, f64>,
    labels: &[bool],
    k: usize,
    zero_tol: f64,
    params: &SvmParams,
) -> Result<SelectionResult> {
    check_k(k, x.ncols())?;
    let z = svm::fit_standardization(x)?.apply(x)?;
    let run = |c: f64| l1_on_standardized(&z, labels, c, zero_tol, params);
    let (lo_c, hi_c) = L1_C_RANGE;
    let top = run(hi_c)?;
    if top.indices.len() <= k {
        return Ok(top);
    }
    let mut best = run(lo_c)?;
    if best.indices.len() > k {
        return Err(Error::Training(format!(
            "L1 selection keeps {} features even at C = {lo_c}",
            best.indices.len()
        )));
    }
    let (mut lo, mut hi) = (lo_c.log10(), hi_c.log10());
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let result = run(10f64.powf(mid))?;
        if result.indices.len() <= k {
            lo = mid;
            best = result;
            if best.indices.len() == k {
                break;
            }
        } else {
            hi = mid;
        }
        if hi - lo < 1e-6 {
            break;
        }
    }
    Ok(best)
}
