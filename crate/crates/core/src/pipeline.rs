//! Discovery workflow: splitting, the per-k selection sweep, the sweet-spot
//! rule, and cross-validation.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ReadOptions, SampleTable, Schema};
use crate::error::{Error, Result};
use crate::metrics::{marginal_series, ConfusionMatrix, DerivedMetrics};
use crate::model::{ModelSpec, Provenance, TrainedModel};
use crate::selection::{self, Method, L1_ZERO_TOL};
use crate::spectral::{enumerate_features, FeatureSpace, DEFAULT_EPSILON};
use crate::svm::{self, absorb_standardization, AbsorbedModel, Regularization, Standardization, SvmParams};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_THRESHOLD: f64 = 0.005;
pub const CONFIG_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    RandomStratified,
    YearHeldOut,
    SpatialBlock,
    SpatioTemporal,
}

impl fmt::Display for SplitStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            SplitStrategy::RandomStratified => "random_stratified",
            SplitStrategy::YearHeldOut => "year_held_out",
            SplitStrategy::SpatialBlock => "spatial_block",
            SplitStrategy::SpatioTemporal => "spatio_temporal",
        })
    }
}

impl FromStr for SplitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "random" | "randomstratified" | "stratified" => Ok(SplitStrategy::RandomStratified),
            "year" | "yearheldout" => Ok(SplitStrategy::YearHeldOut),
            "spatial" | "spatialblock" => Ok(SplitStrategy::SpatialBlock),
            "spatiotemporal" => Ok(SplitStrategy::SpatioTemporal),
            _ => Err(Error::Parameter(format!(
                "unknown split strategy {s:?} (expected random, year, spatial or spatio-temporal)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub strategy: SplitStrategy,
    pub test_fraction: f64,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            strategy: SplitStrategy::RandomStratified,
            test_fraction: 0.30,
            grid_rows: 3,
            grid_cols: 3,
            seed: DEFAULT_SEED,
        }
    }
}

impl SplitSpec {
    pub fn with_strategy(strategy: SplitStrategy) -> Self {
        SplitSpec {
            strategy,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Parameter(format!(
                "test fraction must be in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(Error::Parameter("grid dimensions must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub name: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Folds {
    pub folds: Vec<Fold>,
    /// Folds dropped because their training side lacked a class.
    pub warnings: Vec<String>,
}

/// Partitions the samples according to `spec`.
pub fn split(table: &SampleTable, spec: &SplitSpec) -> Result<Folds> {
    spec.validate()?;
    match spec.strategy {
        SplitStrategy::RandomStratified => stratified(table.labels(), spec.test_fraction, spec.seed)
            .map(|fold| Folds {
                folds: vec![fold],
                warnings: Vec::new(),
            }),
        SplitStrategy::YearHeldOut => {
            let years = require_years(table)?;
            Ok(group_folds(table.labels(), years.iter().map(|y| (*y, 0usize)), |(y, _)| {
                format!("year {y}")
            }))
        }
        SplitStrategy::SpatialBlock => {
            let cells = grid_cells(require_coords(table)?, spec.grid_rows, spec.grid_cols);
            Ok(group_folds(table.labels(), cells.into_iter().map(|c| (0, c)), |(_, c)| {
                format!("cell r{}c{}", c / spec.grid_cols + 1, c % spec.grid_cols + 1)
            }))
        }
        SplitStrategy::SpatioTemporal => {
            let years = require_years(table)?;
            let cells = grid_cells(require_coords(table)?, 2, 2);
            let keys = years.iter().copied().zip(cells);
            Ok(group_folds(table.labels(), keys, |(y, c)| {
                format!("year {y} quadrant {}", c + 1)
            }))
        }
    }
}

fn require_years(table: &SampleTable) -> Result<&[i32]> {
    table
        .years()
        .ok_or_else(|| Error::Schema("this split strategy requires a year column".into()))
}

fn require_coords(table: &SampleTable) -> Result<&[(f64, f64)]> {
    table
        .coords()
        .ok_or_else(|| Error::Schema("this split strategy requires x and y columns".into()))
}

/// Stratified holdout: `round(n_c · fraction)` test rows per class, clamped
/// so that each class keeps at least one row on both sides.
pub fn stratified(labels: &[bool], fraction: f64, seed: u64) -> Result<Fold> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [true, false] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < 2 {
            return Err(Error::DegenerateClass {
                label: if class { "positive" } else { "negative" }.into(),
                count: members.len(),
                required: 2,
            });
        }
        members.shuffle(&mut rng);
        let n = members.len();
        let n_test = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Fold {
        name: "holdout".into(),
        train,
        test,
    })
}

/// Row-major cell index on a grid over the bounding box of all points.
fn grid_cells(coords: &[(f64, f64)], rows: usize, cols: usize) -> Vec<usize> {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in coords {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let bin = |v: f64, lo: f64, hi: f64, n: usize| -> usize {
        if hi > lo {
            (((v - lo) / (hi - lo) * n as f64).floor() as usize).min(n - 1)
        } else {
            0
        }
    };
    coords
        .iter()
        .map(|&(x, y)| bin(y, y0, y1, rows) * cols + bin(x, x0, x1, cols))
        .collect()
}

/// One fold per distinct key (in sorted key order) holding that key out.
fn group_folds<K: Ord + Copy>(
    labels: &[bool],
    keys: impl Iterator<Item = K>,
    name: impl Fn(K) -> String,
) -> Folds {
    let keys: Vec<K> = keys.collect();
    let mut distinct = keys.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let mut out = Folds::default();
    for key in distinct {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..keys.len()).partition(|&i| keys[i] == key);
        let pos = train.iter().filter(|&&i| labels[i]).count();
        if pos == 0 || pos == train.len() {
            out.warnings.push(format!(
                "{}: dropped, training side has a single class",
                name(key)
            ));
            continue;
        }
        out.folds.push(Fold {
            name: name(key),
            train,
            test,
        });
    }
    out
}

/// Sweep settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub k_max: usize,
    pub methods: Vec<Method>,
    /// Diminishing-returns threshold for the sweet-spot rule.
    pub epsilon_threshold: f64,
    pub rfe_step: usize,
    /// `C` for the optional L1 arm is searched to hit each `k`.
    pub l1_zero_tol: f64,
    pub svm: SvmParams,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            k_max: 10,
            methods: vec![Method::SelectKBest, Method::Rfe],
            epsilon_threshold: DEFAULT_THRESHOLD,
            rfe_step: 1,
            l1_zero_tol: L1_ZERO_TOL,
            svm: SvmParams::default(),
        }
    }
}

impl SweepConfig {
    fn validate(&self, n_features: usize) -> Result<()> {
        if self.k_max == 0 || self.k_max > n_features {
            return Err(Error::Parameter(format!(
                "k_max must be in 1..={n_features}, got {}",
                self.k_max
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::Parameter("at least one selection method is required".into()));
        }
        if self.rfe_step == 0 {
            return Err(Error::Parameter("rfe_step must be at least 1".into()));
        }
        if !(self.epsilon_threshold.is_finite()) {
            return Err(Error::Parameter(format!("threshold must be finite, got {}", self.epsilon_threshold)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub method: Method,
    pub indices: Vec<usize>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KRecord {
    pub k: usize,
    pub method: Method,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub gap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_accuracy: Option<f64>,
    pub indices: Vec<usize>,
    pub features: Vec<String>,
    pub methods: Vec<MethodScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub records: Vec<KRecord>,
    pub epsilon_threshold: f64,
    pub k_star: usize,
    /// True when no k met the rule and `k_star` fell back to `k_max`.
    pub k_star_fallback: bool,
    /// Accuracy the winners and `k_star` were chosen on: "test" or "validation".
    pub selected_on: String,
    pub marginal: Vec<f64>,
}

/// Smallest `k` (1-based) with `acc[k] − acc[k−1] < threshold`, i.e. the
/// next feature adds less than the threshold. Falls back to `acc.len()`.
pub fn sweet_spot(accuracies: &[f64], threshold: f64) -> (usize, bool) {
    for k in 1..accuracies.len() {
        if accuracies[k] - accuracies[k - 1] < threshold {
            return (k, false);
        }
    }
    (accuracies.len(), true)
}

impl SweepReport {
    pub fn record(&self, k: usize) -> Option<&KRecord> {
        self.records.iter().find(|r| r.k == k)
    }

    fn selection_accuracies(&self) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| r.validation_accuracy.unwrap_or(r.test_accuracy))
            .collect()
    }

    /// Recomputes gaps, winners, the marginal series and `k_star` from the records.
    pub fn check_consistency(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Document(format!("inconsistent sweep report: {m}")));
        for r in &self.records {
            if r.gap != r.train_accuracy - r.test_accuracy {
                return fail(format!("gap at k = {}", r.k));
            }
            let score = |m: &MethodScore| m.validation_accuracy.unwrap_or(m.test_accuracy);
            let best = r.methods.iter().map(score).fold(f64::NEG_INFINITY, f64::max);
            if r.validation_accuracy.unwrap_or(r.test_accuracy) < best {
                return fail(format!("winner at k = {}", r.k));
            }
        }
        let acc = self.selection_accuracies();
        let (k_star, fallback) = sweet_spot(&acc, self.epsilon_threshold);
        if k_star != self.k_star || fallback != self.k_star_fallback {
            return fail(format!("k_star {} but the rule gives {k_star}", self.k_star));
        }
        let expected = if acc.len() >= 2 { marginal_series(&acc)? } else { Vec::new() };
        if expected != self.marginal {
            return fail("marginal series".into());
        }
        Ok(())
    }

    /// Plain-text accuracy-versus-k table.
    pub fn render(&self) -> String {
        let validation = self.records.iter().any(|r| r.validation_accuracy.is_some());
        let mut s = String::from("  k  method          train    test     gap    ");
        if validation {
            s.push_str("  valid    ");
        }
        s.push_str("features\n");
        for r in &self.records {
            s.push_str(&format!(
                "{:>3}  {:<14}  {:.4}   {:.4}   {:+.4}",
                r.k, r.method, r.train_accuracy, r.test_accuracy, r.gap
            ));
            if let Some(v) = r.validation_accuracy {
                s.push_str(&format!("   {v:.4}"));
            }
            s.push_str(&format!("   {}\n", r.features.join(", ")));
        }
        s.push_str(&format!(
            "k* = {}{} (threshold {}, chosen on {} accuracy)\n",
            self.k_star,
            if self.k_star_fallback { " (fallback to k_max)" } else { "" },
            self.epsilon_threshold,
            self.selected_on
        ));
        s
    }

    /// Machine-readable table, one row per `k`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "k",
            "method",
            "train_accuracy",
            "test_accuracy",
            "gap",
            "validation_accuracy",
            "features",
        ])?;
        for r in &self.records {
            w.write_record([
                r.k.to_string(),
                r.method.to_string(),
                r.train_accuracy.to_string(),
                r.test_accuracy.to_string(),
                r.gap.to_string(),
                r.validation_accuracy.map(|v| v.to_string()).unwrap_or_default(),
                r.features.join(";"),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Document(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

/// A labeled feature matrix.
#[derive(Debug, Clone, Copy)]
pub struct LabeledView<'a> {
    pub x: ArrayView2<'a, f64>,
    pub y: &'a [bool],
}

impl<'a> LabeledView<'a> {
    pub fn new(x: ArrayView2<'a, f64>, y: &'a [bool]) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::dimension("label count", x.nrows(), y.len()));
        }
        Ok(LabeledView { x, y })
    }
}

/// A classifier trained on one selected column set.
#[derive(Debug, Clone)]
pub struct Fit {
    pub indices: Vec<usize>,
    pub standardization: Standardization,
    pub absorbed: AbsorbedModel,
}

impl Fit {
    pub fn accuracy(&self, data: LabeledView<'_>) -> f64 {
        let correct = data
            .x
            .rows()
            .into_iter()
            .zip(data.y)
            .filter(|(row, &label)| {
                let raw: Vec<f64> = self.indices.iter().map(|&j| row[j]).collect();
                (self.absorbed.decision_value(&raw) > 0.0) == label
            })
            .count();
        correct as f64 / data.y.len() as f64
    }
}

/// Standardizes the selected training columns, trains the L2 model and
/// absorbs the standardization into raw-space coefficients.
pub fn fit_selected(train: LabeledView<'_>, indices: &[usize], params: &SvmParams) -> Result<Fit> {
    let sub = train.x.select(Axis(1), indices);
    let std = svm::fit_standardization(sub.view())?;
    let z = std.apply(sub.view())?;
    let model = svm::train_linear_svm(z.view(), train.y, Regularization::L2, params)?;
    if !model.converged {
        return Err(Error::Convergence {
            iterations: model.epochs,
            objective: model.objective,
        });
    }
    let absorbed = absorb_standardization(&model, &std)?;
    Ok(Fit {
        indices: indices.to_vec(),
        standardization: std,
        absorbed,
    })
}

/// Per-k sweep results with the fitted winners.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub report: SweepReport,
    /// Winning fit for each `k`, aligned with `report.records`.
    pub fits: Vec<Fit>,
}

/// Runs every method for `k = 1..=k_max`, keeps the better method per `k`
/// (ties go to the earlier entry of [`Method`] order, so SelectKBest wins),
/// and applies the sweet-spot rule. When `validation` is given, winners
/// and `k_star` are chosen on it instead of the test set.
pub fn sweep(
    train: LabeledView<'_>,
    test: LabeledView<'_>,
    validation: Option<LabeledView<'_>>,
    space: Option<&FeatureSpace>,
    config: &SweepConfig,
) -> Result<SweepOutcome> {
    let d = train.x.ncols();
    config.validate(d)?;
    if test.x.ncols() != d {
        return Err(Error::dimension("test feature count", d, test.x.ncols()));
    }
    let mut methods = config.methods.clone();
    methods.sort();
    methods.dedup();

    let ranking = if methods.contains(&Method::SelectKBest) {
        let scores = selection::anova_f_all(train.x, train.y).map_err(|e| e.context("SelectKBest"))?;
        Some(selection::rank_descending(&scores))
    } else {
        None
    };
    let path = if methods.contains(&Method::Rfe) {
        Some(
            selection::rfe_path(train.x, train.y, 1, config.rfe_step, &config.svm)
                .map_err(|e| e.context("RFE"))?,
        )
    } else {
        None
    };

    let per_k: Vec<(KRecord, Fit)> = (1..=config.k_max)
        .into_par_iter()
        .map(|k| -> Result<(KRecord, Fit)> {
            let mut scored: Vec<(MethodScore, Fit)> = Vec::new();
            for &method in &methods {
                let indices = match method {
                    Method::SelectKBest => ranking.as_ref().expect("computed above")[..k].to_vec(),
                    Method::Rfe => path.as_ref().expect("computed above").survivors(k)?,
                    Method::L1Svm => {
                        selection::l1_select_k(train.x, train.y, k, config.l1_zero_tol, &config.svm)?.indices
                    }
                };
                if indices.is_empty() {
                    continue;
                }
                let fit = fit_selected(train, &indices, &config.svm)
                    .map_err(|e| e.context(format!("{method} at k = {k}")))?;
                let score = MethodScore {
                    method,
                    indices,
                    train_accuracy: fit.accuracy(train),
                    test_accuracy: fit.accuracy(test),
                    validation_accuracy: validation.map(|v| fit.accuracy(v)),
                };
                scored.push((score, fit));
            }
            let key = |s: &MethodScore| s.validation_accuracy.unwrap_or(s.test_accuracy);
            let mut best = 0;
            for i in 1..scored.len() {
                if key(&scored[i].0) > key(&scored[best].0) {
                    best = i;
                }
            }
            let (winner, fit) = scored
                .get(best)
                .cloned()
                .ok_or_else(|| Error::Training(format!("no method selected any feature at k = {k}")))?;
            let features = winner
                .indices
                .iter()
                .map(|&j| match space.and_then(|s| s.descriptor(j)) {
                    Some(desc) => desc.to_string(),
                    None => format!("#{j}"),
                })
                .collect();
            let record = KRecord {
                k,
                method: winner.method,
                train_accuracy: winner.train_accuracy,
                test_accuracy: winner.test_accuracy,
                gap: winner.train_accuracy - winner.test_accuracy,
                validation_accuracy: winner.validation_accuracy,
                indices: winner.indices.clone(),
                features,
                methods: scored.into_iter().map(|(s, _)| s).collect(),
            };
            Ok((record, fit))
        })
        .collect::<Result<_>>()?;

    let (records, fits): (Vec<KRecord>, Vec<Fit>) = per_k.into_iter().unzip();
    let mut report = SweepReport {
        records,
        epsilon_threshold: config.epsilon_threshold,
        k_star: 0,
        k_star_fallback: false,
        selected_on: if validation.is_some() { "validation" } else { "test" }.into(),
        marginal: Vec::new(),
    };
    let acc = report.selection_accuracies();
    (report.k_star, report.k_star_fallback) = sweet_spot(&acc, config.epsilon_threshold);
    if acc.len() >= 2 {
        report.marginal = marginal_series(&acc)?;
    }
    Ok(SweepOutcome { report, fits })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub samples: usize,
    pub positive_label: String,
    pub negative_label: String,
    pub confusion: ConfusionMatrix,
    pub metrics: DerivedMetrics,
}

impl EvaluationReport {
    pub fn render(&self) -> String {
        format!(
            "{}{}\n",
            self.confusion.render(&self.positive_label, &self.negative_label),
            self.metrics
        )
    }
}

/// Confusion matrix of `model` on `table`.
pub fn evaluate(model: &TrainedModel, table: &SampleTable) -> Result<EvaluationReport> {
    if table.n_bands() != model.n_bands() {
        return Err(Error::Parameter(format!(
            "model expects {} bands but the samples have {}",
            model.n_bands(),
            table.n_bands()
        )));
    }
    if table.is_empty() {
        return Err(Error::Parameter("no samples to evaluate".into()));
    }
    let predictions: Vec<bool> = table
        .rows()
        .par_iter()
        .map(|b| model.predict_positive(b))
        .collect::<Result<_>>()?;
    let confusion = ConfusionMatrix::from_bools(&predictions, table.labels())?;
    Ok(EvaluationReport {
        samples: table.len(),
        positive_label: table.positive_label().into(),
        negative_label: table.negative_label().into(),
        confusion,
        metrics: confusion.derived(),
    })
}

/// Full discovery configuration, loadable from one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoveryConfig {
    pub version: u64,
    /// Sample file, resolved relative to the configuration file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<PathBuf>,
    pub schema: Schema,
    pub read: ReadOptions,
    pub degree: u8,
    pub epsilon: f64,
    pub split: SplitSpec,
    /// Cross-validation strategy run in addition to the holdout.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_validation: Option<SplitStrategy>,
    /// Fraction of the training side held out for choosing winners and `k_star`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_fraction: Option<f64>,
    pub sweep: SweepConfig,
    pub seed: u64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            version: CONFIG_VERSION,
            samples: None,
            schema: Schema::standard(10),
            read: ReadOptions::default(),
            degree: 2,
            epsilon: DEFAULT_EPSILON,
            split: SplitSpec::default(),
            cross_validation: None,
            validation_fraction: None,
            sweep: SweepConfig::default(),
            seed: DEFAULT_SEED,
        }
    }
}

impl DiscoveryConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: DiscoveryConfig =
            serde_json::from_str(text).map_err(|e| Error::Document(format!("configuration: {e}")))?;
        if config.version != CONFIG_VERSION {
            return Err(Error::Version {
                found: config.version,
                supported: CONFIG_VERSION,
            });
        }
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Solver and split seeds derived from the top-level seed.
    fn seeded(&self) -> (SplitSpec, SvmParams) {
        let split = SplitSpec {
            seed: self.seed,
            ..self.split.clone()
        };
        let svm = SvmParams {
            seed: self.seed,
            ..self.sweep.svm
        };
        (split, svm)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Parameter(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if let Some(f) = self.validation_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Parameter(format!("validation fraction must be in (0, 1), got {f}")));
            }
        }
        self.split.validate()?;
        if self.sweep.k_max == 0 {
            return Err(Error::Parameter("k_max must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub name: String,
    pub train_size: usize,
    pub test_size: usize,
    pub k_star: usize,
    pub test_accuracy: f64,
    pub features: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidationReport {
    pub strategy: SplitStrategy,
    pub folds: Vec<FoldResult>,
    pub warnings: Vec<String>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub min_accuracy: f64,
}

impl CrossValidationReport {
    pub fn render(&self) -> String {
        let mut s = format!("cross-validation: {} ({} folds)\n", self.strategy, self.folds.len());
        for f in &self.folds {
            s.push_str(&format!(
                "  {:<24} n_test {:>5}  k* {:>2}  acc {:.4}  {}\n",
                f.name,
                f.test_size,
                f.k_star,
                f.test_accuracy,
                f.features.join(", ")
            ));
        }
        for w in &self.warnings {
            s.push_str(&format!("  warning: {w}\n"));
        }
        s.push_str(&format!(
            "  mean {:.4}  std {:.4}  min {:.4}\n",
            self.mean_accuracy, self.std_accuracy, self.min_accuracy
        ));
        s
    }
}

/// Output of [`discover`].
#[derive(Debug, Clone)]
pub struct Discovery {
    pub model: TrainedModel,
    pub report: SweepReport,
    pub evaluation: EvaluationReport,
    pub folds: Folds,
    pub cross_validation: Option<CrossValidationReport>,
}

fn check_samples(table: &SampleTable) -> Result<()> {
    let (pos, neg) = table.class_counts();
    for (label, count) in [(table.positive_label(), pos), (table.negative_label(), neg)] {
        if count < 2 {
            return Err(Error::DegenerateClass {
                label: label.into(),
                count,
                required: 2,
            });
        }
    }
    Ok(())
}

/// Holdout split of the samples, with an optional validation carve-out
/// from the training side. Returns `(train, validation, test)` indices.
fn holdout(
    table: &SampleTable,
    split: &SplitSpec,
    validation_fraction: Option<f64>,
) -> Result<(Vec<usize>, Option<Vec<usize>>, Vec<usize>)> {
    let fold = stratified(table.labels(), split.test_fraction, split.seed)?;
    match validation_fraction {
        None => Ok((fold.train, None, fold.test)),
        Some(f) => {
            let labels: Vec<bool> = fold.train.iter().map(|&i| table.labels()[i]).collect();
            let inner = stratified(&labels, f, split.seed.wrapping_add(1))?;
            let pick = |idx: &[usize]| idx.iter().map(|&i| fold.train[i]).collect::<Vec<_>>();
            Ok((pick(&inner.train), Some(pick(&inner.test)), fold.test))
        }
    }
}

/// End-to-end discovery: holdout split, feature expansion, the sweep, and
/// the `k_star` model with absorbed coefficients and hypercube bound.
pub fn discover(table: &SampleTable, config: &DiscoveryConfig) -> Result<Discovery> {
    config.validate()?;
    check_samples(table).map_err(|e| e.context("samples"))?;
    let space = enumerate_features(table.n_bands(), config.degree)?;
    let (split, svm) = config.seeded();
    let sweep_config = SweepConfig {
        svm,
        ..config.sweep.clone()
    };

    let (train_idx, valid_idx, test_idx) =
        holdout(table, &split, config.validation_fraction).map_err(|e| e.context("split"))?;
    let features = table.features(&space, config.epsilon)?;
    let take = |idx: &[usize]| -> (Array2<f64>, Vec<bool>) {
        (
            features.select(Axis(0), idx),
            idx.iter().map(|&i| table.labels()[i]).collect(),
        )
    };
    let (train_x, train_y) = take(&train_idx);
    let (test_x, test_y) = take(&test_idx);
    let valid = valid_idx.as_deref().map(take);
    let outcome = sweep(
        LabeledView::new(train_x.view(), &train_y)?,
        LabeledView::new(test_x.view(), &test_y)?,
        valid
            .as_ref()
            .map(|(x, y)| LabeledView::new(x.view(), y))
            .transpose()?,
        Some(&space),
        &sweep_config,
    )
    .map_err(|e| e.context("sweep"))?;

    let k_star = outcome.report.k_star;
    let pos = outcome
        .report
        .records
        .iter()
        .position(|r| r.k == k_star)
        .expect("k_star is one of the swept k");
    let record = &outcome.report.records[pos];
    let fit = &outcome.fits[pos];
    let descriptors = fit
        .indices
        .iter()
        .map(|&j| space.descriptors()[j])
        .collect();
    let model = ModelSpec {
        n_bands: table.n_bands(),
        degree: config.degree,
        epsilon: config.epsilon,
        descriptors,
        bias: fit.absorbed.bias,
        weights: fit.absorbed.weights.clone(),
        positive_label: table.positive_label().into(),
        negative_label: table.negative_label().into(),
        standardization: Some(fit.standardization.clone()),
        provenance: Provenance {
            selection: Some(record.method),
            k: k_star,
            seed: config.seed,
            c: sweep_config.svm.c,
            split: Some(format!(
                "random_stratified test_fraction={}",
                split.test_fraction
            )),
            data_fingerprint: Some(table.fingerprint()),
            ..Provenance::default()
        },
    }
    .build()
    .map_err(|e| e.context("model"))?;
    let evaluation = evaluate(&model, &table.subset(&test_idx))?;
    let folds = Folds {
        folds: vec![Fold {
            name: "holdout".into(),
            train: train_idx,
            test: test_idx,
        }],
        warnings: Vec::new(),
    };
    let cross_validation = match config.cross_validation {
        Some(strategy) => Some(cross_validate(table, config, strategy).map_err(|e| e.context("cross-validation"))?),
        None => None,
    };
    Ok(Discovery {
        model,
        report: outcome.report,
        evaluation,
        folds,
        cross_validation,
    })
}

/// Repeats the sweep independently on every fold of `strategy`.
pub fn cross_validate(
    table: &SampleTable,
    config: &DiscoveryConfig,
    strategy: SplitStrategy,
) -> Result<CrossValidationReport> {
    config.validate()?;
    check_samples(table)?;
    let space = enumerate_features(table.n_bands(), config.degree)?;
    let (split, svm) = config.seeded();
    let sweep_config = SweepConfig {
        svm,
        ..config.sweep.clone()
    };
    let folds = split_with(table, &split, strategy)?;
    let features = table.features(&space, config.epsilon)?;
    let labels = table.labels();
    let mut results = Vec::with_capacity(folds.folds.len());
    for fold in &folds.folds {
        let take = |idx: &[usize]| -> (Array2<f64>, Vec<bool>) {
            (
                features.select(Axis(0), idx),
                idx.iter().map(|&i| labels[i]).collect(),
            )
        };
        let (train_x, train_y) = take(&fold.train);
        let (test_x, test_y) = take(&fold.test);
        let outcome = sweep(
            LabeledView::new(train_x.view(), &train_y)?,
            LabeledView::new(test_x.view(), &test_y)?,
            None,
            Some(&space),
            &sweep_config,
        )
        .map_err(|e| e.context(fold.name.clone()))?;
        let record = outcome
            .report
            .record(outcome.report.k_star)
            .expect("k_star is one of the swept k");
        results.push(FoldResult {
            name: fold.name.clone(),
            train_size: fold.train.len(),
            test_size: fold.test.len(),
            k_star: outcome.report.k_star,
            test_accuracy: record.test_accuracy,
            features: record.features.clone(),
        });
    }
    if results.is_empty() {
        return Err(Error::Parameter(format!("{strategy} produced no usable folds")));
    }
    let acc: Vec<f64> = results.iter().map(|r| r.test_accuracy).collect();
    let mean = acc.iter().sum::<f64>() / acc.len() as f64;
    let std = if acc.len() > 1 {
        (acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (acc.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(CrossValidationReport {
        strategy,
        folds: results,
        warnings: folds.warnings,
        mean_accuracy: mean,
        std_accuracy: std,
        min_accuracy: acc.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

fn split_with(table: &SampleTable, spec: &SplitSpec, strategy: SplitStrategy) -> Result<Folds> {
    split(
        table,
        &SplitSpec {
            strategy,
            ..spec.clone()
        },
    )
}
