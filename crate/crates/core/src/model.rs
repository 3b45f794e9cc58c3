//! The deployable classifier: selected descriptors with raw-space
//! coefficients, confidence scaling by the hypercube bound, class-level
//! embeddings, the model document, and expression export.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::selection::Method;
use crate::spectral::{enumerate_features, BandVector, FeatureDescriptor, FeatureSpace, NdPair};
use crate::svm::Standardization;

/// Version written into and required from model documents.
pub const FORMAT_VERSION: u64 = 1;

const FORMAT_NAME: &str = "ndpoly-model";

/// Largest variable count handled by exact vertex enumeration.
pub const MAX_VERTEX_VARIABLES: usize = 20;

/// Largest variable count handled by exact face enumeration.
pub const MAX_FACE_VARIABLES: usize = 12;

const ASCENT_STARTS: usize = 64;
const ASCENT_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMethod {
    /// Maximum over the vertices of a multilinear polynomial.
    ExactVertex,
    /// Maximum over stationary points of every face of the hypercube.
    ExactFace,
    /// Best value found by multi-start coordinate ascent; a lower bound.
    HeuristicAscent,
}

impl BoundMethod {
    pub fn is_exact(self) -> bool {
        !matches!(self, BoundMethod::HeuristicAscent)
    }
}

impl fmt::Display for BoundMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            BoundMethod::ExactVertex => "exact_vertex",
            BoundMethod::ExactFace => "exact_face",
            BoundMethod::HeuristicAscent => "heuristic_ascent",
        })
    }
}

/// `M = max |f|` over the closed hypercube of the model's ND variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypercubeBound {
    pub value: f64,
    pub method: BoundMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub selection: Option<Method>,
    pub k: usize,
    pub seed: u64,
    pub c: f64,
    pub split: Option<String>,
    pub data_fingerprint: Option<String>,
    pub generator: String,
}

impl Default for Provenance {
    fn default() -> Self {
        Provenance {
            selection: None,
            k: 0,
            seed: 42,
            c: 1.0,
            split: None,
            data_fingerprint: None,
            generator: concat!("ndpoly ", env!("CARGO_PKG_VERSION")).to_string(),
        }
    }
}

/// A sparse polynomial classifier on normalized differences.
#[derive(Debug)]
pub struct TrainedModel {
    n_bands: usize,
    degree: u8,
    epsilon: f64,
    descriptors: Vec<FeatureDescriptor>,
    bias: f64,
    weights: Vec<f64>,
    bound: HypercubeBound,
    positive_label: String,
    negative_label: String,
    standardization: Option<Standardization>,
    provenance: Provenance,
    bound_violations: AtomicU64,
}

impl Clone for TrainedModel {
    fn clone(&self) -> Self {
        TrainedModel {
            n_bands: self.n_bands,
            degree: self.degree,
            epsilon: self.epsilon,
            descriptors: self.descriptors.clone(),
            bias: self.bias,
            weights: self.weights.clone(),
            bound: self.bound,
            positive_label: self.positive_label.clone(),
            negative_label: self.negative_label.clone(),
            standardization: self.standardization.clone(),
            provenance: self.provenance.clone(),
            bound_violations: AtomicU64::new(self.bound_violations.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for TrainedModel {
    fn eq(&self, other: &Self) -> bool {
        self.n_bands == other.n_bands
            && self.degree == other.degree
            && self.epsilon == other.epsilon
            && self.descriptors == other.descriptors
            && self.bias == other.bias
            && self.weights == other.weights
            && self.bound == other.bound
            && self.positive_label == other.positive_label
            && self.negative_label == other.negative_label
            && self.standardization == other.standardization
            && self.provenance == other.provenance
    }
}

/// Builder input for [`TrainedModel`].
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub n_bands: usize,
    pub degree: u8,
    pub epsilon: f64,
    pub descriptors: Vec<FeatureDescriptor>,
    pub bias: f64,
    pub weights: Vec<f64>,
    pub positive_label: String,
    pub negative_label: String,
    pub standardization: Option<Standardization>,
    pub provenance: Provenance,
}

impl ModelSpec {
    /// A model with default labels and provenance.
    pub fn new(
        n_bands: usize,
        degree: u8,
        descriptors: Vec<FeatureDescriptor>,
        bias: f64,
        weights: Vec<f64>,
    ) -> Self {
        ModelSpec {
            n_bands,
            degree,
            epsilon: crate::spectral::DEFAULT_EPSILON,
            descriptors,
            bias,
            weights,
            positive_label: "positive".into(),
            negative_label: "negative".into(),
            standardization: None,
            provenance: Provenance::default(),
        }
    }

    /// Validates the specification and computes the hypercube bound.
    pub fn build(self) -> Result<TrainedModel> {
        self.validate()?;
        let bound = hypercube_bound(&self.descriptors, self.bias, &self.weights);
        Ok(self.with_bound(bound))
    }

    fn with_bound(self, bound: HypercubeBound) -> TrainedModel {
        TrainedModel {
            n_bands: self.n_bands,
            degree: self.degree,
            epsilon: self.epsilon,
            descriptors: self.descriptors,
            bias: self.bias,
            weights: self.weights,
            bound,
            positive_label: self.positive_label,
            negative_label: self.negative_label,
            standardization: self.standardization,
            provenance: self.provenance,
            bound_violations: AtomicU64::new(0),
        }
    }

    fn validate(&self) -> Result<()> {
        let space = enumerate_features(self.n_bands, self.degree)?;
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Parameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.descriptors.len() != self.weights.len() {
            return Err(Error::dimension(
                "coefficient count",
                self.descriptors.len(),
                self.weights.len(),
            ));
        }
        for d in &self.descriptors {
            if space.index_of(d).is_none() {
                return Err(Error::Parameter(format!(
                    "feature {d} is outside the {}-band degree-{} space",
                    self.n_bands, self.degree
                )));
            }
        }
        for (i, d) in self.descriptors.iter().enumerate() {
            if self.descriptors[..i].contains(d) {
                return Err(Error::Parameter(format!("feature {d} appears twice")));
            }
        }
        if !self.bias.is_finite() || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite {
                context: "model coefficients".into(),
            });
        }
        if self.positive_label == self.negative_label {
            return Err(Error::Parameter(format!(
                "class labels must differ, both are {:?}",
                self.positive_label
            )));
        }
        Ok(())
    }
}

impl TrainedModel {
    pub fn n_bands(&self) -> usize {
        self.n_bands
    }

    pub fn degree(&self) -> u8 {
        self.degree
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn descriptors(&self) -> &[FeatureDescriptor] {
        &self.descriptors
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bound(&self) -> HypercubeBound {
        self.bound
    }

    pub fn positive_label(&self) -> &str {
        &self.positive_label
    }

    pub fn negative_label(&self) -> &str {
        &self.negative_label
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn space(&self) -> Result<FeatureSpace> {
        enumerate_features(self.n_bands, self.degree)
    }

    /// Number of evaluated inputs whose decision value exceeded the bound.
    pub fn bound_violations(&self) -> u64 {
        self.bound_violations.load(Ordering::Relaxed)
    }

    fn check_bands(&self, bands: &BandVector) -> Result<()> {
        if bands.len() != self.n_bands {
            return Err(Error::dimension("band count", self.n_bands, bands.len()));
        }
        Ok(())
    }

    /// Decision value on unvalidated reflectances of the right length.
    pub fn decision_value_raw(&self, bands: &[f64]) -> f64 {
        let mut f = self.bias;
        for (d, w) in self.descriptors.iter().zip(&self.weights) {
            f += w * d.evaluate(bands, self.epsilon);
        }
        if f.abs() > self.bound.value {
            self.bound_violations.fetch_add(1, Ordering::Relaxed);
        }
        f
    }

    /// `w̃₀ + Σ w̃ⱼ φⱼ(b)`.
    pub fn decision_value(&self, bands: &BandVector) -> Result<f64> {
        self.check_bands(bands)?;
        Ok(self.decision_value_raw(bands.values()))
    }

    /// True for the positive class; a zero decision value is negative.
    pub fn predict_positive(&self, bands: &BandVector) -> Result<bool> {
        Ok(self.decision_value(bands)? > 0.0)
    }

    pub fn predict(&self, bands: &BandVector) -> Result<&str> {
        Ok(if self.predict_positive(bands)? {
            &self.positive_label
        } else {
            &self.negative_label
        })
    }

    /// `f(b) / M`, clamped to [−1, 1].
    pub fn confidence(&self, bands: &BandVector) -> Result<f64> {
        let f = self.decision_value(bands)?;
        Ok((f / self.bound.value).clamp(-1.0, 1.0))
    }

    pub fn compute_hypercube_bound(&self) -> HypercubeBound {
        hypercube_bound(&self.descriptors, self.bias, &self.weights)
    }

    /// Dense coefficient vector over the full feature space, intercept first.
    pub fn class_embedding(&self) -> Result<ClassEmbedding> {
        let space = self.space()?;
        let mut coefficients = vec![0.0; space.len() + 1];
        coefficients[0] = self.bias;
        for (d, &w) in self.descriptors.iter().zip(&self.weights) {
            let idx = space.index_of(d).ok_or_else(|| {
                Error::Parameter(format!("feature {d} is not representable in the model space"))
            })?;
            coefficients[idx + 1] = w;
        }
        Ok(ClassEmbedding {
            n_bands: self.n_bands,
            degree: self.degree,
            coefficients,
        })
    }

    pub fn to_spec(&self) -> ModelSpec {
        ModelSpec {
            n_bands: self.n_bands,
            degree: self.degree,
            epsilon: self.epsilon,
            descriptors: self.descriptors.clone(),
            bias: self.bias,
            weights: self.weights.clone(),
            positive_label: self.positive_label.clone(),
            negative_label: self.negative_label.clone(),
            standardization: self.standardization.clone(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Sparse class representation in the canonical feature ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEmbedding {
    pub n_bands: usize,
    pub degree: u8,
    /// Intercept at position 0, then one entry per feature.
    pub coefficients: Vec<f64>,
}

impl ClassEmbedding {
    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Positions (intercept = 0) of the nonzero coefficients.
    pub fn support(&self) -> Vec<usize> {
        (0..self.coefficients.len())
            .filter(|&i| self.coefficients[i] != 0.0)
            .collect()
    }

    /// Cosine similarity; `None` when either vector is zero or lengths differ.
    pub fn cosine_similarity(&self, other: &ClassEmbedding) -> Option<f64> {
        if self.coefficients.len() != other.coefficients.len() {
            return None;
        }
        let dot: f64 = self.coefficients.iter().zip(&other.coefficients).map(|(a, b)| a * b).sum();
        let na = self.coefficients.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nb = other.coefficients.iter().map(|b| b * b).sum::<f64>().sqrt();
        (na > 0.0 && nb > 0.0).then(|| dot / (na * nb))
    }

    /// Rebuilds a model from the nonzero entries.
    pub fn to_model(&self, epsilon: f64) -> Result<TrainedModel> {
        let space = enumerate_features(self.n_bands, self.degree)?;
        if self.coefficients.len() != space.len() + 1 {
            return Err(Error::dimension(
                "embedding length",
                space.len() + 1,
                self.coefficients.len(),
            ));
        }
        let mut descriptors = Vec::new();
        let mut weights = Vec::new();
        for (idx, &w) in self.coefficients[1..].iter().enumerate() {
            if w != 0.0 {
                descriptors.push(space.descriptors()[idx]);
                weights.push(w);
            }
        }
        let mut spec = ModelSpec::new(self.n_bands, self.degree, descriptors, self.coefficients[0], weights);
        spec.epsilon = epsilon;
        spec.build()
    }
}

/// The decision function as a quadratic polynomial in its ND variables.
#[derive(Debug, Clone)]
struct NdPolynomial {
    constant: f64,
    linear: Vec<f64>,
    square: Vec<f64>,
    /// Symmetric, zero diagonal: the coefficient of `xᵤxᵥ` is `cross[u][v]`.
    cross: Vec<Vec<f64>>,
}

impl NdPolynomial {
    fn new(descriptors: &[FeatureDescriptor], bias: f64, weights: &[f64]) -> Self {
        let mut vars: Vec<NdPair> = descriptors.iter().flat_map(|d| d.pairs()).collect();
        vars.sort();
        vars.dedup();
        let n = vars.len();
        let pos = |p: &NdPair| vars.binary_search(p).expect("variable collected above");
        let mut poly = NdPolynomial {
            constant: bias,
            linear: vec![0.0; n],
            square: vec![0.0; n],
            cross: vec![vec![0.0; n]; n],
        };
        for (d, &w) in descriptors.iter().zip(weights) {
            match d {
                FeatureDescriptor::Linear(p) => poly.linear[pos(p)] += w,
                FeatureDescriptor::Squared(p) => poly.square[pos(p)] += w,
                FeatureDescriptor::Product(a, b) => {
                    let (u, v) = (pos(a), pos(b));
                    poly.cross[u][v] += w;
                    poly.cross[v][u] += w;
                }
            }
        }
        poly
    }

    fn vars(&self) -> usize {
        self.linear.len()
    }

    fn is_multilinear(&self) -> bool {
        self.square.iter().all(|&q| q == 0.0)
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let mut f = self.constant;
        for v in 0..self.vars() {
            f += x[v] * (self.linear[v] + self.square[v] * x[v]);
            for u in 0..v {
                f += self.cross[u][v] * x[u] * x[v];
            }
        }
        f
    }

    /// Max of |f| over {−1, 1}^V, visiting vertices in Gray-code order.
    fn vertex_max(&self) -> f64 {
        let n = self.vars();
        let mut x = vec![-1.0; n];
        let mut f = self.eval(&x);
        // slope[v] = ∂f/∂x_v without the square term, which flips leave unchanged
        let mut slope: Vec<f64> = (0..n)
            .map(|v| self.linear[v] + (0..n).map(|u| self.cross[u][v] * x[u]).sum::<f64>())
            .collect();
        let mut best = f.abs();
        for step in 1u64..(1u64 << n) {
            let v = step.trailing_zeros() as usize;
            f -= 2.0 * x[v] * slope[v];
            let change = -2.0 * x[v];
            x[v] = -x[v];
            for u in 0..n {
                slope[u] += self.cross[u][v] * change;
            }
            best = best.max(f.abs());
        }
        // recompute the last value exactly to limit drift at the reported maximum
        best.max(self.eval(&x).abs())
    }

    /// Max of |f| over stationary points of every face of [−1, 1]^V.
    fn face_max(&self) -> f64 {
        let n = self.vars();
        let mut best: f64 = 0.0;
        let mut state = vec![0u8; n]; // 0 = −1, 1 = +1, 2 = free
        let total = 3usize.pow(n as u32);
        let mut x = vec![0.0; n];
        for _ in 0..total {
            if let Some(value) = self.face_stationary(&state, &mut x) {
                best = best.max(value.abs());
            }
            for s in state.iter_mut() {
                *s += 1;
                if *s < 3 {
                    break;
                }
                *s = 0;
            }
        }
        best
    }

    /// Solves the stationarity system on one face; `None` when it is
    /// singular or the solution leaves the face.
    fn face_stationary(&self, state: &[u8], x: &mut [f64]) -> Option<f64> {
        let free: Vec<usize> = (0..state.len()).filter(|&v| state[v] == 2).collect();
        for (v, &s) in state.iter().enumerate() {
            x[v] = match s {
                0 => -1.0,
                1 => 1.0,
                _ => 0.0,
            };
        }
        if free.is_empty() {
            return Some(self.eval(x));
        }
        let m = free.len();
        let mut a = vec![vec![0.0; m + 1]; m];
        for (r, &v) in free.iter().enumerate() {
            for (c, &u) in free.iter().enumerate() {
                a[r][c] = if u == v { 2.0 * self.square[v] } else { self.cross[u][v] };
            }
            let fixed: f64 = (0..state.len())
                .filter(|&u| state[u] != 2)
                .map(|u| self.cross[u][v] * x[u])
                .sum();
            a[r][m] = -(self.linear[v] + fixed);
        }
        let solution = solve_linear(&mut a)?;
        for (&v, &value) in free.iter().zip(&solution) {
            if !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&value) {
                return None;
            }
            x[v] = value.clamp(-1.0, 1.0);
        }
        Some(self.eval(x))
    }

    /// Best |f| from seeded multi-start cyclic coordinate ascent.
    fn ascent_max(&self) -> f64 {
        let n = self.vars();
        let mut rng = ChaCha8Rng::seed_from_u64(ASCENT_SEED);
        let mut best: f64 = self.constant.abs();
        let mut x = vec![0.0; n];
        for _ in 0..ASCENT_STARTS {
            for sign in [1.0, -1.0] {
                for xi in x.iter_mut() {
                    *xi = rng.random_range(-1.0..=1.0);
                }
                let mut current = sign * self.eval(&x);
                for _ in 0..1000 {
                    let before = current;
                    for v in 0..n {
                        // restriction a2 t² + a1 t + const in coordinate v
                        let a2 = sign * self.square[v];
                        let a1 = sign
                            * (self.linear[v]
                                + (0..n).filter(|&u| u != v).map(|u| self.cross[u][v] * x[u]).sum::<f64>());
                        let mut candidates = vec![-1.0, 1.0];
                        if a2 < 0.0 {
                            let t = -a1 / (2.0 * a2);
                            if (-1.0..=1.0).contains(&t) {
                                candidates.push(t);
                            }
                        }
                        let value = |t: f64| a2 * t * t + a1 * t;
                        let mut choice = x[v];
                        for t in candidates {
                            if value(t) > value(choice) {
                                choice = t;
                            }
                        }
                        x[v] = choice;
                    }
                    current = sign * self.eval(&x);
                    if current <= before + 1e-15 * before.abs().max(1.0) {
                        break;
                    }
                }
                best = best.max(current.abs());
            }
        }
        best
    }
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn solve_linear(a: &mut [Vec<f64>]) -> Option<Vec<f64>> {
    let m = a.len();
    let scale = a
        .iter()
        .flat_map(|r| r[..m].iter())
        .fold(0.0f64, |s, v| s.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..m {
        let pivot = (col..m).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))?;
        if a[pivot][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot);
        for r in (col + 1)..m {
            let factor = a[r][col] / a[col][col];
            if factor != 0.0 {
                for c in col..=m {
                    a[r][c] -= factor * a[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0; m];
    for r in (0..m).rev() {
        let tail: f64 = ((r + 1)..m).map(|c| a[r][c] * x[c]).sum();
        x[r] = (a[r][m] - tail) / a[r][r];
    }
    Some(x)
}

/// Maximum of `|f|` over the hypercube of ND variables used by the model.
///
/// Multilinear models with at most [`MAX_VERTEX_VARIABLES`] variables are
/// maximized exactly over the vertices. Models with squared terms and at
/// most [`MAX_FACE_VARIABLES`] variables are maximized exactly over the
/// stationary points of all faces. Anything larger falls back to
/// coordinate ascent, whose result is only a lower bound. The value is
/// floored at the smallest positive normal number.
pub fn hypercube_bound(descriptors: &[FeatureDescriptor], bias: f64, weights: &[f64]) -> HypercubeBound {
    let poly = NdPolynomial::new(descriptors, bias, weights);
    let n = poly.vars();
    let (value, method) = if poly.is_multilinear() && n <= MAX_VERTEX_VARIABLES {
        (poly.vertex_max(), BoundMethod::ExactVertex)
    } else if n <= MAX_FACE_VARIABLES {
        (poly.face_max(), BoundMethod::ExactFace)
    } else {
        let mut best = poly.ascent_max();
        if n <= MAX_VERTEX_VARIABLES {
            best = best.max(poly.vertex_max());
        }
        (best, BoundMethod::HeuristicAscent)
    };
    HypercubeBound {
        value: value.max(f64::MIN_POSITIVE),
        method,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Labels {
    positive: String,
    negative: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelBody {
    n_bands: usize,
    degree: u8,
    epsilon: f64,
    features: Vec<FeatureDescriptor>,
    bias: f64,
    coefficients: Vec<f64>,
    hypercube_bound: HypercubeBound,
    labels: Labels,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    standardization: Option<Standardization>,
    provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    format: String,
    version: u64,
    checksum: String,
    model: ModelBody,
}

fn body_checksum(body: &ModelBody) -> Result<String> {
    let bytes = serde_json::to_vec(body)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl TrainedModel {
    /// Serializes the model as a versioned, checksummed JSON document.
    pub fn to_document(&self) -> Result<String> {
        let body = ModelBody {
            n_bands: self.n_bands,
            degree: self.degree,
            epsilon: self.epsilon,
            features: self.descriptors.clone(),
            bias: self.bias,
            coefficients: self.weights.clone(),
            hypercube_bound: self.bound,
            labels: Labels {
                positive: self.positive_label.clone(),
                negative: self.negative_label.clone(),
            },
            standardization: self.standardization.clone(),
            provenance: self.provenance.clone(),
        };
        let doc = ModelDocument {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            checksum: body_checksum(&body)?,
            model: body,
        };
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        Ok(text)
    }

    /// Parses and verifies a model document.
    pub fn from_document(text: &str) -> Result<TrainedModel> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Document(format!("invalid JSON: {e}")))?;
        let version = value
            .get("version")
            .ok_or_else(|| Error::Document("missing \"version\"".into()))?;
        let version = version
            .as_u64()
            .ok_or_else(|| Error::Document(format!("\"version\" must be an integer, got {version}")))?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let doc: ModelDocument =
            serde_json::from_value(value).map_err(|e| Error::Document(e.to_string()))?;
        if doc.format != FORMAT_NAME {
            return Err(Error::Document(format!(
                "format is {:?}, expected {FORMAT_NAME:?}",
                doc.format
            )));
        }
        let computed = body_checksum(&doc.model)?;
        if computed != doc.checksum {
            return Err(Error::Checksum {
                stored: doc.checksum,
                computed,
            });
        }
        let body = doc.model;
        if body.features.len() != body.coefficients.len() {
            return Err(Error::Document(format!(
                "{} features but {} coefficients",
                body.features.len(),
                body.coefficients.len()
            )));
        }
        let bound = body.hypercube_bound;
        if !(bound.value > 0.0 && bound.value.is_finite()) {
            return Err(Error::Document(format!(
                "hypercube bound must be positive, got {}",
                bound.value
            )));
        }
        let spec = ModelSpec {
            n_bands: body.n_bands,
            degree: body.degree,
            epsilon: body.epsilon,
            descriptors: body.features,
            bias: body.bias,
            weights: body.coefficients,
            positive_label: body.labels.positive,
            negative_label: body.labels.negative,
            standardization: body.standardization,
            provenance: body.provenance,
        };
        spec.validate().map_err(|e| e.context("model document"))?;
        Ok(spec.with_bound(bound))
    }

    pub fn load(path: &Path) -> Result<TrainedModel> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_document(&text).map_err(|e| e.context(path.display().to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dialect {
    EarthEngine,
    GenericInfix,
}

impl FromStr for Dialect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "earth-engine" | "ee" | "gee" => Ok(Dialect::EarthEngine),
            "generic-infix" | "generic" | "infix" => Ok(Dialect::GenericInfix),
            _ => Err(Error::Parameter(format!(
                "unknown dialect {s:?} (expected earth-engine or generic-infix)"
            ))),
        }
    }
}

/// Shortest literal that parses back to `v`; exponent form outside [1e-4, 1e16).
pub fn format_literal(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:e}");
    let exponent: i32 = sci
        .rsplit_once('e')
        .and_then(|(_, e)| e.parse().ok())
        .unwrap_or(0);
    if !(-4..16).contains(&exponent) {
        sci
    } else {
        format!("{v}")
    }
}

/// Default band variable names `B1..Bn`.
pub fn default_band_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("B{i}")).collect()
}

/// Arithmetic expression computing the decision value from named bands.
///
/// Template: the bias literal, then per feature ` + w*T` or ` - |w|*T`, where
/// `T` is `((Bi-Bj)/(Bi+Bj+ε))` for a linear term, `(T₁*T₁)` for a squared
/// term and `(T₁*T₂)` for a product.
pub fn export_expression(model: &TrainedModel, dialect: Dialect, band_names: &[String]) -> Result<String> {
    if band_names.len() != model.n_bands() {
        return Err(Error::dimension("band name count", model.n_bands(), band_names.len()));
    }
    let band = |i: usize| match dialect {
        Dialect::EarthEngine => format!("b('{}')", band_names[i]),
        Dialect::GenericInfix => band_names[i].clone(),
    };
    let eps = format_literal(model.epsilon());
    let nd = |p: NdPair| {
        let (a, b) = (band(p.i()), band(p.j()));
        format!("(({a}-{b})/({a}+{b}+{eps}))")
    };
    let mut out = format_literal(model.bias());
    for (d, &w) in model.descriptors().iter().zip(model.weights()) {
        let term = match *d {
            FeatureDescriptor::Linear(p) => nd(p),
            FeatureDescriptor::Squared(p) => format!("({}*{})", nd(p), nd(p)),
            FeatureDescriptor::Product(a, b) => format!("({}*{})", nd(a), nd(b)),
        };
        let (op, mag) = if w.is_sign_negative() { ("-", -w) } else { ("+", w) };
        out.push_str(&format!(" {op} {}*{term}", format_literal(mag)));
    }
    Ok(out)
}
