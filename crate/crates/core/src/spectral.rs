//! Normalized differences and the degree-≤2 polynomial feature space built on them.
//!
//! Features are laid out in a fixed canonical order: every linear term, then
//! every squared term, then every pairwise product. Within the linear and
//! squared blocks band pairs `(i, j)`, `i < j`, follow lexicographic order;
//! products follow lexicographic order over pairs of pairs. The order is
//! part of the model file format and must not change.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regularization constant added to every normalized-difference denominator.
pub const DEFAULT_EPSILON: f64 = 1e-10;

/// Highest polynomial degree the enumerator supports.
pub const MAX_DEGREE: u8 = 2;

/// What to do with negative reflectance values on input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativePolicy {
    #[default]
    Reject,
    Clamp,
}

impl FromStr for NegativePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reject" => Ok(NegativePolicy::Reject),
            "clamp" => Ok(NegativePolicy::Clamp),
            other => Err(Error::Parameter(format!(
                "unknown negative policy {other:?} (expected reject or clamp)"
            ))),
        }
    }
}

/// Validated, non-negative reflectance values for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct BandVector(Vec<f64>);

impl BandVector {
    /// Validates `values`; bands are named `b1..bn` in error messages.
    pub fn new(values: Vec<f64>, policy: NegativePolicy) -> Result<Self> {
        Self::validated(values, policy, |i| format!("b{}", i + 1)).map(|(v, _)| v)
    }

    /// Validates `values` and returns the number of clamped cells alongside.
    pub(crate) fn validated(
        mut values: Vec<f64>,
        policy: NegativePolicy,
        band_name: impl Fn(usize) -> String,
    ) -> Result<(Self, usize)> {
        if values.len() < 2 {
            return Err(Error::InvalidBandCount(values.len()));
        }
        let mut clamped = 0;
        for (i, v) in values.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("band {}", band_name(i)),
                });
            }
            if *v < 0.0 {
                match policy {
                    NegativePolicy::Reject => {
                        return Err(Error::NegativeReflectance {
                            band: band_name(i),
                            value: *v,
                        })
                    }
                    NegativePolicy::Clamp => {
                        *v = 0.0;
                        clamped += 1;
                    }
                }
            }
        }
        Ok((BandVector(values), clamped))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Multiplies every band by `alpha` (an illumination change).
    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * alpha).collect(), NegativePolicy::Reject)
    }
}

#[inline]
pub(crate) fn nd(bi: f64, bj: f64, epsilon: f64) -> f64 {
    (bi - bj) / (bi + bj + epsilon)
}

/// Normalized difference `(b_i - b_j) / (b_i + b_j + epsilon)`.
///
/// The result lies strictly inside `(-1, 1)` for non-negative inputs.
pub fn compute_nd(bi: f64, bj: f64, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Parameter(format!("epsilon must be positive, got {epsilon}")));
    }
    for (name, v) in [("first", bi), ("second", bj)] {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: format!("{name} band"),
            });
        }
        if v < 0.0 {
            return Err(Error::NegativeReflectance {
                band: name.to_string(),
                value: v,
            });
        }
    }
    Ok(nd(bi, bj, epsilon))
}

/// An ordered band pair `(i, j)` with `i < j` (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NdPair {
    i: usize,
    j: usize,
}

impl NdPair {
    pub fn new(i: usize, j: usize) -> Result<Self> {
        if i >= j {
            return Err(Error::Parameter(format!(
                "band pair ({i}, {j}) must satisfy i < j"
            )));
        }
        Ok(NdPair { i, j })
    }

    /// Builds a pair from 1-based band numbers, as used in descriptor names.
    pub fn one_based(i: usize, j: usize) -> Result<Self> {
        if i == 0 || j == 0 {
            return Err(Error::Parameter("band numbers are 1-based".into()));
        }
        Self::new(i - 1, j - 1)
    }

    pub fn i(&self) -> usize {
        self.i
    }

    pub fn j(&self) -> usize {
        self.j
    }

    /// Position of this pair among all `C(n, 2)` pairs in lexicographic order.
    pub fn index(&self, n_bands: usize) -> usize {
        self.i * n_bands - self.i * (self.i + 1) / 2 + (self.j - self.i - 1)
    }

    pub fn from_index(index: usize, n_bands: usize) -> Option<Self> {
        let mut rest = index;
        for i in 0..n_bands.saturating_sub(1) {
            let row = n_bands - i - 1;
            if rest < row {
                return Some(NdPair { i, j: i + 1 + rest });
            }
            rest -= row;
        }
        None
    }

    pub fn evaluate(&self, bands: &[f64], epsilon: f64) -> f64 {
        nd(bands[self.i], bands[self.j], epsilon)
    }
}

impl fmt::Display for NdPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ND({},{})", self.i + 1, self.j + 1)
    }
}

/// Symbolic identity of one polynomial feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureDescriptor {
    Linear(NdPair),
    Squared(NdPair),
    /// Invariant: the first pair precedes the second.
    Product(NdPair, NdPair),
}

impl FeatureDescriptor {
    pub fn product(a: NdPair, b: NdPair) -> Result<Self> {
        if a >= b {
            return Err(Error::Parameter(format!(
                "product {a}*{b}: first pair must precede second"
            )));
        }
        Ok(FeatureDescriptor::Product(a, b))
    }

    pub fn degree(&self) -> u8 {
        match self {
            FeatureDescriptor::Linear(_) => 1,
            _ => 2,
        }
    }

    /// Distinct band pairs the feature depends on.
    pub fn pairs(&self) -> Vec<NdPair> {
        match *self {
            FeatureDescriptor::Linear(p) | FeatureDescriptor::Squared(p) => vec![p],
            FeatureDescriptor::Product(a, b) => vec![a, b],
        }
    }

    /// Largest 0-based band index referenced.
    pub fn max_band(&self) -> usize {
        self.pairs().iter().map(|p| p.j).max().unwrap_or(0)
    }

    pub fn evaluate(&self, bands: &[f64], epsilon: f64) -> f64 {
        match *self {
            FeatureDescriptor::Linear(p) => p.evaluate(bands, epsilon),
            FeatureDescriptor::Squared(p) => {
                let v = p.evaluate(bands, epsilon);
                v * v
            }
            FeatureDescriptor::Product(a, b) => {
                a.evaluate(bands, epsilon) * b.evaluate(bands, epsilon)
            }
        }
    }
}

impl fmt::Display for FeatureDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureDescriptor::Linear(p) => write!(f, "{p}"),
            FeatureDescriptor::Squared(p) => write!(f, "{p}^2"),
            FeatureDescriptor::Product(a, b) => write!(f, "{a}*{b}"),
        }
    }
}

fn parse_pair(s: &str) -> Result<NdPair> {
    let bad = || Error::Parameter(format!("malformed normalized difference {s:?}"));
    let inner = s
        .strip_prefix("ND(")
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(bad)?;
    let (a, b) = inner.split_once(',').ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    NdPair::one_based(a, b)
}

impl FromStr for FeatureDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(base) = s.strip_suffix("^2") {
            return Ok(FeatureDescriptor::Squared(parse_pair(base)?));
        }
        if let Some((a, b)) = s.split_once('*') {
            return FeatureDescriptor::product(parse_pair(a)?, parse_pair(b)?);
        }
        Ok(FeatureDescriptor::Linear(parse_pair(s)?))
    }
}

impl Serialize for FeatureDescriptor {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FeatureDescriptor {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Number of distinct normalized differences for `n` bands, `C(n, 2)`.
pub fn nd_count(n_bands: usize) -> usize {
    n_bands * n_bands.saturating_sub(1) / 2
}

/// The enumerated feature space for a band count and degree.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpace {
    n_bands: usize,
    degree: u8,
    descriptors: Vec<FeatureDescriptor>,
}

/// Enumerates every monomial of degree ≤ `degree` in the normalized-difference
/// basis, in canonical order.
pub fn enumerate_features(n_bands: usize, degree: u8) -> Result<FeatureSpace> {
    if n_bands < 2 {
        return Err(Error::InvalidBandCount(n_bands));
    }
    let pairs: Vec<NdPair> = (0..n_bands)
        .flat_map(|i| ((i + 1)..n_bands).map(move |j| NdPair { i, j }))
        .collect();
    let mut descriptors: Vec<FeatureDescriptor> =
        pairs.iter().copied().map(FeatureDescriptor::Linear).collect();
    match degree {
        1 => {}
        2 => {
            descriptors.extend(pairs.iter().copied().map(FeatureDescriptor::Squared));
            for (p, &a) in pairs.iter().enumerate() {
                for &b in &pairs[p + 1..] {
                    descriptors.push(FeatureDescriptor::Product(a, b));
                }
            }
        }
        d => return Err(Error::UnsupportedDegree(d)),
    }
    Ok(FeatureSpace {
        n_bands,
        degree,
        descriptors,
    })
}

impl FeatureSpace {
    pub fn n_bands(&self) -> usize {
        self.n_bands
    }

    pub fn degree(&self) -> u8 {
        self.degree
    }

    pub fn descriptors(&self) -> &[FeatureDescriptor] {
        &self.descriptors
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn nd_count(&self) -> usize {
        nd_count(self.n_bands)
    }

    pub fn descriptor(&self, index: usize) -> Option<FeatureDescriptor> {
        self.descriptors.get(index).copied()
    }

    /// Canonical flat index of `descriptor`, computed in closed form.
    /// `None` when the descriptor does not belong to this space.
    pub fn index_of(&self, descriptor: &FeatureDescriptor) -> Option<usize> {
        if descriptor.max_band() >= self.n_bands || descriptor.degree() > self.degree {
            return None;
        }
        let m = self.nd_count();
        match *descriptor {
            FeatureDescriptor::Linear(p) => Some(p.index(self.n_bands)),
            FeatureDescriptor::Squared(p) => Some(m + p.index(self.n_bands)),
            FeatureDescriptor::Product(a, b) => {
                let p = a.index(self.n_bands);
                let q = b.index(self.n_bands);
                if p >= q {
                    return None;
                }
                Some(2 * m + p * m - p * (p + 1) / 2 + (q - p - 1))
            }
        }
    }

    /// Writes the feature vector of `bands` into `out` (length `self.len()`).
    pub(crate) fn fill(&self, bands: &[f64], epsilon: f64, nds: &mut Vec<f64>, out: &mut [f64]) {
        nds.clear();
        for i in 0..self.n_bands {
            for j in (i + 1)..self.n_bands {
                nds.push(nd(bands[i], bands[j], epsilon));
            }
        }
        let m = nds.len();
        out[..m].copy_from_slice(nds);
        if self.degree >= 2 {
            for (slot, v) in out[m..2 * m].iter_mut().zip(nds.iter()) {
                *slot = v * v;
            }
            let mut k = 2 * m;
            for p in 0..m {
                let a = nds[p];
                for &b in &nds[p + 1..] {
                    out[k] = a * b;
                    k += 1;
                }
            }
        }
    }

    fn check_bands(&self, bands: &BandVector) -> Result<()> {
        if bands.len() != self.n_bands {
            return Err(Error::dimension("band count", self.n_bands, bands.len()));
        }
        Ok(())
    }
}

/// Evaluates every feature of `space` on one observation (the pixel-level embedding).
pub fn evaluate_features(bands: &BandVector, space: &FeatureSpace, epsilon: f64) -> Result<Vec<f64>> {
    space.check_bands(bands)?;
    let mut out = vec![0.0; space.len()];
    space.fill(bands.values(), epsilon, &mut Vec::new(), &mut out);
    Ok(out)
}

/// Dense row-major `N × D` feature matrix for a batch of observations.
///
/// Memory use is `N · D · 8` bytes; 2,000 rows of the 10-band degree-2 space
/// take about 17 MB.
pub fn evaluate_batch(rows: &[BandVector], space: &FeatureSpace, epsilon: f64) -> Result<Array2<f64>> {
    for b in rows {
        space.check_bands(b)?;
    }
    let d = space.len();
    let mut out = Array2::zeros((rows.len(), d));
    if d == 0 {
        return Ok(out);
    }
    let flat = out
        .as_slice_mut()
        .expect("freshly allocated arrays are contiguous");
    flat.par_chunks_mut(d)
        .zip(rows.par_iter())
        .for_each_init(Vec::new, |nds, (row, b)| space.fill(b.values(), epsilon, nds, row));
    Ok(out)
}

/// Binomial coefficient `C(n, k)`; `None` on overflow.
pub fn binomial(n: u64, k: u64) -> Option<u64> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for t in 0..k {
        acc = acc * u128::from(n - t) / u128::from(t + 1);
        if acc > u128::from(u64::MAX) {
            return None;
        }
    }
    Some(acc as u64)
}

/// Number of non-constant monomials of degree ≤ `degree` in `base_nds`
/// variables: `C(m + d, d) - 1`.
pub fn embedding_dimension(base_nds: u64, degree: u64) -> u64 {
    binomial(base_nds + degree, degree)
        .expect("embedding dimension overflows u64")
        - 1
}
