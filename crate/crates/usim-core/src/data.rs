//! Shared data model: representation sets, predictive families, fitted linear
//! maps, softmax task heads, and the per-pair similarity report.
//!
//! Everything here is immutable after construction. Operations take shared
//! references and return new values, so any of them may run concurrently on
//! the same inputs.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{pairwise_col_sums, pairwise_sum};

/// An n×d activation matrix with optional per-sample labels and a name used
/// in reports.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationSet {
    name: String,
    data: DMatrix<f64>,
    labels: Option<Vec<usize>>,
}

impl RepresentationSet {
    /// Validates and wraps an activation matrix: n ≥ 2, d ≥ 1, every entry
    /// finite, and labels (when present) one per row.
    pub fn new(
        name: impl Into<String>,
        data: DMatrix<f64>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let name = name.into();
        if data.nrows() < 2 {
            return Err(Error::InvalidData(format!(
                "representation '{name}' needs at least 2 samples, got {}",
                data.nrows()
            )));
        }
        if data.ncols() < 1 {
            return Err(Error::InvalidData(format!(
                "representation '{name}' needs at least 1 feature"
            )));
        }
        for i in 0..data.nrows() {
            for j in 0..data.ncols() {
                if !data[(i, j)].is_finite() {
                    return Err(Error::InvalidData(format!(
                        "representation '{name}' has non-finite entry at row {i}, col {j}"
                    )));
                }
            }
        }
        if let Some(ref l) = labels {
            if l.len() != data.nrows() {
                return Err(Error::InvalidData(format!(
                    "representation '{name}' has {} labels for {} rows",
                    l.len(),
                    data.nrows()
                )));
            }
        }
        Ok(Self { name, data, labels })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    /// Feature dimension.
    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    /// Number of classes, inferred as max label + 1.
    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m + 1))
    }

    /// Row subset in the given order. Subsets may drop below the 2-sample
    /// minimum of `new`; downstream statistics reject those where it matters.
    pub fn subset_rows(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidData(format!(
                "empty row subset of representation '{}'",
                self.name
            )));
        }
        for &i in indices {
            if i >= self.n() {
                return Err(Error::InvalidData(format!(
                    "row index {i} out of range for representation '{}' with {} rows",
                    self.name,
                    self.n()
                )));
            }
        }
        let data = DMatrix::from_fn(indices.len(), self.d(), |i, j| self.data[(indices[i], j)]);
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Ok(Self {
            name: self.name.clone(),
            data,
            labels,
        })
    }

    /// Replaces the label vector (used when coarsening a task).
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        Self::new(self.name.clone(), self.data.clone(), Some(labels))
    }

    pub(crate) fn from_parts(name: String, data: DMatrix<f64>, labels: Option<Vec<usize>>) -> Self {
        Self { name, data, labels }
    }
}

fn bits_eq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    a.shape() == b.shape()
        && a.iter()
            .zip(b.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Deterministic tie-break for the (rare) case where mean removal oscillates
/// between two bit patterns: pick the lexicographically smaller one.
fn bits_min(a: DMatrix<f64>, b: DMatrix<f64>) -> DMatrix<f64> {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.to_bits().cmp(&y.to_bits()) {
            std::cmp::Ordering::Less => return a,
            std::cmp::Ordering::Greater => return b,
            std::cmp::Ordering::Equal => {}
        }
    }
    a
}

fn center_pass(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows() as f64;
    let means = pairwise_col_sums(m) / n;
    let mut out = m.clone();
    for j in 0..out.ncols() {
        let mu = means[j];
        for i in 0..out.nrows() {
            out[(i, j)] -= mu;
        }
    }
    out
}

/// Centered copy: column means removed. One subtraction pass can leave
/// ulp-sized residual means, so passes repeat until the matrix is a bitwise
/// fixed point — this is what makes `center(center(R)) == center(R)` exact.
pub fn center(r: &RepresentationSet) -> RepresentationSet {
    let mut prev = r.data.clone();
    let mut cur = center_pass(&prev);
    for _ in 0..8 {
        if bits_eq(&cur, &prev) {
            break;
        }
        let next = center_pass(&cur);
        if bits_eq(&next, &prev) {
            // 2-cycle: both iterates have zero mean to within an ulp; choose
            // one side deterministically so re-centering reproduces it
            cur = bits_min(cur, next);
            break;
        }
        prev = cur;
        cur = next;
    }
    RepresentationSet::from_parts(r.name.clone(), cur, r.labels.clone())
}

/// Total variance: mean over samples of the squared Euclidean deviation from
/// the mean row (the trace of the covariance).
///
/// Returns exactly 0.0 iff all rows are bitwise identical; the explicit check
/// keeps that edge case from picking up rounding noise.
pub fn total_variance(r: &RepresentationSet) -> Result<f64> {
    let n = r.n();
    if n < 2 {
        return Err(Error::InvalidData(format!(
            "total_variance needs at least 2 samples, got {n}"
        )));
    }
    let m = r.data();
    let first = m.row(0);
    if (1..n).all(|i| {
        m.row(i)
            .iter()
            .zip(first.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits())
    }) {
        return Ok(0.0);
    }
    let means = pairwise_col_sums(m) / n as f64;
    let per_row: Vec<f64> = (0..n)
        .map(|i| {
            let mut s = 0.0;
            for j in 0..m.ncols() {
                let e = m[(i, j)] - means[j];
                s += e * e;
            }
            s
        })
        .collect();
    Ok(pairwise_sum(&per_row) / n as f64)
}

/// Map family, in capacity (nesting) order: every orthogonal map is an
/// orthogonal+scale map, every invertible-affine map is affine. The derived
/// `Ord` follows that nesting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Orthogonal,
    OrthogonalScale,
    InvertibleAffine,
    Affine,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 4] = [
        FamilyKind::Orthogonal,
        FamilyKind::OrthogonalScale,
        FamilyKind::InvertibleAffine,
        FamilyKind::Affine,
    ];

    /// Stable name matching the serialized form.
    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Orthogonal => "orthogonal",
            FamilyKind::OrthogonalScale => "orthogonal_scale",
            FamilyKind::InvertibleAffine => "invertible_affine",
            FamilyKind::Affine => "affine",
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A map class together with its regularization hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveFamily {
    pub kind: FamilyKind,
    /// Weight on ‖WᵀW − I‖²_F when an orthogonality constraint is enforced by
    /// penalty rather than closed form.
    pub ortho_penalty_weight: f64,
    /// Singular values of invertible-affine maps are kept at or above this.
    pub sv_floor: f64,
    /// Weight on the squared hinge below `sv_floor`.
    pub sv_floor_weight: f64,
}

impl PredictiveFamily {
    pub fn new(kind: FamilyKind) -> Self {
        Self {
            kind,
            ortho_penalty_weight: 0.1,
            sv_floor: 1e-3,
            sv_floor_weight: 0.01,
        }
    }

    pub fn orthogonal() -> Self {
        Self::new(FamilyKind::Orthogonal)
    }

    pub fn orthogonal_scale() -> Self {
        Self::new(FamilyKind::OrthogonalScale)
    }

    pub fn invertible_affine() -> Self {
        Self::new(FamilyKind::InvertibleAffine)
    }

    pub fn affine() -> Self {
        Self::new(FamilyKind::Affine)
    }

    /// Total order reflecting the nesting Orthogonal ⊂ OrthogonalScale ⊂
    /// Affine, with InvertibleAffine between OrthogonalScale and Affine.
    pub fn capacity_rank(&self) -> u8 {
        match self.kind {
            FamilyKind::Orthogonal => 0,
            FamilyKind::OrthogonalScale => 1,
            FamilyKind::InvertibleAffine => 2,
            FamilyKind::Affine => 3,
        }
    }
}

/// A fitted map `z ↦ scale·(z·weight) + bias` tagged with its family.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub scale: f64,
    pub family: PredictiveFamily,
}

impl LinearMap {
    pub fn new(
        weight: DMatrix<f64>,
        bias: DVector<f64>,
        scale: f64,
        family: PredictiveFamily,
    ) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidData(format!(
                "linear map scale must be a positive finite real, got {scale}"
            )));
        }
        if bias.len() != weight.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "linear map bias has {} entries for {} output columns",
                bias.len(),
                weight.ncols()
            )));
        }
        if weight.iter().any(|v| !v.is_finite()) || bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData(
                "linear map has non-finite parameters".into(),
            ));
        }
        Ok(Self {
            weight,
            bias,
            scale,
            family,
        })
    }

    pub fn d_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.ncols()
    }

    /// Applies the map to every row of `z` (n×d_in → n×d_out).
    pub fn apply(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if z.ncols() != self.d_in() {
            return Err(Error::ShapeMismatch(format!(
                "linear map expects {} input features, got {}",
                self.d_in(),
                z.ncols()
            )));
        }
        let mut out = z * &self.weight;
        if self.scale != 1.0 {
            out *= self.scale;
        }
        for i in 0..out.nrows() {
            for j in 0..out.ncols() {
                out[(i, j)] += self.bias[j];
            }
        }
        Ok(out)
    }
}

/// A softmax linear classifier over C classes.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskHead {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl TaskHead {
    pub fn new(weight: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        if bias.len() != weight.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "task head bias has {} entries for {} classes",
                bias.len(),
                weight.ncols()
            )));
        }
        if weight.iter().any(|v| !v.is_finite()) || bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData(
                "task head has non-finite parameters".into(),
            ));
        }
        Ok(Self { weight, bias })
    }

    pub fn num_classes(&self) -> usize {
        self.weight.ncols()
    }

    pub fn d_in(&self) -> usize {
        self.weight.nrows()
    }

    /// Pre-softmax scores, one row per sample.
    pub fn logits(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if z.ncols() != self.d_in() {
            return Err(Error::ShapeMismatch(format!(
                "task head expects {} input features, got {}",
                self.d_in(),
                z.ncols()
            )));
        }
        let mut out = z * &self.weight;
        for i in 0..out.nrows() {
            for j in 0..out.ncols() {
                out[(i, j)] += self.bias[j];
            }
        }
        Ok(out)
    }

    /// Row-wise softmax probabilities: strictly positive, rows sum to 1.
    pub fn predict_proba(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut l = self.logits(z)?;
        for i in 0..l.nrows() {
            let mut mx = f64::NEG_INFINITY;
            for j in 0..l.ncols() {
                mx = mx.max(l[(i, j)]);
            }
            let mut sum = 0.0;
            for j in 0..l.ncols() {
                let e = (l[(i, j)] - mx).exp();
                l[(i, j)] = e;
                sum += e;
            }
            for j in 0..l.ncols() {
                // clamp away exact zeros from extreme logit gaps
                l[(i, j)] = (l[(i, j)] / sum).max(f64::MIN_POSITIVE);
            }
        }
        Ok(l)
    }

    /// Argmax class per sample; ties resolve to the lowest class index.
    pub fn predict(&self, z: &DMatrix<f64>) -> Result<Vec<usize>> {
        let l = self.logits(z)?;
        Ok((0..l.nrows())
            .map(|i| {
                let mut best = 0;
                for j in 1..l.ncols() {
                    if l[(i, j)] > l[(i, best)] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}

/// Directed and symmetric scores plus baseline metrics for one ordered pair
/// of representations under one family.
///
/// Constructed through [`SimilarityReport::new`] so the symmetric fields are
/// always the minimum of their directed counterparts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityReport {
    pair: (String, String),
    family: PredictiveFamily,
    rep_forward: f64,
    rep_backward: f64,
    rep_symmetric: f64,
    func_forward: Option<f64>,
    func_backward: Option<f64>,
    func_symmetric: Option<f64>,
    baselines: BTreeMap<String, f64>,
    usable_cond_info_forward: Option<f64>,
    usable_cond_info_backward: Option<f64>,
}

impl SimilarityReport {
    pub fn new(
        pair: (String, String),
        family: PredictiveFamily,
        rep_forward: f64,
        rep_backward: f64,
    ) -> Result<Self> {
        for (side, v) in [("forward", rep_forward), ("backward", rep_backward)] {
            if v.is_nan() || v > 1.0 {
                return Err(Error::InvalidData(format!(
                    "rep_{side} similarity must be a non-NaN real ≤ 1, got {v}"
                )));
            }
        }
        Ok(Self {
            pair,
            family,
            rep_forward,
            rep_backward,
            rep_symmetric: rep_forward.min(rep_backward),
            func_forward: None,
            func_backward: None,
            func_symmetric: None,
            baselines: BTreeMap::new(),
            usable_cond_info_forward: None,
            usable_cond_info_backward: None,
        })
    }

    /// Attaches functional scores; the symmetric value is derived, not taken.
    pub fn with_functional(
        mut self,
        func_forward: f64,
        func_backward: f64,
        usable_cond_info_forward: f64,
        usable_cond_info_backward: f64,
    ) -> Result<Self> {
        for (side, v) in [("forward", func_forward), ("backward", func_backward)] {
            if !(v >= 0.0) {
                return Err(Error::InvalidData(format!(
                    "func_{side} similarity must be ≥ 0, got {v}"
                )));
            }
        }
        self.func_forward = Some(func_forward);
        self.func_backward = Some(func_backward);
        self.func_symmetric = Some(func_forward.min(func_backward));
        self.usable_cond_info_forward = Some(usable_cond_info_forward);
        self.usable_cond_info_backward = Some(usable_cond_info_backward);
        Ok(self)
    }

    pub fn with_baseline(mut self, metric: impl Into<String>, value: f64) -> Self {
        self.baselines.insert(metric.into(), value);
        self
    }

    pub fn pair(&self) -> (&str, &str) {
        (&self.pair.0, &self.pair.1)
    }

    pub fn family(&self) -> &PredictiveFamily {
        &self.family
    }

    pub fn rep_forward(&self) -> f64 {
        self.rep_forward
    }

    pub fn rep_backward(&self) -> f64 {
        self.rep_backward
    }

    pub fn rep_symmetric(&self) -> f64 {
        self.rep_symmetric
    }

    pub fn func_forward(&self) -> Option<f64> {
        self.func_forward
    }

    pub fn func_backward(&self) -> Option<f64> {
        self.func_backward
    }

    pub fn func_symmetric(&self) -> Option<f64> {
        self.func_symmetric
    }

    /// Functional scores clipped to [0, 1]; the raw ratio can exceed 1 when
    /// stitching beats the native head.
    pub fn func_symmetric_clipped(&self) -> Option<f64> {
        self.func_symmetric.map(|v| v.min(1.0))
    }

    pub fn baselines(&self) -> &BTreeMap<String, f64> {
        &self.baselines
    }

    pub fn usable_cond_info_forward(&self) -> Option<f64> {
        self.usable_cond_info_forward
    }

    pub fn usable_cond_info_backward(&self) -> Option<f64> {
        self.usable_cond_info_backward
    }
}
