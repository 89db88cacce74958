//! Synthetic representation pairs with known ground-truth relationships,
//! plus a labeled task from a linear teacher with an enforced decision
//! margin. Stands in for a trained encoder zoo at desk scale: every claim
//! the scores are supposed to certify is analytically checkable here.
//!
//! Determinism contract: identical spec+seed give bitwise-identical outputs.
//! The draw order is fixed — teacher, then samples (with per-sample margin
//! rejection), then transform parameters, then observation noise — so the
//! teacher also stays fixed across different `n` at the same seed.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::RepresentationSet;
use crate::error::{Error, Result};
use crate::numeric::{sample_gaussian, sample_orthogonal};

/// Attempts per sample before margin rejection gives up.
const MAX_REJECTION_ATTEMPTS: usize = 10_000;

/// The ground-truth relationship between the two generated representations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Z₂ = Z₁·Q for orthogonal Q.
    OrthoTwin,
    /// Z₂ = s·Z₁·Q, uniform scale s.
    ScaleTwin,
    /// Z₂ = Z₁·M + b, well-conditioned M.
    AffineTwin,
    /// Z₂ = Z₁·P for column-orthonormal P: `keep` dimensions survive.
    Projection { keep: usize },
    /// Z₂ = [Z₁ | N] with label-independent unit-variance noise columns.
    NuisanceAugment { extra: usize },
    /// Z₂ = depth layers of h ↦ √2·relu(h·Q).
    NonlinearWarp { depth: usize },
    /// Z₂ drawn independently of Z₁.
    IndependentPair,
}

impl ScenarioKind {
    /// Stable short name used in pair identifiers and result tables.
    pub fn slug(&self) -> &'static str {
        match self {
            ScenarioKind::OrthoTwin => "ortho_twin",
            ScenarioKind::ScaleTwin => "scale_twin",
            ScenarioKind::AffineTwin => "affine_twin",
            ScenarioKind::Projection { .. } => "projection",
            ScenarioKind::NuisanceAugment { .. } => "nuisance_augment",
            ScenarioKind::NonlinearWarp { .. } => "nonlinear_warp",
            ScenarioKind::IndependentPair => "independent_pair",
        }
    }
}

/// One synthetic scenario: a pair of representations over a shared labeled
/// task, plus a fine→coarse class hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub n: usize,
    pub d: usize,
    pub classes: usize,
    /// Contiguous fine classes per coarse class; 1 means a flat hierarchy.
    #[serde(default = "default_fine_per_coarse")]
    pub fine_per_coarse: usize,
    /// Isotropic Gaussian observation noise added to Z₂ after the transform.
    #[serde(default)]
    pub noise_sigma: f64,
    /// Required top1−top2 teacher-logit gap, enforced by rejection.
    #[serde(default = "default_teacher_margin")]
    pub teacher_margin: f64,
    pub seed: u64,
}

fn default_fine_per_coarse() -> usize {
    1
}

fn default_teacher_margin() -> f64 {
    1.0
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, n: usize, d: usize, classes: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            d,
            classes,
            fine_per_coarse: 1,
            noise_sigma: 0.0,
            teacher_margin: 1.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidSpec(msg));
        if self.n < 2 || self.d < 1 {
            return fail(format!("scenario needs n ≥ 2 and d ≥ 1, got n={} d={}", self.n, self.d));
        }
        if self.classes < 2 {
            return fail(format!("scenario needs ≥ 2 classes, got {}", self.classes));
        }
        if self.fine_per_coarse == 0 || self.classes % self.fine_per_coarse != 0 {
            return fail(format!(
                "{} classes not divisible into groups of {}",
                self.classes, self.fine_per_coarse
            ));
        }
        if !(self.noise_sigma >= 0.0) || !(self.teacher_margin >= 0.0) {
            return fail("noise_sigma and teacher_margin must be nonnegative".into());
        }
        match self.kind {
            ScenarioKind::Projection { keep } => {
                if keep == 0 || keep >= self.d {
                    return fail(format!("projection keep must be in [1, d), got {keep}"));
                }
            }
            ScenarioKind::NuisanceAugment { extra } => {
                if extra == 0 {
                    return fail("nuisance_augment needs extra ≥ 1".into());
                }
            }
            ScenarioKind::NonlinearWarp { depth } => {
                if depth == 0 {
                    return fail("nonlinear_warp needs depth ≥ 1".into());
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// The drawn transform parameters, kept for oracle-side verification.
#[derive(Debug, Clone, PartialEq)]
pub enum TransformDetail {
    OrthoTwin { q: DMatrix<f64> },
    ScaleTwin { scale: f64, q: DMatrix<f64> },
    AffineTwin { m: DMatrix<f64>, bias: DVector<f64> },
    /// d×keep column-orthonormal basis of the surviving subspace.
    Projection { basis: DMatrix<f64> },
    NuisanceAugment { extra: usize },
    NonlinearWarp { depth: usize },
    IndependentPair,
}

/// Ground-truth bookkeeping for a generated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioInfo {
    /// d×C unit-norm-column teacher; labels are argmax of Z₁·teacher.
    pub teacher: DMatrix<f64>,
    pub detail: TransformDetail,
}

/// A generated pair: source, destination, label hierarchy, ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioData {
    pub src: RepresentationSet,
    pub dst: RepresentationSet,
    /// Fine→coarse grouping table, length `classes`.
    pub grouping: Vec<usize>,
    pub info: ScenarioInfo,
}

fn draw_teacher(rng: &mut ChaCha8Rng, d: usize, c: usize) -> DMatrix<f64> {
    let mut t = sample_gaussian(rng, d, c);
    for j in 0..c {
        let norm = t.column(j).norm();
        for i in 0..d {
            t[(i, j)] /= norm;
        }
    }
    t
}

/// Label of a sample under the teacher, with the top1−top2 logit gap.
fn teacher_label(z: &[f64], teacher: &DMatrix<f64>) -> (usize, f64) {
    let c = teacher.ncols();
    let mut best = (0usize, f64::NEG_INFINITY);
    let mut second = f64::NEG_INFINITY;
    for j in 0..c {
        let mut logit = 0.0;
        for (k, &v) in z.iter().enumerate() {
            logit += v * teacher[(k, j)];
        }
        if logit > best.1 {
            second = best.1;
            best = (j, logit);
        } else if logit > second {
            second = logit;
        }
    }
    (best.0, best.1 - second)
}

/// Generates the scenario. Deterministic given the spec (seed included).
pub fn generate(spec: &ScenarioSpec) -> Result<ScenarioData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let teacher = draw_teacher(&mut rng, spec.d, spec.classes);

    // base features and labels, margin enforced per sample
    let mut z1 = DMatrix::zeros(spec.n, spec.d);
    let mut labels = Vec::with_capacity(spec.n);
    let mut row = vec![0.0; spec.d];
    for i in 0..spec.n {
        let mut accepted = false;
        for _ in 0..MAX_REJECTION_ATTEMPTS {
            for v in row.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let (label, gap) = teacher_label(&row, &teacher);
            if gap >= spec.teacher_margin {
                for (j, &v) in row.iter().enumerate() {
                    z1[(i, j)] = v;
                }
                labels.push(label);
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(Error::InvalidSpec(format!(
                "teacher margin {} rejected {MAX_REJECTION_ATTEMPTS} consecutive draws",
                spec.teacher_margin
            )));
        }
    }

    // transform parameters, then the second representation
    let (mut z2, detail) = match spec.kind {
        ScenarioKind::OrthoTwin => {
            let q = sample_orthogonal(&mut rng, spec.d);
            (&z1 * &q, TransformDetail::OrthoTwin { q })
        }
        ScenarioKind::ScaleTwin => {
            let q = sample_orthogonal(&mut rng, spec.d);
            let scale: f64 = rng.random_range(0.5..2.5);
            (&z1 * &q * scale, TransformDetail::ScaleTwin { scale, q })
        }
        ScenarioKind::AffineTwin => {
            let u = sample_orthogonal(&mut rng, spec.d);
            let v = sample_orthogonal(&mut rng, spec.d);
            let mut sig = DMatrix::zeros(spec.d, spec.d);
            for k in 0..spec.d {
                sig[(k, k)] = rng.random_range(0.3..3.0);
            }
            let m = u * sig * v;
            let bias = DVector::from_fn(spec.d, |_, _| {
                let g: f64 = rng.sample(StandardNormal);
                0.5 * g
            });
            let mut out = &z1 * &m;
            for i in 0..out.nrows() {
                for j in 0..out.ncols() {
                    out[(i, j)] += bias[j];
                }
            }
            (out, TransformDetail::AffineTwin { m, bias })
        }
        ScenarioKind::Projection { keep } => {
            let q = sample_orthogonal(&mut rng, spec.d);
            let basis = q.columns(0, keep).into_owned();
            (&z1 * &basis, TransformDetail::Projection { basis })
        }
        ScenarioKind::NuisanceAugment { extra } => {
            let noise = sample_gaussian(&mut rng, spec.n, extra);
            let mut out = DMatrix::zeros(spec.n, spec.d + extra);
            out.columns_mut(0, spec.d).copy_from(&z1);
            out.columns_mut(spec.d, extra).copy_from(&noise);
            (out, TransformDetail::NuisanceAugment { extra })
        }
        ScenarioKind::NonlinearWarp { depth } => {
            let mut h = z1.clone();
            for _ in 0..depth {
                let q = sample_orthogonal(&mut rng, spec.d);
                h *= &q;
                // √2·relu keeps the second moment of a symmetric input
                for v in h.iter_mut() {
                    *v = v.max(0.0) * std::f64::consts::SQRT_2;
                }
            }
            (h, TransformDetail::NonlinearWarp { depth })
        }
        ScenarioKind::IndependentPair => (
            sample_gaussian(&mut rng, spec.n, spec.d),
            TransformDetail::IndependentPair,
        ),
    };

    if spec.noise_sigma > 0.0 {
        let noise = sample_gaussian(&mut rng, z2.nrows(), z2.ncols());
        z2 += noise * spec.noise_sigma;
    }

    let grouping: Vec<usize> = (0..spec.classes).map(|f| f / spec.fine_per_coarse).collect();
    let slug = spec.kind.slug();
    let src = RepresentationSet::new(
        format!("{slug}-{}-src", spec.seed),
        z1,
        Some(labels.clone()),
    )?;
    let dst = RepresentationSet::new(format!("{slug}-{}-dst", spec.seed), z2, Some(labels))?;
    Ok(ScenarioData {
        src,
        dst,
        grouping,
        info: ScenarioInfo { teacher, detail },
    })
}
