//! Task heads, stitchers, and the functional-similarity scores built on
//! them: stitched-vs-native accuracy ratios and the usable-conditional-
//! information estimate (stitched CE − native CE).
//!
//! Heads and stitchers train by full-batch gradient descent with
//! backtracking, so the training loss never increases and every run is
//! deterministic given (inputs, config, seed). All sample-axis reductions go
//! through the pairwise helpers, which makes head training bitwise invariant
//! to duplicating the dataset.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::align::{fit_affine, ortho_core};
use crate::data::{FamilyKind, LinearMap, PredictiveFamily, RepresentationSet, TaskHead};
use crate::error::{Error, Result};
use crate::numeric::{pad_cols, pairwise_col_sums, pairwise_sum, pairwise_xt_r};

/// Usable information estimates below this are flagged as suspicious rather
/// than clamped: small negative values are expected finite-sample noise.
pub const NEGATIVE_INFO_TOLERANCE: f64 = -1e-3;

/// Training hyperparameters for heads and stitchers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Weight penalty coefficient (applies to weights, not biases).
    pub l2: f64,
    /// Relative loss-change threshold that ends training as converged.
    pub tolerance: f64,
    /// Drives the train/eval split (and nothing else: optimization is
    /// full-batch from a zero or closed-form init).
    pub seed: u64,
    /// Fraction of samples in the training split.
    pub train_fraction: f64,
    /// Class-count override. When training on a subset that may not contain
    /// every class, pass the full count here so logits keep their width.
    pub num_classes: Option<usize>,
}

impl TrainConfig {
    /// Defaults for task heads.
    pub fn head(seed: u64) -> Self {
        Self {
            learning_rate: 0.1,
            max_epochs: 500,
            l2: 1e-4,
            tolerance: 1e-7,
            seed,
            train_fraction: 0.7,
            num_classes: None,
        }
    }

    /// Defaults for stitchers (gentler rate: the head behind the stitcher
    /// amplifies steps).
    pub fn stitcher(seed: u64) -> Self {
        Self {
            learning_rate: 0.05,
            ..Self::head(seed)
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0)
            || self.max_epochs == 0
            || !(self.l2 >= 0.0)
            || !(self.tolerance > 0.0)
            || !(self.train_fraction > 0.0 && self.train_fraction < 1.0)
        {
            return Err(Error::InvalidSpec(format!(
                "invalid training config: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Seed-determined train/eval split: a Fisher–Yates shuffle cut at
/// round(n·train_fraction), clamped so both sides are non-empty, both sides
/// sorted ascending.
pub fn split_indices(n: usize, cfg: &TrainConfig) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    idx.shuffle(&mut rng);
    let train_n = ((n as f64 * cfg.train_fraction).round() as usize).clamp(1, n - 1);
    let mut train: Vec<usize> = idx[..train_n].to_vec();
    let mut eval: Vec<usize> = idx[train_n..].to_vec();
    train.sort_unstable();
    eval.sort_unstable();
    (train, eval)
}

fn required_labels<'a>(r: &'a RepresentationSet) -> Result<&'a [usize]> {
    r.labels().ok_or_else(|| {
        Error::MissingLabels(format!("representation '{}' has no labels", r.name()))
    })
}

fn class_count(labels: &[usize], cfg: &TrainConfig) -> Result<usize> {
    let observed_max = labels.iter().copied().max().unwrap_or(0);
    let c = cfg.num_classes.unwrap_or(observed_max + 1);
    if observed_max >= c {
        return Err(Error::InvalidData(format!(
            "label {observed_max} out of range for {c} classes"
        )));
    }
    Ok(c)
}

/// Per-sample cross-entropy −log p(yᵢ) from raw logits, via log-sum-exp.
fn per_sample_ce(logits: &DMatrix<f64>, labels: &[usize]) -> Vec<f64> {
    (0..logits.nrows())
        .map(|i| {
            let mut mx = f64::NEG_INFINITY;
            for j in 0..logits.ncols() {
                mx = mx.max(logits[(i, j)]);
            }
            let mut sum = 0.0;
            for j in 0..logits.ncols() {
                sum += (logits[(i, j)] - mx).exp();
            }
            mx + sum.ln() - logits[(i, labels[i])]
        })
        .collect()
}

/// Softmax minus one-hot, the per-sample logit gradient of the CE loss.
fn softmax_minus_onehot(logits: &DMatrix<f64>, labels: &[usize]) -> DMatrix<f64> {
    let mut out = logits.clone();
    for i in 0..out.nrows() {
        let mut mx = f64::NEG_INFINITY;
        for j in 0..out.ncols() {
            mx = mx.max(out[(i, j)]);
        }
        let mut sum = 0.0;
        for j in 0..out.ncols() {
            let e = (out[(i, j)] - mx).exp();
            out[(i, j)] = e;
            sum += e;
        }
        for j in 0..out.ncols() {
            out[(i, j)] /= sum;
        }
        out[(i, labels[i])] -= 1.0;
    }
    out
}

fn add_row_bias(m: &mut DMatrix<f64>, bias: &DVector<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            m[(i, j)] += bias[j];
        }
    }
}

/// Trains a softmax head on all rows of `r` by full-batch descent from a
/// zero init, minimizing mean CE + l2·‖weight‖².
pub fn train_head(r: &RepresentationSet, cfg: &TrainConfig) -> Result<TaskHead> {
    cfg.validate()?;
    let labels = required_labels(r)?;
    let c = class_count(labels, cfg)?;
    let mut counts = vec![0usize; c];
    for &y in labels {
        counts[y] += 1;
    }
    for (class, &count) in counts.iter().enumerate() {
        if count == 1 {
            return Err(Error::DegenerateInput(format!(
                "class {class} has a single sample; cannot train a head"
            )));
        }
    }

    let x = r.data();
    let n = x.nrows() as f64;
    let mut w = DMatrix::zeros(r.d(), c);
    let mut b = DVector::zeros(c);

    let loss_of = |w: &DMatrix<f64>, b: &DVector<f64>| -> f64 {
        let mut logits = x * w;
        add_row_bias(&mut logits, b);
        pairwise_sum(&per_sample_ce(&logits, labels)) / n + cfg.l2 * w.norm_squared()
    };

    let mut loss = loss_of(&w, &b);
    let mut lr = cfg.learning_rate;
    for _ in 0..cfg.max_epochs {
        let mut logits = x * &w;
        add_row_bias(&mut logits, &b);
        let d = softmax_minus_onehot(&logits, labels);
        let grad_w = pairwise_xt_r(x, &d) / n + &w * (2.0 * cfg.l2);
        let grad_b = pairwise_col_sums(&d) / n;

        let mut accepted = false;
        for _ in 0..48 {
            let wc = &w - &grad_w * lr;
            let bc = &b - &grad_b * lr;
            let cand = loss_of(&wc, &bc);
            if cand <= loss {
                let rel = (loss - cand) / loss.abs().max(1e-300);
                w = wc;
                b = bc;
                loss = cand;
                accepted = true;
                if rel < cfg.tolerance {
                    return TaskHead::new(w, b);
                }
                break;
            }
            lr *= 0.5;
        }
        if !accepted {
            break; // no representable step improves the loss: done
        }
        lr = (lr * 2.0).min(cfg.learning_rate);
    }
    TaskHead::new(w, b)
}

/// Mean −log p(label) in nats on `r` under `head`.
pub fn cross_entropy(head: &TaskHead, r: &RepresentationSet) -> Result<f64> {
    let labels = required_labels(r)?;
    if r.d() != head.d_in() {
        return Err(Error::ShapeMismatch(format!(
            "head expects {} features, representation '{}' has {}",
            head.d_in(),
            r.name(),
            r.d()
        )));
    }
    if let Some(&mx) = labels.iter().max() {
        if mx >= head.num_classes() {
            return Err(Error::InvalidData(format!(
                "label {mx} out of range for a {}-class head",
                head.num_classes()
            )));
        }
    }
    let logits = head.logits(r.data())?;
    Ok(pairwise_sum(&per_sample_ce(&logits, labels)) / r.n() as f64)
}

/// Fraction of samples whose argmax prediction matches the label.
pub fn accuracy(head: &TaskHead, r: &RepresentationSet) -> Result<f64> {
    let labels = required_labels(r)?;
    let pred = head.predict(r.data())?;
    let hits = pred
        .iter()
        .zip(labels.iter())
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / r.n() as f64)
}

/// Empirical Shannon entropy of the label frequencies, in nats: the loss of
/// the best constant predictor.
pub fn marginal_entropy(labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::InvalidData(
            "marginal entropy of an empty label vector".into(),
        ));
    }
    let c = labels.iter().copied().max().unwrap() + 1;
    let mut counts = vec![0usize; c];
    for &y in labels {
        counts[y] += 1;
    }
    let n = labels.len() as f64;
    Ok(counts
        .iter()
        .filter(|&&k| k > 0)
        .map(|&k| {
            let p = k as f64 / n;
            -p * p.ln()
        })
        .sum())
}

/// Usable information of `r` about its labels under `head`:
/// marginal entropy − cross-entropy. May come out slightly negative from
/// finite samples; values below [`NEGATIVE_INFO_TOLERANCE`] are logged.
pub fn usable_information(r: &RepresentationSet, head: &TaskHead) -> Result<f64> {
    let labels = required_labels(r)?;
    let v = marginal_entropy(labels)? - cross_entropy(head, r)?;
    if v < NEGATIVE_INFO_TOLERANCE {
        log::warn!(
            "usable information {v:.4} nats below the finite-sample tolerance on '{}'",
            r.name()
        );
    }
    Ok(v)
}

/// Outcome of stitching one representation into another's task head,
/// evaluated on the held-out split.
#[derive(Debug, Clone, PartialEq)]
pub struct StitchResult {
    pub map: LinearMap,
    pub stitched_ce: f64,
    pub native_ce: f64,
    pub stitched_accuracy: f64,
    pub native_accuracy: f64,
}

impl StitchResult {
    /// Usable conditional information estimate: stitched CE − native CE,
    /// reported raw (it can be slightly negative from finite-sample noise).
    pub fn usable_cond_info(&self) -> f64 {
        self.stitched_ce - self.native_ce
    }

    /// True when the estimate is negative beyond the finite-sample
    /// tolerance.
    pub fn suspicious_negative_info(&self) -> bool {
        self.usable_cond_info() < NEGATIVE_INFO_TOLERANCE
    }
}

/// Directed functional similarity: stitched over native accuracy (raw ratio;
/// it may exceed 1 when the stitched path wins).
pub fn directed_func_similarity(res: &StitchResult) -> Result<f64> {
    if res.native_accuracy == 0.0 {
        return Err(Error::DegenerateInput(
            "native accuracy is zero; the accuracy ratio is undefined".into(),
        ));
    }
    Ok(res.stitched_accuracy / res.native_accuracy)
}

/// [`directed_func_similarity`] clipped to at most 1.
pub fn directed_func_similarity_clipped(res: &StitchResult) -> Result<f64> {
    directed_func_similarity(res).map(|v| v.min(1.0))
}

/// Symmetric functional similarity: the minimum of the two directions.
pub fn symmetric_func_similarity(fwd: f64, bwd: f64) -> f64 {
    fwd.min(bwd)
}

/// Relabels through a fine→coarse grouping table (index = fine label).
/// The table must cover every observed label and hit every coarse index up
/// to its maximum (a surjective relabeling).
pub fn coarsen_labels(labels: &[usize], grouping: &[usize]) -> Result<Vec<usize>> {
    if grouping.is_empty() {
        return Err(Error::InvalidSpec("empty label grouping".into()));
    }
    let coarse_max = *grouping.iter().max().unwrap();
    let mut hit = vec![false; coarse_max + 1];
    for &g in grouping {
        hit[g] = true;
    }
    if !hit.iter().all(|&h| h) {
        return Err(Error::InvalidSpec(format!(
            "grouping skips a coarse class below {coarse_max}"
        )));
    }
    labels
        .iter()
        .map(|&y| {
            grouping.get(y).copied().ok_or_else(|| {
                Error::InvalidSpec(format!(
                    "label {y} not covered by a grouping of {} fine classes",
                    grouping.len()
                ))
            })
        })
        .collect()
}

/// Evaluates a fitted stitcher on held-out data: CE and accuracy of the
/// stitched path (src through map through head) next to the native path.
pub fn evaluate_stitch(
    map: &LinearMap,
    src_eval: &RepresentationSet,
    dst_eval: &RepresentationSet,
    dst_head: &TaskHead,
) -> Result<StitchResult> {
    let mapped = map.apply(src_eval.data())?;
    if mapped.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            location: "stitched features".into(),
        });
    }
    let labels = required_labels(src_eval)?.to_vec();
    let stitched = RepresentationSet::from_parts("stitched".into(), mapped, Some(labels));
    Ok(StitchResult {
        map: map.clone(),
        stitched_ce: cross_entropy(dst_head, &stitched)?,
        native_ce: cross_entropy(dst_head, dst_eval)?,
        stitched_accuracy: accuracy(dst_head, &stitched)?,
        native_accuracy: accuracy(dst_head, dst_eval)?,
    })
}

struct StitchGeometry {
    /// Square training width for constrained families; (d1, d2) for affine.
    p_in: usize,
    p_out: usize,
    d2: usize,
}

fn stitch_geometry(src_d: usize, dst_d: usize, kind: FamilyKind) -> StitchGeometry {
    if kind == FamilyKind::Affine {
        StitchGeometry {
            p_in: src_d,
            p_out: dst_d,
            d2: dst_d,
        }
    } else {
        let dpad = src_d.max(dst_d);
        StitchGeometry {
            p_in: dpad,
            p_out: dpad,
            d2: dst_d,
        }
    }
}

fn stitch_penalty(family: &PredictiveFamily) -> impl Fn(&DMatrix<f64>) -> (f64, DMatrix<f64>) + '_ {
    move |w: &DMatrix<f64>| match family.kind {
        FamilyKind::Affine => (0.0, DMatrix::zeros(w.nrows(), w.ncols())),
        FamilyKind::Orthogonal => {
            let g = w.transpose() * w - DMatrix::identity(w.ncols(), w.ncols());
            (
                family.ortho_penalty_weight * g.norm_squared(),
                w * g * (4.0 * family.ortho_penalty_weight),
            )
        }
        FamilyKind::OrthogonalScale => {
            let g = w.transpose() * w;
            let s2 = g.trace() / w.ncols() as f64;
            let a = g - DMatrix::identity(w.ncols(), w.ncols()) * s2;
            (
                family.ortho_penalty_weight * a.norm_squared(),
                w * a * (4.0 * family.ortho_penalty_weight),
            )
        }
        FamilyKind::InvertibleAffine => {
            let svd = w.clone().svd(true, true);
            let u = svd.u.as_ref().expect("u requested");
            let vt = svd.v_t.as_ref().expect("v_t requested");
            let mut value = 0.0;
            let mut grad = DMatrix::zeros(w.nrows(), w.ncols());
            for k in 0..svd.singular_values.len() {
                let s = svd.singular_values[k];
                if s < family.sv_floor {
                    value += family.sv_floor_weight * (family.sv_floor - s).powi(2);
                    let coef = -2.0 * family.sv_floor_weight * (family.sv_floor - s);
                    for i in 0..w.nrows() {
                        for j in 0..w.ncols() {
                            grad[(i, j)] += coef * u[(i, k)] * vt[(k, j)];
                        }
                    }
                }
            }
            (value, grad)
        }
    }
}

/// Closed-form warm start for the stitcher: the alignment fit of the same
/// family on the training split, so descent begins from a map that already
/// lands near the destination features.
fn stitch_init(
    src_tr: &RepresentationSet,
    dst_tr: &RepresentationSet,
    family: &PredictiveFamily,
    geo: &StitchGeometry,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let w0 = match family.kind {
        FamilyKind::Affine => fit_affine(src_tr, dst_tr)?.weight,
        FamilyKind::Orthogonal => ortho_core(src_tr, dst_tr)?.q,
        FamilyKind::OrthogonalScale | FamilyKind::InvertibleAffine => {
            let fit = ortho_core(src_tr, dst_tr)?;
            let s = (fit.trace / fit.xc_norm_sq).max(1e-300);
            fit.q * s
        }
    };
    debug_assert_eq!(w0.nrows(), geo.p_in);
    let src_means = pairwise_col_sums(src_tr.data()) / src_tr.n() as f64;
    let dst_means = pairwise_col_sums(dst_tr.data()) / dst_tr.n() as f64;
    let mapped_mean = RowDVector::from_fn(geo.p_in, |_, j| {
        if j < src_tr.d() {
            src_means[j]
        } else {
            0.0
        }
    }) * &w0;
    let b0 = DVector::from_fn(geo.d2, |j, _| dst_means[j] - mapped_mean[j]);
    Ok((w0, b0))
}

fn train_stitcher_on_split(
    src: &RepresentationSet,
    dst: &RepresentationSet,
    dst_head: &TaskHead,
    family: PredictiveFamily,
    cfg: &TrainConfig,
    train: &[usize],
    eval: &[usize],
) -> Result<StitchResult> {
    let labels_all = required_labels(src)?;
    if dst_head.d_in() != dst.d() {
        return Err(Error::ShapeMismatch(format!(
            "head expects {} features but '{}' has {}",
            dst_head.d_in(),
            dst.name(),
            dst.d()
        )));
    }
    if let Some(&mx) = labels_all.iter().max() {
        if mx >= dst_head.num_classes() {
            return Err(Error::InvalidData(format!(
                "label {mx} out of range for a {}-class head",
                dst_head.num_classes()
            )));
        }
    }

    let src_tr = src.subset_rows(train)?;
    let dst_tr = dst.subset_rows(train)?;
    let labels: Vec<usize> = train.iter().map(|&i| labels_all[i]).collect();
    let geo = stitch_geometry(src.d(), dst.d(), family.kind);
    let x = pad_cols(src_tr.data(), geo.p_in);
    let n = x.nrows() as f64;
    let penalty = stitch_penalty(&family);
    let (mut w, mut b) = stitch_init(&src_tr, &dst_tr, &family, &geo)?;

    // logits of the stitched path: first d2 output columns through the head
    let logits_of = |w: &DMatrix<f64>, b: &DVector<f64>| -> DMatrix<f64> {
        let mapped = &x * w;
        let mut eff = mapped.columns(0, geo.d2).into_owned();
        add_row_bias(&mut eff, b);
        let mut logits = eff * &dst_head.weight;
        add_row_bias(&mut logits, &dst_head.bias);
        logits
    };
    let loss_of = |w: &DMatrix<f64>, b: &DVector<f64>| -> f64 {
        pairwise_sum(&per_sample_ce(&logits_of(w, b), &labels)) / n
            + penalty(w).0
            + cfg.l2 * w.norm_squared()
    };

    let mut loss = loss_of(&w, &b);
    let mut lr = cfg.learning_rate;
    let mut converged = false;
    let mut rel = f64::INFINITY;
    let mut iterations = 0usize;
    for epoch in 0..cfg.max_epochs {
        iterations = epoch + 1;
        let d_logits = softmax_minus_onehot(&logits_of(&w, &b), &labels);
        // chain rule back through the head onto the effective output columns
        let d_eff = &d_logits * dst_head.weight.transpose();
        let d_mapped = if geo.p_out == geo.d2 {
            d_eff.clone()
        } else {
            let mut m = DMatrix::zeros(d_eff.nrows(), geo.p_out);
            m.columns_mut(0, geo.d2).copy_from(&d_eff);
            m
        };
        let grad_w = pairwise_xt_r(&x, &d_mapped) / n + penalty(&w).1 + &w * (2.0 * cfg.l2);
        let grad_b = pairwise_col_sums(&d_eff) / n;

        let mut accepted = false;
        for _ in 0..48 {
            let wc = &w - &grad_w * lr;
            let bc = &b - &grad_b * lr;
            let cand = loss_of(&wc, &bc);
            if cand <= loss {
                rel = (loss - cand) / loss.abs().max(1e-300);
                w = wc;
                b = bc;
                loss = cand;
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        if !accepted || rel < cfg.tolerance {
            converged = true;
            break;
        }
        lr = (lr * 2.0).min(cfg.learning_rate);
    }

    let map = finish_stitch_map(w, b, src.d(), &geo, family)?;
    if !converged {
        return Err(Error::ConvergenceFailure {
            iterations,
            relative_change: rel,
            last: Box::new(map),
        });
    }
    evaluate_stitch(
        &map,
        &src.subset_rows(eval)?,
        &dst.subset_rows(eval)?,
        dst_head,
    )
}

/// Packs the trained square (or rectangular) weight into the effective
/// d_src×d_dst map: rows beyond d_src only multiply zero padding and columns
/// beyond d_dst are discarded before the head, so dropping them is exact.
fn finish_stitch_map(
    w: DMatrix<f64>,
    b: DVector<f64>,
    src_d: usize,
    geo: &StitchGeometry,
    family: PredictiveFamily,
) -> Result<LinearMap> {
    let (square, scale) = match family.kind {
        FamilyKind::OrthogonalScale => {
            let s = (w.norm_squared() / w.ncols() as f64).sqrt().max(1e-300);
            (&w / s, s)
        }
        FamilyKind::InvertibleAffine => (clamp_sv(&w, 1e-4), 1.0),
        _ => (w.clone(), 1.0),
    };
    let weight = square.view((0, 0), (src_d, geo.d2)).into_owned();
    LinearMap::new(weight, b, scale, family)
}

fn clamp_sv(w: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let svd = w.clone().svd(true, true);
    if svd.singular_values.iter().all(|&s| s >= floor) {
        return w.clone();
    }
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut sig = DMatrix::zeros(u.ncols(), vt.nrows());
    for k in 0..svd.singular_values.len() {
        sig[(k, k)] = svd.singular_values[k].max(floor);
    }
    u * sig * vt
}

/// Trains a stitcher from `src` into `dst`'s head: the map in `family`
/// minimizing CE of the stitched path plus the family penalty, trained on
/// the seed-determined split and evaluated held-out (native baselines come
/// from `dst` on the same split).
pub fn train_stitcher(
    src: &RepresentationSet,
    dst: &RepresentationSet,
    dst_head: &TaskHead,
    family: PredictiveFamily,
    cfg: &TrainConfig,
) -> Result<StitchResult> {
    cfg.validate()?;
    check_paired(src, dst)?;
    let (train, eval) = split_indices(src.n(), cfg);
    train_stitcher_on_split(src, dst, dst_head, family, cfg, &train, &eval)
}

fn check_paired(src: &RepresentationSet, dst: &RepresentationSet) -> Result<()> {
    if src.n() != dst.n() {
        return Err(Error::ShapeMismatch(format!(
            "'{}' has {} samples but '{}' has {}",
            src.name(),
            src.n(),
            dst.name(),
            dst.n()
        )));
    }
    match (src.labels(), dst.labels()) {
        (Some(a), Some(b)) if a == b => Ok(()),
        (Some(_), Some(_)) => Err(Error::InvalidData(
            "stitching requires both sides to carry the same labels".into(),
        )),
        _ => Err(Error::MissingLabels(
            "stitching requires labels on both representations".into(),
        )),
    }
}

/// Full directed stitch: trains `dst`'s native head on the training split,
/// then the stitcher from `src` into it, sharing one split (head config's
/// seed and fraction decide it).
pub fn stitch_directed(
    src: &RepresentationSet,
    dst: &RepresentationSet,
    family: PredictiveFamily,
    head_cfg: &TrainConfig,
    stitcher_cfg: &TrainConfig,
) -> Result<StitchResult> {
    head_cfg.validate()?;
    stitcher_cfg.validate()?;
    check_paired(src, dst)?;
    let labels = required_labels(dst)?;
    let c = head_cfg
        .num_classes
        .unwrap_or(labels.iter().copied().max().unwrap_or(0) + 1);
    let (train, eval) = split_indices(src.n(), head_cfg);
    let head_cfg_full = TrainConfig {
        num_classes: Some(c),
        ..*head_cfg
    };
    let head = train_head(&dst.subset_rows(&train)?, &head_cfg_full)?;
    train_stitcher_on_split(src, dst, &head, family, stitcher_cfg, &train, &eval)
}
