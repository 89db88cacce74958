//! Alignment-map fitting: for each predictive family, the optimal map from
//! one representation to another, plus the directed and symmetric
//! representational-similarity scores built on the fitted residuals.
//!
//! Orthogonal, orthogonal+scale, and affine fits are closed-form (Procrustes
//! / least squares); a penalized gradient backend serves the
//! invertible-affine family and doubles as an alternative fitter for the
//! others. All fits operate on centered data with the bias recovered
//! afterward, so every score is translation-invariant.
//!
//! When the two sides have different widths, the narrower matrix is
//! zero-padded on the right before a square-constrained fit (orthogonality is
//! only defined square); padding adds no variance and no attainable error, so
//! the family nesting ordering survives it.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{
    center, total_variance, FamilyKind, LinearMap, PredictiveFamily, RepresentationSet,
};
use crate::error::{Error, Result};
use crate::numeric::{mean_squared_row_error, pad_cols, pairwise_xt_r, sample_gaussian};

/// Ridge added to the normal equations of the affine fit.
const AFFINE_RIDGE: f64 = 1e-10;

/// Variance below which a fit input counts as degenerate.
const DEGENERATE_VARIANCE: f64 = 1e-12;

/// Hard floor applied to the singular values of a returned invertible-affine
/// weight, keeping the map invertible even when the hinge penalty's
/// equilibrium sits below it.
const INVERTIBLE_SV_CLAMP: f64 = 1e-4;

/// Hyperparameters of the gradient-descent fitting backend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Relative objective-change threshold under which an iteration counts
    /// as stalled.
    pub tolerance: f64,
    /// Number of consecutive stalled iterations that ends the run as
    /// converged.
    pub patience: usize,
    pub init: GdInit,
}

/// Initialization of the gradient backend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GdInit {
    /// Start from the closed-form fit of the nearest closed-form family.
    /// Descent only improves on it, which is what keeps the fitted-residual
    /// ordering across nested families intact.
    ClosedForm,
    /// Small random init from the given seed (deterministic).
    Seeded(u64),
}

impl Default for GdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            max_iters: 2000,
            tolerance: 1e-9,
            patience: 20,
            init: GdInit::ClosedForm,
        }
    }
}

fn check_same_n(src: &RepresentationSet, dst: &RepresentationSet) -> Result<()> {
    if src.n() != dst.n() {
        return Err(Error::ShapeMismatch(format!(
            "'{}' has {} samples but '{}' has {}",
            src.name(),
            src.n(),
            dst.name(),
            dst.n()
        )));
    }
    Ok(())
}

fn col_means(m: &DMatrix<f64>) -> DVector<f64> {
    crate::numeric::pairwise_col_sums(m) / m.nrows() as f64
}

/// Unconstrained least squares with a small ridge: the optimal affine map.
pub fn fit_affine(src: &RepresentationSet, dst: &RepresentationSet) -> Result<LinearMap> {
    check_same_n(src, dst)?;
    let xc = center(src);
    let yc = center(dst);
    let xtx = xc.data().transpose() * xc.data();
    let xty = xc.data().transpose() * yc.data();
    let d = src.d();

    let mut ridge = AFFINE_RIDGE;
    let weight = loop {
        let a = &xtx + DMatrix::identity(d, d) * ridge;
        match a.cholesky() {
            Some(chol) => break chol.solve(&xty),
            None if ridge < 1.0 => ridge *= 100.0,
            None => {
                return Err(Error::InvalidData(
                    "affine normal equations are not positive definite".into(),
                ))
            }
        }
    };
    let bias = col_means(dst.data()) - weight.transpose() * col_means(src.data());
    LinearMap::new(weight, bias, 1.0, PredictiveFamily::affine())
}

/// Procrustes core: the orthogonal Q minimizing ‖Xc·Q − Yc‖_F, via the SVD
/// UΣVᵀ of XcᵀYc, as Q = U·Vᵀ. Also returns tr Σ (needed for the scale fit).
fn procrustes_q(xc: &DMatrix<f64>, yc: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let m = xc.transpose() * yc;
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let trace: f64 = svd.singular_values.iter().sum();
    (u * vt, trace)
}

pub(crate) struct OrthoFit {
    pub(crate) q: DMatrix<f64>,
    pub(crate) trace: f64,
    pub(crate) xc_norm_sq: f64,
}

pub(crate) fn ortho_core(src: &RepresentationSet, dst: &RepresentationSet) -> Result<OrthoFit> {
    check_same_n(src, dst)?;
    if total_variance(src)? < DEGENERATE_VARIANCE {
        return Err(Error::DegenerateInput(format!(
            "representation '{}' has (near-)zero variance; no orthogonal fit exists",
            src.name()
        )));
    }
    let dpad = src.d().max(dst.d());
    let xc = pad_cols(center(src).data(), dpad);
    let yc = pad_cols(center(dst).data(), dpad);
    let (q, trace) = procrustes_q(&xc, &yc);
    Ok(OrthoFit {
        q,
        trace,
        xc_norm_sq: xc.norm_squared(),
    })
}

/// Builds the returned map from a square fit on padded data: the weight is
/// the first d_src rows of the square matrix (the dropped rows only ever
/// multiply the zero padding), and the bias matches the (padded) means.
fn map_from_square(
    src: &RepresentationSet,
    dst: &RepresentationSet,
    square: &DMatrix<f64>,
    scale: f64,
    family: PredictiveFamily,
) -> Result<LinearMap> {
    let dpad = square.nrows();
    let weight = square.rows(0, src.d()).into_owned();
    let dst_means = col_means(&pad_cols(dst.data(), dpad));
    let bias = dst_means - (weight.transpose() * col_means(src.data())) * scale;
    LinearMap::new(weight, bias, scale, family)
}

/// Closed-form Procrustes fit: the best orthogonal map.
pub fn fit_orthogonal(src: &RepresentationSet, dst: &RepresentationSet) -> Result<LinearMap> {
    let fit = ortho_core(src, dst)?;
    map_from_square(src, dst, &fit.q, 1.0, PredictiveFamily::orthogonal())
}

/// Closed-form orthogonal+scale fit: Procrustes Q with the optimal uniform
/// scale s = tr Σ / ‖Xc‖²_F.
pub fn fit_orthogonal_scale(src: &RepresentationSet, dst: &RepresentationSet) -> Result<LinearMap> {
    let fit = ortho_core(src, dst)?;
    // trΣ = 0 (exactly uncorrelated pair) would give scale 0; floor it at a
    // value too small to move any residual
    let scale = (fit.trace / fit.xc_norm_sq).max(1e-300);
    map_from_square(
        src,
        dst,
        &fit.q,
        scale,
        PredictiveFamily::orthogonal_scale(),
    )
}

enum Penalty {
    None,
    /// weight · ‖WᵀW − I‖²_F
    Orthogonality(f64),
    /// weight · ‖WᵀW − (tr(WᵀW)/d)·I‖²_F — distance from a scaled rotation
    ScaledOrthogonality(f64),
    /// weight · Σ max(0, floor − σᵢ)²
    SingularFloor { weight: f64, floor: f64 },
}

impl Penalty {
    fn value(&self, w: &DMatrix<f64>) -> f64 {
        match *self {
            Penalty::None => 0.0,
            Penalty::Orthogonality(c) => {
                let g = w.transpose() * w;
                c * (g - DMatrix::identity(w.ncols(), w.ncols())).norm_squared()
            }
            Penalty::ScaledOrthogonality(c) => {
                let g = w.transpose() * w;
                let s2 = g.trace() / w.ncols() as f64;
                c * (g - DMatrix::identity(w.ncols(), w.ncols()) * s2).norm_squared()
            }
            Penalty::SingularFloor { weight, floor } => {
                let svd = w.clone().svd(false, false);
                weight
                    * svd
                        .singular_values
                        .iter()
                        .map(|&s| (floor - s).max(0.0).powi(2))
                        .sum::<f64>()
            }
        }
    }

    fn gradient(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        match *self {
            Penalty::None => DMatrix::zeros(w.nrows(), w.ncols()),
            Penalty::Orthogonality(c) => {
                let g = w.transpose() * w;
                let a = g - DMatrix::identity(w.ncols(), w.ncols());
                w * a * (4.0 * c)
            }
            Penalty::ScaledOrthogonality(c) => {
                // with A = WᵀW − (tr/d)·I traceless, d/dW ‖A‖² = 4·W·A
                let g = w.transpose() * w;
                let s2 = g.trace() / w.ncols() as f64;
                let a = g - DMatrix::identity(w.ncols(), w.ncols()) * s2;
                w * a * (4.0 * c)
            }
            Penalty::SingularFloor { weight, floor } => {
                let svd = w.clone().svd(true, true);
                let u = svd.u.expect("u requested");
                let vt = svd.v_t.expect("v_t requested");
                let mut grad = DMatrix::zeros(w.nrows(), w.ncols());
                for k in 0..svd.singular_values.len() {
                    let s = svd.singular_values[k];
                    if s < floor {
                        let coef = -2.0 * weight * (floor - s);
                        for i in 0..w.nrows() {
                            for j in 0..w.ncols() {
                                grad[(i, j)] += coef * u[(i, k)] * vt[(k, j)];
                            }
                        }
                    }
                }
                grad
            }
        }
    }
}

struct GdOutcome {
    w: DMatrix<f64>,
    iterations: usize,
    relative_change: f64,
    converged: bool,
}

/// Full-batch descent on MSE(W) + penalty(W) with backtracking halving, so
/// the objective never increases. Deterministic given (inputs, config).
fn gd_core(xc: &DMatrix<f64>, yc: &DMatrix<f64>, w0: DMatrix<f64>, penalty: &Penalty, cfg: &GdConfig) -> GdOutcome {
    let n = xc.nrows() as f64;
    let mse = |w: &DMatrix<f64>| mean_squared_row_error(&(xc * w), yc);
    let objective = |w: &DMatrix<f64>| mse(w) + penalty.value(w);

    let mut w = w0;
    let mut obj = objective(&w);
    let mut lr = cfg.learning_rate;
    let mut stalled = 0usize;
    let mut rel = f64::INFINITY;
    let mut iterations = 0usize;

    for it in 0..cfg.max_iters {
        iterations = it + 1;
        let resid = xc * &w - yc;
        let grad = pairwise_xt_r(xc, &resid) * (2.0 / n) + penalty.gradient(&w);

        // backtrack until the step does not increase the objective
        let mut accepted = false;
        for _ in 0..48 {
            let cand = &w - &grad * lr;
            let cand_obj = objective(&cand);
            if cand_obj <= obj {
                rel = (obj - cand_obj) / obj.abs().max(1e-300);
                w = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        if !accepted {
            // no descent direction at representable step sizes: a minimum
            rel = 0.0;
            stalled = cfg.patience;
        }
        if rel < cfg.tolerance {
            stalled += 1;
            if stalled >= cfg.patience {
                return GdOutcome {
                    w,
                    iterations,
                    relative_change: rel,
                    converged: true,
                };
            }
        } else {
            stalled = 0;
        }
        // regrow the step well past its initial value: along flat valleys the
        // line search is what sizes the step, not the configured rate
        lr = (lr * 2.0).min(cfg.learning_rate * 1e12);
    }
    GdOutcome {
        w,
        iterations,
        relative_change: rel,
        converged: false,
    }
}

/// Clamps the singular values of `w` to at least `floor` by reconstruction.
fn clamp_singular_values(w: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
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

/// Gradient-descent fit for any family. Required for `InvertibleAffine`;
/// an alternative backend (penalty-constrained rather than closed-form) for
/// the rest.
pub fn fit_gd(
    src: &RepresentationSet,
    dst: &RepresentationSet,
    family: PredictiveFamily,
    cfg: &GdConfig,
) -> Result<LinearMap> {
    check_same_n(src, dst)?;
    if family.kind == FamilyKind::InvertibleAffine && src.d() != dst.d() {
        return Err(Error::ShapeMismatch(format!(
            "invertible-affine fit needs equal widths, got {} and {}",
            src.d(),
            dst.d()
        )));
    }
    if family.kind != FamilyKind::Affine && total_variance(src)? < DEGENERATE_VARIANCE {
        return Err(Error::DegenerateInput(format!(
            "representation '{}' has (near-)zero variance; no orthogonal fit exists",
            src.name()
        )));
    }

    // affine trains at native widths; every constrained family trains square
    // on padded data
    let square = family.kind != FamilyKind::Affine;
    let dpad = src.d().max(dst.d());
    let xc = if square {
        pad_cols(center(src).data(), dpad)
    } else {
        center(src).data().clone()
    };
    let yc = if square {
        pad_cols(center(dst).data(), dpad)
    } else {
        center(dst).data().clone()
    };

    let penalty = match family.kind {
        FamilyKind::Affine => Penalty::None,
        FamilyKind::Orthogonal => Penalty::Orthogonality(family.ortho_penalty_weight),
        FamilyKind::OrthogonalScale => Penalty::ScaledOrthogonality(family.ortho_penalty_weight),
        FamilyKind::InvertibleAffine => Penalty::SingularFloor {
            weight: family.sv_floor_weight,
            floor: family.sv_floor,
        },
    };

    let w0 = match cfg.init {
        GdInit::Seeded(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_gaussian(&mut rng, xc.ncols(), yc.ncols()) * 0.1
        }
        GdInit::ClosedForm => match family.kind {
            FamilyKind::Affine => fit_affine(src, dst)?.weight,
            FamilyKind::Orthogonal => ortho_core(src, dst)?.q,
            // scaled rotation: zero penalty at init, MSE already the
            // closed-form optimum of the next-smaller family
            FamilyKind::OrthogonalScale | FamilyKind::InvertibleAffine => {
                let fit = ortho_core(src, dst)?;
                let s = (fit.trace / fit.xc_norm_sq).max(1e-300);
                fit.q * s
            }
        },
    };

    let out = gd_core(&xc, &yc, w0, &penalty, cfg);
    let w = if family.kind == FamilyKind::InvertibleAffine {
        clamp_singular_values(&out.w, INVERTIBLE_SV_CLAMP)
    } else {
        out.w
    };

    let map = match family.kind {
        FamilyKind::Affine => {
            let bias = col_means(dst.data()) - w.transpose() * col_means(src.data());
            LinearMap::new(w, bias, 1.0, family)?
        }
        FamilyKind::OrthogonalScale => {
            // split the learned scaled rotation into (scale, near-orthogonal Q)
            let s = (w.norm_squared() / dpad as f64).sqrt().max(1e-300);
            map_from_square(src, dst, &(&w / s), s, family)?
        }
        _ => map_from_square(src, dst, &w, 1.0, family)?,
    };

    if !out.converged {
        return Err(Error::ConvergenceFailure {
            iterations: out.iterations,
            relative_change: out.relative_change,
            last: Box::new(map),
        });
    }
    Ok(map)
}

/// Penalized gradient-descent fit of an invertible square map, warm-started
/// from the closed-form scaled rotation. The returned weight always has
/// min σ ≥ 1e-4.
pub fn fit_invertible_affine(
    src: &RepresentationSet,
    dst: &RepresentationSet,
    family: PredictiveFamily,
) -> Result<LinearMap> {
    fit_gd(src, dst, family, &GdConfig::default())
}

/// Fits `family`'s map and returns (map, residual MSE, total variance of
/// dst). For square-constrained families the residual is measured against the
/// zero-padded dst, which leaves both the attainable error and the variance
/// unchanged.
pub fn fit_with_residual(
    src: &RepresentationSet,
    dst: &RepresentationSet,
    family: PredictiveFamily,
) -> Result<(LinearMap, f64, f64)> {
    let map = match family.kind {
        FamilyKind::Affine => fit_affine(src, dst)?,
        FamilyKind::Orthogonal => fit_orthogonal(src, dst)?,
        FamilyKind::OrthogonalScale => fit_orthogonal_scale(src, dst)?,
        FamilyKind::InvertibleAffine => fit_invertible_affine(src, dst, family)?,
    };
    let pred = map.apply(src.data())?;
    let target = if pred.ncols() == dst.d() {
        dst.data().clone()
    } else {
        pad_cols(dst.data(), pred.ncols())
    };
    let mse = mean_squared_row_error(&pred, &target);
    let var = total_variance(dst)?;
    Ok((map, mse, var))
}

/// Directed representational similarity: the fraction of variance in `dst`
/// explained by the best map in the family (R²), 1 − MSE/Var(dst).
///
/// Degenerate target (Var < 1e-12): 1.0 when the residual is also zero —
/// constant targets are perfectly predicted by a constant map — else 0.0.
pub fn directed_rep_similarity(
    src: &RepresentationSet,
    dst: &RepresentationSet,
    family: PredictiveFamily,
) -> Result<f64> {
    let (_, mse, var) = fit_with_residual(src, dst, family)?;
    if var < DEGENERATE_VARIANCE {
        return Ok(if mse < 1e-12 { 1.0 } else { 0.0 });
    }
    Ok(1.0 - mse / var)
}

/// Symmetric representational similarity: the minimum of the two directions.
pub fn symmetric_rep_similarity(
    a: &RepresentationSet,
    b: &RepresentationSet,
    family: PredictiveFamily,
) -> Result<f64> {
    let fwd = directed_rep_similarity(a, b, family)?;
    let bwd = directed_rep_similarity(b, a, family)?;
    Ok(fwd.min(bwd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::sample_orthogonal;
    use approx::assert_abs_diff_eq;

    fn gaussian_set(seed: u64, n: usize, d: usize) -> RepresentationSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RepresentationSet::new(format!("g{seed}"), sample_gaussian(&mut rng, n, d), None).unwrap()
    }

    fn from_matrix(name: &str, m: DMatrix<f64>) -> RepresentationSet {
        RepresentationSet::new(name, m, None).unwrap()
    }

    fn fit_mse(src: &RepresentationSet, dst: &RepresentationSet, map: &LinearMap) -> f64 {
        let pred = map.apply(src.data()).unwrap();
        let target = pad_cols(dst.data(), pred.ncols());
        mean_squared_row_error(&pred, &target)
    }

    #[test]
    fn affine_recovers_exact_map() {
        let src = gaussian_set(1, 60, 4);
        let m = DMatrix::from_row_slice(
            4,
            3,
            &[0.5, -1.0, 2.0, 1.5, 0.2, 0.0, -0.7, 1.1, 0.3, 0.0, -0.4, 0.9],
        );
        let mut y = src.data() * &m;
        for i in 0..y.nrows() {
            for j in 0..y.ncols() {
                y[(i, j)] += [0.3, -2.0, 5.5][j];
            }
        }
        let dst = from_matrix("d", y);
        let map = fit_affine(&src, &dst).unwrap();
        assert!(fit_mse(&src, &dst, &map) <= 1e-16);
    }

    #[test]
    fn affine_on_constant_target_returns_mean_bias() {
        let src = gaussian_set(2, 20, 3);
        let dst = from_matrix("d", DMatrix::from_element(20, 2, 4.25));
        let map = fit_affine(&src, &dst).unwrap();
        assert!(map.weight.norm() < 1e-8);
        assert_abs_diff_eq!(map.bias[0], 4.25, epsilon = 1e-9);
        assert_abs_diff_eq!(map.bias[1], 4.25, epsilon = 1e-9);
    }

    #[test]
    fn affine_fit_is_locally_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src = gaussian_set(4, 50, 3);
        let m = sample_gaussian(&mut rng, 3, 3);
        let noise = sample_gaussian(&mut rng, 50, 3) * 0.1;
        let dst = from_matrix("d", src.data() * &m + noise);
        let map = fit_affine(&src, &dst).unwrap();
        let base = fit_mse(&src, &dst, &map);
        for k in 0..6 {
            let delta = sample_gaussian(&mut rng, 3, 3) * 1e-3;
            let perturbed = LinearMap::new(
                &map.weight + delta,
                map.bias.clone(),
                1.0,
                PredictiveFamily::affine(),
            )
            .unwrap();
            assert!(
                fit_mse(&src, &dst, &perturbed) >= base - 1e-12,
                "perturbation {k} beat the normal-equations fit"
            );
        }
    }

    #[test]
    fn orthogonal_recovers_known_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src = gaussian_set(6, 40, 5);
        let q0 = sample_orthogonal(&mut rng, 5);
        let dst = from_matrix("d", src.data() * &q0);
        let map = fit_orthogonal(&src, &dst).unwrap();
        assert!(fit_mse(&src, &dst, &map) <= 1e-12);
        assert!((center(&src).data() * &map.weight - center(&src).data() * &q0).norm() <= 1e-6);
        let gram = map.weight.transpose() * &map.weight;
        assert!((gram - DMatrix::identity(5, 5)).norm() <= 1e-6);
    }

    #[test]
    fn orthogonal_identity_case() {
        let src = gaussian_set(7, 25, 4);
        let map = fit_orthogonal(&src, &src).unwrap();
        assert!(fit_mse(&src, &src, &map) <= 1e-12);
    }

    #[test]
    fn orthogonal_recovers_planar_rotation_angle() {
        let src = gaussian_set(8, 30, 2);
        let th = 30f64.to_radians();
        // row-vector convention: z·R rotates by +θ
        let r = DMatrix::from_row_slice(2, 2, &[th.cos(), th.sin(), -th.sin(), th.cos()]);
        let dst = from_matrix("d", src.data() * &r);
        let map = fit_orthogonal(&src, &dst).unwrap();
        let angle = map.weight[(0, 1)].atan2(map.weight[(0, 0)]);
        assert_abs_diff_eq!(angle, th, epsilon = 1e-6);
    }

    #[test]
    fn orthogonal_rejects_constant_source() {
        let src = from_matrix("s", DMatrix::from_element(10, 3, 1.5));
        let dst = gaussian_set(9, 10, 3);
        assert!(matches!(
            fit_orthogonal(&src, &dst),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn orthogonal_scale_recovers_known_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let src = gaussian_set(11, 35, 4);
        let q0 = sample_orthogonal(&mut rng, 4);
        let dst = from_matrix("d", src.data() * &q0 * 2.5);
        let map = fit_orthogonal_scale(&src, &dst).unwrap();
        assert_abs_diff_eq!(map.scale, 2.5, epsilon = 1e-9);
        assert!(fit_mse(&src, &dst, &map) <= 1e-12);

        let self_map = fit_orthogonal_scale(&src, &src).unwrap();
        assert_abs_diff_eq!(self_map.scale, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn orthogonal_scale_is_optimal_in_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let src = gaussian_set(13, 45, 3);
        let q0 = sample_orthogonal(&mut rng, 3);
        let noise = sample_gaussian(&mut rng, 45, 3) * 0.2;
        let dst = from_matrix("d", src.data() * &q0 * 0.3 + noise);
        let map = fit_orthogonal_scale(&src, &dst).unwrap();
        let base = fit_mse(&src, &dst, &map);
        for ds in [-1e-4, 1e-4, -1e-2, 1e-2] {
            let tweaked = LinearMap::new(
                map.weight.clone(),
                // re-center the bias for the tweaked scale
                col_means(dst.data())
                    - (map.weight.transpose() * col_means(src.data())) * (map.scale + ds),
                map.scale + ds,
                PredictiveFamily::orthogonal_scale(),
            )
            .unwrap();
            assert!(fit_mse(&src, &dst, &tweaked) >= base - 1e-12);
        }
    }

    #[test]
    fn invertible_fits_well_conditioned_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let src = gaussian_set(15, 50, 3);
        let m = {
            let u = sample_orthogonal(&mut rng, 3);
            let v = sample_orthogonal(&mut rng, 3);
            let mut s = DMatrix::zeros(3, 3);
            for (i, sv) in [1.8, 0.9, 0.5].iter().enumerate() {
                s[(i, i)] = *sv;
            }
            u * s * v
        };
        let dst = from_matrix("d", src.data() * &m);
        let map = fit_invertible_affine(&src, &dst, PredictiveFamily::invertible_affine()).unwrap();
        assert!(
            fit_mse(&src, &dst, &map) <= 1e-8,
            "mse = {}",
            fit_mse(&src, &dst, &map)
        );
    }

    #[test]
    fn invertible_weight_stays_away_from_singular() {
        let src = gaussian_set(16, 40, 3);
        let dst = gaussian_set(17, 40, 3);
        let map = fit_invertible_affine(&src, &dst, PredictiveFamily::invertible_affine()).unwrap();
        let svd = map.weight.clone().svd(false, false);
        let min_sv = svd
            .singular_values
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(min_sv >= 1e-4, "min singular value {min_sv}");
    }

    #[test]
    fn invertible_floor_binds_on_near_singular_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let src = gaussian_set(19, 60, 3);
        let m = {
            let u = sample_orthogonal(&mut rng, 3);
            let v = sample_orthogonal(&mut rng, 3);
            let mut s = DMatrix::zeros(3, 3);
            for (i, sv) in [1.0, 0.5, 1e-5].iter().enumerate() {
                s[(i, i)] = *sv;
            }
            u * s * v
        };
        let dst = from_matrix("d", src.data() * &m);
        let map = fit_invertible_affine(&src, &dst, PredictiveFamily::invertible_affine()).unwrap();
        let svd = map.weight.clone().svd(false, false);
        let min_sv = svd
            .singular_values
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(min_sv > 1e-5, "floor did not bind: min σ = {min_sv}");
    }

    #[test]
    fn directed_similarity_worked_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let src = gaussian_set(21, 50, 4);

        for kind in FamilyKind::ALL {
            let s = directed_rep_similarity(&src, &src, PredictiveFamily::new(kind)).unwrap();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-9);
        }

        let q0 = sample_orthogonal(&mut rng, 4);
        let rotated = from_matrix("r", src.data() * &q0);
        for kind in [
            FamilyKind::Orthogonal,
            FamilyKind::OrthogonalScale,
            FamilyKind::Affine,
        ] {
            let s = directed_rep_similarity(&src, &rotated, PredictiveFamily::new(kind)).unwrap();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-9);
        }

        // generic non-orthogonal target: affine exact, orthogonal strictly worse
        let m = sample_gaussian(&mut rng, 4, 4);
        let skewed = from_matrix("m", src.data() * &m);
        let aff = directed_rep_similarity(&src, &skewed, PredictiveFamily::affine()).unwrap();
        let ort = directed_rep_similarity(&src, &skewed, PredictiveFamily::orthogonal()).unwrap();
        assert_abs_diff_eq!(aff, 1.0, epsilon = 1e-9);
        assert!(ort < aff - 1e-6);
    }

    #[test]
    fn symmetric_similarity_penalizes_lost_column() {
        let a = gaussian_set(22, 60, 4);
        let mut zeroed = a.data().clone();
        for i in 0..zeroed.nrows() {
            zeroed[(i, 3)] = 0.0;
        }
        let b = from_matrix("b", zeroed);
        let fam = PredictiveFamily::affine();
        let fwd = directed_rep_similarity(&a, &b, fam).unwrap();
        let bwd = directed_rep_similarity(&b, &a, fam).unwrap();
        let sym = symmetric_rep_similarity(&a, &b, fam).unwrap();
        assert_abs_diff_eq!(fwd, 1.0, epsilon = 1e-9);
        assert!(bwd < 1.0 - 1e-3, "backward should lose the zeroed column");
        assert_eq!(sym, bwd.min(fwd));
    }

    #[test]
    fn family_scores_are_monotone_in_capacity() {
        for seed in 0..5 {
            let a = gaussian_set(100 + seed, 40, 4);
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let m = sample_gaussian(&mut rng, 4, 4);
            let noise = sample_gaussian(&mut rng, 40, 4) * 0.3;
            let b = from_matrix("b", a.data() * &m + noise);
            for (x, y) in [(&a, &b), (&b, &a)] {
                let o =
                    directed_rep_similarity(x, y, PredictiveFamily::orthogonal()).unwrap();
                let os =
                    directed_rep_similarity(x, y, PredictiveFamily::orthogonal_scale()).unwrap();
                let af = directed_rep_similarity(x, y, PredictiveFamily::affine()).unwrap();
                assert!(o <= os + 1e-9, "seed {seed}: {o} > {os}");
                assert!(os <= af + 2e-9, "seed {seed}: {os} > {af}");
            }
        }
    }

    #[test]
    fn padded_fit_handles_width_mismatch_both_ways() {
        let a = gaussian_set(23, 50, 3);
        let b = gaussian_set(24, 50, 5);
        for (src, dst) in [(&a, &b), (&b, &a)] {
            let o = directed_rep_similarity(src, dst, PredictiveFamily::orthogonal()).unwrap();
            let os =
                directed_rep_similarity(src, dst, PredictiveFamily::orthogonal_scale()).unwrap();
            let af = directed_rep_similarity(src, dst, PredictiveFamily::affine()).unwrap();
            assert!(o.is_finite() && os.is_finite() && af.is_finite());
            assert!(o <= os + 1e-9);
            assert!(os <= af + 2e-9);
        }
        assert!(matches!(
            fit_invertible_affine(&a, &b, PredictiveFamily::invertible_affine()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn scores_are_translation_invariant_and_scale_equivariant() {
        let a = gaussian_set(25, 40, 3);
        let b = gaussian_set(26, 40, 3);
        let shifted = from_matrix("s", b.data().map(|v| v + 11.0));
        let scaled = from_matrix("c", b.data() * 3.0);

        for fam in [
            PredictiveFamily::orthogonal(),
            PredictiveFamily::orthogonal_scale(),
            PredictiveFamily::affine(),
        ] {
            let base = directed_rep_similarity(&a, &b, fam).unwrap();
            let tr = directed_rep_similarity(&a, &shifted, fam).unwrap();
            assert_abs_diff_eq!(base, tr, epsilon = 1e-9);
        }
        for fam in [PredictiveFamily::orthogonal_scale(), PredictiveFamily::affine()] {
            let base = directed_rep_similarity(&a, &b, fam).unwrap();
            let sc = directed_rep_similarity(&a, &scaled, fam).unwrap();
            assert_abs_diff_eq!(base, sc, epsilon = 1e-9);
        }
    }

    #[test]
    fn gd_backend_approximates_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let src = gaussian_set(28, 40, 3);
        let q0 = sample_orthogonal(&mut rng, 3);
        let dst = from_matrix("d", src.data() * &q0 * 1.7);

        for fam in [
            PredictiveFamily::orthogonal(),
            PredictiveFamily::orthogonal_scale(),
            PredictiveFamily::affine(),
        ] {
            let map = fit_gd(&src, &dst, fam, &GdConfig::default()).unwrap();
            if fam.kind != FamilyKind::Affine {
                let gram = map.weight.transpose() * &map.weight;
                let dev = (gram - DMatrix::identity(3, 3)).norm();
                assert!(dev <= 0.05, "{:?} gram deviation {dev}", fam.kind);
            }
        }

        // random init is deterministic per seed
        let cfg = GdConfig {
            init: GdInit::Seeded(99),
            ..GdConfig::default()
        };
        let m1 = fit_gd(&src, &dst, PredictiveFamily::affine(), &cfg).unwrap();
        let m2 = fit_gd(&src, &dst, PredictiveFamily::affine(), &cfg).unwrap();
        assert_eq!(m1.weight, m2.weight);
    }
}
