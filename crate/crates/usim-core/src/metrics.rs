//! Baseline representational-similarity metrics: linear CKA, RSA, SVCCA, and
//! mean CCA correlation.
//!
//! These are the reference points the usable-information scores are compared
//! against. All of them are pure functions of immutable inputs.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{center, total_variance, RepresentationSet};
use crate::error::{Error, Result};

/// Near-zero variance threshold below which inputs count as degenerate.
const DEGENERATE_VARIANCE: f64 = 1e-12;

/// Knobs for the CCA-family metrics. RSA distance is fixed Euclidean and has
/// no knob.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// SVCCA keeps the smallest k singular directions whose energy (squared
    /// singular values) reaches this fraction of the total. Must be in (0, 1].
    pub svcca_variance_retained: f64,
    /// Ridge added to covariance diagonals before whitening.
    pub cca_ridge: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            svcca_variance_retained: 0.99,
            cca_ridge: 1e-8,
        }
    }
}

impl MetricConfig {
    fn validate(&self) -> Result<()> {
        if !(self.svcca_variance_retained > 0.0 && self.svcca_variance_retained <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "svcca_variance_retained must be in (0, 1], got {}",
                self.svcca_variance_retained
            )));
        }
        if !(self.cca_ridge >= 0.0) {
            return Err(Error::InvalidSpec(format!(
                "cca_ridge must be nonnegative, got {}",
                self.cca_ridge
            )));
        }
        Ok(())
    }
}

fn check_same_n(a: &RepresentationSet, b: &RepresentationSet) -> Result<()> {
    if a.n() != b.n() {
        return Err(Error::ShapeMismatch(format!(
            "'{}' has {} samples but '{}' has {}",
            a.name(),
            a.n(),
            b.name(),
            b.n()
        )));
    }
    Ok(())
}

fn check_nondegenerate(r: &RepresentationSet) -> Result<()> {
    if total_variance(r)? < DEGENERATE_VARIANCE {
        return Err(Error::DegenerateInput(format!(
            "representation '{}' has (near-)zero variance",
            r.name()
        )));
    }
    Ok(())
}

/// Linear centered kernel alignment:
/// ‖BcᵀAc‖²_F / (‖AcᵀAc‖_F · ‖BcᵀBc‖_F) on centered Ac, Bc.
pub fn linear_cka(a: &RepresentationSet, b: &RepresentationSet) -> Result<f64> {
    check_same_n(a, b)?;
    check_nondegenerate(a)?;
    check_nondegenerate(b)?;
    let ac = center(a);
    let bc = center(b);
    let num = (bc.data().transpose() * ac.data()).norm_squared();
    let ga = (ac.data().transpose() * ac.data()).norm();
    let gb = (bc.data().transpose() * bc.data()).norm();
    Ok(num / (ga * gb))
}

/// Representational similarity analysis: Spearman correlation between the
/// strict-upper-triangle entries of the two Euclidean distance matrices.
pub fn rsa(a: &RepresentationSet, b: &RepresentationSet) -> Result<f64> {
    check_same_n(a, b)?;
    if a.n() < 4 {
        return Err(Error::InvalidData(format!(
            "rsa needs at least 4 samples, got {}",
            a.n()
        )));
    }
    let da = rdm_upper(a.data());
    let db = rdm_upper(b.data());
    spearman(&da, &db).map_err(|e| match e {
        Error::DegenerateInput(_) => {
            Error::DegenerateInput("all pairwise distances are equal".into())
        }
        other => other,
    })
}

/// Strict upper triangle of the pairwise Euclidean distance matrix, row-major
/// order (i < j).
fn rdm_upper(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = 0.0;
            for k in 0..m.ncols() {
                let e = m[(i, k)] - m[(j, k)];
                s += e * e;
            }
            out.push(s.sqrt());
        }
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::ShapeMismatch(format!(
            "spearman inputs have lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    if u.len() < 2 {
        return Err(Error::InvalidData(
            "spearman needs at least 2 entries".into(),
        ));
    }
    for (name, xs) in [("first", u), ("second", v)] {
        if xs.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidData(format!(
                "spearman {name} input has a non-finite entry"
            )));
        }
        if xs.iter().all(|&x| x == xs[0]) {
            return Err(Error::DegenerateInput(format!(
                "spearman {name} input is constant"
            )));
        }
    }
    pearson(&average_ranks(u), &average_ranks(v))
}

/// 1-based ranks; tied values all receive the mean of the ranks they span.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&i, &j| xs[i].partial_cmp(&xs[j]).expect("finite values"));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // positions i..=j share one value; mean of ranks i+1..=j+1
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation.
pub fn pearson(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() || u.len() < 2 {
        return Err(Error::ShapeMismatch(format!(
            "pearson inputs have lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let n = u.len() as f64;
    let mu = u.iter().sum::<f64>() / n;
    let mv = v.iter().sum::<f64>() / n;
    let mut suu = 0.0;
    let mut svv = 0.0;
    let mut suv = 0.0;
    for (&x, &y) in u.iter().zip(v.iter()) {
        suu += (x - mu) * (x - mu);
        svv += (y - mv) * (y - mv);
        suv += (x - mu) * (y - mv);
    }
    if suu <= 0.0 || svv <= 0.0 {
        return Err(Error::DegenerateInput(
            "pearson input has zero variance".into(),
        ));
    }
    Ok(suv / (suu.sqrt() * svv.sqrt()))
}

/// SVCCA: reduce each side to the smallest singular subspace holding the
/// configured energy fraction, then mean canonical correlation between the
/// reduced coordinates.
pub fn svcca(a: &RepresentationSet, b: &RepresentationSet, cfg: &MetricConfig) -> Result<f64> {
    cfg.validate()?;
    check_same_n(a, b)?;
    if a.n() <= a.d().max(b.d()) {
        log::warn!(
            "svcca with n = {} ≤ max(d) = {} is unreliable",
            a.n(),
            a.d().max(b.d())
        );
    }
    let ra = svd_reduce(center(a).data(), cfg.svcca_variance_retained)?;
    let rb = svd_reduce(center(b).data(), cfg.svcca_variance_retained)?;
    mean_cca_mat(&ra, &rb, cfg.cca_ridge)
}

/// Mean canonical correlation between the full representations (SVCCA without
/// the truncation step).
pub fn mean_cca(a: &RepresentationSet, b: &RepresentationSet, cfg: &MetricConfig) -> Result<f64> {
    cfg.validate()?;
    check_same_n(a, b)?;
    check_nondegenerate(a)?;
    check_nondegenerate(b)?;
    mean_cca_mat(center(a).data(), center(b).data(), cfg.cca_ridge)
}

/// Keeps the top singular directions of a centered matrix whose cumulative
/// squared-singular-value energy first reaches `retain` of the total; returns
/// the n×k coordinate matrix U_k·Σ_k.
pub(crate) fn svd_reduce(m: &DMatrix<f64>, retain: f64) -> Result<DMatrix<f64>> {
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    // sort directions by singular value, largest first (defensive: don't
    // rely on the factorization's ordering)
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .expect("finite singular values")
    });
    let total: f64 = svd.singular_values.iter().map(|s| s * s).sum();
    if total < DEGENERATE_VARIANCE {
        return Err(Error::DegenerateInput(
            "svcca input has (near-)zero rank".into(),
        ));
    }
    let mut k = 0;
    let mut cum = 0.0;
    for &i in &idx {
        cum += svd.singular_values[i] * svd.singular_values[i];
        k += 1;
        if cum >= retain * total {
            break;
        }
    }
    let mut out = DMatrix::zeros(m.nrows(), k);
    for (c, &i) in idx.iter().take(k).enumerate() {
        let s = svd.singular_values[i];
        for r in 0..m.nrows() {
            out[(r, c)] = u[(r, i)] * s;
        }
    }
    Ok(out)
}

/// Mean of the canonical correlations between two centered coordinate
/// matrices: singular values of Caa^{-1/2}·Cab·Cbb^{-1/2}, clamped to [0, 1],
/// averaged over min(d_a, d_b).
fn mean_cca_mat(x: &DMatrix<f64>, y: &DMatrix<f64>, ridge: f64) -> Result<f64> {
    let n = x.nrows() as f64;
    let da = x.ncols();
    let db = y.ncols();
    let caa = x.transpose() * x / (n - 1.0) + DMatrix::identity(da, da) * ridge;
    let cbb = y.transpose() * y / (n - 1.0) + DMatrix::identity(db, db) * ridge;
    let cab = x.transpose() * y / (n - 1.0);
    let t = inv_sqrt_spd(&caa) * cab * inv_sqrt_spd(&cbb);
    let svd = t.svd(false, false);
    let k = da.min(db);
    let mut vals: Vec<f64> = svd.singular_values.iter().copied().collect();
    vals.sort_by(|a, b| b.partial_cmp(a).expect("finite singular values"));
    let sum: f64 = vals.iter().take(k).map(|s| s.clamp(0.0, 1.0)).sum();
    Ok(sum / k as f64)
}

/// Inverse square root of a symmetric positive-definite matrix via its
/// eigendecomposition; eigenvalues are floored away from zero for safety.
fn inv_sqrt_spd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let d = m.nrows();
    let mut out = DMatrix::zeros(d, d);
    for k in 0..d {
        let lam = eig.eigenvalues[k].max(1e-300);
        let w = 1.0 / lam.sqrt();
        let v = eig.eigenvectors.column(k);
        for i in 0..d {
            for j in 0..d {
                out[(i, j)] += w * v[i] * v[j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{sample_gaussian, sample_orthogonal};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rset(rows: &[&[f64]]) -> RepresentationSet {
        let m = DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
        RepresentationSet::new("t", m, None).unwrap()
    }

    fn gaussian_set(seed: u64, n: usize, d: usize) -> RepresentationSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RepresentationSet::new(format!("g{seed}"), sample_gaussian(&mut rng, n, d), None).unwrap()
    }

    #[test]
    fn cka_self_is_one() {
        let a = gaussian_set(1, 30, 4);
        assert_abs_diff_eq!(linear_cka(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cka_invariant_to_orthogonal_map_and_shift() {
        let a = gaussian_set(2, 40, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = sample_orthogonal(&mut rng, 5);
        let mut bm = a.data() * &q;
        for i in 0..bm.nrows() {
            for j in 0..bm.ncols() {
                bm[(i, j)] = bm[(i, j)] * 2.5 + 0.7;
            }
        }
        let b = RepresentationSet::new("b", bm, None).unwrap();
        assert_abs_diff_eq!(linear_cka(&a, &b).unwrap(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn cka_matches_frozen_fixture() {
        let a = rset(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0], &[0.0, 0.0]]);
        let b = rset(&[&[2.0, 1.0], &[1.0, 3.0], &[0.0, 1.0], &[1.0, 0.0]]);
        let v = linear_cka(&a, &b).unwrap();
        assert_abs_diff_eq!(v, 0.4801960383990247, epsilon = 1e-12);
        // symmetry
        assert_abs_diff_eq!(v, linear_cka(&b, &a).unwrap(), epsilon = 1e-9);
    }

    #[test]
    fn cka_rejects_degenerate_and_mismatched() {
        let a = gaussian_set(4, 10, 3);
        let flat = rset(&[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]);
        let a3 = a.subset_rows(&[0, 1, 2]).unwrap();
        assert!(matches!(
            linear_cka(&a3, &flat),
            Err(Error::DegenerateInput(_))
        ));
        let b = gaussian_set(5, 11, 3);
        assert!(matches!(
            linear_cka(&a, &b),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn spearman_examples() {
        assert_abs_diff_eq!(
            spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            spearman(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]).unwrap(),
            -1.0,
            epsilon = 1e-12
        );
        // ties on both sides: ranks (1, 2.5, 2.5, 4) vs (4, 2.5, 2.5, 1)
        assert_abs_diff_eq!(
            spearman(&[1.0, 2.0, 2.0, 3.0], &[4.0, 1.0, 1.0, 0.0]).unwrap(),
            -1.0,
            epsilon = 1e-12
        );
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn rsa_self_and_scaling() {
        let a = gaussian_set(6, 12, 3);
        assert_abs_diff_eq!(rsa(&a, &a).unwrap(), 1.0, epsilon = 1e-12);

        let scaled =
            RepresentationSet::new("s", a.data() * 3.25, None).unwrap();
        assert_abs_diff_eq!(rsa(&a, &scaled).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rsa_equidistant_points_are_degenerate() {
        // one-hot rows: every pairwise distance is √2
        let a = rset(&[
            &[1.0, 0.0, 0.0, 0.0],
            &[0.0, 1.0, 0.0, 0.0],
            &[0.0, 0.0, 1.0, 0.0],
            &[0.0, 0.0, 0.0, 1.0],
        ]);
        let b = gaussian_set(7, 4, 3);
        assert!(matches!(rsa(&a, &b), Err(Error::DegenerateInput(_))));
        assert!(matches!(
            rsa(&b.subset_rows(&[0, 1, 2]).unwrap(), &b.subset_rows(&[0, 1, 2]).unwrap()),
            Err(Error::InvalidData(_))
        ));
    }

    #[test]
    fn svd_reduce_keeps_dominant_directions() {
        // column 0 carries ~99.99% of the energy
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut m = sample_gaussian(&mut rng, 30, 3);
        for i in 0..30 {
            m[(i, 0)] *= 100.0;
            m[(i, 1)] *= 0.01;
            m[(i, 2)] *= 0.01;
        }
        let means = m.row_mean();
        for i in 0..30 {
            for j in 0..3 {
                m[(i, j)] -= means[j];
            }
        }
        assert_eq!(svd_reduce(&m, 0.99).unwrap().ncols(), 1);
        assert_eq!(svd_reduce(&m, 1.0).unwrap().ncols(), 3);
    }

    #[test]
    fn svcca_self_and_orthogonal_invariance() {
        let cfg = MetricConfig::default();
        let a = gaussian_set(9, 50, 4);
        assert_abs_diff_eq!(svcca(&a, &a, &cfg).unwrap(), 1.0, epsilon = 1e-6);

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let q = sample_orthogonal(&mut rng, 4);
        let b = RepresentationSet::new("b", a.data() * q, None).unwrap();
        assert_abs_diff_eq!(svcca(&a, &b, &cfg).unwrap(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn svcca_matches_frozen_fixture() {
        // 20×3 draws with the second matrix built from the first two
        // principal directions plus small noise; expected value frozen from
        // an independent generalized-eigenproblem computation
        let a = rset(&[
            &[-1.423825, 1.263728, -0.870662],
            &[-0.259173, -0.075343, -0.740885],
            &[-1.367793, 0.648893, 0.361058],
            &[-1.952863, 2.34741, 0.968497],
            &[-0.759387, 0.902198, -0.466953],
            &[-0.06069, 0.788844, -1.256668],
            &[0.575858, 1.398979, 1.322298],
            &[-0.299699, 0.902919, -1.621583],
            &[-0.158189, 0.449484, -1.343601],
            &[-0.081688, 1.72474, 2.618159],
            &[0.777361, 0.828633, -0.958988],
            &[-1.209388, -1.412292, 0.541547],
            &[0.751939, -0.65876, -1.228675],
            &[0.257558, 0.312903, -0.130812],
            &[1.269983, -0.092962, -0.066151],
            &[-1.108214, 0.135957, 1.347078],
            &[0.061144, 0.070915, 0.433655],
            &[0.277484, 0.530252, 0.536721],
            &[0.61835, -0.795017, 0.300031],
            &[-1.602702, 0.266799, -1.261624],
        ]);
        let b = rset(&[
            &[0.06547, -1.56612],
            &[0.79285, -0.023896],
            &[-0.82089, -0.763383],
            &[-2.086189, -1.723345],
            &[0.073596, -0.802415],
            &[0.916526, -0.548493],
            &[-1.369903, 0.902173],
            &[1.116937, -0.901862],
            &[1.232195, -0.471317],
            &[-2.849784, 0.817743],
            &[0.896706, 0.234698],
            &[-0.098869, 0.449883],
            &[1.717948, 0.798292],
            &[0.205724, 0.53393],
            &[0.674623, 1.512653],
            &[-1.325722, 0.174268],
            &[-0.141975, 0.728623],
            &[-0.391878, 0.681349],
            &[0.414926, 1.400808],
            &[0.723395, -1.436653],
        ]);
        let v = svcca(&a, &b, &MetricConfig::default()).unwrap();
        assert_abs_diff_eq!(v, 0.9993742073327795, epsilon = 1e-9);
    }

    #[test]
    fn mean_cca_invariances_and_null() {
        let cfg = MetricConfig::default();
        let a = gaussian_set(11, 60, 4);
        assert_abs_diff_eq!(mean_cca(&a, &a, &cfg).unwrap(), 1.0, epsilon = 1e-6);

        // invertible map: CCA is invariant
        let m = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.2, 0.0, -0.3, //
                0.0, 2.0, 0.1, 0.0, //
                0.5, 0.0, 0.8, 0.0, //
                0.0, 0.0, 0.0, 1.5,
            ],
        );
        let b = RepresentationSet::new("b", a.data() * m, None).unwrap();
        assert_abs_diff_eq!(mean_cca(&a, &b, &cfg).unwrap(), 1.0, epsilon = 1e-5);

        // independent pair with n ≫ d: near the permutation null, well below 0.5
        let x = gaussian_set(12, 300, 3);
        let y = gaussian_set(13, 300, 3);
        let null = mean_cca(&x, &y, &cfg).unwrap();
        assert!(null < 0.5, "null mean CCA {null}");
        assert!(null >= 0.0);
    }

    #[test]
    fn metric_config_is_validated() {
        let a = gaussian_set(14, 20, 3);
        let bad = MetricConfig {
            svcca_variance_retained: 0.0,
            ..MetricConfig::default()
        };
        assert!(matches!(
            svcca(&a, &a, &bad),
            Err(Error::InvalidSpec(_))
        ));
    }
}
