//! Internal numeric plumbing: deterministic reductions, random samplers, and
//! formatting shared across modules.
//!
//! Reductions over the sample axis use midpoint-recursive (pairwise)
//! summation. Besides better rounding behavior, this makes full-batch
//! statistics bitwise invariant under dataset duplication: for a stacked
//! input `[X; X]` the top split lands exactly between the two copies, so the
//! total is an exact doubling and the mean reproduces the original bits.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Leaf size below which summation is a plain sequential loop.
const PAIRWISE_LEAF: usize = 8;

/// Pairwise sum of a slice.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= PAIRWISE_LEAF {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Pairwise-summed `X[rows]ᵀ · R[rows]` over the sample axis: the
/// accumulation of per-sample outer products `xᵢᵀ rᵢ`.
pub(crate) fn pairwise_xt_r(x: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(x.nrows(), r.nrows());
    xt_r_range(x, r, 0, x.nrows())
}

fn xt_r_range(x: &DMatrix<f64>, r: &DMatrix<f64>, lo: usize, hi: usize) -> DMatrix<f64> {
    if hi - lo <= PAIRWISE_LEAF * 4 {
        return x.rows_range(lo..hi).transpose() * r.rows_range(lo..hi);
    }
    let mid = lo + (hi - lo) / 2;
    xt_r_range(x, r, lo, mid) + xt_r_range(x, r, mid, hi)
}

/// Pairwise-summed column totals of `m` (sum over the sample axis), as a
/// length-`ncols` vector.
pub(crate) fn pairwise_col_sums(m: &DMatrix<f64>) -> DVector<f64> {
    col_sums_range(m, 0, m.nrows())
}

fn col_sums_range(m: &DMatrix<f64>, lo: usize, hi: usize) -> DVector<f64> {
    if hi - lo <= PAIRWISE_LEAF * 4 {
        let mut acc = DVector::zeros(m.ncols());
        for i in lo..hi {
            for j in 0..m.ncols() {
                acc[j] += m[(i, j)];
            }
        }
        return acc;
    }
    let mid = lo + (hi - lo) / 2;
    col_sums_range(m, lo, mid) + col_sums_range(m, mid, hi)
}

/// n×d matrix of standard normal draws, filled row by row.
pub(crate) fn sample_gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

/// Random d×d orthogonal matrix: QR of a Gaussian matrix with the sign of
/// each column fixed so R has a positive diagonal (Haar-uniform, and a
/// deterministic function of the RNG stream).
pub(crate) fn sample_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let g = sample_gaussian(rng, d, d);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Zero-pad `m` on the right to `d` columns; passthrough when already wide enough.
pub(crate) fn pad_cols(m: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    assert!(m.ncols() <= d);
    if m.ncols() == d {
        return m.clone();
    }
    let mut out = DMatrix::zeros(m.nrows(), d);
    out.view_mut((0, 0), (m.nrows(), m.ncols())).copy_from(m);
    out
}

/// Format with 17 significant digits — enough to reproduce the exact f64 on
/// read-back. Used for every floating-point cell the toolkit writes to CSV.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Mean squared row error between two same-shape matrices: the per-sample
/// squared Euclidean distance averaged (pairwise) over samples.
pub(crate) fn mean_squared_row_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let per_row: Vec<f64> = (0..a.nrows())
        .map(|i| {
            let mut s = 0.0;
            for j in 0..a.ncols() {
                let e = a[(i, j)] - b[(i, j)];
                s += e * e;
            }
            s
        })
        .collect();
    pairwise_sum(&per_row) / a.nrows() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn pairwise_sum_matches_naive() {
        let xs: Vec<f64> = (0..103).map(|i| (i as f64).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-12);
    }

    #[test]
    fn pairwise_sum_doubles_exactly_under_duplication() {
        let xs: Vec<f64> = (0..37).map(|i| 0.1 + (i as f64).cos() / 3.0).collect();
        let mut doubled = xs.clone();
        doubled.extend_from_slice(&xs);
        let s = pairwise_sum(&xs);
        let s2 = pairwise_sum(&doubled);
        assert_eq!(s2.to_bits(), (2.0 * s).to_bits());
        // and the mean reproduces the original bits
        assert_eq!(
            (s2 / doubled.len() as f64).to_bits(),
            (s / xs.len() as f64).to_bits()
        );
    }

    #[test]
    fn xt_r_matches_direct_product_and_duplicates_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = sample_gaussian(&mut rng, 53, 4);
        let r = sample_gaussian(&mut rng, 53, 3);
        let direct = x.transpose() * &r;
        let pw = pairwise_xt_r(&x, &r);
        assert!((&direct - &pw).norm() < 1e-12);

        let xx = DMatrix::from_fn(106, 4, |i, j| x[(i % 53, j)]);
        let rr = DMatrix::from_fn(106, 3, |i, j| r[(i % 53, j)]);
        // [X; X] stacking: first 53 rows, then the same 53 again
        let x2 = {
            let mut m = DMatrix::zeros(106, 4);
            m.rows_mut(0, 53).copy_from(&x);
            m.rows_mut(53, 53).copy_from(&x);
            m
        };
        let r2 = {
            let mut m = DMatrix::zeros(106, 3);
            m.rows_mut(0, 53).copy_from(&r);
            m.rows_mut(53, 53).copy_from(&r);
            m
        };
        let _ = (xx, rr);
        let pw2 = pairwise_xt_r(&x2, &r2);
        for i in 0..4 {
            for j in 0..3 {
                assert_eq!(pw2[(i, j)].to_bits(), (2.0 * pw[(i, j)]).to_bits());
            }
        }
    }

    #[test]
    fn orthogonal_sampler_is_orthogonal_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let q = sample_orthogonal(&mut rng, 6);
        let gram = q.transpose() * &q;
        assert!((gram - DMatrix::identity(6, 6)).norm() < 1e-12);

        let mut rng2 = ChaCha8Rng::seed_from_u64(42);
        let q2 = sample_orthogonal(&mut rng2, 6);
        assert_eq!(q, q2);
    }

    #[test]
    fn fmt_f64_round_trips_exactly() {
        for v in [
            0.1,
            -3.0,
            1.0 / 3.0,
            std::f64::consts::PI,
            6.02e23,
            -1.7e-300,
        ] {
            let back: f64 = fmt_f64(v).parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits());
        }
    }
}
