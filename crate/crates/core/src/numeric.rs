//! Small numeric helpers shared across the crate.

use nalgebra::Matrix2;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// log(sum(exp(x))) over a slice, stable against under/overflow.
///
/// Returns `f64::NEG_INFINITY` for an empty slice or all-`-inf` input.
pub fn log_sum_exp(log_weights: &[f64]) -> f64 {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = log_weights.iter().map(|&w| (w - max).exp()).sum();
    max + sum.ln()
}

/// Chi-square quantile with `dof` degrees of freedom.
///
/// `prob = 1.0` maps to `+inf` (gate everything), which is what the
/// association stage uses to disable gating in exact-oracle comparisons.
pub fn chi_square_quantile(prob: f64, dof: f64) -> f64 {
    assert!((0.0..=1.0).contains(&prob), "probability out of range");
    if prob >= 1.0 {
        return f64::INFINITY;
    }
    if prob <= 0.0 {
        return 0.0;
    }
    ChiSquared::new(dof).expect("dof > 0").inverse_cdf(prob)
}

/// log of the 2-D Gaussian density N(x; mean, cov).
pub fn log_gaussian2(
    x: &nalgebra::Vector2<f64>,
    mean: &nalgebra::Vector2<f64>,
    cov: &Matrix2<f64>,
) -> crate::Result<f64> {
    let chol = cov
        .cholesky()
        .ok_or(crate::Error::NotPositiveDefinite("gaussian covariance"))?;
    let diff = x - mean;
    let maha_sq = diff.dot(&chol.solve(&diff));
    let log_det = 2.0 * chol.l().diagonal().map(f64::ln).sum();
    Ok(-0.5 * (2.0 * LN_TWO_PI + log_det + maha_sq))
}

pub const LN_TWO_PI: f64 = 1.8378770664093453;

/// Principal square root of a symmetric positive semidefinite 2x2 matrix.
pub fn sqrt_spd2(m: &Matrix2<f64>) -> Matrix2<f64> {
    // Closed form via trace/determinant; valid for symmetric PSD input.
    let det = (m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]).max(0.0);
    let s = det.sqrt();
    let t = (m.trace() + 2.0 * s).sqrt();
    if t <= 0.0 {
        return Matrix2::zeros();
    }
    (m + Matrix2::identity() * s) / t
}

/// Squared Mahalanobis distance of `x` from N(mean, cov).
pub fn mahalanobis_sq2(
    x: &nalgebra::Vector2<f64>,
    mean: &nalgebra::Vector2<f64>,
    cov: &Matrix2<f64>,
) -> crate::Result<f64> {
    let chol = cov
        .cholesky()
        .ok_or(crate::Error::NotPositiveDefinite("innovation covariance"))?;
    let diff = x - mean;
    Ok(diff.dot(&chol.solve(&diff)))
}

/// SplitMix64 step, used to derive independent sub-seeds deterministically.
pub fn split_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
