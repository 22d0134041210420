//! Pairwise covariance of density values at one scale.
//!
//! Heads carry independent noise, so only same-head terms survive:
//!
//! ```text
//! Cov(D(x_j), D(x_k)) = sum_i omega_i(x_j, x_k) - mu_i(x_j) mu_i(x_k)
//! omega(q_j, q_k)     = N(q_j - q_k | 0, 2 beta I) * N((q_j + q_k) / 2 | 0, (beta / 2 + alpha) I)
//! ```
//!
//! The closed form for `omega` follows from the product of the two kernels
//! in `eps` and a Gaussian convolution with the noise density; the
//! Monte-Carlo oracle checks it.

use crate::error::{Error, Result};
use crate::moments::{gauss2d, MomentMaps};
use crate::scene::{Point, ScaleConfig, Scene};

/// `E_eps[N(q_j | eps, beta I) N(q_k | eps, beta I)]` for `eps ~ N(0, alpha I)`.
pub fn omega(q_j: Point, q_k: Point, beta: f64, alpha: f64) -> Result<f64> {
    for v in [beta, alpha] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::NonPositiveVariance(v));
        }
    }
    Ok(omega_unchecked(q_j, q_k, beta, alpha))
}

#[inline]
pub(crate) fn omega_unchecked(q_j: Point, q_k: Point, beta: f64, alpha: f64) -> f64 {
    let diff = q_j - q_k;
    let mid = Point::new(0.5 * (q_j.x + q_k.x), 0.5 * (q_j.y + q_k.y));
    gauss2d(diff.norm_sq(), 2.0 * beta) * gauss2d(mid.norm_sq(), 0.5 * beta + alpha)
}

/// A pair of cells at one scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CovQuery {
    pub scale: usize,
    pub j: usize,
    pub k: usize,
}

/// `Cov(D_s(x_j), D_s(x_k))` for the scene the moments were built from.
pub fn covariance_entry(
    query: CovQuery,
    scene: &Scene,
    moments: &MomentMaps,
    config: &ScaleConfig,
) -> Result<f64> {
    let grid = &moments.grid;
    if query.scale == 0 || query.scale > config.num_scales || query.scale != grid.scale {
        return Err(Error::InvalidConfig(format!(
            "query scale {} does not match moments at scale {} of 1..={}",
            query.scale, grid.scale, config.num_scales
        )));
    }
    if scene.count() != moments.count() {
        return Err(Error::LengthMismatch {
            expected: moments.count(),
            actual: scene.count(),
        });
    }
    for idx in [query.j, query.k] {
        if idx >= grid.len() {
            return Err(Error::IndexOutOfRange {
                index: idx,
                len: grid.len(),
            });
        }
    }
    Ok(pair_covariance(moments, query.j, query.k))
}

/// Unchecked covariance between cells `j` and `k`.
pub(crate) fn pair_covariance(moments: &MomentMaps, j: usize, k: usize) -> f64 {
    let grid = &moments.grid;
    let mut acc = 0.0;
    for head in &moments.heads {
        if !(head.contains(grid, j) && head.contains(grid, k)) {
            continue;
        }
        let q_j = head.offset(grid, j);
        let q_k = head.offset(grid, k);
        acc += omega_unchecked(q_j, q_k, moments.beta, moments.alpha)
            - head.mean_at(grid, j) * head.mean_at(grid, k);
    }
    acc
}
