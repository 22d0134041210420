//! Small dense symmetric helpers for the `M x M` blocks of the low-rank path.
//! Matrices are row-major `Vec<f64>`.

use crate::error::{Error, Result};

/// Diagonal jitter ladder tried when a factorization fails.
pub(crate) const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Lower-triangular Cholesky factor `L` with `A = L L^T`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// The factor of a `0 x 0` matrix.
    pub(crate) fn empty() -> Self {
        Self { n: 0, l: Vec::new() }
    }

    /// Factorizes `a + jitter * I`, or returns `None` if a pivot is not positive.
    pub(crate) fn factor(a: &[f64], n: usize, jitter: f64) -> Option<Self> {
        debug_assert_eq!(a.len(), n * n);
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a[i * n + j];
                if i == j {
                    sum += jitter;
                }
                for k in 0..j {
                    sum -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return None;
                    }
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        Some(Self { n, l })
    }

    /// Factorizes `a`, escalating diagonal jitter along [`JITTER_LADDER`]
    /// until the factorization succeeds and the reciprocal 1-norm condition
    /// number of `a + jitter * I` is at least `min_rcond`. The last rung is
    /// accepted whenever it factors. Returns the factor together with the
    /// jitter that was used.
    pub(crate) fn factor_conditioned(a: &[f64], n: usize, min_rcond: f64) -> Result<(Self, f64)> {
        let mut last = None;
        for jitter in std::iter::once(0.0).chain(JITTER_LADDER) {
            if let Some(c) = Self::factor(a, n, jitter) {
                if c.rcond(a, jitter) >= min_rcond {
                    return Ok((c, jitter));
                }
                last = Some((c, jitter));
            }
        }
        last.filter(|&(_, j)| j == JITTER_LADDER[JITTER_LADDER.len() - 1])
            .ok_or(Error::NotPositiveDefinite {
                jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
            })
    }

    /// `1 / (|A|_1 |A^-1|_1)` for `A = a + jitter * I`, with the inverse
    /// formed from this factor.
    fn rcond(&self, a: &[f64], jitter: f64) -> f64 {
        let n = self.n;
        let col_norm = |m: &[f64]| {
            (0..n)
                .map(|c| (0..n).map(|r| m[r * n + c].abs()).sum::<f64>())
                .fold(0.0, f64::max)
        };
        let mut shifted = a.to_vec();
        for i in 0..n {
            shifted[i * n + i] += jitter;
        }
        // A^-1 = L^-T L^-1; with Y = L^-1, entry (i, k) is sum_r Y[r, i] Y[r, k].
        let mut y = vec![0.0; n * n];
        for i in 0..n {
            y[i * n + i] = 1.0;
        }
        self.forward_solve_columns(&mut y, n);
        let mut inv = vec![0.0; n * n];
        for i in 0..n {
            for k in i..n {
                let v: f64 = (k.max(i)..n).map(|r| y[r * n + i] * y[r * n + k]).sum();
                inv[i * n + k] = v;
                inv[k * n + i] = v;
            }
        }
        let norm = col_norm(&shifted) * col_norm(&inv);
        if norm.is_finite() && norm > 0.0 {
            1.0 / norm
        } else {
            0.0
        }
    }

    /// Overwrites every column of the row-major `n x m` matrix `b` with
    /// `L^{-1} b`.
    pub(crate) fn forward_solve_columns(&self, b: &mut [f64], m: usize) {
        let n = self.n;
        for i in 0..n {
            for k in 0..i {
                let lik = self.l[i * n + k];
                if lik != 0.0 {
                    for c in 0..m {
                        b[i * m + c] -= lik * b[k * m + c];
                    }
                }
            }
            let d = self.l[i * n + i];
            for c in 0..m {
                b[i * m + c] /= d;
            }
        }
    }

    /// Overwrites `b` with `A^{-1} b`.
    pub(crate) fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        self.forward_solve_columns(b, 1);
        for i in (0..n).rev() {
            let mut v = b[i];
            for k in i + 1..n {
                v -= self.l[k * n + i] * b[k];
            }
            b[i] = v / self.l[i * n + i];
        }
    }
}

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
