//! Diagonal-plus-low-rank covariance and its fast inverse.
//!
//! The approximation keeps the full diagonal `V` and the off-diagonal
//! covariance among the `M` highest-variance cells `L`:
//!
//! ```text
//! Sigma_hat     = V + P C_L P^T                     (C_L has a zero diagonal)
//! Sigma_hat^-1  = V^-1 - P B_L P^T
//! B_L           = V_L^-1 [C_L - C_L (C_L + V_L)^-1 C_L] V_L^-1
//! ```
//!
//! `P` is the cell-selection operator; it is never materialized, only used as
//! gather/scatter over `L`. `C_L + V_L` is the restriction of `Sigma_hat` to
//! `L`, so the only factorization needed is a Cholesky of that `M x M` block.

use std::cmp::Ordering;

use crate::covariance::omega_unchecked;
use crate::error::{Error, Result};
use crate::linalg::{compensated_sum, Cholesky};
use crate::moments::MomentMaps;
use crate::scene::{ScaleConfig, ScaleGrid, Scene};

/// Largest grid for which the dense helpers below will allocate `J x J`.
pub const DENSIFY_LIMIT: usize = 4096;

/// Smallest acceptable reciprocal condition number of `C_L + V_L` before
/// diagonal jitter is escalated. The selected block is the covariance of a
/// few smooth kernels and is numerically rank deficient, so without this the
/// inverse loses most of its digits.
pub const MIN_RCOND: f64 = 1e-7;

/// Indices of the smallest set of highest-variance cells whose share of the
/// total variance strictly exceeds `tau`, capped at `m_cap`, sorted ascending.
///
/// Ties in variance go to the smaller index. Negative entries (round-off in
/// raw variances) count as zero.
pub fn select_top_m(variances: &[f64], tau: f64, m_cap: usize) -> Vec<usize> {
    let clean = |v: f64| if v > 0.0 { v } else { 0.0 };
    let total: f64 = variances.iter().map(|&v| clean(v)).sum();
    if !(total > 0.0) || m_cap == 0 {
        return Vec::new();
    }

    let mut order: Vec<usize> = (0..variances.len()).collect();
    order.sort_by(|&a, &b| {
        clean(variances[b])
            .partial_cmp(&clean(variances[a]))
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut cumulative = 0.0;
    let mut m = order.len();
    for (rank, &j) in order.iter().enumerate() {
        cumulative += clean(variances[j]);
        if cumulative / total > tau {
            m = rank + 1;
            break;
        }
    }

    let mut selected = order[..m.min(m_cap)].to_vec();
    selected.sort_unstable();
    selected
}

/// `Sigma_hat = V + P C_L P^T` at one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankCov {
    pub grid: ScaleGrid,
    /// Floored variances `V`.
    pub diag: Vec<f64>,
    /// Selected cells `L`, ascending.
    pub indices: Vec<usize>,
    /// `C_L`, `M x M` row-major with a zero diagonal.
    pub block: Vec<f64>,
}

impl LowRankCov {
    /// `M`.
    pub fn rank(&self) -> usize {
        self.indices.len()
    }

    pub fn block_entry(&self, a: usize, b: usize) -> f64 {
        self.block[a * self.rank() + b]
    }

    /// `Sigma_hat * x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.diag.len(), x.len())?;
        let mut out: Vec<f64> = self.diag.iter().zip(x).map(|(d, v)| d * v).collect();
        let m = self.rank();
        for (a, &la) in self.indices.iter().enumerate() {
            let row = &self.block[a * m..(a + 1) * m];
            out[la] += row
                .iter()
                .zip(&self.indices)
                .map(|(c, &lb)| c * x[lb])
                .sum::<f64>();
        }
        Ok(out)
    }

    /// Dense row-major `J x J` matrix, with `jitter` added to the diagonal on
    /// `L` (pass the jitter recorded by [`invert_lowrank`]).
    pub fn densify(&self, jitter: f64) -> Result<Vec<f64>> {
        let n = self.diag.len();
        check_dense(n)?;
        let mut dense = vec![0.0; n * n];
        for (j, &v) in self.diag.iter().enumerate() {
            dense[j * n + j] = v;
        }
        let m = self.rank();
        for (a, &la) in self.indices.iter().enumerate() {
            dense[la * n + la] += jitter;
            for (b, &lb) in self.indices.iter().enumerate() {
                if a != b {
                    dense[la * n + lb] = self.block[a * m + b];
                }
            }
        }
        Ok(dense)
    }
}

/// `Sigma_hat^-1 = V^-1 - P B_L P^T`.
///
/// Because `Sigma_hat` has no coupling between `L` and the other cells, the
/// `L` block of the inverse, `V_L^-1 - B_L`, equals `K^-1` with
/// `K = C_L + V_L`. [`apply`](Self::apply) and [`quadratic_form`] go through
/// the Cholesky factor of `K` rather than subtracting `B_L`: when `K` is
/// nearly singular both `V_L^-1` and `B_L` are huge and their difference
/// loses most of its digits.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankInverse {
    pub grid: ScaleGrid,
    pub inv_diag: Vec<f64>,
    pub indices: Vec<usize>,
    /// `B_L`, `M x M` row-major, symmetric.
    pub correction: Vec<f64>,
    /// Diagonal jitter added on `L` to make `C_L + V_L` factorizable; zero
    /// when none was needed.
    pub jitter: f64,
    factor: Cholesky,
}

impl LowRankInverse {
    pub fn rank(&self) -> usize {
        self.indices.len()
    }

    /// `Sigma_hat^-1 * x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.inv_diag.len(), x.len())?;
        let mut out: Vec<f64> = self.inv_diag.iter().zip(x).map(|(d, v)| d * v).collect();
        let mut gathered: Vec<f64> = self.indices.iter().map(|&l| x[l]).collect();
        self.factor.solve(&mut gathered);
        for (&l, v) in self.indices.iter().zip(gathered) {
            out[l] = v;
        }
        Ok(out)
    }

    /// Dense row-major `J x J` inverse.
    pub fn densify(&self) -> Result<Vec<f64>> {
        let n = self.inv_diag.len();
        check_dense(n)?;
        let mut dense = vec![0.0; n * n];
        for (j, &v) in self.inv_diag.iter().enumerate() {
            dense[j * n + j] = v;
        }
        let m = self.rank();
        for (a, &la) in self.indices.iter().enumerate() {
            for (b, &lb) in self.indices.iter().enumerate() {
                dense[la * n + lb] -= self.correction[a * m + b];
            }
        }
        Ok(dense)
    }
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::LengthMismatch { expected, actual });
    }
    Ok(())
}

fn check_dense(cells: usize) -> Result<()> {
    if cells > DENSIFY_LIMIT {
        return Err(Error::TooLarge {
            cells,
            limit: DENSIFY_LIMIT,
        });
    }
    Ok(())
}

/// Diagonal-plus-low-rank approximation of the covariance at the moments' scale.
pub fn build_lowrank(scene: &Scene, moments: &MomentMaps, config: &ScaleConfig) -> Result<LowRankCov> {
    if scene.count() != moments.count() {
        return Err(Error::LengthMismatch {
            expected: moments.count(),
            actual: scene.count(),
        });
    }
    let grid = moments.grid;
    let indices = select_top_m(&moments.raw_variance, config.var_fraction_tau, config.m_cap);
    let m = indices.len();
    let mut block = vec![0.0; m * m];

    let mut members: Vec<usize> = Vec::with_capacity(m);
    for head in &moments.heads {
        members.clear();
        members.extend((0..m).filter(|&a| head.contains(&grid, indices[a])));
        for (pos, &a) in members.iter().enumerate() {
            let la = indices[a];
            let q_a = head.offset(&grid, la);
            let mu_a = head.mean_at(&grid, la);
            for &b in &members[pos + 1..] {
                let lb = indices[b];
                let q_b = head.offset(&grid, lb);
                let cov = omega_unchecked(q_a, q_b, moments.beta, moments.alpha)
                    - mu_a * head.mean_at(&grid, lb);
                block[a * m + b] += cov;
                block[b * m + a] += cov;
            }
        }
    }

    Ok(LowRankCov {
        grid,
        diag: moments.variance.clone(),
        indices,
        block,
    })
}

/// Inverse of `Sigma_hat` by the matrix inversion lemma, in `O(M^3 + J)`.
pub fn invert_lowrank(cov: &LowRankCov) -> Result<LowRankInverse> {
    let m = cov.rank();
    let mut inv_diag: Vec<f64> = cov.diag.iter().map(|&v| 1.0 / v).collect();
    if m == 0 {
        return Ok(LowRankInverse {
            grid: cov.grid,
            inv_diag,
            indices: Vec::new(),
            correction: Vec::new(),
            jitter: 0.0,
            factor: Cholesky::empty(),
        });
    }

    let v_l: Vec<f64> = cov.indices.iter().map(|&l| cov.diag[l]).collect();
    let mut k = cov.block.clone();
    for (a, v) in v_l.iter().enumerate() {
        k[a * m + a] += v;
    }
    let (chol, jitter) = Cholesky::factor_conditioned(&k, m, MIN_RCOND)?;
    let v_l: Vec<f64> = v_l.iter().map(|v| v + jitter).collect();
    for (&l, v) in cov.indices.iter().zip(&v_l) {
        inv_diag[l] = 1.0 / v;
    }

    // X = L^-1 C, so C (C + V_L)^-1 C = X^T X.
    let mut x = cov.block.clone();
    chol.forward_solve_columns(&mut x, m);

    let mut correction = vec![0.0; m * m];
    for a in 0..m {
        for b in a..m {
            let xtx: f64 = (0..m).map(|r| x[r * m + a] * x[r * m + b]).sum();
            let value = (cov.block[a * m + b] - xtx) / (v_l[a] * v_l[b]);
            correction[a * m + b] = value;
            correction[b * m + a] = value;
        }
    }

    Ok(LowRankInverse {
        grid: cov.grid,
        inv_diag,
        indices: cov.indices.clone(),
        correction,
        jitter,
        factor: chol,
    })
}

/// `r^T Sigma_hat^-1 r` in `O(M^2 + J)`.
///
/// Evaluated as `sum_{j not in L} r_j^2 / V_j + |L_K^-1 r_L|^2`, which equals
/// `sum_j r_j^2 / V_j - r_L^T B_L r_L` without the cancellation.
pub fn quadratic_form(residual: &[f64], inv: &LowRankInverse) -> Result<f64> {
    check_len(inv.inv_diag.len(), residual.len())?;
    let mut selected = inv.indices.iter().copied().peekable();
    let diagonal = compensated_sum(residual.iter().zip(&inv.inv_diag).enumerate().map(
        |(j, (r, d))| {
            if selected.next_if_eq(&j).is_some() {
                0.0
            } else {
                r * r * d
            }
        },
    ));
    let mut gathered: Vec<f64> = inv.indices.iter().map(|&l| residual[l]).collect();
    inv.factor.forward_solve_columns(&mut gathered, 1);
    Ok(diagonal + compensated_sum(gathered.iter().map(|y| y * y)))
}
