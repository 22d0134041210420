//! Multi-scale loss: weighted Mahalanobis terms under the low-rank
//! covariance plus the per-head mass regularizer, and the analytic gradient
//! with respect to the predicted density values.
//!
//! ```text
//! L      = sum_s w_s (D_s - mu_s)^T Sigma_hat_s^-1 (D_s - mu_s) + sum_s sum_i R_i^s
//! R_i^s  = | sum_j D_s(x_j) mu_i^s(x_j) / sum_i' mu_i'^s(x_j) - 1 |
//! ```
//!
//! The responsibility `mu_i / sum_i' mu_i'` uses the expected kernels of the
//! moment maps. Cells whose total expected mass is below `denom_guard` are
//! ignored by the regularizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::compensated_sum;
use crate::lowrank::{build_lowrank, invert_lowrank, quadratic_form, LowRankCov, LowRankInverse};
use crate::moments::{moment_maps, MomentMaps};
use crate::scene::{build_grids, DensityMap, ScaleConfig, Scene};

/// Per-scale loss terms and their total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// `w_s * D_bar^T Sigma_hat^-1 D_bar` per scale.
    pub per_scale_quadratic: Vec<f64>,
    /// `sum_i R_i^s` per scale.
    pub per_scale_regularizer: Vec<f64>,
    pub total: f64,
}

/// Everything the loss needs that depends only on the annotations.
#[derive(Debug, Clone)]
pub struct ScalePrecomp {
    pub moments: MomentMaps,
    pub cov: LowRankCov,
    pub inverse: LowRankInverse,
}

#[derive(Debug, Clone)]
pub struct Precomputed {
    pub scales: Vec<ScalePrecomp>,
}

impl Precomputed {
    pub fn new(scene: &Scene, config: &ScaleConfig) -> Result<Self> {
        let scales = build_grids(scene, config)?
            .iter()
            .map(|grid| {
                let moments = moment_maps(scene, grid, config)?;
                let cov = build_lowrank(scene, &moments, config)?;
                let inverse = invert_lowrank(&cov)?;
                Ok(ScalePrecomp {
                    moments,
                    cov,
                    inverse,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { scales })
    }

    /// The mean maps `mu_s`, the minimizer of the quadratic terms.
    pub fn mean_maps(&self) -> Vec<DensityMap> {
        self.scales
            .iter()
            .map(|p| DensityMap::new(p.moments.grid, p.moments.mean.clone()).expect("grid length"))
            .collect()
    }
}

/// Weighted mass `sum_j D(x_j) mu_i(x_j) / sum_i' mu_i'(x_j)` of every head.
pub fn head_masses(pred: &DensityMap, moments: &MomentMaps, config: &ScaleConfig) -> Result<Vec<f64>> {
    pred.check_grid(&moments.grid)?;
    Ok(head_masses_unchecked(pred.values(), moments, config.denom_guard))
}

fn head_masses_unchecked(values: &[f64], moments: &MomentMaps, guard: f64) -> Vec<f64> {
    let grid = &moments.grid;
    moments
        .heads
        .iter()
        .map(|head| {
            compensated_sum(head.iter(grid).map(|(j, mu)| {
                let denom = moments.mean[j];
                if denom < guard {
                    0.0
                } else {
                    values[j] * (mu / denom)
                }
            }))
        })
        .collect()
}

/// `sum_i R_i^s` for one scale.
pub fn regularizer(pred: &DensityMap, moments: &MomentMaps, config: &ScaleConfig) -> Result<f64> {
    Ok(head_masses(pred, moments, config)?
        .iter()
        .map(|m| (m - 1.0).abs())
        .sum())
}

fn check_inputs(
    preds: &[DensityMap],
    scene: &Scene,
    config: &ScaleConfig,
    precomp: &Precomputed,
) -> Result<()> {
    config.validate()?;
    for actual in [preds.len(), precomp.scales.len()] {
        if actual != config.num_scales {
            return Err(Error::ScaleCountMismatch {
                expected: config.num_scales,
                actual,
            });
        }
    }
    for (pred, p) in preds.iter().zip(&precomp.scales) {
        pred.check_grid(&p.moments.grid)?;
        if p.moments.count() != scene.count() {
            return Err(Error::LengthMismatch {
                expected: scene.count(),
                actual: p.moments.count(),
            });
        }
    }
    Ok(())
}

fn residual(pred: &DensityMap, moments: &MomentMaps) -> Vec<f64> {
    pred.values()
        .iter()
        .zip(&moments.mean)
        .map(|(d, mu)| d - mu)
        .collect()
}

/// Evaluates the full loss.
pub fn total_loss(
    preds: &[DensityMap],
    scene: &Scene,
    config: &ScaleConfig,
    precomp: &Precomputed,
) -> Result<LossBreakdown> {
    check_inputs(preds, scene, config, precomp)?;
    let mut per_scale_quadratic = Vec::with_capacity(preds.len());
    let mut per_scale_regularizer = Vec::with_capacity(preds.len());
    for (pred, p) in preds.iter().zip(&precomp.scales) {
        let scale = p.moments.grid.scale;
        let q = quadratic_form(&residual(pred, &p.moments), &p.inverse)?;
        per_scale_quadratic.push(config.weight(scale) * q);
        let masses = head_masses_unchecked(pred.values(), &p.moments, config.denom_guard);
        per_scale_regularizer.push(compensated_sum(masses.iter().map(|m| (m - 1.0).abs())));
    }
    let total = compensated_sum(
        per_scale_quadratic
            .iter()
            .chain(&per_scale_regularizer)
            .copied(),
    );
    Ok(LossBreakdown {
        per_scale_quadratic,
        per_scale_regularizer,
        total,
    })
}

/// Gradient of [`total_loss`] with respect to every predicted density value.
///
/// At a regularizer kink (a head mass exactly 1) the subgradient 0 is used.
pub fn loss_gradient(
    preds: &[DensityMap],
    scene: &Scene,
    config: &ScaleConfig,
    precomp: &Precomputed,
) -> Result<Vec<Vec<f64>>> {
    check_inputs(preds, scene, config, precomp)?;
    preds
        .iter()
        .zip(&precomp.scales)
        .map(|(pred, p)| {
            let w = config.weight(p.moments.grid.scale);
            let mut grad = p.inverse.apply(&residual(pred, &p.moments))?;
            for g in grad.iter_mut() {
                *g *= 2.0 * w;
            }
            add_regularizer_gradient(&mut grad, pred.values(), &p.moments, config.denom_guard);
            Ok(grad)
        })
        .collect()
}

fn add_regularizer_gradient(grad: &mut [f64], values: &[f64], moments: &MomentMaps, guard: f64) {
    let grid = &moments.grid;
    let masses = head_masses_unchecked(values, moments, guard);
    for (head, mass) in moments.heads.iter().zip(masses) {
        let sign = if mass > 1.0 {
            1.0
        } else if mass < 1.0 {
            -1.0
        } else {
            continue;
        };
        for (j, mu) in head.iter(grid) {
            let denom = moments.mean[j];
            if denom >= guard {
                grad[j] += sign * (mu / denom);
            }
        }
    }
}
