//! Isotropic Gaussian kernels, ground-truth density maps and the per-scale
//! mean/variance of the density under Gaussian annotation noise.
//!
//! For a head annotated at `h` (scale units) and a cell center `x`, with
//! `q = x - h` and annotation noise `eps ~ N(0, alpha I)`, the kernel value
//! `phi = N(q | eps, beta_s I)` has
//!
//! ```text
//! E[phi]   = N(q | 0, (alpha + beta_s) I)
//! E[phi^2] = 1 / (4 pi beta_s) * N(q | 0, (beta_s / 2 + alpha) I)
//! ```
//!
//! Both are evaluated on a square window of half-width
//! `SUPPORT_SIGMAS * sqrt(alpha + beta_s)` around each head and treated as
//! zero outside it.

use std::f64::consts::PI;

use crate::covariance::omega_unchecked;
use crate::error::{Error, Result};
use crate::scene::{check_same_grid, DensityMap, Point, ScaleConfig, ScaleGrid, Scene};

/// Half-width of a head's support window, in standard deviations of the
/// noisy kernel. `exp(-8^2 / 2)` is about `1.3e-14`.
pub const SUPPORT_SIGMAS: f64 = 8.0;

/// Bivariate isotropic normal density at squared offset `d2`. No validation.
#[inline]
pub(crate) fn gauss2d(d2: f64, var: f64) -> f64 {
    (-0.5 * d2 / var).exp() / (2.0 * PI * var)
}

/// `N(d | 0, var I)` in two dimensions.
pub fn gauss2d_iso(d: Point, var: f64) -> Result<f64> {
    if !(var.is_finite() && var > 0.0) {
        return Err(Error::NonPositiveVariance(var));
    }
    Ok(gauss2d(d.norm_sq(), var))
}

/// Noise-free density map: a Gaussian of variance `var` (scale units) on every
/// annotation, evaluated at all cell centers.
pub fn gt_density_map(scene: &Scene, grid: &ScaleGrid, var: f64) -> Result<DensityMap> {
    if !(var.is_finite() && var > 0.0) {
        return Err(Error::NonPositiveVariance(var));
    }
    let mut values = vec![0.0; grid.len()];
    for head in scene.annotations() {
        let h = grid.to_scale_coords(*head);
        for (j, v) in values.iter_mut().enumerate() {
            *v += gauss2d((grid.cell_center(j) - h).norm_sq(), var);
        }
    }
    DensityMap::new(*grid, values)
}

/// The rectangular block of cells where one head's expected kernel is kept.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadSupport {
    /// Annotation in scale units.
    pub center: Point,
    pub col0: usize,
    pub row0: usize,
    pub cols: usize,
    pub rows: usize,
    /// `E[phi_i(x_j)]` over the window, row-major.
    mean: Vec<f64>,
}

impl HeadSupport {
    fn new(center: Point, radius: f64, grid: &ScaleGrid) -> Self {
        let span = |c: f64, n: usize| -> (usize, usize) {
            // Cells whose center c' = k + 0.5 satisfies |c' - c| <= radius.
            let lo = (c - radius - 0.5).ceil().max(0.0);
            let hi = (c + radius - 0.5).floor().min(n as f64 - 1.0);
            if hi < lo {
                (0, 0)
            } else {
                (lo as usize, (hi - lo) as usize + 1)
            }
        };
        let (col0, cols) = span(center.x, grid.width);
        let (row0, rows) = span(center.y, grid.height);
        Self {
            center,
            col0,
            row0,
            cols,
            rows,
            mean: Vec::with_capacity(cols * rows),
        }
    }

    /// Whether grid cell `j` lies inside the window.
    #[inline]
    pub fn contains(&self, grid: &ScaleGrid, j: usize) -> bool {
        self.local_index(grid, j).is_some()
    }

    #[inline]
    fn local_index(&self, grid: &ScaleGrid, j: usize) -> Option<usize> {
        let row = j / grid.width;
        let col = j % grid.width;
        if row >= self.row0
            && row < self.row0 + self.rows
            && col >= self.col0
            && col < self.col0 + self.cols
        {
            Some((row - self.row0) * self.cols + (col - self.col0))
        } else {
            None
        }
    }

    /// `E[phi_i(x_j)]`, zero outside the window.
    #[inline]
    pub fn mean_at(&self, grid: &ScaleGrid, j: usize) -> f64 {
        self.local_index(grid, j).map_or(0.0, |l| self.mean[l])
    }

    /// Offset `x_j - h_i` of cell `j` from this head.
    #[inline]
    pub fn offset(&self, grid: &ScaleGrid, j: usize) -> Point {
        grid.cell_center(j) - self.center
    }

    /// Global cell indices covered by the window, row-major.
    pub fn cells<'a>(&'a self, grid: &'a ScaleGrid) -> impl Iterator<Item = usize> + 'a {
        (self.row0..self.row0 + self.rows).flat_map(move |r| {
            (self.col0..self.col0 + self.cols).map(move |c| r * grid.width + c)
        })
    }

    /// `(cell index, E[phi_i(x_j)])` pairs over the window.
    pub fn iter<'a>(&'a self, grid: &'a ScaleGrid) -> impl Iterator<Item = (usize, f64)> + 'a {
        self.cells(grid).zip(self.mean.iter().copied())
    }

    /// Sum of the kept kernel values; at most 1 up to round-off.
    pub fn mass(&self) -> f64 {
        self.mean.iter().sum()
    }
}

/// Mean and variance of the density at one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMaps {
    pub grid: ScaleGrid,
    pub alpha: f64,
    pub beta: f64,
    /// `mu_s(x_j) = sum_i E[phi_i(x_j)]`.
    pub mean: Vec<f64>,
    /// Raw variance clamped below at `var_floor`; the diagonal `V` of the
    /// approximate covariance.
    pub variance: Vec<f64>,
    /// Variance before flooring; may dip below zero by round-off.
    pub raw_variance: Vec<f64>,
    /// Sparse per-head expected kernels.
    pub heads: Vec<HeadSupport>,
}

impl MomentMaps {
    /// Number of heads.
    pub fn count(&self) -> usize {
        self.heads.len()
    }

    /// `E[phi_i(x_j)]`.
    pub fn head_mean(&self, i: usize, j: usize) -> f64 {
        self.heads[i].mean_at(&self.grid, j)
    }
}

/// Grid that scale `grid.scale` of `config` would produce for `scene`.
pub(crate) fn expected_grid(scene: &Scene, grid: &ScaleGrid, config: &ScaleConfig) -> Result<ScaleGrid> {
    if grid.scale == 0 || grid.scale > config.num_scales {
        return Err(Error::InvalidConfig(format!(
            "grid scale {} outside 1..={}",
            grid.scale, config.num_scales
        )));
    }
    let expected = ScaleGrid::new(
        grid.scale,
        config.factor(grid.scale),
        scene.width(),
        scene.height(),
    );
    check_same_grid(&expected, grid)?;
    if expected.factor != grid.factor {
        return Err(Error::InvalidConfig(format!(
            "grid factor {} does not match configured factor {}",
            grid.factor, expected.factor
        )));
    }
    Ok(expected)
}

/// Per-cell mean and variance of the density at the scale of `grid`.
pub fn moment_maps(scene: &Scene, grid: &ScaleGrid, config: &ScaleConfig) -> Result<MomentMaps> {
    config.validate()?;
    expected_grid(scene, grid, config)?;

    let alpha = config.alpha;
    let beta = config.beta(grid.scale);
    let mean_var = alpha + beta;
    let radius = SUPPORT_SIGMAS * mean_var.sqrt();

    let n = grid.len();
    let mut mean = vec![0.0; n];
    let mut raw_variance = vec![0.0; n];
    let mut heads = Vec::with_capacity(scene.count());

    for annotation in scene.annotations() {
        let center = grid.to_scale_coords(*annotation);
        let mut head = HeadSupport::new(center, radius, grid);
        for j in head.cells(grid).collect::<Vec<_>>() {
            let q = grid.cell_center(j) - center;
            let mu = gauss2d(q.norm_sq(), mean_var);
            let second = omega_unchecked(q, q, beta, alpha);
            head.mean.push(mu);
            mean[j] += mu;
            raw_variance[j] += second - mu * mu;
        }
        heads.push(head);
    }

    let variance = raw_variance
        .iter()
        .map(|&v| v.max(config.var_floor))
        .collect();

    Ok(MomentMaps {
        grid: *grid,
        alpha,
        beta,
        mean,
        variance,
        raw_variance,
        heads,
    })
}
