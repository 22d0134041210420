//! Domain types shared by every stage: scenes, scale configuration, per-scale
//! sampling grids and density maps.
//!
//! All per-scale arithmetic happens in scale-grid units. A scene point `p`
//! maps to `p / f_s` on scale `s`, and cell `j = row * W_s + col` is sampled
//! at its center `(col + 0.5, row + 0.5)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::compensated_sum;

/// A 2-D point or displacement.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Sub for Point {
    type Output = Point;

    #[inline]
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Add for Point {
    type Output = Point;

    #[inline]
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

/// Image dimensions plus the annotated head positions, in original pixel units.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    width: u32,
    height: u32,
    annotations: Vec<Point>,
}

impl Scene {
    /// Validates that the image is non-empty and every annotation lies in
    /// `[0, width) x [0, height)`.
    pub fn new(width: u32, height: u32, annotations: Vec<Point>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidScene(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        for (i, p) in annotations.iter().enumerate() {
            let inside = p.is_finite()
                && p.x >= 0.0
                && p.x < f64::from(width)
                && p.y >= 0.0
                && p.y < f64::from(height);
            if !inside {
                return Err(Error::InvalidScene(format!(
                    "annotation {i} at ({}, {}) lies outside [0, {width}) x [0, {height})",
                    p.x, p.y
                )));
            }
        }
        Ok(Self {
            width,
            height,
            annotations,
        })
    }

    pub fn empty(width: u32, height: u32) -> Result<Self> {
        Self::new(width, height, Vec::new())
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn annotations(&self) -> &[Point] {
        &self.annotations
    }

    /// Number of annotated heads `N`.
    pub fn count(&self) -> usize {
        self.annotations.len()
    }
}

/// Parameters of the multi-scale noise model and its numerical safeguards.
///
/// `alpha` and `beta1` are variances in squared scale-grid units. The kernel
/// variance halves at every coarser scale: `beta_s = beta1 / 2^(s-1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleConfig {
    pub num_scales: usize,
    pub alpha: f64,
    pub beta1: f64,
    pub weights: Vec<f64>,
    pub var_fraction_tau: f64,
    pub m_cap: usize,
    pub var_floor: f64,
    pub denom_guard: f64,
    /// Downsample factor per scale; `None` means `2^(s-1)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factors: Option<Vec<u32>>,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self::with_scales(3)
    }
}

impl ScaleConfig {
    /// Defaults with `num_scales` uniformly weighted scales.
    pub fn with_scales(num_scales: usize) -> Self {
        let n = num_scales.max(1);
        Self {
            num_scales,
            alpha: 8.0,
            beta1: 8.0,
            weights: vec![1.0 / n as f64; num_scales],
            var_fraction_tau: 0.8,
            m_cap: 256,
            var_floor: 1e-8,
            denom_guard: 1e-12,
            factors: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_scales == 0 {
            return bad("num_scales must be at least 1".into());
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.beta1.is_finite() && self.beta1 > 0.0) {
            return bad(format!("beta1 must be positive, got {}", self.beta1));
        }
        if self.weights.len() != self.num_scales {
            return bad(format!(
                "{} weights given for {} scales",
                self.weights.len(),
                self.num_scales
            ));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("weights must be non-negative".into());
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return bad(format!("weights must sum to 1, got {total}"));
        }
        if !(self.var_fraction_tau > 0.0 && self.var_fraction_tau < 1.0) {
            return bad(format!(
                "var_fraction_tau must lie in (0, 1), got {}",
                self.var_fraction_tau
            ));
        }
        if !(self.var_floor.is_finite() && self.var_floor > 0.0) {
            return bad(format!("var_floor must be positive, got {}", self.var_floor));
        }
        if !(self.denom_guard.is_finite() && self.denom_guard > 0.0) {
            return bad(format!(
                "denom_guard must be positive, got {}",
                self.denom_guard
            ));
        }
        if let Some(factors) = &self.factors {
            if factors.len() != self.num_scales {
                return bad(format!(
                    "{} factors given for {} scales",
                    factors.len(),
                    self.num_scales
                ));
            }
            if factors.contains(&0) {
                return bad("downsample factors must be positive".into());
            }
        }
        Ok(())
    }

    /// Kernel variance `beta_s` for the 1-based scale index `s`.
    pub fn beta(&self, scale: usize) -> f64 {
        debug_assert!(scale >= 1);
        self.beta1 / f64::powi(2.0, scale as i32 - 1)
    }

    /// Weight `w_s` for the 1-based scale index `s`.
    pub fn weight(&self, scale: usize) -> f64 {
        self.weights[scale - 1]
    }

    /// Downsample factor `f_s` for the 1-based scale index `s`.
    pub fn factor(&self, scale: usize) -> u32 {
        match &self.factors {
            Some(f) => f[scale - 1],
            None => 1u32 << (scale - 1),
        }
    }
}

/// The sampling lattice of one scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScaleGrid {
    /// 1-based scale index.
    pub scale: usize,
    pub factor: u32,
    pub width: usize,
    pub height: usize,
}

impl ScaleGrid {
    /// Grid covering a `width x height` image downsampled by `factor`.
    pub fn new(scale: usize, factor: u32, width: u32, height: u32) -> Self {
        Self {
            scale,
            factor,
            width: width.div_ceil(factor) as usize,
            height: height.div_ceil(factor) as usize,
        }
    }

    /// Total number of cells `J_s`.
    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Center of cell `j` in scale units.
    #[inline]
    pub fn cell_center(&self, j: usize) -> Point {
        let row = j / self.width;
        let col = j % self.width;
        Point::new(col as f64 + 0.5, row as f64 + 0.5)
    }

    /// Cell containing a point given in scale units, if any.
    pub fn index_of(&self, p: Point) -> Option<usize> {
        if !(p.x >= 0.0 && p.y >= 0.0) {
            return None;
        }
        let col = p.x.floor() as usize;
        let row = p.y.floor() as usize;
        (col < self.width && row < self.height).then_some(row * self.width + col)
    }

    /// Maps a point in original pixel units onto this grid.
    #[inline]
    pub fn to_scale_coords(&self, p: Point) -> Point {
        to_scale_coords(p, self)
    }
}

/// `p / f_s` componentwise.
#[inline]
pub fn to_scale_coords(p: Point, grid: &ScaleGrid) -> Point {
    let f = f64::from(grid.factor);
    Point::new(p.x / f, p.y / f)
}

/// One grid per scale, finest first.
pub fn build_grids(scene: &Scene, config: &ScaleConfig) -> Result<Vec<ScaleGrid>> {
    config.validate()?;
    if scene.width == 0 || scene.height == 0 {
        return Err(Error::InvalidScene("zero-sized image".into()));
    }
    Ok((1..=config.num_scales)
        .map(|s| ScaleGrid::new(s, config.factor(s), scene.width, scene.height))
        .collect())
}

/// Density values over one scale grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    grid: ScaleGrid,
    values: Vec<f64>,
}

impl DensityMap {
    pub fn new(grid: ScaleGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                actual: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: ScaleGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn grid(&self) -> &ScaleGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Total mass, i.e. the estimated count.
    /// Compensated sum of all values.
    pub fn sum(&self) -> f64 {
        compensated_sum(self.values.iter().copied())
    }

    pub(crate) fn check_grid(&self, expected: &ScaleGrid) -> Result<()> {
        check_same_grid(expected, &self.grid)
    }
}

pub(crate) fn check_same_grid(expected: &ScaleGrid, actual: &ScaleGrid) -> Result<()> {
    if expected.scale != actual.scale
        || expected.width != actual.width
        || expected.height != actual.height
    {
        return Err(Error::GridMismatch {
            expected_scale: expected.scale,
            expected_w: expected.width,
            expected_h: expected.height,
            actual_scale: actual.scale,
            actual_w: actual.width,
            actual_h: actual.height,
        });
    }
    Ok(())
}
