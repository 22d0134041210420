//! Brute-force references for the analytic paths.
//!
//! Nothing here calls into the moment, covariance or low-rank code it is used
//! to check: the Monte-Carlo sampler simulates the annotation-noise model
//! directly, the dense covariance re-derives every entry from scratch, and
//! dense inversion goes through `nalgebra`'s Cholesky.
//!
//! # Random numbers
//!
//! Samples are drawn from ChaCha8 (`rand_chacha::ChaCha8Rng`). The sample
//! stream is split into fixed chunks of [`MC_CHUNK`] draws; chunk `c` uses the
//! generator seeded with `seed` on stream `c`. Chunk statistics are reduced
//! in chunk order, so results are bitwise identical for a given seed whatever
//! the thread count.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::{Point, ScaleConfig, ScaleGrid, Scene};

/// Largest grid the dense references accept (64 x 64).
pub const DENSE_LIMIT: usize = 4096;

/// Samples per independently seeded chunk.
pub const MC_CHUNK: usize = 8192;

/// Which covariance entries the sampler should estimate.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum PairSelection {
    #[default]
    None,
    /// Every pair `(j, k)`; only sensible on small grids.
    All,
    List(Vec<(usize, usize)>),
}

/// Monte-Carlo covariance estimates for a set of cell pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCovariance {
    pub pairs: Vec<(usize, usize)>,
    pub value: Vec<f64>,
    pub std_error: Vec<f64>,
}

impl PairCovariance {
    /// Dense `J x J` matrix, when every pair was estimated.
    pub fn dense(&self, cells: usize) -> Option<DMatrix<f64>> {
        if self.pairs.len() != cells * cells {
            return None;
        }
        let mut m = DMatrix::zeros(cells, cells);
        for (&(j, k), &v) in self.pairs.iter().zip(&self.value) {
            m[(j, k)] = v;
        }
        Some(m)
    }
}

/// Sample statistics of the density vector under resampled annotation noise.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub mean: Vec<f64>,
    pub mean_se: Vec<f64>,
    /// Unbiased sample variance per cell.
    pub variance: Vec<f64>,
    pub variance_se: Vec<f64>,
    pub covariance: Option<PairCovariance>,
    pub n_samples: usize,
    pub seed: u64,
}

/// Standard errors are reported as at least this, so that a degenerate
/// (constant) statistic still has a strictly positive error.
const MIN_STD_ERROR: f64 = f64::MIN_POSITIVE;

/// Per-cell mean and variance of `sum_i N(x_j | H_i + eps_i, beta_s I)`,
/// treating the stored annotations as the true locations `H_i`.
pub fn mc_moments(
    scene: &Scene,
    grid: &ScaleGrid,
    config: &ScaleConfig,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    mc_moments_with_pairs(scene, grid, config, n_samples, seed, &PairSelection::None)
}

/// [`mc_moments`] plus covariance estimates for the selected pairs.
pub fn mc_moments_with_pairs(
    scene: &Scene,
    grid: &ScaleGrid,
    config: &ScaleConfig,
    n_samples: usize,
    seed: u64,
    pairs: &PairSelection,
) -> Result<McEstimate> {
    if n_samples < 2 {
        return Err(Error::TooFewSamples(n_samples));
    }
    config.validate()?;
    let cells = grid.len();
    let pairs: Vec<(usize, usize)> = match pairs {
        PairSelection::None => Vec::new(),
        PairSelection::All => (0..cells)
            .flat_map(|j| (0..cells).map(move |k| (j, k)))
            .collect(),
        PairSelection::List(list) => list.clone(),
    };
    if let Some(&(j, k)) = pairs.iter().find(|&&(j, k)| j >= cells || k >= cells) {
        return Err(Error::IndexOutOfRange {
            index: j.max(k),
            len: cells,
        });
    }

    let sampler = Sampler::new(scene, grid, config);

    // Shift every statistic by the first draw to keep raw power sums well
    // conditioned.
    let mut shift = vec![0.0; cells];
    {
        let mut rng = chunk_rng(seed, 0);
        sampler.draw(&mut rng, &mut shift);
    }

    let chunks = n_samples.div_ceil(MC_CHUNK);
    let partials: Vec<Accumulator> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = MC_CHUNK.min(n_samples - c * MC_CHUNK);
            let mut rng = chunk_rng(seed, c as u64);
            let mut acc = Accumulator::new(cells, pairs.len());
            let mut sample = vec![0.0; cells];
            for _ in 0..count {
                sampler.draw(&mut rng, &mut sample);
                for (s, k) in sample.iter_mut().zip(&shift) {
                    *s -= k;
                }
                acc.push(&sample, &pairs);
            }
            acc
        })
        .collect();

    let mut total = Accumulator::new(cells, pairs.len());
    for part in &partials {
        total.merge(part);
    }
    Ok(total.finish(&shift, pairs, n_samples, seed))
}

fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

struct Sampler {
    width: usize,
    height: usize,
    heads: Vec<Point>,
    noise_sd: f64,
    beta: f64,
    norm: f64,
}

impl Sampler {
    fn new(scene: &Scene, grid: &ScaleGrid, config: &ScaleConfig) -> Self {
        let f = f64::from(grid.factor);
        let beta = config.beta(grid.scale);
        Self {
            width: grid.width,
            height: grid.height,
            heads: scene
                .annotations()
                .iter()
                .map(|p| Point::new(p.x / f, p.y / f))
                .collect(),
            noise_sd: config.alpha.sqrt(),
            beta,
            norm: 1.0 / (2.0 * PI * beta),
        }
    }

    /// One draw of the density vector; the 2-D kernel is evaluated as an
    /// outer product of two 1-D profiles.
    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut gx = vec![0.0; self.width];
        let mut gy = vec![0.0; self.height];
        let inv_two_beta = 0.5 / self.beta;
        for h in &self.heads {
            let ex: f64 = StandardNormal.sample(rng);
            let ey: f64 = StandardNormal.sample(rng);
            let cx = h.x + self.noise_sd * ex;
            let cy = h.y + self.noise_sd * ey;
            for (c, g) in gx.iter_mut().enumerate() {
                let d = c as f64 + 0.5 - cx;
                *g = (-d * d * inv_two_beta).exp();
            }
            for (r, g) in gy.iter_mut().enumerate() {
                let d = r as f64 + 0.5 - cy;
                *g = self.norm * (-d * d * inv_two_beta).exp();
            }
            for (r, &wy) in gy.iter().enumerate() {
                let row = &mut out[r * self.width..(r + 1) * self.width];
                for (v, &wx) in row.iter_mut().zip(&gx) {
                    *v += wy * wx;
                }
            }
        }
    }
}

/// Raw power sums about the shift.
struct Accumulator {
    s1: Vec<f64>,
    s2: Vec<f64>,
    s3: Vec<f64>,
    s4: Vec<f64>,
    ab: Vec<f64>,
    a2b: Vec<f64>,
    ab2: Vec<f64>,
    a2b2: Vec<f64>,
}

impl Accumulator {
    fn new(cells: usize, pairs: usize) -> Self {
        Self {
            s1: vec![0.0; cells],
            s2: vec![0.0; cells],
            s3: vec![0.0; cells],
            s4: vec![0.0; cells],
            ab: vec![0.0; pairs],
            a2b: vec![0.0; pairs],
            ab2: vec![0.0; pairs],
            a2b2: vec![0.0; pairs],
        }
    }

    fn push(&mut self, x: &[f64], pairs: &[(usize, usize)]) {
        for (j, &a) in x.iter().enumerate() {
            let a2 = a * a;
            self.s1[j] += a;
            self.s2[j] += a2;
            self.s3[j] += a2 * a;
            self.s4[j] += a2 * a2;
        }
        for (p, &(j, k)) in pairs.iter().enumerate() {
            let a = x[j];
            let b = x[k];
            let ab = a * b;
            self.ab[p] += ab;
            self.a2b[p] += ab * a;
            self.ab2[p] += ab * b;
            self.a2b2[p] += ab * ab;
        }
    }

    fn merge(&mut self, other: &Accumulator) {
        let add = |dst: &mut Vec<f64>, src: &Vec<f64>| {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        };
        add(&mut self.s1, &other.s1);
        add(&mut self.s2, &other.s2);
        add(&mut self.s3, &other.s3);
        add(&mut self.s4, &other.s4);
        add(&mut self.ab, &other.ab);
        add(&mut self.a2b, &other.a2b);
        add(&mut self.ab2, &other.ab2);
        add(&mut self.a2b2, &other.a2b2);
    }

    fn finish(self, shift: &[f64], pairs: Vec<(usize, usize)>, n: usize, seed: u64) -> McEstimate {
        let nf = n as f64;
        let cells = shift.len();
        let mut mean = Vec::with_capacity(cells);
        let mut mean_se = Vec::with_capacity(cells);
        let mut variance = Vec::with_capacity(cells);
        let mut variance_se = Vec::with_capacity(cells);
        // Moments of the shifted variable a = x - shift.
        let centered: Vec<f64> = self.s1.iter().map(|s| s / nf).collect();
        for j in 0..cells {
            let m = centered[j];
            let e2 = self.s2[j] / nf;
            let e3 = self.s3[j] / nf;
            let e4 = self.s4[j] / nf;
            let m2 = (e2 - m * m).max(0.0);
            let m4 = (e4 - 4.0 * m * e3 + 6.0 * m * m * e2 - 3.0 * m.powi(4)).max(0.0);
            let var = m2 * nf / (nf - 1.0);
            mean.push(shift[j] + m);
            mean_se.push((var / nf).sqrt().max(MIN_STD_ERROR));
            variance.push(var);
            variance_se.push(((m4 - m2 * m2).max(0.0) / nf).sqrt().max(MIN_STD_ERROR));
        }

        let covariance = (!pairs.is_empty()).then(|| {
            let mut value = Vec::with_capacity(pairs.len());
            let mut std_error = Vec::with_capacity(pairs.len());
            for (p, &(j, k)) in pairs.iter().enumerate() {
                let (ma, mb) = (centered[j], centered[k]);
                let eab = self.ab[p] / nf;
                let c11 = eab - ma * mb;
                let e_a2b2 = self.a2b2[p] / nf - 2.0 * mb * self.a2b[p] / nf
                    - 2.0 * ma * self.ab2[p] / nf
                    + mb * mb * self.s2[j] / nf
                    + ma * ma * self.s2[k] / nf
                    + 4.0 * ma * mb * eab
                    - 3.0 * ma * ma * mb * mb;
                value.push(c11 * nf / (nf - 1.0));
                std_error.push(((e_a2b2 - c11 * c11).max(0.0) / nf).sqrt().max(MIN_STD_ERROR));
            }
            PairCovariance {
                pairs,
                value,
                std_error,
            }
        });

        McEstimate {
            mean,
            mean_se,
            variance,
            variance_se,
            covariance,
            n_samples: n,
            seed,
        }
    }
}

/// Exact covariance matrix at one scale, assembled entry by entry from the
/// Gaussian-product closed form with no truncation.
pub fn dense_covariance(scene: &Scene, grid: &ScaleGrid, config: &ScaleConfig) -> Result<DMatrix<f64>> {
    config.validate()?;
    let cells = grid.len();
    if cells > DENSE_LIMIT {
        return Err(Error::TooLarge {
            cells,
            limit: DENSE_LIMIT,
        });
    }
    let alpha = config.alpha;
    let beta = config.beta(grid.scale);
    let f = f64::from(grid.factor);
    let normal = |d2: f64, var: f64| (-d2 / (2.0 * var)).exp() / (2.0 * PI * var);
    let centers: Vec<(f64, f64)> = (0..cells)
        .map(|j| ((j % grid.width) as f64 + 0.5, (j / grid.width) as f64 + 0.5))
        .collect();

    let mut cov = DMatrix::zeros(cells, cells);
    for h in scene.annotations() {
        let (hx, hy) = (h.x / f, h.y / f);
        let q: Vec<(f64, f64)> = centers.iter().map(|&(x, y)| (x - hx, y - hy)).collect();
        let mu: Vec<f64> = q
            .iter()
            .map(|&(x, y)| normal(x * x + y * y, alpha + beta))
            .collect();
        for j in 0..cells {
            for k in j..cells {
                let (dx, dy) = (q[j].0 - q[k].0, q[j].1 - q[k].1);
                let (mx, my) = (0.5 * (q[j].0 + q[k].0), 0.5 * (q[j].1 + q[k].1));
                let w = normal(dx * dx + dy * dy, 2.0 * beta)
                    * normal(mx * mx + my * my, 0.5 * beta + alpha);
                let c = w - mu[j] * mu[k];
                cov[(j, k)] += c;
                if j != k {
                    cov[(k, j)] += c;
                }
            }
        }
    }
    Ok(cov)
}

/// Inverse of a symmetric positive definite matrix by dense Cholesky.
pub fn dense_inverse(matrix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = matrix
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { jitter: 0.0 })?;
    Ok(chol.inverse())
}

/// `r^T A^{-1} r` by a dense Cholesky solve.
pub fn dense_quadratic_form(residual: &[f64], matrix: &DMatrix<f64>) -> Result<f64> {
    if residual.len() != matrix.nrows() {
        return Err(Error::LengthMismatch {
            expected: matrix.nrows(),
            actual: residual.len(),
        });
    }
    let chol = matrix
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { jitter: 0.0 })?;
    let r = DVector::from_column_slice(residual);
    let x = chol.solve(&r);
    Ok(r.dot(&x))
}

/// Central finite differences `(f(x + h e_j) - f(x - h e_j)) / 2h` over every
/// coordinate of a multi-scale prediction.
pub fn fd_gradient<F>(mut f: F, preds: &[Vec<f64>], h: f64) -> Vec<Vec<f64>>
where
    F: FnMut(&[Vec<f64>]) -> f64,
{
    let mut point: Vec<Vec<f64>> = preds.to_vec();
    let mut grad = Vec::with_capacity(preds.len());
    for s in 0..preds.len() {
        let mut g = Vec::with_capacity(preds[s].len());
        for j in 0..preds[s].len() {
            let x0 = preds[s][j];
            point[s][j] = x0 + h;
            let plus = f(&point);
            point[s][j] = x0 - h;
            let minus = f(&point);
            point[s][j] = x0;
            g.push((plus - minus) / (2.0 * h));
        }
        grad.push(g);
    }
    grad
}
