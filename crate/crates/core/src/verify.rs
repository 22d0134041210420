//! Randomized cross-checks of the analytic paths against the oracles.
//!
//! Each suite draws its instances from a seeded ChaCha8 stream and returns
//! one [`Check`] per property, reporting the worst measured error against its
//! tolerance. The suites back the command-line `verify` command and the
//! acceptance run.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::covariance::pair_covariance;
use crate::error::Result;
use crate::loss::{head_masses, loss_gradient, total_loss, Precomputed, ScalePrecomp};
use crate::lowrank::{build_lowrank, invert_lowrank, quadratic_form};
use crate::moments::moment_maps;
use crate::oracle::{dense_covariance, dense_quadratic_form, fd_gradient, mc_moments_with_pairs, PairSelection};
use crate::scene::{DensityMap, Point, ScaleConfig, ScaleGrid, Scene};

/// Outcome of one property check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn at_most(name: &str, measured: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            measured,
            tolerance,
            passed: measured <= tolerance,
            detail,
        }
    }

    fn at_least(name: &str, measured: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            measured,
            tolerance,
            passed: measured >= tolerance,
            detail,
        }
    }
}

/// Instance counts and sample sizes for the suites.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    pub seed: u64,
    pub instances: usize,
    /// Monte-Carlo draws per instance (moments suite).
    pub samples: usize,
    /// Multiplies every tolerance. Values other than 1 exist to exercise the
    /// failure path.
    pub tolerance_scale: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 10,
            samples: 200_000,
            tolerance_scale: 1.0,
        }
    }
}

/// Number of standard errors allowed between analytic and sampled moments.
pub const MOMENT_SIGMAS: f64 = 3.0;
/// Absolute slack for moments that are zero up to rounding on both sides.
pub const MOMENT_ABS_FLOOR: f64 = 1e-15;
/// Required fraction of agreeing cells or pairs.
pub const MOMENT_PASS_FRACTION: f64 = 0.99;
/// Windowed covariance against the untruncated dense assembly.
pub const DENSE_COV_TOL: f64 = 1e-12;
pub const WOODBURY_TOL: f64 = 1e-8;
pub const GRADIENT_TOL: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-5;

/// Highest-variance cells whose pairs are all compared.
const TOP_PAIR_CELLS: usize = 24;
/// Additional uniformly drawn pairs per instance.
const RANDOM_PAIRS: usize = 100;

fn scene_in(rng: &mut ChaCha8Rng, width: u32, height: u32, heads: usize) -> Result<Scene> {
    let points = (0..heads)
        .map(|_| {
            Point::new(
                rng.random_range(0.0..f64::from(width)),
                rng.random_range(0.0..f64::from(height)),
            )
        })
        .collect();
    Scene::new(width, height, points)
}

/// Agreement fractions of analytic mean, variance and covariance with the
/// Monte-Carlo estimates on scenes with grids of at most 16 x 16 cells and
/// up to five heads (`alpha = beta1 = 8`, random scale).
pub fn moments_suite(opts: &SuiteOptions) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let config = ScaleConfig::default();
    let mut hits = [0usize; 3];
    let mut totals = [0usize; 3];
    let mut worst = [0.0f64; 3];
    let mut dense_gap = 0.0f64;

    for instance in 0..opts.instances {
        let scale = rng.random_range(1..=config.num_scales);
        let f = config.factor(scale);
        let (gw, gh) = (rng.random_range(3..=16u32), rng.random_range(3..=16u32));
        let heads = rng.random_range(1..=5);
        let scene = scene_in(&mut rng, gw * f, gh * f, heads)?;
        let grid = ScaleGrid::new(scale, f, scene.width(), scene.height());
        let moments = moment_maps(&scene, &grid, &config)?;
        let pairs = comparison_pairs(&mut rng, &moments.raw_variance);
        let pair_truth: Vec<f64> = pairs
            .iter()
            .map(|&(j, k)| pair_covariance(&moments, j, k))
            .collect();

        let dense = dense_covariance(&scene, &grid, &config)?;
        for j in 0..grid.len() {
            for k in 0..grid.len() {
                dense_gap = dense_gap.max((dense[(j, k)] - pair_covariance(&moments, j, k)).abs());
            }
        }

        let est = mc_moments_with_pairs(
            &scene,
            &grid,
            &config,
            opts.samples,
            opts.seed ^ (instance as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            &PairSelection::List(pairs),
        )?;
        let cov = est.covariance.as_ref().expect("pairs requested");

        let mut tally = |slot: usize, analytic: f64, sampled: f64, se: f64| {
            let z = (analytic - sampled).abs() / se;
            totals[slot] += 1;
            if (analytic - sampled).abs() <= MOMENT_SIGMAS * opts.tolerance_scale * se + MOMENT_ABS_FLOOR {
                hits[slot] += 1;
            }
            worst[slot] = worst[slot].max(z);
        };
        for j in 0..grid.len() {
            tally(0, moments.mean[j], est.mean[j], est.mean_se[j]);
            tally(1, moments.raw_variance[j], est.variance[j], est.variance_se[j]);
        }
        for (p, &analytic) in pair_truth.iter().enumerate() {
            tally(2, analytic, cov.value[p], cov.std_error[p]);
        }
    }

    let names = ["moments/mean", "moments/variance", "moments/covariance"];
    let mut checks: Vec<Check> = (0..3)
        .map(|i| {
            let fraction = hits[i] as f64 / totals[i].max(1) as f64;
            Check::at_least(
                names[i],
                fraction,
                MOMENT_PASS_FRACTION,
                format!(
                    "{}/{} within {} SE, worst {:.2} SE",
                    hits[i], totals[i], MOMENT_SIGMAS, worst[i]
                ),
            )
        })
        .collect();
    checks.push(Check::at_most(
        "moments/dense-covariance",
        dense_gap,
        DENSE_COV_TOL * opts.tolerance_scale,
        "max gap to the untruncated dense assembly".into(),
    ));
    Ok(checks)
}

/// All pairs among the highest-variance cells plus random pairs.
fn comparison_pairs(rng: &mut ChaCha8Rng, variance: &[f64]) -> Vec<(usize, usize)> {
    let cells = variance.len();
    let mut order: Vec<usize> = (0..cells).collect();
    order.sort_by(|&a, &b| variance[b].total_cmp(&variance[a]).then(a.cmp(&b)));
    order.truncate(TOP_PAIR_CELLS);
    let mut pairs = Vec::new();
    for (i, &j) in order.iter().enumerate() {
        for &k in &order[i + 1..] {
            pairs.push((j, k));
        }
    }
    for _ in 0..RANDOM_PAIRS {
        let picked = sample(rng, cells, 2);
        pairs.push((picked.index(0), picked.index(1)));
    }
    pairs
}

/// Woodbury inverse against the dense matrix it represents, and the fast
/// quadratic form against a dense solve, on grids up to 32 x 32 with up to 50
/// selected cells.
pub fn lowrank_suite(opts: &SuiteOptions) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst_identity = 0.0f64;
    let mut worst_quad = 0.0f64;
    let mut max_rank = 0;
    for _ in 0..opts.instances {
        let (w, h) = (rng.random_range(4..=32u32), rng.random_range(4..=32u32));
        let heads = rng.random_range(1..=8);
        let scene = scene_in(&mut rng, w, h, heads)?;
        let config = ScaleConfig {
            m_cap: rng.random_range(1..=50),
            var_fraction_tau: rng.random_range(0.3..0.99),
            ..ScaleConfig::with_scales(1)
        };
        let grid = ScaleGrid::new(1, 1, w, h);
        let moments = moment_maps(&scene, &grid, &config)?;
        let cov = build_lowrank(&scene, &moments, &config)?;
        let inv = invert_lowrank(&cov)?;
        max_rank = max_rank.max(cov.rank());

        let n = grid.len();
        let sigma = DMatrix::from_row_slice(n, n, &cov.densify(inv.jitter)?);
        let sigma_inv = DMatrix::from_row_slice(n, n, &inv.densify()?);
        let residual = &sigma * &sigma_inv - DMatrix::identity(n, n);
        worst_identity = worst_identity.max(residual.abs().max());

        // Residuals on the natural scale of each cell.
        let r: Vec<f64> = cov
            .diag
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(&mut rng);
                v.sqrt() * z
            })
            .collect();
        let fast = quadratic_form(&r, &inv)?;
        let dense = dense_quadratic_form(&r, &sigma)?;
        worst_quad = worst_quad.max((fast - dense).abs() / dense.abs().max(f64::MIN_POSITIVE));
    }
    let tol = WOODBURY_TOL * opts.tolerance_scale;
    Ok(vec![
        Check::at_most(
            "lowrank/identity",
            worst_identity,
            tol,
            format!("max |Sigma Sigma^-1 - I|, M <= {max_rank}"),
        ),
        Check::at_most(
            "lowrank/quadratic",
            worst_quad,
            tol,
            "relative gap to dense Cholesky".into(),
        ),
    ])
}

/// Analytic gradient against central differences at perturbed mean maps.
/// Coordinates whose finite-difference stencil straddles a regularizer kink
/// are skipped. The relative error uses `max(|a|, |b|, 1)` as denominator.
pub fn gradient_suite(opts: &SuiteOptions) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = 0.0f64;
    let mut compared = 0usize;
    let mut skipped = 0usize;
    for _ in 0..opts.instances {
        let (w, h) = (rng.random_range(8..=24u32), rng.random_range(8..=24u32));
        let heads = rng.random_range(0..=4);
        let scene = scene_in(&mut rng, w, h, heads)?;
        let config = ScaleConfig {
            alpha: rng.random_range(1.0..16.0),
            beta1: rng.random_range(1.0..16.0),
            m_cap: rng.random_range(0..=40),
            ..ScaleConfig::default()
        };
        let pre = Precomputed::new(&scene, &config)?;
        // Residuals r = c Sigma_hat z / sqrt(mean V) keep the Mahalanobis
        // term at O(J), so finite-difference round-off (eps L / h) stays far
        // below the tolerance.
        let spread = rng.random_range(0.2..2.0);
        let preds: Vec<DensityMap> = pre
            .scales
            .iter()
            .map(|p| {
                let z: Vec<f64> = (0..p.moments.grid.len())
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                let mean_var = p.cov.diag.iter().sum::<f64>() / p.cov.diag.len() as f64;
                let r = p.cov.apply(&z)?;
                let values = p
                    .moments
                    .mean
                    .iter()
                    .zip(&r)
                    .map(|(m, r)| m + spread * r / mean_var.sqrt())
                    .collect();
                DensityMap::new(p.moments.grid, values)
            })
            .collect::<Result<_>>()?;

        let analytic = loss_gradient(&preds, &scene, &config, &pre)?;
        let raw: Vec<Vec<f64>> = preds.iter().map(|m| m.values().to_vec()).collect();
        let numeric = fd_gradient(
            |x| {
                let maps: Vec<DensityMap> = x
                    .iter()
                    .zip(&pre.scales)
                    .map(|(v, p)| DensityMap::new(p.moments.grid, v.clone()).expect("grid length"))
                    .collect();
                total_loss(&maps, &scene, &config, &pre)
                    .expect("valid inputs")
                    .total
            },
            &raw,
            FD_STEP,
        );

        for (s, p) in pre.scales.iter().enumerate() {
            let kinks = kink_cells(&preds[s], p, &config)?;
            for j in 0..raw[s].len() {
                if kinks[j] {
                    skipped += 1;
                    continue;
                }
                let (a, b) = (analytic[s][j], numeric[s][j]);
                let err = (a - b).abs() / a.abs().max(b.abs()).max(1.0);
                worst = worst.max(err);
                compared += 1;
            }
        }
    }
    Ok(vec![Check::at_most(
        "gradient/finite-difference",
        worst,
        GRADIENT_TOL * opts.tolerance_scale,
        format!("{compared} coordinates, {skipped} near a kink"),
    )])
}

/// Cells whose `+-h` perturbation can change the sign of some head's
/// `mass - 1`.
fn kink_cells(pred: &DensityMap, p: &ScalePrecomp, config: &ScaleConfig) -> Result<Vec<bool>> {
    let grid = &p.moments.grid;
    let masses = head_masses(pred, &p.moments, config)?;
    let mut kinks = vec![false; grid.len()];
    for (head, mass) in p.moments.heads.iter().zip(masses) {
        for (j, mu) in head.iter(grid) {
            let denom = p.moments.mean[j];
            if denom < config.denom_guard {
                continue;
            }
            if (mass - 1.0).abs() < FD_STEP * (mu / denom) + 1e-7 {
                kinks[j] = true;
            }
        }
    }
    Ok(kinks)
}
