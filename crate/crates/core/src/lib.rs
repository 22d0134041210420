//! Scale-aware joint-likelihood loss for crowd density maps.
//!
//! Annotated head positions are treated as noisy observations of the true
//! heads. Under that noise model the ground-truth density map at each scale
//! is a random vector; this crate computes its mean, variance and pairwise
//! covariance in closed form, approximates the covariance as diagonal plus a
//! small dense block, and scores predicted maps with the resulting Gaussian
//! negative log-likelihood plus a per-head mass regularizer.
//!
//! ```
//! use sadl_core::{total_loss, Point, Precomputed, ScaleConfig, Scene};
//!
//! let scene = Scene::new(192, 192, vec![Point::new(90.0, 100.0)]).unwrap();
//! let config = ScaleConfig::default();
//! let pre = Precomputed::new(&scene, &config).unwrap();
//! let loss = total_loss(&pre.mean_maps(), &scene, &config, &pre).unwrap();
//! assert!(loss.total < 1e-2);
//! ```

mod covariance;
mod error;
mod fit;
mod linalg;
mod loss;
mod lowrank;
mod moments;
pub mod oracle;
pub mod verify;
mod scene;

pub use covariance::{covariance_entry, omega, CovQuery};
pub use error::{Error, Result};
pub use fit::{
    fit_density, mae_mse, sweep, synth_scene, FitParams, FitReport, HeadCount, Placement, SweepRow,
    SynthSpec,
};
pub use loss::{
    head_masses, loss_gradient, regularizer, total_loss, LossBreakdown, Precomputed, ScalePrecomp,
};
pub use lowrank::{
    build_lowrank, invert_lowrank, quadratic_form, select_top_m, LowRankCov, LowRankInverse,
    DENSIFY_LIMIT, MIN_RCOND,
};
pub use moments::{
    gauss2d_iso, gt_density_map, moment_maps, HeadSupport, MomentMaps, SUPPORT_SIGMAS,
};
pub use scene::{build_grids, to_scale_coords, DensityMap, Point, ScaleConfig, ScaleGrid, Scene};
