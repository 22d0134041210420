use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sadl_core::verify::{gradient_suite, lowrank_suite, moments_suite, Check, SuiteOptions};
use sadl_core::{
    fit_density, gt_density_map, sweep, synth_scene, total_loss, DensityMap, FitParams,
    Precomputed, ScaleGrid, SynthSpec,
};

use crate::formats::{read_config, read_scene, read_text, write_bytes, write_heatmap, DensityFile};
use crate::{CliError, Command, Suite};

pub(crate) fn dispatch(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::GenDensity {
            annotations,
            scale,
            beta,
            out: path,
            heatmap,
        } => gen_density(&annotations, scale, beta, &path, heatmap.as_deref(), out),
        Command::Loss {
            annotations,
            pred,
            config,
        } => loss(&annotations, &pred, config.as_deref(), out),
        Command::Verify {
            suite,
            seed,
            samples,
            instances,
            tolerance_scale,
        } => verify(
            suite,
            &SuiteOptions {
                seed,
                instances,
                samples,
                tolerance_scale,
            },
            out,
        ),
        Command::Fit {
            spec,
            annotations,
            config,
            report,
            heatmaps,
            max_iters,
        } => fit(
            spec.as_deref(),
            annotations.as_deref(),
            config.as_deref(),
            &report,
            heatmaps.as_deref(),
            max_iters,
            out,
        ),
        Command::Sweep {
            alpha_grid,
            beta_grid,
            seeds,
            out: path,
            spec,
            jitter,
            config,
        } => run_sweep(
            &alpha_grid,
            &beta_grid,
            seeds,
            &path,
            spec.as_deref(),
            jitter,
            config.as_deref(),
            out,
        ),
    }
}

fn emit(out: &mut dyn Write, line: String) -> Result<(), CliError> {
    writeln!(out, "{line}").map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

fn gen_density(
    annotations: &Path,
    scale: u32,
    beta: f64,
    path: &Path,
    heatmap: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let scene = read_scene(annotations)?;
    if !(1..=31).contains(&scale) {
        return Err(CliError::Input(format!("scale must be in 1..=31, got {scale}")));
    }
    let grid = ScaleGrid::new(scale as usize, 1 << (scale - 1), scene.width(), scene.height());
    let map = gt_density_map(&scene, &grid, beta)?;
    let file = DensityFile::from_map(&map)?;
    file.write(path)?;
    if let Some(h) = heatmap {
        write_heatmap(h, &map)?;
    }
    emit(out, format!("sum={:.6}", map.sum()))
}

fn loss(annotations: &Path, preds: &[PathBuf], config: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    let scene = read_scene(annotations)?;
    let config = read_config(config)?;
    let maps: Vec<DensityMap> = preds
        .iter()
        .map(|p| DensityFile::read(p)?.into_map())
        .collect::<Result<_, _>>()?;
    let pre = Precomputed::new(&scene, &config)?;
    let b = total_loss(&maps, &scene, &config, &pre)?;
    for (s, (q, r)) in b.per_scale_quadratic.iter().zip(&b.per_scale_regularizer).enumerate() {
        emit(out, format!("scale={} quad={q:e} reg={r:e}", s + 1))?;
    }
    emit(out, format!("total={:e}", b.total))
}

fn verify(suite: Suite, opts: &SuiteOptions, out: &mut dyn Write) -> Result<(), CliError> {
    type SuiteFn = fn(&SuiteOptions) -> sadl_core::Result<Vec<Check>>;
    let suites: &[(&str, SuiteFn)] = match suite {
        Suite::Moments => &[("moments", moments_suite)],
        Suite::Lowrank => &[("lowrank", lowrank_suite)],
        Suite::Gradient => &[("gradient", gradient_suite)],
        Suite::All => &[
            ("moments", moments_suite),
            ("lowrank", lowrank_suite),
            ("gradient", gradient_suite),
        ],
    };
    let mut failed = 0;
    for (name, f) in suites {
        // A routine that errors out on a random instance is a failed check.
        let checks = f(opts).map_err(|e| CliError::Verification(format!("{name}: {e}")))?;
        for c in checks {
            let verdict = if c.passed { "PASS" } else { "FAIL" };
            failed += usize::from(!c.passed);
            emit(
                out,
                format!(
                    "{verdict} suite={name} check={} err={:e} tol={:e} {}",
                    c.name, c.measured, c.tolerance, c.detail
                ),
            )?;
        }
    }
    if failed > 0 {
        return Err(CliError::Verification(format!("{failed} check(s) failed")));
    }
    Ok(())
}

fn fit(
    spec: Option<&Path>,
    annotations: Option<&Path>,
    config: Option<&Path>,
    report: &Path,
    heatmaps: Option<&Path>,
    max_iters: Option<usize>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let scene = match (spec, annotations) {
        (Some(p), _) => synth_scene(&read_spec(p)?)?,
        (None, Some(p)) => read_scene(p)?,
        (None, None) => return Err(CliError::Input("either --spec or --annotations is required".into())),
    };
    let config = read_config(config)?;
    let defaults = FitParams::default();
    let params = FitParams {
        max_iters: max_iters.unwrap_or(defaults.max_iters),
        ..defaults
    };
    let result = fit_density(&scene, &config, &params)?;
    let json = serde_json::to_string_pretty(&result).map_err(|e| CliError::Input(e.to_string()))?;
    write_bytes(report, format!("{json}\n").as_bytes())?;
    if let Some(dir) = heatmaps {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        for map in &result.maps {
            write_heatmap(&dir.join(format!("scale{}.pgm", map.grid().scale)), map)?;
        }
    }
    for (s, c) in result.counts.iter().enumerate() {
        emit(out, format!("scale={} count={c:.6}", s + 1))?;
    }
    emit(
        out,
        format!(
            "gt_count={} iterations={} converged={} total={:e}",
            result.gt_count, result.iterations, result.converged, result.final_loss.total
        ),
    )
}

fn read_spec(path: &Path) -> Result<SynthSpec, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Input(format!("spec: {e}")))
}

#[allow(clippy::too_many_arguments)]
fn run_sweep(
    alpha_grid: &[f64],
    beta_grid: &[f64],
    seeds: usize,
    path: &Path,
    spec: Option<&Path>,
    jitter: f64,
    config: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let mut base = match spec {
        Some(p) => read_spec(p)?,
        None => SynthSpec::default(),
    };
    base.jitter_alpha = base.jitter_alpha.or(Some(jitter));
    let config = read_config(config)?;
    let rows = sweep(alpha_grid, beta_grid, seeds, &base, &config, &FitParams::default())?;
    let mut csv = String::from("alpha,beta1,mae\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{}\n", r.alpha, r.beta1, r.mae));
    }
    write_bytes(path, csv.as_bytes())?;
    let best = rows.iter().min_by(|a, b| a.mae.total_cmp(&b.mae)).expect("sweep rows are non-empty");
    emit(
        out,
        format!("rows={} best_alpha={} best_beta1={} best_mae={}", rows.len(), best.alpha, best.beta1, best.mae),
    )
}
