//! Experiment drivers: Monte-Carlo runs, lambda sweeps, scaling benchmarks,
//! and the dynamic tomography pipeline, all emitting the documented CSVs.
//!
//! Output layout per experiment directory:
//!   config_echo.toml   the configuration actually used
//!   summary.csv        numerical results (no timing columns, byte-reproducible)
//!   timings.csv        wall-clock columns, keyed like the summary
//!   history_<cell>.csv per-run solver history
//!   manifest.csv       cell key -> history file mapping

use std::path::{Path, PathBuf};
use std::time::Instant;

use l1smooth::batch::{batch_run, stack_batch_with_limit};
use l1smooth::io::write_history_csv;
use l1smooth::model::{LinearModel, MatSeq, ModelRef, NonlinearModel};
use l1smooth::presets::{
    linear_tracking_model, phantom_sequence, radon_matrix, tv_operator,
    ImageSequence,
};
use l1smooth::smoother::{ks_solve, precompute_gains, FilterCache};
use l1smooth::splitting::{SolveStatus, Solution, Splitter};
use l1smooth::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::sync::Arc;

use crate::config::{BuiltModel, ExperimentConfig, ExperimentKind};
use crate::metrics::{psnr, relative_error};

/// Ground truth plus noisy measurements for one experiment cell.
pub struct Scenario {
    pub truth: Vec<DVector<f64>>,
    pub measurements: Vec<DVector<f64>>,
}

/// Piecewise-constant-velocity ground truth for the tracking experiment: the
/// target alternates between rest and straight motion, so the velocity
/// sequence the regularizer acts on is genuinely sparse. Measurements are
/// noisy positions.
pub fn sparse_velocity_truth(dt: f64, sigma: f64, steps: usize, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(2).wrapping_add(1));
    let mut truth = Vec::with_capacity(steps);
    let mut measurements = Vec::with_capacity(steps);
    let mut pos = [0.0f64, 0.0];
    let mut t = 0usize;
    let mut moving = false;
    while t < steps {
        let segment = rng.gen_range(15..35usize).min(steps - t);
        let vel = if moving {
            [
                rng.sample::<f64, _>(rand_distr::StandardNormal) * 1.5,
                rng.sample::<f64, _>(rand_distr::StandardNormal) * 1.5,
            ]
        } else {
            [0.0, 0.0]
        };
        for _ in 0..segment {
            if t > 0 {
                pos[0] += dt * vel[0];
                pos[1] += dt * vel[1];
            }
            truth.push(DVector::from_vec(vec![pos[0], pos[1], vel[0], vel[1]]));
            let noise_x: f64 = rng.sample(rand_distr::StandardNormal);
            let noise_y: f64 = rng.sample(rand_distr::StandardNormal);
            measurements.push(DVector::from_vec(vec![
                pos[0] + sigma * noise_x,
                pos[1] + sigma * noise_y,
            ]));
            t += 1;
        }
        moving = !moving;
    }
    Scenario {
        truth,
        measurements,
    }
}

/// Mostly-straight coordinated-turn ground truth: the turn rate is zero on
/// most segments and jumps to a constant value during maneuvers, making the
/// regularized channel sparse. Measurements are noisy positions.
pub fn sparse_turn_truth(
    model: &NonlinearModel<f64>,
    dt: f64,
    sigma: f64,
    seed: u64,
) -> Scenario {
    let steps = model.steps;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(2).wrapping_add(1));
    let mut truth = Vec::with_capacity(steps);
    let mut measurements = Vec::with_capacity(steps);
    let mut x = DVector::from_vec(vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    let mut t = 0usize;
    let mut turning = false;
    let _ = dt;
    while t < steps {
        let segment = rng.gen_range(10..25usize).min(steps - t);
        let omega = if turning {
            let magnitude = rng.gen_range(0.25..0.6);
            if rng.gen_bool(0.5) {
                magnitude
            } else {
                -magnitude
            }
        } else {
            0.0
        };
        for _ in 0..segment {
            x[4] = omega;
            if t > 0 {
                x = (model.dynamics)(t, &x);
                x[4] = omega;
            }
            truth.push(x.clone());
            let nx: f64 = rng.sample(rand_distr::StandardNormal);
            let ny: f64 = rng.sample(rand_distr::StandardNormal);
            measurements.push(DVector::from_vec(vec![
                x[0] + sigma * nx,
                x[1] + sigma * ny,
            ]));
            t += 1;
        }
        turning = !turning;
    }
    Scenario {
        truth,
        measurements,
    }
}

/// Build the scenario for one seed of the configured experiment model.
pub fn make_scenario(config: &ExperimentConfig, model: &BuiltModel, seed: u64) -> Scenario {
    match model {
        BuiltModel::Linear(_) => sparse_velocity_truth(
            config.model.dt,
            config.model.sigma,
            config.model.steps,
            seed,
        ),
        BuiltModel::Nonlinear(m) => {
            sparse_turn_truth(m, config.model.dt, config.model.sigma, seed)
        }
    }
}

fn model_ref<'a>(model: &'a BuiltModel) -> ModelRef<'a, f64> {
    match model {
        BuiltModel::Linear(m) => ModelRef::Linear(m),
        BuiltModel::Nonlinear(m) => ModelRef::Nonlinear(m),
    }
}

/// One sweep cell result.
#[derive(Clone, Debug)]
pub struct CellResult {
    pub lambda: f64,
    pub seed: u64,
    pub rel_error: Option<f64>,
    pub wall_time_s: f64,
    pub solution: Option<Solution<f64>>,
}

/// Aggregated sweep row.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub lambda: f64,
    pub mean_rel_error: f64,
    pub mean_wall_time_s: f64,
    pub failures: usize,
}

/// Run every `(lambda, seed)` cell of the sweep: simulate, solve, record.
/// Cell failures become missing values, not aborts.
pub fn sweep_lambda(
    config: &ExperimentConfig,
    grid: &[f64],
    keep_solutions: bool,
) -> Result<(Vec<SweepRow>, Vec<CellResult>)> {
    let model = config.build_model()?;
    let base = config.solver.to_splitting_config()?;

    let cells: Vec<(f64, u64)> = grid
        .iter()
        .flat_map(|&lambda| config.seeds.iter().map(move |&seed| (lambda, seed)))
        .collect();

    let mut results: Vec<CellResult> = cells
        .par_iter()
        .map(|&(lambda, seed)| {
            let scenario = make_scenario(config, &model, seed);
            let mut cell_config = base.clone();
            cell_config.lambda = lambda;
            let started = Instant::now();
            let solved = Splitter::new(model_ref(&model), cell_config)
                .and_then(|mut s| s.run(&scenario.measurements, None));
            let wall = started.elapsed().as_secs_f64();
            match solved {
                Ok(solution) if solution.status != SolveStatus::Diverged => CellResult {
                    lambda,
                    seed,
                    rel_error: relative_error(&solution.x, &scenario.truth).ok(),
                    wall_time_s: wall,
                    solution: keep_solutions.then_some(solution),
                },
                _ => CellResult {
                    lambda,
                    seed,
                    rel_error: None,
                    wall_time_s: wall,
                    solution: None,
                },
            }
        })
        .collect();

    // Deterministic ordering regardless of scheduling.
    results.sort_by(|a, b| {
        a.lambda
            .partial_cmp(&b.lambda)
            .unwrap()
            .then(a.seed.cmp(&b.seed))
    });

    let mut rows = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let cells: Vec<&CellResult> = results
            .iter()
            .filter(|c| c.lambda == lambda)
            .collect();
        let ok: Vec<f64> = cells.iter().filter_map(|c| c.rel_error).collect();
        let failures = cells.len() - ok.len();
        let mean_err = if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().sum::<f64>() / ok.len() as f64
        };
        let mean_time = cells.iter().map(|c| c.wall_time_s).sum::<f64>() / cells.len().max(1) as f64;
        rows.push(SweepRow {
            lambda,
            mean_rel_error: mean_err,
            mean_wall_time_s: mean_time,
            failures,
        });
    }
    Ok((rows, results))
}

/// One scaling measurement.
#[derive(Clone, Debug)]
pub struct ScalingRow {
    pub steps: usize,
    pub variant: String,
    pub solver: &'static str,
    /// `None` when the dense path refuses the problem size.
    pub wall_time_s: Option<f64>,
    pub note: &'static str,
}

/// Time the smoother-based and dense batch solvers at a fixed iteration
/// budget over the `T` grid (median of `repeats`); batch rows beyond the
/// dense limit record the refusal instead of a time.
pub fn scaling_bench(config: &ExperimentConfig) -> Result<Vec<ScalingRow>> {
    let section = &config.scaling;
    let mut rows = Vec::new();
    let variant_name = config.solver.variant.clone();
    for &steps in &section.t_grid {
        let model = linear_tracking_model::<f64>(
            config.model.dt,
            config.model.qc,
            config.model.sigma,
            steps,
        )?;
        let scenario = sparse_velocity_truth(
            config.model.dt,
            config.model.sigma,
            steps,
            config.seeds[0],
        );
        let mut budget = config.solver.to_splitting_config()?;
        budget.max_iterations = section.iterations;
        budget.primal_tol = 0.0;
        budget.dual_tol = 0.0;

        let mut smoother_times = Vec::with_capacity(section.repeats);
        for _ in 0..section.repeats.max(1) {
            let started = Instant::now();
            let mut splitter = Splitter::new(ModelRef::Linear(&model), budget.clone())?;
            let solution = splitter.run(&scenario.measurements, None)?;
            debug_assert_eq!(solution.history.len(), section.iterations);
            smoother_times.push(started.elapsed().as_secs_f64());
        }
        rows.push(ScalingRow {
            steps,
            variant: variant_name.clone(),
            solver: "smoother",
            wall_time_s: Some(median(&mut smoother_times)),
            note: "ok",
        });

        match stack_batch_with_limit(&model, &scenario.measurements, section.dense_limit) {
            Ok(batch) => {
                let mut batch_times = Vec::with_capacity(section.repeats);
                for _ in 0..section.repeats.max(1) {
                    let started = Instant::now();
                    let solution = batch_run(&batch, &budget, None)?;
                    debug_assert_eq!(solution.history.len(), section.iterations);
                    batch_times.push(started.elapsed().as_secs_f64());
                }
                rows.push(ScalingRow {
                    steps,
                    variant: variant_name.clone(),
                    solver: "batch",
                    wall_time_s: Some(median(&mut batch_times)),
                    note: "ok",
                });
            }
            Err(Error::BatchLimit { .. }) => rows.push(ScalingRow {
                steps,
                variant: variant_name.clone(),
                solver: "batch",
                wall_time_s: None,
                note: "batch size limit",
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(rows)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

/// Reconstruction results for one tomography run.
pub struct TomographyReport {
    pub per_seed_psnr: Vec<(u64, f64, Option<f64>)>,
    pub mean_psnr: f64,
    pub mean_baseline_psnr: Option<f64>,
    /// Covariance updates per outer iteration of the first seed's solve.
    pub cov_updates_per_iteration: Vec<usize>,
    pub init_cov_updates: usize,
    pub empty_rays: usize,
    pub reconstructions: Vec<(u64, ImageSequence<f64>)>,
}

/// Dynamic tomography: random-walk image model, synthetic Radon measurements,
/// total-variation regularizer, smoother-based ADMM with precomputed gains.
pub fn run_tomography(config: &ExperimentConfig) -> Result<TomographyReport> {
    let section = &config.tomography;
    let side = section.side;
    let n = side * side;

    let radon = radon_matrix::<f64>(side, section.angles, section.detectors)?;
    let omega = tv_operator::<f64>(side)?;
    let truth_template: Option<ImageSequence<f64>> = match &section.images {
        Some(path) => Some(ImageSequence::read_blob(path)?),
        None => None,
    };
    let frames = truth_template
        .as_ref()
        .map(|seq| seq.steps())
        .unwrap_or(section.frames);

    let model = LinearModel::<f64> {
        steps: frames,
        trans: MatSeq::Stationary(DMatrix::identity(n, n)),
        meas: MatSeq::Stationary(radon.matrix.clone()),
        proc_noise: MatSeq::Stationary(DMatrix::identity(n, n) * section.walk_intensity),
        meas_noise: MatSeq::Stationary(
            DMatrix::identity(radon.matrix.nrows(), radon.matrix.nrows())
                * section.noise_sigma.powi(2).max(1e-12),
        ),
        sparsity: MatSeq::Stationary(omega),
        prior_mean: DVector::from_element(n, 0.0),
        prior_cov: DMatrix::identity(n, n),
    };

    let solver_config = {
        let c = config.solver.to_splitting_config()?;
        if c.lambda < 0.0 {
            return Err(Error::Config("lambda must be nonnegative".to_string()));
        }
        c
    };

    // One splitter shared across seeds: the gain cache depends only on the
    // model and (Theta, Sigma), which the seed does not change.
    let mut splitter = Splitter::new(ModelRef::Linear(&model), solver_config.clone())?;
    let baseline_cache: Option<Arc<FilterCache<f64>>> = if section.baseline {
        Some(Arc::new(precompute_gains(&model, None)?))
    } else {
        None
    };

    let mut per_seed = Vec::new();
    let mut reconstructions = Vec::new();
    let mut cov_updates_per_iteration = Vec::new();
    let mut init_cov_updates = 0;

    for (i, &seed) in config.seeds.iter().enumerate() {
        let truth = match &truth_template {
            Some(seq) => seq.clone(),
            None => phantom_sequence(side, frames, seed)?,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));
        let y: Vec<DVector<f64>> = truth
            .frames
            .iter()
            .map(|frame| {
                let clean = &radon.matrix * frame;
                let noise = DVector::from_fn(clean.len(), |_, _| {
                    rng.sample::<f64, _>(rand_distr::StandardNormal) * section.noise_sigma
                });
                clean + noise
            })
            .collect();

        let solution = splitter.run(&y, None)?;
        if i == 0 {
            cov_updates_per_iteration = solution.history.iter().map(|r| r.cov_updates).collect();
            init_cov_updates = solution.init_cov_updates;
        }
        let recon = ImageSequence {
            side,
            frames: solution
                .x
                .iter()
                .map(|f| f.map(|v| v.clamp(0.0, 1.0)))
                .collect(),
        };
        let mean_frame_psnr = mean_psnr(&recon, &truth)?;

        let baseline_psnr = match &baseline_cache {
            Some(cache) => {
                let plain = ks_solve(&model, None, &y, Some(cache))?;
                let plain_recon = ImageSequence {
                    side,
                    frames: plain.means.iter().map(|f| f.map(|v| v.clamp(0.0, 1.0))).collect(),
                };
                Some(mean_psnr(&plain_recon, &truth)?)
            }
            None => None,
        };

        per_seed.push((seed, mean_frame_psnr, baseline_psnr));
        reconstructions.push((seed, recon));
    }

    let mean = per_seed.iter().map(|(_, p, _)| *p).sum::<f64>() / per_seed.len() as f64;
    let mean_baseline = if per_seed.iter().all(|(_, _, b)| b.is_some()) {
        Some(per_seed.iter().map(|(_, _, b)| b.unwrap()).sum::<f64>() / per_seed.len() as f64)
    } else {
        None
    };

    Ok(TomographyReport {
        per_seed_psnr: per_seed,
        mean_psnr: mean,
        mean_baseline_psnr: mean_baseline,
        cov_updates_per_iteration,
        init_cov_updates,
        empty_rays: radon.empty_rays.len(),
        reconstructions,
    })
}

fn mean_psnr(recon: &ImageSequence<f64>, truth: &ImageSequence<f64>) -> Result<f64> {
    if recon.steps() != truth.steps() {
        return Err(Error::Dimension("frame counts differ".to_string()));
    }
    let mut total = 0.0;
    for (r, t) in recon.frames.iter().zip(&truth.frames) {
        total += psnr(r, t)?;
    }
    Ok(total / recon.steps() as f64)
}

/// Outcome of [`run_experiment`]: where the report landed plus the headline
/// numbers, for callers that want to assert on them.
pub struct ExperimentOutcome {
    pub directory: PathBuf,
    pub any_divergence: bool,
    pub summary_path: PathBuf,
}

/// Dispatch on the configured experiment kind and write the report directory.
pub fn run_experiment(config: &ExperimentConfig, output: &Path) -> Result<ExperimentOutcome> {
    config.validate()?;
    std::fs::create_dir_all(output)?;
    let echo = toml::to_string_pretty(config).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(output.join("config_echo.toml"), echo)?;

    let mut manifest = String::from("cell,history_file\n");
    let mut timings = String::new();
    let mut summary = String::new();
    let mut any_divergence = false;

    match config.experiment {
        ExperimentKind::LinearTracking | ExperimentKind::CoordinatedTurn => {
            let model = config.build_model()?;
            summary.push_str("seed,rel_error,iterations,status\n");
            timings.push_str("seed,wall_time_s\n");
            for &seed in &config.seeds {
                let scenario = make_scenario(config, &model, seed);
                let started = Instant::now();
                let mut splitter =
                    Splitter::new(model_ref(&model), config.solver.to_splitting_config()?)?;
                let solution = splitter.run(&scenario.measurements, None)?;
                let wall = started.elapsed().as_secs_f64();
                if solution.status == SolveStatus::Diverged {
                    any_divergence = true;
                }
                let err = relative_error(&solution.x, &scenario.truth)?;
                summary.push_str(&format!(
                    "{},{},{},{}\n",
                    seed,
                    err,
                    solution.history.len(),
                    status_name(solution.status)
                ));
                timings.push_str(&format!("{seed},{wall}\n"));
                let history_file = format!("history_seed{seed}.csv");
                write_history_csv(&output.join(&history_file), &solution.history)?;
                manifest.push_str(&format!("seed{seed},{history_file}\n"));
            }
        }
        ExperimentKind::LambdaSweep => {
            let grid = config.sweep.grid()?;
            let (rows, cells) = sweep_lambda(config, &grid, true)?;
            summary.push_str("lambda,mean_rel_error,failures\n");
            timings.push_str("lambda,mean_wall_time_s\n");
            for row in &rows {
                summary.push_str(&format!(
                    "{},{},{}\n",
                    row.lambda, row.mean_rel_error, row.failures
                ));
                timings.push_str(&format!("{},{}\n", row.lambda, row.mean_wall_time_s));
            }
            for cell in &cells {
                if cell.rel_error.is_none() {
                    any_divergence = true;
                }
                if let Some(solution) = &cell.solution {
                    let history_file =
                        format!("history_lambda{}_seed{}.csv", cell.lambda, cell.seed);
                    write_history_csv(&output.join(&history_file), &solution.history)?;
                    manifest.push_str(&format!(
                        "lambda{}_seed{},{history_file}\n",
                        cell.lambda, cell.seed
                    ));
                }
            }
        }
        ExperimentKind::Scaling => {
            let rows = scaling_bench(config)?;
            summary.push_str("steps,variant,solver,note\n");
            timings.push_str("steps,variant,solver,wall_time_s\n");
            for row in &rows {
                summary.push_str(&format!(
                    "{},{},{},{}\n",
                    row.steps, row.variant, row.solver, row.note
                ));
                timings.push_str(&format!(
                    "{},{},{},{}\n",
                    row.steps,
                    row.variant,
                    row.solver,
                    row.wall_time_s.map_or(String::from("-"), |t| t.to_string())
                ));
            }
        }
        ExperimentKind::Tomography => {
            let report = run_tomography(config)?;
            summary.push_str("seed,psnr_db,baseline_psnr_db\n");
            for (seed, p, b) in &report.per_seed_psnr {
                summary.push_str(&format!(
                    "{},{},{}\n",
                    seed,
                    p,
                    b.map_or(String::from("-"), |v| v.to_string())
                ));
            }
            summary.push_str(&format!(
                "mean,{},{}\n",
                report.mean_psnr,
                report
                    .mean_baseline_psnr
                    .map_or(String::from("-"), |v| v.to_string())
            ));
            timings.push_str("iteration,cov_updates\n");
            for (i, updates) in report.cov_updates_per_iteration.iter().enumerate() {
                timings.push_str(&format!("{},{}\n", i + 1, updates));
            }
            for (seed, recon) in &report.reconstructions {
                let blob = format!("recon_seed{seed}.l1sm");
                recon.write_blob(&output.join(&blob))?;
                manifest.push_str(&format!("recon_seed{seed},{blob}\n"));
                for frame in 0..recon.steps() {
                    let pgm = format!("recon_seed{seed}_frame{frame}.pgm");
                    recon.write_pgm(frame, &output.join(&pgm))?;
                }
            }
        }
    }

    let summary_path = output.join("summary.csv");
    std::fs::write(&summary_path, summary)?;
    std::fs::write(output.join("timings.csv"), timings)?;
    std::fs::write(output.join("manifest.csv"), manifest)?;
    Ok(ExperimentOutcome {
        directory: output.to_path_buf(),
        any_divergence,
        summary_path,
    })
}

fn status_name(status: SolveStatus) -> &'static str {
    match status {
        SolveStatus::Converged => "converged",
        SolveStatus::MaxIterations => "max-iterations",
        SolveStatus::Diverged => "diverged",
    }
}
