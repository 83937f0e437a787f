use l1smooth_cli::config::{ExperimentConfig, ExperimentKind};
use l1smooth_cli::experiments::{run_tomography, scaling_bench, sweep_lambda};

fn base_config() -> ExperimentConfig {
    let text = r#"
experiment = "lambda-sweep"
seeds = [1]
"#;
    toml::from_str(text).unwrap()
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();

    if which == "tracking" || which.is_empty() {
        // Criterion 7: lambda = 1 vs lambda = 0 over 40 seeds.
        let mut config = base_config();
        config.experiment = ExperimentKind::LambdaSweep;
        config.seeds = (1..=40).collect();
        config.sweep.lambda_grid = Some(vec![0.0, 0.5, 1.0, 2.0]);
        config.solver.max_iterations = 60;
        config.solver.rho = 1.0;
        let t0 = std::time::Instant::now();
        let (rows, _) = sweep_lambda(&config, &config.sweep.grid().unwrap(), false).unwrap();
        for row in rows {
            println!(
                "tracking lambda={:<6} mean_err={:.5} failures={}",
                row.lambda, row.mean_rel_error, row.failures
            );
        }
        println!("tracking sweep took {:?}", t0.elapsed());
    }

    if which == "ct" || which.is_empty() {
        let mut config = base_config();
        config.experiment = ExperimentKind::LambdaSweep;
        config.model.preset = "coordinated-turn".into();
        config.model.dt = 0.2;
        config.model.qc = 0.01;
        config.model.sigma = 0.3;
        config.model.steps = 100;
        config.seeds = (1..=10).collect();
        config.sweep.lambda_grid = Some(vec![0.0, 0.1, 0.3, 0.5, 1.0]);
        config.solver.max_iterations = 20;
        config.solver.rho = 1.0;
        let t0 = std::time::Instant::now();
        let (rows, _) = sweep_lambda(&config, &config.sweep.grid().unwrap(), false).unwrap();
        for row in rows {
            println!(
                "ct lambda={:<6} mean_err={:.5} failures={}",
                row.lambda, row.mean_rel_error, row.failures
            );
        }
        println!("ct sweep took {:?}", t0.elapsed());
    }

    if which == "tomo" || which.is_empty() {
        for lambda in [0.01, 0.05, 0.1, 0.5, 1.0] {
            let mut config = base_config();
            config.experiment = ExperimentKind::Tomography;
            config.seeds = vec![1, 2, 3, 4, 5];
            config.solver.lambda = lambda;
            config.solver.rho = 1.0;
            config.solver.max_iterations = 20;
            config.solver.primal_tol = 0.0;
            config.solver.dual_tol = 0.0;
            let t0 = std::time::Instant::now();
            let report = run_tomography(&config).unwrap();
            println!(
                "tomo lambda={:<5} psnr={:.3} baseline={:.3} gain={:+.3} dB  covs={:?} init={} ({:?})",
                lambda,
                report.mean_psnr,
                report.mean_baseline_psnr.unwrap(),
                report.mean_psnr - report.mean_baseline_psnr.unwrap(),
                report.cov_updates_per_iteration,
                report.init_cov_updates,
                t0.elapsed()
            );
        }
    }

    if which == "scaling" || which.is_empty() {
        let mut config = base_config();
        config.experiment = ExperimentKind::Scaling;
        config.scaling.t_grid = vec![1_000, 10_000, 100_000];
        config.scaling.repeats = 3;
        let t0 = std::time::Instant::now();
        let rows = scaling_bench(&config).unwrap();
        for row in &rows {
            println!(
                "scaling T={:<8} {}-{}: {:?} ({})",
                row.steps, row.variant, row.solver, row.wall_time_s, row.note
            );
        }
        println!("scaling took {:?}", t0.elapsed());
    }
}
