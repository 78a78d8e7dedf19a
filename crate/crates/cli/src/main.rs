use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use stochfd::harness::{
    self, emit_report, parse_config, ConvergenceReport, ExperimentConfig, Norm, ReportFormat, Series,
};

#[derive(Parser)]
#[command(name = "stochfd", version, about = "Finite-difference experiments for linear stochastic parabolic equations")]
struct Cli {
    /// Experiment configuration (TOML). Defaults to the built-in cos(x + 2w) preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured ones.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Report format: csv or json.
    #[arg(long, global = true)]
    format: Option<ReportFormat>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Consistency and stochastic parabolicity of the configured scheme.
    Check,
    /// One solve at a single ladder level; states go to the output directory.
    Solve {
        #[arg(long, default_value_t = 0)]
        level: usize,
    },
    /// Convergence study over the grid ladder.
    Converge,
    /// Convergence study of the Richardson-extrapolated solutions.
    Extrapolate,
    /// Orders of the truncated operator expansions.
    ExpansionVerify {
        #[arg(long, default_value_t = 2)]
        max_order: usize,
    },
    /// The cos(x + 2w) table at w_1 = 1.
    #[command(name = "reproduce-example-2-4")]
    ReproduceExample24,
}

fn load(cli: &Cli) -> stochfd::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => parse_config(&std::fs::read_to_string(path)?)?,
        None => ExperimentConfig::example_2_4(),
    };
    if let Some(seed) = cli.seed {
        cfg.monte_carlo.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.display().to_string();
    }
    if let Some(format) = cli.format {
        cfg.output.format = format;
    }
    Ok(cfg)
}

fn summarize(report: &ConvergenceReport, series: Series) {
    for &norm in &[Norm::Sup, Norm::L2h] {
        for &seed in &report.seeds {
            if let Some(fit) = report.seed_fit(series, norm, seed) {
                match fit.fit {
                    Some(f) => println!("{series} {norm} seed {seed}: order {:.4} (R² {:.6})", f.slope, f.r_squared),
                    None => println!("{series} {norm} seed {seed}: no fit ({})", fit.notes.join("; ")),
                }
            }
        }
    }
}

fn emit(report: &ConvergenceReport, cfg: &ExperimentConfig) -> stochfd::Result<()> {
    for path in emit_report(report, cfg.output.format, Path::new(&cfg.output.dir))? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run(cli: &Cli) -> stochfd::Result<bool> {
    match &cli.command {
        Command::ReproduceExample24 => {
            print!("{}", harness::reproduce_example_2_4()?);
            Ok(true)
        }
        Command::Check => {
            let cfg = load(cli)?;
            let report = harness::check(&cfg)?;
            if let Some(r) = report.consistency_residual {
                println!("consistency residual: {r:.3e}");
            } else {
                println!("consistency: no target equation for an explicit stencil");
            }
            let p = &report.parabolicity;
            println!(
                "parabolicity: min eigenvalue {:.6e}, min p/q {:.6e}, tolerance {:.1e}: {}",
                p.min_eigenvalue,
                p.min_pq,
                p.tolerance,
                if p.pass { "pass" } else { "fail" }
            );
            Ok(report.pass())
        }
        Command::Solve { level } => {
            let cfg = load(cli)?;
            cfg.validate()?;
            let seed = cfg.seeds()[0];
            let traj = harness::solve_single(&cfg, *level, seed)?;
            let dir = Path::new(&cfg.output.dir);
            std::fs::create_dir_all(dir)?;
            traj.write_csv_dir(dir, "u")?;
            println!(
                "solved on {} with seed {seed}: {} states written to {}",
                traj.lattice(),
                traj.record_times().len(),
                dir.display()
            );
            Ok(true)
        }
        Command::Converge => {
            let cfg = load(cli)?;
            let report = harness::run_convergence(&cfg)?;
            summarize(&report, Series::Plain);
            if cfg.time.positive_part {
                summarize(&report, Series::Clipped);
            }
            if cfg.extrapolation.enabled {
                summarize(&report, Series::Extrapolated);
            }
            emit(&report, &cfg)?;
            Ok(true)
        }
        Command::Extrapolate => {
            let mut cfg = load(cli)?;
            cfg.extrapolation.enabled = true;
            let report = harness::run_convergence(&cfg)?;
            if let Some(w) = &report.weights {
                println!("weights: {w}");
            }
            summarize(&report, Series::Extrapolated);
            emit(&report, &cfg)?;
            Ok(true)
        }
        Command::ExpansionVerify { max_order } => {
            let cfg = load(cli)?;
            let mut pass = true;
            for check in harness::expansion_verify(&cfg, *max_order)? {
                let need = check.n as f64 + 1.0 - 0.4;
                let ok = check.l_order.at_least(need) && check.m_order.at_least(need);
                pass &= ok;
                let show = |s: Option<f64>| s.map_or("exact".to_string(), |v| format!("{v:.3}"));
                println!(
                    "n = {}: L remainder order {}, M remainder order {} (need {need:.1}): {}",
                    check.n,
                    show(check.l_order.slope()),
                    show(check.m_order.slope()),
                    if ok { "pass" } else { "fail" }
                );
            }
            Ok(pass)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error!("cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_solver_abort() { 3 } else { 2 })
        }
    }
}

