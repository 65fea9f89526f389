//! Command-line driver for the reduced-order modeling toolkit.
//!
//! Every subcommand reads one experiment configuration (a TOML file via
//! `--config`, or a built-in default selected by `--problem`) and works
//! against one output directory that caches trajectories, trained models,
//! and bases between invocations. Exit code 2 flags a configuration that
//! could not be loaded; exit code 1 flags any later failure, with a
//! diagnostic line on stderr.

use clap::{Parser, Subcommand};
use rom_core::analysis::BoundVariant;
use rom_core::harness::{self, ExperimentConfig, ResultTable, RomKind, RomRunOutput};
use rom_core::{io, par, Error, Result};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "burgers-rom",
    version,
    about = "Reduced-order modeling for parameterized Burgers-type PDEs"
)]
struct Cli {
    /// Experiment configuration file (TOML); omit to use a built-in setup.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Built-in setup when no --config is given: "1d" or "2d".
    #[arg(long, default_value = "1d", global = true)]
    problem: String,

    /// Use the full-size 2D setup (nx = ny = 60, nt = 1500) instead of the
    /// scaled-down default. Only affects the built-in 2D configuration.
    #[arg(long, global = true)]
    paper_scale: bool,

    /// Output directory; overrides the configuration's choice.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override every configured training seed with this one.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the full-order model at every training and test parameter and
    /// save one trajectory file per parameter.
    Fom,
    /// Train the autoencoder for each solution component from the training
    /// snapshots and save the model files (cached runs load instead).
    Train,
    /// Compute the solution POD bases (and the residual basis when the
    /// configuration requests hyper-reduction) and save them.
    Pod,
    /// Run one reduced solve and write its result row plus, for
    /// hyper-reduced kinds, the chosen sample indices.
    Rom {
        /// Solver variant: ls-galerkin, ls-lspg, nm-galerkin, nm-lspg, or
        /// any of those with an -hr suffix.
        #[arg(long)]
        kind: String,
        /// Residual basis width; defaults to the configuration's first entry.
        #[arg(long)]
        nr: Option<usize>,
        /// Residual sample count; defaults to the configuration's first entry.
        #[arg(long)]
        nz: Option<usize>,
        /// Test parameter; defaults to the configuration's first test value.
        #[arg(long)]
        mu: Option<f64>,
    },
    /// Run every configured cell (test parameter x solver kind, crossed with
    /// the n_r x n_z grid for hyper-reduced kinds) and write a result table.
    Sweep,
    /// Check the a-posteriori error bound step by step for every seed.
    Bound {
        /// Bound variant: nm-lspg-hr or nm-galerkin-hr.
        #[arg(long, default_value = "nm-lspg-hr")]
        kind: String,
    },
    /// Evaluate the four flop cost models over a range of full-order sizes.
    Cost {
        /// Full-order dimension range "lo:hi".
        #[arg(long, default_value = "1e3:1e6")]
        sweep_m: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    par::init_thread_pool();
    let (cfg, out) = match resolve_config(&cli) {
        Ok(pair) => pair,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    match dispatch(&cli.command, &cfg, &out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}

/// Load or synthesize the configuration and apply the global overrides.
/// Every error here means the run never had a usable configuration.
fn resolve_config(cli: &Cli) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => match cli.problem.as_str() {
            "1d" => ExperimentConfig::default_1d(),
            "2d" => ExperimentConfig::default_2d(cli.paper_scale),
            other => {
                return Err(Error::Format(format!(
                    "config parse error: unknown problem '{other}' (expected 1d or 2d)"
                )))
            }
        },
    };
    if let Some(seed) = cli.seed {
        cfg.training.seed = seed;
        cfg.experiment.seeds.clear();
    }
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.experiment.output_dir));
    Ok((cfg, out))
}

fn dispatch(command: &Command, cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    match command {
        Command::Fom => cmd_fom(cfg, out),
        Command::Train => cmd_train(cfg, out),
        Command::Pod => cmd_pod(cfg, out),
        Command::Rom { kind, nr, nz, mu } => cmd_rom(cfg, out, kind, *nr, *nz, *mu),
        Command::Sweep => cmd_sweep(cfg, out),
        Command::Bound { kind } => cmd_bound(cfg, out, kind),
        Command::Cost { sweep_m } => cmd_cost(cfg, out, sweep_m),
    }
}

/// Training parameters first, then any test parameters not already covered.
fn all_parameters(cfg: &ExperimentConfig) -> Vec<f64> {
    let mut mus = cfg.problem.train_mu.clone();
    for &mu in &cfg.problem.test_mu {
        if !mus.contains(&mu) {
            mus.push(mu);
        }
    }
    mus
}

fn cmd_fom(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    for mu in all_parameters(cfg) {
        let traj = harness::ensure_fom(cfg, out, mu)?;
        println!(
            "fom mu={mu}: {} ({} states, solve {:.3} s)",
            harness::fom_path(out, mu).display(),
            traj.states.len(),
            traj.wall_seconds
        );
    }
    Ok(())
}

fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    for seed in cfg.seeds() {
        let artifacts = harness::ensure_models(cfg, out, seed)?;
        for (artifact, name) in artifacts.iter().zip(cfg.block_names()) {
            println!(
                "model {name} seed {seed}: {} ({} learnable parameters)",
                harness::model_path(out, name, seed).display(),
                artifact.params.learnable_count()
            );
        }
    }
    Ok(())
}

fn cmd_pod(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let bases = harness::ensure_solution_bases(cfg, out)?;
    for (basis, name) in bases.iter().zip(cfg.block_names()) {
        println!(
            "basis {name}: {} ({} x {})",
            harness::solution_basis_path(out, name).display(),
            basis.nrows(),
            basis.ncols()
        );
    }
    if let Some(&width) = cfg.rom.n_r.iter().max() {
        let basis = harness::ensure_residual_basis(cfg, out, width)?;
        println!(
            "basis residual: {} ({} x {})",
            harness::residual_basis_path(out).display(),
            basis.nrows(),
            basis.ncols()
        );
    }
    Ok(())
}

fn cmd_rom(
    cfg: &ExperimentConfig,
    out: &Path,
    kind: &str,
    nr: Option<usize>,
    nz: Option<usize>,
    mu: Option<f64>,
) -> Result<()> {
    let kind = RomKind::from_name(kind)?;
    let mu = mu
        .or_else(|| cfg.problem.test_mu.first().copied())
        .ok_or_else(|| Error::Invalid("no test parameter configured and none given".into()))?;
    let seed = cfg.seeds()[0];
    let output = harness::run_single(cfg, out, kind, mu, nr, nz, seed)?;
    report_run(out, &output)?;
    Ok(())
}

/// Print the run's summary line and write its result row; hyper-reduced runs
/// also record which residual entries were sampled and which state entries
/// the samples' stencils touch.
fn report_run(out: &Path, output: &RomRunOutput) -> Result<()> {
    let row = &output.row;
    println!(
        "{}: max rel error {:.4e}, fom {:.3} s, rom {:.3} s, speedup {:.2}",
        row.config_id, row.max_rel_error, row.fom_seconds, row.rom_seconds, row.speedup
    );
    let csv = out.join(format!("results-{}.csv", row.config_id));
    io::write_results(&csv, std::slice::from_ref(row))?;
    println!("wrote {}", csv.display());
    if let (Some(samples), Some(closure)) = (&output.samples, &output.closure) {
        let sidecar = out.join(format!("samples-{}.json", row.config_id));
        let body = serde_json::json!({ "samples": samples, "closure": closure });
        std::fs::write(&sidecar, format!("{body}\n"))?;
        println!("wrote {}", sidecar.display());
    }
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let ResultTable { rows, diagnostics } = harness::run_sweep(cfg, out)?;
    for line in &diagnostics {
        eprintln!("{line}");
    }
    let path = out.join("results.csv");
    io::write_results(&path, &rows)?;
    let failed = if diagnostics.is_empty() {
        String::new()
    } else {
        format!(" ({} cells failed)", diagnostics.len())
    };
    println!("wrote {} rows to {}{failed}", rows.len(), path.display());
    Ok(())
}

fn cmd_bound(cfg: &ExperimentConfig, out: &Path, kind: &str) -> Result<()> {
    let variant = BoundVariant::from_name(kind)?;
    let reports = harness::run_bound_checks(cfg, out, variant)?;
    let mut all_hold = true;
    for (seed, report) in &reports {
        let path = out.join(format!("bound-{}-seed{seed}.csv", variant.name()));
        let mut text = String::from("step,admissible,gamma1,gamma2,lhs,rhs,holds\n");
        for step in &report.steps {
            let holds = match step.holds {
                Some(h) => h.to_string(),
                None => String::new(),
            };
            text.push_str(&format!(
                "{},{},{},{},{},{},{holds}\n",
                step.step, step.admissible, step.gamma_1, step.gamma_2, step.lhs, step.rhs
            ));
        }
        std::fs::write(&path, text)?;
        println!(
            "seed {seed}: {}/{} admissible steps, {} violations -> {}",
            report.admissible_steps(),
            report.steps.len(),
            report.violations(),
            path.display()
        );
        all_hold &= report.all_admissible_steps_hold();
    }
    println!(
        "{}",
        if all_hold {
            "bound holds at every admissible step"
        } else {
            "bound violated at one or more steps"
        }
    );
    Ok(())
}

fn cmd_cost(cfg: &ExperimentConfig, out: &Path, sweep_m: &str) -> Result<()> {
    let (lo, hi) = sweep_m
        .split_once(':')
        .and_then(|(a, b)| Some((a.parse::<f64>().ok()?, b.parse::<f64>().ok()?)))
        .ok_or_else(|| {
            Error::Invalid(format!("--sweep-m expects \"lo:hi\", got \"{sweep_m}\""))
        })?;
    let rows = harness::cost_curve_rows(cfg, lo, hi)?;
    let path = out.join("cost.csv");
    harness::write_cost_curves(&path, &rows)?;
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}
