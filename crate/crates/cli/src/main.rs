use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use env_logger::Env;
use spacetree_mg_cli::config::flag;
use spacetree_mg_cli::scenario::suite_table;
use spacetree_mg_cli::{csv, run_scenario, run_suite, summary, Settings, SuiteManifest};

#[derive(Parser)]
#[command(name = "spacetree-mg", version, about = "Multigrid benchmarks on tri-section spacetrees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario and write its per-cycle CSV report.
    Solve(SolveArgs),
    /// Cross problems, solvers and operators and classify each combination.
    Suite(SuiteArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// TOML file with default settings; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// sin, jump, checkerboard, circle or circle:<eps>.
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    /// Finest mesh width is 3^-n.
    #[arg(long = "hmin-exp", value_name = "N")]
    hmin_exp: Option<u32>,
    /// regular or dynamic.
    #[arg(long)]
    grid: Option<String>,
    /// add, bpx or mult.
    #[arg(long)]
    solver: Option<String>,
    /// redisc, galerkin or boxmg.
    #[arg(long)]
    ops: Option<String>,
    /// transpose, inject or aggregate.
    #[arg(long)]
    restriction: Option<String>,
    /// jacobi or block:N.
    #[arg(long)]
    smoother: Option<String>,
    #[arg(long)]
    omega: Option<f64>,
    /// uniform or exp.
    #[arg(long)]
    damping: Option<String>,
    #[arg(long, num_args = 2, value_names = ["PRE", "POST"])]
    mu: Option<Vec<usize>>,
    /// sweep or exact.
    #[arg(long)]
    coarse: Option<String>,
    /// Compress stored operators with this tolerance.
    #[arg(long = "eps-mf")]
    eps_mf: Option<f64>,
    #[arg(long = "max-it")]
    max_it: Option<usize>,
    /// Residual reduction that counts as converged.
    #[arg(long)]
    reduction: Option<f64>,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SuiteArgs {
    /// TOML manifest; the built-in one crosses sin, jump and checkerboard
    /// with every solver and operator mode at n = 3 and 4.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Write the table here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl SolveArgs {
    fn overrides(&self) -> Settings {
        Settings {
            problem: self.problem.clone().map(flag),
            d: self.d,
            hmin_exp: self.hmin_exp,
            grid: self.grid.clone().map(flag),
            solver: self.solver.clone().map(flag),
            ops: self.ops.clone().map(flag),
            restriction: self.restriction.clone().map(flag),
            smoother: self.smoother.clone().map(flag),
            omega: self.omega,
            damping: self.damping.clone().map(flag),
            mu: self.mu.as_ref().map(|m| [m[0], m[1]]),
            coarse: self.coarse.clone().map(flag),
            eps_mf: self.eps_mf,
            max_it: self.max_it,
            reduction: self.reduction,
        }
    }
}

fn read(path: &PathBuf) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_or_print(out: Option<&PathBuf>, text: &str) -> Result<(), String> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn solve(args: &SolveArgs) -> Result<(), String> {
    let text = match &args.config {
        Some(path) => read(path)?,
        None => String::new(),
    };
    let base = Settings::from_toml(&text).map_err(|e| with_path(args.config.as_ref(), e))?;
    let cfg = base.merge(args.overrides()).resolve(&text).map_err(|e| with_path(args.config.as_ref(), e))?;
    log::info!("{} d={} n={} grid={} {:?}", cfg.problem, cfg.d, cfg.hmin_exp, cfg.grid, cfg.solver);
    let report = run_scenario(&cfg);
    write_or_print(args.out.as_ref(), &csv(&report))?;
    eprintln!("{}", summary(&report));
    Ok(())
}

fn with_path(path: Option<&PathBuf>, e: impl std::fmt::Display) -> String {
    match path {
        Some(p) => format!("{}: {e}", p.display()),
        None => e.to_string(),
    }
}

fn suite(args: &SuiteArgs) -> Result<(), String> {
    let manifest = match &args.manifest {
        Some(path) => SuiteManifest::from_toml(&read(path)?).map_err(|e| with_path(Some(path), e))?,
        None => SuiteManifest::default(),
    };
    let cells = run_suite(&manifest).map_err(|e| e.to_string())?;
    write_or_print(args.out.as_ref(), &suite_table(&cells))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(Env::new().filter_or("SPACETREE_MG_LOG", "warn")).format_timestamp(None).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(args) => solve(args),
        Command::Suite(args) => suite(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
