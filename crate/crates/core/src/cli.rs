//! Command-line surface. Exit codes: 0 success, 1 invalid input or
//! configuration, 2 numerical failure (solver non-convergence or blow-up).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::diagnostics::{exponents, ENTROPY_ALPHA_TOL};
use crate::io::config::{apply_overrides, parse_config, RunConfig};
use crate::io::csv::{load_snapshots, DirSink};
use crate::model::make_initial_state;
use crate::stepper::{run_from, RunError, Trajectory};
use crate::sweep::{alpha_sweep, epsilon_sweep, SweepError, SweepPlan, SweepVariable};
use crate::weakform::{residual_row, standard_test_functions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;

/// Name of the configuration copy written into every run directory.
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Debug, Parser)]
#[command(name = "ksns", version, about = "Chemotaxis-fluid fertilization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Configuration file (`key = value` lines).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set alpha=0.25`; repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one simulation, writing diagnostics.csv and snapshots.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory (overrides `output_dir`).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Evaluate weak-form residuals on a stored run directory.
    Check {
        /// Run directory holding snapshot files.
        dir: PathBuf,
        /// Model settings; defaults to the run's own config.txt.
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Convergence study in epsilon.
    SweepEps {
        #[command(flatten)]
        config: ConfigArgs,
        /// Non-increasing epsilon values.
        #[arg(long, value_delimiter = ',', default_value = "0.4,0.2,0.1,0.05")]
        eps: Vec<f64>,
        /// Comparison time (default T/2).
        #[arg(long)]
        compare_time: Option<f64>,
        /// Write the table and per-run outputs here.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Run one simulation at a time.
        #[arg(long)]
        serial: bool,
    },
    /// Stability table across alpha values.
    SweepAlpha {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.3333333333333333,0.5,1")]
        alpha: Vec<f64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        serial: bool,
    },
    /// Print the exponent set for a given alpha.
    Info {
        #[arg(long, allow_hyphen_values = true)]
        alpha: f64,
    },
}

struct Failure {
    code: i32,
    message: String,
}

fn invalid(message: impl std::fmt::Display) -> Failure {
    Failure { code: EXIT_INVALID, message: message.to_string() }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        let code = if e.is_solver_failure() { EXIT_SOLVER } else { EXIT_INVALID };
        Failure { code, message: e.to_string() }
    }
}

impl From<SweepError> for Failure {
    fn from(e: SweepError) -> Self {
        let code = if e.is_solver_failure() { EXIT_SOLVER } else { EXIT_INVALID };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        invalid(e)
    }
}

fn load_config(args: &ConfigArgs, fallback: Option<&Path>) -> Result<RunConfig, Failure> {
    let path = args.config.as_deref().or(fallback.filter(|p| p.exists()));
    let base = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
            parse_config(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    apply_overrides(&base, &args.set).map_err(invalid)
}

fn cmd_run(config: &ConfigArgs, output: Option<PathBuf>, out: &mut dyn Write) -> Result<(), Failure> {
    let mut cfg = load_config(config, None)?;
    if let Some(o) = output {
        cfg.output_dir = o;
    }
    let grid = cfg.grid().map_err(invalid)?;
    let mut solver = cfg.solver(grid).map_err(invalid)?;
    let params = cfg.params(grid);
    let initial = make_initial_state(grid, cfg.initial_preset()).map_err(invalid)?;
    let mut sink = DirSink::create(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join(CONFIG_FILE), cfg.serialize())?;
    let traj = run_from(&params, &cfg.scheme(), initial, &mut solver, &cfg.control(), &mut sink)?;
    let snapshots = sink.finish()?;
    let last = traj.records.last().expect("initial record");
    writeln!(
        out,
        "completed t = {} in {} steps; {} snapshots in {}; energy {:e}, max |div u| {:e}",
        last.t,
        traj.records.len() - 1,
        snapshots,
        cfg.output_dir.display(),
        last.energy,
        last.div_u_max
    )?;
    Ok(())
}

fn cmd_check(dir: &Path, config: &ConfigArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let cfg = load_config(config, Some(&dir.join(CONFIG_FILE)))?;
    let snapshots = load_snapshots(dir).map_err(|e| invalid(format!("{}: {e}", dir.display())))?;
    let grid = *snapshots.first().ok_or_else(|| invalid(format!("no snapshots in {}", dir.display())))?.grid();
    if snapshots.iter().any(|s| *s.grid() != grid) {
        return Err(invalid("snapshots use different grids"));
    }
    let cfg_grid = cfg.grid().map_err(invalid)?;
    if cfg_grid != grid {
        return Err(invalid("configured grid does not match the stored snapshots"));
    }
    let params = cfg.params(grid);
    let traj = Trajectory { grid, snapshots, records: vec![], ledgers: vec![] };
    let rows = standard_test_functions(&grid)
        .into_iter()
        .map(|(name, phi, psi)| residual_row(&traj, &params, &phi, &psi).map(|r| (name, r)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(invalid)?;
    writeln!(out, "test_function,n,c,m,u")?;
    for (name, r) in rows {
        writeln!(out, "{name},{:e},{:e},{:e},{:e}", r.n, r.c, r.m, r.u)?;
    }
    Ok(())
}

fn write_table(output: Option<&Path>, name: &str, table: &str, out: &mut dyn Write) -> Result<(), Failure> {
    if let Some(dir) = output {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(name), table)?;
    }
    out.write_all(table.as_bytes())?;
    Ok(())
}

fn sweep_setup(
    config: &ConfigArgs,
    variable: SweepVariable,
    values: Vec<f64>,
    output: Option<PathBuf>,
    serial: bool,
) -> Result<(SweepPlan, crate::fluid::PoissonSolver), Failure> {
    let cfg = load_config(config, None)?;
    let grid = cfg.grid().map_err(invalid)?;
    let solver = cfg.solver(grid).map_err(invalid)?;
    let mut plan = SweepPlan::new(cfg, variable, values);
    plan.output_dir = output;
    plan.serial = serial;
    Ok((plan, solver))
}

fn cmd_info(alpha: f64, out: &mut dyn Write) -> Result<(), Failure> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(invalid(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    let e = exponents(alpha);
    writeln!(out, "alpha   = {}", e.alpha)?;
    writeln!(out, "p       = {}", e.p)?;
    writeln!(out, "gamma0  = {}", e.gamma0)?;
    writeln!(out, "r_flux  = {}", e.r_flux)?;
    writeln!(out, "r_nu    = {}", e.r_nu)?;
    writeln!(out, "r_bulk  = {}", e.r_bulk)?;
    writeln!(out, "2p-4a   = {}", e.gn_target())?;
    if e.entropy_branch() {
        writeln!(out, "branch: entropy (p = 1), energy uses the integral of n ln n")?;
    } else if (e.p - 1.0).abs() < 1e-6 {
        writeln!(
            out,
            "branch: power with p ~ 1; the entropy branch needs |alpha - 1/12| <= {ENTROPY_ALPHA_TOL:e} (use alpha = 1/12)"
        )?;
    } else {
        writeln!(out, "branch: power, energy uses (1/p) times the integral of n^p")?;
    }
    if alpha == 0.0 {
        writeln!(out, "note: alpha = 0 lies outside the existence theory")?;
    }
    Ok(())
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, output } => cmd_run(&config, output, out),
        Command::Check { dir, config } => cmd_check(&dir, &config, out),
        Command::SweepEps { config, eps, compare_time, output, serial } => {
            let (mut plan, solver) = sweep_setup(&config, SweepVariable::Epsilon, eps, output, serial)?;
            if let Some(t) = compare_time {
                plan.compare_time = t;
            }
            let table = epsilon_sweep(&plan, &solver)?;
            write_table(plan.output_dir.as_deref(), "epsilon_sweep.csv", &table.to_csv(), out)?;
            for c in &table.columns {
                writeln!(out, "# {}: cauchy = {} ({} inversions)", c.norm.name(), c.cauchy, c.inversions)?;
            }
            Ok(())
        }
        Command::SweepAlpha { config, alpha, output, serial } => {
            let (plan, solver) = sweep_setup(&config, SweepVariable::Alpha, alpha, output, serial)?;
            let table = alpha_sweep(&plan, &solver)?;
            write_table(plan.output_dir.as_deref(), "alpha_sweep.csv", &table.to_csv(), out)
        }
        Command::Info { alpha } => cmd_info(alpha, out),
    }
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code. Normal output goes to `out`, errors to
/// stderr.
pub fn cli_with_output<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    cli_with_output(argv, &mut lock)
}
