//! Command-line frontend for the plate-oscillator eigenvalue solver.
//!
//! Four subcommands cover the workflow: `solve` locates and polishes every
//! eigenvalue in the configured search window, `converge` runs the
//! mesh-refinement ladder and reports relative errors and empirical orders,
//! `oracle` cross-checks the search against a dense linearization on the
//! coarse mesh, and `mesh-info` prints the sizes of the refinement ladder
//! without solving anything.
//!
//! Exit codes: 0 on success, 2 for configuration or usage errors, 3 when the
//! oracle cross-check finds a mismatch, 4 for runtime failures.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use platevib::config::Config;
use platevib::runner;

const EXIT_CONFIG: u8 = 2;
const EXIT_ORACLE: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

/// Fixed tolerance of the `oracle` subcommand: the dense reference and the
/// contour search resolve the same discrete problem, so they must agree to
/// this relative precision for every eigenvalue in the window.
const ORACLE_TOL: f64 = 1e-6;

#[derive(Parser)]
#[command(
    name = "platevib",
    version,
    about = "Natural frequencies of clamped plates coupled to point oscillators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Locate and polish every eigenvalue in the configured search window.
    Solve(CommonArgs),
    /// Run the mesh-refinement ladder; report relative errors and orders.
    Converge(CommonArgs),
    /// Cross-check the search against a dense reference on the coarse mesh.
    Oracle(CommonArgs),
    /// Print the sizes of every mesh in the refinement ladder.
    MeshInfo(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Configuration file.
    cfg: PathBuf,
    /// Directory for output artifacts (created if missing, default ".").
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override the probe seed from the [sim] section.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Override the probe count from the [sim] section.
    #[arg(long, value_name = "K")]
    probes: Option<usize>,
    /// Override the empty-box indicator threshold from the [sim] section.
    #[arg(long, value_name = "A")]
    alpha: Option<f64>,
    /// Override the box acceptance half-width from the [sim] section.
    #[arg(long, value_name = "B")]
    beta: Option<f64>,
    /// Override the Gauss points per box edge from the [sim] section.
    #[arg(long, value_name = "M")]
    m_per_edge: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Solve(c) | Command::Converge(c) | Command::Oracle(c) | Command::MeshInfo(c) => c,
    };
    let cfg = match load_config(common) {
        Ok(cfg) => cfg,
        Err(err) => {
            eprintln!("config error: {err}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let result = match &cli.command {
        Command::Solve(c) => cmd_solve(&cfg, c),
        Command::Converge(c) => cmd_converge(&cfg, c),
        Command::Oracle(_) => cmd_oracle(&cfg),
        Command::MeshInfo(_) => cmd_mesh_info(&cfg),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

type CmdResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn load_config(c: &CommonArgs) -> Result<Config, Box<dyn std::error::Error>> {
    let mut cfg = Config::load(&c.cfg)?;
    if let Some(seed) = c.seed {
        cfg.sim.seed = seed;
    }
    if let Some(probes) = c.probes {
        cfg.sim.probes = probes;
    }
    if let Some(alpha) = c.alpha {
        cfg.sim.alpha = alpha;
    }
    if let Some(beta) = c.beta {
        cfg.sim.beta = beta;
    }
    if let Some(m) = c.m_per_edge {
        cfg.sim.m_per_edge = m;
    }
    Ok(cfg)
}

fn progress() -> impl FnMut(&str) {
    |line: &str| eprintln!("{line}")
}

fn write_artifact(c: &CommonArgs, name: &str, contents: &str) -> std::io::Result<PathBuf> {
    let dir = c.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

fn cmd_solve(cfg: &Config, c: &CommonArgs) -> CmdResult {
    let outcome = runner::run_solve(cfg, &mut progress())?;
    for (i, ev) in outcome.eigenvalues.iter().enumerate() {
        let flag = if ev.stagnated { "  [unconverged]" } else { "" };
        println!(
            "lambda[{i}] = {:.6}  (residual {:.2e}, {} passes){flag}",
            ev.lambda.re, ev.residual, ev.refine_iterations
        );
    }
    println!(
        "{} eigenvalues on {} cells / {} unknowns; {} boxes, {} factorizations, depth {}",
        outcome.eigenvalues.len(),
        outcome.cells,
        outcome.dofs,
        outcome.boxes_processed,
        outcome.factorizations,
        outcome.deepest_level
    );
    let path = write_artifact(c, "eigenvalues.csv", &runner::solve_csv(&outcome))?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_converge(cfg: &Config, c: &CommonArgs) -> CmdResult {
    let outcome = runner::run_convergence(cfg, &mut progress())?;
    print!("{}", outcome.table.render_text());
    for lvl in &outcome.levels {
        println!(
            "level {}: {} cells, {} unknowns, {} factorizations, {:.1} s",
            lvl.label, lvl.cells, lvl.dofs, lvl.factorizations, lvl.seconds
        );
    }
    let csv = write_artifact(c, "convergence.csv", &outcome.table.to_csv())?;
    let svg = write_artifact(c, "convergence.svg", &runner::convergence_svg(&outcome)?)?;
    let dat = write_artifact(c, "convergence.dat", &runner::convergence_dat(&outcome)?)?;
    println!(
        "wrote {}, {}, {}",
        csv.display(),
        svg.display(),
        dat.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_oracle(cfg: &Config) -> CmdResult {
    let outcome = runner::run_oracle_check(cfg, ORACLE_TOL, &mut progress())?;
    println!("{:>4}  {:>20}  {:>20}", "", "reference", "search");
    let rows = outcome.reference.len().max(outcome.computed.len());
    for i in 0..rows {
        let left = outcome
            .reference
            .get(i)
            .map_or_else(|| "-".to_string(), |v| format!("{v:.9}"));
        let right = outcome
            .computed
            .get(i)
            .map_or_else(|| "-".to_string(), |v| format!("{v:.9}"));
        println!("{:>4}  {left:>20}  {right:>20}", i + 1);
    }
    println!("max relative deviation: {:.3e}", outcome.max_rel_diff);
    if outcome.matched {
        println!("oracle check passed ({} unknowns)", outcome.dofs);
        Ok(ExitCode::SUCCESS)
    } else {
        println!("oracle check FAILED ({} unknowns)", outcome.dofs);
        Ok(ExitCode::from(EXIT_ORACLE))
    }
}

fn cmd_mesh_info(cfg: &Config) -> CmdResult {
    let levels = runner::mesh_info(cfg)?;
    println!(
        "{:>8}  {:>10}  {:>10}  {:>10}",
        "h", "cells", "nodes", "unknowns"
    );
    for lvl in &levels {
        println!(
            "{:>8}  {:>10}  {:>10}  {:>10}",
            lvl.label, lvl.cells, lvl.nodes, lvl.dofs
        );
    }
    Ok(ExitCode::SUCCESS)
}
