//! End-to-end drivers behind the command-line interface.
//!
//! Four entry points, all driven by a parsed [`Config`]:
//!
//! * [`run_solve`] — build the mesh, assemble the operator, sweep the whole
//!   search window with the subdivision search (splitting it at oscillator
//!   poles first), then polish every accepted center by inverse iteration.
//! * [`run_convergence`] — the mesh-refinement study.  The coarsest level is
//!   a full-window sweep; each finer level re-runs the search in a tight box
//!   around every tracked eigenvalue, whose width shrinks with the observed
//!   increments, so the cost per level stays a handful of factorizations per
//!   eigenvalue instead of a full sweep.
//! * [`run_oracle_check`] — on a mesh small enough for dense linear algebra,
//!   compare the search result against the linearized pencil solved by a
//!   dense eigensolver.
//! * [`mesh_info`] — sizes of every mesh in the ladder, without solving.
//!
//! Progress is streamed through a caller-supplied callback so the drivers
//! stay usable from tests (pass a closure that drops the lines).

use std::time::Instant;

use num_complex::Complex64;
use thiserror::Error;

use crate::assembly::{assemble, build_dof_map, AssembledSystem, AssemblyError, DofMap};
use crate::config::Config;
use crate::mesh::{build_mesh, refine, MeshError, RectMesh};
use crate::nep::OperatorFunction;
use crate::oracle::{self, OracleError};
use crate::plot::{gnuplot_dat, svg_loglog, PlotError, PlotSeries};
use crate::sim::{find_eigenvalues, refine_eigenpair, SearchBox, SimConfig, SimError};
use crate::table::{ConvergenceTable, TableError};

/// Relative margin kept clear on both sides of an oscillator pole when the
/// search window is split around it.
pub const POLE_MARGIN: f64 = 1e-6;
/// Re-run limit for a tight tracking box that came back empty; each retry
/// widens the box fourfold.
const TRACK_RETRIES: usize = 3;
/// Refined values closer than this (relatively) are the same eigenvalue
/// found twice and collapse to one.
const DEDUP_REL: f64 = 1e-8;

/// Callback receiving one progress line at a time.
pub type Progress<'a> = &'a mut dyn FnMut(&str);

/// Errors from the end-to-end drivers.
#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Plot(#[from] PlotError),
    /// The full-window sweep found nothing to track.
    #[error("no eigenvalues in the search window [{lo}, {hi}]")]
    EmptyWindow { lo: f64, hi: f64 },
    /// A tracked eigenvalue could not be re-found on a finer mesh.
    #[error("lost eigenvalue {value} of series {series} on level {label}")]
    TrackingLost { series: usize, value: f64, label: String },
}

/// One eigenvalue from a full solve: the search box that produced it and the
/// polished value with its quality numbers.
#[derive(Debug, Clone)]
pub struct SolvedEigenvalue {
    /// Polished eigenvalue.
    pub lambda: Complex64,
    /// Box center the search produced, before polishing.
    pub center: Complex64,
    pub box_half_width: f64,
    pub indicator: f64,
    /// Scaled residual of the polished pair.
    pub residual: f64,
    pub refine_iterations: usize,
    /// The polish stopped above its residual target; treat with suspicion.
    pub stagnated: bool,
}

/// Result of [`run_solve`].
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub cells: usize,
    pub dofs: usize,
    pub eigenvalues: Vec<SolvedEigenvalue>,
    pub boxes_processed: usize,
    pub factorizations: usize,
    pub cache_hits: usize,
    pub deepest_level: usize,
}

/// Builds mesh, degree-of-freedom map and assembled matrices for one level.
fn build_system(
    cfg: &Config,
    mesh: RectMesh,
) -> Result<(RectMesh, DofMap, AssembledSystem), RunnerError> {
    let dof_map = build_dof_map(&mesh);
    let sys = assemble(&mesh, &cfg.problem, &dof_map)?;
    Ok((mesh, dof_map, sys))
}

fn base_mesh(cfg: &Config) -> Result<RectMesh, RunnerError> {
    Ok(build_mesh(&cfg.domain, cfg.h0, &cfg.problem.attachment_points())?)
}

/// Splits `[lo, hi]` at every pole strictly inside it, keeping a relative
/// margin of [`POLE_MARGIN`] clear on both sides.  Returns the sub-intervals
/// that remain non-empty, in ascending order.
pub fn split_at_poles(lo: f64, hi: f64, poles: &[f64]) -> Vec<(f64, f64)> {
    let mut inside: Vec<f64> = poles.iter().copied().filter(|&s| lo < s && s < hi).collect();
    inside.sort_by(f64::total_cmp);
    inside.dedup();
    let mut intervals = Vec::new();
    let mut left = lo;
    for s in inside {
        let margin = POLE_MARGIN * s.abs();
        if s - margin > left {
            intervals.push((left, s - margin));
        }
        left = s + margin;
    }
    if hi > left {
        intervals.push((left, hi));
    }
    intervals
}

/// Sweeps one window (already split at poles) and returns the merged box
/// centers, sorted by real part, together with the effort counters folded
/// into `outcome`.
fn sweep_window(
    op: &OperatorFunction,
    lo: f64,
    hi: f64,
    im_half: f64,
    sim: &SimConfig,
    outcome: &mut SolveOutcome,
    progress: Progress,
) -> Result<Vec<crate::sim::Eigenvalue>, RunnerError> {
    let mut found = Vec::new();
    for (a, b) in split_at_poles(lo, hi, &op.poles()) {
        let report = find_eigenvalues(op, SearchBox::around_real_interval(a, b, im_half)?, sim)?;
        progress(&format!(
            "  window [{a:.6}, {b:.6}]: {} centers, {} boxes, {} factorizations",
            report.eigenvalues.len(),
            report.boxes_processed,
            report.factorizations
        ));
        outcome.boxes_processed += report.boxes_processed;
        outcome.factorizations += report.factorizations;
        outcome.cache_hits += report.cache_hits;
        outcome.deepest_level = outcome.deepest_level.max(report.deepest_level);
        found.extend(report.eigenvalues);
    }
    found.sort_by(|p, q| p.lambda.re.total_cmp(&q.lambda.re));
    Ok(found)
}

/// Polishes each center and drops duplicates that converged to the same
/// eigenvalue.
fn polish_centers(
    op: &OperatorFunction,
    centers: &[crate::sim::Eigenvalue],
    seed: u64,
    progress: Progress,
) -> Result<Vec<SolvedEigenvalue>, RunnerError> {
    let mut solved: Vec<SolvedEigenvalue> = Vec::new();
    for (i, c) in centers.iter().enumerate() {
        let pair = refine_eigenpair(op, c.lambda, seed.wrapping_add(i as u64 + 1))?;
        if pair.stagnated {
            progress(&format!(
                "  warning: polish stagnated at residual {:.2e} near {:.6}",
                pair.residual, c.lambda.re
            ));
        }
        let duplicate = solved.iter().any(|s| {
            (s.lambda - pair.lambda).norm() <= DEDUP_REL * pair.lambda.norm().max(1.0)
        });
        if duplicate {
            progress(&format!(
                "  note: centers at {:.9} collapsed to an already-polished eigenvalue",
                c.lambda.re
            ));
            continue;
        }
        solved.push(SolvedEigenvalue {
            lambda: pair.lambda,
            center: c.lambda,
            box_half_width: c.box_half_width,
            indicator: c.indicator,
            residual: pair.residual,
            refine_iterations: pair.iterations,
            stagnated: pair.stagnated,
        });
    }
    solved.sort_by(|p, q| p.lambda.re.total_cmp(&q.lambda.re));
    Ok(solved)
}

/// Full-window eigenvalue solve on the coarsest mesh of the configuration.
pub fn run_solve(cfg: &Config, progress: Progress) -> Result<SolveOutcome, RunnerError> {
    let (mesh, dof_map, sys) = build_system(cfg, base_mesh(cfg)?)?;
    let mut outcome = SolveOutcome {
        cells: mesh.cell_count(),
        dofs: sys.n_free(),
        eigenvalues: Vec::new(),
        boxes_processed: 0,
        factorizations: 0,
        cache_hits: 0,
        deepest_level: 0,
    };
    progress(&format!("mesh: {} cells, {} unknowns", outcome.cells, outcome.dofs));
    let op = OperatorFunction::new(&mesh, &dof_map, sys);
    let centers = sweep_window(
        &op,
        cfg.search.re_min,
        cfg.search.re_max,
        cfg.search.im_half,
        &cfg.sim,
        &mut outcome,
        progress,
    )?;
    if centers.is_empty() {
        return Err(RunnerError::EmptyWindow {
            lo: cfg.search.re_min,
            hi: cfg.search.re_max,
        });
    }
    outcome.eigenvalues = polish_centers(&op, &centers, cfg.sim.seed, progress)?;
    for e in &outcome.eigenvalues {
        progress(&format!(
            "  eigenvalue {:.9} (residual {:.2e}, {} passes)",
            e.lambda.re, e.residual, e.refine_iterations
        ));
    }
    Ok(outcome)
}

/// CSV for [`SolveOutcome`], one row per eigenvalue, 12 significant digits.
pub fn solve_csv(outcome: &SolveOutcome) -> String {
    let mut out =
        String::from("lambda_re,lambda_im,box_half_width,indicator,residual,iterations,stagnated\n");
    for e in &outcome.eigenvalues {
        out.push_str(&format!(
            "{:.11e},{:.11e},{:.11e},{:.11e},{:.11e},{},{}\n",
            e.lambda.re, e.lambda.im, e.box_half_width, e.indicator, e.residual,
            e.refine_iterations, e.stagnated
        ));
    }
    out
}

/// Per-level effort bookkeeping of a convergence run.
#[derive(Debug, Clone)]
pub struct LevelStats {
    pub label: String,
    pub cells: usize,
    pub dofs: usize,
    pub factorizations: usize,
    pub seconds: f64,
}

/// Result of [`run_convergence`].
#[derive(Debug, Clone)]
pub struct ConvergenceOutcome {
    pub table: ConvergenceTable,
    /// Free unknowns per level, aligned with the table rows.
    pub dofs_per_level: Vec<usize>,
    pub levels: Vec<LevelStats>,
}

/// Tracking state of one eigenvalue series between levels.
struct Tracked {
    value: f64,
    /// Last inter-level increment, if one has been observed.
    delta: Option<f64>,
}

/// Half-width of the tracking box around a previous value.  Before any
/// increment is known a fixed 1% relative window is used; afterwards the
/// window follows the increments (which shrink with the convergence order)
/// with a generous factor, floored so rounding-level increments still leave
/// a searchable box.
fn tracking_half_width(t: &Tracked, level: usize) -> f64 {
    let scale = t.value.abs();
    match (level, t.delta) {
        (1, _) | (_, None) => 1e-2 * scale,
        (_, Some(d)) => (3.0 * d).max(2.5e-4 * scale),
    }
}

/// Re-finds one tracked eigenvalue on the current level's operator inside a
/// tight box, widening on misses, and returns the polished candidates.
fn track_one(
    op: &OperatorFunction,
    cfg: &Config,
    t: &Tracked,
    level: usize,
    series: usize,
    label: &str,
    stats: &mut LevelStats,
    progress: Progress,
) -> Result<Vec<f64>, RunnerError> {
    let mut half_w = tracking_half_width(t, level);
    for attempt in 0..=TRACK_RETRIES {
        // Clip the box so no pole sits inside it; the tracked value keeps
        // its side of the pole.
        let mut lo = t.value - half_w;
        let mut hi = t.value + half_w;
        for &s in &op.poles() {
            let margin = POLE_MARGIN * s.abs();
            if lo < s && s < hi {
                if t.value < s {
                    hi = hi.min(s - margin);
                } else {
                    lo = lo.max(s + margin);
                }
            }
        }
        if !(lo < hi) {
            break;
        }
        // Acceptance at the root box: the indicator decides presence or
        // absence once, and the polish supplies the digits.  Subdividing
        // further buys nothing here (the box is already far smaller than the
        // local gap) but would cost several factorizations per ring, which
        // dominates everything on fine meshes.  The small slack keeps the
        // root under the threshold despite rounding in the box arithmetic.
        let sim = SimConfig {
            m_per_edge: cfg.conv_m_per_edge,
            beta: half_w * 1.001,
            probes: 1,
            ..cfg.sim.clone()
        };
        let search = SearchBox::new(lo, hi, -half_w, half_w)?;
        let report = find_eigenvalues(op, search, &sim)?;
        stats.factorizations += report.factorizations;
        if !report.eigenvalues.is_empty() {
            let mut values = Vec::new();
            for (i, c) in report.eigenvalues.iter().enumerate() {
                let pair = refine_eigenpair(
                    op,
                    c.lambda,
                    cfg.sim.seed.wrapping_add((level * 1000 + series * 10 + i) as u64),
                )?;
                if pair.stagnated {
                    // Keep the polished value anyway: it is still the best
                    // available estimate, and a genuinely bad one trips the
                    // tracking guard instead of silently repeating the
                    // previous level.
                    progress(&format!(
                        "  warning: series {series} polish stagnated on level {label} \
                         (residual {:.2e})",
                        pair.residual
                    ));
                }
                values.push(pair.lambda.re);
            }
            values.sort_by(f64::total_cmp);
            values.dedup_by(|a, b| (*a - *b).abs() <= DEDUP_REL * a.abs().max(1.0));
            return Ok(values);
        }
        progress(&format!(
            "  series {series}: empty box of half-width {half_w:.3e} on level {label} \
             (attempt {attempt}), widening"
        ));
        half_w *= 4.0;
    }
    Err(RunnerError::TrackingLost {
        series,
        value: t.value,
        label: label.to_string(),
    })
}

/// Mesh-refinement study across `cfg.levels` nested meshes.
pub fn run_convergence(cfg: &Config, progress: Progress) -> Result<ConvergenceOutcome, RunnerError> {
    // Coarsest level: full-window sweep, exactly like `run_solve`.
    let started = Instant::now();
    let label0 = cfg.h_label(0);
    progress(&format!("level {label0}: full search window"));
    let solve = run_solve(cfg, progress)?;
    let mut tracked: Vec<Tracked> = solve
        .eigenvalues
        .iter()
        .map(|e| Tracked { value: e.lambda.re, delta: None })
        .collect();
    let mut table =
        ConvergenceTable::new(&label0, &tracked.iter().map(|t| t.value).collect::<Vec<_>>())?;
    let mut outcome = ConvergenceOutcome {
        table: table.clone(),
        dofs_per_level: vec![solve.dofs],
        levels: vec![LevelStats {
            label: label0,
            cells: solve.cells,
            dofs: solve.dofs,
            factorizations: solve.factorizations,
            seconds: started.elapsed().as_secs_f64(),
        }],
    };

    let mut mesh = base_mesh(cfg)?;
    for level in 1..cfg.levels {
        let started = Instant::now();
        let label = cfg.h_label(level);
        mesh = refine(&mesh);
        let (mesh_ref, dof_map, sys) = build_system(cfg, mesh)?;
        let mut stats = LevelStats {
            label: label.clone(),
            cells: mesh_ref.cell_count(),
            dofs: sys.n_free(),
            factorizations: 0,
            seconds: 0.0,
        };
        progress(&format!(
            "level {label}: {} cells, {} unknowns",
            stats.cells, stats.dofs
        ));
        let op = OperatorFunction::new(&mesh_ref, &dof_map, sys);
        let mut candidates = Vec::with_capacity(tracked.len());
        for (k, t) in tracked.iter().enumerate() {
            candidates.push(track_one(&op, cfg, t, level, k, &label, &mut stats, progress)?);
        }
        table.push_level(&label, &candidates)?;
        for (k, t) in tracked.iter_mut().enumerate() {
            let new = *table.series()[k].values.last().unwrap();
            if table.series()[k].ambiguous.last() == Some(&true) {
                progress(&format!(
                    "  warning: series {k} continuation ambiguous on level {label}"
                ));
            }
            t.delta = Some((new - t.value).abs());
            t.value = new;
            progress(&format!("  series {k}: {new:.9}"));
        }
        stats.seconds = started.elapsed().as_secs_f64();
        outcome.dofs_per_level.push(stats.dofs);
        outcome.levels.push(stats);
        mesh = mesh_ref;
    }
    outcome.table = table;
    Ok(outcome)
}

/// Plot series for the convergence study: per tracked eigenvalue, relative
/// increment against unknowns.  Levels without a defined (positive) error
/// are skipped.
pub fn convergence_plot_series(outcome: &ConvergenceOutcome) -> Vec<PlotSeries> {
    (0..outcome.table.num_series())
        .map(|k| PlotSeries {
            name: format!("lambda_{}", k + 1),
            points: outcome
                .table
                .relative_errors(k)
                .iter()
                .zip(&outcome.dofs_per_level)
                .filter_map(|(e, &dofs)| match e {
                    Some(e) if *e > 0.0 => Some((dofs as f64, *e)),
                    _ => None,
                })
                .collect(),
        })
        .filter(|s| !s.points.is_empty())
        .collect()
}

/// SVG convergence plot (relative increment vs unknowns, log-log).
pub fn convergence_svg(outcome: &ConvergenceOutcome) -> Result<String, RunnerError> {
    Ok(svg_loglog(
        "Eigenvalue convergence under mesh refinement",
        "free unknowns",
        "relative increment",
        &convergence_plot_series(outcome),
    )?)
}

/// Gnuplot data file matching [`convergence_svg`].
pub fn convergence_dat(outcome: &ConvergenceOutcome) -> Result<String, RunnerError> {
    Ok(gnuplot_dat(&convergence_plot_series(outcome))?)
}

/// Result of [`run_oracle_check`].
#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub dofs: usize,
    /// Dense reference eigenvalues in the window, ascending.
    pub reference: Vec<f64>,
    /// Polished search eigenvalues, ascending.
    pub computed: Vec<f64>,
    /// Largest pairwise relative difference; infinite when the counts differ.
    pub max_rel_diff: f64,
    /// Counts match and every pair agrees within the tolerance.
    pub matched: bool,
}

/// Cross-checks the subdivision search against the dense linearization.
///
/// Only meshes whose pencil fits under the dense cap are accepted; the
/// caller decides what to do with a mismatch (the CLI exits nonzero).
pub fn run_oracle_check(
    cfg: &Config,
    tol_rel: f64,
    progress: Progress,
) -> Result<OracleOutcome, RunnerError> {
    let (mesh, dof_map, sys) = build_system(cfg, base_mesh(cfg)?)?;
    progress(&format!(
        "mesh: {} cells, {} unknowns; dense reference first",
        mesh.cell_count(),
        sys.n_free()
    ));
    let reference = oracle::reference_eigenvalues(&sys, cfg.search.re_min, cfg.search.re_max)?;
    progress(&format!("reference found {} eigenvalues", reference.len()));
    let dofs = sys.n_free();
    let op = OperatorFunction::new(&mesh, &dof_map, sys);
    let mut scratch = SolveOutcome {
        cells: mesh.cell_count(),
        dofs,
        eigenvalues: Vec::new(),
        boxes_processed: 0,
        factorizations: 0,
        cache_hits: 0,
        deepest_level: 0,
    };
    let centers = sweep_window(
        &op,
        cfg.search.re_min,
        cfg.search.re_max,
        cfg.search.im_half,
        &cfg.sim,
        &mut scratch,
        progress,
    )?;
    let computed: Vec<f64> = polish_centers(&op, &centers, cfg.sim.seed, progress)?
        .iter()
        .map(|e| e.lambda.re)
        .collect();
    let mut max_rel_diff = 0.0f64;
    let mut matched = computed.len() == reference.len();
    if matched {
        for (c, r) in computed.iter().zip(&reference) {
            let rel = (c - r).abs() / r.abs().max(1.0);
            max_rel_diff = max_rel_diff.max(rel);
        }
        matched = max_rel_diff <= tol_rel;
    } else {
        max_rel_diff = f64::INFINITY;
    }
    progress(&format!(
        "search found {} eigenvalues; max relative difference {max_rel_diff:.3e}",
        computed.len()
    ));
    Ok(OracleOutcome { dofs, reference, computed, max_rel_diff, matched })
}

/// Size of one mesh in the refinement ladder.
#[derive(Debug, Clone)]
pub struct MeshLevelInfo {
    pub label: String,
    pub cells: usize,
    pub nodes: usize,
    pub dofs: usize,
}

/// Sizes of every mesh in the ladder, without assembling or solving.
pub fn mesh_info(cfg: &Config) -> Result<Vec<MeshLevelInfo>, RunnerError> {
    let mut mesh = base_mesh(cfg)?;
    let mut infos = Vec::with_capacity(cfg.levels);
    for level in 0..cfg.levels {
        if level > 0 {
            mesh = refine(&mesh);
        }
        infos.push(MeshLevelInfo {
            label: cfg.h_label(level),
            cells: mesh.cell_count(),
            nodes: mesh.node_count(),
            dofs: build_dof_map(&mesh).n_free(),
        });
    }
    Ok(infos)
}
