//! Mesh-refinement tables: eigenvalue tracking, empirical orders, CSV.
//!
//! A [`ConvergenceTable`] collects one eigenvalue series per tracked mode
//! across a ladder of meshes.  From the raw values it derives the two
//! standard diagnostics:
//!
//! * the relative increment `relerr_i = |λ_i − λ_{i−1}| / |λ_i|`, which
//!   estimates the discretisation error on level `i − 1`, and
//! * the empirical order `order_i = log2(|λ_{i−1} − λ_{i−2}| / |λ_i − λ_{i−1}|)`,
//!   the observed convergence rate under mesh halving.
//!
//! Tracking across levels is by nearest-value continuation, protected by a
//! guard radius of 10% of the local spectral gap: when the chosen candidate
//! jumps further than the guard, or when two candidates fall inside it, the
//! entry is flagged as ambiguous rather than silently picked.  Flags travel
//! through the CSV output so downstream tooling can see them.

use std::fmt::Write as _;

use thiserror::Error;

/// Errors from table construction or CSV parsing.
#[derive(Debug, Error)]
pub enum TableError {
    /// A level was pushed with a candidate list of the wrong arity.
    #[error("expected {expected} candidate lists, got {got}")]
    WrongArity { expected: usize, got: usize },
    /// A series received an empty candidate list for a new level.
    #[error("series {series} has no candidates on level {label:?}")]
    NoCandidates { series: usize, label: String },
    /// A candidate or stored value was not finite.
    #[error("non-finite eigenvalue in series {series}")]
    NonFinite { series: usize },
    /// The CSV text did not match the format written by [`ConvergenceTable::to_csv`].
    #[error("malformed table CSV: {0}")]
    BadCsv(String),
}

/// One tracked eigenvalue across the refinement ladder.
#[derive(Debug, Clone)]
pub struct Series {
    /// The tracked value on each level, coarsest first.
    pub values: Vec<f64>,
    /// Whether the continuation onto that level was ambiguous.
    pub ambiguous: Vec<bool>,
}

/// Eigenvalue series over a ladder of meshes, with derived diagnostics.
#[derive(Debug, Clone)]
pub struct ConvergenceTable {
    labels: Vec<String>,
    series: Vec<Series>,
}

impl ConvergenceTable {
    /// Starts a table from the coarsest level.
    ///
    /// `first` holds the tracked eigenvalues on that level, in the order the
    /// columns should appear (ascending, by convention).
    pub fn new(label: impl Into<String>, first: &[f64]) -> Result<Self, TableError> {
        if let Some(k) = first.iter().position(|v| !v.is_finite()) {
            return Err(TableError::NonFinite { series: k });
        }
        Ok(Self {
            labels: vec![label.into()],
            series: first
                .iter()
                .map(|&v| Series { values: vec![v], ambiguous: vec![false] })
                .collect(),
        })
    }

    /// Number of tracked eigenvalue series.
    pub fn num_series(&self) -> usize {
        self.series.len()
    }

    /// Number of levels recorded so far.
    pub fn num_levels(&self) -> usize {
        self.labels.len()
    }

    /// Row labels, coarsest level first.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// The tracked series, in column order.
    pub fn series(&self) -> &[Series] {
        &self.series
    }

    /// Appends one refinement level.
    ///
    /// `candidates[k]` lists the eigenvalues found for series `k` on the new
    /// mesh; the nearest one to the previous value continues the series.  The
    /// continuation is flagged as ambiguous when it jumps beyond the guard
    /// radius (10% of the distance to the nearest other tracked value) or
    /// when a second candidate also lies inside the guard.
    pub fn push_level(
        &mut self,
        label: impl Into<String>,
        candidates: &[Vec<f64>],
    ) -> Result<(), TableError> {
        let label = label.into();
        if candidates.len() != self.series.len() {
            return Err(TableError::WrongArity {
                expected: self.series.len(),
                got: candidates.len(),
            });
        }
        let prev: Vec<f64> = self.series.iter().map(|s| *s.values.last().unwrap()).collect();
        let mut chosen = Vec::with_capacity(prev.len());
        for (k, cands) in candidates.iter().enumerate() {
            if cands.is_empty() {
                return Err(TableError::NoCandidates { series: k, label });
            }
            if cands.iter().any(|v| !v.is_finite()) {
                return Err(TableError::NonFinite { series: k });
            }
            chosen.push(continue_series(prev[k], &prev, k, cands));
        }
        self.labels.push(label);
        for (s, (value, ambiguous)) in self.series.iter_mut().zip(chosen) {
            s.values.push(value);
            s.ambiguous.push(ambiguous);
        }
        Ok(())
    }

    /// Relative increments for one series; `None` where undefined (level 0).
    pub fn relative_errors(&self, k: usize) -> Vec<Option<f64>> {
        relative_errors(&self.series[k].values)
    }

    /// Empirical orders for one series; `None` where undefined (levels 0, 1,
    /// or a vanishing increment).
    pub fn orders(&self, k: usize) -> Vec<Option<f64>> {
        empirical_orders(&self.series[k].values)
    }

    /// Serialises the table as CSV with 12 significant digits.
    ///
    /// Columns per series `k` (1-based in the header): `lambdak`, `relerrk`,
    /// `orderk`, `notek`; the note column is empty or `ambiguous`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("h");
        for k in 1..=self.series.len() {
            let _ = write!(out, ",lambda{k},relerr{k},order{k},note{k}");
        }
        out.push('\n');
        let relerr: Vec<_> = (0..self.series.len()).map(|k| self.relative_errors(k)).collect();
        let orders: Vec<_> = (0..self.series.len()).map(|k| self.orders(k)).collect();
        for (i, label) in self.labels.iter().enumerate() {
            out.push_str(label);
            for (k, s) in self.series.iter().enumerate() {
                let _ = write!(out, ",{}", sig12(s.values[i]));
                match relerr[k][i] {
                    Some(e) => { let _ = write!(out, ",{}", sig12(e)); }
                    None => out.push(','),
                }
                match orders[k][i] {
                    Some(o) => { let _ = write!(out, ",{}", sig12(o)); }
                    None => out.push(','),
                }
                out.push(',');
                if s.ambiguous[i] {
                    out.push_str("ambiguous");
                }
            }
            out.push('\n');
        }
        out
    }

    /// Parses CSV produced by [`ConvergenceTable::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self, TableError> {
        let bad = |m: &str| TableError::BadCsv(m.to_string());
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty input"))?;
        let cols = header.split(',').count();
        if cols < 5 || (cols - 1) % 4 != 0 {
            return Err(bad("header does not have 1 + 4k columns"));
        }
        let num_series = (cols - 1) / 4;
        let mut labels = Vec::new();
        let mut series = vec![Series { values: Vec::new(), ambiguous: Vec::new() }; num_series];
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols {
                return Err(bad("row arity does not match header"));
            }
            labels.push(fields[0].to_string());
            for (k, s) in series.iter_mut().enumerate() {
                let value: f64 = fields[1 + 4 * k]
                    .parse()
                    .map_err(|_| bad("unparseable eigenvalue field"))?;
                s.values.push(value);
                s.ambiguous.push(fields[4 + 4 * k] == "ambiguous");
            }
        }
        if labels.is_empty() {
            return Err(bad("no data rows"));
        }
        Ok(Self { labels, series })
    }

    /// Renders the table as aligned plain text, one row per level.
    ///
    /// Eigenvalues are printed with five decimals and, from the third level
    /// on, the empirical order in parentheses; ambiguous entries carry a
    /// trailing `!`.
    pub fn render_text(&self) -> String {
        let orders: Vec<_> = (0..self.series.len()).map(|k| self.orders(k)).collect();
        let mut cells = vec![vec![String::from("h")]];
        for k in 1..=self.series.len() {
            cells[0].push(format!("lambda_{k} (order)"));
        }
        for (i, label) in self.labels.iter().enumerate() {
            let mut row = vec![label.clone()];
            for (k, s) in self.series.iter().enumerate() {
                let mut cell = format!("{:.5}", s.values[i]);
                if let Some(o) = orders[k][i] {
                    let _ = write!(cell, " ({o:.2})");
                }
                if s.ambiguous[i] {
                    cell.push('!');
                }
                row.push(cell);
            }
            cells.push(row);
        }
        let widths: Vec<usize> = (0..cells[0].len())
            .map(|c| cells.iter().map(|row| row[c].len()).max().unwrap())
            .collect();
        let mut out = String::new();
        for row in &cells {
            for (c, cell) in row.iter().enumerate() {
                if c > 0 {
                    out.push_str("  ");
                }
                let _ = write!(out, "{:>width$}", cell, width = widths[c]);
            }
            out.push('\n');
        }
        out
    }
}

/// Picks the candidate nearest to `prev` and decides whether the choice was
/// ambiguous.  `others` holds the previous values of all series; the guard
/// radius is 10% of the gap from `prev` to the nearest other one.
fn continue_series(prev: f64, others: &[f64], k: usize, cands: &[f64]) -> (f64, bool) {
    let gap = others
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != k)
        .map(|(_, &o)| (o - prev).abs())
        .fold(f64::INFINITY, f64::min);
    let guard = if gap.is_finite() { 0.1 * gap } else { 0.1 * prev.abs() };
    let mut best = cands[0];
    for &c in &cands[1..] {
        if (c - prev).abs() < (best - prev).abs() {
            best = c;
        }
    }
    let inside_guard = cands.iter().filter(|&&c| (c - prev).abs() <= guard).count();
    let ambiguous = (best - prev).abs() > guard || inside_guard > 1;
    (best, ambiguous)
}

/// Relative increments `|v_i − v_{i−1}| / |v_i|`; `None` on level 0.
pub fn relative_errors(values: &[f64]) -> Vec<Option<f64>> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if i == 0 || v == 0.0 {
                None
            } else {
                Some((v - values[i - 1]).abs() / v.abs())
            }
        })
        .collect()
}

/// Empirical orders `log2(Δ_{i−1} / Δ_i)` with `Δ_i = |v_i − v_{i−1}|`;
/// `None` on the first two levels and wherever an increment vanishes.
pub fn empirical_orders(values: &[f64]) -> Vec<Option<f64>> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if i < 2 {
                return None;
            }
            let d_prev = (values[i - 1] - values[i - 2]).abs();
            let d_here = (v - values[i - 1]).abs();
            if d_prev == 0.0 || d_here == 0.0 {
                None
            } else {
                Some((d_prev / d_here).log2())
            }
        })
        .collect()
}

/// Formats a number with 12 significant digits in scientific notation.
fn sig12(x: f64) -> String {
    format!("{x:.11e}")
}
