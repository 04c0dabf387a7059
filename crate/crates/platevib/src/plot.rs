//! Log-log convergence plots: self-contained SVG and gnuplot data files.
//!
//! The solver's refinement study produces, per tracked eigenvalue, a series
//! of (degrees of freedom, relative error) points.  [`svg_loglog`] renders
//! those series into a single SVG with decade grid lines, so the empirical
//! convergence slope can be read off directly; [`gnuplot_dat`] writes the
//! same data as a gnuplot-friendly text file (one indexed block per series)
//! for people who prefer their own plotting pipeline.

use std::fmt::Write as _;

use thiserror::Error;

/// Errors from plot generation.
#[derive(Debug, Error)]
pub enum PlotError {
    /// No series, or a series without points.
    #[error("nothing to plot: {0}")]
    Empty(String),
    /// Log axes need strictly positive, finite coordinates.
    #[error("series {series:?} has a non-positive or non-finite point ({x}, {y})")]
    BadPoint { series: String, x: f64, y: f64 },
}

/// One plotted line: a name for the legend and its data points.
#[derive(Debug, Clone)]
pub struct PlotSeries {
    pub name: String,
    /// (x, y) pairs; both coordinates must be positive and finite.
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 42.0;
const MARGIN_B: f64 = 55.0;
const PALETTE: [&str; 6] =
    ["#1b6ca8", "#c0392b", "#27ae60", "#8e44ad", "#f39c12", "#16a085"];

/// Renders the series on log-log axes as a standalone SVG document.
pub fn svg_loglog(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[PlotSeries],
) -> Result<String, PlotError> {
    if series.is_empty() {
        return Err(PlotError::Empty("no series".into()));
    }
    for s in series {
        if s.points.is_empty() {
            return Err(PlotError::Empty(format!("series {:?} has no points", s.name)));
        }
        for &(x, y) in &s.points {
            if !(x.is_finite() && y.is_finite() && x > 0.0 && y > 0.0) {
                return Err(PlotError::BadPoint { series: s.name.clone(), x, y });
            }
        }
    }

    // Decade-aligned axis ranges covering every point.
    let (x_lo, x_hi) = decade_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y_lo, y_hi) = decade_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let map_x = |x: f64| MARGIN_L + (x.log10() - x_lo as f64) / (x_hi - x_lo) as f64 * plot_w;
    let map_y = |y: f64| {
        HEIGHT - MARGIN_B - (y.log10() - y_lo as f64) / (y_hi - y_lo) as f64 * plot_h
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(svg, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
        MARGIN_L + plot_w / 2.0,
        escape(title)
    );

    // Decade grid and tick labels on both axes.
    for d in x_lo..=x_hi {
        let x = map_x(10f64.powi(d));
        let _ = writeln!(
            svg,
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#ddd\"/>",
            MARGIN_T, HEIGHT - MARGIN_B
        );
        let _ = writeln!(
            svg,
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">1e{d}</text>",
            HEIGHT - MARGIN_B + 18.0
        );
    }
    for d in y_lo..=y_hi {
        let y = map_y(10f64.powi(d));
        let _ = writeln!(
            svg,
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>",
            MARGIN_L,
            WIDTH - MARGIN_R
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">1e{d}</text>",
            MARGIN_L - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{plot_w}\" height=\"{plot_h}\" \
         fill=\"none\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        escape(y_label)
    );

    // Data: one polyline plus circular markers per series.
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = String::new();
        for &(x, y) in &s.points {
            let _ = write!(pts, "{:.2},{:.2} ", map_x(x), map_y(y));
        }
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"/>",
            pts.trim_end()
        );
        for &(x, y) in &s.points {
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>",
                map_x(x),
                map_y(y)
            );
        }
    }

    // Legend in the top-right corner of the plot area.
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = MARGIN_T + 16.0 + 18.0 * i as f64;
        let x = WIDTH - MARGIN_R - 150.0;
        let _ = writeln!(
            svg,
            "<line x1=\"{x:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" \
             stroke=\"{color}\" stroke-width=\"1.6\"/>",
            x + 24.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
            x + 30.0,
            y + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Writes the series as gnuplot data: one block per series, separated by two
/// blank lines so `plot ... index N` selects a series.
pub fn gnuplot_dat(series: &[PlotSeries]) -> Result<String, PlotError> {
    if series.is_empty() {
        return Err(PlotError::Empty("no series".into()));
    }
    let mut out = String::new();
    for (i, s) in series.iter().enumerate() {
        if s.points.is_empty() {
            return Err(PlotError::Empty(format!("series {:?} has no points", s.name)));
        }
        if i > 0 {
            out.push_str("\n\n");
        }
        let _ = writeln!(out, "# {}", s.name);
        for &(x, y) in &s.points {
            let _ = writeln!(out, "{x:.11e} {y:.11e}");
        }
    }
    Ok(out)
}

/// Smallest decade-aligned `(lo, hi)` exponent pair covering the values,
/// widened to at least one decade so degenerate data still gets a box.
fn decade_range(values: impl Iterator<Item = f64>) -> (i32, i32) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for v in values {
        min = min.min(v);
        max = max.max(v);
    }
    let lo = min.log10().floor() as i32;
    let mut hi = max.log10().ceil() as i32;
    if hi == lo {
        hi += 1;
    }
    (lo, hi)
}

/// Escapes the three XML-special characters for text nodes.
fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo() -> Vec<PlotSeries> {
        vec![
            PlotSeries {
                name: "lambda_1".into(),
                points: vec![(400.0, 1e-2), (1600.0, 6e-4), (6400.0, 4e-5)],
            },
            PlotSeries {
                name: "lambda_2 <fine>".into(),
                points: vec![(400.0, 3e-2), (1600.0, 2e-3), (6400.0, 1.2e-4)],
            },
        ]
    }

    #[test]
    fn svg_draws_one_polyline_and_legend_entry_per_series() {
        let svg = svg_loglog("orders", "dofs", "relative error", &demo()).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 6);
        assert!(svg.contains("lambda_2 &lt;fine&gt;"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn decade_ticks_cover_the_data_range() {
        let svg = svg_loglog("t", "x", "y", &demo()).unwrap();
        // x spans 400..6400 so decades 1e2..1e4; y spans 4e-5..3e-2 so 1e-5..1e-1.
        for tick in ["1e2", "1e3", "1e4", "1e-5", "1e-1"] {
            assert!(svg.contains(&format!(">{tick}<")), "missing tick {tick}");
        }
    }

    /// Decreasing error must move points rightward (larger x pixel) and
    /// downward (larger y pixel, since SVG y grows toward the bottom).
    #[test]
    fn log_mapping_is_monotone_in_both_axes() {
        let svg = svg_loglog("t", "x", "y", &demo()[..1]).unwrap();
        let start = svg.find("points=\"").unwrap() + 8;
        let end = start + svg[start..].find('"').unwrap();
        let coords: Vec<(f64, f64)> = svg[start..end]
            .split_whitespace()
            .map(|p| {
                let (a, b) = p.split_once(',').unwrap();
                (a.parse().unwrap(), b.parse().unwrap())
            })
            .collect();
        assert_eq!(coords.len(), 3);
        for w in coords.windows(2) {
            assert!(w[1].0 > w[0].0, "x pixels must increase");
            assert!(w[1].1 > w[0].1, "y pixels must increase as the error falls");
        }
    }

    #[test]
    fn gnuplot_output_has_indexed_blocks() {
        let dat = gnuplot_dat(&demo()).unwrap();
        assert_eq!(dat.matches("# lambda").count(), 2);
        assert!(dat.contains("\n\n\n# "), "blocks must be separated by two blank lines");
        assert!(dat.contains("4.00000000000e2 1.00000000000e-2"));
    }

    #[test]
    fn rejects_empty_and_nonpositive_input() {
        assert!(matches!(svg_loglog("t", "x", "y", &[]), Err(PlotError::Empty(_))));
        let bad = vec![PlotSeries { name: "s".into(), points: vec![(100.0, 0.0)] }];
        assert!(matches!(svg_loglog("t", "x", "y", &bad), Err(PlotError::BadPoint { .. })));
        assert!(matches!(gnuplot_dat(&[]), Err(PlotError::Empty(_))));
    }
}
