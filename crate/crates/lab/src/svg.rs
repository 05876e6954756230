//! Minimal deterministic SVG line plots for the experiment CSVs.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{LabError, LabResult};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
const MARGIN: f64 = 0.05;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// draw a legend (off for per-particle plots)
    pub legend: bool,
}

/// Data extrema widened by 5% of the span on each side.
pub fn padded_range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo > hi {
        return None;
    }
    let span = hi - lo;
    let pad = if span > 0.0 { MARGIN * span } else { 0.5 * lo.abs().max(1.0) };
    Some((lo - pad, hi + pad))
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl LinePlot {
    pub fn x_range(&self) -> Option<(f64, f64)> {
        padded_range(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)))
    }

    pub fn y_range(&self) -> Option<(f64, f64)> {
        padded_range(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)))
    }

    pub fn render(&self) -> LabResult<String> {
        let (Some((x0, x1)), Some((y0, y1))) = (self.x_range(), self.y_range()) else {
            return Err(LabError::MissingInput(format!("plot `{}` has no finite data", self.title)));
        };
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, esc(&self.title));
        let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let xv = x0 + f * (x1 - x0);
            let yv = y0 + f * (y1 - y0);
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                sx(xv),
                TOP + ph + 18.0,
                tick_label(xv)
            );
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, sy(yv) + 4.0, tick_label(yv));
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 12.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            esc(&self.y_label)
        );
        for (i, ser) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let mut d = String::new();
            let mut pen_down = false;
            for &(x, y) in &ser.points {
                if !(x.is_finite() && y.is_finite()) {
                    pen_down = false;
                    continue;
                }
                let _ = write!(d, "{}{:.2},{:.2} ", if pen_down { "L" } else { "M" }, sx(x), sy(y));
                pen_down = true;
            }
            let width = if self.legend { 1.5 } else { 0.7 };
            let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="{width}"/>"#, d.trim_end());
            if self.legend {
                let ly = TOP + 14.0 + 16.0 * i as f64;
                let _ = writeln!(
                    s,
                    r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
                    LEFT + pw - 150.0,
                    LEFT + pw - 128.0,
                    LEFT + pw - 122.0,
                    ly + 4.0,
                    esc(&ser.name)
                );
            }
        }
        s.push_str("</svg>\n");
        Ok(s)
    }
}

/// Header plus numeric rows of one of our CSV files.
fn parse_csv(name: &str, text: &str) -> LabResult<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| LabError::MissingInput(format!("{name}: empty file")))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, l) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let row: Result<Vec<f64>, _> = l.split(',').map(str::parse::<f64>).collect();
        rows.push(row.map_err(|_| LabError::MissingInput(format!("{name}: unparsable row {}", i + 2)))?);
    }
    if rows.is_empty() {
        return Err(LabError::MissingInput(format!("{name}: no data rows")));
    }
    Ok((header, rows))
}

fn column(header: &[String], name: &str, file: &str) -> LabResult<usize> {
    header.iter().position(|h| h == name).ok_or_else(|| LabError::MissingInput(format!("{file}: no column `{name}`")))
}

/// Builds the plot for a CSV we know how to draw, keyed by file name suffix.
pub fn plot_for_csv(name: &str, text: &str) -> LabResult<Option<LinePlot>> {
    let stem = name.trim_end_matches(".csv");
    if name.ends_with("_angular.csv") {
        let (h, rows) = parse_csv(name, text)?;
        let (ct, cp, cth) = (column(&h, "t", name)?, column(&h, "particle", name)?, column(&h, "theta", name)?);
        let n = rows.iter().map(|r| r[cp] as usize).max().unwrap_or(0) + 1;
        let mut series: Vec<Series> = (0..n).map(|i| Series { name: format!("particle {i}"), points: Vec::new() }).collect();
        for r in &rows {
            series[r[cp] as usize].points.push((r[ct], r[cth]));
        }
        return Ok(Some(LinePlot {
            title: format!("{stem}: signed angle"),
            x_label: "t".into(),
            y_label: "theta (rad)".into(),
            series,
            legend: false,
        }));
    }
    if name.ends_with("_energy.csv") || name == "escape_profile.csv" {
        let (h, rows) = parse_csv(name, text)?;
        let (ct, cg) = (column(&h, "t", name)?, column(&h, "gap", name)?);
        let points = rows.iter().map(|r| (r[ct], if r[cg] > 0.0 { r[cg].log10() } else { f64::NAN })).collect();
        return Ok(Some(LinePlot {
            title: format!("{stem}: energy gap"),
            x_label: "t".into(),
            y_label: "log10 gap".into(),
            series: vec![Series { name: "gap".into(), points }],
            legend: false,
        }));
    }
    if name.ends_with("_overlay.csv") {
        let (h, rows) = parse_csv(name, text)?;
        let ct = column(&h, "t", name)?;
        let series = h
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != ct)
            .map(|(i, col)| Series { name: col.clone(), points: rows.iter().map(|r| (r[ct], r[i])).collect() })
            .collect();
        return Ok(Some(LinePlot {
            title: format!("{stem}: normalized energy"),
            x_label: "t".into(),
            y_label: "normalized".into(),
            series,
            legend: true,
        }));
    }
    if name == "rate.csv" {
        let (h, rows) = parse_csv(name, text)?;
        let cp = column(&h, "param", name)?;
        let series = ["fitted_a", "rayleigh_rate"]
            .iter()
            .map(|c| {
                let ci = column(&h, c, name)?;
                Ok(Series { name: c.to_string(), points: rows.iter().map(|r| (r[cp], r[ci])).collect() })
            })
            .collect::<LabResult<Vec<_>>>()?;
        return Ok(Some(LinePlot {
            title: "terminal rate vs parameter".into(),
            x_label: "parameter".into(),
            y_label: "rate".into(),
            series,
            legend: true,
        }));
    }
    Ok(None)
}

/// Renders every plottable CSV among `files` in `dir`; returns `(svg name, contents)`.
///
/// Nothing is written here, so a failing input leaves no partial SVG behind.
pub fn emit_svg_plots(dir: &Path, files: &[String]) -> LabResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for f in files.iter().filter(|f| f.ends_with(".csv")) {
        let text = std::fs::read_to_string(dir.join(f)).map_err(|_| LabError::MissingInput(f.clone()))?;
        if let Some(plot) = plot_for_csv(f, &text)? {
            out.push((format!("{}.svg", f.trim_end_matches(".csv")), plot.render()?));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_have_five_percent_margin() {
        let (lo, hi) = padded_range([0.0, 10.0, 4.0].into_iter()).unwrap();
        assert!((lo + 0.5).abs() < 1e-15 && (hi - 10.5).abs() < 1e-15);
        assert_eq!(padded_range([3.0].into_iter()), Some((1.5, 4.5)));
        assert_eq!(padded_range(std::iter::empty()), None);
    }

    #[test]
    fn empty_energy_csv_is_an_error() {
        assert!(plot_for_csv("run_energy.csv", "t,interaction,entropy,total,gap\n").is_err());
        assert!(plot_for_csv("run_energy.csv", "").is_err());
    }
}
