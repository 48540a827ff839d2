//! Report serialization: CSV rows, JSON manifests and a log-log SVG plot.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::experiments::{StabilityReport, StabilityRow};

pub const CSV_COLUMNS: [&str; 6] = ["s", "lp_gap", "lp_gap_pos", "sup_diff", "bound", "margin"];

pub fn write_rows_csv(rows: &[StabilityRow], path: impl AsRef<Path>) -> Result<()> {
    write_csv(rows, path)
}

/// One CSV line per record, header from the field names.
pub fn write_csv<T: Serialize>(rows: &[T], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_csv(path: impl AsRef<Path>) -> Result<Vec<StabilityRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<StabilityRow>, _>>()?;
    Ok(rows)
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

/// Log-log plot of `sup_diff` and `bound` against `lp_gap`, skipping rows
/// with a non-positive coordinate. `None` when fewer than two rows are
/// plottable.
pub fn stability_svg(report: &StabilityReport) -> Option<String> {
    let pts: Vec<(f64, f64, f64)> = report
        .rows
        .iter()
        .filter(|r| r.lp_gap > 0.0 && r.sup_diff > 0.0 && r.bound > 0.0 && r.bound.is_finite())
        .map(|r| (r.lp_gap.log10(), r.sup_diff.log10(), r.bound.log10()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let (w, h, pad) = (480.0, 360.0, 50.0);
    let x_lo = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x_hi = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let y_lo = pts.iter().map(|p| p.1.min(p.2)).fold(f64::INFINITY, f64::min);
    let y_hi = pts.iter().map(|p| p.1.max(p.2)).fold(f64::NEG_INFINITY, f64::max);
    let sx = |x: f64| pad + (x - x_lo) / (x_hi - x_lo).max(1e-12) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y_lo) / (y_hi - y_lo).max(1e-12) * (h - 2.0 * pad);
    let polyline = |sel: fn(&(f64, f64, f64)) -> f64, color: &str| {
        let coords: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(sel(p)))).collect();
        format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            coords.join(" ")
        )
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<line x1=\"{pad}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>",
        h - pad,
        w - pad
    );
    let _ = writeln!(svg, "<line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>", h - pad);
    svg.push_str(&polyline(|p| p.1, "#1f77b4"));
    svg.push_str(&polyline(|p| p.2, "#d62728"));
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">log10 ||f - g||_p  [{x_lo:.2}, {x_hi:.2}]</text>",
        w / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"15\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\">log10 sup|phi - psi| (blue), bound (red)  [{y_lo:.2}, {y_hi:.2}]</text>",
        h / 2.0,
        h / 2.0
    );
    if let Some(e) = report.fitted_exponent {
        let _ = writeln!(svg, "<text x=\"{}\" y=\"30\" font-size=\"12\">fitted exponent {e:.3}</text>", pad + 10.0);
    }
    svg.push_str("</svg>\n");
    Some(svg)
}
