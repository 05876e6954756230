//! Plain-text and binary exports. Floats are written with 17 significant digits.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::features::FeatureMap;
use crate::meanfield::{CircleGrid, CostatePath, DensityPath};
use crate::particles::{ControlPath, Trajectory};
use crate::training::HistoryRow;

/// Shortest-roundtrip-safe float formatting used in every CSV.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Joins values as one CSV row terminated by LF.
pub fn csv_row(out: &mut String, cells: &[String]) {
    out.push_str(&cells.join(","));
    out.push('\n');
}

pub fn trajectory_csv(tr: &Trajectory) -> String {
    let d = tr.records[0].d();
    let mut s = String::from("t,particle");
    for c in 0..d {
        let _ = write!(s, ",x{c}");
    }
    s.push('\n');
    for rec in &tr.records {
        for (i, row) in rec.rows().enumerate() {
            let mut cells = vec![fmt_f64(rec.time), i.to_string()];
            cells.extend(row.iter().map(|v| fmt_f64(*v)));
            csv_row(&mut s, &cells);
        }
    }
    s
}

pub fn energy_csv(tr: &Trajectory) -> String {
    let mut s = String::from("t,interaction,entropy,total\n");
    for (rec, e) in tr.records.iter().zip(&tr.energies) {
        csv_row(&mut s, &[fmt_f64(rec.time), fmt_f64(e.interaction), fmt_f64(e.entropy), fmt_f64(e.total)]);
    }
    s
}

pub fn history_csv(history: &[HistoryRow]) -> String {
    let mut s = String::from("step,objective,terminal_loss,reg_term,grad_norm\n");
    for h in history {
        csv_row(
            &mut s,
            &[h.step.to_string(), fmt_f64(h.objective), fmt_f64(h.terminal_loss), fmt_f64(h.reg_term), fmt_f64(h.grad_norm)],
        );
    }
    s
}

fn grid_path_csv<'a>(grid: &CircleGrid, rows: impl Iterator<Item = (f64, &'a [f64])>) -> String {
    let mut s = String::from("t,theta,value\n");
    for (t, vals) in rows {
        for (th, v) in grid.theta().iter().zip(vals) {
            csv_row(&mut s, &[fmt_f64(t), fmt_f64(*th), fmt_f64(*v)]);
        }
    }
    s
}

pub fn density_path_csv(grid: &CircleGrid, path: &DensityPath) -> String {
    grid_path_csv(grid, path.times.iter().zip(&path.densities).map(|(t, d)| (*t, d.values())))
}

pub fn costate_csv(grid: &CircleGrid, path: &CostatePath) -> String {
    grid_path_csv(grid, path.times.iter().zip(&path.phi).map(|(t, p)| (*t, p.as_slice())))
}

/// Control path together with the feature map it acts on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlPathFile {
    pub bin_width: f64,
    pub horizon: f64,
    pub d: usize,
    pub p: usize,
    pub feature_map: FeatureMap,
    pub bins: Vec<Vec<f64>>,
}

pub fn control_path_json(w: &ControlPath, sigma: FeatureMap) -> Result<String> {
    let f = ControlPathFile { bin_width: w.bin_width, horizon: w.horizon, d: w.d, p: w.p, feature_map: sigma, bins: w.bins.clone() };
    Ok(serde_json::to_string_pretty(&f)?)
}

pub fn control_path_from_json(s: &str) -> Result<(ControlPath, FeatureMap)> {
    let f: ControlPathFile = serde_json::from_str(s)?;
    Ok((ControlPath::new(f.d, f.p, f.bin_width, f.bins)?, f.feature_map))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorSidecar {
    pub m: usize,
    pub inner_product: String,
}

/// Writes `<stem>.bin` (row-major little-endian f64) and `<stem>.json`.
pub fn write_operator(dir: &Path, stem: &str, mat: &DMatrix<f64>, inner_product: &str) -> Result<()> {
    let m = mat.nrows();
    let mut bytes = Vec::with_capacity(m * m * 8);
    for i in 0..m {
        for j in 0..mat.ncols() {
            bytes.extend_from_slice(&mat[(i, j)].to_le_bytes());
        }
    }
    std::fs::File::create(dir.join(format!("{stem}.bin")))?.write_all(&bytes)?;
    let side = OperatorSidecar { m, inner_product: inner_product.to_string() };
    std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&side)?)?;
    Ok(())
}
