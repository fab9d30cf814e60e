//! Field and table output: legacy VTK, plain PGM, CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid_fem::{BackgroundGrid, NodalField};

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Legacy ASCII VTK `STRUCTURED_POINTS` with one `SCALARS` block per entry of
/// `fields` (name, node values).
pub fn write_field_vtk(grid: &BackgroundGrid, fields: &[(&str, &[f64])], path: impl AsRef<Path>) -> Result<()> {
    let n = grid.num_nodes();
    for (name, values) in fields {
        if values.len() != n {
            return Err(Error::State(format!("field '{name}' has {} values for {n} nodes", values.len())));
        }
    }
    let [nx, ny] = grid.nodes_per_axis();
    let [x0, y0] = grid.lower();
    let [hx, hy] = grid.spacing();
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "ibfem field");
    let _ = writeln!(s, "ASCII");
    let _ = writeln!(s, "DATASET STRUCTURED_POINTS");
    let _ = writeln!(s, "DIMENSIONS {nx} {ny} 1");
    let _ = writeln!(s, "ORIGIN {x0:e} {y0:e} 0");
    let _ = writeln!(s, "SPACING {hx:e} {hy:e} 1");
    let _ = writeln!(s, "POINT_DATA {n}");
    for (name, values) in fields {
        let _ = writeln!(s, "SCALARS {name} double 1");
        let _ = writeln!(s, "LOOKUP_TABLE default");
        for v in values.iter() {
            let _ = writeln!(s, "{v:e}");
        }
    }
    write_text(path.as_ref(), &s)
}

/// All components of `field`, named `names[d]`.
pub fn write_nodal_vtk(grid: &BackgroundGrid, field: &NodalField, names: &[&str], path: impl AsRef<Path>) -> Result<()> {
    if names.len() != field.n_dof() {
        return Err(Error::State(format!("{} names for {} components", names.len(), field.n_dof())));
    }
    let comps: Vec<Vec<f64>> = (0..field.n_dof()).map(|d| field.component(d)).collect();
    let blocks: Vec<(&str, &[f64])> = names.iter().copied().zip(comps.iter().map(|c| c.as_slice())).collect();
    write_field_vtk(grid, &blocks, path)
}

/// Plain PGM (`P2`) rendering of a node field, top row first, with a linear
/// min–max map onto `0..=255`; a constant field renders as 128.
pub fn pgm_string(grid: &BackgroundGrid, values: &[f64]) -> Result<String> {
    if values.len() != grid.num_nodes() {
        return Err(Error::State(format!("{} values for {} nodes", values.len(), grid.num_nodes())));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let [nx, ny] = grid.nodes_per_axis();
    let mut s = format!("P2\n{nx} {ny}\n255\n");
    for j in (0..ny).rev() {
        let row: Vec<String> = (0..nx)
            .map(|i| {
                let v = values[grid.node_index(i, j)];
                let g = if hi > lo { ((v - lo) / (hi - lo) * 255.0).round() as u8 } else { 128 };
                g.to_string()
            })
            .collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    Ok(s)
}

pub fn write_field_pgm(grid: &BackgroundGrid, values: &[f64], path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &pgm_string(grid, values)?)
}

/// CSV with a header row; numbers carry 17 significant digits.
pub fn csv_string(header: &[&str], rows: &[Vec<f64>]) -> Result<String> {
    let mut s = header.join(",");
    s.push('\n');
    for (k, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(Error::State(format!("row {k} has {} columns, header has {}", row.len(), header.len())));
        }
        let cols: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(s, "{}", cols.join(","));
    }
    Ok(s)
}

pub fn write_csv(header: &[&str], rows: &[Vec<f64>], path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &csv_string(header, rows)?)
}

/// Inverse of [`csv_string`].
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or(Error::Parse { line: 1, msg: "missing header".into() })?
        .split(',')
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse { line: k + 2, msg: e.to_string() })?;
        if row.len() != header.len() {
            return Err(Error::Parse { line: k + 2, msg: format!("{} columns, header has {}", row.len(), header.len()) });
        }
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let path = path.as_ref();
    parse_csv(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_json<T: serde::Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?;
    write_text(path, &text)
}

pub fn write_string(text: &str, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), text)
}
