//! CSV readers and writers for curves, surfaces, weight matrices and coordinates.
//!
//! Curve files: first row holds the grid, each further row one curve.
//! Surface files: first row holds a corner label then the column grid; each
//! further row starts with its row-grid value. Weight files: n rows of n
//! values, no header. Coordinate files: header `station,lon,lat`.
//! Numbers are written in shortest round-trip form.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::basis::QuadratureGrid;
use crate::design::FunctionalSample;
use crate::error::{Error, Result};
use crate::spatial::{SpatialWeights, StationCoords};

fn reader(path: &Path, headers: bool) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(headers)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file))
}

fn parse_cell(path: &Path, row: usize, col: usize, s: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::schema(path, format!("row {row}, column {col}: '{s}' is not a number")))?;
    if !v.is_finite() {
        return Err(Error::schema(path, format!("row {row}, column {col}: value {s} is not finite")));
    }
    Ok(v)
}

/// All rows as numbers, 1-based row/column numbers in diagnostics.
fn read_numeric_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (r, rec) in reader(path, false)?.records().enumerate() {
        let rec = rec.map_err(|e| Error::schema(path, format!("row {}: {e}", r + 1)))?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, s)| parse_cell(path, r + 1, c + 1, s))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn check_width(path: &Path, rows: &[Vec<f64>], width: usize, first_data_row: usize) -> Result<()> {
    for (r, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(Error::schema(
                path,
                format!("row {} has {} columns, expected {width}", r + first_data_row, row.len()),
            ));
        }
    }
    Ok(())
}

pub fn read_curves(path: &Path) -> Result<FunctionalSample> {
    let rows = read_numeric_rows(path)?;
    let Some((grid_row, data)) = rows.split_first() else {
        return Err(Error::schema(path, "file is empty; expected a grid row"));
    };
    if data.is_empty() {
        return Err(Error::schema(path, "no curves after the grid row"));
    }
    let grid = QuadratureGrid::new(grid_row.clone()).map_err(|e| Error::schema(path, format!("row 1: {e}")))?;
    check_width(path, data, grid.len(), 2)?;
    let values = DMatrix::from_fn(data.len(), grid.len(), |i, j| data[i][j]);
    FunctionalSample::new(values, grid).map_err(|e| Error::schema(path, e.to_string()))
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn write_curves(path: &Path, sample: &FunctionalSample) -> Result<()> {
    let mut out = join(sample.grid().points().iter().copied());
    out.push('\n');
    for row in sample.values().row_iter() {
        out.push_str(&join(row.iter().copied()));
        out.push('\n');
    }
    write_text(path, &out)
}

/// Surface on the row-grid × column-grid cross product.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    pub rows: Vec<f64>,
    pub cols: Vec<f64>,
    pub values: DMatrix<f64>,
}

pub fn write_surface(path: &Path, label: &str, rows: &[f64], cols: &[f64], values: &DMatrix<f64>) -> Result<()> {
    let mut out = String::from(label);
    for c in cols {
        out.push(',');
        out.push_str(&c.to_string());
    }
    out.push('\n');
    for (r, row) in rows.iter().zip(values.row_iter()) {
        out.push_str(&r.to_string());
        for v in row.iter() {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn read_surface(path: &Path) -> Result<SurfaceGrid> {
    let mut rd = reader(path, true)?;
    let header = rd.headers().map_err(|e| Error::schema(path, format!("row 1: {e}")))?.clone();
    let cols = header
        .iter()
        .enumerate()
        .skip(1)
        .map(|(c, s)| parse_cell(path, 1, c + 1, s))
        .collect::<Result<Vec<f64>>>()?;
    let mut rows = Vec::new();
    let mut data = Vec::new();
    for (r, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| Error::schema(path, format!("row {}: {e}", r + 2)))?;
        if rec.len() != cols.len() + 1 {
            return Err(Error::schema(
                path,
                format!("row {} has {} columns, expected {}", r + 2, rec.len(), cols.len() + 1),
            ));
        }
        let vals = rec
            .iter()
            .enumerate()
            .map(|(c, s)| parse_cell(path, r + 2, c + 1, s))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(vals[0]);
        data.push(vals[1..].to_vec());
    }
    if data.is_empty() || cols.is_empty() {
        return Err(Error::schema(path, "surface has no values"));
    }
    let values = DMatrix::from_fn(rows.len(), cols.len(), |i, j| data[i][j]);
    Ok(SurfaceGrid { rows, cols, values })
}

pub fn read_weights(path: &Path) -> Result<SpatialWeights> {
    let rows = read_numeric_rows(path)?;
    let n = rows.len();
    if n == 0 {
        return Err(Error::schema(path, "weight matrix is empty"));
    }
    check_width(path, &rows, n, 1)?;
    SpatialWeights::new(DMatrix::from_fn(n, n, |i, j| rows[i][j])).map_err(|e| Error::schema(path, e.to_string()))
}

pub fn write_weights(path: &Path, w: &SpatialWeights) -> Result<()> {
    let mut out = String::new();
    for row in w.matrix().row_iter() {
        out.push_str(&join(row.iter().copied()));
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn read_coords(path: &Path) -> Result<StationCoords> {
    let mut rd = reader(path, true)?;
    let header: Vec<String> = rd
        .headers()
        .map_err(|e| Error::schema(path, format!("row 1: {e}")))?
        .iter()
        .map(|s| s.to_ascii_lowercase())
        .collect();
    if header != ["station", "lon", "lat"] {
        return Err(Error::schema(
            path,
            format!("row 1: expected header station,lon,lat, found {}", header.join(",")),
        ));
    }
    let (mut lon, mut lat) = (Vec::new(), Vec::new());
    for (r, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| Error::schema(path, format!("row {}: {e}", r + 2)))?;
        if rec.len() != 3 {
            return Err(Error::schema(path, format!("row {} has {} columns, expected 3", r + 2, rec.len())));
        }
        lon.push(parse_cell(path, r + 2, 2, &rec[1])?);
        lat.push(parse_cell(path, r + 2, 3, &rec[2])?);
    }
    StationCoords::new(lon, lat).map_err(|e| Error::schema(path, e.to_string()))
}

pub fn write_coords(path: &Path, coords: &StationCoords) -> Result<()> {
    let mut out = String::from("station,lon,lat\n");
    for (i, (lo, la)) in coords.longitude().iter().zip(coords.latitude()).enumerate() {
        out.push_str(&format!("{},{lo},{la}\n", i + 1));
    }
    write_text(path, &out)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::schema(path, e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::schema(path, e.to_string()))
}

pub fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    if !dir.exists() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        log::info!("created output directory {}", dir.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        let grid = QuadratureGrid::uniform(7).unwrap();
        let vals = DMatrix::from_fn(3, 7, |i, j| (i as f64 + 0.1) / (j as f64 + 3.0) * std::f64::consts::PI);
        let s = FunctionalSample::new(vals, grid).unwrap();
        write_curves(&p, &s).unwrap();
        assert_eq!(read_curves(&p).unwrap(), s);
    }

    #[test]
    fn surface_and_weights_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let rows = vec![0.0, 0.5, 1.0];
        let cols = vec![0.0, 1.0 / 3.0];
        let m = DMatrix::from_fn(3, 2, |i, j| 1.0 / (1.0 + i as f64 + 7.0 * j as f64));
        write_surface(&p, "t\\s", &rows, &cols, &m).unwrap();
        let back = read_surface(&p).unwrap();
        assert_eq!((back.rows, back.cols, back.values), (rows, cols, m));

        let w = crate::spatial::inverse_distance_weights(5).unwrap();
        let pw = dir.path().join("w.csv");
        write_weights(&pw, &w).unwrap();
        assert_eq!(read_weights(&pw).unwrap().matrix(), w.matrix());
    }

    #[test]
    fn diagnostics_name_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "0,0.5,1\n1,2,3\n4,x,6\n").unwrap();
        let msg = read_curves(&p).unwrap_err().to_string();
        assert!(msg.contains("row 3, column 2"), "{msg}");
        fs::write(&p, "0,0.5,1\n1,2\n").unwrap();
        let msg = read_curves(&p).unwrap_err().to_string();
        assert!(msg.contains("row 2 has 2 columns"), "{msg}");

        fs::write(&p, "1,0\n0,0\n").unwrap();
        let e = read_weights(&p).unwrap_err();
        assert!(matches!(e, Error::Schema { .. }));
        assert!(e.to_string().contains("diagonal"), "{e}");
    }
}
