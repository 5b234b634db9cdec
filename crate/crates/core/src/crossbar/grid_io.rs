//! Conductance (and error) grids as headerless row-major CSV.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Result, SimError};

/// Nine significant digits in scientific notation.
fn format_value(x: f64) -> String {
    format!("{x:.8e}")
}

pub fn write_grid_csv_to<W: Write>(writer: W, grid: &Array2<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for row in grid.rows() {
        w.write_record(row.iter().map(|&x| format_value(x)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_grid_csv(path: &Path, grid: &Array2<f64>) -> Result<()> {
    write_grid_csv_to(std::fs::File::create(path)?, grid)
}

pub fn read_grid_csv_from<R: Read>(reader: R) -> Result<Array2<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in r.records() {
        let record = record?;
        cols.get_or_insert(record.len());
        for field in record.iter() {
            let x: f64 = field
                .parse()
                .map_err(|_| SimError::Parse(format!("row {}: '{field}' is not a number", rows + 1)))?;
            values.push(x);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| SimError::Parse("empty grid file".into()))?;
    Array2::from_shape_vec((rows, cols), values).map_err(|e| SimError::Parse(e.to_string()))
}

pub fn read_grid_csv(path: &Path) -> Result<Array2<f64>> {
    read_grid_csv_from(std::fs::File::open(path)?)
}
