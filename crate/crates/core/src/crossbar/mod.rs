//! Passive crossbar: a grid of devices addressed by row and column lines.
//!
//! Orientation used throughout: columns are driven inputs, rows are read at
//! virtual ground, and device `(r, c)` connects column line `c` to row line
//! `r`. A positive device voltage means the column is above the row.

mod grid_io;
mod ladder;
mod readout;

pub use grid_io::{read_grid_csv, read_grid_csv_from, write_grid_csv, write_grid_csv_to};
pub use ladder::{
    calibrate_segment_resistance, ladder_drop_curve, ladder_worst_case_drop, max_crossbar_dimension,
    scaling_table, write_budget, DimensionEstimate, ScalingRow, SwitchingWindow, WirePreset, COPPER_PRESET, EXPERIMENT_LIKE_PRESET,
    MAX_LADDER_LENGTH,
};
pub use readout::{
    line_models, IdealLine, LineModel, Readout, WireResistiveLine, IDEAL, MAX_WIRE_RESISTIVE_DIM,
    WIRE_RESISTIVE,
};

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::device::{sample_device, DeviceVariationSpec, MemristorDevice};
use crate::error::{Result, SimError};
use crate::rng::indexed_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossbar {
    rows: usize,
    cols: usize,
    /// Row-major device grid.
    devices: Vec<MemristorDevice>,
    wire_segment_resistance: f64,
    line_model: String,
}

/// Populate a `rows × cols` crossbar; cell `(r, c)` draws from substream
/// `r·cols + c` of `seed`.
pub fn build_crossbar(
    rows: usize,
    cols: usize,
    spec: &DeviceVariationSpec,
    wire_segment_resistance: f64,
    seed: u64,
) -> Result<Crossbar> {
    if rows == 0 || cols == 0 {
        return Err(SimError::Config(format!("crossbar dimensions must be >= 1, got {rows}x{cols}")));
    }
    spec.validate()?;
    let devices = (0..rows * cols)
        .map(|k| sample_device(spec, &mut indexed_rng(seed, k as u64)))
        .collect::<Result<Vec<_>>>()?;
    Crossbar::from_devices(rows, cols, devices, wire_segment_resistance)
}

impl Crossbar {
    pub fn from_devices(
        rows: usize,
        cols: usize,
        devices: Vec<MemristorDevice>,
        wire_segment_resistance: f64,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(SimError::Config(format!("crossbar dimensions must be >= 1, got {rows}x{cols}")));
        }
        if devices.len() != rows * cols {
            return Err(SimError::Shape(format!(
                "{} devices for a {rows}x{cols} grid",
                devices.len()
            )));
        }
        if !(wire_segment_resistance >= 0.0) || !wire_segment_resistance.is_finite() {
            return Err(SimError::Config(format!(
                "wire segment resistance must be finite and >= 0, got {wire_segment_resistance}"
            )));
        }
        Ok(Self {
            rows,
            cols,
            devices,
            wire_segment_resistance,
            line_model: IDEAL.to_string(),
        })
    }

    /// Crossbar of ideal formed devices with the given conductances.
    pub fn from_conductances(g: &Array2<f64>, wire_segment_resistance: f64) -> Result<Self> {
        let (rows, cols) = g.dim();
        let devices = g.iter().map(|&x| MemristorDevice::ideal(x)).collect();
        let mut xbar = Self::from_devices(rows, cols, devices, wire_segment_resistance)?;
        // `ideal` clamps to the default bounds; widen them so any value survives.
        for (d, &x) in xbar.devices.iter_mut().zip(g.iter()) {
            d.g_min = d.g_min.min(x);
            d.g_max = d.g_max.max(x);
            d.conductance = x;
        }
        Ok(xbar)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn wire_segment_resistance(&self) -> f64 {
        self.wire_segment_resistance
    }

    pub fn line_model(&self) -> &str {
        &self.line_model
    }

    /// Select the readout model by registered name.
    pub fn set_line_model(&mut self, name: &str) -> Result<()> {
        line_models().get(name)?;
        self.line_model = name.to_string();
        Ok(())
    }

    pub fn with_line_model(mut self, name: &str) -> Result<Self> {
        self.set_line_model(name)?;
        Ok(self)
    }

    fn check_index(&self, row: usize, col: usize) -> Result<()> {
        if row >= self.rows || col >= self.cols {
            return Err(SimError::Index(format!(
                "({row}, {col}) outside {}x{} crossbar",
                self.rows, self.cols
            )));
        }
        Ok(())
    }

    pub fn device(&self, row: usize, col: usize) -> Result<&MemristorDevice> {
        self.check_index(row, col)?;
        Ok(&self.devices[row * self.cols + col])
    }

    pub fn device_mut(&mut self, row: usize, col: usize) -> Result<&mut MemristorDevice> {
        self.check_index(row, col)?;
        Ok(&mut self.devices[row * self.cols + col])
    }

    pub fn devices(&self) -> &[MemristorDevice] {
        &self.devices
    }

    /// Effective (linear read) conductance of every device.
    pub fn conductances(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.rows, self.cols), |(r, c)| {
            self.devices[r * self.cols + c].effective_conductance()
        })
    }

    pub fn stuck_mask(&self) -> Array2<bool> {
        Array2::from_shape_fn((self.rows, self.cols), |(r, c)| self.devices[r * self.cols + c].stuck)
    }

    /// Row currents for the given column drive using the configured line model.
    pub fn row_currents(&self, column_voltages: &[f64]) -> Result<Vec<f64>> {
        self.readout()?.row_currents(column_voltages)
    }

    /// Pre-factored readout for repeated evaluations on a fixed state.
    pub fn readout(&self) -> Result<Box<dyn Readout>> {
        line_models()
            .get(&self.line_model)?
            .prepare(&self.conductances(), self.wire_segment_resistance)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let xbar: Self = serde_json::from_reader(file)?;
        let checked = Self::from_devices(xbar.rows, xbar.cols, xbar.devices, xbar.wire_segment_resistance)?;
        checked.with_line_model(&xbar.line_model)
    }
}

/// Exact vector-matrix product `I_r = Σ_c V_c·G_rc` with rows at virtual ground.
pub fn vmm_ideal(xbar: &Crossbar, column_voltages: &[f64]) -> Result<Vec<f64>> {
    IdealLine.prepare(&xbar.conductances(), 0.0)?.row_currents(column_voltages)
}

/// Row currents from the full resistive-line nodal network.
pub fn vmm_wire_resistive(xbar: &Crossbar, column_voltages: &[f64]) -> Result<Vec<f64>> {
    WireResistiveLine
        .prepare(&xbar.conductances(), xbar.wire_segment_resistance)?
        .row_currents(column_voltages)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasKind {
    VHalf,
    VThird,
}

/// Write biasing: selected lines at `±V_w/2`; unselected lines at 0 (V/2) or
/// `∓V_w/6` (V/3).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasScheme {
    pub scheme: BiasKind,
    pub write_voltage: f64,
}

impl BiasScheme {
    pub fn v_half(write_voltage: f64) -> Self {
        Self { scheme: BiasKind::VHalf, write_voltage }
    }

    pub fn v_third(write_voltage: f64) -> Self {
        Self { scheme: BiasKind::VThird, write_voltage }
    }

    /// (selected column, unselected column, selected row, unselected row) potentials.
    fn line_potentials(&self) -> (f64, f64, f64, f64) {
        let v = self.write_voltage;
        match self.scheme {
            BiasKind::VHalf => (v / 2.0, 0.0, -v / 2.0, 0.0),
            BiasKind::VThird => (v / 2.0, -v / 6.0, -v / 2.0, v / 6.0),
        }
    }

    /// Device voltages (column minus row potential) for an arbitrary set of
    /// selected rows and columns, ideal lines.
    pub fn voltage_map(&self, selected_rows: &[bool], selected_cols: &[bool]) -> Array2<f64> {
        let (sc, uc, sr, ur) = self.line_potentials();
        Array2::from_shape_fn((selected_rows.len(), selected_cols.len()), |(r, c)| {
            let vc = if selected_cols[c] { sc } else { uc };
            let vr = if selected_rows[r] { sr } else { ur };
            vc - vr
        })
    }
}

/// Per-device voltages when writing the single cell `(sel_row, sel_col)`.
pub fn device_voltage_map(xbar: &Crossbar, sel_row: usize, sel_col: usize, bias: &BiasScheme) -> Result<Array2<f64>> {
    xbar.check_index(sel_row, sel_col)?;
    let rows: Vec<bool> = (0..xbar.rows).map(|r| r == sel_row).collect();
    let cols: Vec<bool> = (0..xbar.cols).map(|c| c == sel_col).collect();
    Ok(bias.voltage_map(&rows, &cols))
}

/// Outcome of one biased write pulse over the array.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WriteReport {
    /// Fully selected cells whose conductance changed.
    pub switched: usize,
    /// Cells that were not fully selected but changed anyway.
    pub disturbed: Vec<(usize, usize)>,
}

/// Apply one pulse of `width` to every device under `bias`, selecting
/// `row` and the columns flagged in `selected_cols`. Device voltages are
/// computed with ideal lines.
pub fn write_row(
    xbar: &mut Crossbar,
    row: usize,
    selected_cols: &[bool],
    bias: &BiasScheme,
    width: f64,
) -> Result<WriteReport> {
    xbar.check_index(row, 0)?;
    if selected_cols.len() != xbar.cols {
        return Err(SimError::Shape(format!(
            "{} column flags for {} columns",
            selected_cols.len(),
            xbar.cols
        )));
    }
    let mut report = WriteReport::default();
    if !selected_cols.iter().any(|&s| s) {
        return Ok(report);
    }
    let rows: Vec<bool> = (0..xbar.rows).map(|r| r == row).collect();
    let volts = bias.voltage_map(&rows, selected_cols);
    let cols = xbar.cols;
    for ((r, c), &v) in volts.indexed_iter() {
        if v == 0.0 {
            continue;
        }
        let dg = xbar.devices[r * cols + c].apply_pulse(v, width)?;
        if dg != 0.0 {
            if r == row && selected_cols[c] {
                report.switched += 1;
            } else {
                report.disturbed.push((r, c));
            }
        }
    }
    Ok(report)
}
