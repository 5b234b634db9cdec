//! Line models: how column drive voltages turn into row currents.

use std::sync::LazyLock;

use nalgebra::DMatrix;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use ndarray::Array2;

use crate::error::{Result, SimError};
use crate::registry::{Named, Registry};

pub const IDEAL: &str = "ideal";
pub const WIRE_RESISTIVE: &str = "wire-resistive";

/// Largest array (either dimension) the nodal solver accepts.
pub const MAX_WIRE_RESISTIVE_DIM: usize = 64;

/// A readout prepared for one conductance state.
pub trait Readout: Send + Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn row_currents(&self, column_voltages: &[f64]) -> Result<Vec<f64>>;
}

/// Strategy that turns a conductance grid into a [`Readout`].
pub trait LineModel: Named + Send + Sync {
    fn prepare(&self, conductances: &Array2<f64>, wire_segment_resistance: f64) -> Result<Box<dyn Readout>>;
}

static LINE_MODELS: LazyLock<Registry<dyn LineModel>> = LazyLock::new(|| {
    let mut r: Registry<dyn LineModel> = Registry::new("line model");
    r.register(Box::new(IdealLine));
    r.register(Box::new(WireResistiveLine));
    r
});

/// All built-in line models, keyed by name.
pub fn line_models() -> &'static Registry<dyn LineModel> {
    &LINE_MODELS
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(SimError::Shape(format!("expected {expected} column voltages, got {got}")));
    }
    Ok(())
}

/// Zero-resistance lines: exact matrix-vector product.
pub struct IdealLine;

impl Named for IdealLine {
    fn name(&self) -> &'static str {
        IDEAL
    }
}

impl LineModel for IdealLine {
    fn prepare(&self, conductances: &Array2<f64>, _r_w: f64) -> Result<Box<dyn Readout>> {
        Ok(Box::new(IdealReadout { g: conductances.clone() }))
    }
}

struct IdealReadout {
    g: Array2<f64>,
}

impl Readout for IdealReadout {
    fn rows(&self) -> usize {
        self.g.nrows()
    }

    fn cols(&self) -> usize {
        self.g.ncols()
    }

    fn row_currents(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.g.ncols(), v.len())?;
        Ok(self
            .g
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(v).map(|(g, v)| g * v).sum())
            .collect())
    }
}

/// Resistive lines solved as a nodal network.
///
/// Every crosspoint has a column-line node and a row-line node joined by the
/// device. Column `c` is driven from the periphery ahead of row 0 through one
/// segment `R_w`; consecutive column nodes are joined by `R_w`. Row `r` runs
/// from column 0 to column `C-1` and then through one more segment into the
/// virtual ground, where its current is sensed.
pub struct WireResistiveLine;

impl Named for WireResistiveLine {
    fn name(&self) -> &'static str {
        WIRE_RESISTIVE
    }
}

impl LineModel for WireResistiveLine {
    fn prepare(&self, conductances: &Array2<f64>, r_w: f64) -> Result<Box<dyn Readout>> {
        if !(r_w >= 0.0) || !r_w.is_finite() {
            return Err(SimError::Config(format!("segment resistance must be finite and >= 0, got {r_w}")));
        }
        if r_w == 0.0 {
            return IdealLine.prepare(conductances, 0.0);
        }
        let (rows, cols) = conductances.dim();
        if rows > MAX_WIRE_RESISTIVE_DIM || cols > MAX_WIRE_RESISTIVE_DIM {
            return Err(SimError::Config(format!(
                "wire-resistive readout limited to {MAX_WIRE_RESISTIVE_DIM}x{MAX_WIRE_RESISTIVE_DIM}, got {rows}x{cols}"
            )));
        }
        if conductances.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return Err(SimError::Domain("conductances must be finite and non-negative".into()));
        }
        let matrix = nodal_matrix(conductances, r_w);
        let factor = CscCholesky::factor(&matrix)
            .map_err(|e| SimError::Singular(format!("nodal matrix factorization failed: {e:?}")))?;
        Ok(Box::new(WireReadout { rows, cols, gw: 1.0 / r_w, factor }))
    }
}

fn col_node(cols: usize, r: usize, c: usize) -> usize {
    2 * (r * cols + c)
}

fn row_node(cols: usize, r: usize, c: usize) -> usize {
    2 * (r * cols + c) + 1
}

/// Conductance matrix of the nodal network. Interleaving column and row
/// nodes per crosspoint keeps the bandwidth at `2·cols`.
fn nodal_matrix(g: &Array2<f64>, r_w: f64) -> CscMatrix<f64> {
    let (rows, cols) = g.dim();
    let gw = 1.0 / r_w;
    let n = 2 * rows * cols;
    let mut coo = CooMatrix::new(n, n);
    let couple = |coo: &mut CooMatrix<f64>, a: usize, b: usize, y: f64| {
        coo.push(a, a, y);
        coo.push(b, b, y);
        coo.push(a, b, -y);
        coo.push(b, a, -y);
    };
    for r in 0..rows {
        for c in 0..cols {
            let cn = col_node(cols, r, c);
            let rn = row_node(cols, r, c);
            couple(&mut coo, cn, rn, g[[r, c]]);
            if r == 0 {
                coo.push(cn, cn, gw); // segment to the column driver
            } else {
                couple(&mut coo, col_node(cols, r - 1, c), cn, gw);
            }
            if c + 1 < cols {
                couple(&mut coo, rn, row_node(cols, r, c + 1), gw);
            } else {
                coo.push(rn, rn, gw); // segment to the virtual ground
            }
        }
    }
    CscMatrix::from(&coo)
}

struct WireReadout {
    rows: usize,
    cols: usize,
    gw: f64,
    factor: CscCholesky<f64>,
}

impl Readout for WireReadout {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn row_currents(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.cols, v.len())?;
        let n = 2 * self.rows * self.cols;
        let mut rhs = DMatrix::zeros(n, 1);
        for (c, &vc) in v.iter().enumerate() {
            rhs[(col_node(self.cols, 0, c), 0)] = self.gw * vc;
        }
        let x = self.factor.solve(&rhs);
        Ok((0..self.rows)
            .map(|r| self.gw * x[(row_node(self.cols, r, self.cols - 1), 0)])
            .collect())
    }
}
