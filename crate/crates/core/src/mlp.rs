//! Differential-pair two-layer perceptron on crossbar conductances.
//!
//! Neuron `j` of a layer owns two adjacent crossbar rows: row `2j` holds
//! `G⁺` and row `2j+1` holds `G⁻`, and its input is the difference of the
//! two row currents. Hidden neurons saturate at `±0.2 V`; output neurons
//! are linear transimpedance stages.

use std::io::Write;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::benchmark::{Letter, Pattern, PIXELS};
use crate::crossbar::{line_models, Crossbar, Readout};
use crate::error::{Result, SimError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub n_inputs: usize,
    pub n_hidden: usize,
    pub n_outputs: usize,
    /// Pixel drive magnitude: set pixels at `+input_level`, clear at `−input_level`.
    pub input_level: f64,
    /// Bias input of both layers.
    pub bias_level: f64,
    /// Volts per ampere of differential current.
    pub transimpedance_gain: f64,
    pub hidden_saturation: f64,
    /// Optional output rail (volts); `None` keeps the output stage linear.
    pub output_rail: Option<f64>,
}

impl Default for NetworkTopology {
    fn default() -> Self {
        Self {
            n_inputs: PIXELS,
            n_hidden: 10,
            n_outputs: 4,
            input_level: 0.2,
            bias_level: 0.2,
            transimpedance_gain: 1e6,
            hidden_saturation: 0.2,
            output_rail: None,
        }
    }
}

impl NetworkTopology {
    pub fn with_outputs(n_outputs: usize) -> Self {
        Self { n_outputs, ..Self::default() }
    }

    /// (neurons, inputs incl. bias) of the first layer.
    pub fn layer1_shape(&self) -> (usize, usize) {
        (self.n_hidden, self.n_inputs + 1)
    }

    /// (neurons, inputs incl. bias) of the second layer.
    pub fn layer2_shape(&self) -> (usize, usize) {
        (self.n_outputs, self.n_hidden + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.n_inputs == PIXELS
            && self.n_hidden >= 1
            && self.n_outputs >= 2
            && self.input_level > 0.0
            && self.transimpedance_gain > 0.0
            && self.hidden_saturation > 0.0
            && self.output_rail.is_none_or(|r| r > 0.0);
        if ok {
            Ok(())
        } else {
            Err(SimError::Config(format!("invalid topology: {self:?}")))
        }
    }

    /// Column voltages of the first layer: pixels then the bias input.
    pub fn encode(&self, pattern: &Pattern) -> Vec<f64> {
        let mut v: Vec<f64> = pattern.signs().iter().map(|s| s * self.input_level).collect();
        v.push(self.bias_level);
        v
    }

    pub fn hidden(&self, delta_current: f64) -> f64 {
        self.hidden_saturation * (self.transimpedance_gain * delta_current).tanh()
    }

    pub fn output(&self, delta_current: f64) -> f64 {
        let v = self.transimpedance_gain * delta_current;
        match self.output_rail {
            Some(rail) => v.clamp(-rail, rail),
            None => v,
        }
    }
}

/// Hidden-neuron transfer with the default stage parameters.
pub fn neuron_hidden(delta_current: f64) -> f64 {
    NetworkTopology::default().hidden(delta_current)
}

/// Output-neuron transfer with the default stage parameters.
pub fn neuron_output(delta_current: f64) -> f64 {
    NetworkTopology::default().output(delta_current)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Hidden,
    Output,
}

/// `(G⁺, G⁻)` of one layer, shape (neurons, inputs), in siemens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConductancePairMap {
    pub plus: Array2<f64>,
    pub minus: Array2<f64>,
    pub layer: u8,
}

impl ConductancePairMap {
    pub fn new(plus: Array2<f64>, minus: Array2<f64>, layer: u8) -> Result<Self> {
        if plus.dim() != minus.dim() {
            return Err(SimError::Shape(format!("G+ {:?} vs G- {:?}", plus.dim(), minus.dim())));
        }
        Ok(Self { plus, minus, layer })
    }

    pub fn neurons(&self) -> usize {
        self.plus.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.plus.ncols()
    }

    /// `W = G⁺ − G⁻`.
    pub fn weights(&self) -> Array2<f64> {
        &self.plus - &self.minus
    }

    /// Physical layout: rows `2j` / `2j+1` carry `G⁺` / `G⁻` of neuron `j`.
    pub fn interleaved(&self) -> Array2<f64> {
        Array2::from_shape_fn((2 * self.neurons(), self.inputs()), |(r, c)| {
            if r % 2 == 0 {
                self.plus[[r / 2, c]]
            } else {
                self.minus[[r / 2, c]]
            }
        })
    }

    pub fn from_interleaved(grid: &Array2<f64>, layer: u8) -> Result<Self> {
        let (rows, cols) = grid.dim();
        if rows % 2 != 0 {
            return Err(SimError::Shape(format!("interleaved grid needs an even row count, got {rows}")));
        }
        let plus = Array2::from_shape_fn((rows / 2, cols), |(j, i)| grid[[2 * j, i]]);
        let minus = Array2::from_shape_fn((rows / 2, cols), |(j, i)| grid[[2 * j + 1, i]]);
        Self::new(plus, minus, layer)
    }

    /// Read the top-left `2·neurons × inputs` block of a crossbar.
    pub fn from_crossbar(xbar: &Crossbar, neurons: usize, inputs: usize, layer: u8) -> Result<Self> {
        if 2 * neurons > xbar.rows() || inputs > xbar.cols() {
            return Err(SimError::Shape(format!(
                "{neurons} neurons x {inputs} inputs do not fit a {}x{} crossbar",
                xbar.rows(),
                xbar.cols()
            )));
        }
        let g = xbar.conductances();
        let block = g.slice(ndarray::s![..2 * neurons, ..inputs]).to_owned();
        Self::from_interleaved(&block, layer)
    }
}

/// One layer ready for evaluation: a prepared readout over its physical rows.
pub struct PairLayer {
    neurons: usize,
    inputs: usize,
    readout: Box<dyn Readout>,
}

impl PairLayer {
    pub fn from_map(map: &ConductancePairMap, line_model: &str, wire_segment_resistance: f64) -> Result<Self> {
        let readout = line_models().get(line_model)?.prepare(&map.interleaved(), wire_segment_resistance)?;
        Ok(Self { neurons: map.neurons(), inputs: map.inputs(), readout })
    }

    /// Use the top-left block of a crossbar; unused columns are held at 0 V.
    pub fn from_crossbar(xbar: &Crossbar, neurons: usize, inputs: usize) -> Result<Self> {
        if 2 * neurons > xbar.rows() || inputs > xbar.cols() {
            return Err(SimError::Shape(format!(
                "{neurons} neurons x {inputs} inputs do not fit a {}x{} crossbar",
                xbar.rows(),
                xbar.cols()
            )));
        }
        Ok(Self { neurons, inputs, readout: xbar.readout()? })
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    /// `I⁺_j − I⁻_j` for every neuron.
    pub fn delta_currents(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        if inputs.len() != self.inputs {
            return Err(SimError::Shape(format!("layer expects {} inputs, got {}", self.inputs, inputs.len())));
        }
        let mut drive = inputs.to_vec();
        drive.resize(self.readout.cols(), 0.0);
        let i = self.readout.row_currents(&drive)?;
        Ok((0..self.neurons).map(|j| i[2 * j] - i[2 * j + 1]).collect())
    }
}

/// Evaluate one layer and apply the neuron transfer.
pub fn layer_forward(
    layer: &PairLayer,
    inputs: &[f64],
    activation: Activation,
    topology: &NetworkTopology,
) -> Result<Vec<f64>> {
    let di = layer.delta_currents(inputs)?;
    Ok(di
        .into_iter()
        .map(|d| match activation {
            Activation::Hidden => topology.hidden(d),
            Activation::Output => topology.output(d),
        })
        .collect())
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub class: usize,
    pub outputs: Vec<f64>,
    pub hidden: Vec<f64>,
}

/// A two-layer network over conductances (maps or crossbars).
pub struct Network {
    topology: NetworkTopology,
    layer1: PairLayer,
    layer2: PairLayer,
}

impl Network {
    pub fn from_maps(
        topology: NetworkTopology,
        layer1: &ConductancePairMap,
        layer2: &ConductancePairMap,
        line_model: &str,
        wire_segment_resistance: f64,
    ) -> Result<Self> {
        topology.validate()?;
        check_shape(layer1, topology.layer1_shape())?;
        check_shape(layer2, topology.layer2_shape())?;
        Ok(Self {
            layer1: PairLayer::from_map(layer1, line_model, wire_segment_resistance)?,
            layer2: PairLayer::from_map(layer2, line_model, wire_segment_resistance)?,
            topology,
        })
    }

    /// Network using the top-left blocks of two crossbars, each with its own
    /// line model and wire resistance.
    pub fn from_crossbars(topology: NetworkTopology, layer1: &Crossbar, layer2: &Crossbar) -> Result<Self> {
        topology.validate()?;
        let (n1, i1) = topology.layer1_shape();
        let (n2, i2) = topology.layer2_shape();
        Ok(Self {
            layer1: PairLayer::from_crossbar(layer1, n1, i1)?,
            layer2: PairLayer::from_crossbar(layer2, n2, i2)?,
            topology,
        })
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn infer(&self, pattern: &Pattern) -> Result<Inference> {
        let v_in = self.topology.encode(pattern);
        let mut hidden = layer_forward(&self.layer1, &v_in, Activation::Hidden, &self.topology)?;
        let mut v_h = hidden.clone();
        v_h.push(self.topology.bias_level);
        let outputs = layer_forward(&self.layer2, &v_h, Activation::Output, &self.topology)?;
        hidden.truncate(self.topology.n_hidden);
        Ok(Inference { class: argmax(&outputs), outputs, hidden })
    }

    pub fn classify(&self, pattern: &Pattern) -> Result<usize> {
        Ok(self.infer(pattern)?.class)
    }
}

fn check_shape(map: &ConductancePairMap, expected: (usize, usize)) -> Result<()> {
    if map.plus.dim() != expected {
        return Err(SimError::Shape(format!(
            "layer {} map is {:?}, topology needs {:?}",
            map.layer,
            map.plus.dim(),
            expected
        )));
    }
    Ok(())
}

/// `(class, output voltages)` of `pattern`.
pub fn infer(net: &Network, pattern: &Pattern) -> Result<(usize, Vec<f64>)> {
    let r = net.infer(pattern)?;
    Ok((r.class, r.outputs))
}

/// Ideal-line network held as signed weight matrices (siemens); the fast
/// path for software evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightNetwork {
    pub topology: NetworkTopology,
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
}

impl WeightNetwork {
    pub fn new(topology: NetworkTopology, w1: Array2<f64>, w2: Array2<f64>) -> Result<Self> {
        topology.validate()?;
        if w1.dim() != topology.layer1_shape() || w2.dim() != topology.layer2_shape() {
            return Err(SimError::Shape(format!(
                "weights {:?}/{:?} vs topology {:?}/{:?}",
                w1.dim(),
                w2.dim(),
                topology.layer1_shape(),
                topology.layer2_shape()
            )));
        }
        Ok(Self { topology, w1, w2 })
    }

    pub fn from_maps(topology: NetworkTopology, l1: &ConductancePairMap, l2: &ConductancePairMap) -> Result<Self> {
        Self::new(topology, l1.weights(), l2.weights())
    }

    pub fn infer(&self, pattern: &Pattern) -> Inference {
        let t = &self.topology;
        let v_in = Array1::from(t.encode(pattern));
        let hidden: Vec<f64> = self.w1.dot(&v_in).iter().map(|&d| t.hidden(d)).collect();
        let mut v_h = Array1::from(hidden.clone());
        v_h = ndarray::concatenate![ndarray::Axis(0), v_h, Array1::from(vec![t.bias_level])];
        let outputs: Vec<f64> = self.w2.dot(&v_h).iter().map(|&d| t.output(d)).collect();
        Inference { class: argmax(&outputs), outputs, hidden }
    }

    pub fn classify(&self, pattern: &Pattern) -> Result<usize> {
        Ok(self.infer(pattern).class)
    }
}

/// One row of the per-pattern output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub pattern_id: usize,
    pub outputs: Vec<f64>,
    pub predicted: Letter,
    pub label: Letter,
}

pub fn write_output_records<W: Write>(writer: W, records: &[OutputRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let n = records.first().map_or(0, |r| r.outputs.len());
    let mut header = vec!["pattern_id".to_string()];
    header.extend((0..n).map(|k| format!("v_out_{k}")));
    header.extend(["predicted".to_string(), "label".to_string()]);
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.pattern_id.to_string()];
        row.extend(r.outputs.iter().map(|v| format!("{v:.9e}")));
        row.push(r.predicted.to_string());
        row.push(r.label.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
