//! Training: ex-situ backpropagation in the conductance domain (with or
//! without knowledge of defective devices) and in-situ fixed-amplitude
//! training against simulated crossbars.
//!
//! Ex-situ training optimises the pair conductances `G⁺`, `G⁻` directly,
//! kept in microsiemens internally so that the learning rate has a
//! device-friendly scale; every step clips both conductances to the
//! configured interval.

use std::io::Write;
use std::sync::LazyLock;

use ndarray::{s, Array1, Array2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::benchmark::{class_index, Letter, Pattern};
use crate::crossbar::{write_row, BiasKind, BiasScheme, Crossbar};
use crate::device::{Interval, REFERENCE_PULSE_WIDTH};
use crate::error::{Result, SimError};
use crate::mlp::{argmax, ConductancePairMap, Network, NetworkTopology};
use crate::registry::{Named, Registry};
use crate::rng::{stream_rng, TRAINING_INIT_STREAM};
use crate::tuning::{import_block, TuningSpec};

const MICRO: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Step size applied to gradients taken with respect to conductances in µS.
    pub learning_rate: f64,
    pub epochs: usize,
    /// Full-batch gradient descent; `false` updates after every pattern.
    pub full_batch: bool,
    /// Output target magnitude (volts): `+target` for the true class, `−target` otherwise.
    pub target: f64,
    /// Allowed pair conductances (siemens).
    pub clip: Interval,
    /// Initial conductances are `clip.lo + U(0, init_span)` (siemens).
    pub init_span: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.3,
            epochs: 1000,
            full_batch: true,
            target: 10.0,
            clip: Interval::new(10e-6, 100e-6),
            init_span: 9e-6,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip.is_valid() && self.clip.lo > 0.0) {
            return Err(SimError::Config(format!("clip interval must be positive and ordered: {:?}", self.clip)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(SimError::Config(format!("learning rate {} must be finite and non-negative", self.learning_rate)));
        }
        if !(self.target.is_finite() && self.target > 0.0) {
            return Err(SimError::Config(format!("target {} must be positive", self.target)));
        }
        if !(self.init_span >= 0.0 && self.init_span <= self.clip.width()) {
            return Err(SimError::Config(format!("init span {} must lie within the clip width", self.init_span)));
        }
        Ok(())
    }
}

/// Stuck conductances (siemens) on each layer's interleaved pair grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectMap {
    pub layer1: Array2<Option<f64>>,
    pub layer2: Array2<Option<f64>>,
}

impl DefectMap {
    pub fn none(topology: &NetworkTopology) -> Self {
        let (n1, i1) = topology.layer1_shape();
        let (n2, i2) = topology.layer2_shape();
        Self {
            layer1: Array2::from_elem((2 * n1, i1), None),
            layer2: Array2::from_elem((2 * n2, i2), None),
        }
    }

    /// Read the stuck devices of the blocks each layer occupies.
    pub fn from_crossbars(topology: &NetworkTopology, layer1: &Crossbar, layer2: &Crossbar) -> Result<Self> {
        let grab = |xbar: &Crossbar, (n, i): (usize, usize)| -> Result<Array2<Option<f64>>> {
            let mut grid = Array2::from_elem((2 * n, i), None);
            for r in 0..2 * n {
                for c in 0..i {
                    let d = xbar.device(r, c)?;
                    if d.stuck {
                        grid[[r, c]] = Some(d.effective_conductance());
                    }
                }
            }
            Ok(grid)
        };
        Ok(Self {
            layer1: grab(layer1, topology.layer1_shape())?,
            layer2: grab(layer2, topology.layer2_shape())?,
        })
    }

    pub fn count(&self) -> usize {
        self.layer1.iter().chain(self.layer2.iter()).filter(|d| d.is_some()).count()
    }

    fn check(&self, topology: &NetworkTopology) -> Result<()> {
        let (n1, i1) = topology.layer1_shape();
        let (n2, i2) = topology.layer2_shape();
        if self.layer1.dim() != (2 * n1, i1) || self.layer2.dim() != (2 * n2, i2) {
            return Err(SimError::Shape(format!(
                "defect map {:?}/{:?} does not match the topology",
                self.layer1.dim(),
                self.layer2.dim()
            )));
        }
        Ok(())
    }
}

/// Result of mapping signed weights onto pairs around a bias conductance.
#[derive(Clone, Debug, PartialEq)]
pub struct PairMapping {
    pub map: ConductancePairMap,
    /// Number of weights that had to be clipped to fit the interval.
    pub clipped: usize,
}

/// `G± = g_bias ± W/2`, clipping weights whose pair would leave `clip`.
pub fn weights_to_pairs(w: &Array2<f64>, g_bias: f64, clip: Interval, layer: u8) -> Result<PairMapping> {
    if !(clip.is_valid() && clip.contains(g_bias)) {
        return Err(SimError::Config(format!("bias {g_bias} S outside clip interval {clip:?}")));
    }
    let limit = 2.0 * (g_bias - clip.lo).min(clip.hi - g_bias);
    let mut clipped = 0;
    let wc = w.mapv(|x| {
        if x.abs() > limit {
            clipped += 1;
            x.clamp(-limit, limit)
        } else {
            x
        }
    });
    // The final clamp only absorbs rounding at the interval edges.
    let plus = wc.mapv(|x| clip.clamp(g_bias + x / 2.0));
    let minus = wc.mapv(|x| clip.clamp(g_bias - x / 2.0));
    Ok(PairMapping { map: ConductancePairMap::new(plus, minus, layer)?, clipped })
}

/// `W = G⁺ − G⁻`.
pub fn pairs_to_weights(map: &ConductancePairMap) -> Array2<f64> {
    map.weights()
}

/// Patterns encoded as input voltages with one-hot ±target outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `(patterns, n_inputs + 1)` column voltages including the bias.
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    /// `(patterns, classes)` target output voltages.
    pub targets: Array2<f64>,
}

impl Dataset {
    pub fn new(topology: &NetworkTopology, patterns: &[Pattern], classes: &[Letter], target: f64) -> Result<Self> {
        if patterns.is_empty() {
            return Err(SimError::Domain("empty dataset".into()));
        }
        if classes.len() != topology.n_outputs {
            return Err(SimError::Shape(format!(
                "{} classes for {} output neurons",
                classes.len(),
                topology.n_outputs
            )));
        }
        let n_in = topology.n_inputs + 1;
        let mut inputs = Array2::zeros((patterns.len(), n_in));
        let mut targets = Array2::from_elem((patterns.len(), classes.len()), -target);
        let mut labels = Vec::with_capacity(patterns.len());
        for (p, pat) in patterns.iter().enumerate() {
            inputs.row_mut(p).assign(&Array1::from(topology.encode(pat)));
            let k = class_index(classes, pat.label)?;
            targets[[p, k]] = target;
            labels.push(k);
        }
        Ok(Self { inputs, labels, targets })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn subset(&self, p: usize) -> Self {
        Self {
            inputs: self.inputs.slice(s![p..p + 1, ..]).to_owned(),
            labels: vec![self.labels[p]],
            targets: self.targets.slice(s![p..p + 1, ..]).to_owned(),
        }
    }
}

/// Loss and weight gradients of one evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    pub grad_w1: Array2<f64>,
    pub grad_w2: Array2<f64>,
    /// Number of patterns whose output argmax matches the label.
    pub correct: usize,
}

/// MSE `E = 1/(2P)·Σ(o − t)²` of the two-layer network and its gradients with
/// respect to the weights. Weights are in siemens; `scale` multiplies weights
/// before the transimpedance gain, so passing microsiemens with
/// `scale = 1e-6` gives gradients per microsiemens.
fn loss_and_gradient_scaled(
    topology: &NetworkTopology,
    w1: &Array2<f64>,
    w2: &Array2<f64>,
    data: &Dataset,
    scale: f64,
) -> LossGradient {
    let k = topology.transimpedance_gain * scale;
    let s = topology.hidden_saturation;
    let p = data.len() as f64;
    let a = data.inputs.dot(&w1.t()) * k;
    let th = a.mapv(f64::tanh);
    let h = &th * s;
    let bias = Array2::from_elem((data.len(), 1), topology.bias_level);
    let hb = ndarray::concatenate![Axis(1), h, bias];
    let o = hb.dot(&w2.t()) * k;
    let diff = &o - &data.targets;
    let loss = 0.5 * diff.mapv(|x| x * x).sum() / p;
    let d = diff / p;
    let grad_w2 = d.t().dot(&hb) * k;
    let dh = d.dot(&w2.slice(s![.., ..topology.n_hidden])) * k;
    let da = dh * th.mapv(|t| s * (1.0 - t * t));
    let grad_w1 = da.t().dot(&data.inputs) * k;
    let correct = o
        .outer_iter()
        .zip(&data.labels)
        .filter(|(row, &l)| argmax(&row.to_vec()) == l)
        .count();
    LossGradient { loss, grad_w1, grad_w2, correct }
}

/// MSE loss and exact weight gradients (weights in siemens).
pub fn loss_and_gradient(topology: &NetworkTopology, w1: &Array2<f64>, w2: &Array2<f64>, data: &Dataset) -> LossGradient {
    loss_and_gradient_scaled(topology, w1, w2, data, 1.0)
}

/// One point of a training curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub mse: f64,
    /// Training-set classification fidelity.
    pub fidelity: f64,
}

pub fn write_curve_csv<W: Write>(writer: W, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "mse", "fidelity"])?;
    for c in curve {
        w.write_record([c.epoch.to_string(), format!("{:.9e}", c.mse), format!("{:.6}", c.fidelity)])?;
    }
    w.flush()?;
    Ok(())
}

/// Trained (or read-back) pair maps with the history that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingOutcome {
    pub layer1: ConductancePairMap,
    pub layer2: ConductancePairMap,
    /// Entry `e` describes the state after `e` epochs.
    pub curve: Vec<CurvePoint>,
    /// Half-selected devices disturbed during in-situ updates.
    pub disturbed: usize,
}

impl TrainingOutcome {
    pub fn final_fidelity(&self) -> f64 {
        self.curve.last().map_or(0.0, |c| c.fidelity)
    }
}

/// Pair conductances of both layers in microsiemens.
struct PairParams {
    plus: [Array2<f64>; 2],
    minus: [Array2<f64>; 2],
    /// Stuck values (µS) on the plus/minus grids.
    frozen_plus: [Array2<Option<f64>>; 2],
    frozen_minus: [Array2<Option<f64>>; 2],
}

impl PairParams {
    fn init(topology: &NetworkTopology, cfg: &TrainingConfig, defects: Option<&DefectMap>) -> Result<Self> {
        let mut rng = stream_rng(cfg.seed, TRAINING_INIT_STREAM);
        let lo = cfg.clip.lo / MICRO;
        let span = cfg.init_span / MICRO;
        let mut draw = |shape: (usize, usize)| Array2::from_shape_simple_fn(shape, || lo + rng.gen::<f64>() * span);
        let shapes = [topology.layer1_shape(), topology.layer2_shape()];
        let plus = [draw(shapes[0]), draw(shapes[1])];
        let minus = [draw(shapes[0]), draw(shapes[1])];
        let none = |sh: (usize, usize)| Array2::from_elem(sh, None);
        let (frozen_plus, frozen_minus) = match defects {
            None => ([none(shapes[0]), none(shapes[1])], [none(shapes[0]), none(shapes[1])]),
            Some(d) => {
                d.check(topology)?;
                let split = |grid: &Array2<Option<f64>>, parity: usize| {
                    let (rows, cols) = grid.dim();
                    Array2::from_shape_fn((rows / 2, cols), |(j, i)| grid[[2 * j + parity, i]].map(|g| g / MICRO))
                };
                ([split(&d.layer1, 0), split(&d.layer2, 0)], [split(&d.layer1, 1), split(&d.layer2, 1)])
            }
        };
        let mut params = Self { plus, minus, frozen_plus, frozen_minus };
        params.apply_frozen();
        Ok(params)
    }

    fn apply_frozen(&mut self) {
        for l in 0..2 {
            Zip::from(&mut self.plus[l]).and(&self.frozen_plus[l]).for_each(|g, f| {
                if let Some(v) = f {
                    *g = *v;
                }
            });
            Zip::from(&mut self.minus[l]).and(&self.frozen_minus[l]).for_each(|g, f| {
                if let Some(v) = f {
                    *g = *v;
                }
            });
        }
    }

    fn weights(&self, l: usize) -> Array2<f64> {
        &self.plus[l] - &self.minus[l]
    }

    /// `G⁺ −= lr·∂E/∂W`, `G⁻ += lr·∂E/∂W`, clipped; stuck cells stay put.
    fn step(&mut self, grads: [&Array2<f64>; 2], lr: f64, lo: f64, hi: f64) {
        for (l, grad) in grads.into_iter().enumerate() {
            Zip::from(&mut self.plus[l]).and(&self.frozen_plus[l]).and(grad).for_each(|g, f, &d| {
                if f.is_none() {
                    *g = (*g - lr * d).clamp(lo, hi);
                }
            });
            Zip::from(&mut self.minus[l]).and(&self.frozen_minus[l]).and(grad).for_each(|g, f, &d| {
                if f.is_none() {
                    *g = (*g + lr * d).clamp(lo, hi);
                }
            });
        }
    }

    fn into_maps(self) -> Result<(ConductancePairMap, ConductancePairMap)> {
        let [p1, p2] = self.plus;
        let [m1, m2] = self.minus;
        Ok((
            ConductancePairMap::new(p1 * MICRO, m1 * MICRO, 1)?,
            ConductancePairMap::new(p2 * MICRO, m2 * MICRO, 2)?,
        ))
    }
}

fn divergence(epoch: usize, loss: f64) -> SimError {
    SimError::Divergence(format!("non-finite training loss ({loss}) at epoch {epoch}; reduce the learning rate"))
}

/// Backpropagation training of the 2-layer pair network. With `defects`,
/// stuck devices take part in the forward model at their stuck conductance
/// and are never updated (hardware-aware training).
pub fn train_ex_situ(
    topology: &NetworkTopology,
    patterns: &[Pattern],
    classes: &[Letter],
    cfg: &TrainingConfig,
    defects: Option<&DefectMap>,
) -> Result<TrainingOutcome> {
    topology.validate()?;
    cfg.validate()?;
    let data = Dataset::new(topology, patterns, classes, cfg.target)?;
    let mut params = PairParams::init(topology, cfg, defects)?;
    let (lo, hi) = (cfg.clip.lo / MICRO, cfg.clip.hi / MICRO);
    let singles: Vec<Dataset> = if cfg.full_batch { Vec::new() } else { (0..data.len()).map(|p| data.subset(p)).collect() };
    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..=cfg.epochs {
        let lg = loss_and_gradient_scaled(topology, &params.weights(0), &params.weights(1), &data, MICRO);
        if !lg.loss.is_finite() {
            return Err(divergence(epoch, lg.loss));
        }
        curve.push(CurvePoint { epoch, mse: lg.loss, fidelity: lg.correct as f64 / data.len() as f64 });
        if epoch == cfg.epochs {
            break;
        }
        if cfg.full_batch {
            params.step([&lg.grad_w1, &lg.grad_w2], cfg.learning_rate, lo, hi);
        } else {
            for single in &singles {
                let g = loss_and_gradient_scaled(topology, &params.weights(0), &params.weights(1), single, MICRO);
                params.step([&g.grad_w1, &g.grad_w2], cfg.learning_rate, lo, hi);
            }
        }
    }
    let (layer1, layer2) = params.into_maps()?;
    Ok(TrainingOutcome { layer1, layer2, curve, disturbed: 0 })
}

/// Best single-layer (inputs + bias → outputs, linear output stage) model
/// trained with the same loss, clipping, and schedule; returns its pair map
/// and training curve.
pub fn train_single_layer(
    topology: &NetworkTopology,
    patterns: &[Pattern],
    classes: &[Letter],
    cfg: &TrainingConfig,
) -> Result<(ConductancePairMap, Vec<CurvePoint>)> {
    topology.validate()?;
    cfg.validate()?;
    let data = Dataset::new(topology, patterns, classes, cfg.target)?;
    let mut rng = stream_rng(cfg.seed, TRAINING_INIT_STREAM);
    let (lo, hi) = (cfg.clip.lo / MICRO, cfg.clip.hi / MICRO);
    let span = cfg.init_span / MICRO;
    let shape = (topology.n_outputs, topology.n_inputs + 1);
    let mut plus = Array2::from_shape_simple_fn(shape, || lo + rng.gen::<f64>() * span);
    let mut minus = Array2::from_shape_simple_fn(shape, || lo + rng.gen::<f64>() * span);
    let k = topology.transimpedance_gain * MICRO;
    let p = data.len() as f64;
    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..=cfg.epochs {
        let w = &plus - &minus;
        let o = data.inputs.dot(&w.t()) * k;
        let diff = &o - &data.targets;
        let loss = 0.5 * diff.mapv(|x| x * x).sum() / p;
        if !loss.is_finite() {
            return Err(divergence(epoch, loss));
        }
        let correct = o
            .outer_iter()
            .zip(&data.labels)
            .filter(|(row, &l)| argmax(&row.to_vec()) == l)
            .count();
        curve.push(CurvePoint { epoch, mse: loss, fidelity: correct as f64 / p });
        if epoch == cfg.epochs {
            break;
        }
        let grad = (diff / p).t().dot(&data.inputs) * k;
        Zip::from(&mut plus).and(&grad).for_each(|g, &d| *g = (*g - cfg.learning_rate * d).clamp(lo, hi));
        Zip::from(&mut minus).and(&grad).for_each(|g, &d| *g = (*g + cfg.learning_rate * d).clamp(lo, hi));
    }
    Ok((ConductancePairMap::new(plus * MICRO, minus * MICRO, 1)?, curve))
}

/// Fixed-amplitude in-situ update settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManhattanConfig {
    /// Pulse magnitude (volts); set pulses use `+amplitude`, reset `−amplitude`.
    pub amplitude: f64,
    pub pulse_width: f64,
    pub bias: BiasKind,
    pub epochs: usize,
    /// Gradients with magnitude at or below this value produce no pulse.
    pub dead_zone: f64,
    /// Tune the used blocks to a fresh random initial state before training.
    pub initialize: bool,
    /// Tuning used for the initial state.
    pub init_tuning: TuningSpec,
}

impl Default for ManhattanConfig {
    fn default() -> Self {
        Self {
            amplitude: 1.3,
            pulse_width: REFERENCE_PULSE_WIDTH,
            bias: BiasKind::VHalf,
            epochs: 30,
            dead_zone: 0.0,
            initialize: true,
            init_tuning: TuningSpec::with_tolerance(0.1),
        }
    }
}

impl ManhattanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0 && self.pulse_width > 0.0 && self.dead_zone >= 0.0) {
            return Err(SimError::Config(format!("invalid in-situ configuration: {self:?}")));
        }
        self.init_tuning.validate()
    }
}

/// Training-set MSE and fidelity of the network as built on the hardware.
fn hardware_point(
    topology: &NetworkTopology,
    x1: &Crossbar,
    x2: &Crossbar,
    data: &Dataset,
    patterns: &[Pattern],
    epoch: usize,
) -> Result<CurvePoint> {
    let net = Network::from_crossbars(topology.clone(), x1, x2)?;
    let mut sq = 0.0;
    let mut correct = 0;
    for (p, pat) in patterns.iter().enumerate() {
        let inf = net.infer(pat)?;
        sq += inf.outputs.iter().zip(data.targets.row(p)).map(|(o, t)| (o - t).powi(2)).sum::<f64>();
        correct += usize::from(inf.class == data.labels[p]);
    }
    let n = patterns.len() as f64;
    Ok(CurvePoint { epoch, mse: 0.5 * sq / n, fidelity: correct as f64 / n })
}

/// Apply one row's updates in two parallel steps: set pulses on the devices
/// that must grow, then reset pulses on those that must shrink.
fn pulse_row(xbar: &mut Crossbar, row: usize, grow: &[bool], shrink: &[bool], cfg: &ManhattanConfig) -> Result<usize> {
    let scheme = |v: f64| BiasScheme { scheme: cfg.bias, write_voltage: v };
    let mut disturbed = 0;
    for (flags, v) in [(grow, cfg.amplitude), (shrink, -cfg.amplitude)] {
        if flags.iter().any(|&f| f) {
            disturbed += write_row(xbar, row, flags, &scheme(v), cfg.pulse_width)?.disturbed.len();
        }
    }
    Ok(disturbed)
}

/// Hardware-in-the-loop training: each epoch measures the network on the
/// crossbars, computes backprop gradient signs from the read-back weights,
/// and nudges every device with one fixed-amplitude pulse of the right
/// polarity, one row at a time.
pub fn train_in_situ_manhattan(
    topology: &NetworkTopology,
    layer1: &mut Crossbar,
    layer2: &mut Crossbar,
    patterns: &[Pattern],
    classes: &[Letter],
    train_cfg: &TrainingConfig,
    cfg: &ManhattanConfig,
) -> Result<TrainingOutcome> {
    topology.validate()?;
    train_cfg.validate()?;
    cfg.validate()?;
    let data = Dataset::new(topology, patterns, classes, train_cfg.target)?;
    let shapes = [topology.layer1_shape(), topology.layer2_shape()];
    for (x, (n, i)) in [&*layer1, &*layer2].into_iter().zip(shapes) {
        if 2 * n > x.rows() || i > x.cols() {
            return Err(SimError::Shape(format!("{n}x{i} pair layer does not fit a {}x{} crossbar", x.rows(), x.cols())));
        }
    }
    if cfg.initialize {
        let init = PairParams::init(topology, train_cfg, None)?;
        for (l, x) in [&mut *layer1, &mut *layer2].into_iter().enumerate() {
            let map = ConductancePairMap::new(&init.plus[l] * MICRO, &init.minus[l] * MICRO, l as u8 + 1)?;
            import_block(x, 0, 0, &map.interleaved(), &cfg.init_tuning, true)?;
        }
    }
    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    let mut disturbed = 0;
    for epoch in 0..=cfg.epochs {
        curve.push(hardware_point(topology, layer1, layer2, &data, patterns, epoch)?);
        if epoch == cfg.epochs {
            break;
        }
        let m1 = ConductancePairMap::from_crossbar(layer1, shapes[0].0, shapes[0].1, 1)?;
        let m2 = ConductancePairMap::from_crossbar(layer2, shapes[1].0, shapes[1].1, 2)?;
        let lg = loss_and_gradient(topology, &m1.weights(), &m2.weights(), &data);
        if !lg.loss.is_finite() {
            return Err(divergence(epoch, lg.loss));
        }
        for (x, grad) in [(&mut *layer1, &lg.grad_w1), (&mut *layer2, &lg.grad_w2)] {
            let cols = x.cols();
            for (j, g) in grad.outer_iter().enumerate() {
                // W too large (g > 0): shrink G⁺, grow G⁻; and vice versa.
                let up: Vec<bool> = (0..cols).map(|i| i < g.len() && g[i] < -cfg.dead_zone).collect();
                let down: Vec<bool> = (0..cols).map(|i| i < g.len() && g[i] > cfg.dead_zone).collect();
                disturbed += pulse_row(x, 2 * j, &up, &down, cfg)?;
                disturbed += pulse_row(x, 2 * j + 1, &down, &up, cfg)?;
            }
        }
    }
    Ok(TrainingOutcome {
        layer1: ConductancePairMap::from_crossbar(layer1, shapes[0].0, shapes[0].1, 1)?,
        layer2: ConductancePairMap::from_crossbar(layer2, shapes[1].0, shapes[1].1, 2)?,
        curve,
        disturbed,
    })
}

/// Centered moving average of a series (window shrinks at the ends).
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Inputs shared by every training strategy.
pub struct TrainingContext<'a> {
    pub topology: NetworkTopology,
    pub patterns: &'a [Pattern],
    pub classes: &'a [Letter],
    pub config: TrainingConfig,
    pub manhattan: ManhattanConfig,
    /// Crossbars for the two layers, required by hardware-aware and in-situ training.
    pub hardware: Option<(&'a mut Crossbar, &'a mut Crossbar)>,
}

pub trait TrainingStrategy: Named + Send + Sync {
    fn train(&self, ctx: &mut TrainingContext<'_>) -> Result<TrainingOutcome>;
}

fn require_hardware<'c, 'a>(ctx: &'c mut TrainingContext<'a>, who: &str) -> Result<(&'c mut Crossbar, &'c mut Crossbar)> {
    match ctx.hardware.as_mut() {
        Some((a, b)) => Ok((&mut **a, &mut **b)),
        None => Err(SimError::Config(format!("{who} training needs crossbar snapshots for both layers"))),
    }
}

pub const EX_SITU_OBLIVIOUS: &str = "ex-situ-oblivious";
pub const EX_SITU_AWARE: &str = "ex-situ-aware";
pub const IN_SITU: &str = "in-situ";

/// Software training that ignores device defects.
pub struct ExSituOblivious;

impl Named for ExSituOblivious {
    fn name(&self) -> &'static str {
        EX_SITU_OBLIVIOUS
    }
}

impl TrainingStrategy for ExSituOblivious {
    fn train(&self, ctx: &mut TrainingContext<'_>) -> Result<TrainingOutcome> {
        train_ex_situ(&ctx.topology, ctx.patterns, ctx.classes, &ctx.config, None)
    }
}

/// Software training with the crossbars' stuck devices frozen in the model.
pub struct ExSituAware;

impl Named for ExSituAware {
    fn name(&self) -> &'static str {
        EX_SITU_AWARE
    }
}

impl TrainingStrategy for ExSituAware {
    fn train(&self, ctx: &mut TrainingContext<'_>) -> Result<TrainingOutcome> {
        let topology = ctx.topology.clone();
        let (x1, x2) = require_hardware(ctx, EX_SITU_AWARE)?;
        let defects = DefectMap::from_crossbars(&topology, x1, x2)?;
        train_ex_situ(&topology, ctx.patterns, ctx.classes, &ctx.config, Some(&defects))
    }
}

/// Fixed-amplitude hardware-in-the-loop training.
pub struct InSitu;

impl Named for InSitu {
    fn name(&self) -> &'static str {
        IN_SITU
    }
}

impl TrainingStrategy for InSitu {
    fn train(&self, ctx: &mut TrainingContext<'_>) -> Result<TrainingOutcome> {
        let topology = ctx.topology.clone();
        let (patterns, classes) = (ctx.patterns, ctx.classes);
        let (config, manhattan) = (ctx.config.clone(), ctx.manhattan.clone());
        let (x1, x2) = require_hardware(ctx, IN_SITU)?;
        train_in_situ_manhattan(&topology, x1, x2, patterns, classes, &config, &manhattan)
    }
}

static STRATEGIES: LazyLock<Registry<dyn TrainingStrategy>> = LazyLock::new(|| {
    let mut r: Registry<dyn TrainingStrategy> = Registry::new("training strategy");
    r.register(Box::new(ExSituOblivious));
    r.register(Box::new(ExSituAware));
    r.register(Box::new(InSitu));
    r
});

/// All built-in training strategies, keyed by name.
pub fn training_strategies() -> &'static Registry<dyn TrainingStrategy> {
    &STRATEGIES
}
