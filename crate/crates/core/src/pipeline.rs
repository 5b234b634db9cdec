//! End-to-end experiment flows on simulated hardware: fabricate two
//! crossbars, form them, train (ex-situ or in-situ), import, and measure.

use serde::{Deserialize, Serialize};

use crate::benchmark::{evaluate_fidelity, import_error_sigma, FidelityReport, ImportSigma, Letter, Pattern};
use crate::crossbar::{build_crossbar, Crossbar, IDEAL};
use crate::device::{DeviceVariationSpec, FormingVariation};
use crate::error::{Result, SimError};
use crate::forming::{block_targets, form_all, FormingReport, FormingSpec};
use crate::mlp::{ConductancePairMap, Network, NetworkTopology, WeightNetwork};
use crate::rng::{derive_seed, DEVICE_STREAM};
use crate::training::{training_strategies, ManhattanConfig, TrainingConfig, TrainingContext, TrainingOutcome};
use crate::tuning::{import_block, ImportReport, TuningSpec};

/// Probability that a device is stuck from fabrication, before forming.
pub const PIPELINE_STUCK_PROBABILITY: f64 = 0.009;

/// Device population used by the hardware pipelines: pristine devices that
/// need forming and a small fraction of stuck cells.
pub fn pipeline_device_spec() -> DeviceVariationSpec {
    DeviceVariationSpec {
        stuck_probability: PIPELINE_STUCK_PROBABILITY,
        forming: Some(FormingVariation::default()),
        ..DeviceVariationSpec::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Root seed; device sampling and training initialisation derive from it.
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub device: DeviceVariationSpec,
    pub wire_segment_resistance: f64,
    pub line_model: String,
    pub forming: FormingSpec,
    /// Write-and-verify settings used to import trained conductances.
    pub import_tuning: TuningSpec,
    pub training: TrainingConfig,
    pub manhattan: ManhattanConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rows: 20,
            cols: 20,
            device: pipeline_device_spec(),
            wire_segment_resistance: 0.0,
            line_model: IDEAL.to_string(),
            forming: FormingSpec::default(),
            import_tuning: TuningSpec::with_tolerance(0.30),
            training: TrainingConfig::default(),
            manhattan: ManhattanConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(SimError::Config(format!("crossbar must be non-empty, got {}x{}", self.rows, self.cols)));
        }
        if !(self.wire_segment_resistance.is_finite() && self.wire_segment_resistance >= 0.0) {
            return Err(SimError::Config(format!(
                "wire segment resistance must be finite and non-negative, got {}",
                self.wire_segment_resistance
            )));
        }
        crate::crossbar::line_models().get(&self.line_model)?;
        self.device.validate()?;
        self.forming.validate()?;
        self.import_tuning.validate()?;
        self.training.validate()?;
        self.manhattan.validate()
    }

    /// Training settings with the seed taken from the root seed.
    pub fn seeded_training(&self) -> TrainingConfig {
        TrainingConfig { seed: self.seed, ..self.training.clone() }
    }
}

/// Device seed of crossbar `index` (1-based layer number).
pub fn crossbar_seed(root: u64, index: usize) -> u64 {
    derive_seed(derive_seed(root, DEVICE_STREAM), &format!("crossbar-{index}"))
}

/// The two crossbars of the network after forming.
#[derive(Clone, Debug)]
pub struct Hardware {
    pub layer1: Crossbar,
    pub layer2: Crossbar,
    pub forming: [FormingReport; 2],
}

impl Hardware {
    /// Fraction of devices in both arrays that cannot be programmed.
    pub fn defect_fraction(&self) -> f64 {
        let all = self.layer1.devices().iter().chain(self.layer2.devices());
        let (stuck, total) = all.fold((0usize, 0usize), |(s, t), d| (s + usize::from(d.stuck), t + 1));
        stuck as f64 / total as f64
    }
}

/// Sample and form both crossbars.
pub fn fabricate(cfg: &PipelineConfig) -> Result<Hardware> {
    cfg.validate()?;
    let build = |index: usize| -> Result<(Crossbar, FormingReport)> {
        let mut x = build_crossbar(cfg.rows, cfg.cols, &cfg.device, cfg.wire_segment_resistance, crossbar_seed(cfg.seed, index))?
            .with_line_model(&cfg.line_model)?;
        let report = form_all(&mut x, &block_targets(cfg.rows, cfg.cols), &cfg.forming)?;
        Ok((x, report))
    };
    let (layer1, f1) = build(1)?;
    let (layer2, f2) = build(2)?;
    Ok(Hardware { layer1, layer2, forming: [f1, f2] })
}

/// Tune both layers' pair blocks to the given maps, leaving stuck devices alone.
pub fn import_pairs(
    hw: &mut Hardware,
    layer1: &ConductancePairMap,
    layer2: &ConductancePairMap,
    spec: &TuningSpec,
) -> Result<[ImportReport; 2]> {
    Ok([
        import_block(&mut hw.layer1, 0, 0, &layer1.interleaved(), spec, true)?,
        import_block(&mut hw.layer2, 0, 0, &layer2.interleaved(), spec, true)?,
    ])
}

/// Fidelity on the training and test sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityPair {
    pub train: FidelityReport,
    pub test: FidelityReport,
}

pub fn evaluate_pair<F>(model: F, train: &[Pattern], test: &[Pattern], classes: &[Letter]) -> Result<FidelityPair>
where
    F: Fn(&Pattern) -> Result<usize>,
{
    Ok(FidelityPair {
        train: evaluate_fidelity(&model, train, classes)?,
        test: evaluate_fidelity(&model, test, classes)?,
    })
}

/// Everything measured in one ex-situ hardware run.
#[derive(Clone, Debug)]
pub struct ExSituRun {
    pub training: TrainingOutcome,
    /// Fidelity of the software model the weights came from.
    pub software: FidelityPair,
    /// Fidelity measured on the crossbars after import.
    pub hardware: FidelityPair,
    pub defect_fraction: f64,
    pub imports: [ImportReport; 2],
    pub hw: Hardware,
}

/// Fabricate, form, train with `strategy` (an ex-situ strategy name),
/// import at the configured tolerance, and run inference on the crossbars.
pub fn run_ex_situ(
    cfg: &PipelineConfig,
    strategy: &str,
    topology: &NetworkTopology,
    train: &[Pattern],
    test: &[Pattern],
    classes: &[Letter],
) -> Result<ExSituRun> {
    let strategy = training_strategies().get(strategy)?;
    let mut hw = fabricate(cfg)?;
    let training = {
        let mut ctx = TrainingContext {
            topology: topology.clone(),
            patterns: train,
            classes,
            config: cfg.seeded_training(),
            manhattan: cfg.manhattan.clone(),
            hardware: Some((&mut hw.layer1, &mut hw.layer2)),
        };
        strategy.train(&mut ctx)?
    };
    let soft = WeightNetwork::from_maps(topology.clone(), &training.layer1, &training.layer2)?;
    let software = evaluate_pair(|p| soft.classify(p), train, test, classes)?;
    let imports = import_pairs(&mut hw, &training.layer1, &training.layer2, &cfg.import_tuning)?;
    let net = Network::from_crossbars(topology.clone(), &hw.layer1, &hw.layer2)?;
    let hardware = evaluate_pair(|p| net.classify(p), train, test, classes)?;
    Ok(ExSituRun { training, software, hardware, defect_fraction: hw.defect_fraction(), imports, hw })
}

/// Import `layer1`/`layer2` into defect-free crossbars with the configured
/// tuning and measure the resulting weight error in precision-sweep units.
pub fn measure_import_sigma(cfg: &PipelineConfig, layer1: &ConductancePairMap, layer2: &ConductancePairMap) -> Result<ImportSigma> {
    let clean = PipelineConfig {
        device: DeviceVariationSpec { stuck_probability: 0.0, forming: None, ..cfg.device.clone() },
        ..cfg.clone()
    };
    let mut hw = fabricate(&clean)?;
    import_pairs(&mut hw, layer1, layer2, &clean.import_tuning)?;
    let back1 = ConductancePairMap::from_crossbar(&hw.layer1, layer1.neurons(), layer1.inputs(), 1)?;
    let back2 = ConductancePairMap::from_crossbar(&hw.layer2, layer2.neurons(), layer2.inputs(), 2)?;
    import_error_sigma([&layer1.weights(), &layer2.weights()], [&back1.weights(), &back2.weights()])
}

/// Fabricate, form, and train in-situ on the crossbars.
pub fn run_in_situ(
    cfg: &PipelineConfig,
    topology: &NetworkTopology,
    train: &[Pattern],
    classes: &[Letter],
) -> Result<(TrainingOutcome, Hardware)> {
    let mut hw = fabricate(cfg)?;
    let outcome = crate::training::train_in_situ_manhattan(
        topology,
        &mut hw.layer1,
        &mut hw.layer2,
        train,
        classes,
        &cfg.seeded_training(),
        &cfg.manhattan,
    )?;
    Ok((outcome, hw))
}
