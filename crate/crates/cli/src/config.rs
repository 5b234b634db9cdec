//! Experiment configuration file (TOML).
//!
//! Every section is optional and defaults to the library defaults; unknown
//! keys are errors. Physical quantities are unit-suffixed strings.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use memxbar::benchmark::{Letter, FOUR_CLASSES, THREE_CLASSES};
use memxbar::crossbar::{BiasKind, SwitchingWindow, COPPER_PRESET, EXPERIMENT_LIKE_PRESET, IDEAL};
use memxbar::device::{DeviceVariationSpec, FormingVariation, Interval};
use memxbar::forming::FormingSpec;
use memxbar::mlp::NetworkTopology;
use memxbar::pipeline::{pipeline_device_spec, PipelineConfig};
use memxbar::training::{ManhattanConfig, TrainingConfig};
use memxbar::tuning::TuningSpec;

use crate::units::{Ampere, Fraction, Ohm, PerVoltSquared, Quantity, Second, Siemens, Volt};

type V = Quantity<Volt>;
type S = Quantity<Siemens>;

fn range(lo: f64, hi: f64) -> [S; 2] {
    [S::new(lo), S::new(hi)]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FormingVariationSection {
    pub enabled: bool,
    pub preformed_probability: Fraction,
    pub pristine_conductance: S,
    pub forming_current_mu: Quantity<Ampere>,
    pub forming_current_sigma: Quantity<Ampere>,
}

impl Default for FormingVariationSection {
    fn default() -> Self {
        let f = FormingVariation::default();
        Self {
            enabled: true,
            preformed_probability: Fraction(f.preformed_probability),
            pristine_conductance: S::new(f.pristine_conductance),
            forming_current_mu: Quantity::new(f.forming_current_mu),
            forming_current_sigma: Quantity::new(f.forming_current_sigma),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceSection {
    pub set_mu: V,
    pub set_sigma: V,
    pub reset_mu: V,
    pub reset_sigma: V,
    pub stuck_probability: Fraction,
    pub stuck_conductance_range: [S; 2],
    pub g_init_range: [S; 2],
    pub g_min: S,
    pub g_max: S,
    pub nonlinearity_alpha: Quantity<PerVoltSquared>,
    pub kinetics_rate: S,
    pub kinetics_rate_spread: f64,
    pub kinetics_voltage_scale: V,
    pub forming: FormingVariationSection,
}

impl Default for DeviceSection {
    fn default() -> Self {
        let d = pipeline_device_spec();
        Self {
            set_mu: V::new(d.set_mu),
            set_sigma: V::new(d.set_sigma),
            reset_mu: V::new(d.reset_mu),
            reset_sigma: V::new(d.reset_sigma),
            stuck_probability: Fraction(d.stuck_probability),
            stuck_conductance_range: range(d.stuck_conductance_range.lo, d.stuck_conductance_range.hi),
            g_init_range: range(d.g_init_range.lo, d.g_init_range.hi),
            g_min: S::new(d.g_min),
            g_max: S::new(d.g_max),
            nonlinearity_alpha: Quantity::new(d.nonlinearity_alpha),
            kinetics_rate: S::new(d.kinetics_rate),
            kinetics_rate_spread: d.kinetics_rate_spread,
            kinetics_voltage_scale: V::new(d.kinetics_voltage_scale),
            forming: FormingVariationSection::default(),
        }
    }
}

impl DeviceSection {
    pub fn spec(&self) -> DeviceVariationSpec {
        let f = &self.forming;
        DeviceVariationSpec {
            set_mu: self.set_mu.si,
            set_sigma: self.set_sigma.si,
            reset_mu: self.reset_mu.si,
            reset_sigma: self.reset_sigma.si,
            stuck_probability: self.stuck_probability.0,
            stuck_conductance_range: Interval::new(self.stuck_conductance_range[0].si, self.stuck_conductance_range[1].si),
            g_init_range: Interval::new(self.g_init_range[0].si, self.g_init_range[1].si),
            g_min: self.g_min.si,
            g_max: self.g_max.si,
            nonlinearity_alpha: self.nonlinearity_alpha.si,
            kinetics_rate: self.kinetics_rate.si,
            kinetics_rate_spread: self.kinetics_rate_spread,
            kinetics_voltage_scale: self.kinetics_voltage_scale.si,
            forming: f.enabled.then_some(FormingVariation {
                preformed_probability: f.preformed_probability.0,
                pristine_conductance: f.pristine_conductance.si,
                forming_current_mu: f.forming_current_mu.si,
                forming_current_sigma: f.forming_current_sigma.si,
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossbarSection {
    pub rows: usize,
    pub cols: usize,
    pub wire_segment_resistance: Quantity<Ohm>,
    pub line_model: String,
}

impl Default for CrossbarSection {
    fn default() -> Self {
        Self { rows: 20, cols: 20, wire_segment_resistance: Quantity::new(0.0), line_model: IDEAL.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FormingSection {
    pub i_start: Quantity<Ampere>,
    pub i_stop: Quantity<Ampere>,
    pub i_step: Quantity<Ampere>,
    pub r_min_ratio: f64,
    pub v_reset: V,
    pub r_th: Quantity<Ohm>,
    pub v_check: V,
    pub max_attempts: usize,
    pub max_rounds: usize,
    pub ceiling_escalation: f64,
    pub low_state_conductance: S,
    pub reset_step: V,
    pub reset_floor: V,
    pub reset_max_pulses: usize,
    pub pulse_width: Quantity<Second>,
    /// Cells to form as `[row, col]`; all cells when absent.
    pub targets: Option<Vec<[usize; 2]>>,
}

impl Default for FormingSection {
    fn default() -> Self {
        let f = FormingSpec::default();
        Self {
            i_start: Quantity::new(f.i_start),
            i_stop: Quantity::new(f.i_stop),
            i_step: Quantity::new(f.i_step),
            r_min_ratio: f.r_min_ratio,
            v_reset: V::new(f.v_reset),
            r_th: Quantity::new(f.r_th),
            v_check: V::new(f.v_check),
            max_attempts: f.max_attempts,
            max_rounds: f.max_rounds,
            ceiling_escalation: f.ceiling_escalation,
            low_state_conductance: S::new(f.low_state_conductance),
            reset_step: V::new(f.reset_step),
            reset_floor: V::new(f.reset_floor),
            reset_max_pulses: f.reset_max_pulses,
            pulse_width: Quantity::new(f.pulse_width),
            targets: None,
        }
    }
}

impl FormingSection {
    pub fn spec(&self) -> FormingSpec {
        FormingSpec {
            i_start: self.i_start.si,
            i_stop: self.i_stop.si,
            i_step: self.i_step.si,
            r_min_ratio: self.r_min_ratio,
            v_reset: self.v_reset.si,
            r_th: self.r_th.si,
            v_check: self.v_check.si,
            max_attempts: self.max_attempts,
            max_rounds: self.max_rounds,
            ceiling_escalation: self.ceiling_escalation,
            low_state_conductance: self.low_state_conductance.si,
            reset_step: self.reset_step.si,
            reset_floor: self.reset_floor.si,
            reset_max_pulses: self.reset_max_pulses,
            pulse_width: self.pulse_width.si,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningSection {
    pub tolerance: Fraction,
    pub v_read: V,
    pub set_amplitude_range: [V; 2],
    pub reset_amplitude_range: [V; 2],
    pub pulse_width: Quantity<Second>,
    pub max_pulses: usize,
    pub amplitude_step: V,
    pub half_select_disturb: Option<BiasKind>,
}

impl Default for TuningSection {
    fn default() -> Self {
        Self::from_spec(&TuningSpec::default())
    }
}

impl TuningSection {
    fn from_spec(t: &TuningSpec) -> Self {
        Self {
            tolerance: Fraction(t.tolerance),
            v_read: V::new(t.v_read),
            set_amplitude_range: [V::new(t.set_amplitude_range.lo), V::new(t.set_amplitude_range.hi)],
            reset_amplitude_range: [V::new(t.reset_amplitude_range.lo), V::new(t.reset_amplitude_range.hi)],
            pulse_width: Quantity::new(t.pulse_width),
            max_pulses: t.max_pulses,
            amplitude_step: V::new(t.amplitude_step),
            half_select_disturb: t.half_select_disturb,
        }
    }

    pub fn spec(&self) -> TuningSpec {
        TuningSpec {
            tolerance: self.tolerance.0,
            v_read: self.v_read.si,
            set_amplitude_range: Interval::new(self.set_amplitude_range[0].si, self.set_amplitude_range[1].si),
            reset_amplitude_range: Interval::new(self.reset_amplitude_range[0].si, self.reset_amplitude_range[1].si),
            pulse_width: self.pulse_width.si,
            max_pulses: self.max_pulses,
            amplitude_step: self.amplitude_step.si,
            half_select_disturb: self.half_select_disturb,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImportSection {
    /// Write-and-verify tolerance used when importing trained weights.
    pub tolerance: Fraction,
}

impl Default for ImportSection {
    fn default() -> Self {
        Self { tolerance: Fraction(0.30) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub full_batch: bool,
    pub target: V,
    pub clip: [S; 2],
    pub init_span: S,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainingConfig::default();
        Self {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            full_batch: t.full_batch,
            target: V::new(t.target),
            clip: range(t.clip.lo, t.clip.hi),
            init_span: S::new(t.init_span),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManhattanSection {
    pub amplitude: V,
    pub pulse_width: Quantity<Second>,
    pub bias: BiasKind,
    pub epochs: usize,
    pub dead_zone: f64,
    pub initialize: bool,
    pub init_tolerance: Fraction,
    pub classes: Vec<Letter>,
}

impl Default for ManhattanSection {
    fn default() -> Self {
        let m = ManhattanConfig::default();
        Self {
            amplitude: V::new(m.amplitude),
            pulse_width: Quantity::new(m.pulse_width),
            bias: m.bias,
            epochs: m.epochs,
            dead_zone: m.dead_zone,
            initialize: m.initialize,
            init_tolerance: Fraction(m.init_tuning.tolerance),
            classes: THREE_CLASSES.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    /// Classes of the ex-situ network, in output-neuron order.
    pub classes: Vec<Letter>,
    /// Training patterns file; the built-in canonical set when absent.
    pub patterns: Option<PathBuf>,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self { classes: FOUR_CLASSES.to_vec(), patterns: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub sigmas: Vec<f64>,
    pub runs: usize,
    pub weight_limit: S,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            sigmas: vec![0.0, 0.02, 0.05, 0.1, 0.15, 0.2, 0.3],
            runs: 100,
            weight_limit: S::new(90e-6),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetEntry {
    pub name: String,
    pub segment_resistance: Quantity<Ohm>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowEntry {
    pub operation: String,
    pub v_th_min: V,
    pub v_th_max: V,
    pub g: S,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleSection {
    pub presets: Vec<PresetEntry>,
    pub windows: Vec<WindowEntry>,
    /// Longest ladder in the drop-curve output.
    pub curve_length: usize,
}

impl Default for ScaleSection {
    fn default() -> Self {
        let preset = |p: memxbar::crossbar::WirePreset| PresetEntry {
            name: p.name.into(),
            segment_resistance: Quantity::new(p.segment_resistance),
        };
        let window = |w: SwitchingWindow| WindowEntry {
            operation: w.operation,
            v_th_min: V::new(w.v_th_min),
            v_th_max: V::new(w.v_th_max),
            g: S::new(w.g),
        };
        Self {
            presets: vec![preset(EXPERIMENT_LIKE_PRESET), preset(COPPER_PRESET)],
            windows: vec![window(SwitchingWindow::set()), window(SwitchingWindow::reset())],
            curve_length: 512,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub device: DeviceSection,
    pub crossbar: CrossbarSection,
    pub forming: FormingSection,
    pub tuning: TuningSection,
    pub import: ImportSection,
    pub training: TrainingSection,
    pub manhattan: ManhattanSection,
    pub benchmark: BenchmarkSection,
    pub sweep: SweepSection,
    pub scale: ScaleSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn training_config(&self) -> TrainingConfig {
        let t = &self.training;
        TrainingConfig {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            full_batch: t.full_batch,
            target: t.target.si,
            clip: Interval::new(t.clip[0].si, t.clip[1].si),
            init_span: t.init_span.si,
            seed: self.seed,
        }
    }

    pub fn manhattan_config(&self) -> ManhattanConfig {
        let m = &self.manhattan;
        ManhattanConfig {
            amplitude: m.amplitude.si,
            pulse_width: m.pulse_width.si,
            bias: m.bias,
            epochs: m.epochs,
            dead_zone: m.dead_zone,
            initialize: m.initialize,
            init_tuning: TuningSpec { tolerance: m.init_tolerance.0, ..self.tuning.spec() },
        }
    }

    pub fn import_tuning(&self) -> TuningSpec {
        TuningSpec { tolerance: self.import.tolerance.0, ..self.tuning.spec() }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            seed: self.seed,
            rows: self.crossbar.rows,
            cols: self.crossbar.cols,
            device: self.device.spec(),
            wire_segment_resistance: self.crossbar.wire_segment_resistance.si,
            line_model: self.crossbar.line_model.clone(),
            forming: self.forming.spec(),
            import_tuning: self.import_tuning(),
            training: self.training_config(),
            manhattan: self.manhattan_config(),
        }
    }

    pub fn topology(&self, n_classes: usize) -> NetworkTopology {
        NetworkTopology::with_outputs(n_classes)
    }

    /// Check everything a subcommand might use, before any side effects.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.pipeline().validate()?;
        self.tuning.spec().validate()?;
        for (name, classes) in [("benchmark", &self.benchmark.classes), ("manhattan", &self.manhattan.classes)] {
            let mut unique = classes.clone();
            unique.sort_by_key(|c| c.to_string());
            unique.dedup();
            if classes.len() < 2 || unique.len() != classes.len() {
                bail!("[{name}] classes must list at least two distinct letters, got {classes:?}");
            }
            self.topology(classes.len()).validate()?;
        }
        if let Some(targets) = &self.forming.targets {
            if let Some(t) = targets.iter().find(|t| t[0] >= self.crossbar.rows || t[1] >= self.crossbar.cols) {
                bail!("[forming] target {t:?} is outside the {}x{} crossbar", self.crossbar.rows, self.crossbar.cols);
            }
        }
        if self.sweep.runs == 0 || self.sweep.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            bail!("[sweep] needs runs >= 1 and finite non-negative sigmas");
        }
        if !(self.sweep.weight_limit.si > 0.0) {
            bail!("[sweep] weight_limit must be positive");
        }
        if self.scale.curve_length == 0 || self.scale.presets.iter().any(|p| !(p.segment_resistance.si >= 0.0)) {
            bail!("[scale] needs curve_length >= 1 and non-negative segment resistances");
        }
        if self.scale.windows.iter().any(|w| !(w.g.si > 0.0)) {
            bail!("[scale] window conductances must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_library_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        cfg.validate().unwrap();
        let p = cfg.pipeline();
        assert_eq!(p.device, pipeline_device_spec());
        assert_eq!(p.forming, FormingSpec::default());
        assert_eq!(p.training, TrainingConfig::default());
        assert_eq!(p.import_tuning.tolerance, 0.30);
    }

    #[test]
    fn serialized_config_round_trips() {
        let mut cfg = ExperimentConfig { seed: 17, ..Default::default() };
        cfg.device.kinetics_rate = S::new(0.07e-6);
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn strictness() {
        assert!(ExperimentConfig::from_toml("[device]\ng_min = 2e-6").is_err());
        assert!(ExperimentConfig::from_toml("[device]\ng_mni = \"2uS\"").is_err());
        assert!(ExperimentConfig::from_toml("[training]\ntarget = \"10uS\"").is_err());
        let cfg = ExperimentConfig::from_toml("[crossbar]\nline_model = \"fibre\"").unwrap();
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig::from_toml("[benchmark]\nclasses = [\"A\", \"A\"]").unwrap();
        assert!(cfg.validate().is_err());
    }
}
