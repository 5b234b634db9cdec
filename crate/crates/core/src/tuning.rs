//! Write-and-verify conductance tuning.
//!
//! Each iteration reads the device; if it is outside the tolerance window a
//! pulse of the appropriate polarity is applied. Amplitudes start at the
//! weak end of the polarity's range and grow by `amplitude_step` with every
//! further pulse of the same polarity; an overshoot flips the polarity and
//! restarts the amplitude ladder.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::crossbar::{write_row, BiasKind, BiasScheme, Crossbar};
use crate::device::{Interval, DEFAULT_READ_VOLTAGE, REFERENCE_PULSE_WIDTH};
use crate::error::{Result, SimError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningSpec {
    /// Allowed relative error `|G − target|/target`.
    pub tolerance: f64,
    pub v_read: f64,
    pub set_amplitude_range: Interval,
    pub reset_amplitude_range: Interval,
    pub pulse_width: f64,
    pub max_pulses: usize,
    pub amplitude_step: f64,
    /// When set, pulses are delivered through the array with this biasing
    /// scheme, so half-selected devices see a fraction of each pulse.
    pub half_select_disturb: Option<BiasKind>,
}

impl Default for TuningSpec {
    fn default() -> Self {
        Self {
            tolerance: 0.05,
            v_read: DEFAULT_READ_VOLTAGE,
            set_amplitude_range: Interval::new(0.8, 1.5),
            reset_amplitude_range: Interval::new(-1.8, -0.8),
            pulse_width: REFERENCE_PULSE_WIDTH,
            max_pulses: 10_000,
            amplitude_step: 0.01,
            half_select_disturb: None,
        }
    }
}

impl TuningSpec {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self { tolerance, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.tolerance > 0.0
            && self.v_read > 0.0
            && self.set_amplitude_range.is_valid()
            && self.reset_amplitude_range.is_valid()
            && self.set_amplitude_range.lo > 0.0
            && self.reset_amplitude_range.hi < 0.0
            && self.pulse_width > 0.0
            && self.max_pulses >= 1
            && self.amplitude_step >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::Config(format!("invalid tuning spec: {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub final_conductance: f64,
    pub pulses_used: usize,
    pub converged: bool,
    pub error: f64,
    pub diagnostic: Option<String>,
}

/// `|actual − target| / target`.
pub fn tuning_error(target: f64, actual: f64) -> Result<f64> {
    if !(target > 0.0) {
        return Err(SimError::Domain(format!("target conductance must be positive, got {target}")));
    }
    Ok((actual - target).abs() / target)
}

/// Tune device `(row, col)` towards `target`.
pub fn tune_device(xbar: &mut Crossbar, row: usize, col: usize, target: f64, spec: &TuningSpec) -> Result<TuningResult> {
    tune_device_logged(xbar, row, col, target, spec, &mut |_| {})
}

/// As [`tune_device`], reporting every applied amplitude to `on_pulse`.
pub fn tune_device_logged(
    xbar: &mut Crossbar,
    row: usize,
    col: usize,
    target: f64,
    spec: &TuningSpec,
    on_pulse: &mut dyn FnMut(f64),
) -> Result<TuningResult> {
    spec.validate()?;
    let read = |xbar: &Crossbar| -> Result<f64> { xbar.device(row, col)?.read_conductance(spec.v_read) };
    let mut g = read(xbar)?;
    let mut error = tuning_error(target, g)?;
    if error <= spec.tolerance {
        return Ok(TuningResult { final_conductance: g, pulses_used: 0, converged: true, error, diagnostic: None });
    }
    if !xbar.device(row, col)?.is_switchable() {
        return Ok(TuningResult {
            final_conductance: g,
            pulses_used: 0,
            converged: false,
            error,
            diagnostic: Some(format!("device ({row}, {col}) is stuck or unformed")),
        });
    }
    let one_hot: Vec<bool> = (0..xbar.cols()).map(|c| c == col).collect();
    let mut polarity = 0i8;
    let mut amplitude = 0.0;
    let mut pulses = 0;
    while pulses < spec.max_pulses {
        let want = if g < target { 1 } else { -1 };
        if want != polarity {
            polarity = want;
            amplitude = if want > 0 { spec.set_amplitude_range.lo } else { spec.reset_amplitude_range.hi };
        } else if polarity > 0 {
            amplitude = spec.set_amplitude_range.clamp(amplitude + spec.amplitude_step);
        } else {
            amplitude = spec.reset_amplitude_range.clamp(amplitude - spec.amplitude_step);
        }
        match spec.half_select_disturb {
            None => {
                xbar.device_mut(row, col)?.apply_pulse(amplitude, spec.pulse_width)?;
            }
            Some(kind) => {
                let bias = BiasScheme { scheme: kind, write_voltage: amplitude };
                write_row(xbar, row, &one_hot, &bias, spec.pulse_width)?;
            }
        }
        on_pulse(amplitude);
        pulses += 1;
        g = read(xbar)?;
        error = tuning_error(target, g)?;
        if error <= spec.tolerance {
            return Ok(TuningResult { final_conductance: g, pulses_used: pulses, converged: true, error, diagnostic: None });
        }
    }
    Ok(TuningResult {
        final_conductance: g,
        pulses_used: pulses,
        converged: false,
        error,
        diagnostic: Some(format!("pulse budget of {} exhausted", spec.max_pulses)),
    })
}

/// Outcome of importing a conductance map.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportReport {
    /// Per-cell relative error of the read-back state.
    pub errors: Array2<f64>,
    /// Per-cell tuning result; `None` for skipped stuck cells.
    pub results: Array2<Option<TuningResult>>,
}

impl ImportReport {
    pub fn total_pulses(&self) -> usize {
        self.results.iter().flatten().map(|r| r.pulses_used).sum()
    }

    pub fn all_converged(&self) -> bool {
        self.results.iter().flatten().all(|r| r.converged)
    }
}

/// Tune a whole crossbar to `targets` (same shape), row-major.
pub fn import_conductance_map(
    xbar: &mut Crossbar,
    targets: &Array2<f64>,
    spec: &TuningSpec,
    skip_stuck: bool,
) -> Result<ImportReport> {
    if targets.dim() != (xbar.rows(), xbar.cols()) {
        return Err(SimError::Shape(format!(
            "target map {:?} vs crossbar {}x{}",
            targets.dim(),
            xbar.rows(),
            xbar.cols()
        )));
    }
    import_block(xbar, 0, 0, targets, spec, skip_stuck)
}

/// Tune the block of `xbar` whose top-left cell is `(row0, col0)`.
pub fn import_block(
    xbar: &mut Crossbar,
    row0: usize,
    col0: usize,
    targets: &Array2<f64>,
    spec: &TuningSpec,
    skip_stuck: bool,
) -> Result<ImportReport> {
    spec.validate()?;
    let (rows, cols) = targets.dim();
    if row0 + rows > xbar.rows() || col0 + cols > xbar.cols() {
        return Err(SimError::Shape(format!(
            "{rows}x{cols} block at ({row0}, {col0}) exceeds {}x{} crossbar",
            xbar.rows(),
            xbar.cols()
        )));
    }
    let mut results = Array2::from_elem((rows, cols), None);
    for r in 0..rows {
        for c in 0..cols {
            let (xr, xc) = (row0 + r, col0 + c);
            if skip_stuck && xbar.device(xr, xc)?.stuck {
                continue;
            }
            results[[r, c]] = Some(tune_device(xbar, xr, xc, targets[[r, c]], spec)?);
        }
    }
    let mut errors = Array2::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            let g = xbar.device(row0 + r, col0 + c)?.read_conductance(spec.v_read)?;
            errors[[r, c]] = tuning_error(targets[[r, c]], g)?;
        }
    }
    Ok(ImportReport { errors, results })
}

/// Histogram of tuning errors with fixed-width bins starting at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub max_error: f64,
}

impl ErrorHistogram {
    /// Bins `[k·w, (k+1)·w)`; the last edge is the first multiple of `w`
    /// strictly above the largest error.
    pub fn from_errors<'a>(errors: impl IntoIterator<Item = &'a f64>, bin_width: f64) -> Result<Self> {
        if !(bin_width > 0.0) {
            return Err(SimError::Config("histogram bin width must be positive".into()));
        }
        let values: Vec<f64> = errors.into_iter().copied().collect();
        let max_error = values.iter().copied().fold(0.0, f64::max);
        let n_bins = ((max_error / bin_width).floor() as usize + 1).max(1);
        let mut counts = vec![0; n_bins];
        for &e in &values {
            let k = ((e / bin_width).floor() as usize).min(n_bins - 1);
            counts[k] += 1;
        }
        let bin_edges = (0..=n_bins).map(|k| k as f64 * bin_width).collect();
        Ok(Self { bin_edges, counts, max_error })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Conductance of the lightest gray level.
pub const SMILEY_G_WHITE: f64 = 1.0 / 84e3;
/// Conductance of the darkest gray level.
pub const SMILEY_G_BLACK: f64 = 1.0 / 7e3;

/// Gray level (0 = white, 255 = black) of the built-in smiley test image.
pub fn smiley_levels(rows: usize, cols: usize) -> Array2<u8> {
    let (cy, cx) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
    let radius = 0.45 * rows.min(cols) as f64;
    let n = (rows * cols).max(2) as f64;
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        let (y, x) = ((r as f64 - cy) / radius, (c as f64 - cx) / radius);
        let d = (x * x + y * y).sqrt();
        let eye = ((x.abs() - 0.38).powi(2) + (y + 0.35).powi(2)).sqrt() < 0.16;
        let mouth = y > 0.1 && (d - 0.6).abs() < 0.12;
        if eye || mouth {
            255
        } else if d <= 1.0 {
            // Face: radial shading over the mid-gray levels.
            (96.0 + 120.0 * d).round().min(230.0) as u8
        } else {
            // Background: a diagonal ramp through the light levels.
            ((r * cols + c) as f64 / (n - 1.0) * 80.0).round() as u8
        }
    })
}

/// The smiley as target conductances, linear in gray level between
/// [`SMILEY_G_WHITE`] and [`SMILEY_G_BLACK`].
pub fn smiley_target_map(rows: usize, cols: usize) -> Array2<f64> {
    smiley_levels(rows, cols).mapv(|l| SMILEY_G_WHITE + (SMILEY_G_BLACK - SMILEY_G_WHITE) * l as f64 / 255.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crossbar::build_crossbar;
    use crate::device::DeviceVariationSpec;
    use approx::assert_relative_eq;

    #[test]
    fn error_examples() {
        assert_eq!(tuning_error(50e-6, 50e-6).unwrap(), 0.0);
        assert_relative_eq!(tuning_error(50e-6, 65e-6).unwrap(), 0.30, max_relative = 1e-12);
        let e = tuning_error(11.9e-6, 12.4e-6).unwrap();
        assert!((e - 0.042).abs() < 1e-3 && e < 0.05);
        assert!(matches!(tuning_error(0.0, 1e-6), Err(SimError::Domain(_))));
    }

    #[test]
    fn on_target_device_needs_no_pulses() {
        let mut xbar = Crossbar::from_conductances(&Array2::from_elem((1, 1), 40e-6), 0.0).unwrap();
        let r = tune_device(&mut xbar, 0, 0, 40e-6, &TuningSpec::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.pulses_used, 0);
    }

    #[test]
    fn sampled_device_reaches_loose_target() {
        let spec = DeviceVariationSpec::default();
        for seed in 0..20 {
            let mut xbar = build_crossbar(1, 1, &spec, 0.0, seed).unwrap();
            xbar.device_mut(0, 0).unwrap().conductance = 10e-6;
            let r = tune_device(&mut xbar, 0, 0, 50e-6, &TuningSpec::with_tolerance(0.3)).unwrap();
            assert!(r.converged, "seed {seed}: {r:?}");
            assert!((35e-6..=65e-6).contains(&r.final_conductance));
            assert!(r.pulses_used > 0 && r.pulses_used < 10_000);
        }
    }

    #[test]
    fn stuck_device_reports_non_convergence() {
        let mut xbar = Crossbar::from_conductances(&Array2::from_elem((1, 1), 40e-6), 0.0).unwrap();
        xbar.device_mut(0, 0).unwrap().stuck = true;
        let r = tune_device(&mut xbar, 0, 0, 80e-6, &TuningSpec::default()).unwrap();
        assert!(!r.converged && r.diagnostic.is_some());
        assert_eq!(xbar.device(0, 0).unwrap().conductance, 40e-6);
    }

    #[test]
    fn pulse_budget_exhaustion_is_reported() {
        let mut xbar = Crossbar::from_conductances(&Array2::from_elem((1, 1), 10e-6), 0.0).unwrap();
        let spec = TuningSpec { max_pulses: 3, ..TuningSpec::default() };
        let r = tune_device(&mut xbar, 0, 0, 100e-6, &spec).unwrap();
        assert!(!r.converged);
        assert_eq!(r.pulses_used, 3);
    }

    #[test]
    fn identity_import_is_free() {
        let g = Array2::from_shape_fn((3, 3), |(r, c)| (10 + 10 * r + c) as f64 * 1e-6);
        let mut xbar = Crossbar::from_conductances(&g, 0.0).unwrap();
        let report = import_conductance_map(&mut xbar, &g, &TuningSpec::default(), true).unwrap();
        assert!(report.errors.iter().all(|&e| e == 0.0));
        assert_eq!(report.total_pulses(), 0);
        let wrong = Array2::from_elem((2, 3), 1e-5);
        assert!(matches!(
            import_conductance_map(&mut xbar, &wrong, &TuningSpec::default(), true),
            Err(SimError::Shape(_))
        ));
    }

    #[test]
    fn disturb_mode_goes_through_the_array() {
        let mut xbar = Crossbar::from_conductances(&Array2::from_elem((2, 2), 20e-6), 0.0).unwrap();
        xbar.device_mut(0, 1).unwrap().set_threshold = 0.5;
        let spec = TuningSpec { half_select_disturb: Some(BiasKind::VHalf), ..TuningSpec::default() };
        let r = tune_device(&mut xbar, 0, 0, 40e-6, &spec).unwrap();
        assert!(r.converged);
        // V/2 exposes (0, 1) to half of each write pulse, above its 0.5 V threshold.
        assert!(xbar.device(0, 1).unwrap().conductance > 20e-6);
        assert_eq!(xbar.device(1, 1).unwrap().conductance, 20e-6);
    }

    #[test]
    fn histogram_bins() {
        let errs = [0.0, 0.004, 0.011, 0.049];
        let h = ErrorHistogram::from_errors(&errs, 0.005).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 4);
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts.len() + 1, h.bin_edges.len());
        assert!(*h.bin_edges.last().unwrap() <= 0.05 + 1e-12);
        assert!(*h.bin_edges.last().unwrap() > h.max_error);
    }

    #[test]
    fn smiley_spans_the_gray_scale() {
        let levels = smiley_levels(20, 20);
        let distinct: std::collections::BTreeSet<u8> = levels.iter().copied().collect();
        assert!(distinct.contains(&255) && distinct.contains(&0));
        assert!(distinct.len() > 50, "{}", distinct.len());
        let g = smiley_target_map(20, 20);
        let lo = g.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = g.iter().copied().fold(0.0, f64::max);
        assert_relative_eq!(lo, 1.0 / 84e3, max_relative = 1e-12);
        assert_relative_eq!(hi, 1.0 / 7e3, max_relative = 1e-12);
    }
}
