//! Behavioral model of a single crosspoint memristor.
//!
//! The static characteristic is `I = G·V·(1 + α·V²)`; switching is
//! threshold-gated with an update that grows exponentially with the
//! overdrive beyond the device's own threshold.

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::rng::indexed_rng;

/// Pulse width at which `kinetics_rate` is specified.
pub const REFERENCE_PULSE_WIDTH: f64 = 500e-6;
/// Largest voltage magnitude `current` accepts by default.
pub const DEFAULT_SAFE_VOLTAGE: f64 = 2.5;
/// Default read bias.
pub const DEFAULT_READ_VOLTAGE: f64 = 0.2;

/// Closed interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            Uniform::new_inclusive(self.lo, self.hi).sample(rng)
        }
    }
}

/// Latent electroforming state of a device.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormingState {
    pub formed: bool,
    /// Conductance of the unformed (pristine) device.
    pub pristine_conductance: f64,
    /// Smallest sweep current ceiling that forms the device; `None` if the
    /// device can never be formed.
    pub forming_current: Option<f64>,
}

impl FormingState {
    pub fn already_formed() -> Self {
        Self {
            formed: true,
            pristine_conductance: 0.0,
            forming_current: Some(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemristorDevice {
    /// Programmed (formed-state) conductance in siemens.
    pub conductance: f64,
    pub set_threshold: f64,
    pub reset_threshold: f64,
    pub g_min: f64,
    pub g_max: f64,
    pub nonlinearity_alpha: f64,
    /// Conductance change per reference-width pulse applied exactly at threshold.
    pub kinetics_rate: f64,
    pub kinetics_voltage_scale: f64,
    pub stuck: bool,
    pub forming: FormingState,
}

impl MemristorDevice {
    /// A formed, linear, ideal device at conductance `g` with default bounds
    /// and nominal thresholds.
    pub fn ideal(g: f64) -> Self {
        let spec = DeviceVariationSpec::default();
        Self {
            conductance: g.clamp(spec.g_min, spec.g_max),
            set_threshold: spec.set_mu,
            reset_threshold: spec.reset_mu,
            g_min: spec.g_min,
            g_max: spec.g_max,
            nonlinearity_alpha: 0.0,
            kinetics_rate: spec.kinetics_rate,
            kinetics_voltage_scale: spec.kinetics_voltage_scale,
            stuck: false,
            forming: FormingState::already_formed(),
        }
    }

    /// Conductance seen by the linear read model: the programmed state once
    /// formed, the pristine value before.
    pub fn effective_conductance(&self) -> f64 {
        if self.forming.formed {
            self.conductance
        } else {
            self.forming.pristine_conductance
        }
    }

    /// Whether write pulses can change this device at all.
    pub fn is_switchable(&self) -> bool {
        self.forming.formed && !self.stuck
    }

    /// Static current at `voltage`, bounded by [`DEFAULT_SAFE_VOLTAGE`].
    pub fn current(&self, voltage: f64) -> Result<f64> {
        self.current_bounded(voltage, DEFAULT_SAFE_VOLTAGE)
    }

    pub fn current_bounded(&self, voltage: f64, safe_bound: f64) -> Result<f64> {
        if !voltage.is_finite() || voltage.abs() > safe_bound {
            return Err(SimError::Domain(format!(
                "voltage {voltage} V exceeds safe bound {safe_bound} V"
            )));
        }
        let g = self.effective_conductance();
        Ok(g * voltage * (1.0 + self.nonlinearity_alpha * voltage * voltage))
    }

    /// Apply one write pulse in place; returns the conductance change.
    pub fn apply_pulse(&mut self, amplitude: f64, width: f64) -> Result<f64> {
        if !(width > 0.0) || !width.is_finite() {
            return Err(SimError::Domain(format!("pulse width must be positive, got {width}")));
        }
        if !self.is_switchable() {
            return Ok(0.0);
        }
        let before = self.conductance;
        let scale = width / REFERENCE_PULSE_WIDTH;
        if amplitude >= self.set_threshold {
            let step = self.kinetics_rate
                * scale
                * ((amplitude - self.set_threshold) / self.kinetics_voltage_scale).exp();
            self.conductance = (self.conductance + step).min(self.g_max);
        } else if amplitude <= self.reset_threshold {
            let step = self.kinetics_rate
                * scale
                * ((self.reset_threshold - amplitude) / self.kinetics_voltage_scale).exp();
            self.conductance = (self.conductance - step).max(self.g_min);
        }
        Ok(self.conductance - before)
    }

    /// Non-destructive read: `current(v_read) / v_read`.
    pub fn read_conductance(&self, v_read: f64) -> Result<f64> {
        if v_read == 0.0 {
            return Err(SimError::Domain("read voltage must be non-zero".into()));
        }
        let guard = self.set_threshold.min(-self.reset_threshold);
        if v_read.abs() > guard {
            return Err(SimError::Domain(format!(
                "read voltage {v_read} V could switch the device (guard {guard} V)"
            )));
        }
        self.current(v_read)?;
        // current(v)/v, written so that the linear case returns G exactly.
        Ok(self.effective_conductance() * (1.0 + self.nonlinearity_alpha * v_read * v_read))
    }
}

/// Optional pristine-state model used by the forming procedure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormingVariation {
    /// Probability that a device comes out of fabrication already formed.
    pub preformed_probability: f64,
    pub pristine_conductance: f64,
    pub forming_current_mu: f64,
    pub forming_current_sigma: f64,
}

impl Default for FormingVariation {
    fn default() -> Self {
        Self {
            preformed_probability: 0.1,
            pristine_conductance: 0.2e-6,
            forming_current_mu: 380e-6,
            forming_current_sigma: 110e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceVariationSpec {
    pub set_mu: f64,
    pub set_sigma: f64,
    pub reset_mu: f64,
    pub reset_sigma: f64,
    pub stuck_probability: f64,
    pub stuck_conductance_range: Interval,
    pub g_init_range: Interval,
    pub g_min: f64,
    pub g_max: f64,
    pub nonlinearity_alpha: f64,
    /// Median per-device kinetics rate (siemens per reference pulse at threshold).
    pub kinetics_rate: f64,
    /// Log-normal spread of the per-device kinetics rate.
    pub kinetics_rate_spread: f64,
    pub kinetics_voltage_scale: f64,
    /// When present, devices start pristine and must be formed before use.
    pub forming: Option<FormingVariation>,
}

impl Default for DeviceVariationSpec {
    fn default() -> Self {
        Self {
            set_mu: 1.0,
            set_sigma: 0.13,
            reset_mu: -1.2,
            reset_sigma: 0.15,
            stuck_probability: 0.0,
            stuck_conductance_range: Interval::new(10e-6, 100e-6),
            g_init_range: Interval::new(10e-6, 100e-6),
            g_min: 2e-6,
            g_max: 150e-6,
            nonlinearity_alpha: 0.0,
            kinetics_rate: 0.05e-6,
            kinetics_rate_spread: 0.3,
            kinetics_voltage_scale: 0.08,
            forming: None,
        }
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(SimError::Config(msg()))
    }
}

impl DeviceVariationSpec {
    /// Spec with process variation switched off: nominal thresholds, no
    /// stuck devices, all devices formed.
    pub fn nominal() -> Self {
        Self {
            set_sigma: 0.0,
            reset_sigma: 0.0,
            kinetics_rate_spread: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.set_mu,
            self.set_sigma,
            self.reset_mu,
            self.reset_sigma,
            self.stuck_probability,
            self.g_min,
            self.g_max,
            self.nonlinearity_alpha,
            self.kinetics_rate,
            self.kinetics_rate_spread,
            self.kinetics_voltage_scale,
        ];
        check(finite.iter().all(|x| x.is_finite()), || "device spec has non-finite values".into())?;
        check(self.set_mu > 0.0, || format!("set_mu must be positive, got {}", self.set_mu))?;
        check(self.reset_mu < 0.0, || format!("reset_mu must be negative, got {}", self.reset_mu))?;
        check(self.set_sigma >= 0.0 && self.reset_sigma >= 0.0, || "threshold sigmas must be non-negative".into())?;
        check((0.0..=1.0).contains(&self.stuck_probability), || {
            format!("stuck_probability must be in [0,1], got {}", self.stuck_probability)
        })?;
        check(self.g_min > 0.0 && self.g_min < self.g_max, || {
            format!("need 0 < g_min < g_max, got [{}, {}]", self.g_min, self.g_max)
        })?;
        for (name, r) in [
            ("stuck_conductance_range", self.stuck_conductance_range),
            ("g_init_range", self.g_init_range),
        ] {
            check(r.is_valid(), || format!("{name} must satisfy lo <= hi"))?;
            check(r.lo >= self.g_min && r.hi <= self.g_max, || {
                format!("{name} must lie within [g_min, g_max]")
            })?;
        }
        check(self.nonlinearity_alpha >= 0.0, || "nonlinearity_alpha must be non-negative".into())?;
        check(self.kinetics_rate > 0.0 && self.kinetics_voltage_scale > 0.0, || {
            "kinetics rate and voltage scale must be positive".into()
        })?;
        check(self.kinetics_rate_spread >= 0.0, || "kinetics_rate_spread must be non-negative".into())?;
        if let Some(f) = &self.forming {
            check((0.0..=1.0).contains(&f.preformed_probability), || {
                "preformed_probability must be in [0,1]".into()
            })?;
            check(f.pristine_conductance > 0.0 && f.pristine_conductance.is_finite(), || {
                "pristine_conductance must be positive".into()
            })?;
            check(f.forming_current_mu > 0.0 && f.forming_current_sigma >= 0.0, || {
                "forming current distribution must have positive mean, non-negative sigma".into()
            })?;
        }
        Ok(())
    }
}

/// Draw from `N(mu, sigma)` restricted to values with the sign of `mu`.
fn signed_normal<R: Rng + ?Sized>(rng: &mut R, mu: f64, sigma: f64) -> f64 {
    let dist = Normal::new(mu, sigma).expect("validated sigma");
    loop {
        let x = dist.sample(rng);
        if x.signum() == mu.signum() && x != 0.0 {
            return x;
        }
    }
}

/// Sample one device. The number and order of draws does not depend on the
/// outcome of earlier draws, so device `k` of a grid is a pure function of
/// its seed.
pub fn sample_device<R: Rng + ?Sized>(spec: &DeviceVariationSpec, rng: &mut R) -> Result<MemristorDevice> {
    spec.validate()?;
    let set_threshold = signed_normal(rng, spec.set_mu, spec.set_sigma);
    let reset_threshold = signed_normal(rng, spec.reset_mu, spec.reset_sigma);
    let log_factor = Normal::new(0.0, spec.kinetics_rate_spread).expect("validated spread").sample(rng);
    let kinetics_rate = if spec.kinetics_rate_spread == 0.0 {
        spec.kinetics_rate
    } else {
        spec.kinetics_rate * log_factor.exp()
    };
    let stuck = Bernoulli::new(spec.stuck_probability).expect("validated").sample(rng);
    let g_stuck = spec.stuck_conductance_range.sample(rng);
    let g_init = spec.g_init_range.sample(rng);
    let forming = match &spec.forming {
        None => FormingState::already_formed(),
        Some(f) => {
            let preformed = Bernoulli::new(f.preformed_probability).expect("validated").sample(rng);
            let current = Normal::new(f.forming_current_mu, f.forming_current_sigma)
                .expect("validated")
                .sample(rng)
                .max(0.0);
            FormingState {
                formed: preformed && !stuck,
                pristine_conductance: f.pristine_conductance,
                forming_current: if stuck { None } else { Some(current) },
            }
        }
    };
    Ok(MemristorDevice {
        conductance: if stuck { g_stuck } else { g_init },
        set_threshold,
        reset_threshold,
        g_min: spec.g_min,
        g_max: spec.g_max,
        nonlinearity_alpha: spec.nonlinearity_alpha,
        kinetics_rate,
        kinetics_voltage_scale: spec.kinetics_voltage_scale,
        stuck,
        forming,
    })
}

/// Sample a device from a plain integer seed.
pub fn sample_device_seeded(spec: &DeviceVariationSpec, seed: u64) -> Result<MemristorDevice> {
    sample_device(spec, &mut indexed_rng(seed, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ohmic_current() {
        let d = MemristorDevice::ideal(50e-6);
        assert_relative_eq!(d.current(0.2).unwrap(), 10e-6, max_relative = 1e-15);
        assert_eq!(d.current(0.0).unwrap(), 0.0);
    }

    #[test]
    fn cubic_correction_current() {
        let mut d = MemristorDevice::ideal(50e-6);
        d.nonlinearity_alpha = 1.0;
        let expected = 50e-6 * 0.6 * (1.0 + 0.36);
        assert_relative_eq!(d.current(0.6).unwrap(), expected, max_relative = 1e-14);
        assert_relative_eq!(d.current(0.6).unwrap(), 40.8e-6, max_relative = 1e-12);
    }

    #[test]
    fn current_outside_safe_bound_is_domain_error() {
        let d = MemristorDevice::ideal(50e-6);
        assert!(matches!(d.current(3.0), Err(SimError::Domain(_))));
        assert!(d.current_bounded(3.0, 5.0).is_ok());
    }

    #[test]
    fn subthreshold_pulse_is_ignored() {
        let mut d = MemristorDevice::ideal(50e-6);
        d.set_threshold = 0.8;
        let dg = d.apply_pulse(0.5, REFERENCE_PULSE_WIDTH).unwrap();
        assert_eq!(dg, 0.0);
        assert_eq!(d.conductance, 50e-6);
    }

    #[test]
    fn set_pulse_raises_conductance_by_the_kinetics_law() {
        let mut d = MemristorDevice::ideal(50e-6);
        d.set_threshold = 1.0;
        let dg = d.apply_pulse(1.3, REFERENCE_PULSE_WIDTH).unwrap();
        let expected = d.kinetics_rate * (0.3f64 / d.kinetics_voltage_scale).exp();
        assert!(dg > 0.0);
        assert_relative_eq!(dg, expected, max_relative = 1e-9);
    }

    #[test]
    fn reset_pulse_lowers_conductance_and_width_scales_step() {
        let mut a = MemristorDevice::ideal(50e-6);
        let mut b = a.clone();
        let da = a.apply_pulse(-1.4, REFERENCE_PULSE_WIDTH).unwrap();
        let db = b.apply_pulse(-1.4, 2.0 * REFERENCE_PULSE_WIDTH).unwrap();
        assert!(da < 0.0);
        assert_relative_eq!(db, 2.0 * da, max_relative = 1e-12);
    }

    #[test]
    fn repeated_strong_set_pulses_saturate_at_g_max() {
        let mut d = MemristorDevice::ideal(10e-6);
        // Fixed-point oracle: iterate g <- min(g + step, g_max) directly.
        let step = d.kinetics_rate * ((1.5 - d.set_threshold) / d.kinetics_voltage_scale).exp();
        let mut g = d.conductance;
        let mut n = 0;
        while g < d.g_max {
            g = (g + step).min(d.g_max);
            n += 1;
        }
        for _ in 0..n {
            d.apply_pulse(1.5, REFERENCE_PULSE_WIDTH).unwrap();
        }
        assert_eq!(d.conductance, d.g_max);
        d.apply_pulse(1.5, REFERENCE_PULSE_WIDTH).unwrap();
        assert_eq!(d.conductance, d.g_max);
    }

    #[test]
    fn zero_width_pulse_rejected() {
        let mut d = MemristorDevice::ideal(10e-6);
        assert!(d.apply_pulse(1.5, 0.0).is_err());
    }

    #[test]
    fn read_conductance_examples() {
        let d = MemristorDevice::ideal(11.9e-6);
        let g = d.read_conductance(0.2).unwrap();
        assert_relative_eq!(g, 11.9e-6, max_relative = 1e-12);
        assert!((1.0 / g - 84_000.0).abs() < 100.0);
        assert_eq!(d.read_conductance(0.1).unwrap(), d.read_conductance(0.2).unwrap());
        assert!(matches!(d.read_conductance(0.0), Err(SimError::Domain(_))));
        assert!(d.read_conductance(1.1).is_err());
    }

    #[test]
    fn nonlinear_read_ratio() {
        let mut d = MemristorDevice::ideal(30e-6);
        d.nonlinearity_alpha = 2.0;
        let ratio = d.read_conductance(0.2).unwrap() / d.read_conductance(0.1).unwrap();
        assert_relative_eq!(ratio, (1.0 + 2.0 * 0.04) / (1.0 + 2.0 * 0.01), max_relative = 1e-12);
    }

    #[test]
    fn degenerate_spec_gives_nominal_thresholds() {
        let spec = DeviceVariationSpec::nominal();
        for seed in 0..50 {
            let d = sample_device_seeded(&spec, seed).unwrap();
            assert_eq!(d.set_threshold, spec.set_mu);
            assert_eq!(d.reset_threshold, spec.reset_mu);
            assert_eq!(d.kinetics_rate, spec.kinetics_rate);
            assert!(!d.stuck);
        }
    }

    #[test]
    fn set_threshold_sample_mean() {
        let spec = DeviceVariationSpec::default();
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|s| sample_device_seeded(&spec, s).unwrap().set_threshold)
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn invalid_specs_are_config_errors() {
        let bad = [
            DeviceVariationSpec { set_sigma: -0.1, ..Default::default() },
            DeviceVariationSpec { stuck_probability: 1.5, ..Default::default() },
            DeviceVariationSpec { g_init_range: Interval::new(50e-6, 20e-6), ..Default::default() },
            DeviceVariationSpec { set_mu: -1.0, ..Default::default() },
        ];
        for spec in bad {
            assert!(matches!(sample_device_seeded(&spec, 0), Err(SimError::Config(_))));
        }
    }

    #[test]
    fn stuck_device_ignores_pulses() {
        let spec = DeviceVariationSpec { stuck_probability: 1.0, ..Default::default() };
        let mut d = sample_device_seeded(&spec, 4).unwrap();
        assert!(d.stuck);
        assert!(spec.stuck_conductance_range.contains(d.conductance));
        let g = d.conductance;
        d.apply_pulse(1.5, REFERENCE_PULSE_WIDTH).unwrap();
        d.apply_pulse(-1.8, REFERENCE_PULSE_WIDTH).unwrap();
        assert_eq!(d.conductance, g);
    }

    #[test]
    fn pristine_device_reads_pristine_and_does_not_switch() {
        let spec = DeviceVariationSpec {
            forming: Some(FormingVariation { preformed_probability: 0.0, ..Default::default() }),
            ..Default::default()
        };
        let mut d = sample_device_seeded(&spec, 1).unwrap();
        assert!(!d.forming.formed);
        assert_relative_eq!(d.read_conductance(0.1).unwrap(), 0.2e-6, max_relative = 1e-12);
        let g = d.conductance;
        d.apply_pulse(1.5, REFERENCE_PULSE_WIDTH).unwrap();
        assert_eq!(d.conductance, g);
    }
}
