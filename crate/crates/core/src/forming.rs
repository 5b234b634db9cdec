//! Automated one-device-at-a-time electroforming.
//!
//! Each target device is first checked for a low pristine resistance. If it
//! is not already conducting, current sweeps with rising ceilings are applied
//! until the read current jumps by `r_min_ratio`, after which the device is
//! reset into its low-conductance state. Devices that do not form within
//! `max_attempts` sweeps get a second round (with escalated ceilings, after
//! all formed devices are reset); devices failing both rounds are defective.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crossbar::Crossbar;
use crate::device::{MemristorDevice, REFERENCE_PULSE_WIDTH};
use crate::error::{Result, SimError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormingSpec {
    pub i_start: f64,
    pub i_stop: f64,
    pub i_step: f64,
    /// Required after/before read-current ratio that signals success.
    pub r_min_ratio: f64,
    /// First amplitude of the post-forming reset.
    pub v_reset: f64,
    /// Pristine resistance below which a device counts as already formed.
    pub r_th: f64,
    /// Bias for the pristine and success checks.
    pub v_check: f64,
    pub max_attempts: usize,
    pub max_rounds: usize,
    /// Multiplier applied to all ceilings in each further round.
    pub ceiling_escalation: f64,
    /// Conductance at or below which the reset is considered complete.
    pub low_state_conductance: f64,
    /// Amplitude increment (towards more negative) between reset pulses.
    pub reset_step: f64,
    /// Most negative reset amplitude.
    pub reset_floor: f64,
    pub reset_max_pulses: usize,
    pub pulse_width: f64,
}

impl Default for FormingSpec {
    fn default() -> Self {
        Self {
            i_start: 180e-6,
            i_stop: 540e-6,
            i_step: 20e-6,
            r_min_ratio: 5.0,
            v_reset: -1.3,
            r_th: 1e6,
            v_check: 0.1,
            max_attempts: 19,
            max_rounds: 2,
            ceiling_escalation: 1.25,
            low_state_conductance: 10e-6,
            reset_step: 0.05,
            reset_floor: -2.0,
            reset_max_pulses: 200,
            pulse_width: REFERENCE_PULSE_WIDTH,
        }
    }
}

impl FormingSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.i_start > 0.0
            && self.i_start <= self.i_stop
            && self.i_step > 0.0
            && self.r_min_ratio > 1.0
            && self.v_reset < 0.0
            && self.r_th > 0.0
            && self.v_check > 0.0
            && self.max_attempts >= 1
            && self.max_rounds >= 1
            && self.ceiling_escalation >= 1.0
            && self.low_state_conductance > 0.0
            && self.reset_step >= 0.0
            && self.reset_floor <= self.v_reset
            && self.pulse_width > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::Config(format!("invalid forming spec: {self:?}")))
        }
    }

    /// Current ceiling of sweep `attempt` (1-based) in `round` (1-based).
    pub fn ceiling(&self, round: usize, attempt: usize) -> f64 {
        let base = (self.i_start + (attempt - 1) as f64 * self.i_step).min(self.i_stop);
        base * self.ceiling_escalation.powi(round as i32 - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormingStatus {
    Preformed,
    Formed,
    Defective,
}

/// One current sweep: its ceiling and the resulting read-current ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub ceiling: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormingOutcome {
    pub status: FormingStatus,
    pub attempts_used: usize,
    pub trace: Vec<SweepRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceFormingRecord {
    pub row: usize,
    pub col: usize,
    pub status: FormingStatus,
    pub attempts: usize,
    pub trace: Vec<SweepRecord>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FormingReport {
    pub devices: Vec<DeviceFormingRecord>,
    pub defective_fraction: f64,
}

impl FormingReport {
    pub fn count(&self, status: FormingStatus) -> usize {
        self.devices.iter().filter(|d| d.status == status).count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

fn read_current(device: &MemristorDevice, v: f64) -> Result<f64> {
    device.current(v)
}

/// A compliance-limited current sweep. Forms the device when the ceiling
/// reaches its forming current; a freshly formed device is left in its
/// most conductive state.
fn current_sweep(device: &mut MemristorDevice, ceiling: f64) {
    if device.forming.formed {
        return;
    }
    if device.forming.forming_current.is_some_and(|needed| ceiling >= needed) {
        device.forming.formed = true;
        device.conductance = device.g_max;
    }
}

/// Reset pulses of growing magnitude until the device reaches the low state.
/// Returns the number of pulses applied.
pub fn reset_to_low_state(device: &mut MemristorDevice, spec: &FormingSpec) -> Result<usize> {
    if !device.is_switchable() {
        return Ok(0);
    }
    let mut amplitude = spec.v_reset;
    let mut pulses = 0;
    while device.conductance > spec.low_state_conductance && pulses < spec.reset_max_pulses {
        device.apply_pulse(amplitude, spec.pulse_width)?;
        pulses += 1;
        amplitude = (amplitude - spec.reset_step).max(spec.reset_floor);
    }
    Ok(pulses)
}

/// Run the forming flow on device `(row, col)`.
pub fn form_device(xbar: &mut Crossbar, row: usize, col: usize, spec: &FormingSpec) -> Result<FormingOutcome> {
    spec.validate()?;
    let pristine = read_current(xbar.device(row, col)?, spec.v_check)?;
    if pristine > 0.0 && spec.v_check / pristine < spec.r_th {
        reset_to_low_state(xbar.device_mut(row, col)?, spec)?;
        return Ok(FormingOutcome {
            status: FormingStatus::Preformed,
            attempts_used: 0,
            trace: Vec::new(),
        });
    }
    let mut trace = Vec::new();
    for round in 1..=spec.max_rounds {
        if round > 1 {
            reset_formed_devices(xbar, spec)?;
        }
        for attempt in 1..=spec.max_attempts {
            let ceiling = spec.ceiling(round, attempt);
            let device = xbar.device_mut(row, col)?;
            let before = read_current(device, spec.v_check)?;
            current_sweep(device, ceiling);
            let after = read_current(device, spec.v_check)?;
            let ratio = if before > 0.0 { after / before } else { f64::INFINITY };
            trace.push(SweepRecord { ceiling, ratio });
            if ratio >= spec.r_min_ratio {
                reset_to_low_state(device, spec)?;
                return Ok(FormingOutcome {
                    status: FormingStatus::Formed,
                    attempts_used: trace.len(),
                    trace,
                });
            }
        }
    }
    // Failed devices stay at whatever conductance they are stuck in.
    let device = xbar.device_mut(row, col)?;
    device.stuck = true;
    device.forming.formed = true;
    Ok(FormingOutcome {
        status: FormingStatus::Defective,
        attempts_used: trace.len(),
        trace,
    })
}

fn reset_formed_devices(xbar: &mut Crossbar, spec: &FormingSpec) -> Result<()> {
    for r in 0..xbar.rows() {
        for c in 0..xbar.cols() {
            let d = xbar.device_mut(r, c)?;
            if d.forming.formed {
                reset_to_low_state(d, spec)?;
            }
        }
    }
    Ok(())
}

/// Form every target in order.
pub fn form_all(xbar: &mut Crossbar, targets: &[(usize, usize)], spec: &FormingSpec) -> Result<FormingReport> {
    spec.validate()?;
    let mut seen = HashSet::new();
    for &(r, c) in targets {
        xbar.device(r, c)?;
        if !seen.insert((r, c)) {
            return Err(SimError::Config(format!("duplicate forming target ({r}, {c})")));
        }
    }
    let mut devices = Vec::with_capacity(targets.len());
    for &(row, col) in targets {
        let outcome = form_device(xbar, row, col, spec)?;
        devices.push(DeviceFormingRecord {
            row,
            col,
            status: outcome.status,
            attempts: outcome.attempts_used,
            trace: outcome.trace,
        });
    }
    let defective = devices.iter().filter(|d| d.status == FormingStatus::Defective).count();
    let defective_fraction = if devices.is_empty() {
        0.0
    } else {
        defective as f64 / devices.len() as f64
    };
    Ok(FormingReport { devices, defective_fraction })
}

/// Row-major list of every cell in the top-left `rows × cols` block.
pub fn block_targets(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).collect()
}
