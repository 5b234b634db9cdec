//! Worst-case voltage drop along a single crossbar line, modeled as a finite
//! resistor ladder, and the maximum array size it permits for writing.

use serde::{Deserialize, Serialize};

use super::BiasKind;
use crate::error::{Result, SimError};

/// Upper limit of the maximum-dimension search.
pub const MAX_LADDER_LENGTH: usize = 1_000_000;

/// Relative drop `(V − V_far)/V` of a ladder of `n` series segments `r_w`
/// whose every node is loaded by `g` to ground, driven at one end.
///
/// Evaluated from the far end: with `Y_n = G` and
/// `Y_k = G + Y_{k+1}/(1 + R·Y_{k+1})` the far-end fraction is
/// `Π_k 1/(1 + R·Y_k)`. The product is accumulated as a sum of logarithms
/// so that `1 − Π` keeps full relative precision for tiny drops.
pub fn ladder_worst_case_drop(n: usize, r_w: f64, g: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut y = g;
    let mut log_fraction = -(r_w * y).ln_1p();
    for _ in 1..n {
        y = g + y / (1.0 + r_w * y);
        log_fraction -= (r_w * y).ln_1p();
    }
    -log_fraction.exp_m1()
}

/// Drops for ladder lengths `1..=n_max`, computed incrementally.
///
/// Growing the ladder by one segment at the driven end maps the input
/// admittance `A_n → A_{n+1} = G + A_n/(1 + R·A_n)` and the far-end fraction
/// `T_{n+1} = T_n/(1 + R·A_{n+1})`.
pub fn ladder_drop_curve(n_max: usize, r_w: f64, g: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_max);
    let mut a = g;
    let mut log_t = -(r_w * a).ln_1p();
    for n in 1..=n_max {
        if n > 1 {
            let next = g + a / (1.0 + r_w * a);
            log_t -= (r_w * next).ln_1p();
            a = next;
        }
        out.push(-log_t.exp_m1());
    }
    out
}

/// Largest allowable relative drop on a selected line for a write scheme.
///
/// V/3: `(3·v_min − v_max)/v_max/2`, the factor 2 sharing the drop between
/// the two selected lines. V/2: `(2·v_min − v_max)/v_max`.
pub fn write_budget(v_th_min: f64, v_th_max: f64, scheme: BiasKind) -> f64 {
    let (lo, hi) = (v_th_min.abs(), v_th_max.abs());
    match scheme {
        BiasKind::VThird => (3.0 * lo - hi) / hi / 2.0,
        BiasKind::VHalf => (2.0 * lo - hi) / hi,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionEstimate {
    pub budget: f64,
    pub n_max: usize,
    pub diagnostic: Option<String>,
}

/// Largest `n ≤ MAX_LADDER_LENGTH` whose drop stays within `budget`.
fn longest_ladder_within(budget: f64, r_w: f64, g: f64) -> usize {
    let mut a = g;
    let mut t = 1.0 / (1.0 + r_w * a);
    let mut n = 0;
    while n < MAX_LADDER_LENGTH && 1.0 - t <= budget {
        n += 1;
        let next = g + a / (1.0 + r_w * a);
        t /= 1.0 + r_w * next;
        a = next;
    }
    n
}

/// Largest `n` with `ladder_worst_case_drop(n, r_w, g) ≤ budget`.
pub fn max_crossbar_dimension(
    v_th_min: f64,
    v_th_max: f64,
    g_at_operating_point: f64,
    r_w: f64,
    scheme: BiasKind,
) -> DimensionEstimate {
    let budget = write_budget(v_th_min, v_th_max, scheme);
    if !(budget > 0.0) {
        return DimensionEstimate {
            budget,
            n_max: 0,
            diagnostic: Some(format!(
                "no safe write window: |v_th_min| = {} V, |v_th_max| = {} V",
                v_th_min.abs(),
                v_th_max.abs()
            )),
        };
    }
    let n = longest_ladder_within(budget, r_w, g_at_operating_point);
    let diagnostic = (n == MAX_LADDER_LENGTH).then(|| format!("search capped at {MAX_LADDER_LENGTH}"));
    DimensionEstimate { budget, n_max: n, diagnostic }
}

/// Segment resistance for which the V/3 set-budget estimate equals `target_n`.
///
/// `n_max` is non-increasing in `r_w`; bisection on `ln r_w` returns the
/// geometric midpoint of the interval of resistances that yield `target_n`.
pub fn calibrate_segment_resistance(target_n: usize, budget: f64, g: f64) -> Result<f64> {
    if target_n == 0 || !(budget > 0.0) || !(g > 0.0) {
        return Err(SimError::Config("calibration needs target_n >= 1, budget > 0, G > 0".into()));
    }
    let n_at = |r: f64| longest_ladder_within(budget, r, g);
    // Largest r with n_at(r) >= target and smallest r with n_at(r) < target.
    let bisect = |pred: &dyn Fn(usize) -> bool| -> f64 {
        let (mut lo, mut hi) = (1e-6f64, 1e6f64);
        for _ in 0..100 {
            let mid = (lo * hi).sqrt();
            if pred(n_at(mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    let upper = bisect(&|n| n >= target_n);
    let lower = bisect(&|n| n > target_n);
    Ok((upper * lower).sqrt())
}

/// Threshold window and operating conductance of one switching operation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchingWindow {
    pub operation: String,
    /// Smallest and largest threshold magnitudes in the array (volts).
    pub v_th_min: f64,
    pub v_th_max: f64,
    /// Conductance of the half-selected devices loading the lines (siemens).
    pub g: f64,
}

impl SwitchingWindow {
    pub fn set() -> Self {
        Self { operation: "set".into(), v_th_min: 0.7, v_th_max: 1.3, g: 30e-6 }
    }

    pub fn reset() -> Self {
        Self { operation: "reset".into(), v_th_min: 1.0, v_th_max: 1.9, g: 50e-6 }
    }
}

/// One row of the maximum-dimension table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub preset: String,
    pub segment_resistance: f64,
    pub operation: String,
    pub scheme: BiasKind,
    pub budget: f64,
    pub n_max: usize,
    pub diagnostic: Option<String>,
}

/// `n_max` for every (preset, window, scheme) combination, in that nesting order.
pub fn scaling_table(presets: &[(String, f64)], windows: &[SwitchingWindow]) -> Vec<ScalingRow> {
    let mut rows = Vec::new();
    for (name, r_w) in presets {
        for w in windows {
            for scheme in [BiasKind::VThird, BiasKind::VHalf] {
                let est = max_crossbar_dimension(w.v_th_min, w.v_th_max, w.g, *r_w, scheme);
                rows.push(ScalingRow {
                    preset: name.clone(),
                    segment_resistance: *r_w,
                    operation: w.operation.clone(),
                    scheme,
                    budget: est.budget,
                    n_max: est.n_max,
                    diagnostic: est.diagnostic,
                });
            }
        }
    }
    rows
}

/// Named segment-resistance preset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WirePreset {
    pub name: &'static str,
    pub segment_resistance: f64,
}

/// Calibrated so the V/3 set-switching estimate at `G = 30 µS` gives 70.
pub const EXPERIMENT_LIKE_PRESET: WirePreset = WirePreset {
    name: "experiment-like",
    segment_resistance: EXPERIMENT_LIKE_R_W,
};

/// Calibrated so the V/3 set-switching estimate at `G = 30 µS` gives 400.
pub const COPPER_PRESET: WirePreset = WirePreset {
    name: "high-aspect-ratio-copper",
    segment_resistance: COPPER_R_W,
};

// Output of `calibrate_segment_resistance(n, write_budget(0.7, 1.3, VThird), 30e-6)`.
const EXPERIMENT_LIKE_R_W: f64 = 5.488_260_191_289_733;
const COPPER_R_W: f64 = 0.172_032_169_276_188_72;
