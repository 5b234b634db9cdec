//! End-to-end acceptance run: one line per criterion, `PASS` or `FAIL`.
//!
//! Criteria listed in `KNOWN_UNATTAINABLE` are still evaluated in full and
//! reported as failures; they only change the exit status, which is non-zero
//! when any other criterion fails or when a known failure starts passing.

mod common;

use std::time::{Duration, Instant};

use common::{dense_ladder_drop, expected_step, reference_loss};
use memxbar::benchmark::{
    canonical_training_set, class_subset, generate_test_set, precision_sweep, test_provenance, uniform_import_sigma,
    write_sweep_csv, Pattern, SweepConfig, FOUR_CLASSES, PIXELS, THREE_CLASSES,
};
use memxbar::crossbar::{
    ladder_worst_case_drop, scaling_table, vmm_ideal, vmm_wire_resistive, write_budget, BiasKind, Crossbar,
    SwitchingWindow, COPPER_PRESET, EXPERIMENT_LIKE_PRESET, IDEAL,
};
use memxbar::device::{sample_device_seeded, DeviceVariationSpec};
use memxbar::mlp::{ConductancePairMap, Network, NetworkTopology, WeightNetwork};
use memxbar::pipeline::{fabricate, measure_import_sigma, run_ex_situ, run_in_situ, PipelineConfig};
use memxbar::training::{
    loss_and_gradient, smoothed, train_ex_situ, write_curve_csv, Dataset, TrainingConfig, TrainingOutcome, EX_SITU_AWARE,
    EX_SITU_OBLIVIOUS,
};
use memxbar::tuning::{import_conductance_map, smiley_target_map, TuningSpec};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// The V/2 rows of the scaling table cannot meet their bands together with
/// the V/3 rows: both schemes share one calibrated wire resistance per
/// preset, and with that resistance the V/2 budget gives 31 and 177.
const KNOWN_UNATTAINABLE: &[usize] = &[5];

const SEEDS: u64 = 25;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

/// Shared fixtures: the canonical sets and the seed-0 software model.
struct Fixture {
    train: Vec<Pattern>,
    test: Vec<Pattern>,
    topology: NetworkTopology,
    software: TrainingOutcome,
    software_elapsed: Duration,
}

impl Fixture {
    fn new() -> Self {
        let train = canonical_training_set();
        let test = generate_test_set(&train);
        let topology = NetworkTopology::default();
        let start = Instant::now();
        let software = train_ex_situ(&topology, &train, &FOUR_CLASSES, &TrainingConfig::default(), None).unwrap();
        Self { train, test, topology, software, software_elapsed: start.elapsed() }
    }

    fn software_net(&self) -> WeightNetwork {
        WeightNetwork::from_maps(self.topology.clone(), &self.software.layer1, &self.software.layer2).unwrap()
    }

    fn software_fidelity(&self) -> (f64, f64) {
        let net = self.software_net();
        let fid = |set: &[Pattern]| {
            let hits = set.iter().filter(|p| FOUR_CLASSES[net.classify(p).unwrap()] == p.label).count();
            hits as f64 / set.len() as f64
        };
        (fid(&self.train), fid(&self.test))
    }
}

fn software_training(f: &Fixture) -> Verdict {
    let (train, test) = f.software_fidelity();
    let elapsed = f.software_elapsed;
    verdict(
        train == 1.0 && (0.75..=0.90).contains(&test) && elapsed < Duration::from_secs(30),
        format!("train {} (need 100%), test {} (need 75–90%), {elapsed:.1?} (need < 30 s)", pct(train), pct(test)),
    )
}

/// Per-seed hardware results for one ex-situ strategy.
struct HardwareRuns {
    defects: Vec<f64>,
    train: Vec<f64>,
    test: Vec<f64>,
    elapsed: Duration,
}

fn hardware_runs(f: &Fixture, strategy: &str) -> HardwareRuns {
    let start = Instant::now();
    let runs: Vec<(f64, f64, f64)> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let cfg = PipelineConfig { seed, ..Default::default() };
            let r = run_ex_situ(&cfg, strategy, &f.topology, &f.train, &f.test, &FOUR_CLASSES).unwrap();
            (r.defect_fraction, r.hardware.train.fidelity, r.hardware.test.fidelity)
        })
        .collect();
    HardwareRuns {
        defects: runs.iter().map(|r| r.0).collect(),
        train: runs.iter().map(|r| r.1).collect(),
        test: runs.iter().map(|r| r.2).collect(),
        elapsed: start.elapsed(),
    }
}

fn aware_pipeline(f: &Fixture, aware: &HardwareRuns) -> Verdict {
    let (_, soft_test) = f.software_fidelity();
    let worst_defects = aware.defects.iter().cloned().fold(0.0, f64::max);
    let train = median(&aware.train);
    let test = median(&aware.test);
    let gap = (test - soft_test).abs();
    verdict(
        worst_defects <= 0.025 && train >= 0.97 && gap <= 0.06 && aware.elapsed < Duration::from_secs(300),
        format!(
            "defects max {} (need ≤ 2.5%), median train {} (need ≥ 97%), median test {} vs software {} \
             (gap {:.2} points, need ≤ 6), {:.1?} (need < 5 min)",
            pct(worst_defects),
            pct(train),
            pct(test),
            pct(soft_test),
            100.0 * gap,
            aware.elapsed
        ),
    )
}

fn oblivious_below_aware(aware: &HardwareRuns, oblivious: &HardwareRuns) -> Verdict {
    let (a, o) = (median(&aware.train), median(&oblivious.train));
    verdict(o < a, format!("median train oblivious {} vs aware {} (need strictly lower)", pct(o), pct(a)))
}

fn smiley_tuning() -> Verdict {
    let start = Instant::now();
    let mut hw = fabricate(&PipelineConfig::default()).unwrap();
    let xbar = &mut hw.layer1;
    let stuck = xbar.stuck_mask();
    let report = import_conductance_map(xbar, &smiley_target_map(20, 20), &TuningSpec::with_tolerance(0.05), true).unwrap();
    let elapsed = start.elapsed();
    let mut unconverged = 0;
    let mut worst: f64 = 0.0;
    for ((r, c), is_stuck) in stuck.indexed_iter() {
        if *is_stuck {
            continue;
        }
        if !report.results[[r, c]].as_ref().is_some_and(|t| t.converged) {
            unconverged += 1;
        }
        worst = worst.max(report.errors[[r, c]]);
    }
    let n_stuck = stuck.iter().filter(|s| **s).count();
    verdict(
        unconverged == 0 && worst < 0.05 && elapsed < Duration::from_secs(60),
        format!(
            "{} tuned cells ({n_stuck} stuck skipped), {unconverged} unconverged, largest error {:.4} (need < 0.05), \
             {elapsed:.1?} (need < 60 s)",
            400 - n_stuck,
            worst
        ),
    )
}

fn scaling() -> Verdict {
    let budget = write_budget(0.7, 1.3, BiasKind::VThird);
    let exact = (3.0 * 0.7 - 1.3) / 1.3 / 2.0;
    let presets = [EXPERIMENT_LIKE_PRESET, COPPER_PRESET].map(|p| (p.name.to_string(), p.segment_resistance));
    let rows = scaling_table(&presets, &[SwitchingWindow::set()]);
    let bands = [
        (EXPERIMENT_LIKE_PRESET.name, BiasKind::VThird, 70, 5),
        (EXPERIMENT_LIKE_PRESET.name, BiasKind::VHalf, 40, 5),
        (COPPER_PRESET.name, BiasKind::VThird, 400, 25),
        (COPPER_PRESET.name, BiasKind::VHalf, 200, 15),
    ];
    let mut pass = (budget - exact).abs() < 1e-12;
    let mut detail = format!("set budget {} (need {})", pct(budget), pct(exact));
    for (preset, scheme, want, tol) in bands {
        let row = rows.iter().find(|r| r.preset == preset && r.scheme == scheme).expect("row present");
        let ok = row.n_max.abs_diff(want) <= tol;
        pass &= ok;
        detail += &format!(
            "; {preset} {scheme:?} n_max {} (need {want}±{tol}){}",
            row.n_max,
            if ok { "" } else { " ✗" }
        );
    }
    verdict(pass, detail)
}

fn solver_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_vmm: f64 = 0.0;
    for _ in 0..100 {
        let g = Array2::from_shape_simple_fn((16, 20), || rng.gen_range(2e-6..150e-6));
        let v: Vec<f64> = (0..20).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let x = Crossbar::from_conductances(&g, 0.0).unwrap();
        let ideal = vmm_ideal(&x, &v).unwrap();
        let wire = vmm_wire_resistive(&x, &v).unwrap();
        for (w, i) in wire.iter().zip(&ideal) {
            worst_vmm = worst_vmm.max((w - i).abs() / i.abs());
        }
    }
    let (r, g) = (EXPERIMENT_LIKE_PRESET.segment_resistance, 30e-6);
    let worst_ladder = (1..=512)
        .map(|n| {
            let oracle = dense_ladder_drop(n, r, g);
            (ladder_worst_case_drop(n, r, g) - oracle).abs() / oracle
        })
        .fold(0.0, f64::max);
    verdict(
        worst_vmm <= 1e-12 && worst_ladder <= 1e-9,
        format!(
            "R_w = 0 vs ideal: worst relative {worst_vmm:.2e} (need ≤ 1e-12); ladder vs dense solve n = 1..512: \
             worst relative {worst_ladder:.2e} (need ≤ 1e-9)"
        ),
    )
}

fn gradient_check(f: &Fixture) -> Verdict {
    let t = &f.topology;
    let data = Dataset::new(t, &f.train, &FOUR_CLASSES, 10.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = 2e-9;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..25 {
        let w1 = Array2::from_shape_simple_fn(t.layer1_shape(), || rng.gen_range(-15e-6..15e-6));
        let w2 = Array2::from_shape_simple_fn(t.layer2_shape(), || rng.gen_range(-40e-6..40e-6));
        let lg = loss_and_gradient(t, &w1, &w2, &data);
        for (layer, grad) in [(0, &lg.grad_w1), (1, &lg.grad_w2)] {
            let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            for ((r, c), &g) in grad.indexed_iter() {
                let eval = |delta: f64| {
                    let (mut a, mut b) = (w1.clone(), w2.clone());
                    if layer == 0 {
                        a[[r, c]] += delta;
                    } else {
                        b[[r, c]] += delta;
                    }
                    reference_loss(t, &a, &b, &data)
                };
                let central = |h: f64| (eval(h) - eval(-h)) / (2.0 * h);
                let fd = (4.0 * central(h / 2.0) - central(h)) / 3.0;
                let scale = g.abs().max(fd.abs());
                // Entries that vanish relative to the layer are compared absolutely.
                if scale > 1e-6 * gmax {
                    worst = worst.max((fd - g).abs() / scale);
                    checked += 1;
                }
            }
        }
    }
    verdict(worst <= 1e-5, format!("{checked} entries at 25 points, worst relative {worst:.2e} (need ≤ 1e-5)"))
}

fn precision(f: &Fixture) -> Verdict {
    let cfg = PipelineConfig::default();
    let sigma = measure_import_sigma(&cfg, &f.software.layer1, &f.software.layer2).unwrap();
    let uniform = uniform_import_sigma(
        [(&f.software.layer1.plus, &f.software.layer1.minus), (&f.software.layer2.plus, &f.software.layer2.minus)],
        cfg.import_tuning.tolerance,
    );
    let sigma30 = sigma.residual;
    let mut sigmas = vec![0.0, 0.02, 0.05, 0.1, 0.15, 0.2, 0.3, sigma30];
    sigmas.sort_by(f64::total_cmp);
    let sweep_cfg = SweepConfig { sigmas, runs: 100, weight_limit: 90e-6, seed: 0 };
    let sweep = precision_sweep(&f.software_net(), &f.train, &f.test, &FOUR_CLASSES, &sweep_cfg).unwrap();
    let monotone = |s: &[memxbar::benchmark::SweepStats]| s.windows(2).all(|w| w[1].median <= w[0].median);
    let at30 = sweep.train.iter().find(|s| s.sigma == sigma30).unwrap().median;
    let zero = &sweep.train[0];
    let zero_test = &sweep.test[0];
    let band = (zero.p75 - zero.p25).max(zero_test.p75 - zero_test.p25);
    let medians: Vec<String> = sweep.train.iter().map(|s| format!("{:.3}:{}", s.sigma, pct(s.median))).collect();
    verdict(
        monotone(&sweep.train) && monotone(&sweep.test) && at30 >= 0.95 && band == 0.0,
        format!(
            "σ30 {sigma30:.4} (gain-removed; raw {:.4}, uniform-independent {uniform:.4}), median train at σ30 {} \
             (need ≥ 95%), medians non-increasing train {} test {}, σ = 0 band width {band} [{}]",
            sigma.raw,
            pct(at30),
            monotone(&sweep.train),
            monotone(&sweep.test),
            medians.join(" ")
        ),
    )
}

fn in_situ(f: &Fixture) -> Verdict {
    let topology = NetworkTopology::with_outputs(3);
    let patterns = class_subset(&f.train, &THREE_CLASSES);
    let runs: Vec<TrainingOutcome> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| run_in_situ(&PipelineConfig { seed, ..Default::default() }, &topology, &patterns, &THREE_CLASSES).unwrap().0)
        .collect();
    let finals: Vec<f64> = runs.iter().map(|r| r.final_fidelity()).collect();
    let epochs = runs[0].curve.len();
    let median_curve = |metric: &dyn Fn(&memxbar::training::CurvePoint) -> f64| -> Vec<f64> {
        let per_epoch = (0..epochs).map(|e| median(&runs.iter().map(|r| metric(&r.curve[e])).collect::<Vec<_>>()));
        smoothed(&per_epoch.collect::<Vec<_>>(), 5)
    };
    // Error is the misclassified fraction of the training patterns.
    let error = median_curve(&|c| 1.0 - c.fidelity);
    let mse = median_curve(&|c| c.mse);
    let decays = |trend: &[f64]| least_squares_slope(trend) < 0.0 && trend[trend.len() - 1] < trend[0];
    let m = median(&finals);
    let (lo, hi) = finals.iter().fold((1.0f64, 0.0f64), |(a, b), x| (a.min(*x), b.max(*x)));
    verdict(
        (0.60..=0.85).contains(&m) && decays(&error),
        format!(
            "median final fidelity {} over {SEEDS} seeds (need 60–85%; per-seed {}–{}), smoothed median \
             classification error {:.3} → {:.3}, slope {:.4}/epoch (need decreasing); smoothed median MSE \
             {:.1} → {:.1}, slope {:.3}/epoch (reported only)",
            pct(m),
            pct(lo),
            pct(hi),
            error[0],
            error[error.len() - 1],
            least_squares_slope(&error),
            mse[0],
            mse[mse.len() - 1],
            least_squares_slope(&mse)
        ),
    )
}

/// Least-squares slope of a series against its index.
fn least_squares_slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = y.iter().sum::<f64>() / n;
    let num = y.iter().enumerate().map(|(i, v)| (i as f64 - x_mean) * (v - y_mean)).sum::<f64>();
    let den = (0..y.len()).map(|i| (i as f64 - x_mean).powi(2)).sum::<f64>();
    num / den
}

/// Serialized artifacts of one seeded run, used for replay comparison.
fn artifacts(f: &Fixture, seed: u64) -> Vec<u8> {
    let cfg = PipelineConfig { seed, ..Default::default() };
    let run = run_ex_situ(&cfg, EX_SITU_AWARE, &f.topology, &f.train, &f.test, &FOUR_CLASSES).unwrap();
    let mut out = Vec::new();
    write_curve_csv(&mut out, &run.training.curve).unwrap();
    out.extend(serde_json::to_vec(&run.training.layer1).unwrap());
    out.extend(serde_json::to_vec(&run.hw.layer2.conductances()).unwrap());
    out.extend(serde_json::to_vec(&run.hardware).unwrap());
    let sweep_cfg = SweepConfig { sigmas: vec![0.0, 0.1], runs: 10, weight_limit: 90e-6, seed };
    let sweep = precision_sweep(&f.software_net(), &f.train, &f.test, &FOUR_CLASSES, &sweep_cfg).unwrap();
    write_sweep_csv(&mut out, &sweep.train).unwrap();
    out
}

fn property_suites(f: &Fixture) -> Verdict {
    let mut failures = Vec::new();

    // Device pulse trains.
    let spec = DeviceVariationSpec::default();
    let stuck_spec = DeviceVariationSpec { stuck_probability: 1.0, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut device_bad = 0;
    for seed in 0..10_000u64 {
        let mut d = sample_device_seeded(&spec, seed).unwrap();
        let mut frozen = sample_device_seeded(&stuck_spec, seed).unwrap();
        let g_frozen = frozen.conductance;
        for _ in 0..rng.gen_range(1..40) {
            let (a, w) = (rng.gen_range(-2.4..2.4), rng.gen_range(50e-6..2e-3));
            let expected = if d.stuck { 0.0 } else { expected_step(&d, a, w) };
            let dg = d.apply_pulse(a, w).unwrap();
            frozen.apply_pulse(a, w).unwrap();
            let clamped = d.conductance >= d.g_min && d.conductance <= d.g_max;
            let polarity = if a > 0.0 { dg >= 0.0 } else { dg <= 0.0 };
            if !clamped || !polarity || (dg - expected).abs() > 1e-12 * d.g_max || frozen.conductance != g_frozen {
                device_bad += 1;
            }
        }
    }
    if device_bad > 0 {
        failures.push(format!("{device_bad} device pulse violations"));
    }

    // Test-set construction.
    let exhaustive = f.test.len() == 640
        && f.test.iter().enumerate().all(|(k, p)| {
            let (parent, pixel) = test_provenance(k);
            let src = &f.train[parent];
            p.label == src.label && p.hamming(src) == 1 && p.pixels[pixel] != src.pixels[pixel]
        })
        && (0..40).all(|parent| {
            let mut flips: Vec<_> = f.test[parent * PIXELS..(parent + 1) * PIXELS].iter().map(|p| p.pixels).collect();
            flips.sort();
            flips.dedup();
            flips.len() == PIXELS
        });
    if !exhaustive {
        failures.push("test set is not the 640 single-pixel flips".into());
    }

    // Hidden-layer saturation.
    let mut saturation_bad = 0;
    let (s1, s2) = (f.topology.layer1_shape(), f.topology.layer2_shape());
    let random_map = |rng: &mut ChaCha8Rng, shape: (usize, usize), layer| {
        let mut g = || Array2::from_shape_simple_fn(shape, || rng.gen_range(2e-6..150e-6));
        let (plus, minus) = (g(), g());
        ConductancePairMap::new(plus, minus, layer).unwrap()
    };
    for k in 0..10_000 {
        let (l1, l2) = (random_map(&mut rng, s1, 1), random_map(&mut rng, s2, 2));
        let net = Network::from_maps(f.topology.clone(), &l1, &l2, IDEAL, 0.0).unwrap();
        let inf = net.infer(&f.test[k % f.test.len()]).unwrap();
        if inf.hidden.iter().any(|h| h.abs() > 0.2) {
            saturation_bad += 1;
        }
    }
    if saturation_bad > 0 {
        failures.push(format!("{saturation_bad} inferences exceeded the hidden saturation bound"));
    }

    // Seed replay.
    let deterministic = artifacts(f, 3) == artifacts(f, 3);
    if !deterministic {
        failures.push("seed replay produced different artifacts".into());
    }

    if failures.is_empty() {
        verdict(
            true,
            "10⁴ device pulse trains, 640 Hamming-1 test patterns, 10⁴ saturation-bounded inferences, byte-identical replay",
        )
    } else {
        verdict(false, failures.join("; "))
    }
}

fn main() {
    let start = Instant::now();
    let fixture = Fixture::new();
    let aware = hardware_runs(&fixture, EX_SITU_AWARE);
    let oblivious = hardware_runs(&fixture, EX_SITU_OBLIVIOUS);

    let verdicts = [
        software_training(&fixture),
        aware_pipeline(&fixture, &aware),
        oblivious_below_aware(&aware, &oblivious),
        smiley_tuning(),
        scaling(),
        solver_oracles(),
        gradient_check(&fixture),
        precision(&fixture),
        in_situ(&fixture),
        property_suites(&fixture),
    ];

    let mut unexpected = 0;
    for (i, v) in verdicts.iter().enumerate() {
        let n = i + 1;
        let known = KNOWN_UNATTAINABLE.contains(&n);
        let note = match (v.pass, known) {
            (false, true) => " [known unattainable]",
            (true, true) => " [expected to fail; update KNOWN_UNATTAINABLE]",
            _ => "",
        };
        if v.pass == known {
            unexpected += 1;
        }
        println!("criterion {n}: {}{note} — {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    let passed = verdicts.iter().filter(|v| v.pass).count();
    println!("acceptance: {passed}/{} passed, {unexpected} unexpected, {:.1?}", verdicts.len(), start.elapsed());
    if unexpected > 0 {
        std::process::exit(1);
    }
}
