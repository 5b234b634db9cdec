//! Letter-classification benchmark: 4×4 binary patterns of A, T, V and X,
//! single-pixel-flip test set, fidelity evaluation, weight-precision Monte
//! Carlo and a linear-separability check.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use minilp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};
use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, Max, Min, OrderStatistics};

use crate::error::{Result, SimError};
use crate::mlp::WeightNetwork;
use crate::rng::{derive_seed, indexed_rng, NOISE_STREAM};

pub const PIXELS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Letter {
    A,
    T,
    V,
    X,
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            Letter::A => 'A',
            Letter::T => 'T',
            Letter::V => 'V',
            Letter::X => 'X',
        };
        write!(f, "{c}")
    }
}

impl FromStr for Letter {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(Letter::A),
            "T" => Ok(Letter::T),
            "V" => Ok(Letter::V),
            "X" => Ok(Letter::X),
            other => Err(SimError::Parse(format!("unknown class letter '{other}'"))),
        }
    }
}

/// Output-neuron order of the full four-class task.
pub const FOUR_CLASSES: [Letter; 4] = [Letter::A, Letter::T, Letter::V, Letter::X];
/// Output-neuron order of the three-class in-situ task.
pub const THREE_CLASSES: [Letter; 3] = [Letter::A, Letter::V, Letter::T];

/// A 4×4 binary image (row-major) with its class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pattern {
    pub pixels: [bool; PIXELS],
    pub label: Letter,
}

impl Pattern {
    pub fn flipped(&self, pixel: usize) -> Pattern {
        let mut p = *self;
        p.pixels[pixel] = !p.pixels[pixel];
        p
    }

    pub fn hamming(&self, other: &Pattern) -> usize {
        self.pixels.iter().zip(&other.pixels).filter(|(a, b)| a != b).count()
    }

    /// Pixels as ±1 (1 for a set pixel).
    pub fn signs(&self) -> [f64; PIXELS] {
        self.pixels.map(|p| if p { 1.0 } else { -1.0 })
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &p in &self.pixels {
            write!(f, "{}", if p { '1' } else { '0' })?;
        }
        write!(f, " {}", self.label)
    }
}

impl FromStr for Pattern {
    type Err = SimError;

    fn from_str(line: &str) -> Result<Self> {
        let (bits, label) = line
            .split_once(' ')
            .ok_or_else(|| SimError::Parse(format!("expected '<16 bits> <letter>', got '{line}'")))?;
        if bits.len() != PIXELS {
            return Err(SimError::Parse(format!("expected {PIXELS} pixels, got '{bits}'")));
        }
        let mut pixels = [false; PIXELS];
        for (i, ch) in bits.chars().enumerate() {
            pixels[i] = match ch {
                '0' => false,
                '1' => true,
                other => return Err(SimError::Parse(format!("invalid pixel '{other}' in '{bits}'"))),
            };
        }
        Ok(Pattern { pixels, label: label.parse()? })
    }
}

/// Parse one pattern per line; blank lines and `#` comments are ignored.
pub fn parse_patterns(text: &str) -> Result<Vec<Pattern>> {
    text.lines()
        .map(str::trim_end)
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(str::parse)
        .collect()
}

pub fn format_patterns(patterns: &[Pattern]) -> String {
    patterns.iter().map(|p| format!("{p}\n")).collect()
}

pub fn load_patterns(path: &Path) -> Result<Vec<Pattern>> {
    parse_patterns(&std::fs::read_to_string(path)?)
}

const CANONICAL: &str = include_str!("../data/training_patterns.txt");

/// The frozen 40-pattern training set, 10 variants per letter.
pub fn canonical_training_set() -> Vec<Pattern> {
    parse_patterns(CANONICAL).expect("bundled pattern file is well formed")
}

/// Training patterns whose label is one of `classes`.
pub fn class_subset(patterns: &[Pattern], classes: &[Letter]) -> Vec<Pattern> {
    patterns.iter().filter(|p| classes.contains(&p.label)).copied().collect()
}

/// Every single-pixel flip of every training pattern, parent-major: test
/// pattern `k` is parent `k / 16` with pixel `k % 16` flipped.
pub fn generate_test_set(training: &[Pattern]) -> Vec<Pattern> {
    training
        .iter()
        .flat_map(|p| (0..PIXELS).map(move |i| p.flipped(i)))
        .collect()
}

/// `(parent index, flipped pixel)` of test pattern `k`.
pub fn test_provenance(k: usize) -> (usize, usize) {
    (k / PIXELS, k % PIXELS)
}

pub fn class_index(classes: &[Letter], label: Letter) -> Result<usize> {
    classes
        .iter()
        .position(|&c| c == label)
        .ok_or_else(|| SimError::Domain(format!("label {label} not in class set {classes:?}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub fidelity: f64,
    pub correct: usize,
    pub total: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Fraction of `patterns` the model labels correctly, plus the confusion matrix.
pub fn evaluate_fidelity<F>(model: F, patterns: &[Pattern], classes: &[Letter]) -> Result<FidelityReport>
where
    F: Fn(&Pattern) -> Result<usize>,
{
    let n = classes.len();
    let mut confusion = vec![vec![0; n]; n];
    let mut correct = 0;
    for p in patterns {
        let truth = class_index(classes, p.label)?;
        let predicted = model(p)?;
        if predicted >= n {
            return Err(SimError::Domain(format!("model predicted class {predicted} of {n}")));
        }
        confusion[truth][predicted] += 1;
        if truth == predicted {
            correct += 1;
        }
    }
    let total = patterns.len();
    let fidelity = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
    Ok(FidelityReport { fidelity, correct, total, confusion })
}

/// Whether a single layer (16 inputs + bias → one score per class, argmax)
/// can classify every pattern correctly. Decided as feasibility of
/// `(w_c − w_d)·x ≥ 1` for each pattern of class `c` and every `d ≠ c`.
pub fn linear_separability_check(patterns: &[Pattern]) -> Result<bool> {
    if patterns.is_empty() {
        return Err(SimError::Domain("separability of an empty set is undefined".into()));
    }
    let mut classes: Vec<Letter> = patterns.iter().map(|p| p.label).collect();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Ok(true);
    }
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let weights: Vec<Vec<minilp::Variable>> = classes
        .iter()
        .map(|_| (0..=PIXELS).map(|_| lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY))).collect())
        .collect();
    for p in patterns {
        let c = class_index(&classes, p.label)?;
        let mut x = p.signs().to_vec();
        x.push(1.0);
        for d in (0..classes.len()).filter(|&d| d != c) {
            let mut expr = LinearExpr::empty();
            for (i, &xi) in x.iter().enumerate() {
                expr.add(weights[c][i], xi);
                expr.add(weights[d][i], -xi);
            }
            lp.add_constraint(expr, ComparisonOp::Ge, 1.0);
        }
    }
    match lp.solve() {
        Ok(_) => Ok(true),
        Err(minilp::Error::Infeasible) => Ok(false),
        Err(e) => Err(SimError::Domain(format!("separability LP failed: {e}"))),
    }
}

/// Distribution summary of one noise level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepStats {
    pub sigma: f64,
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
    pub min: f64,
    pub max: f64,
}

impl SweepStats {
    pub fn from_samples(sigma: f64, samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(SimError::Domain("no samples".into()));
        }
        let mut data = Data::new(samples.to_vec());
        Ok(Self {
            sigma,
            median: data.median(),
            p25: data.lower_quartile(),
            p75: data.upper_quartile(),
            min: data.min(),
            max: data.max(),
        })
    }

    pub fn is_ordered(&self) -> bool {
        self.min <= self.p25 && self.p25 <= self.median && self.median <= self.p75 && self.p75 <= self.max
    }
}

pub fn write_sweep_csv<W: Write>(writer: W, stats: &[SweepStats]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["sigma", "median", "p25", "p75", "min", "max"])?;
    for s in stats {
        w.write_record([s.sigma, s.median, s.p25, s.p75, s.min, s.max].map(|x| format!("{x:.6}")))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionSweep {
    pub train: Vec<SweepStats>,
    pub test: Vec<SweepStats>,
}

/// Settings for [`precision_sweep`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Noise standard deviations as fractions of each layer's largest |W|.
    pub sigmas: Vec<f64>,
    pub runs: usize,
    /// Largest representable |W| in siemens; perturbed weights are clipped to it.
    pub weight_limit: f64,
    pub seed: u64,
}

/// Perturb every weight by `N(0, (σ·max_layer|W|)²)`, clip, and evaluate.
///
/// Run `r` uses the same standard-normal draws at every σ (common random
/// numbers), so medians across σ compare like with like.
pub fn precision_sweep(
    net: &WeightNetwork,
    train: &[Pattern],
    test: &[Pattern],
    classes: &[Letter],
    cfg: &SweepConfig,
) -> Result<PrecisionSweep> {
    if cfg.runs == 0 {
        return Err(SimError::Config("precision sweep needs at least one run".into()));
    }
    if cfg.sigmas.iter().any(|s| !(*s >= 0.0)) {
        return Err(SimError::Config("noise sigmas must be non-negative".into()));
    }
    let noise_seed = derive_seed(cfg.seed, NOISE_STREAM);
    let scale1 = net.w1.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let scale2 = net.w2.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let cells: Vec<(usize, usize)> = (0..cfg.sigmas.len())
        .flat_map(|s| (0..cfg.runs).map(move |r| (s, r)))
        .collect();
    let results: Vec<(f64, f64)> = cells
        .par_iter()
        .map(|&(s, run)| -> Result<(f64, f64)> {
            let sigma = cfg.sigmas[s];
            let mut rng = indexed_rng(noise_seed, run as u64);
            let mut perturb = |w: &Array2<f64>, scale: f64| {
                w.mapv(|x| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (x + sigma * scale * z).clamp(-cfg.weight_limit, cfg.weight_limit)
                })
            };
            let w1 = perturb(&net.w1, scale1);
            let w2 = perturb(&net.w2, scale2);
            let noisy = WeightNetwork::new(net.topology.clone(), w1, w2)?;
            let tr = evaluate_fidelity(|p| noisy.classify(p), train, classes)?.fidelity;
            let te = evaluate_fidelity(|p| noisy.classify(p), test, classes)?.fidelity;
            Ok((tr, te))
        })
        .collect::<Result<_>>()?;
    let mut out = PrecisionSweep { train: Vec::new(), test: Vec::new() };
    for (s, &sigma) in cfg.sigmas.iter().enumerate() {
        let block = &results[s * cfg.runs..(s + 1) * cfg.runs];
        let tr: Vec<f64> = block.iter().map(|r| r.0).collect();
        let te: Vec<f64> = block.iter().map(|r| r.1).collect();
        out.train.push(SweepStats::from_samples(sigma, &tr)?);
        out.test.push(SweepStats::from_samples(sigma, &te)?);
    }
    Ok(out)
}

/// Import error expressed in precision-sweep units (fractions of each
/// layer's largest |W|), maximised over the two layers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportSigma {
    /// RMS of `W_imported − W_target`.
    pub raw: f64,
    /// RMS left after removing the least-squares common gain of each layer.
    pub residual: f64,
    /// Least-squares gain `W_imported ≈ gain·W_target` per layer.
    pub gain: [f64; 2],
}

/// Compare imported weights with their targets layer by layer.
pub fn import_error_sigma(target: [&Array2<f64>; 2], imported: [&Array2<f64>; 2]) -> Result<ImportSigma> {
    let mut out = ImportSigma { raw: 0.0, residual: 0.0, gain: [0.0; 2] };
    for l in 0..2 {
        let (w, v) = (target[l], imported[l]);
        if w.dim() != v.dim() {
            return Err(SimError::Shape(format!("layer {} target {:?} vs imported {:?}", l + 1, w.dim(), v.dim())));
        }
        let scale = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let norm = w.iter().map(|x| x * x).sum::<f64>();
        if scale == 0.0 || norm == 0.0 {
            return Err(SimError::Domain(format!("layer {} target weights are all zero", l + 1)));
        }
        let n = w.len() as f64;
        let gain = w.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / norm;
        let raw = (w.iter().zip(v).map(|(a, b)| (b - a).powi(2)).sum::<f64>() / n).sqrt() / scale;
        let residual = (w.iter().zip(v).map(|(a, b)| (b - gain * a).powi(2)).sum::<f64>() / n).sqrt() / scale;
        out.raw = out.raw.max(raw);
        out.residual = out.residual.max(residual);
        out.gain[l] = gain;
    }
    Ok(out)
}

/// Sweep σ if every conductance independently landed uniformly within
/// `±tolerance` of its target: per weight `sd = tolerance/√3·√(G⁺² + G⁻²)`,
/// RMS over the layer, relative to the layer's largest |W|, maximised over layers.
pub fn uniform_import_sigma(layers: [(&Array2<f64>, &Array2<f64>); 2], tolerance: f64) -> f64 {
    layers
        .iter()
        .map(|(plus, minus)| {
            let scale = plus.iter().zip(minus.iter()).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
            let ms = plus.iter().zip(minus.iter()).map(|(p, q)| p * p + q * q).sum::<f64>() / plus.len() as f64;
            tolerance / 3f64.sqrt() * ms.sqrt() / scale
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pat(bits: &str, label: Letter) -> Pattern {
        format!("{bits} {label}").parse().unwrap()
    }

    #[test]
    fn import_sigma_separates_gain_from_noise() {
        let w = Array2::from_shape_vec((1, 4), vec![1.0, -2.0, 4.0, -1.0]).unwrap();
        let scaled = w.mapv(|x| 0.5 * x);
        let s = import_error_sigma([&w, &w], [&scaled, &w]).unwrap();
        assert!((s.gain[0] - 0.5).abs() < 1e-12 && (s.gain[1] - 1.0).abs() < 1e-12);
        assert!(s.residual < 1e-12);
        // rms(0.5·w)/4 = 0.5·sqrt(22/4)/4
        assert!((s.raw - 0.5 * (22.0f64 / 4.0).sqrt() / 4.0).abs() < 1e-12);
        let zero = Array2::zeros((1, 4));
        assert!(import_error_sigma([&zero, &w], [&zero, &w]).is_err());
    }

    #[test]
    fn uniform_sigma_formula() {
        let p = Array2::from_elem((1, 1), 40.0);
        let m = Array2::from_elem((1, 1), 10.0);
        let expected = 0.3 / 3f64.sqrt() * (1700.0f64).sqrt() / 30.0;
        assert!((uniform_import_sigma([(&p, &m), (&p, &m)], 0.3) - expected).abs() < 1e-12);
    }

    #[test]
    fn canonical_set_shape() {
        let set = canonical_training_set();
        assert_eq!(set.len(), 40);
        for letter in FOUR_CLASSES {
            assert_eq!(set.iter().filter(|p| p.label == letter).count(), 10);
        }
        let unique: std::collections::HashSet<_> = set.iter().map(|p| p.pixels).collect();
        assert_eq!(unique.len(), 40);
    }

    #[test]
    fn parse_and_format_round_trip() {
        let set = canonical_training_set();
        assert_eq!(parse_patterns(&format_patterns(&set)).unwrap(), set);
        assert!("0101 A".parse::<Pattern>().is_err());
        assert!("010101010101010z A".parse::<Pattern>().is_err());
        assert!("0101010101010101 Q".parse::<Pattern>().is_err());
        assert!("0101010101010101A".parse::<Pattern>().is_err());
    }

    #[test]
    fn test_set_construction() {
        let train = canonical_training_set();
        let test = generate_test_set(&train);
        assert_eq!(test.len(), 640);
        for (k, t) in test.iter().enumerate() {
            let (parent, pixel) = test_provenance(k);
            assert_eq!(t.hamming(&train[parent]), 1);
            assert_eq!(t.label, train[parent].label);
            assert_eq!(t.flipped(pixel), train[parent]);
        }
    }

    #[test]
    fn perfect_model_gives_diagonal_confusion() {
        let set = canonical_training_set();
        let r = evaluate_fidelity(|p| class_index(&FOUR_CLASSES, p.label), &set, &FOUR_CLASSES).unwrap();
        assert_eq!(r.fidelity, 1.0);
        for (i, row) in r.confusion.iter().enumerate() {
            assert_eq!(row[i], 10);
            assert_eq!(row.iter().sum::<usize>(), 10);
        }
        let bad = evaluate_fidelity(|_| Ok(0), &set, &FOUR_CLASSES).unwrap();
        assert_eq!(bad.fidelity, 0.25);
    }

    #[test]
    fn separability_trivial_cases() {
        let mut a = [false; 16];
        a[0] = true;
        let mut b = [false; 16];
        b[1] = true;
        let one_hot = [Pattern { pixels: a, label: Letter::A }, Pattern { pixels: b, label: Letter::T }];
        assert!(linear_separability_check(&one_hot).unwrap());
        // XOR on the first two pixels.
        let xor = [
            pat("0000000000000000", Letter::A),
            pat("1100000000000000", Letter::A),
            pat("1000000000000000", Letter::T),
            pat("0100000000000000", Letter::T),
        ];
        assert!(!linear_separability_check(&xor).unwrap());
        assert!(linear_separability_check(&[]).is_err());
    }

    #[test]
    fn canonical_set_is_not_linearly_separable() {
        let set = canonical_training_set();
        assert!(!linear_separability_check(&set).unwrap());
        // Independent certificate: two V patterns and two X patterns with
        // equal pixel sums rule out any V-vs-X linear discriminant.
        let of = |l| set.iter().filter(move |p| p.label == l).collect::<Vec<_>>();
        let sum = |a: &Pattern, b: &Pattern| -> Vec<u8> {
            a.pixels.iter().zip(&b.pixels).map(|(x, y)| *x as u8 + *y as u8).collect()
        };
        let (vs, xs) = (of(Letter::V), of(Letter::X));
        let mut found = false;
        for i in 0..vs.len() {
            for j in i + 1..vs.len() {
                for k in 0..xs.len() {
                    for l in k + 1..xs.len() {
                        found |= sum(vs[i], vs[j]) == sum(xs[k], xs[l]);
                    }
                }
            }
        }
        assert!(found);
    }

    #[test]
    fn stats_are_ordered() {
        let s = SweepStats::from_samples(0.1, &[0.9, 1.0, 0.7, 0.95, 0.8]).unwrap();
        assert!(s.is_ordered());
        assert_eq!(s.median, 0.9);
        assert_eq!((s.min, s.max), (0.7, 1.0));
        let flat = SweepStats::from_samples(0.0, &[0.5; 7]).unwrap();
        assert_eq!(flat.p75 - flat.p25, 0.0);
    }

    #[test]
    fn sweep_csv_header() {
        let mut out = Vec::new();
        write_sweep_csv(&mut out, &[SweepStats::from_samples(0.0, &[1.0]).unwrap()]).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("sigma,median,p25,p75,min,max\n"));
    }
}
