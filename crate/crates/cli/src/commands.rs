//! The six subcommands. Each one loads and validates everything it needs
//! (configuration, input artifacts) before creating the output directory,
//! so a bad invocation leaves no partial results behind.

use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use memxbar::benchmark::{
    canonical_training_set, class_subset, evaluate_fidelity, generate_test_set, load_patterns, precision_sweep,
    write_sweep_csv, FidelityReport, Letter, Pattern, SweepConfig,
};
use memxbar::crossbar::{
    build_crossbar, ladder_drop_curve, read_grid_csv, scaling_table, write_grid_csv, Crossbar, SwitchingWindow,
};
use memxbar::forming::{block_targets, form_all};
use memxbar::mlp::{argmax, write_output_records, ConductancePairMap, Network, NetworkTopology, OutputRecord, WeightNetwork};
use memxbar::pipeline::{crossbar_seed, evaluate_pair, FidelityPair};
use memxbar::training::{train_single_layer, training_strategies, write_curve_csv, TrainingContext, IN_SITU};
use memxbar::tuning::{import_block, smiley_target_map, ErrorHistogram};
use memxbar::SimError;

use crate::config::ExperimentConfig;

/// Failures with a dedicated exit code that do not come from the library.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration or invocation (exit code 2).
    Config(String),
    /// An iterative procedure did not reach its target (exit code 3).
    NotConverged(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::NotConverged(m) => write!(f, "did not converge: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NOT_CONVERGED: u8 = 3;

/// Exit code for an error: the first classifiable cause in the chain wins.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return match f {
                Failure::Config(_) => EXIT_CONFIG,
                Failure::NotConverged(_) => EXIT_NOT_CONVERGED,
            };
        }
        if let Some(e) = cause.downcast_ref::<SimError>() {
            match e {
                SimError::Config(_) | SimError::UnknownStrategy { .. } => return EXIT_CONFIG,
                SimError::Divergence(_) => return EXIT_NOT_CONVERGED,
                _ => {}
            }
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() {
            return EXIT_CONFIG;
        }
    }
    EXIT_FAILURE
}

fn config_error(e: impl fmt::Display) -> anyhow::Error {
    Failure::Config(e.to_string()).into()
}

#[derive(Debug, Parser)]
#[command(name = "xbar", version, about = "Passive memristive crossbar MLP simulator")]
pub struct Cli {
    /// Experiment configuration (TOML); library defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Root seed (overrides `seed` in the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample both crossbars and run the forming procedure.
    Form,
    /// Write-and-verify a conductance map into a crossbar snapshot.
    Tune(TuneArgs),
    /// Train the network.
    Train(TrainArgs),
    /// Run inference over a pattern file.
    Infer(InferArgs),
    /// Weight-precision sweep of trained weights.
    Sweep(SweepArgs),
    /// Line-resistance scaling analysis.
    Scale,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// Crossbar snapshot to tune [default: <out>/crossbar_layer1.json].
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    /// Target conductances (CSV grid, siemens) tuned into the top-left block;
    /// the built-in smiley image over the whole array when omitted.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Use the `[import]` tolerance instead of the `[tuning]` one.
    #[arg(long)]
    pub import: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training strategy: ex-situ-oblivious, ex-situ-aware, or in-situ.
    #[arg(long)]
    pub mode: String,
    /// Formed crossbar snapshots for the two layers (aware and in-situ modes)
    /// [default: <out>/crossbar_layer1.json <out>/crossbar_layer2.json].
    #[arg(long, num_args = 2, value_names = ["LAYER1", "LAYER2"])]
    pub snapshots: Option<Vec<PathBuf>>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Layer-1 crossbar snapshot (.json) or interleaved weight grid (.csv).
    #[arg(long)]
    pub layer1: PathBuf,
    /// Layer-2 crossbar snapshot (.json) or interleaved weight grid (.csv).
    #[arg(long)]
    pub layer2: PathBuf,
    /// Pattern file; the canonical training set when omitted.
    #[arg(long, conflicts_with = "test_set")]
    pub patterns: Option<PathBuf>,
    /// Evaluate the single-pixel-flip test set of the training patterns.
    #[arg(long)]
    pub test_set: bool,
    /// Output-neuron classes, e.g. `A,V,T` [default: `[benchmark] classes`].
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<Letter>>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Interleaved weight grids of the trained network
    /// [default: <out>/weights_layer1.csv <out>/weights_layer2.csv].
    #[arg(long, num_args = 2, value_names = ["LAYER1", "LAYER2"])]
    pub weights: Option<Vec<PathBuf>>,
}

/// Resolved invocation: configuration with overrides applied, and the output directory.
pub struct Invocation {
    pub config: ExperimentConfig,
    pub out: PathBuf,
}

impl Invocation {
    pub fn resolve(cli: &Cli) -> anyhow::Result<Self> {
        let mut config = match &cli.config {
            Some(path) => ExperimentConfig::load(path).map_err(|e| config_error(format!("{e:#}")))?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = cli.seed {
            config.seed = seed;
        }
        config.validate().map_err(|e| config_error(format!("{e:#}")))?;
        let out = cli.out.clone().or_else(|| config.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
        Ok(Self { config, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Create the output directory and record the configuration that produced it.
    fn prepare(&self, command: &str) -> anyhow::Result<()> {
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        std::fs::write(self.path(&format!("{command}.config.toml")), self.config.to_toml()?)?;
        Ok(())
    }
}

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    let ctx = Invocation::resolve(cli)?;
    match &cli.command {
        Command::Form => cmd_form(&ctx),
        Command::Tune(args) => cmd_tune(&ctx, args),
        Command::Train(args) => cmd_train(&ctx, args),
        Command::Infer(args) => cmd_infer(&ctx, args),
        Command::Sweep(args) => cmd_sweep(&ctx, args),
        Command::Scale => cmd_scale(&ctx),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn load_snapshot(path: &Path) -> anyhow::Result<Crossbar> {
    Crossbar::load_json(path).with_context(|| format!("loading crossbar snapshot {}", path.display()))
}

fn snapshot_pair(ctx: &Invocation, given: &Option<Vec<PathBuf>>) -> [PathBuf; 2] {
    match given.as_deref() {
        Some([a, b]) => [a.clone(), b.clone()],
        _ => [ctx.path("crossbar_layer1.json"), ctx.path("crossbar_layer2.json")],
    }
}

fn training_patterns(ctx: &Invocation, classes: &[Letter]) -> anyhow::Result<Vec<Pattern>> {
    let all = match &ctx.config.benchmark.patterns {
        Some(path) => load_patterns(path).with_context(|| format!("loading patterns {}", path.display()))?,
        None => canonical_training_set(),
    };
    let subset = class_subset(&all, classes);
    if subset.is_empty() {
        return Err(config_error(format!("no training patterns for classes {classes:?}")));
    }
    Ok(subset)
}

#[derive(Serialize)]
struct FormSummary {
    layer: usize,
    seed: u64,
    formed_targets: usize,
    defective_fraction: f64,
    stuck_devices: usize,
}

pub fn cmd_form(ctx: &Invocation) -> anyhow::Result<()> {
    let cfg = ctx.config.pipeline();
    let targets: Vec<(usize, usize)> = match &ctx.config.forming.targets {
        Some(t) => t.iter().map(|&[r, c]| (r, c)).collect(),
        None => block_targets(cfg.rows, cfg.cols),
    };
    let mut layers = Vec::new();
    for layer in 1..=2 {
        let seed = crossbar_seed(cfg.seed, layer);
        let mut x = build_crossbar(cfg.rows, cfg.cols, &cfg.device, cfg.wire_segment_resistance, seed)?
            .with_line_model(&cfg.line_model)?;
        let report = form_all(&mut x, &targets, &cfg.forming)?;
        layers.push((layer, seed, x, report));
    }
    ctx.prepare("form")?;
    let mut summary = Vec::new();
    for (layer, seed, x, report) in &layers {
        x.save_json(&ctx.path(&format!("crossbar_layer{layer}.json")))?;
        report.save_json(&ctx.path(&format!("forming_layer{layer}.json")))?;
        summary.push(FormSummary {
            layer: *layer,
            seed: *seed,
            formed_targets: targets.len(),
            defective_fraction: report.defective_fraction,
            stuck_devices: x.devices().iter().filter(|d| d.stuck).count(),
        });
    }
    write_json(&ctx.path("forming_summary.json"), &summary)
}

#[derive(Serialize)]
struct TuneSummary {
    snapshot: String,
    tolerance: f64,
    tuned: usize,
    skipped_stuck: usize,
    converged: usize,
    max_error: f64,
    total_pulses: usize,
}

pub fn cmd_tune(ctx: &Invocation, args: &TuneArgs) -> anyhow::Result<()> {
    let snapshot = args.snapshot.clone().unwrap_or_else(|| ctx.path("crossbar_layer1.json"));
    let mut xbar = load_snapshot(&snapshot)?;
    let targets = match &args.target {
        Some(path) => read_grid_csv(path).with_context(|| format!("reading target map {}", path.display()))?,
        None => smiley_target_map(xbar.rows(), xbar.cols()),
    };
    let spec = if args.import { ctx.config.import_tuning() } else { ctx.config.tuning.spec() };
    let (rows, cols) = targets.dim();
    if rows > xbar.rows() || cols > xbar.cols() {
        return Err(config_error(format!(
            "{rows}x{cols} target map does not fit the {}x{} crossbar",
            xbar.rows(),
            xbar.cols()
        )));
    }
    if let Some(bad) = targets.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
        return Err(config_error(format!("target conductances must be positive, found {bad}")));
    }
    let report = import_block(&mut xbar, 0, 0, &targets, &spec, true)?;

    let stem = snapshot.file_stem().and_then(|s| s.to_str()).unwrap_or("crossbar").to_string();
    ctx.prepare("tune")?;
    xbar.save_json(&ctx.path(&format!("{stem}_tuned.json")))?;
    write_grid_csv(&ctx.path(&format!("{stem}_errors.csv")), &report.errors)?;
    // Statistics cover the devices that were actually tuned.
    let tuned: Vec<f64> = report
        .results
        .iter()
        .zip(&report.errors)
        .filter_map(|(r, e)| r.as_ref().map(|_| *e))
        .collect();
    ErrorHistogram::from_errors(&tuned, spec.tolerance / 10.0)?.save_json(&ctx.path(&format!("{stem}_histogram.json")))?;
    let converged = report.results.iter().flatten().filter(|r| r.converged).count();
    let summary = TuneSummary {
        snapshot: snapshot.display().to_string(),
        tolerance: spec.tolerance,
        tuned: tuned.len(),
        skipped_stuck: rows * cols - tuned.len(),
        converged,
        max_error: tuned.iter().copied().fold(0.0, f64::max),
        total_pulses: report.total_pulses(),
    };
    write_json(&ctx.path(&format!("{stem}_summary.json")), &summary)?;
    if converged < tuned.len() {
        return Err(Failure::NotConverged(format!("{} of {} devices missed the tolerance", tuned.len() - converged, tuned.len())).into());
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    mode: String,
    /// `software` for ex-situ modes, `hardware` when measured on the crossbars.
    measured_on: &'static str,
    classes: Vec<Letter>,
    epochs: usize,
    final_mse: f64,
    disturbed_devices: usize,
    fidelity: FidelityPair,
}

pub fn cmd_train(ctx: &Invocation, args: &TrainArgs) -> anyhow::Result<()> {
    let strategy = training_strategies().get(&args.mode).map_err(config_error)?;
    let in_situ = args.mode == IN_SITU;
    let classes = if in_situ { &ctx.config.manhattan.classes } else { &ctx.config.benchmark.classes };
    let topology = ctx.config.topology(classes.len());
    let train = training_patterns(ctx, classes)?;
    let test = generate_test_set(&train);
    let needs_hardware = args.mode != memxbar::training::EX_SITU_OBLIVIOUS;
    let mut hardware = if needs_hardware {
        let [a, b] = snapshot_pair(ctx, &args.snapshots);
        Some((load_snapshot(&a)?, load_snapshot(&b)?))
    } else {
        None
    };

    let outcome = {
        let mut tctx = TrainingContext {
            topology: topology.clone(),
            patterns: &train,
            classes,
            config: ctx.config.training_config(),
            manhattan: ctx.config.manhattan_config(),
            hardware: hardware.as_mut().map(|(a, b)| (a, b)),
        };
        strategy.train(&mut tctx)?
    };
    let (fidelity, measured_on) = match &hardware {
        Some((x1, x2)) if in_situ => {
            let net = Network::from_crossbars(topology.clone(), x1, x2)?;
            (evaluate_pair(|p| net.classify(p), &train, &test, classes)?, "hardware")
        }
        _ => {
            let net = WeightNetwork::from_maps(topology.clone(), &outcome.layer1, &outcome.layer2)?;
            (evaluate_pair(|p| net.classify(p), &train, &test, classes)?, "software")
        }
    };

    ctx.prepare("train")?;
    write_grid_csv(&ctx.path("weights_layer1.csv"), &outcome.layer1.interleaved())?;
    write_grid_csv(&ctx.path("weights_layer2.csv"), &outcome.layer2.interleaved())?;
    write_curve_csv(create(&ctx.path("curve.csv"))?, &outcome.curve)?;
    if let (Some((x1, x2)), true) = (&hardware, in_situ) {
        x1.save_json(&ctx.path("crossbar_layer1_trained.json"))?;
        x2.save_json(&ctx.path("crossbar_layer2_trained.json"))?;
    }
    let summary = TrainSummary {
        mode: args.mode.clone(),
        measured_on,
        classes: classes.clone(),
        epochs: outcome.curve.len().saturating_sub(1),
        final_mse: outcome.curve.last().map_or(f64::NAN, |c| c.mse),
        disturbed_devices: outcome.disturbed,
        fidelity,
    };
    write_json(&ctx.path("fidelity.json"), &summary)
}

enum LayerSource {
    Snapshot(Crossbar),
    Weights(ConductancePairMap),
}

fn load_layer(path: &Path, layer: u8) -> anyhow::Result<LayerSource> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => Ok(LayerSource::Snapshot(load_snapshot(path)?)),
        Some("csv") => {
            let grid = read_grid_csv(path).with_context(|| format!("reading weights {}", path.display()))?;
            Ok(LayerSource::Weights(ConductancePairMap::from_interleaved(&grid, layer)?))
        }
        _ => Err(config_error(format!("{}: expected a .json snapshot or a .csv weight grid", path.display()))),
    }
}

/// Network from two layer artifacts. Weight grids use the configured line model.
fn build_network(ctx: &Invocation, topology: &NetworkTopology, l1: &LayerSource, l2: &LayerSource) -> anyhow::Result<Network> {
    let c = &ctx.config.crossbar;
    let as_map = |src: &LayerSource, (n, i): (usize, usize), layer: u8| -> anyhow::Result<ConductancePairMap> {
        Ok(match src {
            LayerSource::Weights(m) => m.clone(),
            LayerSource::Snapshot(x) => ConductancePairMap::from_crossbar(x, n, i, layer)?,
        })
    };
    Ok(match (l1, l2) {
        (LayerSource::Snapshot(x1), LayerSource::Snapshot(x2)) => Network::from_crossbars(topology.clone(), x1, x2)?,
        _ => Network::from_maps(
            topology.clone(),
            &as_map(l1, topology.layer1_shape(), 1)?,
            &as_map(l2, topology.layer2_shape(), 2)?,
            &c.line_model,
            c.wire_segment_resistance.si,
        )?,
    })
}

pub fn cmd_infer(ctx: &Invocation, args: &InferArgs) -> anyhow::Result<()> {
    let classes = args.classes.clone().unwrap_or_else(|| ctx.config.benchmark.classes.clone());
    if classes.len() < 2 {
        return Err(config_error("inference needs at least two classes"));
    }
    let topology = ctx.config.topology(classes.len());
    let l1 = load_layer(&args.layer1, 1)?;
    let l2 = load_layer(&args.layer2, 2)?;
    let net = build_network(ctx, &topology, &l1, &l2)?;
    let patterns = match &args.patterns {
        Some(path) => load_patterns(path).with_context(|| format!("loading patterns {}", path.display()))?,
        None if args.test_set => generate_test_set(&training_patterns(ctx, &classes)?),
        None => training_patterns(ctx, &classes)?,
    };
    let mut records = Vec::with_capacity(patterns.len());
    for (id, p) in patterns.iter().enumerate() {
        let inf = net.infer(p)?;
        records.push(OutputRecord { pattern_id: id, outputs: inf.outputs, predicted: classes[inf.class], label: p.label });
    }
    let report: FidelityReport = evaluate_fidelity(|p| net.classify(p), &patterns, &classes)?;

    ctx.prepare("infer")?;
    write_output_records(create(&ctx.path("infer_outputs.csv"))?, &records)?;
    write_json(&ctx.path("infer_summary.json"), &report)
}

#[derive(Serialize)]
struct ComparisonRow {
    model: &'static str,
    train_fidelity: f64,
    test_fidelity: f64,
}

fn write_comparison(path: &Path, rows: &[ComparisonRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["model", "train_fidelity", "test_fidelity"])?;
    for r in rows {
        w.write_record([r.model.to_string(), format!("{:.6}", r.train_fidelity), format!("{:.6}", r.test_fidelity)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_sweep(ctx: &Invocation, args: &SweepArgs) -> anyhow::Result<()> {
    let [p1, p2] = match args.weights.as_deref() {
        Some([a, b]) => [a.clone(), b.clone()],
        _ => [ctx.path("weights_layer1.csv"), ctx.path("weights_layer2.csv")],
    };
    let read = |p: &Path, layer: u8| -> anyhow::Result<ConductancePairMap> {
        let grid = read_grid_csv(p).with_context(|| format!("reading weights {}", p.display()))?;
        Ok(ConductancePairMap::from_interleaved(&grid, layer)?)
    };
    let (m1, m2) = (read(&p1, 1)?, read(&p2, 2)?);
    let classes = &ctx.config.benchmark.classes;
    let topology = ctx.config.topology(classes.len());
    let net = WeightNetwork::from_maps(topology.clone(), &m1, &m2).map_err(|e| anyhow!("{e}; were the weights trained for classes {classes:?}?"))?;
    let train = training_patterns(ctx, classes)?;
    let test = generate_test_set(&train);
    let s = &ctx.config.sweep;
    let sweep_cfg = SweepConfig {
        sigmas: s.sigmas.clone(),
        runs: s.runs,
        weight_limit: s.weight_limit.si,
        seed: ctx.config.seed,
    };
    let sweep = precision_sweep(&net, &train, &test, classes, &sweep_cfg)?;

    // Single-layer baseline trained with the same settings.
    let (single, _) = train_single_layer(&topology, &train, classes, &ctx.config.training_config())?;
    let w = single.weights();
    let single_classify = |p: &Pattern| -> memxbar::Result<usize> {
        let x = topology.encode(p);
        let o: Vec<f64> = w.outer_iter().map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum()).collect();
        Ok(argmax(&o))
    };
    let single_fid = evaluate_pair(single_classify, &train, &test, classes)?;
    let mlp_fid = evaluate_pair(|p| net.classify(p), &train, &test, classes)?;

    ctx.prepare("sweep")?;
    write_sweep_csv(create(&ctx.path("sweep_train.csv"))?, &sweep.train)?;
    write_sweep_csv(create(&ctx.path("sweep_test.csv"))?, &sweep.test)?;
    write_comparison(
        &ctx.path("comparison.csv"),
        &[
            ComparisonRow { model: "single-layer", train_fidelity: single_fid.train.fidelity, test_fidelity: single_fid.test.fidelity },
            ComparisonRow { model: "mlp", train_fidelity: mlp_fid.train.fidelity, test_fidelity: mlp_fid.test.fidelity },
        ],
    )
}

pub fn cmd_scale(ctx: &Invocation) -> anyhow::Result<()> {
    let s = &ctx.config.scale;
    let presets: Vec<(String, f64)> = s.presets.iter().map(|p| (p.name.clone(), p.segment_resistance.si)).collect();
    let windows: Vec<SwitchingWindow> = s
        .windows
        .iter()
        .map(|w| SwitchingWindow { operation: w.operation.clone(), v_th_min: w.v_th_min.si, v_th_max: w.v_th_max.si, g: w.g.si })
        .collect();
    let table = scaling_table(&presets, &windows);
    let mut curves: Vec<(String, Vec<f64>)> = Vec::new();
    for (name, r_w) in &presets {
        for w in &windows {
            curves.push((format!("{name}_{}", w.operation), ladder_drop_curve(s.curve_length, *r_w, w.g)));
        }
    }

    ctx.prepare("scale")?;
    let mut w = csv::Writer::from_writer(create(&ctx.path("ladder_drop.csv"))?);
    let mut header = vec!["n".to_string()];
    header.extend(curves.iter().map(|(name, _)| name.clone()));
    w.write_record(&header)?;
    for n in 0..s.curve_length {
        let mut row = vec![(n + 1).to_string()];
        row.extend(curves.iter().map(|(_, c)| format!("{:.9e}", c[n])));
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(create(&ctx.path("max_dimension.csv"))?);
    w.write_record(["preset", "segment_resistance_ohm", "operation", "scheme", "budget", "n_max", "diagnostic"])?;
    for r in &table {
        let scheme = serde_json::to_value(r.scheme)?.as_str().unwrap_or_default().to_string();
        w.write_record([
            r.preset.clone(),
            format!("{:.6e}", r.segment_resistance),
            r.operation.clone(),
            scheme,
            format!("{:.6}", r.budget),
            r.n_max.to_string(),
            r.diagnostic.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
