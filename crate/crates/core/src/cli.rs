//! The `erpe` command line.
//!
//! Every subcommand reads and writes files named by flags; nothing is
//! interactive. `ERPE_SEED`, when set, replaces every `--seed` value.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{
    default_compression_ratio, roc_curve, rows_from_scores, score_model, wilcoxon_signed_rank, Comparison,
    MetricsReport, ResultRow, WILCOXON_MIN_PAIRS,
};
use crate::io::{load_dataset, load_network, load_recordings, save_dataset, save_weights, synth_generate, SynthConfig};
use crate::model::{BceForm, Network, Objective, DEFAULT_BETA};
use crate::signal::{preprocess, write_columnar, GridEpoch, GridMask, Label, PreprocessConfig, EPOCH_VALUES};
use crate::tensor::optim::OptimizerKind;
use crate::train::{
    fine_tune, grid_search, make_splits, pretrain, select, write_log, Candidate, EpochRecord, Schedule, SearchGrid,
    SplitMode, TrainConfig, TrainReport, TriangularSchedule,
};

pub const SEED_ENV: &str = "ERPE_SEED";

#[derive(Debug, Parser)]
#[command(name = "erpe", version, about = "P300 epoch compression and classification with a CNN-LSTM autoencoder")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic oddball recordings.
    Synth(SynthArgs),
    /// Filter, resample, epoch and grid a columnar recording file.
    Preprocess(PreprocessArgs),
    /// Train a model on reconstruction plus classification.
    Pretrain(PretrainArgs),
    /// Train encoder and classifier with the decoder frozen.
    Finetune(FinetuneArgs),
    /// Write the latent vector of every epoch.
    Encode(EncodeArgs),
    /// Reconstruct grid epochs from latent vectors.
    Decode(DecodeArgs),
    /// Write attended probabilities for every epoch.
    Classify(ClassifyArgs),
    /// Score a model or a score file.
    Evaluate(EvaluateArgs),
    /// Search optimizer settings or the loss balance.
    Gridsearch(GridsearchArgs),
    /// Result tables, loss curves and ROC curves for trained runs.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthFormat {
    /// Columnar text recording, before preprocessing.
    Raw,
    /// Preprocessed dataset file.
    Erpe,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Output format; defaults to `erpe` for a `.erpe` path, `raw` otherwise.
    #[arg(long, value_enum)]
    pub format: Option<SynthFormat>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub subjects: usize,
    /// Trials per subject.
    #[arg(long, default_value_t = 500)]
    pub trials: usize,
    #[arg(long, default_value_t = 0.2)]
    pub attended_fraction: f64,
    /// Peak deflection in µV.
    #[arg(long, default_value_t = 10.0)]
    pub amplitude: f64,
    /// Peak time after the stimulus in seconds.
    #[arg(long, default_value_t = 0.3)]
    pub latency: f64,
    #[arg(long, default_value_t = 0.1)]
    pub width: f64,
    /// Background standard deviation in µV.
    #[arg(long, default_value_t = 5.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.5)]
    pub alpha_share: f64,
    #[arg(long, default_value_t = 250.0)]
    pub rate: f64,
    #[arg(long, default_value = "synth")]
    pub dataset_id: String,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Columnar recording file; may hold several recordings.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Apply the 50 Hz notch filter.
    #[arg(long)]
    pub notch: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Erpenet,
    SslcAe,
}

impl ModelKind {
    fn network(self, seed: u64) -> Result<Network<f32>> {
        match self {
            ModelKind::Erpenet => Network::erpenet(seed),
            ModelKind::SslcAe => Network::sslc_ae(seed),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Rmsprop,
}

impl From<OptimizerArg> for OptimizerKind {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Sgd => OptimizerKind::Sgd,
            OptimizerArg::Rmsprop => OptimizerKind::Rmsprop,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BceArg {
    /// Both cross-entropy terms.
    Full,
    /// Only the attended term.
    AttendedOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    /// Ten stratified groups, one held out.
    Holdout,
    /// Ten stratified groups, each held out in turn.
    Kfold,
}

/// Training data and the validation split.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset file; repeat to train on several datasets.
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    /// Validation dataset file. Without it a stratified group of the
    /// training data is held out.
    #[arg(long)]
    pub val: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Holdout)]
    pub split: SplitArg,
    /// Held-out group (0-9).
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
}

/// Optimizer and stopping settings shared by the training subcommands.
#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Inverse-time decay per update.
    #[arg(long)]
    pub decay: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Epochs without validation improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Running-statistics momentum of batch normalization.
    #[arg(long)]
    pub bn_momentum: Option<f64>,
    #[arg(long, value_enum, default_value_t = BceArg::Full)]
    pub bce: BceArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

impl TrainArgs {
    fn apply(&self, mut cfg: TrainConfig) -> Result<TrainConfig> {
        if let Some(o) = self.optimizer {
            cfg.optimizer = o.into();
        }
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.decay {
            cfg.decay = v;
        }
        if let Some(v) = self.epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = self.patience {
            cfg.patience = v;
        }
        if let Some(v) = self.batch {
            cfg.batch_size = v;
        }
        if let Some(v) = self.bn_momentum {
            cfg.bn_momentum = v;
        }
        cfg.bce_form = match self.bce {
            BceArg::Full => BceForm::Full,
            BceArg::AttendedOnly => BceForm::AttendedOnly,
        };
        cfg.seed = seed(self.seed)?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, value_enum, default_value_t = ModelKind::Erpenet)]
    pub model: ModelKind,
    /// Weight of the classification term.
    #[arg(long, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
    /// Weights file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Training log (JSON lines); defaults to the weights path with a
    /// `.log.jsonl` suffix.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    /// Sine ramp to the peak rate, then linear decay.
    Triangular,
    /// `--lr` with inverse-time `--decay`.
    Constant,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Pre-trained weights to start from.
    #[arg(long, required_unless_present = "init")]
    pub weights: Option<PathBuf>,
    /// Start from fresh initial weights of this model instead.
    #[arg(long, value_enum, conflicts_with = "weights")]
    pub init: Option<ModelKind>,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Triangular)]
    pub schedule: ScheduleArg,
    #[arg(long, default_value_t = 2e-5)]
    pub lr_start: f64,
    #[arg(long, default_value_t = 2e-3)]
    pub lr_peak: f64,
    #[arg(long, default_value_t = 2e-4)]
    pub lr_end: f64,
    #[arg(long, default_value_t = 100)]
    pub peak_epoch: usize,
    #[arg(long, default_value_t = 800)]
    pub end_epoch: usize,
    /// Rescale the schedule's epochs to fit `--epochs`.
    #[arg(long)]
    pub compress: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Little-endian f32 values, one latent vector per epoch.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// Latent file written by `encode`.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Little-endian f32 grid values, epoch-major then time-major.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// CSV with columns index, dataset, label, prob, pred.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Score file with `label` and `prob` columns (and optionally `dataset`).
    #[arg(long, conflicts_with_all = ["weights", "data"], required_unless_present = "weights")]
    pub scores: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub data: Vec<PathBuf>,
    /// Skip reconstruction error.
    #[arg(long)]
    pub no_mse: bool,
    /// Model name written in the table.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    /// Result table (CSV).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the full report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GridKind {
    /// Optimizer, learning rate and decay.
    Optimizer,
    /// The classification weight beta.
    Beta,
}

#[derive(Debug, Args)]
pub struct GridsearchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, value_enum, default_value_t = ModelKind::Erpenet)]
    pub model: ModelKind,
    #[arg(long, value_enum, default_value_t = GridKind::Optimizer)]
    pub grid: GridKind,
    /// Override the learning rates searched (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub lrs: Vec<f64>,
    /// Override the decays searched (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub decays: Vec<f64>,
    /// Override the betas searched (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub betas: Vec<f64>,
    /// One row per candidate (CSV).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Test dataset file; repeat for several datasets.
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    /// A trained model as NAME=WEIGHTS; repeat to compare models.
    #[arg(long = "run", required = true, value_parser = parse_pair)]
    pub runs: Vec<(String, PathBuf)>,
    /// A training log as NAME=LOG.
    #[arg(long = "log", value_parser = parse_pair)]
    pub logs: Vec<(String, PathBuf)>,
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also draw the curves as SVG.
    #[arg(long)]
    pub svg: bool,
}

fn parse_pair(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected NAME=PATH, got `{s}`")),
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 on failure, 2 on a usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("erpe: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => preprocess_cmd(a),
        Command::Pretrain(a) => pretrain_cmd(a),
        Command::Finetune(a) => finetune_cmd(a),
        Command::Encode(a) => encode_cmd(a),
        Command::Decode(a) => decode_cmd(a),
        Command::Classify(a) => classify_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Gridsearch(a) => gridsearch_cmd(a),
        Command::Report(a) => report_cmd(a),
    }
}

/// `ERPE_SEED` if set, otherwise `flag`.
pub fn seed(flag: u64) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got `{v}`"))),
        Err(_) => Ok(flag),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_f32s(path: &Path, rows: &[Vec<f32>]) -> Result<()> {
    let mut w = create(path)?;
    for row in rows {
        for v in row {
            w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
    }
    finish(w, path)
}

fn read_f32s(path: &Path, width: usize) -> Result<Vec<Vec<f32>>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % (4 * width) != 0 {
        return Err(Error::Format {
            field: "values",
            reason: format!("{} bytes is not a whole number of {width}-value rows", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4 * width)
        .map(|row| row.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("four bytes"))).collect())
        .collect())
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<GridEpoch>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(load_dataset(p)?);
    }
    Ok(out)
}

fn split_data(d: &DataArgs, seed: u64) -> Result<(Vec<GridEpoch>, Vec<GridEpoch>)> {
    let data = load_all(&d.data)?;
    if !d.val.is_empty() {
        return Ok((data, load_all(&d.val)?));
    }
    let mode = match d.split {
        SplitArg::Holdout => SplitMode::Holdout,
        SplitArg::Kfold => SplitMode::Kfold,
    };
    let plan = make_splits(&data, mode, seed)?;
    if d.fold >= plan.rounds() {
        return Err(Error::Config(format!("fold {} out of range: {} rounds", d.fold, plan.rounds())));
    }
    let (train, val) = plan.round(d.fold);
    Ok((select(&data, &train), select(&data, &val)))
}

fn progress(quiet: bool) -> impl FnMut(&EpochRecord) {
    move |r: &EpochRecord| {
        if !quiet {
            let train = r.train_loss.map_or("-".to_string(), |v| format!("{v:.5}"));
            eprintln!("epoch {:>4}  train {train}  val {:.5}  lr {:.3e}", r.epoch, r.val_loss, r.lr);
        }
    }
}

fn log_path(out: &Path, log: &Option<PathBuf>) -> PathBuf {
    log.clone().unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".log.jsonl");
        PathBuf::from(s)
    })
}

fn save_run(net: &Network<f32>, report: &TrainReport, out: &Path, log: &Path) -> Result<()> {
    save_weights(out, net)?;
    let mut w = create(log)?;
    write_log(&report.log, &mut w).map_err(|e| Error::io(log, e))?;
    finish(w, log)?;
    println!(
        "best epoch {} of {} (val loss {:.6}){}",
        report.best_epoch,
        report.epochs_run,
        report.best_val_loss,
        if report.stopped_early { ", stopped early" } else { "" }
    );
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_subjects: a.subjects,
        trials_per_subject: a.trials,
        attended_fraction: a.attended_fraction,
        p300_amplitude: a.amplitude,
        p300_latency_s: a.latency,
        p300_width_s: a.width,
        noise_std: a.noise,
        alpha_share: a.alpha_share,
        rate: a.rate,
        dataset_id: a.dataset_id,
        seed: seed(a.seed)?,
        ..SynthConfig::default()
    };
    let recordings = synth_generate(&cfg)?;
    let format = a.format.unwrap_or(if a.out.extension().is_some_and(|e| e == "erpe") {
        SynthFormat::Erpe
    } else {
        SynthFormat::Raw
    });
    match format {
        SynthFormat::Raw => {
            let mut w = create(&a.out)?;
            for r in &recordings {
                write_columnar(r, &mut w).map_err(|e| Error::io(&a.out, e))?;
            }
            finish(w, &a.out)
        }
        SynthFormat::Erpe => {
            let mut epochs = Vec::new();
            for r in &recordings {
                epochs.extend(preprocess(r, &PreprocessConfig::default())?.epochs);
            }
            save_dataset(&a.out, &epochs)
        }
    }
}

fn preprocess_cmd(a: PreprocessArgs) -> Result<()> {
    let cfg = PreprocessConfig {
        notch: a.notch,
        ..PreprocessConfig::default()
    };
    let mut epochs = Vec::new();
    let mut skipped = 0;
    for r in load_recordings(&a.input)? {
        let p = preprocess(&r, &cfg)?;
        epochs.extend(p.epochs);
        skipped += p.skipped;
    }
    save_dataset(&a.out, &epochs)?;
    println!("{} epochs written, {skipped} markers skipped", epochs.len());
    Ok(())
}

fn pretrain_cmd(a: PretrainArgs) -> Result<()> {
    let cfg = TrainConfig {
        objective: Objective::Joint { beta: a.beta },
        ..a.train.apply(TrainConfig::pretrain())?
    };
    let (train, val) = split_data(&a.data, cfg.seed)?;
    let mut net = a.model.network(cfg.seed)?;
    let report = pretrain(&mut net, &train, &val, &cfg, &mut progress(a.train.quiet))?;
    save_run(&net, &report, &a.out, &log_path(&a.out, &a.log))
}

fn finetune_cmd(a: FinetuneArgs) -> Result<()> {
    let mut cfg = a.train.apply(TrainConfig::fine_tune())?;
    cfg.schedule = match a.schedule {
        ScheduleArg::Constant => Schedule::ConstantDecayed,
        ScheduleArg::Triangular => {
            let s = TriangularSchedule {
                start: a.lr_start,
                peak: a.lr_peak,
                end: a.lr_end,
                peak_epoch: a.peak_epoch,
                end_epoch: a.end_epoch,
            };
            Schedule::Triangular(if a.compress { s.compressed(cfg.max_epochs) } else { s })
        }
    };
    let start = match (&a.weights, a.init) {
        (Some(w), _) => load_network(w)?,
        (None, Some(kind)) => kind.network(cfg.seed)?,
        (None, None) => return Err(Error::Config("either --weights or --init is required".into())),
    };
    let (train, val) = split_data(&a.data, cfg.seed)?;
    let arch = start.architecture().clone();
    let (net, report) = fine_tune(arch, start.into_weights(), &train, &val, &cfg, &mut progress(a.train.quiet))?;
    save_run(&net, &report, &a.out, &log_path(&a.out, &a.log))
}

fn encode_cmd(a: EncodeArgs) -> Result<()> {
    let net = load_network(&a.weights)?;
    let epochs = load_dataset(&a.input)?;
    let latents = net.encode(&epochs)?;
    write_f32s(&a.out, &latents)?;
    println!("{} epochs × {} values", latents.len(), net.latent_dim());
    Ok(())
}

fn decode_cmd(a: DecodeArgs) -> Result<()> {
    let net = load_network(&a.weights)?;
    let latents = read_f32s(&a.input, net.latent_dim())?;
    let grids = net.decode(&latents, &GridMask::standard())?;
    write_f32s(&a.out, &grids)?;
    println!("{} epochs × {EPOCH_VALUES} values", grids.len());
    Ok(())
}

#[derive(Serialize)]
struct ScoreLine<'a> {
    index: usize,
    dataset: &'a str,
    label: u8,
    prob: f32,
    pred: u8,
}

fn classify_cmd(a: ClassifyArgs) -> Result<()> {
    let net = load_network(&a.weights)?;
    let epochs = load_dataset(&a.input)?;
    let probs = net.classify(&epochs)?;
    let mut w = csv::Writer::from_writer(create(&a.out)?);
    for (i, (e, &p)) in epochs.iter().zip(&probs).enumerate() {
        w.serialize(ScoreLine {
            index: i,
            dataset: &e.dataset_id,
            label: e.label as u8,
            prob: p,
            pred: u8::from(p as f64 >= crate::model::DECISION_THRESHOLD),
        })
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&a.out, e))?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format {
        field: "csv",
        reason: e.to_string(),
    }
}

/// Reads a score file: `label` (0/1 or a label name) and `prob` columns,
/// with an optional `dataset` column.
fn read_scores(path: &Path) -> Result<(Vec<GridEpoch>, Vec<f64>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let headers = r.headers().map_err(csv_err)?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(li), Some(pi)) = (col("label"), col("prob")) else {
        return Err(Error::Format {
            field: "csv",
            reason: format!("{} needs `label` and `prob` columns", path.display()),
        });
    };
    let di = col("dataset");
    let mask = GridMask::standard();
    let (mut epochs, mut probs) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let label: Label = field(li).parse().map_err(|reason| Error::Format { field: "label", reason })?;
        let prob: f64 = field(pi).parse().map_err(|_| Error::Format {
            field: "prob",
            reason: format!("`{}` is not a number", field(pi)),
        })?;
        epochs.push(GridEpoch {
            grid: Vec::new(),
            mask,
            label,
            dataset_id: di.map_or("scores".to_string(), |i| field(i).to_string()),
        });
        probs.push(prob);
    }
    Ok((epochs, probs))
}

fn write_report(report: &MetricsReport, csv_path: &Path, json: Option<&Path>) -> Result<()> {
    let w = create(csv_path)?;
    report.write_csv(w)?;
    if let Some(j) = json {
        let w = create(j)?;
        report.write_json(w)?;
    }
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let rows = if let Some(scores) = &a.scores {
        let (epochs, probs) = read_scores(scores)?;
        rows_from_scores(a.name.as_deref().unwrap_or("scores"), &epochs, &probs, None, a.fold, None, 0)?
    } else {
        let weights = a.weights.as_ref().ok_or_else(|| Error::Config("--weights or --scores is required".into()))?;
        let net = load_network(weights)?;
        let epochs = load_all(&a.data)?;
        let (probs, errors) = score_model(&net, &epochs, !a.no_mse)?;
        let name = a.name.clone().unwrap_or_else(|| net.architecture().name().to_string());
        rows_from_scores(&name, &epochs, &probs, errors.as_deref(), a.fold, None, net.count_params())?
    };
    for r in &rows {
        println!(
            "{} on {}: acc {:.2}  auc {}  mse {}",
            r.model,
            r.dataset,
            r.acc,
            r.auc.map_or("-".to_string(), |v| format!("{v:.2}")),
            r.mse.map_or("-".to_string(), |m| m.to_string())
        );
    }
    let report = MetricsReport {
        rows,
        comparisons: Vec::new(),
        compression_ratio: None,
    };
    write_report(&report, &a.out, a.json.as_deref())
}

fn gridsearch_cmd(a: GridsearchArgs) -> Result<()> {
    let base = a.train.apply(TrainConfig::pretrain())?;
    let mut grid = match a.grid {
        GridKind::Optimizer => SearchGrid::optimizer_search(),
        GridKind::Beta => SearchGrid::beta_search(base.optimizer, base.learning_rate, base.decay),
    };
    if let Some(o) = a.train.optimizer {
        grid.optimizers = vec![o.into()];
    }
    if !a.lrs.is_empty() {
        grid.learning_rates = a.lrs.clone();
    }
    if !a.decays.is_empty() {
        grid.decays = a.decays.clone();
    }
    if !a.betas.is_empty() {
        grid.betas = a.betas.clone();
    }
    let (train, val) = split_data(&a.data, base.seed)?;
    let quiet = a.train.quiet;
    let outcome = grid_search(&grid, base.seed, |c: &Candidate, s| {
        let cfg = TrainConfig {
            optimizer: c.optimizer,
            learning_rate: c.learning_rate,
            decay: c.decay,
            objective: Objective::Joint { beta: c.beta },
            seed: s,
            ..base.clone()
        };
        let mut net = a.model.network(s)?;
        let report = pretrain(&mut net, &train, &val, &cfg, &mut |_| {})?;
        if !quiet {
            eprintln!(
                "{} lr {:.3e} decay {:.0e} beta {}: val {:.6}",
                c.optimizer, c.learning_rate, c.decay, c.beta, report.best_val_loss
            );
        }
        Ok(report.best_val_loss)
    })?;
    let mut w = csv::Writer::from_writer(create(&a.out)?);
    w.write_record(["optimizer", "lr", "decay", "beta", "val_loss"]).map_err(csv_err)?;
    for r in &outcome.rows {
        let c = r.candidate;
        w.write_record([
            c.optimizer.to_string(),
            c.learning_rate.to_string(),
            c.decay.to_string(),
            c.beta.to_string(),
            r.val_loss.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&a.out, e))?;
    let b = outcome.best;
    println!(
        "best: {} lr {} decay {} beta {} (val loss {:.6})",
        b.optimizer, b.learning_rate, b.decay, b.beta, outcome.best_val_loss
    );
    Ok(())
}

fn read_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn safe_name(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Paired tests between every two models on each metric, pairing rows by
/// dataset.
fn compare(rows: &[ResultRow], models: &[String]) -> Vec<Comparison> {
    type Metric = fn(&ResultRow) -> Option<f64>;
    let metrics: [(&str, Metric); 3] = [
        ("acc", |r| Some(r.acc)),
        ("auc", |r| r.auc),
        ("mse", |r| r.mse.map(|m| m.mean)),
    ];
    let mut out = Vec::new();
    for (i, a) in models.iter().enumerate() {
        for b in &models[i + 1..] {
            for (metric, get) in metrics {
                let by = |m: &String| -> BTreeMap<&str, f64> {
                    rows.iter()
                        .filter(|r| &r.model == m)
                        .filter_map(|r| get(r).map(|v| (r.dataset.as_str(), v)))
                        .collect()
                };
                let (va, vb) = (by(a), by(b));
                let (xa, xb): (Vec<f64>, Vec<f64>) =
                    va.iter().filter_map(|(d, &x)| vb.get(d).map(|&y| (x, y))).unzip();
                if xa.len() < WILCOXON_MIN_PAIRS {
                    continue;
                }
                if let Ok(test) = wilcoxon_signed_rank(&xa, &xb) {
                    out.push(Comparison {
                        metric: metric.to_string(),
                        model_a: a.clone(),
                        model_b: b.clone(),
                        test,
                    });
                }
            }
        }
    }
    out
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let epochs = load_all(&a.data)?;
    let logs: BTreeMap<String, Vec<EpochRecord>> = a
        .logs
        .iter()
        .map(|(name, path)| Ok((name.clone(), read_log(path)?)))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut names = Vec::new();
    for (name, path) in &a.runs {
        let net = load_network(path)?;
        let (probs, errors) = score_model(&net, &epochs, true)?;
        let trained = logs.get(name).map(|l| l.iter().filter(|r| r.train_loss.is_some()).count());
        rows.extend(rows_from_scores(
            name,
            &epochs,
            &probs,
            errors.as_deref(),
            a.fold,
            trained,
            net.count_params(),
        )?);
        let mut by_ds: BTreeMap<&str, (Vec<Label>, Vec<f64>)> = BTreeMap::new();
        for (e, &p) in epochs.iter().zip(&probs) {
            let entry = by_ds.entry(&e.dataset_id).or_default();
            entry.0.push(e.label);
            entry.1.push(p);
        }
        for (ds, (labels, scores)) in by_ds {
            let Ok(curve) = roc_curve(&labels, &scores) else { continue };
            let stem = format!("roc_{}_{}", safe_name(name), safe_name(ds));
            write_xy(&a.out_dir.join(format!("{stem}.csv")), ("fpr", "tpr"), &curve)?;
            if a.svg {
                write_svg(&a.out_dir.join(format!("{stem}.svg")), &format!("ROC {name} / {ds}"), &[("roc", &curve)], true)?;
            }
        }
        names.push(name.clone());
    }
    for (name, log) in &logs {
        let stem = format!("loss_{}", safe_name(name));
        let path = a.out_dir.join(format!("{stem}.csv"));
        let mut w = csv::Writer::from_writer(create(&path)?);
        w.write_record(["epoch", "train_loss", "val_loss", "val_mse", "val_bce", "lr"]).map_err(csv_err)?;
        for r in log {
            let o = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([
                r.epoch.to_string(),
                o(r.train_loss),
                r.val_loss.to_string(),
                o(r.val_mse),
                r.val_bce.to_string(),
                r.lr.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        if a.svg {
            let val: Vec<(f64, f64)> = log.iter().map(|r| (r.epoch as f64, r.val_loss)).collect();
            let train: Vec<(f64, f64)> =
                log.iter().filter_map(|r| r.train_loss.map(|t| (r.epoch as f64, t))).collect();
            write_svg(
                &a.out_dir.join(format!("{stem}.svg")),
                &format!("loss {name}"),
                &[("val", &val), ("train", &train)],
                false,
            )?;
        }
    }
    let report = MetricsReport {
        comparisons: compare(&rows, &names),
        rows,
        compression_ratio: Some(default_compression_ratio()),
    };
    write_report(&report, &a.out_dir.join("results.csv"), Some(&a.out_dir.join("results.json")))?;
    println!("report written to {}", a.out_dir.display());
    Ok(())
}

fn write_xy(path: &Path, header: (&str, &str), points: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record([header.0, header.1]).map_err(csv_err)?;
    for (x, y) in points {
        w.write_record([x.to_string(), y.to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const SVG_W: f64 = 480.0;
const SVG_H: f64 = 360.0;
const SVG_PAD: f64 = 40.0;
const SVG_COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

/// A bare line plot. `unit` fixes both axes to [0, 1] and adds the chance
/// diagonal.
fn write_svg(path: &Path, title: &str, series: &[(&str, &[(f64, f64)])], unit: bool) -> Result<()> {
    let finite = series.iter().flat_map(|(_, s)| s.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in finite {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if unit || !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| SVG_PAD + (x - x0) / (x1 - x0) * (SVG_W - 2.0 * SVG_PAD);
    let py = |y: f64| SVG_H - SVG_PAD - (y - y0) / (y1 - y0) * (SVG_H - 2.0 * SVG_PAD);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{SVG_PAD}" y="20">{}</text>"#, xml_escape(title));
    let _ = writeln!(
        s,
        r##"<rect x="{SVG_PAD}" y="{SVG_PAD}" width="{}" height="{}" fill="none" stroke="#888"/>"##,
        SVG_W - 2.0 * SVG_PAD,
        SVG_H - 2.0 * SVG_PAD
    );
    let _ = writeln!(s, r#"<text x="{SVG_PAD}" y="{}">{x0:.3}</text>"#, SVG_H - SVG_PAD + 15.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{x1:.3}</text>"#, SVG_W - SVG_PAD, SVG_H - SVG_PAD + 15.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y0:.3}</text>"#, SVG_PAD - 4.0, SVG_H - SVG_PAD);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y1:.3}</text>"#, SVG_PAD - 4.0, SVG_PAD + 10.0);
    if unit {
        let _ = writeln!(
            s,
            r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#bbb" stroke-dasharray="4"/>"##,
            px(0.0),
            py(0.0),
            px(1.0),
            py(1.0)
        );
    }
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = SVG_COLORS[k % SVG_COLORS.len()];
        let coords: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}" text-anchor="end">{}</text>"#,
            SVG_W - SVG_PAD - 4.0,
            SVG_PAD + 16.0 * (k as f64 + 1.0),
            xml_escape(name)
        );
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
