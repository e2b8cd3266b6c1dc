//! `ternlstm` subcommands.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or configuration error.
//! Every command writes its outputs and a `run.txt` manifest to `--out`,
//! defaulting to `$TERNLSTM_OUT/<command>` or `runs/<command>`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};

use ternlstm_core::analysis::{embed_2d, embedding_correlation};
use ternlstm_core::datagen::{generate, SyntheticSpec, SyntheticSystem, WindowedSequence};
use ternlstm_core::estimate::{
    mac_count, megabits, memory_bits, response_time, CostModelInput, MacVariant, Per, WeightWidth, ACCELERATOR_GOPS,
};
use ternlstm_core::fsm::{estimate_cycles, latency_report, run_inference, MemoryBanks};
use ternlstm_core::fxp::QFormat;
use ternlstm_core::model::fixed::{forward_fixed, quantize_sequence, HardwareModel, Luts};
use ternlstm_core::model::NetworkConfig;
use ternlstm_core::quant::Precision;
use ternlstm_core::train::{evaluate, evaluation_from_scores, train_with, Evaluation};

use crate::config::{
    embedding_metric, machine_config, network_config, parse_precision, train_config, KeyValues, ESTIMATE_KEYS,
    MACHINE_KEYS, NETWORK_KEYS, TRAIN_KEYS,
};
use crate::error::{data, io_err, Error, Result};
use crate::formats::{load_model, lut_to_csv, save_model, write_csv, Encoding, SavedModel};
use crate::ingest::{self, load_data, DataSource, RawDataset, Record};
use crate::spectral::fourier_distance;

pub const OUT_ENV: &str = "TERNLSTM_OUT";
pub const RUN_MANIFEST: &str = "run.txt";

#[derive(Debug, Parser)]
#[command(name = "ternlstm", version, about = "Ternary CNN-LSTM classifier toolkit", arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic classification set.
    Gen(GenArgs),
    /// Fourier distance matrix and its 2-D embedding.
    Embed(EmbedArgs),
    /// Train a network.
    Train(TrainArgs),
    /// Pack a trained model's weights into 2-bit codes.
    Quantize(QuantizeArgs),
    /// Score a model on the held-out split.
    Eval(EvalArgs),
    /// Run the accelerator simulator.
    Simulate(SimulateArgs),
    /// Memory and MAC estimates for a configuration.
    Estimate(EstimateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SystemArg {
    Logistic,
    Lorenz,
    Sine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    Full,
    Ternary,
    Binary,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::Full => Precision::Full,
            PrecisionArg::Ternary => Precision::Ternary,
            PrecisionArg::Binary => Precision::Binary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportArg {
    Accuracy,
    Auc,
    Confusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    /// f64 forward pass with quantized weights.
    Float,
    /// Bit-exact Q4.8 datapath.
    Fixed,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub system: SystemArg,
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    /// Sine base frequency.
    #[arg(long, default_value_t = SyntheticSpec::SINE_ALPHA)]
    pub alpha: f64,
    /// Sine frequency step between classes.
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    #[arg(long, default_value_t = 10)]
    pub window: usize,
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub eta: f64,
    /// `euclidean` or `as_printed`.
    #[arg(long, default_value = "euclidean")]
    pub metric: String,
    #[arg(long, default_value_t = 0)]
    pub channel: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Target precision of a full-precision model.
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "accuracy")]
    pub report: ReportArg,
    #[arg(long, value_enum, default_value = "float")]
    pub engine: EngineArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub machine: Option<PathBuf>,
    /// Write a state-level trace of the first record.
    #[arg(long)]
    pub trace: bool,
    /// Simulate at most this many test records.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = if code == 0 {
                write!(stdout, "{}", e.render())
            } else {
                write!(std::io::stderr(), "{}", e.render())
            };
            return code;
        }
    };
    match dispatch(&cli.command, &argv, stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(cmd: &Command, argv: &[OsString], out: &mut dyn Write) -> Result<()> {
    let (name, dir, seed, config) = match cmd {
        Command::Gen(a) => ("gen", &a.out, Some(a.seed), None),
        Command::Embed(a) => ("embed", &a.out, Some(a.seed), None),
        Command::Train(a) => ("train", &a.out, None, Some(a.config.as_path())),
        Command::Quantize(a) => ("quantize", &a.out, None, None),
        Command::Eval(a) => ("eval", &a.out, None, None),
        Command::Simulate(a) => ("simulate", &a.out, None, a.machine.as_deref()),
        Command::Estimate(a) => ("estimate", &a.out, None, Some(a.config.as_path())),
    };
    let dir = output_dir(dir.as_deref(), name);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let seed = match cmd {
        Command::Train(a) => Some(KeyValues::load(&a.config)?.parse_or("seed", 0u64)?),
        _ => seed,
    };
    match cmd {
        Command::Gen(a) => cmd_gen(a, &dir, out)?,
        Command::Embed(a) => cmd_embed(a, &dir, out)?,
        Command::Train(a) => cmd_train(a, &dir, out)?,
        Command::Quantize(a) => cmd_quantize(a, &dir, out)?,
        Command::Eval(a) => cmd_eval(a, &dir, out)?,
        Command::Simulate(a) => cmd_simulate(a, &dir, out)?,
        Command::Estimate(a) => cmd_estimate(a, &dir, out)?,
    }
    write_run_manifest(&dir, name, argv, config, seed)
}

pub fn output_dir(explicit: Option<&Path>, command: &str) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(command),
    }
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

fn write_run_manifest(dir: &Path, command: &str, argv: &[OsString], config: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut kv = KeyValues::default();
    kv.insert("command", command);
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    kv.insert("argv", args.join(" "));
    kv.insert("config", config.map_or_else(|| "none".into(), |p| p.display().to_string()));
    kv.insert("seed", seed.map_or_else(|| "none".into(), |s| s.to_string()));
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    kv.insert("timestamp", secs);
    kv.insert("git_describe", git_describe());
    kv.insert("output_dir", dir.display());
    let p = dir.join(RUN_MANIFEST);
    std::fs::write(&p, kv.to_text()).map_err(io_err(&p))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(io_err("stdout"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn cmd_gen(a: &GenArgs, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let pick = |preset: &[f64]| -> Result<Vec<f64>> {
        if a.classes == 0 || a.classes > preset.len() {
            return Err(Error::Config(format!("this system offers 1 to {} classes", preset.len())));
        }
        Ok(preset[..a.classes].to_vec())
    };
    let mut spec = match a.system {
        SystemArg::Sine => SyntheticSpec::sine(a.classes, a.alpha, a.beta),
        SystemArg::Logistic => {
            let mut s = SyntheticSpec::logistic();
            s.class_params = pick(&SyntheticSpec::LOGISTIC_R)?;
            s
        }
        SystemArg::Lorenz => {
            let mut s = SyntheticSpec::lorenz();
            s.class_params = pick(&SyntheticSpec::LORENZ_SIGMA)?;
            s
        }
    };
    spec.per_class = a.per_class;
    spec.window = a.window;
    spec.steps = a.steps;
    spec.noise_amplitude = a.noise;
    spec.seed = a.seed;
    let ds = generate(&spec)?;
    let records = ds
        .sequences
        .iter()
        .map(|s| Record {
            label: s.label,
            signal: vec![s.windows.concat()],
        })
        .collect();
    let raw = RawDataset {
        name: spec.system.name().into(),
        sample_rate_hz: 1.0,
        records,
        label_names: (0..ds.classes()).map(|c| c.to_string()).collect(),
    };
    let mut extra = KeyValues::default();
    extra.insert("system", spec.system.name());
    extra.insert(
        "class_params",
        spec.class_params.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(","),
    );
    extra.insert("noise", a.noise);
    extra.insert("window", a.window);
    extra.insert("steps", a.steps);
    extra.insert("seed", a.seed);
    ingest::write_multichannel(&raw, dir, &extra)?;
    emit(
        out,
        &format!(
            "{} records of {} classes ({}) written to {}\n",
            raw.records.len(),
            raw.classes(),
            SyntheticSystem::name(spec.system),
            dir.display()
        ),
    )
}

fn all_records(source: &DataSource) -> RawDataset {
    match source {
        DataSource::Single(ds) => ds.clone(),
        DataSource::Split { train, test } => {
            let mut ds = train.clone();
            ds.records.extend(test.records.iter().cloned());
            ds
        }
    }
}

fn cmd_embed(a: &EmbedArgs, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let metric = embedding_metric(&a.metric)?;
    let ds = all_records(&load_data(&a.data)?);
    if a.channel >= ds.channels() {
        return Err(data(format!("channel {} out of {}", a.channel, ds.channels())));
    }
    let signals: Vec<Vec<f64>> = ds.records.iter().map(|r| r.signal[a.channel].clone()).collect();
    let d = fourier_distance(&signals, ds.labels())?.normalized();
    let emb = embed_2d(&d, metric, a.eta, a.iters, a.seed)?;
    let corr = embedding_correlation(&d, &emb)?;
    let n = d.len();
    write_csv(
        &dir.join("distance.csv"),
        &(0..n).map(|j| format!("d{j}")).collect::<Vec<_>>().join(","),
        (0..n).map(|i| (0..n).map(|j| format!("{:?}", d.get(i, j))).collect::<Vec<_>>().join(",")),
    )?;
    write_csv(
        &dir.join("embedding.csv"),
        "index,class,x,y",
        emb.points.iter().enumerate().map(|(i, p)| format!("{i},{},{:?},{:?}", d.classes()[i], p.0, p.1)),
    )?;
    write_csv(
        &dir.join("energy.csv"),
        "iteration,energy",
        emb.history.iter().enumerate().map(|(i, e)| format!("{i},{e:?}")),
    )?;
    let summary = format!(
        "realizations: {n}\nmetric: {}\niterations: {}\nenergy: {:.6} -> {:.6}\ncorrelation: {corr:.4}\n",
        metric.name(),
        a.iters,
        emb.history[0],
        emb.energy
    );
    write_text(&dir.join("summary.txt"), &summary)?;
    emit(out, &summary)
}

/// Raw split of `source` as recorded in a model's metadata.
fn split_for(source: &DataSource, meta: &KeyValues) -> Result<(RawDataset, RawDataset)> {
    let fraction = meta.parse_or("train_fraction", 0.7)?;
    let seed = meta.parse_or("split_seed", 0u64)?;
    let envelope = meta.parse_or("envelope", false)?;
    let p = ingest::prepare(source, fraction, seed, false, envelope)?;
    Ok((p.train, p.test))
}

fn sequences(ds: &RawDataset, net: &NetworkConfig) -> Result<Vec<WindowedSequence>> {
    if ds.channels() != net.channels {
        return Err(data(format!("data has {} channels, network expects {}", ds.channels(), net.channels)));
    }
    if let Some(l) = ds.records.iter().map(|r| r.label).find(|&l| l >= net.classes) {
        return Err(data(format!("label {l} outside the network's {} classes", net.classes)));
    }
    ds.to_sequences(net.window, net.steps)
}

fn cmd_train(a: &TrainArgs, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let kv = KeyValues::load(&a.config)?;
    let known: Vec<&str> = [NETWORK_KEYS, TRAIN_KEYS, MACHINE_KEYS, ESTIMATE_KEYS].concat();
    kv.check_known(&known)?;
    let tcfg = train_config(&kv, a.precision.map(Into::into))?;
    let fraction: f64 = kv.parse_or("train_fraction", 0.7)?;
    let normalize: bool = kv.parse_or("normalize", true)?;
    let envelope: bool = kv.parse_or("envelope", false)?;
    let source = load_data(&a.data)?;
    let prepared = ingest::prepare(&source, fraction, tcfg.seed, normalize, envelope)?;
    let net = network_config(&kv, prepared.train.channels(), prepared.train.classes())?;
    let train_set = sequences(&prepared.train, &net)?;
    let test_set = sequences(&prepared.test, &net)?;
    let mut progress = Vec::new();
    let result = train_with(&train_set, &test_set, &tcfg, &net, |e| {
        eprintln!("epoch {:>3}  loss {:.5}  test accuracy {:.4}", e.epoch, e.loss, e.test_accuracy);
        progress.push(format!("{},{:?},{:?}", e.epoch, e.loss, e.test_accuracy));
    })?;
    write_csv(&dir.join("history.csv"), "epoch,loss,test_accuracy", progress)?;
    let mut meta = KeyValues::default();
    meta.insert("data", a.data.display());
    meta.insert("train_fraction", fraction);
    meta.insert("split_seed", tcfg.seed);
    meta.insert("normalize", normalize);
    meta.insert("envelope", envelope);
    meta.insert("learning_rate", tcfg.learning_rate);
    meta.insert("epochs", tcfg.epochs);
    meta.insert("batch_size", tcfg.batch_size);
    let model = SavedModel {
        config: net.clone(),
        params: result.params,
        precision: tcfg.precision,
        zero_bias: tcfg.zero_bias,
        encoding: Encoding::Shadow,
        normalization: prepared.normalization,
        meta,
    };
    save_model(&dir.join("model"), &model)?;
    let acc = result.history.last().map_or(0.0, |e| e.test_accuracy);
    emit(
        out,
        &format!(
            "trained {} network ({} train / {} test records), test accuracy {acc:.4}\nmodel: {}\n",
            tcfg.precision.name(),
            train_set.len(),
            test_set.len(),
            dir.join("model").display()
        ),
    )
}

fn cmd_quantize(a: &QuantizeArgs, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let mut m = load_model(&a.model)?;
    if let Some(p) = a.precision {
        m.precision = p.into();
    }
    if !m.precision.is_quantized() {
        return Err(data("model is full precision; pass --precision ternary or binary"));
    }
    m.encoding = Encoding::Packed;
    save_model(dir, &m)?;
    let bits: usize = m.params.tensors().iter().filter(|t| t.role.quantizable()).map(|t| 2 * t.data.len()).sum();
    emit(out, &format!("packed {} model, {bits} bits of codes, into {}\n", m.precision.name(), dir.display()))
}

fn test_sequences(model: &SavedModel, data_path: &Path) -> Result<Vec<WindowedSequence>> {
    let (_, mut test) = split_for(&load_data(data_path)?, &model.meta)?;
    model.normalization.apply(&mut test);
    sequences(&test, &model.config)
}

fn hardware(model: &SavedModel) -> Result<HardwareModel> {
    let params = if model.zero_bias {
        model.params.effective(Precision::Full, true)
    } else {
        model.params.clone()
    };
    Ok(HardwareModel::from_params(&params, &model.config, model.precision, QFormat::Q4_8)?)
}

fn fixed_evaluation(model: &SavedModel, seqs: &[WindowedSequence]) -> Result<Evaluation> {
    let hw = hardware(model)?;
    let luts = Luts::default();
    let mut scores = Vec::with_capacity(seqs.len());
    for s in seqs {
        let o = forward_fixed(&hw, &luts, s)?;
        scores.push(o.logits.iter().map(|&v| v as f64).collect());
    }
    let labels: Vec<usize> = seqs.iter().map(|s| s.label).collect();
    Ok(evaluation_from_scores(&scores, &labels, model.config.classes))
}

fn cmd_eval(a: &EvalArgs, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.model)?;
    let seqs = test_sequences(&model, &a.data)?;
    let ev = match a.engine {
        EngineArg::Float => evaluate(&seqs, &model.params, &model.config, model.precision, model.zero_bias)?,
        EngineArg::Fixed => fixed_evaluation(&model, &seqs)?,
    };
    let text = match a.report {
        ReportArg::Accuracy => format!("accuracy: {:.4} ({} records)\n", ev.accuracy, seqs.len()),
        ReportArg::Auc => match ev.auc {
            Some(auc) => format!("auc: {auc:.4}\n"),
            None => "auc: undefined (a class lacks positive or negative examples)\n".into(),
        },
        ReportArg::Confusion => {
            let mut s = String::from("true\\pred");
            for c in 0..model.config.classes {
                s += &format!(",{c}");
            }
            s.push('\n');
            for (t, row) in ev.confusion.iter().enumerate() {
                s += &format!("{t},{}\n", row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
            }
            s
        }
    };
    write_csv(
        &dir.join("predictions.csv"),
        "index,label,predicted",
        seqs.iter().zip(&ev.predictions).enumerate().map(|(i, (s, p))| format!("{i},{},{p}", s.label)),
    )?;
    write_text(&dir.join("report.txt"), &text)?;
    emit(out, &text)
}

fn cmd_simulate(a: &SimulateArgs, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let kv = match &a.machine {
        Some(p) => KeyValues::load(p)?,
        None => KeyValues::default(),
    };
    let mc = machine_config(&kv)?;
    let budget_ms: f64 = kv.parse_or("budget_ms", 10.0)?;
    let model = load_model(&a.model)?;
    let mut seqs = test_sequences(&model, &a.data)?;
    if let Some(n) = a.limit {
        seqs.truncate(n);
    }
    if seqs.is_empty() {
        return Err(data("no test records to simulate"));
    }
    let banks = MemoryBanks::load(hardware(&model)?, &mc)?;
    let mut trace = Vec::new();
    let mut report = None;
    let mut rows = Vec::with_capacity(seqs.len());
    let mut correct = 0;
    for (i, s) in seqs.iter().enumerate() {
        let windows = quantize_sequence(s, mc.activation_format);
        let r = run_inference(&windows, &banks, &mc, if i == 0 && a.trace { Some(&mut trace) } else { None })?;
        correct += usize::from(r.class == s.label);
        rows.push(format!("{i},{},{}", s.label, r.class));
        report.get_or_insert(r.report);
    }
    let report = report.expect("at least one record");
    let check = latency_report(&report, budget_ms * 1e-3);
    let text = format!(
        "{}records: {}\naccuracy: {:.4}\nbudget: {budget_ms} ms per window, {} (margin {:.1}x)\n",
        report.to_text(),
        seqs.len(),
        correct as f64 / seqs.len() as f64,
        if check.pass { "met" } else { "missed" },
        check.margin
    );
    write_text(&dir.join("report.txt"), &text)?;
    write_text(&dir.join("cycles.csv"), &report.to_csv())?;
    write_csv(&dir.join("predictions.csv"), "index,label,predicted", rows)?;
    write_text(&dir.join("sigmoid_lut.csv"), &lut_to_csv(&banks.luts().sigmoid))?;
    write_text(&dir.join("tanh_lut.csv"), &lut_to_csv(&banks.luts().tanh))?;
    if a.trace {
        write_csv(
            &dir.join("trace.csv"),
            "cycle,state,unit,op",
            trace.iter().map(|e| format!("{},{},{},{}", e.cycle, e.state, e.unit, e.op)),
        )?;
    }
    emit(out, &text)
}

/// Memory in Mb and MACs in millions for one estimate column.
fn estimate_row(net: &NetworkConfig, width: WeightWidth) -> (f64, f64) {
    let mem = memory_bits(&CostModelInput {
        net: net.clone(),
        width,
        include_intermediates: true,
    });
    let macs = mac_count(net, Per::Window, MacVariant::True);
    (megabits(mem), macs as f64 / 1e6)
}

fn cmd_estimate(a: &EstimateArgs, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let kv = KeyValues::load(&a.config)?;
    let known: Vec<&str> = [NETWORK_KEYS, TRAIN_KEYS, MACHINE_KEYS, ESTIMATE_KEYS].concat();
    kv.check_known(&known)?;
    let net = network_config(&kv, 1, 2)?;
    let gops: f64 = kv.parse_or("gops", ACCELERATOR_GOPS)?;
    let ternary_hidden: usize = kv.parse_or("ternary_hidden", net.hidden)?;
    let mc = machine_config(&kv)?;
    let sample_rate: f64 = kv.parse_or("sample_rate_hz", 1000.0)?;
    let budget_ms: f64 = kv.parse_or("budget_ms", 1e3 * net.window as f64 / sample_rate)?;

    let variant = |cnn: bool, hidden: usize| {
        let mut n = net.clone();
        n.use_cnn = cnn;
        if cnn && n.conv.is_empty() {
            n.conv = NetworkConfig::new(1, 1, 1, 1, 1).conv;
        }
        n.hidden = hidden;
        n
    };
    let columns = [
        ("FP-LSTM", variant(false, net.hidden), WeightWidth::Full32),
        ("T-LSTM", variant(false, ternary_hidden), WeightWidth::Ternary2),
        ("FP-CNN-LSTM", variant(true, net.hidden), WeightWidth::Full32),
        ("T-CNN-LSTM", variant(true, ternary_hidden), WeightWidth::Ternary2),
    ];
    let name = kv.get("name").unwrap_or("config");
    let mut s = format!("{name}: window {} steps {} channels {} hidden {} classes {}\n", net.window, net.steps, net.channels, net.hidden, net.classes);
    s += &format!("{:<14}{:>12}{:>18}\n", "network", "Memory(Mb)", "MAC Operations(M)");
    for (label, n, w) in &columns {
        let (mem, macs) = estimate_row(n, *w);
        s += &format!("{label:<14}{mem:>12.2}{macs:>18.2}\n");
    }
    let nominal = mac_count(&net, Per::Window, MacVariant::Nominal);
    let true_window = mac_count(&net, Per::Window, MacVariant::True);
    s += &format!("nominal MACs per window: {nominal}\n");
    s += &format!("executed MACs per window: {true_window}\n");
    s += &format!("response time at {gops} GOPs: {:.1} us\n", response_time(nominal, gops) * 1e6);
    // the accelerator runs quantized gates unless the config says otherwise
    let gate_bits = match parse_precision(kv.get("precision").unwrap_or("ternary"))? {
        Precision::Full => 12,
        _ => 2,
    };
    let cycles = estimate_cycles(&net, &mc, gate_bits);
    let check = latency_report(&cycles, budget_ms * 1e-3);
    s += &format!(
        "simulated window latency at {} MHz: {:.2} us ({} cycles), budget {budget_ms} ms, margin {:.1}x\n",
        mc.clock_hz / 1e6,
        check.latency_seconds * 1e6,
        cycles.worst_window_cycles(),
        check.margin
    );
    write_text(&dir.join("estimate.txt"), &s)?;
    emit(out, &s)
}
