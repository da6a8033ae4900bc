use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde_json::json;

use arfdcn::checkpoint::load_model;
use arfdcn::data::{read_wav, write_synthetic_dataset, write_wav, Manifest, Utterance};
use arfdcn::optim::AdamWConfig;
use arfdcn::train::{bench, evaluate, train, TrainConfig};
use arfdcn::{count_params, Model, ModelConfig};

/// Time-domain two-speaker separation: training, inference and evaluation.
#[derive(Parser, Debug)]
#[command(name = "arfdcn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on a manifest, writing the best checkpoint and one JSON metrics line per epoch.
    Train(TrainArgs),
    /// Split a mixture WAV into one WAV per source.
    Separate(SeparateArgs),
    /// Print mean SI-SDRi and SDRi over a manifest as JSON.
    Evaluate(EvaluateArgs),
    /// Time inference on seeded noise and print mean/stddev as JSON.
    Bench(BenchArgs),
    /// Print the trainable parameter count of a configuration.
    CountParams(ConfigArg),
    /// Write seeded synthetic mixtures and their manifest.
    SynthData(SynthArgs),
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// Model configuration file (`key = value` lines); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Training manifest (JSON lines).
    #[arg(long)]
    manifest: PathBuf,
    /// Validation manifest; the training manifest is used when omitted.
    #[arg(long)]
    val_manifest: Option<PathBuf>,
    /// Checkpoint path for the best model.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Crop length in seconds; 0 trains on whole utterances.
    #[arg(long, default_value_t = 4.0)]
    segment_seconds: f64,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1e-2)]
    weight_decay: f64,
    /// Global gradient-norm limit; 0 disables clipping.
    #[arg(long, default_value_t = 5.0)]
    clip_norm: f64,
}

#[derive(Args, Debug)]
struct SeparateArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    model: PathBuf,
    /// Mixture WAV (16-bit PCM mono).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Checkpoint to time; a seeded initialization is used when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 4.0)]
    seconds: f64,
    #[arg(long, default_value_t = 100)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Duration of each mixture in seconds.
    #[arg(long, default_value_t = 1.0)]
    seconds: f64,
    #[arg(long, default_value_t = 8000)]
    sample_rate: u32,
    /// Level of additive white noise in dB relative to a source; clean when omitted.
    #[arg(long, allow_hyphen_values = true)]
    noise_db: Option<f64>,
}

impl ConfigArg {
    fn load(&self) -> Result<ModelConfig> {
        let Some(path) = &self.config else {
            return Ok(ModelConfig::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        ModelConfig::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

fn load_checkpoint(path: &Path, cfg: &ModelConfig) -> Result<Model> {
    let (model, _) = load_model(path, cfg).with_context(|| {
        format!(
            "loading checkpoint {} (pass the --config it was trained with)",
            path.display()
        )
    })?;
    Ok(model)
}

fn load_utterances(path: &Path, cfg: &ModelConfig) -> Result<Vec<Utterance>> {
    let manifest = Manifest::load(path).with_context(|| format!("loading manifest {}", path.display()))?;
    let utts = manifest
        .load_utterances()
        .with_context(|| format!("reading audio listed in {}", path.display()))?;
    if let Some(u) = utts.iter().find(|u| u.sample_rate != cfg.sample_rate) {
        warn!(
            "{} is {} Hz but the model expects {} Hz",
            u.id, u.sample_rate, cfg.sample_rate
        );
    }
    if let Some(u) = utts.iter().find(|u| u.sources.len() != cfg.num_sources) {
        bail!(
            "{} has {} sources but the model separates {}",
            u.id,
            u.sources.len(),
            cfg.num_sources
        );
    }
    Ok(utts)
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let train_set = load_utterances(&args.manifest, &cfg)?;
    let val = match &args.val_manifest {
        Some(path) => load_utterances(path, &cfg)?,
        None => train_set.clone(),
    };
    if !(args.segment_seconds >= 0.0 && args.segment_seconds.is_finite()) {
        bail!("--segment-seconds must be non-negative, got {}", args.segment_seconds);
    }
    if !(args.clip_norm.is_finite() && args.clip_norm >= 0.0) {
        bail!("--clip-norm must be non-negative, got {}", args.clip_norm);
    }
    let segment_len =
        (args.segment_seconds > 0.0).then(|| (args.segment_seconds * cfg.sample_rate as f64).round() as usize);
    let tc = TrainConfig {
        epochs: args.epochs,
        seed: args.seed,
        segment_len,
        batch_size: args.batch_size,
        max_steps: args.max_steps,
        adam: AdamWConfig {
            lr: args.lr,
            weight_decay: args.weight_decay,
            ..AdamWConfig::default()
        },
        clip_norm: (args.clip_norm > 0.0).then_some(args.clip_norm),
        checkpoint: Some(args.out.clone()),
    };
    let mut model = Model::new(cfg, args.seed)?;
    info!(
        "training {} parameters on {} utterances",
        model.num_params(),
        train_set.len()
    );
    let mut write_err = None;
    let report = train(&mut model, &train_set, &val, &tc, |m| {
        if let Err(e) = print_json(m) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    info!(
        "{} steps, best validation SI-SDRi {:.3} dB",
        report.steps, report.best_val
    );
    Ok(())
}

fn run_separate(args: &SeparateArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let model = load_checkpoint(&args.model, &cfg)?;
    let wav = read_wav(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    if wav.sample_rate != cfg.sample_rate {
        warn!(
            "input is {} Hz but the model expects {} Hz",
            wav.sample_rate, cfg.sample_rate
        );
    }
    let ests = model.separate_waveform(&wav.samples)?;
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let stem = args.input.file_stem().and_then(|s| s.to_str()).unwrap_or("mixture");
    let len = wav.samples.len();
    let mut outputs = Vec::new();
    for (j, est) in ests.data().chunks(len).enumerate() {
        let path = args.out_dir.join(format!("{stem}_s{}.wav", j + 1));
        write_wav(&path, est, wav.sample_rate).with_context(|| format!("writing {}", path.display()))?;
        outputs.push(path.display().to_string());
    }
    print_json(&json!({ "outputs": outputs }))
}

fn run_evaluate(args: &EvaluateArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let model = load_checkpoint(&args.model, &cfg)?;
    let utts = load_utterances(&args.manifest, &cfg)?;
    print_json(&evaluate(&model, &utts)?)
}

fn run_bench(args: &BenchArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let model = match &args.model {
        Some(path) => load_checkpoint(path, &cfg)?,
        None => Model::new(cfg, args.seed)?,
    };
    print_json(&bench(&model, args.seconds, args.repeats, args.seed)?)
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    let manifest = write_synthetic_dataset(
        &args.out_dir,
        args.count,
        args.seed,
        args.seconds,
        args.sample_rate,
        args.noise_db,
    )?;
    print_json(&json!({
        "manifest": args.out_dir.join("manifest.jsonl").display().to_string(),
        "utterances": manifest.records.len(),
    }))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => run_train(a),
        Command::Separate(a) => run_separate(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Bench(a) => run_bench(a),
        Command::CountParams(a) => {
            println!("{}", count_params(&a.load()?));
            Ok(())
        }
        Command::SynthData(a) => run_synth(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
