//! `sscl` subcommands. Exit codes: 0 success, 1 usage or configuration error,
//! 2 data error, 3 numeric failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use speech_simclr::augment::{add_noise, pitch_shift, reverberate, speed_perturb};
use speech_simclr::dsp::{read_wav, write_wav};
use speech_simclr::nn::gradcheck::{check_model, ModelCheck};
use speech_simclr::rng::rng_from;
use speech_simclr::trainer::{
    extract_features, steps_per_epoch, train, Checkpoint, NamedTensors, StepMetrics, TrainState,
};
use speech_simclr::{par, Error, Result};

use crate::config::RunConfig;
use crate::data::{load_noise, load_utterances, write_dataset, Labels, LABELS_FILE, NOISE_SUBDIR};
use crate::experiment::{ablate, ablation_csv, view_pipeline};
use crate::probe::{pooled_rows, probe};
use crate::synth::generate_checked;

#[derive(Debug, Parser)]
#[command(name = "sscl", version, about = "Contrastive speech representation toolkit")]
pub struct Cli {
    /// Seed overriding every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker-thread cap (default: SSCL_THREADS, else all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Apply one waveform augmentation with explicit parameters.
    Augment(AugmentArgs),
    /// Extract normalized FBANK features of a WAV directory into an archive.
    Fbank(FbankArgs),
    /// Pretrain an encoder; writes a checkpoint and metrics logs.
    Pretrain(PretrainArgs),
    /// Write encoder outputs of a WAV directory into an archive.
    Extract(ExtractArgs),
    /// Finite-difference check of every model parameter.
    Gradcheck(GradcheckArgs),
    /// Generate the synthetic labelled corpus.
    Synth(SynthArgs),
    /// Linear-probe accuracy of pooled features.
    Probe(ProbeArgs),
    /// Pretrain + probe with each augmentation switched off in turn.
    Ablate(AblateArgs),
    /// Configuration utilities.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum ConfigAction {
    /// Print the complete default configuration as JSON.
    ShowDefaults,
    /// Parse and validate a configuration file.
    Check { path: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AugmentOp {
    Pitch,
    Speed,
    Reverb,
    Noise,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub op: AugmentOp,
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    pub cents: i32,
    #[arg(long, default_value_t = 1.0)]
    pub factor: f64,
    #[arg(long, default_value_t = 50.0)]
    pub reverberance: f64,
    #[arg(long, default_value_t = 50.0)]
    pub damping: f64,
    #[arg(long, default_value_t = 50.0)]
    pub room: f64,
    /// Noise WAV for `--op noise`.
    #[arg(long)]
    pub noise: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
    pub snr: f64,
}

#[derive(Debug, Args)]
pub struct FbankArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub noise: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Take the encoder from this configuration instead of the toy model.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub frames: usize,
    /// Also write the report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Defaults to `<data>/labels.csv`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub noise: Option<PathBuf>,
    /// Comma-separated augmentations to switch off one at a time.
    #[arg(long, value_delimiter = ',')]
    pub toggles: Vec<String>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Argument(_) | Error::Config(_) => 1,
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
        cfg.probe.seed = s;
        cfg.synth.seed = s;
    }
    Ok(cfg)
}

fn required(v: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    v.ok_or_else(|| Error::Argument(format!("{what} is required (flag or config paths section)")))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable report")
}

pub fn run(cli: Cli) -> Result<()> {
    par::init_threads(cli.threads.or_else(par::threads_from_env));
    let seed = cli.seed;
    match cli.command {
        Command::Augment(a) => cmd_augment(a, seed),
        Command::Fbank(a) => cmd_fbank(a, seed),
        Command::Pretrain(a) => cmd_pretrain(a, seed),
        Command::Extract(a) => cmd_extract(a, seed),
        Command::Gradcheck(a) => cmd_gradcheck(a, seed),
        Command::Synth(a) => cmd_synth(a, seed),
        Command::Probe(a) => cmd_probe(a, seed),
        Command::Ablate(a) => cmd_ablate(a, seed),
        Command::Config { action } => match action {
            ConfigAction::ShowDefaults => {
                println!("{}", RunConfig::default().to_json());
                Ok(())
            }
            ConfigAction::Check { path } => {
                RunConfig::load(&path)?;
                println!("{}: ok", path.display());
                Ok(())
            }
        },
    }
}

fn cmd_augment(a: AugmentArgs, seed: Option<u64>) -> Result<()> {
    let w = read_wav(&a.input)?;
    let out = match a.op {
        AugmentOp::Pitch => pitch_shift(&w, a.cents)?,
        AugmentOp::Speed => speed_perturb(&w, a.factor)?,
        AugmentOp::Reverb => reverberate(&w, a.reverberance, a.damping, a.room)?,
        AugmentOp::Noise => {
            let path = a.noise.ok_or_else(|| Error::Argument("--op noise needs --noise <wav>".into()))?;
            let noise = read_wav(&path)?;
            add_noise(&w, &noise, a.snr, &mut rng_from(&[seed.unwrap_or(0)]))?.waveform
        }
    };
    write_wav(&out, &a.output)
}

fn cmd_fbank(a: FbankArgs, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), seed)?;
    let data = load_utterances(&a.input)?;
    let fe = view_pipeline(&cfg, Default::default(), &data)?.frontend;
    let feats = par::try_map_slice(&data, |u| fe.features_with_ids(&u.waveform, &u.id, u.speaker.as_deref()))?;
    let mut archive = NamedTensors::new();
    for (u, f) in data.iter().zip(feats) {
        archive.push(u.id.clone(), f.to_tensor::<f64>())?;
    }
    archive.save(&a.output)?;
    println!("wrote {} feature matrices to {}", archive.len(), a.output.display());
    Ok(())
}

fn metrics_writer(path: &Path, append: bool) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(append)
        .write(true)
        .truncate(!append)
        .open(path)
        .map_err(io_err(path))?;
    Ok(csv::WriterBuilder::new().has_headers(!append).from_writer(file))
}

fn cmd_pretrain(a: PretrainArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref(), seed)?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(n) = a.batch_size {
        cfg.train.batch_size = n;
    }
    cfg.paths.data_dir = a.data.or(cfg.paths.data_dir);
    cfg.paths.noise_dir = a.noise.or(cfg.paths.noise_dir);
    cfg.paths.output_dir = a.output.or(cfg.paths.output_dir);
    cfg.validate()?;
    let data_dir = required(cfg.paths.data_dir.clone(), "--data")?;
    let out_dir = required(cfg.paths.output_dir.clone(), "--output")?;
    std::fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    write_text(&out_dir.join("config.json"), &cfg.to_json())?;

    let data = load_utterances(&data_dir)?;
    let noise_dir = cfg.paths.noise_dir.clone().or_else(|| {
        let d = data_dir.join(NOISE_SUBDIR);
        d.is_dir().then_some(d)
    });
    let noise = load_noise(noise_dir.as_deref(), cfg.frontend.sample_rate_hz)?;
    let pipeline = view_pipeline(&cfg, noise, &data)?;
    let mut state = match &a.resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if ck.state.params.config() != &cfg.encoder {
                return Err(Error::Config(format!("{} was trained with a different encoder configuration", p.display())));
            }
            ck.state
        }
        None => TrainState::new(&cfg.encoder, cfg.train.seed)?,
    };
    let ckpt_path = out_dir.join("checkpoint.sscn");
    let metrics_path = out_dir.join("metrics.csv");
    let mut metrics = metrics_writer(&metrics_path, a.resume.is_some())?;
    let spe = steps_per_epoch(data.len(), cfg.train.batch_size) as u64;
    let mut epoch_sum = 0.0;
    let mut epoch_rows: Vec<(usize, f64)> = Vec::new();
    train(&mut state, &data, &pipeline, &cfg.train, None, |st, m: &StepMetrics| {
        metrics.serialize(m).map_err(|e| Error::Data(e.to_string()))?;
        epoch_sum += m.loss;
        if m.step % spe == 0 {
            metrics.flush().map_err(io_err(&metrics_path))?;
            let mean = epoch_sum / spe as f64;
            epoch_sum = 0.0;
            epoch_rows.push((m.epoch, mean));
            log::info!("epoch {} mean loss {mean:.5}", m.epoch);
            Checkpoint {
                state: st.clone(),
                train: cfg.train.clone(),
            }
            .save(&ckpt_path)?;
        }
        Ok(())
    })?;
    metrics.flush().map_err(io_err(&metrics_path))?;
    Checkpoint {
        state,
        train: cfg.train.clone(),
    }
    .save(&ckpt_path)?;
    let mut epochs = String::from("epoch,mean_loss\n");
    for (e, l) in &epoch_rows {
        epochs.push_str(&format!("{e},{l}\n"));
    }
    write_text(&out_dir.join("epochs.csv"), &epochs)?;
    println!("checkpoint written to {}", ckpt_path.display());
    Ok(())
}

fn cmd_extract(a: ExtractArgs, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), seed)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let data = load_utterances(&a.data)?;
    let fe = view_pipeline(&cfg, Default::default(), &data)?.frontend;
    extract_features(&ck.state.params, &data, &fe, &a.output)?;
    println!("wrote {} encoder outputs to {}", data.len(), a.output.display());
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs, seed: Option<u64>) -> Result<()> {
    let mut chk = ModelCheck::toy(seed.unwrap_or(3));
    if let Some(p) = &a.config {
        let cfg = RunConfig::load(p)?;
        chk.encoder = cfg.encoder;
        chk.temperature = cfg.train.temperature;
        chk.weights = cfg.train.weights;
    }
    chk.frames = a.frames;
    let rep = check_model(&chk)?;
    println!("{:<28} {:>7} {:>12} {:>12}  result", "parameter", "size", "max_abs", "max_rel");
    for e in &rep.entries {
        println!(
            "{:<28} {:>7} {:>12.3e} {:>12.3e}  {}",
            e.name,
            e.size,
            e.max_abs_error,
            e.max_scaled_error,
            if e.passed { "PASS" } else { "FAIL" }
        );
    }
    if let Some(p) = &a.report {
        write_text(p, &to_json(&rep))?;
    }
    if rep.passed() {
        println!("all {} parameters pass (worst {:.3e})", rep.entries.len(), rep.worst());
        Ok(())
    } else {
        let bad: Vec<&str> = rep.entries.iter().filter(|e| !e.passed).map(|e| e.name.as_str()).collect();
        Err(Error::Numeric(format!("gradient check failed for {}", bad.join(", "))))
    }
}

fn cmd_synth(a: SynthArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref(), seed)?.synth;
    if let Some(n) = a.per_class {
        cfg.per_class = n;
    }
    if let Some(k) = a.classes {
        cfg.classes = k;
    }
    let (ds, acc) = generate_checked(&cfg)?;
    write_dataset(&ds, &a.output)?;
    let report = serde_json::json!({
        "utterances": ds.utterances.len(),
        "classes": ds.class_names.len(),
        "noise_clips": ds.noise.len(),
        "separability_cv_accuracy": acc,
        "config": cfg,
    });
    write_text(&a.output.join("synth.json"), &to_json(&report))?;
    println!("{}", to_json(&report));
    Ok(())
}

fn cmd_probe(a: ProbeArgs, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), seed)?;
    let archive = NamedTensors::load(&a.features)?;
    let labels = Labels::read(&a.labels)?;
    let ids: Vec<String> = labels.by_id.keys().cloned().collect();
    let no_features: Vec<&str> = ids.iter().filter(|id| archive.get(id).is_none()).map(String::as_str).collect();
    let no_label: Vec<&str> = archive.names().filter(|n| !labels.by_id.contains_key(*n)).collect();
    if !no_features.is_empty() || !no_label.is_empty() {
        return Err(Error::Data(format!(
            "{} and {} disagree: features missing for [{}]; labels missing for [{}]",
            a.features.display(),
            a.labels.display(),
            no_features.join(", "),
            no_label.join(", ")
        )));
    }
    let x = pooled_rows(&archive, &ids)?;
    let y = labels.for_ids(&ids)?;
    let rep = probe(&x, &y, labels.classes.len(), &cfg.probe)?;
    let text = to_json(&rep);
    if let Some(p) = &a.report {
        write_text(p, &text)?;
    }
    println!("{text}");
    Ok(())
}

fn cmd_ablate(a: AblateArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref(), seed)?;
    cfg.paths.data_dir = a.data.or(cfg.paths.data_dir);
    cfg.paths.noise_dir = a.noise.or(cfg.paths.noise_dir);
    let data_dir = required(cfg.paths.data_dir.clone(), "--data")?;
    let data = load_utterances(&data_dir)?;
    let labels = Labels::read(&a.labels.unwrap_or_else(|| data_dir.join(LABELS_FILE)))?;
    let ids: Vec<String> = data.iter().map(|u| u.id.clone()).collect();
    let y = labels.for_ids(&ids)?;
    let noise_dir = cfg.paths.noise_dir.clone().or_else(|| {
        let d = data_dir.join(NOISE_SUBDIR);
        d.is_dir().then_some(d)
    });
    let noise = load_noise(noise_dir.as_deref(), cfg.frontend.sample_rate_hz)?;
    let rows = ablate(&cfg, &data, &y, labels.classes.len(), &noise, &a.toggles)?;
    let csv = ablation_csv(&rows)?;
    match &a.output {
        Some(p) => write_text(p, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}
