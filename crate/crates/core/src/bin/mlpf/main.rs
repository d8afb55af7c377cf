//! `mlpf`: generate, train, denoise, evaluate and cost-model event streams.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use mlpf_core::baseline::{baf_denoise, BafConfig};
use mlpf_core::denoiser::{
    denoise_stream, read_decisions_file, write_decisions_file, DenoiseConfig,
};
use mlpf_core::eval::{roc_curve, write_roc_csv};
use mlpf_core::events::{read_events, write_events};
use mlpf_core::hwsim::{
    host_load, simulate_occupancy, BusyPolicy, PipelineStats, PlatformProfile, PLATFORMS,
};
use mlpf_core::mlpf::{infer_batch, load_weights, save_weights, Threshold};
use mlpf_core::synth::{labeled_dataset, NoiseConfig, Preset};
use mlpf_core::trainer::{build_dataset, train, write_history, TrainConfig};
use mlpf_core::{AgeWindow, Error, Exec, Label, Result, SensorGeometry};

#[derive(Parser)]
#[command(
    name = "mlpf",
    version,
    about = "Event-camera denoising with a quantized MLP filter"
)]
struct Cli {
    /// Run every stage single-threaded.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a labeled event stream.
    Gen(GenArgs),
    /// Train a network on a labeled stream.
    Train(TrainArgs),
    /// Classify every event of a stream.
    Denoise(DenoiseArgs),
    /// ROC curve and AUC of scored, labeled decisions.
    Eval(EvalArgs),
    /// Latency, throughput, power and host-load figures of a hardware profile.
    Hwsim(HwsimArgs),
}

#[derive(Args, Clone, Copy)]
struct GeometryArgs {
    #[arg(long, default_value_t = 346)]
    width: u16,
    #[arg(long, default_value_t = 260)]
    height: u16,
}

impl GeometryArgs {
    fn build(self) -> Result<SensorGeometry> {
        SensorGeometry::new(self.width, self.height)
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_parser = PossibleValuesParser::new(["dense", "sparse"]), default_value = "dense")]
    preset: String,
    /// Shot-noise rate per pixel.
    #[arg(long, default_value_t = 5.0)]
    noise_hz: f64,
    /// Stream length in seconds.
    #[arg(long, default_value_t = 2.0)]
    duration: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    geometry: GeometryArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled event CSV.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u8).range(2..=8))]
    bits: u8,
    /// Train the unquantized network (the export is still quantized).
    #[arg(long)]
    float: bool,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 100)]
    batches_per_epoch: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 1e-5)]
    l1: f64,
    /// Keep every n-th event of the stream as a training sample.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 64)]
    tau_ms: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    geometry: GeometryArgs,
    /// Weight file to write.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss and AUC CSV.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FilterKind {
    Mlpf,
    Baf,
}

#[derive(Args)]
struct DenoiseArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "mlpf")]
    filter: FilterKind,
    /// Weight file (mlpf only).
    #[arg(long, required_if_eq("filter", "mlpf"))]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    tau_ms: u32,
    /// Logit level at or above which an event is signal (mlpf only).
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    threshold: f64,
    /// Support window of the baseline filter.
    #[arg(long, default_value_t = 1000)]
    baf_tau_us: u64,
    #[arg(long, default_value_t = 1)]
    radius: u16,
    /// Add the per-event score column.
    #[arg(long)]
    scores: bool,
    #[command(flatten)]
    geometry: GeometryArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Decision CSV with score and label columns.
    #[arg(long)]
    input: PathBuf,
    /// ROC CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HwsimArgs {
    #[arg(long, value_parser = PossibleValuesParser::new(PLATFORMS), default_value = "asic_65nm")]
    platform: String,
    /// Input event rate in events/s.
    #[arg(long, default_value_t = 1e6)]
    rate: f64,
    #[arg(long, value_parser = PossibleValuesParser::new(["bypass", "block"]), default_value = "bypass")]
    policy: String,
    /// Event CSV to replay through the busy-pipeline model.
    #[arg(long)]
    events: Option<PathBuf>,
    /// Raw sensor event rate for the host-load figures.
    #[arg(long, requires = "denoised_rate")]
    raw_rate: Option<f64>,
    /// Event rate after denoising.
    #[arg(long, requires = "raw_rate")]
    denoised_rate: Option<f64>,
    #[arg(long, default_value_t = 4.0)]
    bytes_per_event: f64,
    /// Events per USB transfer buffer.
    #[arg(long, default_value_t = 10_000.0)]
    buffer: f64,
    #[command(flatten)]
    geometry: GeometryArgs,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Artifact {
    path: String,
    sha256: String,
}

/// Everything needed to rerun a subcommand and check its outputs.
#[derive(Serialize)]
struct RunManifest {
    subcommand: &'static str,
    config: Value,
    seed: Option<u64>,
    inputs: Vec<Artifact>,
    outputs: Vec<Artifact>,
}

fn artifact(path: &Path) -> Result<Artifact> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(Artifact {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn write_manifest(
    subcommand: &'static str,
    config: Value,
    seed: Option<u64>,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<()> {
    let m = RunManifest {
        subcommand,
        config,
        seed,
        inputs: inputs.iter().map(|p| artifact(p)).collect::<Result<_>>()?,
        outputs: outputs.iter().map(|p| artifact(p)).collect::<Result<_>>()?,
    };
    let path = manifest_path(outputs[0]);
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n";
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

fn gen(a: &GenArgs, exec: Exec) -> Result<()> {
    let geometry = a.geometry.build()?;
    let preset: Preset = a.preset.parse()?;
    let noise = NoiseConfig {
        rate_hz: a.noise_hz,
        duration_s: a.duration,
        seed: a.seed,
    };
    let events = labeled_dataset(preset, geometry, &noise, exec)?;
    write_events(&a.out, &events)?;
    let signal = events
        .iter()
        .filter(|e| e.label == Some(Label::Signal))
        .count();
    println!(
        "events={} signal={} noise={}",
        events.len(),
        signal,
        events.len() - signal
    );
    let config = json!({
        "preset": a.preset, "noise_hz": a.noise_hz, "duration_s": a.duration,
        "width": a.geometry.width, "height": a.geometry.height,
    });
    write_manifest("gen", config, Some(a.seed), &[], &[&a.out])
}

fn train_cmd(a: &TrainArgs, exec: Exec) -> Result<()> {
    let geometry = a.geometry.build()?;
    let tau = AgeWindow::from_ms(a.tau_ms)?;
    if a.stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    let events = read_events(&a.data, geometry)?;
    let samples: Vec<_> = build_dataset(&events, geometry, tau)?
        .into_iter()
        .step_by(a.stride)
        .collect();
    let cfg = TrainConfig {
        bits: a.bits,
        quantized: !a.float,
        learning_rate: a.lr,
        batch_size: a.batch_size,
        epochs: a.epochs,
        batches_per_epoch: a.batches_per_epoch,
        l1: a.l1,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let t = train(&samples, &cfg, exec)?;
    save_weights(&a.out, &t.weights)?;
    let mut outputs = vec![a.out.as_path()];
    if let Some(h) = &a.history {
        let file = fs::File::create(h).map_err(|e| io_err(h, e))?;
        write_history(file, &t.history)?;
        outputs.push(h);
    }

    let probe: Vec<_> = samples.iter().take(10_000).map(|s| s.input).collect();
    let mut distinct: Vec<i64> = infer_batch(&t.weights, &probe, exec)?
        .iter()
        .map(|l| l.code)
        .collect();
    distinct.sort_unstable();
    distinct.dedup();
    let last = t.history.last().expect("at least one epoch");
    println!(
        "samples={} bits={} float={}",
        samples.len(),
        a.bits,
        a.float
    );
    println!(
        "final_loss={:.6} train_auc={:.6}",
        last.loss, last.train_auc
    );
    println!(
        "distinct_logits={} over {} samples",
        distinct.len(),
        probe.len()
    );
    println!("sparsity={:.4}", t.weights.sparsity());

    let config = json!({
        "bits": a.bits, "float": a.float, "epochs": a.epochs, "batches_per_epoch": a.batches_per_epoch,
        "batch_size": a.batch_size, "lr": a.lr, "momentum": cfg.momentum, "lr_decay": cfg.lr_decay,
        "signal_fraction": cfg.signal_fraction, "l1": a.l1, "stride": a.stride, "tau_ms": a.tau_ms,
        "width": a.geometry.width, "height": a.geometry.height,
    });
    write_manifest("train", config, Some(a.seed), &[&a.data], &outputs)
}

fn denoise_cmd(a: &DenoiseArgs) -> Result<()> {
    let geometry = a.geometry.build()?;
    let events = read_events(&a.input, geometry)?;
    let mut inputs = vec![a.input.as_path()];
    let (decisions, config) = match a.filter {
        FilterKind::Mlpf => {
            let path = a
                .weights
                .as_deref()
                .expect("clap requires --weights for mlpf");
            inputs.push(path);
            let cfg = DenoiseConfig {
                geometry,
                tau: AgeWindow::from_ms(a.tau_ms)?,
                weights: load_weights(path)?,
                threshold: Threshold::from_value(a.threshold),
                emit_scores: a.scores,
            };
            let config = json!({
                "filter": "mlpf", "tau_ms": a.tau_ms, "threshold_code": cfg.threshold.code,
                "scores": a.scores, "width": a.geometry.width, "height": a.geometry.height,
            });
            (denoise_stream(&events, &cfg)?, config)
        }
        FilterKind::Baf => {
            let cfg = BafConfig::new(geometry, a.baf_tau_us, a.radius)?;
            let mut d = baf_denoise(&events, &cfg)?;
            if !a.scores {
                d.iter_mut().for_each(|d| d.score = None);
            }
            let config = json!({
                "filter": "baf", "tau_us": a.baf_tau_us, "radius": a.radius,
                "scores": a.scores, "width": a.geometry.width, "height": a.geometry.height,
            });
            (d, config)
        }
    };
    write_decisions_file(&a.out, &decisions)?;
    let kept = decisions
        .iter()
        .filter(|d| d.predicted == Label::Signal)
        .count();
    println!(
        "events={} kept={} removed={}",
        decisions.len(),
        kept,
        decisions.len() - kept
    );
    write_manifest("denoise", config, None, &inputs, &[&a.out])
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let decisions = read_decisions_file(&a.input)?;
    let mut scores = Vec::with_capacity(decisions.len());
    let mut labels = Vec::with_capacity(decisions.len());
    for (i, d) in decisions.iter().enumerate() {
        let label = d.event.label.ok_or(Error::MissingLabel(i + 2))?;
        let score = d.score.ok_or_else(|| {
            Error::Config("decision file has no score column; rerun denoise with --scores".into())
        })?;
        scores.push(score as f64);
        labels.push(label.is_signal());
    }
    let curve = roc_curve(&scores, &labels)?;
    let mut buf = Vec::new();
    write_roc_csv(&mut buf, &curve).map_err(|e| io_err(&a.out, e))?;
    fs::write(&a.out, buf).map_err(|e| io_err(&a.out, e))?;
    println!("auc={:.6} points={}", curve.auc, curve.points.len());
    write_manifest("eval", json!({}), None, &[&a.input], &[&a.out])
}

fn hwsim_cmd(a: &HwsimArgs) -> Result<()> {
    let profile: PlatformProfile = a.platform.parse()?;
    let policy: BusyPolicy = a.policy.parse()?;
    if !(a.rate >= 0.0 && a.rate.is_finite()) {
        return Err(Error::Config(
            "rate must be a finite non-negative number".into(),
        ));
    }
    let mut stats = PipelineStats::new(&profile, a.rate);
    let mut inputs = Vec::new();
    if let Some(path) = &a.events {
        let events = read_events(path, a.geometry.build()?)?;
        let t: Vec<u64> = events.iter().map(|e| e.t_us).collect();
        stats = stats.with_occupancy(&simulate_occupancy(&t, &profile, policy));
        inputs.push(path.as_path());
    }
    if let (Some(raw), Some(den)) = (a.raw_rate, a.denoised_rate) {
        stats = stats.with_host(host_load(raw, den, a.bytes_per_event, a.buffer)?);
    }
    let report = stats.to_text();
    print!("{report}");
    if let Some(out) = &a.out {
        fs::write(out, &report).map_err(|e| io_err(out, e))?;
        let config = json!({
            "platform": a.platform, "rate": a.rate, "policy": a.policy, "raw_rate": a.raw_rate,
            "denoised_rate": a.denoised_rate, "bytes_per_event": a.bytes_per_event, "buffer": a.buffer,
        });
        write_manifest("hwsim", config, None, &inputs, &[out])?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    let result = match &cli.cmd {
        Cmd::Gen(a) => gen(a, exec),
        Cmd::Train(a) => train_cmd(a, exec),
        Cmd::Denoise(a) => denoise_cmd(a),
        Cmd::Eval(a) => eval_cmd(a),
        Cmd::Hwsim(a) => hwsim_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
