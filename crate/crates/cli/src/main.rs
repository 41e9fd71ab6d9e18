use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use avfuse_core::audio_dsp::{
    cwt_scalogram, default_scales, grid_to_csv, mel_spectrogram, stft, DEFAULT_HOP_LENGTH, DEFAULT_WINDOW_SIZE,
};
use avfuse_core::io::read_wav;
use avfuse_core::pipeline::scenario::AUDIO_FILE;
use avfuse_core::pipeline::{
    generate_scenario, pipeline_run, read_scenario, train_models, LogReport, ModelBundle, RunConfig, Scenario,
};
use avfuse_core::Error;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "avfuse", version, about = "Audio-visual fusion and anomaly detection over recorded streams")]
struct Cli {
    /// Run configuration (JSON); missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Scenario seed for `generate`; model seed for `train` and `run`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    queue_capacity: Option<usize>,
    /// Unbounded queues: nothing is dropped and output is reproducible.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    /// 2 s, 10 frames, one moving object and a steady tone.
    Canonical,
    /// 24 s with visual, audio and event anomalies injected.
    Injected,
    /// Anomaly-free recording, for training.
    Normal,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a recording: frames, audio, manifest and scenario.
    Generate {
        #[arg(long, value_enum, default_value = "canonical", conflicts_with = "spec")]
        preset: Preset,
        /// Scenario JSON to render instead of a preset.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Length of the `normal` preset, in seconds.
        #[arg(long, default_value_t = 24.0)]
        duration: f64,
    },
    /// Train the fusion models and frame autoencoder on a recording.
    Train {
        #[arg(long)]
        input: PathBuf,
    },
    /// Stream a recording through every stage.
    Run {
        #[arg(long)]
        input: PathBuf,
        /// Directory written by `train`; untrained models otherwise.
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long)]
        single_threaded: bool,
        /// Also dump spectrogram, mel and scalogram CSVs of the audio track here.
        #[arg(long)]
        export_csv: Option<PathBuf>,
    },
    /// Summarize an event log.
    Report {
        #[arg(long)]
        log: PathBuf,
        /// Print the summary as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(m) => Failure::Config(m),
            other => Failure::Runtime(other),
        }
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Runtime(e) => write!(f, "{e}"),
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| Failure::Config(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(n) = cli.queue_capacity {
        c.pipeline.queue_capacity = n;
    }
    if cli.deterministic {
        c.pipeline.deterministic = true;
    }
    if let Some(s) = cli.seed {
        c.fusion.model_seed = s;
        c.anomaly.autoencoder.seed = s;
    }
    c.validate()?;
    Ok(c)
}

fn out_dir(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn export_csv(input: &Path, dir: &Path) -> Result<(), Failure> {
    let audio = read_wav(input.join(AUDIO_FILE))?;
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(Error::Io { path: dir.into(), source: e }))?;
    let spec = stft(&audio.samples, DEFAULT_WINDOW_SIZE, DEFAULT_HOP_LENGTH, audio.sample_rate)?;
    let mel = mel_spectrogram(&spec);
    let scalogram = cwt_scalogram(&audio.samples, &default_scales(audio.sample_rate), audio.sample_rate)?;
    for (name, csv) in [
        ("spectrogram.csv", grid_to_csv(&spec.magnitudes)),
        ("mel.csv", grid_to_csv(&mel.bands)),
        ("scalogram.csv", grid_to_csv(&scalogram.magnitudes)),
    ] {
        let path = dir.join(name);
        fs::write(&path, csv).map_err(|e| Failure::Runtime(Error::Io { path, source: e }))?;
    }
    Ok(())
}

fn print_report(r: &LogReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "records: {}  windows: {}", r.records, r.windows);
    if let (Some(a), Some(b)) = (r.first_t, r.last_t) {
        let _ = writeln!(s, "span: {a:.3} s .. {b:.3} s");
    }
    for (kind, n) in &r.per_kind {
        let _ = writeln!(s, "  {kind:<15}{n}");
    }
    let _ = writeln!(s, "max combined score: {:.4}", r.max_combined);
    let _ = writeln!(s, "triggered anomalies: {}", r.triggered.len());
    for t in &r.triggered {
        let _ = writeln!(
            s,
            "  window {:>5}  t = {:>8.3} s  score {:.3}  {}  {}",
            t.window,
            t.t,
            t.combined,
            t.kind,
            t.artifact.as_deref().unwrap_or("-")
        );
    }
    s
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Generate { preset, spec, duration } => {
            let seed = cli.seed.unwrap_or(0);
            let scenario = match spec {
                Some(p) => {
                    let mut s = read_scenario(p).map_err(|e| Failure::Config(e.to_string()))?;
                    if let Some(seed) = cli.seed {
                        s.seed = seed;
                    }
                    s
                }
                None => match preset {
                    Preset::Canonical => Scenario::canonical(seed),
                    Preset::Injected => Scenario::injected(seed),
                    Preset::Normal => Scenario::normal(seed, *duration),
                },
            };
            let out = out_dir(cli, "scenario");
            let g = generate_scenario(&scenario, &out)?;
            println!("wrote {} frames and {} to {}", g.frames.len(), AUDIO_FILE, out.display());
        }
        Command::Train { input } => {
            let config = load_config(cli)?;
            let out = out_dir(cli, "models");
            let (_, summary) = train_models(input, &out, &config)?;
            let last = |v: &[f64]| v.last().copied().unwrap_or(f64::NAN);
            println!(
                "trained on {} windows: basic loss {:.4}, advanced loss {:.4}, autoencoder {}",
                summary.windows,
                last(&summary.basic_loss),
                last(&summary.advanced_loss),
                match summary.autoencoder_mse {
                    Some(m) => format!("mse {m:.5} over {} frames", summary.autoencoder_frames),
                    None => "not trained".into(),
                }
            );
            println!("models saved to {}", out.display());
        }
        Command::Run {
            input,
            models,
            single_threaded,
            export_csv: csv,
        } => {
            let mut config = load_config(cli)?;
            if *single_threaded {
                config.pipeline.threaded = false;
            }
            let bundle = models.as_ref().map(ModelBundle::load).transpose()?;
            let out = out_dir(cli, "run");
            let s = pipeline_run(input, &out, &config, bundle.as_ref())?;
            if let Some(dir) = csv {
                export_csv(input, dir)?;
            }
            println!(
                "{}/{} windows processed, {} dropped, {} anomalies ({} artifacts)",
                s.windows_processed,
                s.windows_total,
                s.total_dropped(),
                s.anomalies_triggered,
                s.artifacts_written
            );
            for st in &s.stages {
                println!(
                    "  {:<9} processed {:>5}  dropped {:>4}  p50 {:>8.2} ms  p95 {:>8.2} ms",
                    st.stage.as_str(),
                    st.processed,
                    st.dropped,
                    st.latency.p50_ms,
                    st.latency.p95_ms
                );
            }
            println!("event log: {}", s.log.display());
        }
        Command::Report { log, json } => {
            let r = LogReport::load(log)?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&r).map_err(|e| Failure::Runtime(e.into()))?);
            } else {
                print!("{}", print_report(&r));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("avfuse: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn invalid_config_maps_to_exit_one() {
        assert_eq!(Failure::from(Error::InvalidConfig("x".into())).exit_code(), 1);
        assert_eq!(Failure::from(Error::InvalidInput("x".into())).exit_code(), 2);
    }
}
