//! The `exitsep` command line.
//!
//! Every subcommand reads an optional `--config` TOML file; flags override
//! individual keys. Exit codes: 0 success, 1 usage, 2 data or IO, 3 numeric.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use exitsep_core::scene::SceneRecipe;
use exitsep_core::{DistanceKind, ExitPolicy};

use crate::audio::{read_audio, write_wav, Audio, WavFormat};
use crate::bench::{bench, sweep, test_chunks, SweepRun};
use crate::checkpoint::Checkpoint;
use crate::config::{DistanceName, ExperimentConfig};
use crate::dataset::{dataset_generate, prepare_dataset, MANIFEST};
use crate::error::{Error, Result};
use crate::report::emit_report;
use crate::separate::{separate, write_traces, WallClock};
use crate::train::{initial_checkpoint, train, TrainOptions, BEST, LAST};

#[derive(Debug, Parser)]
#[command(name = "exitsep", version, about = "Early-exit multi-channel speech separation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Valid,
    Test,
    All,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesise scene datasets under `data.dir/{train,valid,test}`.
    Synth {
        #[arg(long, value_enum, default_value_t = Split::All)]
        split: Split,
        /// Destination of a single split (overrides `data.dir/<split>`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        /// Comma-separated overlap ratios in [0, 1).
        #[arg(long, value_delimiter = ',')]
        overlaps: Option<Vec<f64>>,
    },
    /// Train a model, or resume from a checkpoint.
    Train {
        /// Directory holding `train/` and `valid/` datasets.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Separate one recording (WAV or raw f64) into one WAV per stream.
    Separate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Exit threshold; 0 runs every layer.
        #[arg(long, default_value_t = 0.0)]
        tau: f64,
        #[arg(long, value_enum)]
        distance: Option<DistanceArg>,
    },
    /// Threshold sweep with wall-clock speedup.
    Bench {
        #[command(flatten)]
        eval: EvalArgs,
        /// Timing repetitions; the median is reported.
        #[arg(long, default_value_t = 3)]
        reps: usize,
    },
    /// Threshold sweep without timing.
    Sweep {
        #[command(flatten)]
        eval: EvalArgs,
    },
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test dataset directory (defaults to `data.dir/test`).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated thresholds; `inf` is accepted.
    #[arg(long, value_delimiter = ',')]
    taus: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    distance: Option<DistanceArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DistanceArg {
    All,
    Speakers,
}

impl From<DistanceArg> for DistanceName {
    fn from(d: DistanceArg) -> Self {
        match d {
            DistanceArg::All => DistanceName::All,
            DistanceArg::Speakers => DistanceName::Speakers,
        }
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Synth { split, out, count, overlaps } => synth(&cfg, split, out, count, overlaps),
        Command::Train { data, out, steps, resume } => {
            if let Some(d) = data {
                cfg.data.dir = d;
            }
            if let Some(o) = out {
                cfg.output.dir = o;
            }
            if let Some(s) = steps {
                cfg.train.total_steps = s;
                cfg.train.warmup_steps = cfg.train.warmup_steps.min(s.max(1));
            }
            cfg.validate()?;
            run_train(&cfg, resume.as_deref())
        }
        Command::Separate { checkpoint, input, out, tau, distance } => {
            if let Some(d) = distance {
                cfg.inference.distance = d.into();
            }
            run_separate(&cfg, &checkpoint, &input, &out, tau)
        }
        Command::Bench { eval, reps } => run_eval(&mut cfg, eval, Some(reps)),
        Command::Sweep { eval } => run_eval(&mut cfg, eval, None),
    }
}

fn recipe(cfg: &ExperimentConfig) -> SceneRecipe {
    SceneRecipe {
        stft: cfg.stft(),
        duration_s: cfg.data.duration_s,
        channels: cfg.data.channels,
        sources: cfg.model.streams - 1,
        ..SceneRecipe::default()
    }
}

fn synth(cfg: &ExperimentConfig, split: Split, out: Option<PathBuf>, count: Option<usize>, overlaps: Option<Vec<f64>>) -> Result<()> {
    let splits: &[(Split, &str, u64)] = &[(Split::Train, "train", 0), (Split::Valid, "valid", 1), (Split::Test, "test", 2)];
    let chosen: Vec<_> = splits.iter().filter(|(s, ..)| matches!(split, Split::All) || std::mem::discriminant(s) == std::mem::discriminant(&split)).collect();
    if out.is_some() && chosen.len() > 1 {
        return Err(Error::Usage("--out needs a single --split".into()));
    }
    if let Some(bad) = overlaps.iter().flatten().find(|o| !(0.0..1.0).contains(*o)) {
        return Err(Error::Usage(format!("--overlaps: overlap {bad} outside [0, 1)")));
    }
    let r = recipe(cfg);
    for &&(s, name, offset) in &chosen {
        let dir = out.clone().unwrap_or_else(|| cfg.data.dir.join(name));
        let (default_count, default_overlaps) = match s {
            Split::Train => (cfg.data.train_count, &cfg.data.train_overlaps),
            Split::Valid => (cfg.data.valid_count, &cfg.data.train_overlaps),
            _ => (cfg.data.test_count, &cfg.data.test_overlaps),
        };
        let n = count.unwrap_or(default_count);
        let o = overlaps.as_ref().unwrap_or(default_overlaps);
        let seed = cfg.seed.wrapping_add(offset.wrapping_mul(0x1000_0000_0000));
        dataset_generate(&dir, n, &r, o, seed)?;
        eprintln!("{name}: {n} scenes in {}", dir.display());
    }
    Ok(())
}

fn need_manifest(dir: &Path) -> Result<()> {
    if dir.join(MANIFEST).exists() {
        Ok(())
    } else {
        Err(Error::format(dir, format!("no {MANIFEST}; run `exitsep synth` first")))
    }
}

fn run_train(cfg: &ExperimentConfig, resume: Option<&Path>) -> Result<()> {
    let (train_dir, valid_dir) = (cfg.data.dir.join("train"), cfg.data.dir.join("valid"));
    need_manifest(&train_dir)?;
    need_manifest(&valid_dir)?;
    let start = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if ck.config != cfg.model_config() {
                return Err(Error::Usage(format!("{}: model shape differs from the configuration", p.display())));
            }
            ck
        }
        None => initial_checkpoint(cfg.model_config(), cfg.seed)?,
    };
    let stft = cfg.stft();
    let streams = cfg.model.streams;
    let train_set = prepare_dataset(&train_dir, stft, streams, false)?;
    let valid_set = prepare_dataset(&valid_dir, stft, streams, false)?;
    let out = &cfg.output.dir;
    fs::create_dir_all(out).map_err(Error::io(out))?;
    fs::write(out.join("config.toml"), cfg.to_toml()).map_err(Error::io(out))?;
    let outcome = train(&TrainOptions::from(cfg), start, &train_set, &valid_set, Some(out))?;
    for v in &outcome.valid {
        eprintln!("epoch {:>4} step {:>6}  valid mse {:.5} (constant {:.5})", v.epoch, v.step, v.final_mse, v.constant_mse);
    }
    eprintln!("checkpoints: {} and {}", out.join(BEST).display(), out.join(LAST).display());
    Ok(())
}

/// STFT settings of `cfg` checked against what the checkpoint was trained on.
fn checked_stft(cfg: &ExperimentConfig, ck: &Checkpoint) -> Result<exitsep_core::StftConfig> {
    let stft = cfg.stft();
    if stft.window / 2 + 1 != ck.config.freq_bins {
        return Err(Error::Usage(format!(
            "data.window {} gives {} bins but the checkpoint has {}",
            stft.window,
            stft.window / 2 + 1,
            ck.config.freq_bins
        )));
    }
    Ok(stft)
}

fn run_separate(cfg: &ExperimentConfig, ckpt: &Path, input: &Path, out: &Path, tau: f64) -> Result<()> {
    let ck = Checkpoint::load(ckpt)?;
    let model = ck.model()?;
    let stft = checked_stft(cfg, &ck)?;
    let audio = read_audio(input)?;
    let want = ck.config.input_dim / ck.config.freq_bins;
    if audio.channels.len() != want {
        return Err(Error::Usage(format!("{}: {} channels, the model expects {want}", input.display(), audio.channels.len())));
    }
    if audio.sample_rate != stft.sample_rate {
        return Err(Error::Usage(format!("{}: sample rate {} Hz, expected {}", input.display(), audio.sample_rate, stft.sample_rate)));
    }
    let policy = ExitPolicy { distance: cfg.inference.distance.into(), ..ExitPolicy::new(tau)? };
    let inf = &cfg.inference;
    let sep = separate(&model, &ck.params, &audio.channels, stft, inf.window_frames, inf.hop_frames, &policy, &WallClock::default())?;
    fs::create_dir_all(out).map_err(Error::io(out))?;
    for (s, y) in sep.streams.iter().enumerate() {
        let a = Audio { sample_rate: audio.sample_rate, channels: vec![y.clone()] };
        write_wav(&out.join(format!("stream_{s}.wav")), &a, WavFormat::Float32)?;
    }
    write_traces(&out.join("traces.jsonl"), &sep.traces)?;
    let mean = sep.traces.iter().map(|t| t.exit_layer as f64).sum::<f64>() / sep.traces.len() as f64;
    eprintln!("{} streams, {} chunks, mean exit layer {mean:.2}", sep.streams.len(), sep.traces.len());
    Ok(())
}

fn run_eval(cfg: &mut ExperimentConfig, args: EvalArgs, reps: Option<usize>) -> Result<()> {
    if let Some(t) = args.taus {
        cfg.inference.taus = t;
    }
    if let Some(d) = args.distance {
        cfg.inference.distance = d.into();
    }
    if let Some(o) = args.out {
        cfg.output.dir = o;
    }
    cfg.validate()?;
    let ck = Checkpoint::load(&args.checkpoint)?;
    let model = ck.model()?;
    let stft = checked_stft(cfg, &ck)?;
    let dir = args.data.unwrap_or_else(|| cfg.data.dir.join("test"));
    need_manifest(&dir)?;
    let scenes = prepare_dataset(&dir, stft, ck.config.streams, true)?;
    let inf = &cfg.inference;
    let chunks = test_chunks(&scenes, inf.window_frames, inf.hop_frames)?;
    let distance: DistanceKind = inf.distance.into();
    let (report, runs) = match reps {
        Some(r) => bench(&model, &ck.params, &scenes, &chunks, &inf.taus, distance, r)?,
        None => sweep(&model, &ck.params, &scenes, &chunks, &inf.taus, distance)?,
    };
    let out = &cfg.output.dir;
    emit_report(&report, out)?;
    write_runs(out, &runs)?;
    for r in &report.rows {
        let speed = r.speedup.map_or_else(String::new, |s| format!("  speedup {s:.2}x"));
        eprintln!("tau {:<8} exit {:.2}  mask mse {:.5}  si-snri {:.2} dB{speed}", r.tau, r.avg_exit_layer, r.mask_mse, r.si_snri_db);
    }
    eprintln!("report in {}", out.display());
    Ok(())
}

fn write_runs(out: &Path, runs: &[SweepRun]) -> Result<()> {
    let dir = out.join("traces");
    fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
    for r in runs {
        write_traces(&dir.join(format!("tau_{}.jsonl", r.tau)), &r.traces)?;
    }
    Ok(())
}
