//! `polarpred`: synthetic data, training, evaluation, prediction and filter
//! analysis from the command line.
//!
//! Failures print one line `error[<kind>]: <message>` on stderr and exit 1.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use polarpred::analysis::FilterReport;
use polarpred::checkpoint::Checkpoint;
use polarpred::config::{format_kv, parse_kv, parse_value};
use polarpred::data::{self, SyntheticSpec, VideoClip};
use polarpred::metrics::{aggregate, aggregate_table, records_csv, MetricRecord};
use polarpred::pgm;
use polarpred::predictors::{Precision, Predictor, Variant};
use polarpred::training::{self, TrainConfig, FINAL_CHECKPOINT, LAST_CHECKPOINT, LOSS_CSV};
use polarpred::{Real, Tensor};

/// Name of the resolved configuration written next to every command's outputs.
const RESOLVED_CONFIG: &str = "config.txt";
const THREADS_ENV: &str = "POLARPRED_THREADS";

#[derive(Parser)]
#[command(name = "polarpred", version, about = "Next-frame prediction with phase-advancing representations")]
struct Cli {
    /// Worker threads; falls back to POLARPRED_THREADS, then the core count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Output directory; must be absent or empty unless --force.
    #[arg(long)]
    out: PathBuf,
    /// Write into a non-empty --out, replacing files of the same name.
    #[arg(long)]
    force: bool,
    /// `key=value` override applied after the config file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct Source {
    /// Trained checkpoint.
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    checkpoint: Option<PathBuf>,
    /// Untrained baseline variant instead of a checkpoint (copy or cmc).
    #[arg(long)]
    model: Option<Variant>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic PPV1 clips.
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a learned predictor on a directory of PPV1 clips.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Continue from a checkpoint written by an earlier run into --out.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Score predictions of every frame of every clip.
    Eval {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Predict every frame of one clip and write images and error maps.
    Predict {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        clip: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Report and draw the first-layer filters of a checkpoint.
    Filters {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

/// Every key a command accepts: `synth.*`, `train.*`, `model.*` and `data.*`.
#[derive(Clone, Debug, Default)]
struct RunConfig {
    synth: SyntheticSpec,
    train: TrainConfig,
    /// Central crop applied to loaded clips; 0 keeps the frame.
    crop: usize,
    /// Power-of-two box downsampling applied after the crop.
    down: usize,
}

impl RunConfig {
    fn new() -> Self {
        Self {
            down: 1,
            ..Self::default()
        }
    }

    fn set(&mut self, key: &str, value: &str) -> anyhow::Result<()> {
        let known = match key {
            "data.crop" => {
                self.crop = parse_value(key, value)?;
                true
            }
            "data.down" => {
                self.down = parse_value(key, value)?;
                true
            }
            _ => self.synth.set(key, value)? || self.train.set(key, value)?,
        };
        if !known {
            return Err(polarpred::Error::Config(format!("unknown key {key:?}")).into());
        }
        Ok(())
    }

    fn apply(&mut self, kv: &[(String, String)]) -> anyhow::Result<()> {
        kv.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    /// Layers the config file and then the `--set` overrides over `self`.
    fn layer(&mut self, file: Option<&Path>, sets: &[String]) -> anyhow::Result<()> {
        if let Some(p) = file {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            self.apply(&parse_kv(&text).with_context(|| p.display().to_string())?)?;
        }
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| polarpred::Error::Config(format!("--set {s:?} is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv = self.synth.to_kv();
        kv.extend(self.train.to_kv());
        kv.push(("data.crop".into(), self.crop.to_string()));
        kv.push(("data.down".into(), self.down.to_string()));
        kv
    }

    fn load_clips(&self, dir: &Path) -> anyhow::Result<Vec<VideoClip>> {
        let clips = data::load_dir(dir)?;
        if self.crop == 0 && self.down == 1 {
            return Ok(clips);
        }
        Ok(clips
            .iter()
            .map(|c| data::preprocess(c, self.crop, self.down))
            .collect::<polarpred::Result<_>>()?)
    }
}

/// Creates `dir`, refusing a non-empty one unless `force`.
fn prepare_out(dir: &Path, force: bool) -> anyhow::Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            bail!("--out {} is not a directory", dir.display());
        }
        if !force && fs::read_dir(dir)?.next().is_some() {
            bail!("--out {} is not empty; pass --force to overwrite", dir.display());
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    let p = dir.join(name);
    fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))
}

fn write_config(dir: &Path, cfg: &RunConfig) -> anyhow::Result<()> {
    write(dir, RESOLVED_CONFIG, format_kv(&cfg.to_kv()))
}

/// Resolves the run configuration and checkpoint behind `--checkpoint` or `--model`.
fn resolve_source(source: &Source, file: Option<&Path>, sets: &[String]) -> anyhow::Result<(RunConfig, Option<Checkpoint>)> {
    let mut cfg = RunConfig::new();
    let ck = match (&source.checkpoint, source.model) {
        (Some(p), _) => {
            let ck = Checkpoint::load(p).with_context(|| p.display().to_string())?;
            cfg.apply(&ck.config)?;
            Some(ck)
        }
        (None, Some(v)) => {
            if v.is_learned() {
                bail!("--model {v} needs trained weights; pass --checkpoint");
            }
            cfg.train.model.variant = v;
            None
        }
        (None, None) => bail!("pass --checkpoint or --model"),
    };
    cfg.layer(file, sets)?;
    if let Some(ck) = &ck {
        if ck.predictor_config()? != cfg.train.model {
            return Err(polarpred::Error::Config("model.* overrides disagree with the checkpoint".into()).into());
        }
    }
    cfg.train.model.validate()?;
    Ok((cfg, ck))
}

fn predictor<T: Real>(cfg: &RunConfig, ck: Option<&Checkpoint>) -> anyhow::Result<Predictor<T>> {
    Ok(match ck {
        Some(ck) => Predictor::Learned(ck.model()?),
        None => Predictor::from_config(&cfg.train.model, cfg.train.seed)?,
    })
}

fn cmd_synth(spec: Option<&Path>, c: &Common) -> anyhow::Result<()> {
    let mut cfg = RunConfig::new();
    cfg.layer(spec, &c.set)?;
    cfg.synth.validate()?;
    let clips = data::generate(&cfg.synth)?;
    prepare_out(&c.out, c.force)?;
    let width = clips.len().to_string().len().max(4);
    for (i, clip) in clips.iter().enumerate() {
        data::save_clip(&c.out.join(format!("clip_{i:0width$}.ppv1")), clip)?;
    }
    write_config(&c.out, &cfg)?;
    eprintln!("wrote {} clips to {}", clips.len(), c.out.display());
    Ok(())
}

fn cmd_train(config: Option<&Path>, data_dir: &Path, resume: Option<&Path>, c: &Common) -> anyhow::Result<()> {
    let mut cfg = RunConfig::new();
    let ck = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p).with_context(|| p.display().to_string())?;
            cfg.apply(&ck.config)?;
            Some(ck)
        }
        None => None,
    };
    cfg.layer(config, &c.set)?;
    cfg.train.validate()?;
    let clips = cfg.load_clips(data_dir)?;
    // resuming continues the files already in --out
    prepare_out(&c.out, c.force || ck.is_some())?;
    write_config(&c.out, &cfg)?;
    let report = |e: &training::EpochLoss| eprintln!("epoch {} lr {:.3e} loss {:.6e}", e.epoch, e.lr, e.loss);
    let out = Some(c.out.as_path());
    match cfg.train.model.precision {
        Precision::F32 => drop(training::train::<f32>(&cfg.train, &clips, out, ck.as_ref(), report)?),
        Precision::F64 => drop(training::train::<f64>(&cfg.train, &clips, out, ck.as_ref(), report)?),
    }
    eprintln!(
        "wrote {}, {} and {} to {}",
        FINAL_CHECKPOINT,
        LAST_CHECKPOINT,
        LOSS_CSV,
        c.out.display()
    );
    Ok(())
}

fn eval_records<T: Real>(cfg: &RunConfig, ck: Option<&Checkpoint>, clips: &[VideoClip]) -> anyhow::Result<Vec<MetricRecord>> {
    Ok(training::evaluate(&predictor::<T>(cfg, ck)?, clips, cfg.train.trim)?)
}

fn cmd_eval(source: &Source, config: Option<&Path>, data_dir: &Path, c: &Common) -> anyhow::Result<()> {
    let (cfg, ck) = resolve_source(source, config, &c.set)?;
    let clips = cfg.load_clips(data_dir)?;
    let records = match cfg.train.model.precision {
        Precision::F32 => eval_records::<f32>(&cfg, ck.as_ref(), &clips)?,
        Precision::F64 => eval_records::<f64>(&cfg, ck.as_ref(), &clips)?,
    };
    prepare_out(&c.out, c.force)?;
    let agg = aggregate(&records);
    write(&c.out, "records.csv", records_csv(&records))?;
    write(
        &c.out,
        "aggregate.csv",
        aggregate_table(&[(cfg.train.model.variant.to_string(), agg.clone())]),
    )?;
    write_config(&c.out, &cfg)?;
    eprintln!(
        "{}: {} frames, mse {:.6e}, psnr {:.3}, ssim {:.4}",
        cfg.train.model.variant, agg.count, agg.mse, agg.psnr, agg.ssim
    );
    Ok(())
}

/// Writes, per predicted frame `t`, the target, the prediction and the
/// absolute error, plus the predicted clip as PPV1 (frames 0 and 1 are the
/// inputs, later frames the predictions clipped to `[-1, 1]`).
fn predict_outputs<T: Real>(cfg: &RunConfig, ck: Option<&Checkpoint>, clip: &VideoClip, out: &Path) -> anyhow::Result<()> {
    let frames = clip.frames.cast::<T>();
    let preds = predictor::<T>(cfg, ck)?.predict_clip(&frames)?;
    let mut seq = vec![clip.frame(0), clip.frame(1)];
    let mut records = Vec::with_capacity(preds.len());
    let width = clip.len().to_string().len().max(3);
    for (i, p) in preds.iter().enumerate() {
        let t = i + 2;
        let target = frames.index_axis0(t);
        let err = p.frame.zip_map(&target, |a, b| a - b)?;
        write(out, &format!("target_{t:0width$}.pgm"), pgm::frame_image(&target)?.to_bytes())?;
        write(out, &format!("pred_{t:0width$}.pgm"), pgm::frame_image(&p.frame)?.to_bytes())?;
        write(out, &format!("error_{t:0width$}.pgm"), pgm::error_image(&err, 1.0)?.to_bytes())?;
        records.push(MetricRecord::score(&clip.source, t, &p.frame, &target)?);
        seq.push(p.frame.cast::<f32>().map(|v| v.clamp(-1.0, 1.0)));
    }
    let pred_clip = VideoClip::new(Tensor::stack(&seq)?, clip.source.clone())?;
    data::save_clip(&out.join("predicted.ppv1"), &pred_clip)?;
    write(out, "records.csv", records_csv(&records))?;
    Ok(())
}

fn cmd_predict(source: &Source, config: Option<&Path>, clip: &Path, c: &Common) -> anyhow::Result<()> {
    let (cfg, ck) = resolve_source(source, config, &c.set)?;
    let raw = data::load_raw_clip(clip).with_context(|| clip.display().to_string())?;
    let clip = data::preprocess(&raw, cfg.crop, cfg.down)?;
    prepare_out(&c.out, c.force)?;
    match cfg.train.model.precision {
        Precision::F32 => predict_outputs::<f32>(&cfg, ck.as_ref(), &clip, &c.out)?,
        Precision::F64 => predict_outputs::<f64>(&cfg, ck.as_ref(), &clip, &c.out)?,
    }
    write_config(&c.out, &cfg)?;
    eprintln!("wrote {} predicted frames to {}", clip.len() - 2, c.out.display());
    Ok(())
}

fn cmd_filters(checkpoint: &Path, c: &Common) -> anyhow::Result<()> {
    let mut cfg = RunConfig::new();
    let ck = Checkpoint::load(checkpoint).with_context(|| checkpoint.display().to_string())?;
    cfg.apply(&ck.config)?;
    cfg.layer(None, &c.set)?;
    let model = ck.model::<f64>()?;
    let w = model.first_layer();
    let (channels, cin, ..) = w.dims4("filters")?;
    if cin != 1 {
        bail!("first layer {:?} does not act on single frames", w.shape());
    }
    prepare_out(&c.out, c.force)?;
    let cols = (channels as f64).sqrt().ceil() as usize;
    write(&c.out, "mosaic.pgm", pgm::filter_mosaic(w, cols)?.to_bytes())?;
    if channels % 2 == 0 {
        // pair diagnostics need channels (2p, 2p+1); the first pair column
        // of the sorted mosaic shows each pair side by side
        let report = FilterReport::from_weights(w)?;
        write(&c.out, "filters.csv", report.to_csv())?;
        let (k1, k2) = (w.shape()[2], w.shape()[3]);
        let order: Vec<Tensor<f64>> = report
            .pairs
            .iter()
            .flat_map(|r| [2 * r.pair, 2 * r.pair + 1])
            .map(|ch| w.index_axis0(ch))
            .collect();
        let sorted = Tensor::stack(&order)?.reshape(&[channels, 1, k1, k2])?;
        write(&c.out, "mosaic_sorted.pgm", pgm::filter_mosaic(&sorted, 2 * cols.div_ceil(2))?.to_bytes())?;
    }
    write_config(&c.out, &cfg)?;
    eprintln!("wrote {} filter(s) to {}", channels, c.out.display());
    Ok(())
}

fn threads(flag: Option<usize>) -> anyhow::Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => Ok(Some(parse_value(THREADS_ENV, &v)?)),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = threads(cli.threads)? {
        if n == 0 {
            bail!("--threads must be >= 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.cmd {
        Cmd::Synth { spec, common } => cmd_synth(spec.as_deref(), common),
        Cmd::Train {
            config,
            data,
            resume,
            common,
        } => cmd_train(config.as_deref(), data, resume.as_deref(), common),
        Cmd::Eval {
            source,
            config,
            data,
            common,
        } => cmd_eval(source, config.as_deref(), data, common),
        Cmd::Predict {
            source,
            config,
            clip,
            common,
        } => cmd_predict(source, config.as_deref(), clip, common),
        Cmd::Filters { checkpoint, common } => cmd_filters(checkpoint, common),
    }
}

/// Category of the innermost library error, `"error"` otherwise.
fn kind(e: &anyhow::Error) -> &'static str {
    e.chain()
        .find_map(|c| c.downcast_ref::<polarpred::Error>())
        .map_or("error", |e| e.kind())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let k = kind(&e);
            let msg = format!("{e:#}").replace(['\n', '\r'], " ");
            let msg = msg.strip_prefix(&format!("{k}: ")).unwrap_or(&msg);
            eprintln!("error[{k}]: {msg}");
            ExitCode::FAILURE
        }
    }
}
