//! Optimization of the learned predictors on next-frame MSE, and per-frame
//! evaluation of any predictor.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::autodiff::{lr_schedule, trimmed_window, AdamState, Graph};
use crate::checkpoint::Checkpoint;
use crate::config::{format_list, parse_list, parse_value};
use crate::data::{make_batches, VideoClip};
use crate::error::{Error, Result};
use crate::metrics::MetricRecord;
use crate::predictors::{BnMode, Model, Predictor, PredictorConfig};
use crate::tensor::{center_crop_at, Real, Tensor};

pub const DEFAULT_TRIM: usize = 17;
pub const LAST_CHECKPOINT: &str = "last.ppck";
pub const FINAL_CHECKPOINT: &str = "final.ppck";
pub const LOSS_CSV: &str = "loss.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Epochs (0-based) at which the learning rate halves.
    pub milestones: Vec<usize>,
    pub batch: usize,
    pub seg_len: usize,
    pub trim: usize,
    pub seed: u64,
    pub model: PredictorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 3e-4,
            milestones: vec![50, 60, 70, 80, 90, 100],
            batch: 4,
            seg_len: 11,
            trim: DEFAULT_TRIM,
            seed: 0,
            model: PredictorConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Applies one `train.*` or `model.*` key. Returns `Ok(false)` for keys it does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        if self.model.set(key, value)? {
            return Ok(true);
        }
        let Some(k) = key.strip_prefix("train.") else {
            return Ok(false);
        };
        match k {
            "epochs" => self.epochs = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "milestones" => self.milestones = parse_list(key, value)?,
            "batch" => self.batch = parse_value(key, value)?,
            "seg_len" => self.seg_len = parse_value(key, value)?,
            "trim" => self.trim = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv: Vec<(String, String)> = [
            ("epochs", self.epochs.to_string()),
            ("lr", format!("{:e}", self.lr)),
            ("milestones", format_list(&self.milestones)),
            ("batch", self.batch.to_string()),
            ("seg_len", self.seg_len.to_string()),
            ("trim", self.trim.to_string()),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (format!("train.{k}"), v))
        .collect();
        kv.extend(self.model.to_kv());
        kv
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !self.model.variant.is_learned() {
            return Err(Error::Config(format!("variant {} is not trainable", self.model.variant)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be >= 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("train.lr = {} must be finite and >= 0", self.lr)));
        }
        if self.batch == 0 || self.seg_len < 3 {
            return Err(Error::Config("train.batch must be >= 1 and train.seg_len >= 3".into()));
        }
        Ok(())
    }
}

/// Trimmed MSE between `[.., H', W']` predictions that lost `pred_margin`
/// border pixels and `[.., H, W]` targets. The compared window is what is
/// left after removing `max(trim, pred_margin)` pixels per side; its extent
/// is returned with the loss.
pub fn prediction_loss<T: Real>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    pred_margin: usize,
    trim: usize,
) -> Result<(f64, (usize, usize))> {
    if pred.rank() < 2 || pred.rank() != target.rank() {
        return Err(Error::shape("prediction_loss", format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    let (po, to, h, w) = trimmed_window(target.hw(), pred.hw(), pred_margin, trim)?;
    let p = center_crop_at(pred, po, po, h, w)?;
    let t = center_crop_at(target, to, to, h, w)?;
    p.expect_same_shape(&t, "prediction_loss")?;
    Ok((crate::metrics::mse(&p, &t)?, (h, w)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub lr: f64,
    /// Mean of the per-step losses.
    pub loss: f64,
    pub steps: usize,
}

pub fn loss_csv(curve: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,lr,loss,steps\n");
    for e in curve {
        let _ = writeln!(s, "{},{:e},{:.9e},{}", e.epoch, e.lr, e.loss, e.steps);
    }
    s
}

fn parse_loss_csv(text: &str) -> Result<Vec<EpochLoss>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(Error::Config(format!("loss curve row {l:?}")));
            }
            Ok(EpochLoss {
                epoch: parse_value("epoch", f[0])?,
                lr: parse_value("lr", f[1])?,
                loss: parse_value("loss", f[2])?,
                steps: parse_value("steps", f[3])?,
            })
        })
        .collect()
}

/// Shuffle seed of `epoch`; distinct per epoch and independent of resumption.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub struct TrainResult<T: Real> {
    pub model: Model<T>,
    pub adam: AdamState<T>,
    pub curve: Vec<EpochLoss>,
}

/// One optimizer step on a batch; returns the loss.
pub fn train_step<T: Real>(
    model: &mut Model<T>,
    adam: &mut AdamState<T>,
    frames: &Tensor<f32>,
    trim: usize,
    lr: f64,
) -> Result<f64> {
    let (b, s, h, w) = frames.dims4("train_step")?;
    let x = frames.cast::<T>().reshape(&[b * s, 1, h, w])?;
    let triples: Vec<_> = (0..b)
        .flat_map(|i| (0..s - 2).map(move |t| (i * s + t, i * s + t + 1, i * s + t + 2)))
        .collect();
    let pairs: Vec<_> = triples.iter().map(|t| (t.0, t.1)).collect();
    let targets = Tensor::stack(&triples.iter().map(|t| x.index_axis0(t.2)).collect::<Vec<_>>())?;
    let mut g = Graph::new();
    let vars = model.bind(&mut g, true);
    let f = model.forward(&mut g, &vars, &x, &pairs, BnMode::Train)?;
    let loss = g.trimmed_mse(f.pred, &targets, f.margin, trim)?;
    let value = g.value(loss).item()?.as_f64();
    if !value.is_finite() {
        return Ok(value);
    }
    let grads = g.backward(loss)?;
    let gs: Vec<Tensor<T>> = vars.iter().map(|&v| grads.wrt(v)).collect();
    adam.step(model.params_mut(), &gs, lr)?;
    model.update_running_stats(&f.moments);
    Ok(value)
}

/// Trains `cfg.model` on `clips`.
///
/// With `out`, writes `last.ppck` and `loss.csv` after every epoch and
/// `final.ppck` at the end. A checkpoint in `resume` continues from its
/// epoch; the result equals an uninterrupted run. A non-finite loss aborts
/// with [`Error::NonFiniteLoss`] and leaves the previous epoch's files.
pub fn train<T: Real>(
    cfg: &TrainConfig,
    clips: &[VideoClip],
    out: Option<&Path>,
    resume: Option<&Checkpoint>,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<TrainResult<T>> {
    cfg.validate()?;
    if let Some(c) = clips.first() {
        let (h, w) = c.hw();
        if 2 * cfg.trim >= h.min(w) {
            return Err(Error::Config(format!("train.trim = {} leaves nothing of {h}x{w} frames", cfg.trim)));
        }
    }
    let (mut model, mut adam, mut curve, start) = match resume {
        Some(ck) => {
            let m: Model<T> = ck.model()?;
            if *m.config() != cfg.model {
                return Err(Error::Config("checkpoint model does not match the configuration".into()));
            }
            let a = ck.adam(&m)?;
            let curve = match out.map(|d| d.join(LOSS_CSV)).filter(|p| p.exists()) {
                Some(p) => {
                    let mut c = parse_loss_csv(&std::fs::read_to_string(p)?)?;
                    c.truncate(ck.epoch);
                    c
                }
                None => Vec::new(),
            };
            (m, a, curve, ck.epoch)
        }
        None => {
            let m = Model::<T>::init(&cfg.model, cfg.seed)?;
            let a = AdamState::new(m.params());
            (m, a, Vec::new(), 0)
        }
    };
    for epoch in start..cfg.epochs {
        let lr = lr_schedule(epoch, cfg.lr, &cfg.milestones);
        let batches = make_batches(clips, cfg.seg_len, cfg.batch, epoch_seed(cfg.seed, epoch))?;
        if batches.is_empty() {
            return Err(Error::invalid(format!("no {}-frame segments in the training clips", cfg.seg_len)));
        }
        let mut total = 0.0;
        for (step, b) in batches.iter().enumerate() {
            let l = train_step(&mut model, &mut adam, &b.frames, cfg.trim, lr)?;
            if !l.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            total += l;
        }
        let e = EpochLoss {
            epoch,
            lr,
            loss: total / batches.len() as f64,
            steps: batches.len(),
        };
        on_epoch(&e);
        curve.push(e);
        if let Some(dir) = out {
            let ck = Checkpoint::from_model(cfg.to_kv(), epoch + 1, &model, Some(&adam));
            ck.save(&dir.join(LAST_CHECKPOINT))?;
            std::fs::write(dir.join(LOSS_CSV), loss_csv(&curve))?;
        }
    }
    if let Some(dir) = out {
        Checkpoint::from_model(cfg.to_kv(), cfg.epochs, &model, Some(&adam)).save(&dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(TrainResult { model, adam, curve })
}

/// One record per predicted frame of every clip, in clip then frame order.
/// Frames are compared inside the window left after removing
/// `max(trim, margin)` pixels per side, where `margin` is the border the
/// predictor does not produce.
pub fn evaluate<T: Real>(predictor: &Predictor<T>, clips: &[VideoClip], trim: usize) -> Result<Vec<MetricRecord>> {
    let per_clip: Vec<Vec<MetricRecord>> = clips
        .par_iter()
        .map(|clip| {
            let frames = clip.frames.cast::<T>();
            let preds = predictor.predict_clip(&frames)?;
            preds
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let t = i + 2;
                    let (h, w) = p.frame.hw();
                    let m = trim.max(p.margin);
                    if 2 * m >= h.min(w) {
                        return Err(Error::Config(format!("trim {m} leaves nothing of {h}x{w} frames")));
                    }
                    let crop = |x: &Tensor<T>| center_crop_at(x, m, m, h - 2 * m, w - 2 * m);
                    MetricRecord::score(&clip.source, t, &crop(&p.frame)?, &crop(&frames.index_axis0(t))?)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_clip.into_iter().flatten().collect())
}

/// Mean training-set loss of `model` with batch statistics, one pass over
/// fixed-order batches, without updating anything.
pub fn dataset_loss<T: Real>(model: &Model<T>, clips: &[VideoClip], cfg: &TrainConfig) -> Result<f64> {
    let batches = make_batches(clips, cfg.seg_len, cfg.batch, cfg.seed)?;
    let mut total = 0.0;
    for b in &batches {
        let (bs, s, h, w) = b.frames.dims4("dataset_loss")?;
        let x = b.frames.cast::<T>().reshape(&[bs * s, 1, h, w])?;
        let triples = b.triples();
        let pairs: Vec<_> = triples.iter().map(|t| (t.0, t.1)).collect();
        let targets = Tensor::stack(&triples.iter().map(|t| x.index_axis0(t.2)).collect::<Vec<_>>())?;
        let mut g = Graph::new();
        let vars = model.bind(&mut g, false);
        let f = model.forward(&mut g, &vars, &x, &pairs, BnMode::Train)?;
        let l = g.trimmed_mse(f.pred, &targets, f.margin, cfg.trim)?;
        total += g.value(l).item()?.as_f64();
    }
    Ok(total / batches.len().max(1) as f64)
}
