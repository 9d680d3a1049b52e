//! Clips: synthetic generators, PPV1 storage, preprocessing and batching.
//!
//! All velocities are `(dy, dx)` content displacements in pixels per frame:
//! a point at `n` in frame `t` sits at `n + v` in frame `t+1`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::binio::{put_f32s, put_u32, OffsetReader};
use crate::config::parse_value;
use crate::error::{Error, Result};
use crate::tensor::{center_crop, center_crop_at, downsample2_avg, Tensor};

pub const PPV1_MAGIC: &[u8; 4] = b"PPV1";
pub const PPV1_VERSION: u32 = 1;
const PPV1_MAX_VALUES: u64 = 1 << 31;

/// `T` frames of one luminance channel in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    /// `[T,H,W]`
    pub frames: Tensor<f32>,
    pub source: String,
    /// Informational only.
    pub fps: Option<f32>,
}

impl VideoClip {
    pub fn new(frames: Tensor<f32>, source: impl Into<String>) -> Result<Self> {
        if frames.rank() != 3 || frames.shape()[0] < 3 {
            return Err(Error::shape(
                "clip",
                format!("expected [T>=3,H,W], got {:?}", frames.shape()),
            ));
        }
        Ok(Self {
            frames,
            source: source.into(),
            fps: None,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hw(&self) -> (usize, usize) {
        self.frames.hw()
    }

    pub fn frame(&self, t: usize) -> Tensor<f32> {
        self.frames.index_axis0(t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    TranslateCyclic,
    Rotate,
    Mixed,
    TranslateOpen,
    /// Moving dead-leaves scenes standing in for natural video.
    Natural,
}

impl std::fmt::Display for SynthKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SynthKind::TranslateCyclic => "translate_cyclic",
            SynthKind::Rotate => "rotate",
            SynthKind::Mixed => "mixed",
            SynthKind::TranslateOpen => "translate_open",
            SynthKind::Natural => "natural",
        })
    }
}

impl std::str::FromStr for SynthKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "translate_cyclic" => SynthKind::TranslateCyclic,
            "rotate" => SynthKind::Rotate,
            "mixed" => SynthKind::Mixed,
            "translate_open" => SynthKind::TranslateOpen,
            "natural" => SynthKind::Natural,
            _ => return Err("expected translate_cyclic, rotate, mixed, translate_open or natural".into()),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub kind: SynthKind,
    pub clips: usize,
    /// Side of the square frames. 16 for the patch generators.
    pub size: usize,
    pub seq_len: usize,
    pub seed: u64,
    /// Integer translation speeds are uniform in `[-max_velocity, max_velocity]²` minus zero.
    pub max_velocity: i32,
    /// Rotation steps are uniform in `±[min_angle, max_angle]` degrees per frame.
    pub min_angle: f64,
    pub max_angle: f64,
    /// Side of the dead-leaves source images patches are cut from.
    pub source_size: usize,
    /// Natural scenes: background pan speed bound (px/frame).
    pub pan_speed: f64,
    /// Natural scenes: foreground object speed bound (px/frame).
    pub object_speed: f64,
    pub objects: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            kind: SynthKind::TranslateCyclic,
            clips: 100,
            size: 16,
            seq_len: 11,
            seed: 0,
            max_velocity: 3,
            min_angle: 4.0,
            max_angle: 16.0,
            source_size: 64,
            pan_speed: 1.5,
            object_speed: 2.0,
            objects: 6,
        }
    }
}

impl SyntheticSpec {
    /// Applies one `synth.*` key. Returns `Ok(false)` for keys it does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let Some(k) = key.strip_prefix("synth.") else {
            return Ok(false);
        };
        match k {
            "kind" => self.kind = parse_value(key, value)?,
            "clips" => self.clips = parse_value(key, value)?,
            "size" => self.size = parse_value(key, value)?,
            "seq_len" => self.seq_len = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "max_velocity" => self.max_velocity = parse_value(key, value)?,
            "min_angle" => self.min_angle = parse_value(key, value)?,
            "max_angle" => self.max_angle = parse_value(key, value)?,
            "source_size" => self.source_size = parse_value(key, value)?,
            "pan_speed" => self.pan_speed = parse_value(key, value)?,
            "object_speed" => self.object_speed = parse_value(key, value)?,
            "objects" => self.objects = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        [
            ("kind", self.kind.to_string()),
            ("clips", self.clips.to_string()),
            ("size", self.size.to_string()),
            ("seq_len", self.seq_len.to_string()),
            ("seed", self.seed.to_string()),
            ("max_velocity", self.max_velocity.to_string()),
            ("min_angle", self.min_angle.to_string()),
            ("max_angle", self.max_angle.to_string()),
            ("source_size", self.source_size.to_string()),
            ("pan_speed", self.pan_speed.to_string()),
            ("object_speed", self.object_speed.to_string()),
            ("objects", self.objects.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (format!("synth.{k}"), v))
        .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seq_len < 3 {
            return bad(format!("synth.seq_len = {} must be >= 3", self.seq_len));
        }
        if self.size < 2 {
            return bad(format!("synth.size = {} must be >= 2", self.size));
        }
        if self.max_velocity < 1 {
            return bad("synth.max_velocity must be >= 1".into());
        }
        if !(0.0..=self.max_angle).contains(&self.min_angle) {
            return bad("synth.min_angle must lie in [0, max_angle]".into());
        }
        if self.kind == SynthKind::TranslateOpen {
            let travel = self.max_velocity as usize * (self.seq_len - 1);
            if self.source_size < self.size + travel {
                return bad(format!(
                    "synth.source_size = {} cannot hold a {} window moving {travel} px",
                    self.source_size, self.size
                ));
            }
        }
        if self.kind != SynthKind::Natural && self.source_size < self.size {
            return bad("synth.source_size must be >= synth.size".into());
        }
        Ok(())
    }
}

/// RNG for clip `index` of a run seeded with `seed`; independent of other clips.
fn clip_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index as u64);
    r
}

/// A dead-leaves image in `[-1, 1]`: occluding disks with power-law radii
/// and uniform gray levels, followed by a 3×3 binomial blur. Its spectrum
/// falls off roughly as `1/f` like natural images.
pub fn dead_leaves(rng: &mut impl Rng, h: usize, w: usize) -> Tensor<f32> {
    let (rmin, rmax) = (1.0f64, (h.max(w) as f64 / 3.0).max(1.5));
    let (a, b) = (rmin.powi(-2), rmax.powi(-2));
    let mut img = vec![f32::NAN; h * w];
    let mut left = h * w;
    // disks are laid front to back; a pixel keeps the first disk that covers it
    for _ in 0..20_000 {
        if left == 0 {
            break;
        }
        let r = (a - rng.random::<f64>() * (a - b)).powf(-0.5);
        let cy = rng.random::<f64>() * (h as f64 + 2.0 * r) - r;
        let cx = rng.random::<f64>() * (w as f64 + 2.0 * r) - r;
        let g = rng.random_range(-0.8..0.8f32);
        let (y0, y1) = ((cy - r).floor().max(0.0) as usize, ((cy + r).ceil().max(0.0) as usize).min(h));
        let (x0, x1) = ((cx - r).floor().max(0.0) as usize, ((cx + r).ceil().max(0.0) as usize).min(w));
        for y in y0..y1 {
            for x in x0..x1 {
                let p = &mut img[y * w + x];
                if p.is_nan() && (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r * r {
                    *p = g;
                    left -= 1;
                }
            }
        }
    }
    for p in img.iter_mut().filter(|p| p.is_nan()) {
        *p = 0.0;
    }
    binomial_blur(&Tensor::new(&[h, w], img).expect("extent"))
}

/// 3×3 binomial blur with edge clamping; preserves the value range.
fn binomial_blur(x: &Tensor<f32>) -> Tensor<f32> {
    let (h, w) = x.hw();
    let k = [0.25f32, 0.5, 0.25];
    let at = |y: isize, xx: isize| {
        x.data()[y.clamp(0, h as isize - 1) as usize * w + xx.clamp(0, w as isize - 1) as usize]
    };
    Tensor::from_fn(&[h, w], |i| {
        let (y, xx) = ((i / w) as isize, (i % w) as isize);
        let mut s = 0.0;
        for (dy, ky) in k.iter().enumerate() {
            for (dx, kx) in k.iter().enumerate() {
                s += ky * kx * at(y + dy as isize - 1, xx + dx as isize - 1);
            }
        }
        s
    })
}

fn random_velocity(rng: &mut impl Rng, max: i32) -> (i32, i32) {
    loop {
        let v = (rng.random_range(-max..=max), rng.random_range(-max..=max));
        if v != (0, 0) {
            return v;
        }
    }
}

/// `[T,H,W]` from a per-frame pixel function.
fn render(t: usize, h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f32) -> Tensor<f32> {
    Tensor::from_fn(&[t, h, w], |i| f(i / (h * w), (i / w) % h, i % w))
}

fn random_patch(rng: &mut impl Rng, spec: &SyntheticSpec) -> Tensor<f32> {
    let src = dead_leaves(rng, spec.source_size, spec.source_size);
    let n = spec.size;
    let top = rng.random_range(0..=spec.source_size - n);
    let left = rng.random_range(0..=spec.source_size - n);
    center_crop_at(&src, top, left, n, n).expect("patch fits source")
}

/// Cyclically shifts `patch` by `t·v` for `t = 0..T`.
pub fn translate_cyclic(patch: &Tensor<f32>, v: (i32, i32), t: usize) -> Tensor<f32> {
    let (h, w) = patch.hw();
    let (hi, wi) = (h as i64, w as i64);
    render(t, h, w, |f, y, x| {
        let sy = (y as i64 - f as i64 * v.0 as i64).rem_euclid(hi) as usize;
        let sx = (x as i64 - f as i64 * v.1 as i64).rem_euclid(wi) as usize;
        patch.data()[sy * w + sx]
    })
}

/// Rotates `patch` about its center by `t·step_deg` for `t = 0..T` with
/// bilinear resampling. Pixels outside the inscribed disk are zero.
pub fn rotate_frames(patch: &Tensor<f32>, step_deg: f64, t: usize) -> Tensor<f32> {
    let (h, w) = patch.hw();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let radius = h.min(w) as f64 / 2.0;
    let at = |y: i64, x: i64| -> f64 {
        if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
            0.0
        } else {
            patch.data()[y as usize * w + x as usize] as f64
        }
    };
    render(t, h, w, |f, y, x| {
        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
        if dy * dy + dx * dx > radius * radius {
            return 0.0;
        }
        // inverse rotation finds the source location
        let th = (step_deg * f as f64).to_radians();
        let (s, c) = th.sin_cos();
        let sy = cy + c * dy - s * dx;
        let sx = cx + s * dy + c * dx;
        let (y0, x0) = (sy.floor(), sx.floor());
        let (fy, fx) = (sy - y0, sx - x0);
        let (y0, x0) = (y0 as i64, x0 as i64);
        let v = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
            + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
        v as f32
    })
}

fn cyclic_clip(spec: &SyntheticSpec, i: usize) -> VideoClip {
    let mut rng = clip_rng(spec.seed, i);
    let patch = random_patch(&mut rng, spec);
    let v = random_velocity(&mut rng, spec.max_velocity);
    let frames = translate_cyclic(&patch, v, spec.seq_len);
    clip_of(frames, format!("translate_cyclic-{i:04}-v{}_{}", v.0, v.1))
}

fn rotate_clip(spec: &SyntheticSpec, i: usize) -> VideoClip {
    let mut rng = clip_rng(spec.seed, i);
    let patch = random_patch(&mut rng, spec);
    let mag = rng.random_range(spec.min_angle..=spec.max_angle);
    let step = if rng.random::<bool>() { mag } else { -mag };
    clip_of(rotate_frames(&patch, step, spec.seq_len), format!("rotate-{i:04}-a{step:.2}"))
}

fn open_clip(spec: &SyntheticSpec, i: usize) -> VideoClip {
    let mut rng = clip_rng(spec.seed, i);
    let s = spec.source_size;
    let src = dead_leaves(&mut rng, s, s);
    let v = random_velocity(&mut rng, spec.max_velocity);
    let (n, t) = (spec.size, spec.seq_len);
    let travel = |d: i32| d.unsigned_abs() as usize * (t - 1);
    // window origin moves by -v so content moves by +v
    let mut start = |d: i32| {
        let span = s - n - travel(d);
        let o = rng.random_range(0..=span);
        if d > 0 {
            o + travel(d)
        } else {
            o
        }
    };
    let (oy, ox) = (start(v.0), start(v.1));
    let frames = render(t, n, n, |f, y, x| {
        let sy = (oy as i64 - f as i64 * v.0 as i64) as usize + y;
        let sx = (ox as i64 - f as i64 * v.1 as i64) as usize + x;
        src.data()[sy * s + sx]
    });
    clip_of(frames, format!("translate_open-{i:04}-v{}_{}", v.0, v.1))
}

/// Salt separating the per-clip kind draw of `gen_mixed` from the clip streams.
const MIX_SALT: u64 = 0x6d69_7865_6400_0001;

fn mixed_clip(spec: &SyntheticSpec, i: usize) -> VideoClip {
    let mut coin = clip_rng(spec.seed ^ MIX_SALT, i);
    let mut c = if coin.random::<bool>() {
        cyclic_clip(spec, i)
    } else {
        rotate_clip(spec, i)
    };
    c.source = format!("mixed-{}", c.source);
    c
}

fn natural_clip(spec: &SyntheticSpec, i: usize) -> VideoClip {
    let mut rng = clip_rng(spec.seed, i);
    let (n, t) = (spec.size, spec.seq_len);
    let pan = (
        rng.random_range(-spec.pan_speed..=spec.pan_speed),
        rng.random_range(-spec.pan_speed..=spec.pan_speed),
    );
    let reach = |s: f64| (s.abs() * t as f64).ceil() as usize + 2;
    let bs = n + 2 * reach(pan.0).max(reach(pan.1));
    let bg = dead_leaves(&mut rng, bs, bs);
    let objs: Vec<_> = (0..spec.objects)
        .map(|_| {
            let r = rng.random_range(n as f64 / 16.0..n as f64 / 5.0).max(1.5);
            let p = (rng.random_range(0.0..n as f64), rng.random_range(0.0..n as f64));
            let v = (
                rng.random_range(-spec.object_speed..=spec.object_speed),
                rng.random_range(-spec.object_speed..=spec.object_speed),
            );
            let g = rng.random_range(-0.85..0.85f64);
            (r, p, v, g)
        })
        .collect();
    let c = (bs as f64 - n as f64) / 2.0;
    let bgv = |y: f64, x: f64| -> f64 {
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        let px = |yy: f64, xx: f64| {
            let yy = (yy as isize).clamp(0, bs as isize - 1) as usize;
            let xx = (xx as isize).clamp(0, bs as isize - 1) as usize;
            bg.data()[yy * bs + xx] as f64
        };
        (1.0 - fy) * ((1.0 - fx) * px(y0, x0) + fx * px(y0, x0 + 1.0))
            + fy * ((1.0 - fx) * px(y0 + 1.0, x0) + fx * px(y0 + 1.0, x0 + 1.0))
    };
    let frames = render(t, n, n, |f, y, x| {
        let tf = f as f64;
        let mut v = bgv(c + y as f64 - pan.0 * tf, c + x as f64 - pan.1 * tf);
        for &(r, p, vel, g) in &objs {
            // objects wrap around the frame so they stay in view
            let oy = (p.0 + vel.0 * tf).rem_euclid(n as f64);
            let ox = (p.1 + vel.1 * tf).rem_euclid(n as f64);
            let d = ((y as f64 - oy).powi(2) + (x as f64 - ox).powi(2)).sqrt();
            // anti-aliased edge one pixel wide
            let cover = (r + 0.5 - d).clamp(0.0, 1.0);
            v = cover * g + (1.0 - cover) * v;
        }
        v.clamp(-1.0, 1.0) as f32
    });
    clip_of(frames, format!("natural-{i:04}"))
}

fn clip_of(frames: Tensor<f32>, source: String) -> VideoClip {
    VideoClip {
        frames,
        source,
        fps: None,
    }
}

/// Clips of `spec.kind`; a pure function of `spec`. Clip `i` depends only on
/// `(spec, i)`, so generation is parallel and order-independent.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<VideoClip>> {
    spec.validate()?;
    let f: fn(&SyntheticSpec, usize) -> VideoClip = match spec.kind {
        SynthKind::TranslateCyclic => cyclic_clip,
        SynthKind::Rotate => rotate_clip,
        SynthKind::Mixed => mixed_clip,
        SynthKind::TranslateOpen => open_clip,
        SynthKind::Natural => natural_clip,
    };
    Ok((0..spec.clips).into_par_iter().map(|i| f(spec, i)).collect())
}

fn with_kind(spec: &SyntheticSpec, kind: SynthKind) -> Result<Vec<VideoClip>> {
    generate(&SyntheticSpec {
        kind,
        ..spec.clone()
    })
}

pub fn gen_translate_cyclic(spec: &SyntheticSpec) -> Result<Vec<VideoClip>> {
    with_kind(spec, SynthKind::TranslateCyclic)
}

pub fn gen_rotate(spec: &SyntheticSpec) -> Result<Vec<VideoClip>> {
    with_kind(spec, SynthKind::Rotate)
}

/// Each clip is a coin flip between the cyclic-translation and rotation clip
/// with the same index and seed; the kind is recorded in `source`.
pub fn gen_mixed(spec: &SyntheticSpec) -> Result<Vec<VideoClip>> {
    with_kind(spec, SynthKind::Mixed)
}

pub fn gen_translate_open(spec: &SyntheticSpec) -> Result<Vec<VideoClip>> {
    with_kind(spec, SynthKind::TranslateOpen)
}

pub fn gen_natural(spec: &SyntheticSpec) -> Result<Vec<VideoClip>> {
    with_kind(spec, SynthKind::Natural)
}

pub fn write_ppv1(w: &mut impl Write, frames: &Tensor<f32>) -> Result<()> {
    if frames.rank() != 3 {
        return Err(Error::shape("write_ppv1", format!("expected [T,H,W], got {:?}", frames.shape())));
    }
    w.write_all(PPV1_MAGIC)?;
    put_u32(w, PPV1_VERSION)?;
    for &e in frames.shape() {
        put_u32(w, e as u32)?;
    }
    put_f32s(w, frames.data().iter().copied())
}

/// Reads and validates a PPV1 stream into `[T,H,W]`. Every rejection names
/// the byte offset of the offending field or value.
pub fn read_ppv1(r: &mut impl Read) -> Result<Tensor<f32>> {
    let mut rd = OffsetReader::new(r, "PPV1");
    rd.magic(PPV1_MAGIC)?;
    let at = rd.offset();
    let version = rd.u32()?;
    if version != PPV1_VERSION {
        return Err(rd.error(at, format!("unsupported version {version}")));
    }
    let at = rd.offset();
    let t = rd.u32()?;
    if t < 3 {
        return Err(rd.error(at, format!("T = {t}; a clip needs at least 3 frames")));
    }
    let (hat, h) = (rd.offset(), rd.u32()?);
    let (wat, w) = (rd.offset(), rd.u32()?);
    if h == 0 {
        return Err(rd.error(hat, "H = 0"));
    }
    if w == 0 {
        return Err(rd.error(wat, "W = 0"));
    }
    let n = t as u64 * h as u64 * w as u64;
    if n > PPV1_MAX_VALUES {
        return Err(rd.error(at, format!("{t}x{h}x{w} frames are too large")));
    }
    let data = rd.f32s(n as usize, |v, off| {
        if (-1.0..=1.0).contains(&v) {
            Ok(())
        } else {
            Err(Error::Format {
                format: "PPV1",
                offset: off,
                reason: format!("value {v} outside [-1, 1]"),
            })
        }
    })?;
    rd.expect_eof()?;
    Tensor::new(&[t as usize, h as usize, w as usize], data)
}

pub fn load_raw_clip(path: &Path) -> Result<VideoClip> {
    let frames = read_ppv1(&mut BufReader::new(File::open(path)?))?;
    let source = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    VideoClip::new(frames, source)
}

pub fn save_clip(path: &Path, clip: &VideoClip) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ppv1(&mut w, &clip.frames)?;
    w.flush()?;
    Ok(())
}

/// Loads every `*.ppv1` file of `dir` in file-name order.
pub fn load_dir(dir: &Path) -> Result<Vec<VideoClip>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ppv1"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!("no .ppv1 clips in {}", dir.display())));
    }
    paths.par_iter().map(|p| load_raw_clip(p)).collect()
}

/// Central `crop×crop` window (0 keeps the frame) then `down`-fold box
/// downsampling; `down` must be a power of two.
pub fn preprocess(clip: &VideoClip, crop: usize, down: usize) -> Result<VideoClip> {
    if down == 0 || !down.is_power_of_two() {
        return Err(Error::invalid(format!("downsample factor {down} is not a power of two")));
    }
    let mut f = if crop == 0 {
        clip.frames.clone()
    } else {
        center_crop(&clip.frames, crop)?
    };
    for _ in 0..down.trailing_zeros() {
        f = downsample2_avg(&f)?;
    }
    Ok(VideoClip {
        frames: f,
        source: clip.source.clone(),
        fps: clip.fps,
    })
}

/// A training batch of equal-length segments.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[B,S,H,W]`
    pub frames: Tensor<f32>,
    /// `(clip index, first frame)` of each segment.
    pub origin: Vec<(usize, usize)>,
}

impl Batch {
    /// `(t-1, t, t+1)` indices into the flattened `[B·S]` frame axis.
    pub fn triples(&self) -> Vec<(usize, usize, usize)> {
        let (b, s) = (self.frames.shape()[0], self.frames.shape()[1]);
        (0..b)
            .flat_map(|i| (0..s - 2).map(move |t| (i * s + t, i * s + t + 1, i * s + t + 2)))
            .collect()
    }
}

/// Cuts every clip into non-overlapping `seg_len` segments (a remainder is
/// dropped), shuffles them with `seed`, and groups them `batch` at a time.
/// The last batch may be smaller.
pub fn make_batches(clips: &[VideoClip], seg_len: usize, batch: usize, seed: u64) -> Result<Vec<Batch>> {
    if seg_len < 3 || batch == 0 {
        return Err(Error::invalid(format!("seg_len {seg_len} must be >= 3 and batch {batch} >= 1")));
    }
    let hw = clips.first().map(VideoClip::hw);
    if let Some(c) = clips.iter().find(|c| Some(c.hw()) != hw) {
        return Err(Error::shape(
            "make_batches",
            format!("clip {} is {:?}, expected {:?}", c.source, c.hw(), hw.unwrap()),
        ));
    }
    let mut segs: Vec<(usize, usize)> = clips
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| (0..c.len() / seg_len).map(move |k| (ci, k * seg_len)))
        .collect();
    segs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let Some((h, w)) = hw else {
        return Ok(Vec::new());
    };
    let plane = h * w;
    segs.chunks(batch)
        .map(|chunk| {
            let mut data = Vec::with_capacity(chunk.len() * seg_len * plane);
            for &(ci, t0) in chunk {
                data.extend_from_slice(&clips[ci].frames.data()[t0 * plane..][..seg_len * plane]);
            }
            Ok(Batch {
                frames: Tensor::new(&[chunk.len(), seg_len, h, w], data)?,
                origin: chunk.to_vec(),
            })
        })
        .collect()
}
