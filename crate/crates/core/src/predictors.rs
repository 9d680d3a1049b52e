//! Next-frame predictors behind one interface: `predict(x_{t-1}, x_t) -> x̂_{t+1}`.
//!
//! Learned variants (PP, deepPP, deepL, CNN) are a [`Model`]: named parameter
//! tensors plus running normalization statistics. The forward pass is built
//! on an autodiff [`Graph`] so training and inference share one code path.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{BatchMoments, BnStats, Graph, Var};
use crate::config::parse_value;
use crate::error::{Error, Result};
use crate::motion;
use crate::polar::{self, DEFAULT_EPS_AMP};
use crate::tensor::{conv2d_transpose, conv2d_valid, Real, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Copy,
    Cmc,
    Pp,
    DeepPp,
    DeepL,
    Cnn,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Copy,
        Variant::Cmc,
        Variant::Pp,
        Variant::DeepPp,
        Variant::DeepL,
        Variant::Cnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Copy => "copy",
            Variant::Cmc => "cmc",
            Variant::Pp => "pp",
            Variant::DeepPp => "deeppp",
            Variant::DeepL => "deepl",
            Variant::Cnn => "cnn",
        }
    }

    pub fn is_learned(self) -> bool {
        !matches!(self, Variant::Copy | Variant::Cmc)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| "unknown variant (expected one of copy, cmc, pp, deeppp, deepl, cnn)".to_string())
    }
}

/// Encoder/decoder depth and kernel size of deepPP and deepL.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeepLayout {
    /// 4 layers of 5×5 per half; 17×17 receptive field like PP.
    Text4x5,
    /// 10 layers of 3×3 per half.
    Table10x3,
    Custom { layers: usize, kernel: usize },
}

impl DeepLayout {
    pub fn layers_kernel(self) -> (usize, usize) {
        match self {
            DeepLayout::Text4x5 => (4, 5),
            DeepLayout::Table10x3 => (10, 3),
            DeepLayout::Custom { layers, kernel } => (layers, kernel),
        }
    }
}

impl fmt::Display for DeepLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeepLayout::Text4x5 => f.write_str("text-4x5"),
            DeepLayout::Table10x3 => f.write_str("table-10x3"),
            DeepLayout::Custom { layers, kernel } => write!(f, "{layers}x{kernel}"),
        }
    }
}

impl FromStr for DeepLayout {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "text-4x5" => Ok(DeepLayout::Text4x5),
            "table-10x3" => Ok(DeepLayout::Table10x3),
            _ => {
                let bad = || "expected text-4x5, table-10x3 or LxK".to_string();
                let (l, k) = s.split_once('x').ok_or_else(bad)?;
                Ok(DeepLayout::Custom {
                    layers: l.parse().map_err(|_| bad())?,
                    kernel: k.parse().map_err(|_| bad())?,
                })
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err("expected f32 or f64".into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorConfig {
    pub variant: Variant,
    /// Latent / hidden channel count. Must be even for PP and deepPP.
    pub channels: usize,
    pub pp_kernel: usize,
    pub deep_layout: DeepLayout,
    pub cnn_stages: usize,
    pub cnn_kernel: usize,
    pub eps_amp: f64,
    /// Subtract the batch mean in normalization layers.
    pub bn_centered: bool,
    pub precision: Precision,
    pub cmc_block: usize,
    pub cmc_radius: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Pp,
            channels: 64,
            pp_kernel: 17,
            deep_layout: DeepLayout::Text4x5,
            cnn_stages: 20,
            cnn_kernel: 3,
            eps_amp: DEFAULT_EPS_AMP,
            bn_centered: false,
            precision: Precision::F32,
            cmc_block: motion::DEFAULT_BLOCK,
            cmc_radius: motion::DEFAULT_RADIUS,
        }
    }
}

impl PredictorConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    /// Applies one `model.*` key. Returns `Ok(false)` for keys it does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let Some(k) = key.strip_prefix("model.") else {
            return Ok(false);
        };
        match k {
            "variant" => self.variant = parse_value(key, value)?,
            "channels" => self.channels = parse_value(key, value)?,
            "pp_kernel" => self.pp_kernel = parse_value(key, value)?,
            "deep_layout" => self.deep_layout = parse_value(key, value)?,
            "cnn_stages" => self.cnn_stages = parse_value(key, value)?,
            "cnn_kernel" => self.cnn_kernel = parse_value(key, value)?,
            "eps_amp" => self.eps_amp = parse_value(key, value)?,
            "bn_centered" => self.bn_centered = parse_value(key, value)?,
            "precision" => self.precision = parse_value(key, value)?,
            "cmc_block" => self.cmc_block = parse_value(key, value)?,
            "cmc_radius" => self.cmc_radius = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        [
            ("variant", self.variant.to_string()),
            ("channels", self.channels.to_string()),
            ("pp_kernel", self.pp_kernel.to_string()),
            ("deep_layout", self.deep_layout.to_string()),
            ("cnn_stages", self.cnn_stages.to_string()),
            ("cnn_kernel", self.cnn_kernel.to_string()),
            ("eps_amp", format!("{:e}", self.eps_amp)),
            ("bn_centered", self.bn_centered.to_string()),
            ("precision", self.precision.to_string()),
            ("cmc_block", self.cmc_block.to_string()),
            ("cmc_radius", self.cmc_radius.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (format!("model.{k}"), v))
        .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.eps_amp >= 0.0 && self.eps_amp.is_finite()) {
            return bad(format!("model.eps_amp must be finite and >= 0, got {}", self.eps_amp));
        }
        match self.variant {
            Variant::Copy => {}
            Variant::Cmc => {
                if self.cmc_block == 0 {
                    return bad("model.cmc_block must be >= 1".into());
                }
            }
            Variant::Pp | Variant::DeepPp | Variant::DeepL => {
                let polar = self.variant != Variant::DeepL;
                if self.channels == 0 || (polar && self.channels % 2 != 0) {
                    return bad(format!(
                        "model.channels = {} must be positive{}",
                        self.channels,
                        if polar { " and even (channels pair up)" } else { "" }
                    ));
                }
                if self.variant == Variant::Pp && self.pp_kernel == 0 {
                    return bad("model.pp_kernel must be >= 1".into());
                }
                if self.variant != Variant::Pp {
                    let (l, k) = self.deep_layout.layers_kernel();
                    if l < 1 || k < 1 {
                        return bad(format!("model.deep_layout {} is empty", self.deep_layout));
                    }
                }
            }
            Variant::Cnn => {
                if self.cnn_stages < 2 || self.channels == 0 {
                    return bad("model.cnn_stages must be >= 2 and model.channels >= 1".into());
                }
                if self.cnn_kernel % 2 == 0 {
                    return bad(format!("model.cnn_kernel = {} must be odd", self.cnn_kernel));
                }
            }
        }
        Ok(())
    }

    /// Border pixels lost by the prediction relative to its input frames.
    pub fn pred_margin(&self) -> usize {
        match self.variant {
            Variant::Cnn => self.cnn_stages * (self.cnn_kernel - 1) / 2,
            _ => 0,
        }
    }
}

/// Shape and initialization of one trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// `None` marks a normalization scale (initialized to one).
    pub init_var: Option<f64>,
}

#[derive(Clone, Debug)]
struct Layer {
    w: usize,
    transpose: bool,
    /// (gamma parameter index, running-statistics index)
    bn: Option<(usize, usize)>,
}

#[derive(Clone, Debug)]
enum Arch {
    Fixed,
    Pp { w: usize },
    Latent { enc: Vec<Layer>, dec: Vec<Layer>, polar: bool },
    Direct { stages: Vec<Layer> },
}

struct Plan {
    params: Vec<ParamSpec>,
    arch: Arch,
    bn_channels: Vec<usize>,
}

fn plan(cfg: &PredictorConfig) -> Result<Plan> {
    cfg.validate()?;
    let mut params = Vec::new();
    let mut bn_channels = Vec::new();
    let conv = |params: &mut Vec<ParamSpec>,
                    bn_channels: &mut Vec<usize>,
                    name: String,
                    shape: [usize; 4],
                    transpose: bool,
                    bn_relu: bool| {
        // fan-in of the forward map: Cin·k² for conv, Cout·k² for its transpose
        let fan_in = if transpose { shape[0] } else { shape[1] } * shape[2] * shape[3];
        let gain = if bn_relu { 2.0 } else { 1.0 };
        params.push(ParamSpec {
            name: format!("{name}.weight"),
            shape: shape.to_vec(),
            init_var: Some(gain / fan_in as f64),
        });
        let w = params.len() - 1;
        let bn = bn_relu.then(|| {
            let c = if transpose { shape[1] } else { shape[0] };
            params.push(ParamSpec {
                name: format!("{name}.gamma"),
                shape: vec![c],
                init_var: None,
            });
            bn_channels.push(c);
            (params.len() - 1, bn_channels.len() - 1)
        });
        Layer { w, transpose, bn }
    };
    let c = cfg.channels;
    let arch = match cfg.variant {
        Variant::Copy | Variant::Cmc => Arch::Fixed,
        Variant::Pp => {
            let k = cfg.pp_kernel;
            let l = conv(&mut params, &mut bn_channels, "pp".into(), [c, 1, k, k], false, false);
            // synthesis with the analysis weights adds channel responses
            // coherently: E[convT(conv(x))] = C·k²·var·x, so var = 1/(C·k²)
            params[l.w].init_var = Some(1.0 / (c * k * k) as f64);
            Arch::Pp { w: l.w }
        }
        Variant::DeepPp | Variant::DeepL => {
            let (n, k) = cfg.deep_layout.layers_kernel();
            let enc = (0..n)
                .map(|i| {
                    let cin = if i == 0 { 1 } else { c };
                    conv(&mut params, &mut bn_channels, format!("enc.{i}"), [c, cin, k, k], false, i + 1 < n)
                })
                .collect();
            let dec = (0..n)
                .map(|i| {
                    let cout = if i + 1 == n { 1 } else { c };
                    conv(&mut params, &mut bn_channels, format!("dec.{i}"), [c, cout, k, k], true, i + 1 < n)
                })
                .collect();
            Arch::Latent {
                enc,
                dec,
                polar: cfg.variant == Variant::DeepPp,
            }
        }
        Variant::Cnn => {
            let (s, k) = (cfg.cnn_stages, cfg.cnn_kernel);
            let stages = (0..s)
                .map(|i| {
                    let cin = if i == 0 { 2 } else { c };
                    let cout = if i + 1 == s { 1 } else { c };
                    conv(&mut params, &mut bn_channels, format!("cnn.{i}"), [cout, cin, k, k], false, i + 1 < s)
                })
                .collect();
            Arch::Direct { stages }
        }
    };
    Ok(Plan {
        params,
        arch,
        bn_channels,
    })
}

/// Trainable tensors of `cfg` in storage order.
pub fn param_specs(cfg: &PredictorConfig) -> Result<Vec<ParamSpec>> {
    Ok(plan(cfg)?.params)
}

/// Number of trainable scalars, normalization scales included.
pub fn param_count(cfg: &PredictorConfig) -> Result<usize> {
    Ok(param_specs(cfg)?
        .iter()
        .map(|p| p.shape.iter().product::<usize>())
        .sum())
}

/// Running per-channel statistics of one normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnBuffer<T: Real = f32> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> BnBuffer<T> {
    fn fresh(c: usize) -> Self {
        Self {
            mean: vec![T::zero(); c],
            var: vec![T::one(); c],
        }
    }

    fn update(&mut self, m: &BatchMoments<T>) {
        let mo = T::from_f64_lossy(BN_MOMENTUM);
        let keep = T::one() - mo;
        for (r, &b) in self.mean.iter_mut().zip(&m.mean) {
            *r = keep * *r + mo * b;
        }
        for (r, &b) in self.var.iter_mut().zip(&m.var) {
            *r = keep * *r + mo * b;
        }
    }
}

/// Whether normalization layers use batch statistics or stored ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Output of [`Model::forward`].
pub struct Forward<T: Real> {
    /// `[M,1,H-2m,W-2m]` predictions, one per triple.
    pub pred: Var,
    /// `m`: border pixels lost to valid convolutions.
    pub margin: usize,
    /// Batch moments of each normalization layer (train mode only).
    pub moments: Vec<Option<BatchMoments<T>>>,
}

/// A learned predictor.
#[derive(Clone, Debug)]
pub struct Model<T: Real = f32> {
    config: PredictorConfig,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    bn: Vec<BnBuffer<T>>,
    arch: Arch,
}

impl<T: Real> Model<T> {
    /// Seeded initialization: weights drawn from N(0, gain/fan_in) with gain 2
    /// before a rectification and 1 otherwise; PP's shared tensor is scaled so
    /// that synthesis after analysis has unit expected gain. Scales start at one.
    pub fn init(config: &PredictorConfig, seed: u64) -> Result<Self> {
        let p = plan(config)?;
        if matches!(p.arch, Arch::Fixed) {
            return Err(Error::Config(format!("variant {} has no parameters", config.variant)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = p
            .params
            .iter()
            .map(|s| match s.init_var {
                None => Tensor::full(&s.shape, T::one()),
                Some(var) => {
                    let d = Normal::new(0.0, var.sqrt()).expect("finite variance");
                    let n = s.shape.iter().product();
                    let data = (0..n).map(|_| T::from_f64_lossy(d.sample(&mut rng))).collect();
                    Tensor::new(&s.shape, data).expect("spec shape")
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            names: p.params.iter().map(|s| s.name.clone()).collect(),
            params,
            bn: p.bn_channels.iter().map(|&c| BnBuffer::fresh(c)).collect(),
            arch: p.arch,
        })
    }

    /// Rebuilds a model from stored tensors, checking names and shapes.
    pub fn from_parts(
        config: &PredictorConfig,
        params: Vec<(String, Tensor<T>)>,
        bn: Vec<BnBuffer<T>>,
    ) -> Result<Self> {
        let p = plan(config)?;
        if matches!(p.arch, Arch::Fixed) {
            return Err(Error::Config(format!("variant {} has no parameters", config.variant)));
        }
        if params.len() != p.params.len() {
            return Err(Error::Config(format!(
                "{} parameters stored, {} expected by {}",
                params.len(),
                p.params.len(),
                config.variant
            )));
        }
        for ((name, t), s) in params.iter().zip(&p.params) {
            if *name != s.name || t.shape() != s.shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter {name} {:?} does not match expected {} {:?}",
                    t.shape(),
                    s.name,
                    s.shape
                )));
            }
        }
        if bn.len() != p.bn_channels.len()
            || bn
                .iter()
                .zip(&p.bn_channels)
                .any(|(b, &c)| b.mean.len() != c || b.var.len() != c)
        {
            return Err(Error::Config("normalization statistics do not match the model".into()));
        }
        let (names, params) = params.into_iter().unzip();
        Ok(Self {
            config: config.clone(),
            names,
            params,
            bn,
            arch: p.arch,
        })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn bn_buffers(&self) -> &[BnBuffer<T>] {
        &self.bn
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// The tensor that analyzes frames into the latent: PP's shared weight or
    /// the first encoder layer; the first stage for the CNN.
    pub fn first_layer(&self) -> &Tensor<T> {
        &self.params[0]
    }

    /// Adds every parameter to `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| if trainable { g.param(p.clone()) } else { g.constant(p.clone()) })
            .collect()
    }

    fn layer(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        x: Var,
        l: &Layer,
        mode: BnMode,
        moments: &mut [Option<BatchMoments<T>>],
    ) -> Result<Var> {
        let y = if l.transpose {
            g.conv2d_transpose(x, vars[l.w])?
        } else {
            g.conv2d(x, vars[l.w])?
        };
        let Some((gi, bi)) = l.bn else {
            return Ok(y);
        };
        let stats = match mode {
            BnMode::Train => BnStats::Batch,
            BnMode::Eval => BnStats::Fixed {
                mean: self.bn[bi].mean.clone(),
                var: self.bn[bi].var.clone(),
            },
        };
        let eps = T::from_f64_lossy(BN_EPS);
        let (y, m) = g.batchnorm_scale(y, vars[gi], self.config.bn_centered, eps, stats)?;
        moments[bi] = m;
        Ok(g.relu(y))
    }

    /// Predicts frame `t+1` for each `(t-1, t)` index pair into `frames`.
    ///
    /// `frames` is `[N,1,H,W]`. Latent models encode every frame once and
    /// gather the pairs afterwards.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        frames: &Tensor<T>,
        pairs: &[(usize, usize)],
        mode: BnMode,
    ) -> Result<Forward<T>> {
        let (n, c, h, w) = frames.dims4("forward")?;
        if c != 1 {
            return Err(Error::shape("forward", format!("frames must have 1 channel, got {c}")));
        }
        if vars.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "forward: {} vars bound for {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| a >= n || b >= n) {
            return Err(Error::shape("forward", format!("pair ({a},{b}) out of range for {n} frames")));
        }
        let prev: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let cur: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let mut moments = vec![None; self.bn.len()];
        let eps = T::from_f64_lossy(self.config.eps_amp);
        let pred = match &self.arch {
            Arch::Fixed => unreachable!("fixed variants have no model"),
            Arch::Pp { w } => {
                let x = g.constant(frames.clone());
                let y = g.conv2d(x, vars[*w])?;
                let (yp, yc) = (g.select_batch(y, &prev)?, g.select_batch(y, &cur)?);
                let z = g.phase_advance(yc, yp, eps)?;
                g.conv2d_transpose(z, vars[*w])?
            }
            Arch::Latent { enc, dec, polar } => {
                let mut y = g.constant(frames.clone());
                for l in enc {
                    y = self.layer(g, vars, y, l, mode, &mut moments)?;
                }
                let (yp, yc) = (g.select_batch(y, &prev)?, g.select_batch(y, &cur)?);
                let mut z = if *polar {
                    g.phase_advance(yc, yp, eps)?
                } else {
                    g.linear_extrapolate(yc, yp)?
                };
                for l in dec {
                    z = self.layer(g, vars, z, l, mode, &mut moments)?;
                }
                z
            }
            Arch::Direct { stages } => {
                let plane = h * w;
                let mut data = Vec::with_capacity(pairs.len() * 2 * plane);
                for &(a, b) in pairs {
                    data.extend_from_slice(&frames.data()[a * plane..][..plane]);
                    data.extend_from_slice(&frames.data()[b * plane..][..plane]);
                }
                let mut x = g.constant(Tensor::new(&[pairs.len(), 2, h, w], data)?);
                for l in stages {
                    x = self.layer(g, vars, x, l, mode, &mut moments)?;
                }
                x
            }
        };
        Ok(Forward {
            pred,
            margin: self.config.pred_margin(),
            moments,
        })
    }

    /// Folds batch moments from a training step into the running statistics.
    pub fn update_running_stats(&mut self, moments: &[Option<BatchMoments<T>>]) {
        for (buf, m) in self.bn.iter_mut().zip(moments) {
            if let Some(m) = m {
                buf.update(m);
            }
        }
    }

    /// Inference on `[N,H,W]` frames; returns `[M,H-2m,W-2m]` and `m`.
    pub fn predict_pairs(&self, frames: &Tensor<T>, pairs: &[(usize, usize)]) -> Result<(Tensor<T>, usize)> {
        if frames.rank() != 3 {
            return Err(Error::shape("predict", format!("expected [N,H,W], got {:?}", frames.shape())));
        }
        let (n, h, w) = (frames.shape()[0], frames.shape()[1], frames.shape()[2]);
        let x = frames.clone().reshape(&[n, 1, h, w])?;
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let f = self.forward(&mut g, &vars, &x, pairs, BnMode::Eval)?;
        let out = g.value(f.pred);
        let (m, _, ph, pw) = out.dims4("predict")?;
        Ok((out.clone().reshape(&[m, ph, pw])?, f.margin))
    }
}

/// A prediction at full frame extent. Pixels within `margin` of the border
/// are not produced by the model and hold `x_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T: Real = f32> {
    pub frame: Tensor<T>,
    pub margin: usize,
}

/// Any variant behind the common two-frames-in, one-frame-out interface.
#[derive(Clone, Debug)]
pub enum Predictor<T: Real = f32> {
    Copy,
    Cmc { block: usize, radius: usize },
    Learned(Model<T>),
}

/// Frames per inference chunk in [`Predictor::predict_clip`].
const CLIP_CHUNK: usize = 8;

impl<T: Real> Predictor<T> {
    pub fn from_config(cfg: &PredictorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.variant {
            Variant::Copy => Predictor::Copy,
            Variant::Cmc => Predictor::Cmc {
                block: cfg.cmc_block,
                radius: cfg.cmc_radius,
            },
            _ => Predictor::Learned(Model::init(cfg, seed)?),
        })
    }

    pub fn variant(&self) -> Variant {
        match self {
            Predictor::Copy => Variant::Copy,
            Predictor::Cmc { .. } => Variant::Cmc,
            Predictor::Learned(m) => m.config.variant,
        }
    }

    pub fn predict(&self, prev: &Tensor<T>, cur: &Tensor<T>) -> Result<Prediction<T>> {
        prev.expect_same_shape(cur, "predict")?;
        let (h, w) = cur.hw();
        let clip = Tensor::stack(&[prev.clone(), cur.clone()])?;
        let mut out = self.predict_clip_pairs(&clip, &[(0, 1)])?;
        debug_assert_eq!(out[0].frame.hw(), (h, w));
        Ok(out.remove(0))
    }

    /// Predictions of frames `2..T` of a `[T,H,W]` clip.
    pub fn predict_clip(&self, clip: &Tensor<T>) -> Result<Vec<Prediction<T>>> {
        if clip.rank() != 3 || clip.shape()[0] < 3 {
            return Err(Error::shape(
                "predict_clip",
                format!("expected [T>=3,H,W], got {:?}", clip.shape()),
            ));
        }
        let pairs: Vec<_> = (1..clip.shape()[0] - 1).map(|t| (t - 1, t)).collect();
        self.predict_clip_pairs(clip, &pairs)
    }

    fn predict_clip_pairs(&self, clip: &Tensor<T>, pairs: &[(usize, usize)]) -> Result<Vec<Prediction<T>>> {
        if clip.rank() != 3 {
            return Err(Error::shape("predict", format!("expected [T,H,W], got {:?}", clip.shape())));
        }
        match self {
            Predictor::Copy => Ok(pairs
                .iter()
                .map(|&(_, b)| Prediction {
                    frame: clip.index_axis0(b),
                    margin: 0,
                })
                .collect()),
            Predictor::Cmc { block, radius } => pairs
                .iter()
                .map(|&(a, b)| {
                    let frame = motion::cmc_predict(&clip.index_axis0(a), &clip.index_axis0(b), *block, *radius)?;
                    Ok(Prediction { frame, margin: 0 })
                })
                .collect(),
            Predictor::Learned(model) => {
                let (h, w) = (clip.shape()[1], clip.shape()[2]);
                let mut out = Vec::with_capacity(pairs.len());
                for chunk in pairs.chunks(CLIP_CHUNK) {
                    // re-index the chunk onto the frames it touches
                    let lo = chunk.iter().map(|p| p.0.min(p.1)).min().expect("non-empty chunk");
                    let hi = chunk.iter().map(|p| p.0.max(p.1)).max().expect("non-empty chunk");
                    let sub = Tensor::stack(&(lo..=hi).map(|i| clip.index_axis0(i)).collect::<Vec<_>>())?;
                    let local: Vec<_> = chunk.iter().map(|&(a, b)| (a - lo, b - lo)).collect();
                    let (pred, m) = model.predict_pairs(&sub, &local)?;
                    for (j, &(_, b)) in chunk.iter().enumerate() {
                        let inner = pred.index_axis0(j);
                        let mut frame = clip.index_axis0(b);
                        let (ih, iw) = inner.hw();
                        if ih + 2 * m != h || iw + 2 * m != w {
                            return Err(Error::shape(
                                "predict",
                                format!("model output {ih}x{iw} with margin {m} for {h}x{w} frames"),
                            ));
                        }
                        for r in 0..ih {
                            frame.data_mut()[(r + m) * w + m..][..iw]
                                .copy_from_slice(&inner.data()[r * iw..][..iw]);
                        }
                        out.push(Prediction { frame, margin: m });
                    }
                }
                Ok(out)
            }
        }
    }
}

/// The Copy baseline: `x̂ = x_t`.
pub fn copy_predict<T: Real>(_prev: &Tensor<T>, cur: &Tensor<T>) -> Tensor<T> {
    cur.clone()
}

/// PP on `[H,W]` frames with explicit `[2K,1,k,k]` weights shared by
/// analysis and synthesis.
pub fn pp_predict<T: Real>(weights: &Tensor<T>, prev: &Tensor<T>, cur: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    prev.expect_same_shape(cur, "pp_predict")?;
    if cur.rank() != 2 {
        return Err(Error::shape("pp_predict", format!("expected [H,W], got {:?}", cur.shape())));
    }
    let (h, w) = cur.hw();
    let enc = |x: &Tensor<T>| conv2d_valid(&x.clone().reshape(&[1, h, w])?, weights);
    let z = polar::phase_advance_channels(&enc(cur)?, &enc(prev)?, eps)?;
    conv2d_transpose(&z, weights)?.reshape(&[h, w])
}
