//! `PPCK` checkpoints.
//!
//! Layout, little-endian: magic `PPCK`, u32 version, u32-length UTF-8
//! config text (`key = value` lines), u32 completed epochs, u64 optimizer
//! step, u32 parameter count followed by (u32-length name, PTN1 tensor)
//! entries, u32 normalization-layer count followed by (PTN1 mean, PTN1 var),
//! u32 optimizer-moment count (zero or the parameter count) followed by
//! (PTN1 m, PTN1 v). Tensors are stored as f32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::AdamState;
use crate::binio::{put_string, put_u32, put_u64, OffsetReader};
use crate::config::{format_kv, parse_kv};
use crate::error::{Error, Result};
use crate::predictors::{BnBuffer, Model, PredictorConfig};
use crate::tensor::{read_ptn1_from, write_ptn1, Real, Tensor};

pub const PPCK_MAGIC: &[u8; 4] = b"PPCK";
pub const PPCK_VERSION: u32 = 1;
const MAX_CONFIG_BYTES: usize = 1 << 20;
const MAX_NAME_BYTES: usize = 256;
const MAX_ENTRIES: u32 = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Resolved run configuration; must contain every `model.*` key.
    pub config: Vec<(String, String)>,
    pub epoch: usize,
    pub params: Vec<(String, Tensor<f32>)>,
    pub bn: Vec<BnBuffer<f32>>,
    /// Optimizer step and moments, absent for exported models.
    pub adam: Option<(u64, Vec<Tensor<f32>>, Vec<Tensor<f32>>)>,
}

impl Checkpoint {
    pub fn from_model<T: Real>(
        config: Vec<(String, String)>,
        epoch: usize,
        model: &Model<T>,
        adam: Option<&AdamState<T>>,
    ) -> Self {
        let f = |t: &Tensor<T>| t.cast::<f32>();
        Self {
            config,
            epoch,
            params: model.names().iter().cloned().zip(model.params().iter().map(f)).collect(),
            bn: model
                .bn_buffers()
                .iter()
                .map(|b| BnBuffer {
                    mean: b.mean.iter().map(|v| v.as_f64() as f32).collect(),
                    var: b.var.iter().map(|v| v.as_f64() as f32).collect(),
                })
                .collect(),
            adam: adam.map(|a| (a.step, a.m.iter().map(f).collect(), a.v.iter().map(f).collect())),
        }
    }

    pub fn predictor_config(&self) -> Result<PredictorConfig> {
        let mut cfg = PredictorConfig::default();
        for (k, v) in &self.config {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn model<T: Real>(&self) -> Result<Model<T>> {
        let cfg = self.predictor_config()?;
        Model::from_parts(
            &cfg,
            self.params.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
            self.bn
                .iter()
                .map(|b| BnBuffer {
                    mean: b.mean.iter().map(|&v| T::from_f64_lossy(v as f64)).collect(),
                    var: b.var.iter().map(|&v| T::from_f64_lossy(v as f64)).collect(),
                })
                .collect(),
        )
    }

    /// Optimizer state for `model`, fresh when none was stored.
    pub fn adam<T: Real>(&self, model: &Model<T>) -> Result<AdamState<T>> {
        let mut st = AdamState::new(model.params());
        if let Some((step, m, v)) = &self.adam {
            if m.len() != st.m.len() || v.len() != st.v.len() {
                return Err(Error::Config("optimizer moments do not match the model".into()));
            }
            for (dst, src) in st.m.iter_mut().chain(st.v.iter_mut()).zip(m.iter().chain(v)) {
                if dst.shape() != src.shape() {
                    return Err(Error::Config(format!(
                        "optimizer moment {:?} does not match parameter {:?}",
                        src.shape(),
                        dst.shape()
                    )));
                }
                *dst = src.cast();
            }
            st.step = *step;
        }
        Ok(st)
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(PPCK_MAGIC)?;
        put_u32(w, PPCK_VERSION)?;
        put_string(w, &format_kv(&self.config))?;
        put_u32(w, self.epoch as u32)?;
        put_u64(w, self.adam.as_ref().map_or(0, |a| a.0))?;
        put_u32(w, self.params.len() as u32)?;
        for (name, t) in &self.params {
            put_string(w, name)?;
            write_ptn1(w, t)?;
        }
        put_u32(w, self.bn.len() as u32)?;
        for b in &self.bn {
            write_ptn1(w, &Tensor::new(&[b.mean.len()], b.mean.clone())?)?;
            write_ptn1(w, &Tensor::new(&[b.var.len()], b.var.clone())?)?;
        }
        match &self.adam {
            None => put_u32(w, 0)?,
            Some((_, m, v)) => {
                put_u32(w, m.len() as u32)?;
                for (a, b) in m.iter().zip(v) {
                    write_ptn1(w, a)?;
                    write_ptn1(w, b)?;
                }
            }
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let mut rd = OffsetReader::new(r, "PPCK");
        rd.magic(PPCK_MAGIC)?;
        let at = rd.offset();
        let version = rd.u32()?;
        if version != PPCK_VERSION {
            return Err(rd.error(at, format!("unsupported version {version}")));
        }
        let at = rd.offset();
        let text = rd.string(MAX_CONFIG_BYTES)?;
        let config = parse_kv(&text).map_err(|e| rd.error(at, format!("config: {e}")))?;
        let epoch = rd.u32()? as usize;
        let step = rd.u64()?;
        let count = |rd: &mut OffsetReader<_>| -> Result<u32> {
            let at = rd.offset();
            let n = rd.u32()?;
            if n > MAX_ENTRIES {
                return Err(rd.error(at, format!("{n} entries exceed {MAX_ENTRIES}")));
            }
            Ok(n)
        };
        let np = count(&mut rd)?;
        let mut params = Vec::with_capacity(np as usize);
        for _ in 0..np {
            let name = rd.string(MAX_NAME_BYTES)?;
            params.push((name, read_ptn1_from(&mut rd)?));
        }
        let nb = count(&mut rd)?;
        let mut bn = Vec::with_capacity(nb as usize);
        for _ in 0..nb {
            let at = rd.offset();
            let mean = read_ptn1_from(&mut rd)?.into_data();
            let var = read_ptn1_from(&mut rd)?.into_data();
            if mean.len() != var.len() {
                return Err(rd.error(at, "running mean and variance differ in length"));
            }
            bn.push(BnBuffer { mean, var });
        }
        let at = rd.offset();
        let nm = count(&mut rd)?;
        let adam = if nm == 0 {
            None
        } else {
            if nm != np {
                return Err(rd.error(at, format!("{nm} optimizer moments for {np} parameters")));
            }
            let (mut m, mut v) = (Vec::new(), Vec::new());
            for _ in 0..nm {
                m.push(read_ptn1_from(&mut rd)?);
                v.push(read_ptn1_from(&mut rd)?);
            }
            Some((step, m, v))
        };
        rd.expect_eof()?;
        Ok(Self {
            config,
            epoch,
            params,
            bn,
            adam,
        })
    }

    /// Writes through a temporary file and renames it into place, so an
    /// interrupted save never leaves a partial checkpoint at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ppck.tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            self.write(&mut w)?;
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(&mut BufReader::new(File::open(path)?))
    }
}
