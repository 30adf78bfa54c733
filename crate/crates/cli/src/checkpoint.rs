//! Versioned binary checkpoints.
//!
//! ```text
//! magic     8 bytes  "CBMCKPT\0"
//! version   u32 LE
//! config    u64 LE length + UTF-8 TOML
//! epoch     u64 LE   epochs completed
//! lr        f64 rate, f64 decay, u64 patience, f64 best, u64 stale epochs
//! adam      u64 step, f64 beta1, f64 beta2, f64 eps
//! rng × 2   32-byte seed, u64 stream, u128 word position (clips, gates)
//! tensors   u64 count, then per tensor:
//!           u64 name length, name, u64 rank, rank × u64 dims, f64 LE data
//! ```
//!
//! Tensor names: model parameters as `layer{i}.{part}` / `head.{part}`,
//! Adam moments as `adam.m.{param}` / `adam.v.{param}`, stored memories as
//! `store.{sequence}.{layer}.{t}`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use cbm_core::optim::{AdamConfig, AdamState, LrSchedule};
use cbm_core::rng::RngState;
use cbm_core::scheme::StateStore;
use cbm_core::{Model64, Tensor64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CBMCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub epoch: usize,
    pub model: Model64,
    pub adam: AdamState<f64>,
    pub lr: LrSchedule,
    pub clip_rng: RngState,
    pub gate_rng: RngState,
    pub store: StateStore<f64>,
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        Ok(self.0.write_all(b)?)
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn str(&mut self, s: &str) -> Result<()> {
        self.u64(s.len() as u64)?;
        self.bytes(s.as_bytes())
    }
    fn rng(&mut self, r: &RngState) -> Result<()> {
        self.bytes(&r.seed)?;
        self.u64(r.stream)?;
        self.bytes(&r.word_pos.to_le_bytes())
    }
    fn tensor(&mut self, name: &str, t: &Tensor64) -> Result<()> {
        self.str(name)?;
        self.u64(t.shape().len() as u64)?;
        for &d in t.shape() {
            self.u64(d as u64)?;
        }
        for &v in t.data() {
            self.f64(v)?;
        }
        Ok(())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b).context("truncated checkpoint")?;
        Ok(b)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u64()? as usize;
        let mut b = vec![0u8; n];
        self.0.read_exact(&mut b).context("truncated checkpoint")?;
        Ok(String::from_utf8(b)?)
    }
    fn rng(&mut self) -> Result<RngState> {
        Ok(RngState {
            seed: self.array()?,
            stream: self.u64()?,
            word_pos: u128::from_le_bytes(self.array()?),
        })
    }
    fn tensor(&mut self) -> Result<(String, Tensor64)> {
        let name = self.str()?;
        let rank = self.u64()? as usize;
        let shape = (0..rank).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok((name, Tensor64::new(shape, data)?))
    }
}

impl Checkpoint {
    pub fn write_to(&self, w: impl Write) -> Result<()> {
        let mut w = Writer(w);
        w.bytes(CHECKPOINT_MAGIC)?;
        w.bytes(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.str(&self.config.to_toml())?;
        w.u64(self.epoch as u64)?;
        w.f64(self.lr.rate)?;
        w.f64(self.lr.factor)?;
        w.u64(self.lr.patience as u64)?;
        w.f64(self.lr.best)?;
        w.u64(self.lr.stale_epochs as u64)?;
        let AdamConfig { beta1, beta2, eps } = self.adam.config;
        w.u64(self.adam.step)?;
        w.f64(beta1)?;
        w.f64(beta2)?;
        w.f64(eps)?;
        w.rng(&self.clip_rng)?;
        w.rng(&self.gate_rng)?;

        let names = self.model.tensor_names();
        let params = self.model.tensors();
        let count = 3 * names.len() + self.store.len();
        w.u64(count as u64)?;
        for (n, t) in names.iter().zip(&params) {
            w.tensor(n, t)?;
        }
        for (n, t) in names.iter().zip(&self.adam.m) {
            w.tensor(&format!("adam.m.{n}"), t)?;
        }
        for (n, t) in names.iter().zip(&self.adam.v) {
            w.tensor(&format!("adam.v.{n}"), t)?;
        }
        for (&(s, l, t), state) in self.store.iter() {
            w.tensor(&format!("store.{s}.{l}.{t}"), state)?;
        }
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = Reader(r);
        if &r.array::<8>()? != CHECKPOINT_MAGIC {
            bail!("not a checkpoint (bad magic)");
        }
        let version = u32::from_le_bytes(r.array()?);
        if version != CHECKPOINT_VERSION {
            bail!("unsupported checkpoint version {version} (this build reads {CHECKPOINT_VERSION})");
        }
        let config = RunConfig::from_toml(&r.str()?).context("checkpoint config")?;
        let epoch = r.u64()? as usize;
        let lr = LrSchedule {
            rate: r.f64()?,
            factor: r.f64()?,
            patience: r.u64()? as usize,
            best: r.f64()?,
            stale_epochs: r.u64()? as usize,
        };
        let step = r.u64()?;
        let adam_config = AdamConfig {
            beta1: r.f64()?,
            beta2: r.f64()?,
            eps: r.f64()?,
        };
        let clip_rng = r.rng()?;
        let gate_rng = r.rng()?;

        let mut tensors = HashMap::new();
        let mut store = StateStore::new();
        for _ in 0..r.u64()? {
            let (name, t) = r.tensor()?;
            if let Some(key) = name.strip_prefix("store.") {
                let idx: Vec<usize> = key.split('.').map(str::parse).collect::<Result<_, _>>()
                    .with_context(|| format!("bad store entry name {name:?}"))?;
                let [s, l, t_] = idx[..] else {
                    bail!("bad store entry name {name:?}");
                };
                store.insert(s, l, t_, t);
            } else {
                tensors.insert(name, t);
            }
        }

        let (h, w) = config.frame_size();
        // shapes come from the config; values are overwritten below
        let mut model = Model64::new(config.stack(), h, w, config.head_outputs(), &mut ChaCha8Rng::seed_from_u64(0))?;
        let names = model.tensor_names();
        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor64> {
            let t = tensors.remove(name).with_context(|| format!("checkpoint lacks tensor {name}"))?;
            if t.shape() != shape {
                bail!("tensor {name} has shape {:?}, config implies {shape:?}", t.shape());
            }
            Ok(t)
        };
        for (n, p) in names.iter().zip(model.tensors_mut()) {
            *p = take(n, &p.shape().to_vec())?;
        }
        let mut adam = AdamState::new(model.tensors(), adam_config);
        adam.step = step;
        for (i, n) in names.iter().enumerate() {
            let shape = model.tensors()[i].shape().to_vec();
            adam.m[i] = take(&format!("adam.m.{n}"), &shape)?;
            adam.v[i] = take(&format!("adam.v.{n}"), &shape)?;
        }
        if let Some(extra) = tensors.keys().next() {
            bail!("unexpected tensor {extra} in checkpoint");
        }
        Ok(Self {
            config,
            epoch,
            model,
            adam,
            lr,
            clip_rng,
            gate_rng,
            store,
        })
    }

    /// Write via a temporary file so a crash never leaves a torn checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let f = std::fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
            let mut buf = std::io::BufWriter::new(f);
            self.write_to(&mut buf)?;
            buf.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        Self::read_from(std::io::BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
    }
}
