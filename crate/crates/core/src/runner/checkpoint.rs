//! Binary checkpoints.
//!
//! Layout (little-endian): magic `TNCK`, `u32` version, `u32` length and
//! UTF-8 text of the training config, `u32` channels, `u32` hidden,
//! `u64` completed epochs, `u64` seed, `u64` Adam step count, then the
//! parameters, Adam first moments and Adam second moments as `f64` planes
//! in flat parameter order, then the CRC-32 of everything before it.

use std::fs;
use std::path::Path;

use crate::error::{Result, TencaError};
use crate::params::ModelParams;
use crate::runner::config::{train_config_from_text, train_config_to_text};
use crate::trainer::{OptimizerState, TrainConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TNCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    /// Number of completed epochs.
    pub epoch: usize,
    pub seed: u64,
}

/// Hash of every setting that must match for a run to be resumed; the
/// epoch budget is excluded so a finished run can be extended.
pub fn config_fingerprint(config: &TrainConfig) -> u32 {
    let mut c = config.clone();
    c.epochs = 0;
    crc32fast::hash(train_config_to_text(&c).as_bytes())
}

impl Checkpoint {
    /// A fresh run at epoch 0.
    pub fn start(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = config.init_params()?;
        Ok(Self {
            config: config.clone(),
            optimizer: OptimizerState::new(&params),
            params,
            epoch: 0,
            seed: config.seed,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let text = train_config_to_text(&self.config);
        let n = self.params.len();
        let mut out = Vec::with_capacity(48 + text.len() + 3 * 8 * n);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(self.params.channels() as u32).to_le_bytes());
        out.extend_from_slice(&(self.params.hidden() as u32).to_le_bytes());
        out.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.optimizer.step.to_le_bytes());
        for p in [&self.params, &self.optimizer.m, &self.optimizer.v] {
            for v in p.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parses checkpoint bytes; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(TencaError::format(path, "not a TNCK checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(TencaError::Version {
                path: path.into(),
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let text_len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(text_len)?)
            .map_err(|_| TencaError::format(path, "config echo is not UTF-8"))?
            .to_string();
        let channels = r.u32()? as usize;
        let hidden = r.u32()? as usize;
        let epoch = r.u64()? as usize;
        let seed = r.u64()?;
        let step = r.u64()?;
        let mut planes = Vec::with_capacity(3);
        for _ in 0..3 {
            let mut p = ModelParams::zeros(channels, hidden)
                .map_err(|e| TencaError::format(path, format!("bad model shape: {e}")))?;
            let raw = r.take(p.len() * 8)?;
            for (v, c) in p.iter_mut().zip(raw.chunks_exact(8)) {
                *v = f64::from_le_bytes(c.try_into().expect("8 bytes"));
            }
            planes.push(p);
        }
        let body_len = r.pos;
        let stored = r.u32()?;
        if r.pos != bytes.len() {
            return Err(TencaError::format(path, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let computed = crc32fast::hash(&bytes[..body_len]);
        if stored != computed {
            return Err(TencaError::Checksum {
                path: path.into(),
                stored,
                computed,
            });
        }
        let config = train_config_from_text(&text, path)?;
        if (config.channels, config.hidden) != (channels, hidden) {
            return Err(TencaError::format(path, "config echo disagrees with the stored model shape"));
        }
        let v = planes.pop().expect("three planes");
        let m = planes.pop().expect("three planes");
        let params = planes.pop().expect("three planes");
        Ok(Self {
            config,
            params,
            optimizer: OptimizerState { m, v, step },
            epoch,
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| TencaError::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| TencaError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| TencaError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(TencaError::Truncated {
                path: self.path.into(),
                missing: end - self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
