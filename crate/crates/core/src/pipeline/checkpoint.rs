//! Binary checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"SFSNIDCK" | u32 version | u64 header length | JSON header | f64 payload
//! ```
//!
//! The payload holds every parameter in header order, then, when the header
//! says an optimizer is present, the Adam first and second moments in the
//! same order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Config;
use super::optim::Adam;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"SFSNIDCK";
const VERSION: u32 = 1;

/// Training progress recorded in a checkpoint. Retraining refuses
/// `Untrained`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Untrained,
    Supervised,
    Retrained,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    /// Optimizer steps taken over the whole run.
    pub step: u64,
    /// Value of `step` when the current stage began.
    pub stage_start_step: u64,
    pub config: Config,
    pub params: ParamStore,
    pub optimizer: Option<Adam>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    stage: Stage,
    step: u64,
    stage_start_step: u64,
    config: String,
    config_hash: String,
    params: Vec<ParamEntry>,
    optimizer: Option<Adam>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

fn corrupt(detail: impl Into<String>) -> Error {
    Error::Checkpoint(detail.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            stage: self.stage,
            step: self.step,
            stage_start_step: self.stage_start_step,
            config: self.config.to_toml(),
            config_hash: self.config.hash(),
            params: self
                .params
                .iter()
                .map(|(name, t)| ParamEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            optimizer: self.optimizer.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(json.len() + 8 * 3 * self.params.count() + 20);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut blob = |t: &Tensor| t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        self.params.iter().for_each(|(_, t)| blob(t));
        if let Some(adam) = &self.optimizer {
            adam.m.iter().for_each(&mut blob);
            adam.v.iter().for_each(&mut blob);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| corrupt("truncated file"))?;
        if &magic != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(|_| corrupt("truncated file"))?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(corrupt(format!("unsupported checkpoint version {version}")));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|_| corrupt("truncated file"))?;
        let len = u64::from_le_bytes(len) as usize;
        if r.len() < len {
            return Err(corrupt("truncated header"));
        }
        let header: Header = serde_json::from_slice(&r[..len]).map_err(|e| corrupt(format!("header: {e}")))?;
        r = &r[len..];
        let config = Config::from_toml(&header.config)?;
        if config.hash() != header.config_hash {
            return Err(corrupt("config hash mismatch"));
        }
        let mut read_tensor = |shape: &[usize]| -> Result<Tensor> {
            let n: usize = shape.iter().product();
            if r.len() < 8 * n {
                return Err(corrupt("truncated payload"));
            }
            let data = r[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            r = &r[8 * n..];
            Tensor::new(shape.to_vec(), data)
        };
        let mut params = ParamStore::new();
        for p in &header.params {
            params.add(p.name.clone(), read_tensor(&p.shape)?);
        }
        let optimizer = match header.optimizer {
            Some(mut adam) => {
                adam.m = header.params.iter().map(|p| read_tensor(&p.shape)).collect::<Result<_>>()?;
                adam.v = header.params.iter().map(|p| read_tensor(&p.shape)).collect::<Result<_>>()?;
                Some(adam)
            }
            None => None,
        };
        if !r.is_empty() {
            return Err(corrupt("trailing bytes after payload"));
        }
        Ok(Self {
            stage: header.stage,
            step: header.step,
            stage_start_step: header.stage_start_step,
            config,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(d) => Error::Checkpoint(format!("{}: {d}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut params = ParamStore::new();
        params.add("a", Tensor::new(vec![2], vec![1.5, -0.25]).unwrap());
        params.add("b.c", Tensor::full(vec![1, 2, 1], std::f64::consts::PI));
        let mut adam = Adam::new(&params, 0.9, 0.999, 1e-8);
        adam.t = 3;
        adam.m[0].data_mut()[1] = 0.125;
        Checkpoint {
            stage: Stage::Supervised,
            step: 3,
            stage_start_step: 0,
            config: Config::toy(),
            params,
            optimizer: Some(adam),
        }
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), c);
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    }

    #[test]
    fn damaged_files_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"SFSNIDXX").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
