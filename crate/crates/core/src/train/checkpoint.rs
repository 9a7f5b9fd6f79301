//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `TLSTMCKP`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a UTF-8 JSON header, then
//! every array listed in the header as little-endian `f64` values in header
//! order. Floating-point scalars in the header are stored as their IEEE-754
//! bit patterns so the round trip is exact.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::model::{CellState, TlstmConfig};
use crate::params::ParameterSet;
use crate::tasks::TaskState;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TLSTMCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Progress counters and early-stopping bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Counters {
    pub iteration: u64,
    pub samples_seen: u64,
    pub evaluations: u64,
    #[serde(with = "bits")]
    pub best_accuracy: f64,
    /// Evaluations since `best_accuracy` last improved.
    pub stale_evaluations: u64,
}

impl Default for Counters {
    fn default() -> Self {
        Self {
            iteration: 0,
            samples_seen: 0,
            evaluations: 0,
            best_accuracy: f64::NEG_INFINITY,
            stale_evaluations: 0,
        }
    }
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TlstmConfig,
    pub params: ParameterSet,
    pub adam: AdamState,
    pub counters: Counters,
    /// Data-stream position, including its RNG.
    pub task: TaskState,
    /// Recurrent state carried into the next batch, for stateful tasks.
    pub carry: Option<CellState>,
    /// Free-form run metadata (for example the task description).
    pub meta: serde_json::Value,
}

mod bits {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(v.to_bits())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(f64::from_bits(u64::deserialize(d)?))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamHeader {
    lr: u64,
    beta1: u64,
    beta2: u64,
    eps: u64,
    clip_norm: Option<u64>,
    step: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: TlstmConfig,
    counters: Counters,
    adam: AdamHeader,
    task: TaskState,
    arrays: Vec<ArrayEntry>,
    meta: serde_json::Value,
}

const PARAM: &str = "param/";
const MOMENT1: &str = "adam.m/";
const MOMENT2: &str = "adam.v/";
const CARRY_H: &str = "carry/h";
const CARRY_C: &str = "carry/c";

impl Checkpoint {
    fn arrays(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (prefix, set) in [(PARAM, &self.params), (MOMENT1, &self.adam.m), (MOMENT2, &self.adam.v)] {
            out.extend(set.iter().map(|(n, t)| (format!("{prefix}{n}"), t)));
        }
        if let Some(c) = &self.carry {
            out.push((CARRY_H.to_owned(), &c.h));
            if let Some(m) = &c.c {
                out.push((CARRY_C.to_owned(), m));
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let arrays = self.arrays();
        let a = &self.adam.config;
        let header = Header {
            config: self.config.clone(),
            counters: self.counters,
            adam: AdamHeader {
                lr: a.lr.to_bits(),
                beta1: a.beta1.to_bits(),
                beta2: a.beta2.to_bits(),
                eps: a.eps.to_bits(),
                clip_norm: a.clip_norm.map(f64::to_bits),
                step: self.adam.step,
            },
            task: self.task.clone(),
            arrays: arrays
                .iter()
                .map(|(n, t)| ArrayEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + arrays.iter().map(|(_, t)| 8 * t.len()).sum::<usize>());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &arrays {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_owned());
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing TLSTMCKP magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        header.config.validate()?;

        let mut at = 20 + len;
        let mut params = ParameterSet::new();
        let mut m = ParameterSet::new();
        let mut v = ParameterSet::new();
        let (mut h, mut c) = (None, None);
        for entry in &header.arrays {
            let n: usize = entry.shape.iter().product();
            let raw = bytes.get(at..at + 8 * n).ok_or_else(|| bad("truncated array data"))?;
            at += 8 * n;
            let data = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(entry.shape.clone(), data)?;
            let name = entry.name.as_str();
            if let Some(p) = name.strip_prefix(PARAM) {
                params.insert(p, t);
            } else if let Some(p) = name.strip_prefix(MOMENT1) {
                m.insert(p, t);
            } else if let Some(p) = name.strip_prefix(MOMENT2) {
                v.insert(p, t);
            } else if name == CARRY_H {
                h = Some(t);
            } else if name == CARRY_C {
                c = Some(t);
            } else {
                return Err(Error::Checkpoint(format!("unknown array `{name}`")));
            }
        }
        if at != bytes.len() {
            return Err(bad("trailing bytes after array data"));
        }
        if !params.same_layout(&m) || !params.same_layout(&v) {
            return Err(bad("optimizer moments do not match parameters"));
        }
        let a = &header.adam;
        let config = AdamConfig {
            lr: f64::from_bits(a.lr),
            beta1: f64::from_bits(a.beta1),
            beta2: f64::from_bits(a.beta2),
            eps: f64::from_bits(a.eps),
            clip_norm: a.clip_norm.map(f64::from_bits),
        };
        let carry = match (h, c) {
            (Some(h), c) => Some(CellState { h, c }),
            (None, None) => None,
            (None, Some(_)) => return Err(bad("memory-cell carry without hidden carry")),
        };
        Ok(Self {
            config: header.config,
            params,
            adam: AdamState {
                config,
                m,
                v,
                step: a.step,
            },
            counters: header.counters,
            task: header.task,
            carry,
            meta: header.meta,
        })
    }

    /// Writes through a temporary file and renames, so an existing
    /// checkpoint is replaced only by a complete one.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes()?)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, Norm, Variant};
    use crate::tasks::RngState;
    use rand::SeedableRng;

    fn sample() -> Checkpoint {
        let config = TlstmConfig {
            dims: 3,
            tensor_size: 2,
            channels: 3,
            kernel: 3,
            variant: Variant::Tlstm,
            norm: Norm::Channel,
            input_size: 4,
            output_size: 5,
        };
        let model = Model::init(config.clone(), 3, 1.0).unwrap();
        let mut adam = AdamState::new(
            AdamConfig {
                lr: 0.1 + 0.2,
                clip_norm: Some(1.0 / 3.0),
                ..AdamConfig::default()
            },
            &model.params,
        );
        adam.step = 17;
        for (_, t) in adam.m.iter_mut() {
            for (i, x) in t.data_mut().iter_mut().enumerate() {
                *x = (i as f64).sin() * 1e-300;
            }
        }
        let mut carry = CellState::zeros(&config, 2);
        carry.h.set(&[1, 1, 0, 2], -0.1);
        Checkpoint {
            config,
            params: model.params,
            adam,
            counters: Counters {
                iteration: 1000,
                samples_seen: 15000,
                evaluations: 1,
                best_accuracy: 0.1 + 0.7,
                stale_evaluations: 0,
            },
            task: TaskState {
                rng: Some(RngState::capture(&rand_chacha::ChaCha8Rng::seed_from_u64(5))),
                cursor: 4,
            },
            carry: Some(carry),
            meta: serde_json::json!({"task": "addition"}),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        assert_eq!(&std::fs::read(&path).unwrap()[..8], b"TLSTMCKP");
    }

    #[test]
    fn gate_layout_survives_round_trip() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        let names: Vec<_> = back.params.names().collect();
        assert_eq!(names, ck.params.names().collect::<Vec<_>>());
        assert_eq!(back.params.get("wh").unwrap().shape(), &[3, 3, 3, 12 + 9]);
    }

    #[test]
    fn rejects_damage() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[8] = 9;
        assert!(Checkpoint::from_bytes(&wrong).unwrap_err().to_string().contains("version"));
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        assert!(Checkpoint::from_bytes(b"nonsense").is_err());
    }
}
