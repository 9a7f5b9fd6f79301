//! Deterministic data sources: multi-digit addition, sequence memorization,
//! pixel-by-pixel MNIST, and byte-level language modelling.

mod algorithmic;
mod charlm;
mod mnist;
mod vocab;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::SequenceBatch;

pub use algorithmic::{
    format_addition, format_memorization, gen_addition, gen_memorization, AdditionExample,
    AdditionStream, AlgorithmicTask, MemorizationExample, MemorizationStream, TEST_SET_SIZE,
};
pub use charlm::{bpc, load_charlm, CharCorpus, CharLmTask};
pub use mnist::{
    downsample, load_mnist, read_idx_images, read_idx_labels, MnistSet, MnistSplit, MnistTask,
    PixelOrder, IMAGE_MAGIC, LABEL_MAGIC, MNIST_SIDE, PMNIST_SEED, SMALL_SIDE,
};
pub use vocab::{SymbolVocab, PAD};

/// Environment variable naming the directory that holds datasets.
pub const DATA_DIR_ENV: &str = "TLSTM_DATA_DIR";

/// Directory searched when `$TLSTM_DATA_DIR` is unset.
pub const DEFAULT_DATA_DIR: &str = "data";

/// Resolves a dataset path: absolute or existing paths are used as given,
/// anything else is looked up under `$TLSTM_DATA_DIR`, or under `data/`
/// when the variable is unset.
pub fn resolve_data_path(path: &Path) -> PathBuf {
    if path.is_absolute() || path.exists() {
        return path.to_path_buf();
    }
    let root = std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from(DEFAULT_DATA_DIR), PathBuf::from);
    root.join(path)
}

/// Serializable ChaCha8 position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// 32-byte key as lower-case hex.
    pub seed: String,
    pub stream: u64,
    /// Word position, as a decimal string (it is a 128-bit counter).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || Error::Checkpoint(format!("malformed RNG state {self:?}"));
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

/// Resumable position of a task's training stream.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskState {
    pub rng: Option<RngState>,
    pub cursor: u64,
}

/// A training batch plus whether the recurrent state must be reset first.
#[derive(Clone, Debug)]
pub struct TrainBatch {
    pub batch: SequenceBatch,
    pub reset_carry: bool,
}

/// A source of training and evaluation batches.
pub trait Task {
    fn name(&self) -> String;
    fn input_size(&self) -> usize;
    fn output_size(&self) -> usize;
    fn batch_size(&self) -> usize;

    /// Image classification (affects forget-gate initialization).
    fn image_task(&self) -> bool {
        false
    }

    /// Whether hidden state flows from one batch to the next.
    fn carries_state(&self) -> bool {
        false
    }

    /// Training samples in one pass over the data, if the stream is finite.
    fn samples_per_epoch(&self) -> Option<u64> {
        None
    }

    fn next_batch(&mut self) -> Result<TrainBatch>;

    /// Held-out batches used for stopping decisions.
    fn validation(&self) -> Result<Vec<SequenceBatch>>;

    /// Final test batches.
    fn test(&self) -> Result<Vec<SequenceBatch>>;

    fn state(&self) -> TaskState;
    fn restore(&mut self, state: &TaskState) -> Result<()>;
}

fn default_subseq_len() -> usize {
    50
}

/// Task description as it appears in run configurations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskSpec {
    Addition {
        digits: usize,
    },
    Memorization {
        symbols: usize,
        vocab_size: usize,
    },
    Mnist {
        #[serde(default)]
        permuted: bool,
        /// 8×8 area-averaged images instead of 28×28.
        #[serde(default)]
        downsample: bool,
        /// Directory with the IDX files; defaults to `$TLSTM_DATA_DIR`.
        #[serde(default)]
        root: Option<PathBuf>,
    },
    CharLm {
        path: PathBuf,
        #[serde(default = "default_subseq_len")]
        subseq_len: usize,
    },
}

impl TaskSpec {
    /// Default mini-batch size: 15 for algorithmic tasks, 50 for MNIST,
    /// 100 subsequences for language modelling.
    pub fn default_batch_size(&self) -> usize {
        match self {
            TaskSpec::Addition { .. } | TaskSpec::Memorization { .. } => 15,
            TaskSpec::Mnist { .. } => 50,
            TaskSpec::CharLm { .. } => 100,
        }
    }

    pub fn image_task(&self) -> bool {
        matches!(self, TaskSpec::Mnist { .. })
    }

    pub fn build(&self, seed: u64, batch_size: usize) -> Result<Box<dyn Task>> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(match self {
            TaskSpec::Addition { digits } => {
                Box::new(AlgorithmicTask::addition(*digits, seed, batch_size)?)
            }
            TaskSpec::Memorization {
                symbols,
                vocab_size,
            } => Box::new(AlgorithmicTask::memorization(
                *symbols,
                *vocab_size,
                seed,
                batch_size,
            )?),
            TaskSpec::Mnist {
                permuted,
                downsample,
                root,
            } => {
                let root = match root {
                    Some(r) => resolve_data_path(r),
                    None => std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).ok_or_else(|| {
                        Error::Config(format!("MNIST needs `root` or ${DATA_DIR_ENV}"))
                    })?,
                };
                Box::new(MnistTask::load(&root, *permuted, *downsample, seed, batch_size)?)
            }
            TaskSpec::CharLm { path, subseq_len } => Box::new(load_charlm(
                &resolve_data_path(path),
                *subseq_len,
                batch_size,
            )?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn rng_state_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        rng.set_stream(3);
        for _ in 0..7 {
            rng.next_u32();
        }
        let saved = RngState::capture(&rng);
        let json = serde_json::to_string(&saved).unwrap();
        let mut back = serde_json::from_str::<RngState>(&json).unwrap().restore().unwrap();
        for _ in 0..10 {
            assert_eq!(rng.next_u64(), back.next_u64());
        }
    }

    #[test]
    fn spec_parsing() {
        let s: TaskSpec = serde_json::from_str(r#"{"kind":"addition","digits":4}"#).unwrap();
        assert_eq!(s, TaskSpec::Addition { digits: 4 });
        let s: TaskSpec =
            serde_json::from_str(r#"{"kind":"char-lm","path":"moby.txt"}"#).unwrap();
        assert!(matches!(s, TaskSpec::CharLm { subseq_len: 50, .. }));
        assert!(serde_json::from_str::<TaskSpec>(r#"{"kind":"addition","digits":4,"x":1}"#)
            .is_err());
        assert!(serde_json::from_str::<TaskSpec>(r#"{"kind":"sorting"}"#).is_err());
    }
}
