use std::path::Path;

use super::{Task, TaskState, TrainBatch};
use crate::error::{Error, Result};
use crate::sequence::SequenceBatch;
use crate::tensor::Tensor;

/// Bits per character from a mean NLL in nats.
pub fn bpc(nll: f64) -> f64 {
    nll / std::f64::consts::LN_2
}

/// A byte corpus with its vocabulary (the distinct bytes, in increasing
/// order) and a contiguous 90/5/5 train/validation/test split.
#[derive(Clone, Debug)]
pub struct CharCorpus {
    vocab: Vec<u8>,
    train: Vec<usize>,
    validation: Vec<usize>,
    test: Vec<usize>,
}

impl CharCorpus {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.is_empty() {
            return Err(Error::Config("empty corpus".into()));
        }
        let mut present = [false; 256];
        for &b in bytes {
            present[usize::from(b)] = true;
        }
        let vocab: Vec<u8> = (0..=255u8).filter(|&b| present[usize::from(b)]).collect();
        let mut index = [0usize; 256];
        for (i, &b) in vocab.iter().enumerate() {
            index[usize::from(b)] = i;
        }
        let ids: Vec<usize> = bytes.iter().map(|&b| index[usize::from(b)]).collect();
        let n = ids.len();
        let (a, b) = (n * 90 / 100, n * 95 / 100);
        Ok(Self {
            vocab,
            train: ids[..a].to_vec(),
            validation: ids[a..b].to_vec(),
            test: ids[b..].to_vec(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Data {
            path: path.to_path_buf(),
            message: format!("cannot read corpus: {e}"),
        })?;
        Self::from_bytes(&bytes).map_err(|e| Error::Data {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn vocab(&self) -> &[u8] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn train(&self) -> &[usize] {
        &self.train
    }

    pub fn validation(&self) -> &[usize] {
        &self.validation
    }

    pub fn test(&self) -> &[usize] {
        &self.test
    }
}

/// Splits `ids` into `lanes` contiguous streams and cuts them into
/// consecutive subsequences of `len` steps with next-symbol targets.
/// Batch `i` holds subsequence `i` of every lane, so hidden state can flow
/// from batch `i` to batch `i + 1`.
fn lane_batches(ids: &[usize], vocab: usize, lanes: usize, len: usize) -> Result<Vec<SequenceBatch>> {
    let lane_len = ids.len() / lanes;
    if lane_len < 2 {
        return Err(Error::Config(format!(
            "{} symbols cannot fill {lanes} lanes",
            ids.len()
        )));
    }
    let steps = (lane_len - 1).min(len);
    let count = (lane_len - 1) / steps;
    (0..count).map(|i| lane_batch(ids, vocab, lanes, lane_len, i * steps, steps)).collect()
}

fn lane_batch(
    ids: &[usize],
    vocab: usize,
    lanes: usize,
    lane_len: usize,
    start: usize,
    len: usize,
) -> Result<SequenceBatch> {
    let mut inputs = vec![0.0; lanes * len * vocab];
    let mut targets = Vec::with_capacity(lanes * len);
    for lane in 0..lanes {
        let base = lane * lane_len + start;
        for t in 0..len {
            inputs[(lane * len + t) * vocab + ids[base + t]] = 1.0;
            targets.push(ids[base + t + 1]);
        }
    }
    SequenceBatch::new(
        Tensor::new([lanes, len, vocab], inputs)?,
        targets,
        vec![true; lanes * len],
    )
}

/// Next-byte prediction with state carried between consecutive batches.
#[derive(Clone, Debug)]
pub struct CharLmTask {
    corpus: CharCorpus,
    lanes: usize,
    subseq_len: usize,
    cursor: u64,
}

/// Loads a corpus for next-byte prediction with `lanes` parallel streams of
/// `subseq_len`-step subsequences.
pub fn load_charlm(path: &Path, subseq_len: usize, lanes: usize) -> Result<CharLmTask> {
    CharLmTask::new(CharCorpus::load(path)?, subseq_len, lanes)
}

impl CharLmTask {
    pub fn new(corpus: CharCorpus, subseq_len: usize, lanes: usize) -> Result<Self> {
        if subseq_len == 0 || lanes == 0 {
            return Err(Error::Config("subseq_len and lanes must be positive".into()));
        }
        let task = Self {
            corpus,
            lanes,
            subseq_len,
            cursor: 0,
        };
        if task.iterations_per_epoch() == 0 {
            return Err(Error::Config(format!(
                "training split too short for {lanes} lanes of {subseq_len} steps"
            )));
        }
        Ok(task)
    }

    pub fn corpus(&self) -> &CharCorpus {
        &self.corpus
    }

    pub fn subseq_len(&self) -> usize {
        self.subseq_len
    }

    fn lane_len(&self) -> usize {
        self.corpus.train.len() / self.lanes
    }

    pub fn iterations_per_epoch(&self) -> u64 {
        (self.lane_len().saturating_sub(1) / self.subseq_len) as u64
    }
}

impl Task for CharLmTask {
    fn name(&self) -> String {
        format!("char-lm-{}", self.corpus.vocab_size())
    }

    fn input_size(&self) -> usize {
        self.corpus.vocab_size()
    }

    fn output_size(&self) -> usize {
        self.corpus.vocab_size()
    }

    fn batch_size(&self) -> usize {
        self.lanes
    }

    fn carries_state(&self) -> bool {
        true
    }

    fn samples_per_epoch(&self) -> Option<u64> {
        Some(self.iterations_per_epoch() * self.lanes as u64)
    }

    fn next_batch(&mut self) -> Result<TrainBatch> {
        let reset = self.cursor == 0;
        let batch = lane_batch(
            &self.corpus.train,
            self.corpus.vocab_size(),
            self.lanes,
            self.lane_len(),
            self.cursor as usize * self.subseq_len,
            self.subseq_len,
        )?;
        self.cursor = (self.cursor + 1) % self.iterations_per_epoch();
        Ok(TrainBatch {
            batch,
            reset_carry: reset,
        })
    }

    fn validation(&self) -> Result<Vec<SequenceBatch>> {
        let lanes = self.lanes.min(self.corpus.validation.len() / (self.subseq_len + 1)).max(1);
        lane_batches(&self.corpus.validation, self.corpus.vocab_size(), lanes, self.subseq_len)
    }

    fn test(&self) -> Result<Vec<SequenceBatch>> {
        let lanes = self.lanes.min(self.corpus.test.len() / (self.subseq_len + 1)).max(1);
        lane_batches(&self.corpus.test, self.corpus.vocab_size(), lanes, self.subseq_len)
    }

    fn state(&self) -> TaskState {
        TaskState {
            rng: None,
            cursor: self.cursor,
        }
    }

    fn restore(&mut self, state: &TaskState) -> Result<()> {
        if state.cursor >= self.iterations_per_epoch() {
            return Err(Error::Checkpoint(format!("cursor {} past epoch end", state.cursor)));
        }
        self.cursor = state.cursor;
        Ok(())
    }
}
