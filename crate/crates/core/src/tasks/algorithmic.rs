use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{RngState, SymbolVocab, Task, TaskState, TrainBatch, PAD};
use crate::error::{Error, Result};
use crate::sequence::{Sample, SequenceBatch};

/// Size of the fixed held-out set for the algorithmic tasks.
pub const TEST_SET_SIZE: usize = 100;

const MAX_DIGITS: usize = 18;

fn pad(n: usize) -> String {
    std::iter::repeat(PAD).take(n).collect()
}

/// Input and target strings for `a + b` with `digits`-digit operands.
///
/// Input: `-a-b-` followed by padding; target: padding, then the sum
/// right-aligned in `digits + 1` slots, then `-`. Both have
/// `2(digits + 1) + digits + 2` symbols.
pub fn format_addition(a: u64, b: u64, digits: usize) -> (String, String) {
    let sum = (a + b).to_string();
    let input = format!("-{a:0digits$}-{b:0digits$}-{}", pad(digits + 1));
    let target = format!(
        "{}{}{sum}-",
        pad(2 * (digits + 1)),
        pad(digits + 1 - sum.len())
    );
    (input, target)
}

/// Input and target strings for memorizing `payload`.
pub fn format_memorization(payload: &str) -> (String, String) {
    let n = payload.chars().count();
    (
        format!("-{payload}{}", pad(n + 1)),
        format!("{}{payload}-", pad(n + 1)),
    )
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdditionExample {
    pub a: u64,
    pub b: u64,
    pub input: String,
    pub target: String,
}

/// Infinite seeded stream of addition problems.
#[derive(Clone, Debug)]
pub struct AdditionStream {
    digits: usize,
    rng: ChaCha8Rng,
}

pub fn gen_addition(digits: usize, seed: u64) -> AdditionStream {
    AdditionStream {
        digits: digits.clamp(1, MAX_DIGITS),
        rng: ChaCha8Rng::seed_from_u64(seed),
    }
}

impl Iterator for AdditionStream {
    type Item = AdditionExample;

    fn next(&mut self) -> Option<AdditionExample> {
        let hi = 10u64.pow(self.digits as u32);
        let a = self.rng.gen_range(0..hi);
        let b = self.rng.gen_range(0..hi);
        let (input, target) = format_addition(a, b, self.digits);
        Some(AdditionExample {
            a,
            b,
            input,
            target,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemorizationExample {
    pub payload: String,
    pub input: String,
    pub target: String,
}

/// Infinite seeded stream of memorization problems over a vocabulary of
/// `vocab_size` symbols (including `-`, which never appears in payloads).
#[derive(Clone, Debug)]
pub struct MemorizationStream {
    symbols: usize,
    vocab: SymbolVocab,
    rng: ChaCha8Rng,
}

pub fn gen_memorization(symbols: usize, vocab_size: usize, seed: u64) -> Result<MemorizationStream> {
    if symbols == 0 {
        return Err(Error::Config("memorization needs at least one symbol".into()));
    }
    Ok(MemorizationStream {
        symbols,
        vocab: SymbolVocab::with_size(vocab_size)?,
        rng: ChaCha8Rng::seed_from_u64(seed),
    })
}

impl MemorizationStream {
    pub fn vocab(&self) -> &SymbolVocab {
        &self.vocab
    }
}

impl Iterator for MemorizationStream {
    type Item = MemorizationExample;

    fn next(&mut self) -> Option<MemorizationExample> {
        let payload: String = (0..self.symbols)
            .map(|_| self.vocab.decode(self.rng.gen_range(1..self.vocab.len())))
            .collect();
        let (input, target) = format_memorization(&payload);
        Some(MemorizationExample {
            payload,
            input,
            target,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Addition { digits: usize },
    Memorization { symbols: usize },
}

/// Addition or memorization as a training task.
///
/// Every target position (including `-`) is in the loss. Accuracy is
/// scored on the answer positions only: the `digits + 1` sum slots, or the
/// repeated payload.
#[derive(Clone, Debug)]
pub struct AlgorithmicTask {
    kind: Kind,
    vocab: SymbolVocab,
    rng: ChaCha8Rng,
    batch_size: usize,
    test: Vec<Sample>,
}

impl AlgorithmicTask {
    pub fn addition(digits: usize, seed: u64, batch_size: usize) -> Result<Self> {
        if !(1..=MAX_DIGITS).contains(&digits) {
            return Err(Error::Config(format!(
                "digits must be in 1..={MAX_DIGITS}, got {digits}"
            )));
        }
        Self::build(Kind::Addition { digits }, SymbolVocab::digits(), seed, batch_size)
    }

    pub fn memorization(symbols: usize, vocab_size: usize, seed: u64, batch_size: usize) -> Result<Self> {
        let stream = gen_memorization(symbols, vocab_size, seed)?;
        Self::build(Kind::Memorization { symbols }, stream.vocab, seed, batch_size)
    }

    fn build(kind: Kind, vocab: SymbolVocab, seed: u64, batch_size: usize) -> Result<Self> {
        let mut task = Self {
            kind,
            vocab,
            rng: ChaCha8Rng::seed_from_u64(seed),
            batch_size,
            test: Vec::new(),
        };
        let mut test_rng = ChaCha8Rng::seed_from_u64(seed);
        test_rng.set_stream(1);
        task.test = (0..TEST_SET_SIZE)
            .map(|_| task.draw(&mut test_rng))
            .collect::<Result<_>>()?;
        Ok(task)
    }

    pub fn vocab(&self) -> &SymbolVocab {
        &self.vocab
    }

    /// Sequence length of every sample.
    pub fn seq_len(&self) -> usize {
        match self.kind {
            Kind::Addition { digits } => 3 * digits + 4,
            Kind::Memorization { symbols } => 2 * symbols + 2,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<Sample> {
        let (input, target, score): (String, String, std::ops::Range<usize>) = match self.kind {
            Kind::Addition { digits } => {
                let hi = 10u64.pow(digits as u32);
                let (a, b) = (rng.gen_range(0..hi), rng.gen_range(0..hi));
                let (i, t) = format_addition(a, b, digits);
                let start = 2 * (digits + 1);
                (i, t, start..start + digits + 1)
            }
            Kind::Memorization { symbols } => {
                let payload: String = (0..symbols)
                    .map(|_| self.vocab.decode(rng.gen_range(1..self.vocab.len())))
                    .collect();
                let (i, t) = format_memorization(&payload);
                (i, t, symbols + 1..2 * symbols + 1)
            }
        };
        self.sample(&input, &target, score)
    }

    fn sample(&self, input: &str, target: &str, score: std::ops::Range<usize>) -> Result<Sample> {
        let t = input.chars().count();
        Ok(Sample {
            inputs: self.vocab.one_hot(input)?,
            targets: self.vocab.encode_str(target)?,
            mask: vec![true; t],
            score: (0..t).map(|i| score.contains(&i)).collect(),
        })
    }

    /// Held-out samples (fixed for a given seed).
    pub fn test_samples(&self) -> &[Sample] {
        &self.test
    }
}

impl Task for AlgorithmicTask {
    fn name(&self) -> String {
        match self.kind {
            Kind::Addition { digits } => format!("addition-{digits}"),
            Kind::Memorization { symbols } => {
                format!("memorization-{symbols}x{}", self.vocab.len())
            }
        }
    }

    fn input_size(&self) -> usize {
        self.vocab.len()
    }

    fn output_size(&self) -> usize {
        self.vocab.len()
    }

    fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn next_batch(&mut self) -> Result<TrainBatch> {
        let mut rng = self.rng.clone();
        let samples = (0..self.batch_size)
            .map(|_| self.draw(&mut rng))
            .collect::<Result<Vec<_>>>()?;
        self.rng = rng;
        Ok(TrainBatch {
            batch: SequenceBatch::from_samples(&samples)?,
            reset_carry: true,
        })
    }

    fn validation(&self) -> Result<Vec<SequenceBatch>> {
        Ok(vec![SequenceBatch::from_samples(&self.test)?])
    }

    fn test(&self) -> Result<Vec<SequenceBatch>> {
        self.validation()
    }

    fn state(&self) -> TaskState {
        TaskState {
            rng: Some(RngState::capture(&self.rng)),
            cursor: 0,
        }
    }

    fn restore(&mut self, state: &TaskState) -> Result<()> {
        let rng = state
            .rng
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("algorithmic task state needs an RNG".into()))?;
        self.rng = rng.restore()?;
        Ok(())
    }
}
