use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{RngState, Task, TaskState, TrainBatch};
use crate::error::{Error, Result};
use crate::sequence::{Sample, SequenceBatch};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
pub const MNIST_SIDE: usize = 28;
/// Side of the area-averaged small variant.
pub const SMALL_SIDE: usize = 8;
/// Seed of the fixed permuted-pixel order.
pub const PMNIST_SEED: u64 = 20_170_521;

const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";
const VALIDATION_SIZE: usize = 10_000;

/// Order in which pixels are fed to the network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelOrder {
    perm: Vec<usize>,
}

impl PixelOrder {
    /// Scanline order.
    pub fn identity(n: usize) -> Self {
        Self {
            perm: (0..n).collect(),
        }
    }

    /// A fixed random order determined by `seed`.
    pub fn permuted(n: usize, seed: u64) -> Self {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Self { perm }
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.perm
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.perm.len()];
        for &p in &self.perm {
            if p >= seen.len() || std::mem::replace(&mut seen[p], true) {
                return false;
            }
        }
        true
    }

    /// `out[t] = pixels[perm[t]]`.
    pub fn apply(&self, pixels: &[f64]) -> Vec<f64> {
        self.perm.iter().map(|&p| pixels[p]).collect()
    }
}

fn data_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Data {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| data_err(path, format!("cannot read IDX file: {e}")))
}

/// Parses an IDX image file: returns `(rows, cols, pixels)` with one
/// `rows × cols` byte vector per image.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, Vec<Vec<u8>>)> {
    let bytes = read_file(path)?;
    if bytes.len() < 16 || read_u32(&bytes, 0) != IMAGE_MAGIC {
        return Err(data_err(
            path,
            format!("not an IDX image file (expected big-endian magic {IMAGE_MAGIC})"),
        ));
    }
    let n = read_u32(&bytes, 4) as usize;
    let rows = read_u32(&bytes, 8) as usize;
    let cols = read_u32(&bytes, 12) as usize;
    let size = rows * cols;
    if bytes.len() != 16 + n * size {
        return Err(data_err(
            path,
            format!("truncated: header says {n} images of {rows}x{cols}, file has {} bytes", bytes.len()),
        ));
    }
    Ok((rows, cols, bytes[16..].chunks_exact(size.max(1)).map(<[u8]>::to_vec).collect()))
}

/// Parses an IDX label file.
pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    if bytes.len() < 8 || read_u32(&bytes, 0) != LABEL_MAGIC {
        return Err(data_err(
            path,
            format!("not an IDX label file (expected big-endian magic {LABEL_MAGIC})"),
        ));
    }
    let n = read_u32(&bytes, 4) as usize;
    if bytes.len() != 8 + n {
        return Err(data_err(path, format!("truncated: header says {n} labels")));
    }
    if let Some(bad) = bytes[8..].iter().find(|&&l| l > 9) {
        return Err(data_err(path, format!("label {bad} out of range 0..=9")));
    }
    Ok(bytes[8..].to_vec())
}

/// Area-averages a square `side × side` image down to `out × out`,
/// weighting source pixels by their fractional overlap.
pub fn downsample(pixels: &[f64], side: usize, out: usize) -> Vec<f64> {
    let scale = side as f64 / out as f64;
    let weights: Vec<Vec<f64>> = (0..out)
        .map(|i| {
            let (lo, hi) = (i as f64 * scale, (i + 1) as f64 * scale);
            (0..side)
                .map(|k| ((k + 1) as f64).min(hi) - (k as f64).max(lo))
                .map(|w| w.max(0.0) / scale)
                .collect()
        })
        .collect();
    let mut result = vec![0.0; out * out];
    for (i, wr) in weights.iter().enumerate() {
        for (j, wc) in weights.iter().enumerate() {
            let mut acc = 0.0;
            for (r, &a) in wr.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (c, &b) in wc.iter().enumerate() {
                    acc += a * b * pixels[r * side + c];
                }
            }
            result[i * out + j] = acc;
        }
    }
    result
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MnistSplit {
    Train,
    Validation,
    Test,
}

/// Images and labels of one split.
#[derive(Clone, Debug)]
pub struct MnistSet {
    side: usize,
    small: bool,
    images: Vec<Vec<u8>>,
    labels: Vec<u8>,
}

/// Loads one split from the four standard IDX files in `root`.
///
/// The training file provides the training split (all but the last 10000
/// images) and the validation split (the last 10000). Smaller files (at
/// most 20000 images) use their last sixth for validation. The test file
/// is the test split.
pub fn load_mnist(root: &Path, split: MnistSplit, downsample: bool) -> Result<MnistSet> {
    let (img, lab) = match split {
        MnistSplit::Test => (TEST_IMAGES, TEST_LABELS),
        _ => (TRAIN_IMAGES, TRAIN_LABELS),
    };
    let (ip, lp): (PathBuf, PathBuf) = (root.join(img), root.join(lab));
    let (rows, cols, mut images) = read_idx_images(&ip)?;
    let mut labels = read_idx_labels(&lp)?;
    if rows != cols {
        return Err(data_err(&ip, format!("expected square images, got {rows}x{cols}")));
    }
    if labels.len() != images.len() {
        return Err(data_err(
            &lp,
            format!("{} labels for {} images", labels.len(), images.len()),
        ));
    }
    if split != MnistSplit::Test {
        let n = images.len();
        let valid = if n > 2 * VALIDATION_SIZE { VALIDATION_SIZE } else { n / 6 };
        let cut = n - valid;
        if split == MnistSplit::Train {
            images.truncate(cut);
            labels.truncate(cut);
        } else {
            images.drain(..cut);
            labels.drain(..cut);
        }
    }
    Ok(MnistSet {
        side: rows,
        small: downsample,
        images,
        labels,
    })
}

impl MnistSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Pixels per sequence.
    pub fn seq_len(&self) -> usize {
        if self.small {
            SMALL_SIDE * SMALL_SIDE
        } else {
            self.side * self.side
        }
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    /// Intensities in `[0, 1]`, row-major (downsampled if configured).
    pub fn pixels(&self, i: usize) -> Vec<f64> {
        let raw: Vec<f64> = self.images[i].iter().map(|&p| f64::from(p) / 255.0).collect();
        if self.small {
            downsample(&raw, self.side, SMALL_SIDE)
        } else {
            raw
        }
    }

    /// One scalar pixel per step in `order`; only the final position carries
    /// a loss.
    pub fn sample(&self, i: usize, order: &PixelOrder) -> Result<Sample> {
        let t = self.seq_len();
        if order.len() != t {
            return Err(Error::dim("MnistSet::sample", &[t], &[order.len()]));
        }
        let mut mask = vec![false; t];
        mask[t - 1] = true;
        Ok(Sample {
            inputs: Tensor::new([t, 1], order.apply(&self.pixels(i)))?,
            targets: vec![usize::from(self.labels[i]); t],
            score: mask.clone(),
            mask,
        })
    }

    fn batches(&self, order: &PixelOrder, size: usize) -> Result<Vec<SequenceBatch>> {
        let idx: Vec<usize> = (0..self.len()).collect();
        idx.chunks(size.max(1))
            .map(|c| {
                let s = c.iter().map(|&i| self.sample(i, order)).collect::<Result<Vec<_>>>()?;
                SequenceBatch::from_samples(&s)
            })
            .collect()
    }
}

/// Pixel-by-pixel digit classification, optionally with permuted pixels.
/// Each epoch visits the training split in a fresh seeded order.
#[derive(Clone, Debug)]
pub struct MnistTask {
    train: MnistSet,
    validation: MnistSet,
    test: MnistSet,
    order: PixelOrder,
    permuted: bool,
    batch_size: usize,
    epoch_rng: ChaCha8Rng,
    rng: ChaCha8Rng,
    visit: Vec<usize>,
    cursor: usize,
}

impl MnistTask {
    pub fn load(root: &Path, permuted: bool, small: bool, seed: u64, batch_size: usize) -> Result<Self> {
        let train = load_mnist(root, MnistSplit::Train, small)?;
        let validation = load_mnist(root, MnistSplit::Validation, small)?;
        let test = load_mnist(root, MnistSplit::Test, small)?;
        if train.is_empty() || validation.is_empty() {
            return Err(data_err(root, "training file too small to split"));
        }
        let t = train.seq_len();
        let order = if permuted {
            PixelOrder::permuted(t, PMNIST_SEED)
        } else {
            PixelOrder::identity(t)
        };
        let rng = ChaCha8Rng::seed_from_u64(seed);
        let mut task = Self {
            train,
            validation,
            test,
            order,
            permuted,
            batch_size,
            epoch_rng: rng.clone(),
            rng,
            visit: Vec::new(),
            cursor: 0,
        };
        task.start_epoch();
        Ok(task)
    }

    fn start_epoch(&mut self) {
        self.epoch_rng = self.rng.clone();
        self.visit = (0..self.train.len()).collect();
        self.visit.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    pub fn order(&self) -> &PixelOrder {
        &self.order
    }
}

impl Task for MnistTask {
    fn name(&self) -> String {
        let side = if self.train.small { SMALL_SIDE } else { self.train.side };
        format!("{}mnist-{side}x{side}", if self.permuted { "p" } else { "" })
    }

    fn input_size(&self) -> usize {
        1
    }

    fn output_size(&self) -> usize {
        10
    }

    fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn image_task(&self) -> bool {
        true
    }

    fn samples_per_epoch(&self) -> Option<u64> {
        Some(self.train.len() as u64)
    }

    fn next_batch(&mut self) -> Result<TrainBatch> {
        let mut samples = Vec::with_capacity(self.batch_size);
        while samples.len() < self.batch_size {
            if self.cursor == self.visit.len() {
                self.start_epoch();
            }
            samples.push(self.train.sample(self.visit[self.cursor], &self.order)?);
            self.cursor += 1;
        }
        Ok(TrainBatch {
            batch: SequenceBatch::from_samples(&samples)?,
            reset_carry: true,
        })
    }

    fn validation(&self) -> Result<Vec<SequenceBatch>> {
        self.validation.batches(&self.order, 100)
    }

    fn test(&self) -> Result<Vec<SequenceBatch>> {
        self.test.batches(&self.order, 100)
    }

    fn state(&self) -> TaskState {
        TaskState {
            rng: Some(RngState::capture(&self.epoch_rng)),
            cursor: self.cursor as u64,
        }
    }

    fn restore(&mut self, state: &TaskState) -> Result<()> {
        let rng = state
            .rng
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("MNIST task state needs an RNG".into()))?;
        self.rng = rng.restore()?;
        self.start_epoch();
        self.cursor = state.cursor as usize;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn write_idx(dir: &Path, images: &str, labels: &str, n: usize, side: usize) {
        let mut img = Vec::new();
        for v in [IMAGE_MAGIC, n as u32, side as u32, side as u32] {
            img.extend(v.to_be_bytes());
        }
        let mut lab = Vec::new();
        for v in [LABEL_MAGIC, n as u32] {
            lab.extend(v.to_be_bytes());
        }
        for i in 0..n {
            img.extend((0..side * side).map(|p| ((i * 31 + p * 7) % 256) as u8));
            lab.push((i % 10) as u8);
        }
        std::fs::write(dir.join(images), img).unwrap();
        std::fs::write(dir.join(labels), lab).unwrap();
    }

    fn fixture(n_train: usize) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        write_idx(dir.path(), TRAIN_IMAGES, TRAIN_LABELS, n_train, 28);
        write_idx(dir.path(), TEST_IMAGES, TEST_LABELS, 12, 28);
        dir
    }

    #[test]
    fn orders() {
        let id = PixelOrder::identity(784);
        assert_eq!(id.as_slice()[0], 0);
        let p = PixelOrder::permuted(784, PMNIST_SEED);
        assert!(p.is_bijection());
        assert_eq!(p, PixelOrder::permuted(784, PMNIST_SEED));
        assert_ne!(p, id);
        assert!(!PixelOrder { perm: vec![0, 0] }.is_bijection());
    }

    #[test]
    fn loads_and_splits() {
        let dir = fixture(60);
        let train = load_mnist(dir.path(), MnistSplit::Train, false).unwrap();
        let valid = load_mnist(dir.path(), MnistSplit::Validation, false).unwrap();
        let test = load_mnist(dir.path(), MnistSplit::Test, false).unwrap();
        assert_eq!((train.len(), valid.len(), test.len()), (50, 10, 12));
        assert_eq!(valid.label(0), 0);
        let s = train.sample(0, &PixelOrder::identity(784)).unwrap();
        assert_eq!(s.inputs.shape(), &[784, 1]);
        assert_eq!(s.inputs.get(&[0, 0]), train.pixels(0)[0]);
        assert_eq!(s.mask.iter().filter(|&&m| m).count(), 1);
        assert!(s.mask[783]);
    }

    #[test]
    fn permutation_preserves_pixel_multiset() {
        let dir = fixture(12);
        let set = load_mnist(dir.path(), MnistSplit::Train, false).unwrap();
        let a = set.sample(3, &PixelOrder::identity(784)).unwrap();
        let b = set.sample(3, &PixelOrder::permuted(784, PMNIST_SEED)).unwrap();
        let sorted = |t: &Tensor| {
            let mut v = t.data().to_vec();
            v.sort_by(f64::total_cmp);
            v
        };
        assert_eq!(sorted(&a.inputs), sorted(&b.inputs));
        assert_ne!(a.inputs, b.inputs);
    }

    #[test]
    fn corrupt_files_name_magic() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(TRAIN_IMAGES), [0u8; 20]).unwrap();
        let err = load_mnist(dir.path(), MnistSplit::Train, false).unwrap_err();
        assert!(err.to_string().contains("2051"), "{err}");
        let err = load_mnist(Path::new("/nonexistent"), MnistSplit::Test, false).unwrap_err();
        assert!(err.to_string().contains(TEST_IMAGES), "{err}");
    }

    #[test]
    fn downsample_preserves_mean() {
        let img: Vec<f64> = (0..784).map(|i| (i % 17) as f64 / 16.0).collect();
        let small = downsample(&img, 28, 8);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean(&small) - mean(&img)).abs() < 1e-12);
        assert!(downsample(&vec![0.5; 784], 28, 8).iter().all(|v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn task_resumes_mid_epoch() {
        let dir = fixture(30);
        let mut a = MnistTask::load(dir.path(), true, true, 4, 7).unwrap();
        a.next_batch().unwrap();
        let s = a.state();
        let want: Vec<_> = (0..5).map(|_| a.next_batch().unwrap().batch).collect();
        let mut b = MnistTask::load(dir.path(), true, true, 4, 7).unwrap();
        b.restore(&s).unwrap();
        let got: Vec<_> = (0..5).map(|_| b.next_batch().unwrap().batch).collect();
        assert_eq!(want, got);
        assert_eq!(want[0].len(), 64);
    }
}
