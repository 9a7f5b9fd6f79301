//! Reference implementations and generators shared by integration tests.
//!
//! The convolution oracles follow the summation formulas literally with
//! 1-based indices: tap `k = 1..=K` of output location `p` reads position
//! `p - ceil((K - 1) / 2) + k` of the concatenated state (whose first slot
//! along every axis is the input projection), and position
//! `p - ceil((K - 1) / 2) + k - 1` of the memory cell, clamped to the grid.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tlstm::tensor::Tensor;
use tlstm::{Norm, TlstmConfig, Variant};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `ceil((K - 1) / 2)`, the number of taps before the (ceiled) center.
fn half_span(k: usize) -> isize {
    (k as isize - 1 + 1) / 2
}

/// Every multi-index of `shape` in row-major order.
pub fn multi_indices(shape: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &n in shape {
        let mut next = Vec::new();
        for prefix in &out {
            for i in 0..n {
                let mut v = prefix.clone();
                v.push(i);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

fn flat(shape: &[usize], idx: &[usize]) -> usize {
    idx.iter().zip(shape).fold(0, |acc, (&i, &n)| acc * n + i)
}

/// Hidden-state convolution over an unbatched concatenated state with grid
/// `[P + 1; r]`; `weight` is `[K; r] × Mi × Mo`.
pub fn naive_cross_layer(hcat: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let ws = weight.shape();
    let r = ws.len() - 2;
    let (k, mi, mo) = (ws[0], ws[r], ws[r + 1]);
    let p = hcat.shape()[0] - 1;
    let grid = vec![p; r];
    let kernel = vec![k; r];
    let mut out_shape = grid.clone();
    out_shape.push(mo);
    let mut out = Tensor::zeros(out_shape.clone());
    for loc in multi_indices(&grid) {
        for o in 0..mo {
            let mut acc = bias.data()[o];
            for tap in multi_indices(&kernel) {
                // 1-based: location p1 = loc + 1, tap k1 = tap + 1.
                let src: Vec<isize> = loc
                    .iter()
                    .zip(&tap)
                    .map(|(&l, &t)| (l as isize + 1) - half_span(k) + (t as isize + 1))
                    .collect();
                if src.iter().any(|&s| s < 1 || s > p as isize + 1) {
                    continue;
                }
                let src0: Vec<usize> = src.iter().map(|&s| (s - 1) as usize).collect();
                for i in 0..mi {
                    let mut hidx = src0.clone();
                    hidx.push(i);
                    let mut widx = tap.clone();
                    widx.push(i);
                    widx.push(o);
                    acc += hcat.get(&hidx) * weight.get(&widx);
                }
            }
            let mut oidx = loc.clone();
            oidx.push(o);
            out.set(&oidx, acc);
        }
    }
    out
}

/// Memory-cell convolution over an unbatched cell `[P; r] × M` with a bank
/// `[P; r] × K^r`, replicating boundary values.
pub fn naive_memory_cell(c: &Tensor, bank: &Tensor, k: usize) -> Tensor {
    let cs = c.shape();
    let r = cs.len() - 1;
    let (p, m) = (cs[0], cs[r]);
    let grid = vec![p; r];
    let kernel = vec![k; r];
    let mut out = Tensor::zeros(cs.to_vec());
    for loc in multi_indices(&grid) {
        for ch in 0..m {
            let mut acc = 0.0;
            for tap in multi_indices(&kernel) {
                let src: Vec<usize> = loc
                    .iter()
                    .zip(&tap)
                    .map(|(&l, &t)| {
                        let s1 = (l as isize + 1) - half_span(k) + (t as isize + 1) - 1;
                        (s1.clamp(1, p as isize) - 1) as usize
                    })
                    .collect();
                let mut cidx = src;
                cidx.push(ch);
                let mut bidx = loc.clone();
                bidx.push(flat(&kernel, &tap));
                acc += c.get(&cidx) * bank.get(&bidx);
            }
            let mut oidx = loc.clone();
            oidx.push(ch);
            out.set(&oidx, acc);
        }
    }
    out
}

/// Values of the replication-padded window around `loc` for channel `ch`.
pub fn padded_window(c: &Tensor, loc: &[usize], ch: usize, k: usize) -> Vec<f64> {
    let p = c.shape()[0] as isize;
    let kernel = vec![k; loc.len()];
    multi_indices(&kernel)
        .into_iter()
        .map(|tap| {
            let mut idx: Vec<usize> = loc
                .iter()
                .zip(&tap)
                .map(|(&l, &t)| (l as isize - half_span(k) + t as isize).clamp(0, p - 1) as usize)
                .collect();
            idx.push(ch);
            c.get(&idx)
        })
        .collect()
}

pub fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape.to_vec(), -1.0, 1.0, rng)
}

/// Random rows that are probability vectors (softmax of random logits).
pub fn random_bank(grid: &[usize], taps: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut shape = grid.to_vec();
    shape.push(taps);
    let logits = Tensor::uniform(shape, -3.0, 3.0, rng);
    tlstm::tensor::softmax_last_axis(&logits)
}

/// Small random architecture for end-to-end properties. Normalized configs
/// get at least three channels: two normalized channels are always close to
/// `±1`, which leaves almost no dependence on the input.
pub fn random_config(rng: &mut ChaCha8Rng, norms: &[Norm]) -> TlstmConfig {
    let variant = [Variant::Trnn, Variant::TlstmNoMem, Variant::Tlstm, Variant::Slstm][rng.gen_range(0..4)];
    let norm = if variant == Variant::Slstm {
        Norm::None
    } else {
        norms[rng.gen_range(0..norms.len())]
    };
    TlstmConfig {
        dims: rng.gen_range(2..=3),
        tensor_size: rng.gen_range(1..=3),
        channels: rng.gen_range(if norm == Norm::None { 2 } else { 3 }..=4),
        kernel: rng.gen_range(2..=4),
        variant,
        norm,
        input_size: rng.gen_range(1..=3),
        output_size: rng.gen_range(2..=3),
    }
}
