//! The two convolutions of the tensorized cell.
//!
//! Window convention shared by both: along an axis with kernel size `K`, tap
//! `k` (0-based) reads the position `k - K / 2` steps away from the window's
//! anchor. For odd `K` the window is centered; for even `K` the center is
//! ceiled, so `K / 2` taps lie on the input side and `K - 1 - K / 2` on the
//! output side.
//!
//! * The cross-layer convolution reads the concatenated state, whose grid is
//!   one larger than the output grid along every axis. Output location `p`
//!   anchors at concatenated location `p + 1`, which holds the previous hidden
//!   state at `p`. Out-of-range taps read zero.
//! * The memory-cell convolution anchors at `p` itself and replicates
//!   boundary values for out-of-range taps.

use super::{softmax_last_axis, unravel, Tensor};
use crate::error::{Error, Result};

const NO_TAP: u32 = u32::MAX;

/// 0-based index of the (ceiled) center tap for kernel size `k`.
pub fn kernel_center(k: usize) -> usize {
    k / 2
}

/// Signed displacement of every tap from the window anchor.
pub fn kernel_offsets(k: usize) -> impl Iterator<Item = isize> {
    let c = kernel_center(k) as isize;
    (0..k as isize).map(move |i| i - c)
}

/// Weight `K_1 × … × K_r × M^i × M^o` and bias `M^o` of the cross-layer
/// convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossLayerKernel {
    weight: Tensor,
    bias: Tensor,
}

impl CrossLayerKernel {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let ws = weight.shape();
        if ws.len() < 3 || ws.contains(&0) {
            return Err(Error::Config(format!(
                "cross-layer kernel weight needs shape K.. x Mi x Mo with positive sizes, got {ws:?}"
            )));
        }
        if bias.shape() != [ws[ws.len() - 1]] {
            return Err(Error::dim("CrossLayerKernel(bias)", ws, bias.shape()));
        }
        Ok(Self { weight, bias })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn kernel_size(&self) -> &[usize] {
        let s = self.weight.shape();
        &s[..s.len() - 2]
    }

    pub fn in_channels(&self) -> usize {
        let s = self.weight.shape();
        s[s.len() - 2]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.channels()
    }
}

/// Per-location softmax-normalized kernels `P_1 × … × P_r × ⟨K⟩` for the
/// memory-cell convolution; a leading batch axis is allowed.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicKernelBank {
    values: Tensor,
    kernel_size: Vec<usize>,
}

impl DynamicKernelBank {
    /// Wraps already-normalized kernels. Every slice must be nonnegative and
    /// sum to one within `1e-9`.
    pub fn new(values: Tensor, kernel_size: &[usize]) -> Result<Self> {
        let nk: usize = kernel_size.iter().product();
        if values.rank() < 2 || values.channels() != nk || kernel_size.contains(&0) {
            return Err(Error::dim("DynamicKernelBank", values.shape(), kernel_size));
        }
        for (i, slice) in values.data().chunks_exact(nk).enumerate() {
            let total: f64 = slice.iter().sum();
            if slice.iter().any(|&v| v < 0.0 || !v.is_finite()) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::Contract(format!(
                    "kernel slice {i} is not a probability vector (sum {total})"
                )));
            }
        }
        Ok(Self {
            values,
            kernel_size: kernel_size.to_vec(),
        })
    }

    /// Softmax over the last axis of raw activations.
    pub fn from_logits(logits: &Tensor, kernel_size: &[usize]) -> Result<Self> {
        Self::new(softmax_last_axis(logits), kernel_size)
    }

    /// One-hot at the window center for every location.
    pub fn centered(grid: &[usize], kernel_size: &[usize]) -> Self {
        let nk: usize = kernel_size.iter().product();
        let center = kernel_size
            .iter()
            .fold(0, |acc, &k| acc * k + kernel_center(k));
        let mut shape = grid.to_vec();
        shape.push(nk);
        let values = Tensor::from_fn(shape, |i| if i % nk == center { 1.0 } else { 0.0 });
        Self {
            values,
            kernel_size: kernel_size.to_vec(),
        }
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn kernel_size(&self) -> &[usize] {
        &self.kernel_size
    }

    pub fn grid_shape(&self) -> &[usize] {
        let s = self.values.shape();
        &s[..s.len() - 1]
    }
}

/// Precomputed tap table for one cross-layer convolution call.
#[derive(Clone, Debug)]
pub(crate) struct CrossLayerGeometry {
    pub batch: usize,
    pub in_locs: usize,
    pub out_locs: usize,
    pub taps_per_loc: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub out_shape: Vec<usize>,
    taps: Vec<u32>,
}

impl CrossLayerGeometry {
    pub fn new(input_shape: &[usize], weight_shape: &[usize]) -> Result<Self> {
        let err = || Error::dim("cross_layer_conv", input_shape, weight_shape);
        if weight_shape.len() < 3 {
            return Err(err());
        }
        let r = weight_shape.len() - 2;
        let kernel = &weight_shape[..r];
        let (in_ch, out_ch) = (weight_shape[r], weight_shape[r + 1]);
        let lead = match input_shape.len().checked_sub(r + 1) {
            Some(l @ (0 | 1)) => l,
            _ => return Err(err()),
        };
        let batch = if lead == 1 { input_shape[0] } else { 1 };
        let in_grid = &input_shape[lead..lead + r];
        if input_shape[lead + r] != in_ch || in_grid.iter().any(|&n| n < 2) {
            return Err(err());
        }
        let out_grid: Vec<usize> = in_grid.iter().map(|&n| n - 1).collect();
        let out_locs: usize = out_grid.iter().product();
        let in_locs: usize = in_grid.iter().product();
        let taps_per_loc: usize = kernel.iter().product();

        let mut taps = Vec::with_capacity(out_locs * taps_per_loc);
        let mut p = vec![0; r];
        let mut k = vec![0; r];
        for loc in 0..out_locs {
            unravel(loc, &out_grid, &mut p);
            for tap in 0..taps_per_loc {
                unravel(tap, kernel, &mut k);
                let mut flat = 0usize;
                let mut valid = true;
                for d in 0..r {
                    let at = (p[d] + 1 + k[d]) as isize - kernel_center(kernel[d]) as isize;
                    if at < 0 || at as usize >= in_grid[d] {
                        valid = false;
                        break;
                    }
                    flat = flat * in_grid[d] + at as usize;
                }
                taps.push(if valid { flat as u32 } else { NO_TAP });
            }
        }

        let mut out_shape = Vec::with_capacity(input_shape.len());
        if lead == 1 {
            out_shape.push(batch);
        }
        out_shape.extend_from_slice(&out_grid);
        out_shape.push(out_ch);
        Ok(Self {
            batch,
            in_locs,
            out_locs,
            taps_per_loc,
            in_ch,
            out_ch,
            out_shape,
            taps,
        })
    }

    /// Source location read by tap `tap` of output location `loc`.
    pub fn tap(&self, loc: usize, tap: usize) -> Option<usize> {
        match self.taps[loc * self.taps_per_loc + tap] {
            NO_TAP => None,
            q => Some(q as usize),
        }
    }
}

pub(crate) fn cross_layer_conv_raw(
    g: &CrossLayerGeometry,
    x: &[f64],
    w: &[f64],
    b: &[f64],
) -> Vec<f64> {
    let (mi, mo) = (g.in_ch, g.out_ch);
    let mut y = vec![0.0; g.batch * g.out_locs * mo];
    for n in 0..g.batch {
        let xb = &x[n * g.in_locs * mi..(n + 1) * g.in_locs * mi];
        for loc in 0..g.out_locs {
            let acc = &mut y[(n * g.out_locs + loc) * mo..][..mo];
            acc.copy_from_slice(b);
            for tap in 0..g.taps_per_loc {
                let Some(q) = g.tap(loc, tap) else { continue };
                let xin = &xb[q * mi..(q + 1) * mi];
                let wk = &w[tap * mi * mo..(tap + 1) * mi * mo];
                for (&xv, wrow) in xin.iter().zip(wk.chunks_exact(mo)) {
                    if xv == 0.0 {
                        continue;
                    }
                    for (a, &wv) in acc.iter_mut().zip(wrow) {
                        *a += xv * wv;
                    }
                }
            }
        }
    }
    y
}

/// Accumulates input, weight and bias adjoints of the cross-layer convolution.
#[allow(clippy::too_many_arguments)]
pub(crate) fn cross_layer_conv_backward(
    g: &CrossLayerGeometry,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let (mi, mo) = (g.in_ch, g.out_ch);
    if let Some(db) = db {
        for row in dy.chunks_exact(mo) {
            for (a, &v) in db.iter_mut().zip(row) {
                *a += v;
            }
        }
    }
    if let Some(dx) = dx {
        for n in 0..g.batch {
            for loc in 0..g.out_locs {
                let dyl = &dy[(n * g.out_locs + loc) * mo..][..mo];
                for tap in 0..g.taps_per_loc {
                    let Some(q) = g.tap(loc, tap) else { continue };
                    let dxl = &mut dx[(n * g.in_locs + q) * mi..][..mi];
                    let wk = &w[tap * mi * mo..(tap + 1) * mi * mo];
                    for (d, wrow) in dxl.iter_mut().zip(wk.chunks_exact(mo)) {
                        let mut s = 0.0;
                        for (&a, &b) in wrow.iter().zip(dyl) {
                            s += a * b;
                        }
                        *d += s;
                    }
                }
            }
        }
    }
    if let Some(dw) = dw {
        for n in 0..g.batch {
            for loc in 0..g.out_locs {
                let dyl = &dy[(n * g.out_locs + loc) * mo..][..mo];
                for tap in 0..g.taps_per_loc {
                    let Some(q) = g.tap(loc, tap) else { continue };
                    let xin = &x[(n * g.in_locs + q) * mi..][..mi];
                    let dwk = &mut dw[tap * mi * mo..(tap + 1) * mi * mo];
                    for (&xv, dwrow) in xin.iter().zip(dwk.chunks_exact_mut(mo)) {
                        if xv == 0.0 {
                            continue;
                        }
                        for (a, &d) in dwrow.iter_mut().zip(dyl) {
                            *a += xv * d;
                        }
                    }
                }
            }
        }
    }
}

/// Applies the cross-layer convolution to a concatenated state
/// `(P_1+1) × … × (P_r+1) × M^i` (optionally with a leading batch axis),
/// producing `P_1 × … × P_r × M^o`.
pub fn cross_layer_conv(hcat: &Tensor, kernel: &CrossLayerKernel) -> Result<Tensor> {
    let g = CrossLayerGeometry::new(hcat.shape(), kernel.weight.shape())?;
    let y = cross_layer_conv_raw(&g, hcat.data(), kernel.weight.data(), kernel.bias.data());
    Tensor::new(g.out_shape, y)
}

/// Tap table for the memory-cell convolution with replication padding.
#[derive(Clone, Debug)]
pub(crate) struct MemoryGeometry {
    pub batch: usize,
    pub locs: usize,
    pub taps_per_loc: usize,
    pub channels: usize,
    taps: Vec<u32>,
}

impl MemoryGeometry {
    pub fn new(cell_shape: &[usize], bank_shape: &[usize], kernel: &[usize]) -> Result<Self> {
        let err = || Error::dim("memory_cell_conv", cell_shape, bank_shape);
        let r = kernel.len();
        let lead = match cell_shape.len().checked_sub(r + 1) {
            Some(l @ (0 | 1)) => l,
            _ => return Err(err()),
        };
        let taps_per_loc: usize = kernel.iter().product();
        let rank = cell_shape.len();
        if bank_shape.len() != rank
            || bank_shape[..rank - 1] != cell_shape[..rank - 1]
            || bank_shape[rank - 1] != taps_per_loc
        {
            return Err(err());
        }
        let grid = &cell_shape[lead..lead + r];
        let locs: usize = grid.iter().product();
        let mut taps = Vec::with_capacity(locs * taps_per_loc);
        let mut p = vec![0; r];
        let mut k = vec![0; r];
        for loc in 0..locs {
            unravel(loc, grid, &mut p);
            for tap in 0..taps_per_loc {
                unravel(tap, kernel, &mut k);
                let mut flat = 0usize;
                for d in 0..r {
                    let at = (p[d] + k[d]) as isize - kernel_center(kernel[d]) as isize;
                    let at = at.clamp(0, grid[d] as isize - 1) as usize;
                    flat = flat * grid[d] + at;
                }
                taps.push(flat as u32);
            }
        }
        Ok(Self {
            batch: if lead == 1 { cell_shape[0] } else { 1 },
            locs,
            taps_per_loc,
            channels: cell_shape[rank - 1],
            taps,
        })
    }

    pub fn tap(&self, loc: usize, tap: usize) -> usize {
        self.taps[loc * self.taps_per_loc + tap] as usize
    }
}

pub(crate) fn memory_cell_conv_raw(g: &MemoryGeometry, c: &[f64], bank: &[f64]) -> Vec<f64> {
    let (m, nk) = (g.channels, g.taps_per_loc);
    let mut y = vec![0.0; c.len()];
    for n in 0..g.batch {
        let cb = &c[n * g.locs * m..(n + 1) * g.locs * m];
        for loc in 0..g.locs {
            let acc = &mut y[(n * g.locs + loc) * m..][..m];
            let q = &bank[(n * g.locs + loc) * nk..][..nk];
            for (tap, &wv) in q.iter().enumerate() {
                let src = &cb[g.tap(loc, tap) * m..][..m];
                for (a, &v) in acc.iter_mut().zip(src) {
                    *a += wv * v;
                }
            }
        }
    }
    y
}

/// Accumulates cell and kernel-bank adjoints. Taps that were clamped at the
/// boundary route their gradient into the replicated source cell.
pub(crate) fn memory_cell_conv_backward(
    g: &MemoryGeometry,
    c: &[f64],
    bank: &[f64],
    dy: &[f64],
    dc: Option<&mut [f64]>,
    dbank: Option<&mut [f64]>,
) {
    let (m, nk) = (g.channels, g.taps_per_loc);
    if let Some(dc) = dc {
        for n in 0..g.batch {
            let dcb = &mut dc[n * g.locs * m..(n + 1) * g.locs * m];
            for loc in 0..g.locs {
                let dyl = &dy[(n * g.locs + loc) * m..][..m];
                let q = &bank[(n * g.locs + loc) * nk..][..nk];
                for (tap, &wv) in q.iter().enumerate() {
                    let dst = &mut dcb[g.tap(loc, tap) * m..][..m];
                    for (a, &d) in dst.iter_mut().zip(dyl) {
                        *a += wv * d;
                    }
                }
            }
        }
    }
    if let Some(dbank) = dbank {
        for n in 0..g.batch {
            let cb = &c[n * g.locs * m..(n + 1) * g.locs * m];
            for loc in 0..g.locs {
                let dyl = &dy[(n * g.locs + loc) * m..][..m];
                let dq = &mut dbank[(n * g.locs + loc) * nk..][..nk];
                for (tap, d) in dq.iter_mut().enumerate() {
                    let src = &cb[g.tap(loc, tap) * m..][..m];
                    let mut s = 0.0;
                    for (&a, &b) in src.iter().zip(dyl) {
                        s += a * b;
                    }
                    *d += s;
                }
            }
        }
    }
}

/// Convolves every channel of `c` (`P_1 × … × P_r × M`, optionally batched)
/// with the location-dependent kernel stored in `bank`, replicating boundary
/// values.
pub fn memory_cell_conv(c: &Tensor, bank: &DynamicKernelBank) -> Result<Tensor> {
    let g = MemoryGeometry::new(c.shape(), bank.values.shape(), &bank.kernel_size)?;
    let y = memory_cell_conv_raw(&g, c.data(), bank.values.data());
    Tensor::new(c.shape().to_vec(), y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::tensor::affine;

    #[test]
    fn offsets_ceil_the_center_for_even_kernels() {
        assert_eq!(kernel_offsets(3).collect::<Vec<_>>(), vec![-1, 0, 1]);
        assert_eq!(kernel_offsets(2).collect::<Vec<_>>(), vec![-1, 0]);
        assert_eq!(kernel_offsets(4).collect::<Vec<_>>(), vec![-2, -1, 0, 1]);
        assert_eq!(kernel_offsets(1).collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn unit_kernel_is_a_per_location_affine_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hcat = Tensor::uniform([4, 4, 3], -1.0, 1.0, &mut rng);
        let w = Tensor::uniform([1, 1, 3, 5], -1.0, 1.0, &mut rng);
        let b = Tensor::uniform([5], -1.0, 1.0, &mut rng);
        let k = CrossLayerKernel::new(w.clone(), b.clone()).unwrap();
        let y = cross_layer_conv(&hcat, &k).unwrap();
        assert_eq!(y.shape(), &[3, 3, 5]);
        let w2 = w.reshape([3, 5]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let row = Tensor::new([3], (0..3).map(|c| hcat.get(&[i + 1, j + 1, c])).collect())
                    .unwrap();
                let want = affine(&row, &w2, &b).unwrap();
                for o in 0..5 {
                    assert!((y.get(&[i, j, o]) - want.data()[o]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn zero_weights_give_bias_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let hcat = Tensor::uniform([4, 2], -1.0, 1.0, &mut rng);
        let b = Tensor::new([3], vec![0.5, -1.0, 2.0]).unwrap();
        let k = CrossLayerKernel::new(Tensor::zeros([3, 2, 3]), b.clone()).unwrap();
        let y = cross_layer_conv(&hcat, &k).unwrap();
        for row in y.data().chunks(3) {
            assert_eq!(row, b.data());
        }
    }

    #[test]
    fn cross_layer_conv_rejects_channel_mismatch() {
        let k = CrossLayerKernel::new(Tensor::zeros([3, 2, 3]), Tensor::zeros([3])).unwrap();
        assert!(cross_layer_conv(&Tensor::zeros([4, 3]), &k).is_err());
        assert!(CrossLayerKernel::new(Tensor::zeros([3, 2, 3]), Tensor::zeros([2])).is_err());
    }

    #[test]
    fn identity_bank_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in [2, 3, 4] {
            let c = Tensor::uniform([3, 3, 2], -1.0, 1.0, &mut rng);
            let bank = DynamicKernelBank::centered(&[3, 3], &[k, k]);
            assert_eq!(memory_cell_conv(&c, &bank).unwrap(), c);
        }
    }

    #[test]
    fn single_location_grid_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = Tensor::uniform([1, 4], -1.0, 1.0, &mut rng);
        let logits = Tensor::uniform([1, 3], -2.0, 2.0, &mut rng);
        let bank = DynamicKernelBank::from_logits(&logits, &[3]).unwrap();
        let y = memory_cell_conv(&c, &bank).unwrap();
        assert!(y.max_abs_diff(&c) < 1e-15);
    }

    #[test]
    fn bank_validation() {
        assert!(DynamicKernelBank::new(Tensor::new([1, 2], vec![0.5, 0.6]).unwrap(), &[2]).is_err());
        assert!(DynamicKernelBank::new(Tensor::new([1, 2], vec![1.5, -0.5]).unwrap(), &[2]).is_err());
        assert!(DynamicKernelBank::new(Tensor::new([1, 3], vec![0.5, 0.5, 0.0]).unwrap(), &[2]).is_err());
        let c = Tensor::zeros([3, 2]);
        let bank = DynamicKernelBank::centered(&[2], &[3]);
        assert!(memory_cell_conv(&c, &bank).is_err());
    }
}
