use super::Tensor;
use crate::error::{Error, Result};

/// Added to the variance before the square root.
pub const NORM_EPS: f64 = 1e-5;

/// Saved statistics of a normalization forward pass.
#[derive(Clone, Debug)]
pub(crate) struct NormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub group: usize,
}

/// Normalizes consecutive groups of `group` values with their own mean and
/// population standard deviation, then applies `gain`/`bias`, which are
/// broadcast over any leading axes of `z`.
pub(crate) fn normalize_forward(
    z: &[f64],
    gain: &[f64],
    bias: &[f64],
    group: usize,
) -> (Vec<f64>, NormCache) {
    let mut xhat = vec![0.0; z.len()];
    let mut inv_std = Vec::with_capacity(z.len() / group);
    for (src, dst) in z.chunks_exact(group).zip(xhat.chunks_exact_mut(group)) {
        let mean = src.iter().sum::<f64>() / group as f64;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / group as f64;
        let inv = 1.0 / (var + NORM_EPS).sqrt();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - mean) * inv;
        }
        inv_std.push(inv);
    }
    let g = gain.len();
    let y = xhat
        .iter()
        .enumerate()
        .map(|(i, &v)| v * gain[i % g] + bias[i % g])
        .collect();
    (
        y,
        NormCache {
            xhat,
            inv_std,
            group,
        },
    )
}

pub(crate) fn normalize_backward(
    cache: &NormCache,
    gain: &[f64],
    dy: &[f64],
    dz: Option<&mut [f64]>,
    dgain: Option<&mut [f64]>,
    dbias: Option<&mut [f64]>,
) {
    let g = gain.len();
    if let Some(dgain) = dgain {
        for (i, (&d, &x)) in dy.iter().zip(&cache.xhat).enumerate() {
            dgain[i % g] += d * x;
        }
    }
    if let Some(dbias) = dbias {
        for (i, &d) in dy.iter().enumerate() {
            dbias[i % g] += d;
        }
    }
    if let Some(dz) = dz {
        let n = cache.group;
        let mut dxhat = vec![0.0; n];
        for (gi, ((dyg, xg), dzg)) in dy
            .chunks_exact(n)
            .zip(cache.xhat.chunks_exact(n))
            .zip(dz.chunks_exact_mut(n))
            .enumerate()
        {
            let base = gi * n;
            for (j, d) in dxhat.iter_mut().enumerate() {
                *d = dyg[j] * gain[(base + j) % g];
            }
            let mean_d = dxhat.iter().sum::<f64>() / n as f64;
            let mean_dx = dxhat.iter().zip(xg).map(|(a, b)| a * b).sum::<f64>() / n as f64;
            let inv = cache.inv_std[gi];
            for j in 0..n {
                dzg[j] += inv * (dxhat[j] - mean_d - xg[j] * mean_dx);
            }
        }
    }
}

fn check_affine_shapes(op: &'static str, z: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<()> {
    if gain.shape() != bias.shape() {
        return Err(Error::dim(op, gain.shape(), bias.shape()));
    }
    let (zr, gr) = (z.rank(), gain.rank());
    if gr == 0 || zr < gr || zr > gr + 1 || z.shape()[zr - gr..] != *gain.shape() {
        return Err(Error::dim(op, z.shape(), gain.shape()));
    }
    Ok(())
}

/// Channel normalization: every location's channel vector is normalized
/// with its own statistics, then scaled by `gain` and shifted by `bias`
/// (both `P-grid × M`). A leading batch axis on `z` is allowed.
pub fn channel_norm(z: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    check_affine_shapes("channel_norm", z, gain, bias)?;
    let (y, _) = normalize_forward(z.data(), gain.data(), bias.data(), z.channels());
    Tensor::new(z.shape().to_vec(), y)
}

/// Layer normalization: one mean and standard deviation per example over all
/// of its grid and channel entries.
pub fn layer_norm(z: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    check_affine_shapes("layer_norm", z, gain, bias)?;
    let (y, _) = normalize_forward(z.data(), gain.data(), bias.data(), gain.len());
    Tensor::new(z.shape().to_vec(), y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_channels_normalize_to_zero() {
        let z = Tensor::new([2, 3], vec![4.0, 4.0, 4.0, 1.0, 2.0, 3.0]).unwrap();
        let y = channel_norm(&z, &Tensor::full([2, 3], 1.0), &Tensor::zeros([2, 3])).unwrap();
        assert_eq!(&y.data()[..3], &[0.0, 0.0, 0.0]);
        let y = layer_norm(&Tensor::full([2, 2], 7.0), &Tensor::full([2, 2], 1.0), &Tensor::zeros([2, 2]))
            .unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_channel_example() {
        // mean 2, population std 1
        let z = Tensor::new([1, 2], vec![1.0, 3.0]).unwrap();
        let ones = Tensor::full([1, 2], 1.0);
        let zeros = Tensor::zeros([1, 2]);
        for y in [
            channel_norm(&z, &ones, &zeros).unwrap(),
            layer_norm(&z, &ones, &zeros).unwrap(),
        ] {
            assert!((y.data()[0] + 1.0).abs() < 1e-5);
            assert!((y.data()[1] - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_gain_broadcasts_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = Tensor::uniform([3, 2, 4], -3.0, 3.0, &mut rng);
        let b = Tensor::uniform([2, 4], -1.0, 1.0, &mut rng);
        let zero = Tensor::zeros([2, 4]);
        for y in [channel_norm(&z, &zero, &b).unwrap(), layer_norm(&z, &zero, &b).unwrap()] {
            for chunk in y.data().chunks(8) {
                assert_eq!(chunk, b.data());
            }
        }
    }

    #[test]
    fn layer_norm_uses_whole_example_statistics() {
        let z = Tensor::new([2, 2], vec![0.0, 0.0, 2.0, 2.0]).unwrap();
        let ones = Tensor::full([2, 2], 1.0);
        let zeros = Tensor::zeros([2, 2]);
        let cn = channel_norm(&z, &ones, &zeros).unwrap();
        let ln = layer_norm(&z, &ones, &zeros).unwrap();
        assert!(cn.data().iter().all(|&v| v == 0.0));
        assert!(ln.data()[0] < -0.99 && ln.data()[3] > 0.99);
    }

    #[test]
    fn shape_errors() {
        let z = Tensor::zeros([2, 3]);
        assert!(channel_norm(&z, &Tensor::zeros([2, 2]), &Tensor::zeros([2, 2])).is_err());
        assert!(channel_norm(&z, &Tensor::zeros([2, 3]), &Tensor::zeros([3])).is_err());
    }
}
