use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const LN_EPS: f64 = 1e-5;

/// Saved statistics for the backward pass.
#[derive(Clone, Debug)]
pub struct LnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Normalizes every contiguous group of `group` values to zero mean and unit
/// variance (biased estimator, `ε` added to the variance), then applies the
/// optional per-feature `gain`/`shift` of length `group`.
pub fn layernorm_forward<T: Scalar>(
    x: &[T],
    group: usize,
    gain: Option<&[T]>,
    shift: Option<&[T]>,
) -> Result<(Vec<T>, LnCache<T>)> {
    if group == 0 || x.len() % group != 0 {
        return Err(Error::shape("layernorm", &[x.len()], &[group]));
    }
    for p in [gain, shift].into_iter().flatten() {
        if p.len() != group {
            return Err(Error::shape("layernorm affine", &[p.len()], &[group]));
        }
    }
    let eps = T::lit(LN_EPS);
    let g = T::from_usize(group).unwrap();
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(x.len() / group);
    for ((xs, hs), ys) in x
        .chunks_exact(group)
        .zip(xhat.chunks_exact_mut(group))
        .zip(y.chunks_exact_mut(group))
    {
        let mean = xs.iter().copied().sum::<T>() / g;
        let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / g;
        let inv = T::one() / (var + eps).sqrt();
        inv_std.push(inv);
        for (i, (&v, h)) in xs.iter().zip(hs.iter_mut()).enumerate() {
            *h = (v - mean) * inv;
            let mut out = *h;
            if let Some(gain) = gain {
                out *= gain[i];
            }
            if let Some(shift) = shift {
                out += shift[i];
            }
            ys[i] = out;
        }
    }
    Ok((y, LnCache { xhat, inv_std }))
}

/// Returns `(dx, dgain, dshift)`; the affine gradients are zero-length when
/// no gain was used.
pub fn layernorm_backward<T: Scalar>(
    dy: &[T],
    group: usize,
    cache: &LnCache<T>,
    gain: Option<&[T]>,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let g = T::from_usize(group).unwrap();
    let mut dx = vec![T::zero(); dy.len()];
    let affine = gain.is_some();
    let mut dgain = vec![T::zero(); if affine { group } else { 0 }];
    let mut dshift = vec![T::zero(); if affine { group } else { 0 }];
    let mut dxhat = vec![T::zero(); group];
    for (((dys, hs), dxs), &inv) in dy
        .chunks_exact(group)
        .zip(cache.xhat.chunks_exact(group))
        .zip(dx.chunks_exact_mut(group))
        .zip(&cache.inv_std)
    {
        for i in 0..group {
            dxhat[i] = match gain {
                Some(gain) => {
                    dgain[i] += dys[i] * hs[i];
                    dshift[i] += dys[i];
                    dys[i] * gain[i]
                }
                None => dys[i],
            };
        }
        let sum_d = dxhat.iter().copied().sum::<T>();
        let sum_dh = dxhat.iter().zip(hs).map(|(&d, &h)| d * h).sum::<T>();
        for i in 0..group {
            dxs[i] = inv / g * (g * dxhat[i] - sum_d - hs[i] * sum_dh);
        }
    }
    (dx, dgain, dshift)
}

/// Layer norm over the last dimension of `x` with affine `gain`/`shift`.
pub fn layernorm<T: Scalar>(x: &Tensor<T>, gain: &Tensor<T>, shift: &Tensor<T>) -> Result<Tensor<T>> {
    let last = *x.shape().last().ok_or_else(|| Error::invalid("layernorm of a scalar"))?;
    if gain.shape() != [last] || shift.shape() != [last] {
        return Err(Error::shape("layernorm affine", gain.shape(), &[last]));
    }
    let (y, _) = layernorm_forward(x.data(), last, Some(gain.data()), Some(shift.data()))?;
    Tensor::new(x.shape().to_vec(), y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::gradcheck::{finite_diff_grad, max_relative_error};
    use crate::rng::Rng;

    #[test]
    fn constant_input_gives_shift() {
        let x = Tensor::<f32>::full([1, 6], 3.25);
        let gain = Tensor::<f32>::from_fn([6], |i| i as f32 + 1.0);
        let shift = Tensor::<f32>::from_fn([6], |i| 0.5 * i as f32);
        let y = layernorm(&x, &gain, &shift).unwrap();
        assert_eq!(y.data(), shift.data());
    }

    #[test]
    fn symmetric_pair() {
        let x = Tensor::<f64>::from_rows(&[&[1.0, -1.0]]);
        let y = layernorm(&x, &Tensor::full([2], 1.0), &Tensor::zeros([2])).unwrap();
        let expected = 1.0 / (1.0 + LN_EPS).sqrt();
        assert!((y.data()[0] - expected).abs() < 1e-12);
        assert!((y.data()[1] + expected).abs() < 1e-12);
        assert!((y.data()[0] - 0.99999).abs() < 1e-5);
    }

    #[test]
    fn output_statistics() {
        let mut rng = Rng::new(9);
        let x: Vec<f64> = (0..4 * 64).map(|_| 3.0 + 2.0 * rng.normal()).collect();
        let (y, _) = layernorm_forward(&x, 64, None, None).unwrap();
        for row in y.chunks_exact(64) {
            let mean = row.iter().sum::<f64>() / 64.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(10);
        let x = Tensor::<f64>::from_fn([3, 8], |_| rng.normal());
        let gain = Tensor::<f64>::from_fn([4], |_| 1.0 + 0.3 * rng.normal());
        let shift = Tensor::<f64>::from_fn([4], |_| rng.normal());
        let proj: Vec<f64> = (0..24).map(|_| rng.normal()).collect();
        let loss = |x: &Tensor<f64>, g: &Tensor<f64>, s: &Tensor<f64>| {
            let (y, _) = layernorm_forward(x.data(), 4, Some(g.data()), Some(s.data())).unwrap();
            y.iter().zip(&proj).map(|(a, p)| a * p).sum::<f64>()
        };
        let (_, cache) = layernorm_forward(x.data(), 4, Some(gain.data()), Some(shift.data())).unwrap();
        let (dx, dg, ds) = layernorm_backward(&proj, 4, &cache, Some(gain.data()));
        let fx = finite_diff_grad(|x| loss(x, &gain, &shift), &x, 1e-5);
        let fg = finite_diff_grad(|g| loss(&x, g, &shift), &gain, 1e-5);
        let fs = finite_diff_grad(|s| loss(&x, &gain, s), &shift, 1e-5);
        let t = |v: Vec<f64>, s: &[usize]| Tensor::new(s.to_vec(), v).unwrap();
        assert!(max_relative_error(&t(dx, &[3, 8]), &fx) < 1e-5);
        assert!(max_relative_error(&t(dg, &[4]), &fg) < 1e-6);
        assert!(max_relative_error(&t(ds, &[4]), &fs) < 1e-6);
    }
}
