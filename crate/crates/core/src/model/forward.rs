//! Batched forward and backward passes.
//!
//! Every layer computes `a = act(norm(op(x) + b))`. Activations are kept as
//! flat row-major `[n, features]` buffers; structured layers reshape
//! internally.

use super::{Activation, Layer, LayerDef, LayerKind, Model, Norm};
use crate::error::{Error, Result};
use crate::ops::conv::{conv2d_backward_batch, conv2d_forward_batch};
use crate::ops::gelu::{gelu_backward, gelu_scalar};
use crate::ops::layernorm::{layernorm_backward, layernorm_forward, LnCache};
use crate::ops::linear::{linear_backward_raw, linear_forward_raw};
use crate::tensor::{Scalar, Tensor};

/// Intermediate values saved by [`Model::forward_train`].
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    batch: usize,
    layers: Vec<LayerCache<T>>,
}

#[derive(Clone, Debug)]
struct LayerCache<T> {
    /// Input in the arrangement the layer's matrix multiplies.
    input: Vec<T>,
    ln: Option<LnCache<T>>,
    /// Pre-activation values, kept only when a GELU follows.
    pre_act: Option<Vec<T>>,
}

/// Per-layer `(weight, bias)` gradients, shaped like the parameters.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub layers: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> Gradients<T> {
    /// Weight then bias of every layer, matching [`Model::params`].
    pub fn as_slices(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(|(w, b)| [w.data(), b.data()]).collect()
    }
}

/// `[r, c] → [c, r]` for each of `n` stacked matrices.
pub(crate) fn transpose_batch<T: Scalar>(x: &[T], n: usize, r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for s in 0..n {
        let src = &x[s * r * c..(s + 1) * r * c];
        let dst = &mut out[s * r * c..(s + 1) * r * c];
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    out
}

/// Gathers `[c, h, w]` images into rows of patch vectors `[patches, c·p·p]`
/// (each vector channel-major, then pixel row, then pixel column). With
/// `scatter` the direction is reversed and values are accumulated.
fn patch_map<T: Scalar>(src: &[T], dst: &mut [T], n: usize, [c, h, w]: [usize; 3], p: usize, scatter: bool) {
    let len = c * h * w;
    let mut k = 0;
    for s in 0..n {
        let base = s * len;
        for pr in 0..h / p {
            for pc in 0..w / p {
                for ch in 0..c {
                    for r in 0..p {
                        let row = base + ch * h * w + (pr * p + r) * w + pc * p;
                        for col in 0..p {
                            if scatter {
                                dst[row + col] += src[k];
                            } else {
                                dst[k] = src[row + col];
                            }
                            k += 1;
                        }
                    }
                }
            }
        }
    }
}

fn image_dims(def: &LayerDef) -> [usize; 3] {
    [def.in_shape[0], def.in_shape[1], def.in_shape[2]]
}

impl<T: Scalar> Layer<T> {
    /// Linear part plus bias on a batch, returning the output and the input
    /// as the matrix product saw it.
    fn affine(&self, x: &[T], n: usize) -> Result<(Vec<T>, Vec<T>)> {
        let def = &self.def;
        let w = self.weight.data();
        let b = Some(self.bias.data());
        match def.kind {
            LayerKind::FullyConnected => {
                let mut y = vec![T::zero(); n * def.out_dim()];
                linear_forward_raw(x, n, def.in_dim(), w, def.out_dim(), b, &mut y);
                Ok((y, x.to_vec()))
            }
            LayerKind::Conv2d(spec) => {
                let [_, h, wd] = image_dims(def);
                let y = conv2d_forward_batch(x, n, (h, wd), &self.weight, b, &spec)?;
                Ok((y, x.to_vec()))
            }
            LayerKind::LinearPatchEmbed { patch } => {
                let (rows, embed) = (def.out_shape[0], def.out_shape[1]);
                let plen = def.in_dim() / rows;
                let mut xp = vec![T::zero(); x.len()];
                patch_map(x, &mut xp, n, image_dims(def), patch, false);
                let mut y = vec![T::zero(); n * rows * embed];
                linear_forward_raw(&xp, n * rows, plen, w, embed, b, &mut y);
                Ok((y, xp))
            }
            LayerKind::TokenMix | LayerKind::ChannelMix => {
                let (rows, c_in) = def.row_view_in();
                let (_, c_out) = def.row_view_out();
                let xr = if def.transpose_in {
                    transpose_batch(x, n, def.in_shape[0], def.in_shape[1])
                } else {
                    x.to_vec()
                };
                let mut y = vec![T::zero(); n * rows * c_out];
                linear_forward_raw(&xr, n * rows, c_in, w, c_out, b, &mut y);
                if def.transpose_out {
                    y = transpose_batch(&y, n, rows, c_out);
                }
                Ok((y, xr))
            }
            LayerKind::Classifier { pool_rows } => {
                let feat = def.in_dim() / pool_rows;
                let pooled = if pool_rows == 1 {
                    x.to_vec()
                } else {
                    let scale = T::one() / T::from_usize(pool_rows).unwrap();
                    let mut pooled = vec![T::zero(); n * feat];
                    for (xs, ps) in x.chunks_exact(pool_rows * feat).zip(pooled.chunks_exact_mut(feat)) {
                        for row in xs.chunks_exact(feat) {
                            for (p, &v) in ps.iter_mut().zip(row) {
                                *p += v;
                            }
                        }
                        ps.iter_mut().for_each(|p| *p *= scale);
                    }
                    pooled
                };
                let mut y = vec![T::zero(); n * def.out_dim()];
                linear_forward_raw(&pooled, n, feat, w, def.out_dim(), b, &mut y);
                Ok((y, pooled))
            }
        }
    }

    /// Backward of [`Layer::affine`]: accumulates into `dw`/`db` and returns
    /// the input gradient in the layer's native input layout.
    fn affine_backward(
        &self,
        input: &[T],
        dy: &[T],
        n: usize,
        dw: &mut [T],
        db: &mut [T],
        want_dx: bool,
    ) -> Result<Option<Vec<T>>> {
        let def = &self.def;
        let w = self.weight.data();
        match def.kind {
            LayerKind::FullyConnected => {
                let mut dx = want_dx.then(|| vec![T::zero(); n * def.in_dim()]);
                linear_backward_raw(input, n, def.in_dim(), w, def.out_dim(), dy, dx.as_deref_mut(), dw, db);
                Ok(dx)
            }
            LayerKind::Conv2d(spec) => {
                let [_, h, wd] = image_dims(def);
                conv2d_backward_batch(input, n, (h, wd), &self.weight, &spec, dy, dw, db, want_dx)
            }
            LayerKind::LinearPatchEmbed { patch } => {
                let (rows, embed) = (def.out_shape[0], def.out_shape[1]);
                let plen = def.in_dim() / rows;
                let mut dxp = want_dx.then(|| vec![T::zero(); input.len()]);
                linear_backward_raw(input, n * rows, plen, w, embed, dy, dxp.as_deref_mut(), dw, db);
                Ok(dxp.map(|dxp| {
                    let mut dx = vec![T::zero(); dxp.len()];
                    patch_map(&dxp, &mut dx, n, image_dims(def), patch, true);
                    dx
                }))
            }
            LayerKind::TokenMix | LayerKind::ChannelMix => {
                let (rows, c_in) = def.row_view_in();
                let (_, c_out) = def.row_view_out();
                let dy_rows;
                let dy = if def.transpose_out {
                    dy_rows = transpose_batch(dy, n, c_out, rows);
                    &dy_rows[..]
                } else {
                    dy
                };
                let mut dxr = want_dx.then(|| vec![T::zero(); input.len()]);
                linear_backward_raw(input, n * rows, c_in, w, c_out, dy, dxr.as_deref_mut(), dw, db);
                Ok(dxr.map(|dxr| {
                    if def.transpose_in {
                        transpose_batch(&dxr, n, rows, c_in)
                    } else {
                        dxr
                    }
                }))
            }
            LayerKind::Classifier { pool_rows } => {
                let feat = def.in_dim() / pool_rows;
                let mut dp = want_dx.then(|| vec![T::zero(); n * feat]);
                linear_backward_raw(input, n, feat, w, def.out_dim(), dy, dp.as_deref_mut(), dw, db);
                Ok(dp.map(|dp| {
                    if pool_rows == 1 {
                        return dp;
                    }
                    let scale = T::one() / T::from_usize(pool_rows).unwrap();
                    let mut dx = vec![T::zero(); n * def.in_dim()];
                    for (ds, ps) in dx.chunks_exact_mut(pool_rows * feat).zip(dp.chunks_exact(feat)) {
                        for row in ds.chunks_exact_mut(feat) {
                            for (d, &g) in row.iter_mut().zip(ps) {
                                *d = g * scale;
                            }
                        }
                    }
                    dx
                }))
            }
        }
    }

    fn norm_group(&self) -> Option<usize> {
        match self.def.norm {
            Norm::None => None,
            Norm::Full => Some(self.def.out_dim()),
            Norm::Groups(g) => Some(g),
        }
    }

    fn forward_batch(&self, x: &[T], n: usize, keep: bool) -> Result<(Vec<T>, Option<LayerCache<T>>)> {
        let (mut y, input) = self.affine(x, n)?;
        let mut ln = None;
        if let Some(g) = self.norm_group() {
            let (normed, cache) = layernorm_forward(&y, g, None, None)?;
            y = normed;
            ln = keep.then_some(cache);
        }
        let mut pre_act = None;
        if self.def.activation == Activation::Gelu {
            if keep {
                pre_act = Some(y.clone());
            }
            y.iter_mut().for_each(|v| *v = gelu_scalar(*v));
        }
        let cache = keep.then_some(LayerCache { input, ln, pre_act });
        Ok((y, cache))
    }

    /// The bare linear map of this layer (no bias, norm or activation) on a
    /// batch of flattened inputs.
    pub fn linear_map(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let n = batch_rows(x, self.def.in_dim())?;
        let mut bare = self.clone();
        bare.bias.data_mut().iter_mut().for_each(|v| *v = T::zero());
        let (y, _) = bare.affine(x.data(), n)?;
        Tensor::new([n, self.def.out_dim()], y)
    }

    /// The full layer (bias, norm, activation) on a batch of flattened
    /// inputs.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let n = batch_rows(x, self.def.in_dim())?;
        let (y, _) = self.forward_batch(x.data(), n, false)?;
        Tensor::new([n, self.def.out_dim()], y)
    }
}

fn batch_rows<T: Scalar>(x: &Tensor<T>, dim: usize) -> Result<usize> {
    let n = *x.shape().first().ok_or_else(|| Error::invalid("input has no batch axis"))?;
    let per: usize = x.shape()[1..].iter().product();
    if per != dim {
        return Err(Error::shape("model input", x.shape(), &[n, dim]));
    }
    Ok(n)
}

impl<T: Scalar> Model<T> {
    /// Logits `[n, classes]` for a batch shaped `[n, …]` whose trailing
    /// dimensions flatten to the input size.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let n = batch_rows(x, self.spec().input_dim())?;
        let mut act = x.data().to_vec();
        for layer in &self.layers {
            act = layer.forward_batch(&act, n, false)?.0;
        }
        Tensor::new([n, self.classes()], act)
    }

    /// Forward pass that also records what [`Model::backward`] needs.
    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let n = batch_rows(x, self.spec().input_dim())?;
        let mut act = x.data().to_vec();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, cache) = layer.forward_batch(&act, n, true)?;
            caches.push(cache.expect("cache requested"));
            act = y;
        }
        Ok((
            Tensor::new([n, self.classes()], act)?,
            ForwardCache { batch: n, layers: caches },
        ))
    }

    /// Parameter gradients given `d loss / d logits`.
    pub fn backward(&self, cache: &ForwardCache<T>, dlogits: &Tensor<T>) -> Result<Gradients<T>> {
        let n = cache.batch;
        if dlogits.shape() != [n, self.classes()] {
            return Err(Error::shape("backward", dlogits.shape(), &[n, self.classes()]));
        }
        if cache.layers.len() != self.layers.len() {
            return Err(Error::invalid("forward cache belongs to a different model"));
        }
        let mut grads: Vec<(Tensor<T>, Tensor<T>)> = self
            .layers
            .iter()
            .map(|l| (Tensor::zeros(l.weight.shape().to_vec()), Tensor::zeros(l.bias.shape().to_vec())))
            .collect();
        let mut delta = dlogits.data().to_vec();
        for (i, (layer, lc)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            if let Some(pre) = &lc.pre_act {
                delta = gelu_backward(pre, &delta);
            }
            if let (Some(ln), Some(g)) = (&lc.ln, layer.norm_group()) {
                delta = layernorm_backward(&delta, g, ln, None).0;
            }
            let (dw, db) = &mut grads[i];
            let dx = layer.affine_backward(&lc.input, &delta, n, dw.data_mut(), db.data_mut(), i > 0)?;
            if let Some(dx) = dx {
                delta = dx;
            }
        }
        Ok(Gradients { layers: grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_batch_moves_entries() {
        let x: Vec<f32> = (0..12).map(|v| v as f32).collect();
        let t = transpose_batch(&x, 2, 2, 3);
        assert_eq!(&t[..6], &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert_eq!(transpose_batch(&t, 2, 3, 2), x);
    }

    #[test]
    fn patch_map_round_trips() {
        let x: Vec<f64> = (0..2 * 3 * 4 * 4).map(f64::from).collect();
        let mut p = vec![0.0; x.len()];
        patch_map(&x, &mut p, 2, [3, 4, 4], 2, false);
        assert_eq!(&p[..4], &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(&p[4..8], &[16.0, 17.0, 20.0, 21.0]);
        let mut back = vec![0.0; x.len()];
        patch_map(&p, &mut back, 2, [3, 4, 4], 2, true);
        assert_eq!(back, x);
    }
}
