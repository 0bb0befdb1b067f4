//! 2-D cross-correlation with zero padding, lowered to GEMM through im2col.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gemm, Op, Scalar, Tensor};

/// Square-kernel convolution hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Self {
            kernel_size,
            stride,
            padding,
            in_channels,
            out_channels,
        }
    }

    /// `floor((n − k + 2p)/s) + 1` along one axis.
    pub fn out_len(&self, n: usize) -> Result<usize> {
        if self.kernel_size == 0 || self.stride == 0 {
            return Err(Error::invalid("kernel size and stride must be positive"));
        }
        let padded = n + 2 * self.padding;
        if padded < self.kernel_size {
            return Err(Error::invalid(format!(
                "kernel {} larger than padded input {padded}",
                self.kernel_size
            )));
        }
        Ok((padded - self.kernel_size) / self.stride + 1)
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((self.out_len(h)?, self.out_len(w)?))
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel_size,
            self.kernel_size,
        ]
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_size * self.kernel_size
    }
}

/// Geometry of one convolution applied to a fixed input size.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    spec: ConvSpec,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(spec: ConvSpec, h: usize, w: usize) -> Result<Self> {
        let (ho, wo) = spec.out_hw(h, w)?;
        Ok(Self { spec, h, w, ho, wo })
    }

    fn in_len(&self) -> usize {
        self.spec.in_channels * self.h * self.w
    }

    fn out_len(&self) -> usize {
        self.spec.out_channels * self.ho * self.wo
    }

    /// Calls `f(col_index, input_index)` for every column-matrix entry that
    /// reads a real input element; padding entries are skipped.
    fn visit(&self, mut f: impl FnMut(usize, usize)) {
        let k = self.spec.kernel_size;
        let s = self.spec.stride as isize;
        let p = self.spec.padding as isize;
        let cols = self.ho * self.wo;
        for ci in 0..self.spec.in_channels {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    for oy in 0..self.ho {
                        let iy = oy as isize * s - p + ki as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..self.wo {
                            let ix = ox as isize * s - p + kj as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            let src = (ci * self.h + iy as usize) * self.w + ix as usize;
                            f(row * cols + oy * self.wo + ox, src);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        cols.iter_mut().for_each(|v| *v = T::zero());
        self.visit(|dst, src| cols[dst] = x[src]);
    }

    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        self.visit(|dst, src| dx[src] += cols[dst]);
    }
}

fn check_kernel<T: Scalar>(kernel: &Tensor<T>, spec: &ConvSpec) -> Result<()> {
    if kernel.shape() != spec.kernel_shape() {
        return Err(Error::shape("conv2d kernel", kernel.shape(), &spec.kernel_shape()));
    }
    Ok(())
}

/// Dense `[o·h_out·w_out × c·h·w]` matrix of the convolution on an `h×w`
/// input: each output row holds the kernel taps at the input positions
/// they read, with padding taps dropped.
pub fn conv_matrix<T: Scalar>(kernel: &Tensor<T>, spec: &ConvSpec, (h, w): (usize, usize)) -> Result<Tensor<T>> {
    check_kernel(kernel, spec)?;
    let geo = Geometry::new(*spec, h, w)?;
    let (n, hw, plen) = (geo.in_len(), geo.ho * geo.wo, spec.patch_len());
    let mut m = Tensor::zeros([geo.out_len(), n]);
    let data = m.data_mut();
    geo.visit(|col, src| {
        let (row, pos) = (col / hw, col % hw);
        for o in 0..spec.out_channels {
            data[(o * hw + pos) * n + src] = kernel.data()[o * plen + row];
        }
    });
    Ok(m)
}

/// Single image `x[c×h×w]` → `[o×h_out×w_out]`, no bias.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let &[c, h, w] = x.shape() else {
        return Err(Error::shape("conv2d input", x.shape(), &[spec.in_channels, 0, 0]));
    };
    if c != spec.in_channels {
        return Err(Error::shape(
            "conv2d channels",
            x.shape(),
            &[spec.in_channels, h, w],
        ));
    }
    let (ho, wo) = spec.out_hw(h, w)?;
    let out = conv2d_forward_batch(x.data(), 1, (h, w), kernel, None, spec)?;
    Tensor::new([spec.out_channels, ho, wo], out)
}

/// Batch of `n` images stored contiguously as `[n, c, h, w]`. Returns
/// `[n, o, h_out, w_out]` flattened.
pub fn conv2d_forward_batch<T: Scalar>(
    x: &[T],
    n: usize,
    (h, w): (usize, usize),
    kernel: &Tensor<T>,
    bias: Option<&[T]>,
    spec: &ConvSpec,
) -> Result<Vec<T>> {
    check_kernel(kernel, spec)?;
    let geo = Geometry::new(*spec, h, w)?;
    if x.len() != n * geo.in_len() {
        return Err(Error::shape(
            "conv2d batch",
            &[x.len()],
            &[n, spec.in_channels, h, w],
        ));
    }
    if let Some(b) = bias {
        if b.len() != spec.out_channels {
            return Err(Error::shape("conv2d bias", &[b.len()], &[spec.out_channels]));
        }
    }
    let plen = spec.patch_len();
    let hw = geo.ho * geo.wo;
    let o = spec.out_channels;
    let mut cols = vec![T::zero(); plen * hw];
    let mut out = vec![T::zero(); n * geo.out_len()];
    for (xs, ys) in x
        .chunks_exact(geo.in_len())
        .zip(out.chunks_exact_mut(geo.out_len()))
    {
        geo.im2col(xs, &mut cols);
        let beta = if let Some(b) = bias {
            for (ch, plane) in ys.chunks_exact_mut(hw).enumerate() {
                plane.iter_mut().for_each(|v| *v = b[ch]);
            }
            T::one()
        } else {
            T::zero()
        };
        gemm(Op::N, Op::N, o, plen, hw, T::one(), kernel.data(), &cols, beta, ys);
    }
    Ok(out)
}

/// Gradients for [`conv2d_forward_batch`]. Accumulates into `dk` and `db`,
/// returns `dx` when `want_dx`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_batch<T: Scalar>(
    x: &[T],
    n: usize,
    (h, w): (usize, usize),
    kernel: &Tensor<T>,
    spec: &ConvSpec,
    dy: &[T],
    dk: &mut [T],
    db: &mut [T],
    want_dx: bool,
) -> Result<Option<Vec<T>>> {
    check_kernel(kernel, spec)?;
    let geo = Geometry::new(*spec, h, w)?;
    if dy.len() != n * geo.out_len() || x.len() != n * geo.in_len() {
        return Err(Error::shape("conv2d_backward", &[dy.len()], &[n * geo.out_len()]));
    }
    let plen = spec.patch_len();
    let hw = geo.ho * geo.wo;
    let o = spec.out_channels;
    let mut cols = vec![T::zero(); plen * hw];
    let mut dcols = vec![T::zero(); plen * hw];
    let mut dx = want_dx.then(|| vec![T::zero(); x.len()]);
    for (s, (xs, dys)) in x
        .chunks_exact(geo.in_len())
        .zip(dy.chunks_exact(geo.out_len()))
        .enumerate()
    {
        geo.im2col(xs, &mut cols);
        // dK[o×plen] += dY[o×hw] · colsᵀ
        gemm(Op::N, Op::T, o, hw, plen, T::one(), dys, &cols, T::one(), dk);
        for (ch, plane) in dys.chunks_exact(hw).enumerate() {
            db[ch] += plane.iter().copied().sum::<T>();
        }
        if let Some(dx) = dx.as_mut() {
            gemm(Op::T, Op::N, plen, o, hw, T::one(), kernel.data(), dys, T::zero(), &mut dcols);
            let dxs = &mut dx[s * geo.in_len()..(s + 1) * geo.in_len()];
            geo.col2im(&dcols, dxs);
        }
    }
    Ok(dx)
}
