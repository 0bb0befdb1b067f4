//! Dense fully-connected equivalents of structured layers.
//!
//! Every constructor returns a matrix `M` with `vec(y) = M · vec(x)`, where
//! `vec` flattens row-major with channels outermost.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::conv::{conv_matrix, ConvSpec};
use crate::tensor::{matmul, Scalar, Tensor};

/// Which construction produced an [`FcEquivalent`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FcSource {
    ConvKernel,
    Patchify,
    Transpose,
    SharedWeight,
    Composed,
}

/// A structured layer written out as a dense `[out × in]` matrix.
#[derive(Clone, Debug)]
pub struct FcEquivalent<T = f32> {
    pub matrix: Tensor<T>,
    pub source: FcSource,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    /// For pure permutations: `vec(y)[i] = vec(x)[perm[i]]`.
    perm: Option<Vec<usize>>,
}

impl<T: Scalar> FcEquivalent<T> {
    fn new(
        matrix: Tensor<T>,
        source: FcSource,
        input_shape: Vec<usize>,
        output_shape: Vec<usize>,
    ) -> Result<Self> {
        let (r, c) = matrix.dims2()?;
        if r != output_shape.iter().product::<usize>() || c != input_shape.iter().product::<usize>() {
            return Err(Error::shape("fc equivalent", matrix.shape(), &[r, c]));
        }
        Ok(Self {
            matrix,
            source,
            input_shape,
            output_shape,
            perm: None,
        })
    }

    fn from_permutation(
        perm: Vec<usize>,
        source: FcSource,
        input_shape: Vec<usize>,
        output_shape: Vec<usize>,
    ) -> Self {
        let n = perm.len();
        let mut m = Tensor::zeros([n, n]);
        for (i, &j) in perm.iter().enumerate() {
            m.data_mut()[i * n + j] = T::one();
        }
        Self {
            matrix: m,
            source,
            input_shape,
            output_shape,
            perm: Some(perm),
        }
    }

    pub fn rows(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn permutation(&self) -> Option<&[usize]> {
        self.perm.as_deref()
    }

    /// `M · v`, one left-to-right dot product per row.
    pub fn apply(&self, v: &[T]) -> Result<Vec<T>> {
        let c = self.cols();
        if v.len() != c {
            return Err(Error::shape("fc apply", self.matrix.shape(), &[v.len()]));
        }
        Ok(self
            .matrix
            .data()
            .chunks_exact(c)
            .map(|row| row.iter().zip(v).fold(T::zero(), |acc, (&a, &b)| acc + a * b))
            .collect())
    }

    /// True when every row and every column holds exactly one `1` and zeros
    /// elsewhere.
    pub fn is_permutation_matrix(&self) -> bool {
        let (r, c) = (self.rows(), self.cols());
        if r != c {
            return false;
        }
        let mut col_hits = vec![0usize; c];
        for row in self.matrix.data().chunks_exact(c) {
            let mut hits = 0;
            for (j, &v) in row.iter().enumerate() {
                if v == T::one() {
                    hits += 1;
                    col_hits[j] += 1;
                } else if v != T::zero() {
                    return false;
                }
            }
            if hits != 1 {
                return false;
            }
        }
        col_hits.iter().all(|&h| h == 1)
    }

    /// Writes the sparsity pattern as a binary PGM: one byte per entry,
    /// 0 for a zero entry and 255 otherwise.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let (r, c) = (self.rows(), self.cols());
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(f, "P5\n{c} {r}\n255\n")?;
        let bytes: Vec<u8> = self
            .matrix
            .data()
            .iter()
            .map(|&v| if v == T::zero() { 0 } else { 255 })
            .collect();
        f.write_all(&bytes)?;
        f.flush()?;
        Ok(())
    }
}

/// Patch layout of an image. `patch` must divide both sides.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub channels: usize,
}

impl PatchGrid {
    pub fn new(height: usize, width: usize, patch: usize) -> Result<Self> {
        Self::with_channels(height, width, patch, 1)
    }

    pub fn with_channels(height: usize, width: usize, patch: usize, channels: usize) -> Result<Self> {
        if patch == 0 || height % patch != 0 || width % patch != 0 {
            return Err(Error::invalid(format!(
                "patch size {patch} does not divide image {height}x{width}"
            )));
        }
        if channels == 0 {
            return Err(Error::invalid("patch grid needs at least one channel"));
        }
        Ok(Self {
            height,
            width,
            patch,
            channels,
        })
    }

    /// Patches along the height.
    pub fn rows(&self) -> usize {
        self.height / self.patch
    }

    /// Patches along the width.
    pub fn cols(&self) -> usize {
        self.width / self.patch
    }

    pub fn num_patches(&self) -> usize {
        self.rows() * self.cols()
    }

    /// Values per patch vector (`channels · P²`).
    pub fn patch_len(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    /// Source index `j` in `vec(x)` for destination index `i` in the patch
    /// sequence. Within a channel plane this is
    /// `j = (R·P + r)·W + (C·P + c)` with `(R, C)` the patch coordinates of
    /// `⌊i / P²⌋` and `(r, c)` the pixel coordinates of `i mod P²`.
    /// With several channels the patch sequence is patch-major, then
    /// channel, then pixel, so each patch vector is contiguous.
    pub fn source_index(&self, i: usize) -> usize {
        let p2 = self.patch * self.patch;
        let pix = i % p2;
        let rest = i / p2;
        let ch = rest % self.channels;
        let patch_no = rest / self.channels;
        let (big_r, big_c) = (patch_no / self.cols(), patch_no % self.cols());
        let (r, c) = (pix / self.patch, pix % self.patch);
        ch * self.height * self.width + (big_r * self.patch + r) * self.width + (big_c * self.patch + c)
    }
}

/// Dense `W_F` with `vec(F ∗ x) = W_F · vec(x)`.
pub fn conv_to_fc<T: Scalar>(
    kernel: &Tensor<T>,
    spec: &ConvSpec,
    in_shape: [usize; 3],
) -> Result<FcEquivalent<T>> {
    let [c, h, w] = in_shape;
    if c != spec.in_channels {
        return Err(Error::shape("conv_to_fc", &in_shape, &spec.kernel_shape()));
    }
    let (ho, wo) = spec.out_hw(h, w)?;
    let matrix = conv_matrix(kernel, spec, (h, w))?;
    FcEquivalent::new(
        matrix,
        FcSource::ConvKernel,
        in_shape.to_vec(),
        vec![spec.out_channels, ho, wo],
    )
}

/// Permutation reordering `vec(x)` of a `[channels, H, W]` image into
/// concatenated patch vectors.
pub fn build_patchify_matrix<T: Scalar>(grid: PatchGrid) -> FcEquivalent<T> {
    let n = grid.channels * grid.height * grid.width;
    let perm = (0..n).map(|i| grid.source_index(i)).collect();
    FcEquivalent::from_permutation(
        perm,
        FcSource::Patchify,
        vec![grid.channels, grid.height, grid.width],
        vec![grid.num_patches(), grid.patch_len()],
    )
}

/// In-place transposition index map: the element at new position `k` came
/// from `π(k) = W·k mod (HW − 1)`, with `π(HW − 1) = HW − 1`.
pub fn transpose_source(height: usize, width: usize, k: usize) -> usize {
    let last = height * width - 1;
    if k == last {
        last
    } else {
        (width * k) % last
    }
}

/// Permutation mapping `vec(x)` of an `H×W` matrix to `vec(xᵀ)`.
pub fn build_transpose_matrix<T: Scalar>(height: usize, width: usize) -> Result<FcEquivalent<T>> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("transpose of an empty matrix"));
    }
    let perm = (0..height * width)
        .map(|k| transpose_source(height, width, k))
        .collect();
    Ok(FcEquivalent::from_permutation(
        perm,
        FcSource::Transpose,
        vec![height, width],
        vec![width, height],
    ))
}

/// Block-diagonal `diag(w_r, …, w_r)` with `repeats` blocks: the dense form of
/// applying `w_r` to every row of an `[repeats × C_in]` input.
pub fn expand_shared_weight<T: Scalar>(w_r: &Tensor<T>, repeats: usize) -> Result<FcEquivalent<T>> {
    let (c_out, c_in) = w_r.dims2()?;
    if repeats == 0 {
        return Err(Error::invalid("shared weight needs at least one repeat"));
    }
    let cols = repeats * c_in;
    let mut m = Tensor::zeros([repeats * c_out, cols]);
    for r in 0..repeats {
        for i in 0..c_out {
            let dst = (r * c_out + i) * cols + r * c_in;
            m.data_mut()[dst..dst + c_in].copy_from_slice(&w_r.data()[i * c_in..(i + 1) * c_in]);
        }
    }
    FcEquivalent::new(
        m,
        FcSource::SharedWeight,
        vec![repeats, c_in],
        vec![repeats, c_out],
    )
}

/// `outer · inner` (`W̃ · L`); `None` stands for the identity.
///
/// Permutation factors are applied by index gather/scatter, which yields the
/// same values as the dense product without the cubic cost.
pub fn compose_prior<T: Scalar>(
    outer: &FcEquivalent<T>,
    inner: Option<&FcEquivalent<T>>,
) -> Result<FcEquivalent<T>> {
    let Some(inner) = inner else {
        let mut out = outer.clone();
        out.source = FcSource::Composed;
        return Ok(out);
    };
    if outer.cols() != inner.rows() {
        return Err(Error::shape("compose_prior", outer.matrix.shape(), inner.matrix.shape()));
    }
    let (m, k, n) = (outer.rows(), outer.cols(), inner.cols());
    let matrix = if let Some(perm) = inner.permutation() {
        // (A·L)[i, perm[q]] = A[i, q]
        let mut out = Tensor::zeros([m, n]);
        for (orow, arow) in out
            .data_mut()
            .chunks_exact_mut(n)
            .zip(outer.matrix.data().chunks_exact(k))
        {
            for (q, &j) in perm.iter().enumerate() {
                orow[j] = arow[q];
            }
        }
        out
    } else if let Some(perm) = outer.permutation() {
        // (L·B)[i, :] = B[perm[i], :]
        let mut out = Tensor::zeros([m, n]);
        for (i, &src) in perm.iter().enumerate() {
            out.data_mut()[i * n..(i + 1) * n]
                .copy_from_slice(&inner.matrix.data()[src * n..(src + 1) * n]);
        }
        out
    } else {
        matmul(&outer.matrix, &inner.matrix)?
    };
    let perm = match (outer.permutation(), inner.permutation()) {
        (Some(a), Some(b)) => Some(a.iter().map(|&i| b[i]).collect()),
        _ => None,
    };
    let mut out = FcEquivalent::new(
        matrix,
        FcSource::Composed,
        inner.input_shape.clone(),
        outer.output_shape.clone(),
    )?;
    out.perm = perm;
    Ok(out)
}
