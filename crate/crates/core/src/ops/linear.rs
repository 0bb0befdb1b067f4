use crate::error::{Error, Result};
use crate::tensor::{gemm, Op, Scalar, Tensor};

/// `y = x·wᵀ + b` for a batch `x[n×in]`, weight `w[out×in]`, bias `b[out]`.
pub fn linear_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (n, d_in) = x.dims2()?;
    let (d_out, w_in) = w.dims2()?;
    if d_in != w_in {
        return Err(Error::shape("linear", x.shape(), w.shape()));
    }
    let mut y = Tensor::zeros([n, d_out]);
    linear_forward_raw(x.data(), n, d_in, w.data(), d_out, b.map(|b| b.data()), y.data_mut());
    Ok(y)
}

pub(crate) fn linear_forward_raw<T: Scalar>(
    x: &[T],
    n: usize,
    d_in: usize,
    w: &[T],
    d_out: usize,
    b: Option<&[T]>,
    y: &mut [T],
) {
    if let Some(b) = b {
        assert_eq!(b.len(), d_out);
        for row in y.chunks_exact_mut(d_out) {
            row.copy_from_slice(b);
        }
        gemm(Op::N, Op::T, n, d_in, d_out, T::one(), x, w, T::one(), y);
    } else {
        gemm(Op::N, Op::T, n, d_in, d_out, T::one(), x, w, T::zero(), y);
    }
}

/// Gradients of [`linear_forward`]: returns `(dx, dw, db)`.
pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, d_in) = x.dims2()?;
    let (d_out, w_in) = w.dims2()?;
    if d_in != w_in || dy.shape() != [n, d_out] {
        return Err(Error::shape("linear_backward", x.shape(), dy.shape()));
    }
    let mut dx = Tensor::zeros([n, d_in]);
    let mut dw = Tensor::zeros([d_out, d_in]);
    let mut db = Tensor::zeros([d_out]);
    linear_backward_raw(
        x.data(),
        n,
        d_in,
        w.data(),
        d_out,
        dy.data(),
        Some(dx.data_mut()),
        dw.data_mut(),
        db.data_mut(),
    );
    Ok((dx, dw, db))
}

/// Accumulates into `dw`/`db`; writes `dx` when requested.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward_raw<T: Scalar>(
    x: &[T],
    n: usize,
    d_in: usize,
    w: &[T],
    d_out: usize,
    dy: &[T],
    dx: Option<&mut [T]>,
    dw: &mut [T],
    db: &mut [T],
) {
    gemm(Op::T, Op::N, d_out, n, d_in, T::one(), dy, x, T::one(), dw);
    for row in dy.chunks_exact(d_out) {
        for (acc, g) in db.iter_mut().zip(row) {
            *acc += *g;
        }
    }
    if let Some(dx) = dx {
        gemm(Op::N, Op::N, n, d_out, d_in, T::one(), dy, w, T::zero(), dx);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::gradcheck::{finite_diff_grad, max_relative_error};
    use crate::rng::Rng;

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(11);
        let x = Tensor::<f64>::from_fn([3, 4], |_| rng.normal());
        let w = Tensor::<f64>::from_fn([5, 4], |_| rng.normal());
        let b = Tensor::<f64>::from_fn([5], |_| rng.normal());
        let proj = Tensor::<f64>::from_fn([3, 5], |_| rng.normal());
        let loss = |y: &Tensor<f64>| y.data().iter().zip(proj.data()).map(|(a, p)| a * p).sum::<f64>();

        let (dx, dw, db) = linear_backward(&x, &w, &proj).unwrap();
        let fx = finite_diff_grad(|x| loss(&linear_forward(x, &w, Some(&b)).unwrap()), &x, 1e-5);
        let fw = finite_diff_grad(|w| loss(&linear_forward(&x, w, Some(&b)).unwrap()), &w, 1e-5);
        let fb = finite_diff_grad(|b| loss(&linear_forward(&x, &w, Some(b)).unwrap()), &b, 1e-5);
        assert!(max_relative_error(&dx, &fx) < 1e-6);
        assert!(max_relative_error(&dw, &fw) < 1e-6);
        assert!(max_relative_error(&db, &fb) < 1e-6);
    }

    #[test]
    fn shape_mismatch() {
        let x = Tensor::<f32>::zeros([2, 3]);
        let w = Tensor::<f32>::zeros([4, 2]);
        assert!(linear_forward(&x, &w, None).is_err());
    }
}
