use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Mean softmax cross-entropy over the batch. Returns the loss and its
/// gradient with respect to the logits.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let (n, classes) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::shape("cross_entropy labels", logits.shape(), &[labels.len()]));
    }
    if n == 0 {
        return Err(Error::invalid("cross_entropy on an empty batch"));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let mut grad = Tensor::zeros([n, classes]);
    let mut total = T::zero();
    for ((row, g), &label) in logits
        .data()
        .chunks_exact(classes)
        .zip(grad.data_mut().chunks_exact_mut(classes))
        .zip(labels)
    {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = sum.ln() + max;
        total += log_z - row[label];
        for (gi, &v) in g.iter_mut().zip(row) {
            *gi = (v - log_z).exp() * inv_n;
        }
        g[label] -= inv_n;
    }
    Ok((total * inv_n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::gradcheck::{finite_diff_grad, max_relative_error};
    use crate::rng::Rng;

    #[test]
    fn uniform_logits_give_log_classes() {
        let logits = Tensor::<f32>::zeros([4, 10]);
        let (loss, _) = cross_entropy(&logits, &[0, 3, 9, 5]).unwrap();
        assert!((loss - 2.302_585).abs() < 1e-6);
    }

    #[test]
    fn huge_margin_gives_zero_loss() {
        let mut logits = Tensor::<f32>::zeros([1, 5]);
        logits.data_mut()[2] = 1e4;
        let (loss, _) = cross_entropy(&logits, &[2]).unwrap();
        assert!(loss.abs() < 1e-6);
    }

    #[test]
    fn matches_high_precision_softmax() {
        let mut rng = Rng::new(13);
        let l64 = Tensor::<f64>::from_fn([3, 4], |_| 2.0 * rng.normal());
        let labels = [1, 3, 0];
        let mut oracle = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = &l64.data()[i * 4..i * 4 + 4];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            oracle -= (row[y].exp() / z).ln();
        }
        oracle /= 3.0;
        let (loss, _) = cross_entropy(&l64.cast::<f32>(), &labels).unwrap();
        assert!((f64::from(loss) - oracle).abs() < 1e-6);
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::<f32>::zeros([1, 3]);
        assert!(matches!(
            cross_entropy(&logits, &[3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(14);
        let logits = Tensor::<f64>::from_fn([5, 7], |_| rng.normal());
        let labels = [0, 6, 2, 2, 4];
        let (_, g) = cross_entropy(&logits, &labels).unwrap();
        let fd = finite_diff_grad(|l| cross_entropy(l, &labels).unwrap().0, &logits, 1e-5);
        assert!(max_relative_error(&g, &fd) < 1e-6);
    }
}
