use crate::tensor::{Scalar, Tensor};

/// `x·Φ(x)` with the exact Gaussian CDF.
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    half * x * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// `d/dx [x·Φ(x)] = Φ(x) + x·φ(x)`.
pub fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let cdf = T::lit(0.5) * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::lit(0.5)).exp() * T::lit(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_scalar)
}

/// `dx = dy · gelu'(x)` where `x` is the pre-activation input.
pub fn gelu_backward<T: Scalar>(x: &[T], dy: &[T]) -> Vec<T> {
    x.iter().zip(dy).map(|(&x, &d)| d * gelu_grad_scalar(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::gradcheck::max_relative_error;
    use crate::rng::Rng;

    #[test]
    fn known_values() {
        assert_eq!(gelu_scalar(0.0f32), 0.0);
        assert!((gelu_scalar(10.0f32) - 10.0).abs() < 1e-6);
        // Φ(1) = 0.841344746...
        assert!((gelu_scalar(1.0f64) - 0.841_344_746).abs() < 1e-8);
        assert!((gelu_scalar(1.0f32) - 0.8413).abs() < 1e-3);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let mut rng = Rng::new(12);
        let x = Tensor::<f64>::from_fn([40], |_| 3.0 * rng.normal());
        let analytic = Tensor::new([40], gelu_backward(x.data(), &[1.0; 40])).unwrap();
        // Per coordinate, so summation does not cancel small derivatives.
        let numeric = Tensor::from_fn([40], |i| {
            let xi = x.data()[i];
            (gelu_scalar(xi + 1e-5) - gelu_scalar(xi - 1e-5)) / 2e-5
        });
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-5, "{err}");
    }
}
