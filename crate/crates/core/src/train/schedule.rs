use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleMode {
    /// `α[t] = a`.
    Constant,
    /// `α[t] = a·(1 − t/t_max)^k`.
    PolyDecay,
    /// No interpolation while training; one blend with `alpha_test` at the end.
    TestTimeOnly,
    /// Never interpolate.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub mode: ScheduleMode,
    pub a: f64,
    pub k: f64,
    pub alpha_test: f64,
    /// Which interpolable layers take part; empty means all of them.
    pub layer_mask: Vec<bool>,
}

impl ScheduleSpec {
    pub fn constant(a: f64) -> Self {
        Self {
            mode: ScheduleMode::Constant,
            a,
            k: 0.0,
            alpha_test: 0.0,
            layer_mask: Vec::new(),
        }
    }

    pub fn decay(a: f64, k: f64) -> Self {
        Self {
            mode: ScheduleMode::PolyDecay,
            k,
            ..Self::constant(a)
        }
    }

    pub fn test_time(alpha_test: f64) -> Self {
        Self {
            mode: ScheduleMode::TestTimeOnly,
            alpha_test,
            ..Self::constant(0.0)
        }
    }

    pub fn none() -> Self {
        Self {
            mode: ScheduleMode::None,
            ..Self::constant(0.0)
        }
    }

    pub fn interpolates_during_training(&self) -> bool {
        matches!(self.mode, ScheduleMode::Constant | ScheduleMode::PolyDecay)
    }

    pub fn validate(&self, interpolable_layers: usize) -> Result<()> {
        for (name, v) in [("a", self.a), ("alpha_test", self.alpha_test)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(name, format!("{v} is outside [0, 1]")));
            }
        }
        if !(self.k >= 0.0) {
            return Err(Error::config("k", format!("{} must be non-negative", self.k)));
        }
        if !self.layer_mask.is_empty() && self.layer_mask.len() != interpolable_layers {
            return Err(Error::config(
                "layer_mask",
                format!("{} entries for {interpolable_layers} interpolable layers", self.layer_mask.len()),
            ));
        }
        Ok(())
    }

    pub fn masked(&self, j: usize) -> bool {
        self.layer_mask.get(j).copied().unwrap_or(true)
    }
}

/// Interpolation weight applied after epoch `t` (0-based) of `t_max`.
pub fn schedule_alpha(spec: &ScheduleSpec, t: usize, t_max: usize) -> Result<f64> {
    if t > t_max {
        return Err(Error::invalid(format!("epoch {t} past schedule end {t_max}")));
    }
    Ok(match spec.mode {
        ScheduleMode::Constant => spec.a,
        ScheduleMode::PolyDecay if spec.k == 0.0 => spec.a,
        ScheduleMode::PolyDecay => {
            let frac = if t_max == 0 { 0.0 } else { t as f64 / t_max as f64 };
            spec.a * (1.0 - frac).powf(spec.k)
        }
        ScheduleMode::TestTimeOnly | ScheduleMode::None => 0.0,
    })
}

/// `(1 − α)·W + α·W_P`, evaluated in that form. The endpoints return exact
/// copies, and the result is clamped to the elementwise hull of the two
/// operands so rounding cannot leave it.
pub fn interpolate_weights<T: Scalar>(w: &Tensor<T>, w_p: &Tensor<T>, alpha: f64) -> Result<Tensor<T>> {
    if w.shape() != w_p.shape() {
        return Err(Error::shape("interpolate_weights", w.shape(), w_p.shape()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    if alpha == 0.0 {
        return Ok(w.clone());
    }
    if alpha == 1.0 {
        return Ok(w_p.clone());
    }
    let (keep, take) = (T::lit(1.0 - alpha), T::lit(alpha));
    let data = w
        .data()
        .iter()
        .zip(w_p.data())
        .map(|(&a, &b)| (keep * a + take * b).max(a.min(b)).min(a.max(b)))
        .collect();
    Tensor::new(w.shape().to_vec(), data)
}
