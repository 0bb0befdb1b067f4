//! Network definitions and their parameters.
//!
//! A [`ModelSpec`] is the declarative description (ordered [`LayerDef`]s and
//! an architecture tag); [`ModelSpec::instantiate`] turns it into a
//! [`Model`] with initialized parameters.

mod arch;
mod checkpoint;
mod forward;
mod prior;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::conv::ConvSpec;
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

pub use arch::{
    build_budget_priors, build_budgeted_mlps, build_cnn, build_imlp, build_mixer, build_mlp,
    build_scnn, build_smlp, build_smlp_for, HiddenLayer, BUDGET_INTERPOLATED_PARAMS,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use forward::{ForwardCache, Gradients};
pub use prior::extract_prior_fc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriorKind {
    Cnn,
    Mixer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Gelu,
    None,
}

/// Layer normalization placement. `Groups(g)` normalizes every contiguous
/// run of `g` values (the last axis of a 2-D token matrix); `Full` normalizes
/// the whole flattened feature vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    None,
    Full,
    Groups(usize),
}

impl Norm {
    pub fn is_some(&self) -> bool {
        !matches!(self, Norm::None)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    FullyConnected,
    Conv2d(ConvSpec),
    /// Per-patch linear embedding of non-overlapping `patch × patch` tiles.
    LinearPatchEmbed { patch: usize },
    /// Shared linear map along the token (patch) axis.
    TokenMix,
    /// Shared linear map along the channel axis.
    ChannelMix,
    /// Final linear map; `pool_rows > 1` first averages the input viewed as
    /// `[pool_rows, features]` over its rows.
    Classifier { pool_rows: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDef {
    pub kind: LayerKind,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub norm: Norm,
    pub activation: Activation,
    pub interpolable: bool,
    pub transpose_in: bool,
    pub transpose_out: bool,
}

impl LayerDef {
    pub fn in_dim(&self) -> usize {
        self.in_shape.iter().product()
    }

    pub fn out_dim(&self) -> usize {
        self.out_shape.iter().product()
    }

    /// `(weight shape, bias length)`.
    pub fn param_shapes(&self) -> (Vec<usize>, usize) {
        match self.kind {
            LayerKind::FullyConnected => (vec![self.out_dim(), self.in_dim()], self.out_dim()),
            LayerKind::Conv2d(spec) => (spec.kernel_shape().to_vec(), spec.out_channels),
            LayerKind::LinearPatchEmbed { patch } => {
                let c = self.in_shape[0];
                let embed = self.out_shape[1];
                (vec![embed, c * patch * patch], embed)
            }
            LayerKind::TokenMix | LayerKind::ChannelMix => {
                let (_, c_in) = self.row_view_in();
                let (_, c_out) = self.row_view_out();
                (vec![c_out, c_in], c_out)
            }
            LayerKind::Classifier { pool_rows } => {
                let feat = self.in_dim() / pool_rows.max(1);
                (vec![self.out_dim(), feat], self.out_dim())
            }
        }
    }

    pub fn param_count(&self) -> usize {
        let (w, b) = self.param_shapes();
        w.iter().product::<usize>() + b
    }

    /// `[rows, cols]` seen by a shared row-wise layer after the optional
    /// input transpose.
    pub(crate) fn row_view_in(&self) -> (usize, usize) {
        let (r, c) = (self.in_shape[0], self.in_shape[1]);
        if self.transpose_in {
            (c, r)
        } else {
            (r, c)
        }
    }

    /// `[rows, cols]` produced by a shared row-wise layer before the optional
    /// output transpose.
    pub(crate) fn row_view_out(&self) -> (usize, usize) {
        let (r, c) = (self.out_shape[0], self.out_shape[1]);
        if self.transpose_out {
            (c, r)
        } else {
            (r, c)
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::invalid(format!("{msg}: {self:?}")));
        match self.kind {
            LayerKind::FullyConnected => {}
            LayerKind::Conv2d(spec) => {
                let &[c, h, w] = self.in_shape.as_slice() else {
                    return bad("conv layer needs a [c, h, w] input");
                };
                let (ho, wo) = spec.out_hw(h, w)?;
                if c != spec.in_channels || self.out_shape != [spec.out_channels, ho, wo] {
                    return bad("conv layer shapes disagree with its ConvSpec");
                }
            }
            LayerKind::LinearPatchEmbed { patch } => {
                let &[_, h, w] = self.in_shape.as_slice() else {
                    return bad("patch embedding needs a [c, h, w] input");
                };
                if patch == 0 || h % patch != 0 || w % patch != 0 {
                    return bad("patch size must divide the image");
                }
                if self.out_shape.len() != 2 || self.out_shape[0] != (h / patch) * (w / patch) {
                    return bad("patch embedding output must be [patches, channels]");
                }
            }
            LayerKind::TokenMix | LayerKind::ChannelMix => {
                if self.in_shape.len() != 2 || self.out_shape.len() != 2 {
                    return bad("mixing layers act on 2-D token matrices");
                }
                if self.row_view_in().0 != self.row_view_out().0 {
                    return bad("mixing layers keep the row count");
                }
            }
            LayerKind::Classifier { pool_rows } => {
                if pool_rows == 0 || self.in_dim() % pool_rows != 0 {
                    return bad("pool rows must divide the classifier input");
                }
            }
        }
        if let Norm::Groups(g) = self.norm {
            if g == 0 || self.out_dim() % g != 0 {
                return bad("norm group must divide the layer output");
            }
        }
        Ok(())
    }
}

/// Architecture tag stored with a model and in checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    SMlp,
    SCnn,
    Mixer,
    IMlp(PriorKind),
    BudgetMlp1,
    BudgetMlp2,
    BudgetCnn1,
    BudgetCnn2,
    Custom,
}

impl Architecture {
    pub fn is_prior(&self) -> bool {
        matches!(
            self,
            Architecture::SCnn | Architecture::Mixer | Architecture::BudgetCnn1 | Architecture::BudgetCnn2
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Architecture,
    pub layers: Vec<LayerDef>,
}

impl ModelSpec {
    pub fn new(arch: Architecture, layers: Vec<LayerDef>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape("model chain", &pair[0].out_shape, &pair[1].in_shape));
            }
        }
        for l in &layers {
            l.validate()?;
        }
        Ok(Self { arch, layers })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerDef::param_count).sum()
    }

    /// Parameters (weights and biases) of the interpolable layers.
    pub fn interpolable_param_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.interpolable)
            .map(LayerDef::param_count)
            .sum()
    }

    pub fn interpolable_layers(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&i| self.layers[i].interpolable).collect()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.layers[0].in_shape
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, LayerDef::out_dim)
    }

    /// Same network with a classifier for `classes` outputs.
    pub fn with_classes(mut self, classes: usize) -> Result<Self> {
        match self.layers.last_mut() {
            Some(l) if matches!(l.kind, LayerKind::Classifier { .. }) => l.out_shape = vec![classes],
            _ => return Err(Error::invalid("model does not end in a classifier")),
        }
        Ok(self)
    }

    /// Fan-in scaled uniform initialization `U(−1/√fan_in, 1/√fan_in)` for
    /// weights and biases.
    pub fn instantiate<T: Scalar>(&self, rng: &mut Rng) -> Model<T> {
        let layers = self
            .layers
            .iter()
            .map(|def| {
                let (wshape, blen) = def.param_shapes();
                let fan_in: usize = wshape[1..].iter().product();
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weight = Tensor::from_fn(wshape, |_| T::lit(rng.uniform(-bound, bound)));
                let bias = Tensor::from_fn([blen], |_| T::lit(rng.uniform(-bound, bound)));
                Layer {
                    def: def.clone(),
                    weight,
                    bias,
                }
            })
            .collect();
        Model {
            spec: self.clone(),
            layers,
        }
    }

    pub fn zeros<T: Scalar>(&self) -> Model<T> {
        let layers = self
            .layers
            .iter()
            .map(|def| {
                let (wshape, blen) = def.param_shapes();
                Layer {
                    def: def.clone(),
                    weight: Tensor::zeros(wshape),
                    bias: Tensor::zeros([blen]),
                }
            })
            .collect();
        Model {
            spec: self.clone(),
            layers,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T = f32> {
    pub def: LayerDef,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    spec: ModelSpec,
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Model<T> {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn arch(&self) -> Architecture {
        self.spec.arch
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn classes(&self) -> usize {
        self.spec.classes()
    }

    /// Indices of interpolable layers, in order.
    pub fn interpolable_layers(&self) -> Vec<usize> {
        self.spec.interpolable_layers()
    }

    /// Weight then bias of every layer, in layer order.
    pub fn params(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.data()])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data_mut(), l.bias.data_mut()])
            .collect()
    }

    pub fn zero_biases(&mut self) {
        for l in &mut self.layers {
            l.bias.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    def: l.def.clone(),
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
        }
    }

    /// Sets the interpolable flags (used to mark which layers of a prior or
    /// an MLP take part in interpolation).
    pub fn with_interpolable(mut self, flags: &[bool]) -> Result<Self> {
        if flags.len() != self.layers.len() {
            return Err(Error::shape("interpolable flags", &[flags.len()], &[self.layers.len()]));
        }
        for ((l, d), &f) in self.layers.iter_mut().zip(self.spec.layers.iter_mut()).zip(flags) {
            l.def.interpolable = f;
            d.interpolable = f;
        }
        Ok(self)
    }
}
