use super::{Activation, Architecture, LayerDef, LayerKind, ModelSpec, Norm, PriorKind};
use crate::error::Result;
use crate::ops::conv::ConvSpec;

const IMAGE: [usize; 3] = [3, 32, 32];
const CLASSES: usize = 10;

/// Parameters (weights and biases) that both budgeted MLPs share with
/// their prior: exactly one 3072→3072 layer's worth.
pub const BUDGET_INTERPOLATED_PARAMS: usize = 9_440_256;

/// One hidden fully-connected layer of a generic MLP.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HiddenLayer {
    pub width: usize,
    pub norm: Norm,
    pub activation: Activation,
    pub interpolable: bool,
}

impl HiddenLayer {
    pub fn plain(width: usize) -> Self {
        Self {
            width,
            norm: Norm::None,
            activation: Activation::None,
            interpolable: false,
        }
    }

    pub fn block(width: usize) -> Self {
        Self {
            width,
            norm: Norm::Full,
            activation: Activation::Gelu,
            interpolable: false,
        }
    }

    pub fn interpolable(mut self) -> Self {
        self.interpolable = true;
        self
    }
}

fn fc(d_in: usize, h: HiddenLayer) -> LayerDef {
    LayerDef {
        kind: LayerKind::FullyConnected,
        in_shape: vec![d_in],
        out_shape: vec![h.width],
        norm: h.norm,
        activation: h.activation,
        interpolable: h.interpolable,
        transpose_in: false,
        transpose_out: false,
    }
}

fn classifier(in_shape: Vec<usize>, pool_rows: usize, classes: usize) -> LayerDef {
    LayerDef {
        kind: LayerKind::Classifier { pool_rows },
        in_shape,
        out_shape: vec![classes],
        norm: Norm::None,
        activation: Activation::None,
        interpolable: false,
        transpose_in: false,
        transpose_out: false,
    }
}

/// Fully-connected stack ending in a linear classifier. With
/// `pool_rows > 1` the classifier averages the last hidden vector viewed as
/// `[pool_rows, width / pool_rows]` before projecting.
pub fn build_mlp(
    arch: Architecture,
    in_dim: usize,
    hidden: &[HiddenLayer],
    classes: usize,
    pool_rows: usize,
) -> Result<ModelSpec> {
    let mut layers = Vec::with_capacity(hidden.len() + 1);
    let mut d = in_dim;
    for &h in hidden {
        layers.push(fc(d, h));
        d = h.width;
    }
    layers.push(classifier(vec![d], pool_rows, classes));
    ModelSpec::new(arch, layers)
}

/// `depth` hidden layers of `width`; layers 1 and 5 carry LayerNorm + GELU,
/// the rest are purely linear.
pub fn build_smlp(width: usize, depth: usize, in_dim: usize, classes: usize) -> Result<ModelSpec> {
    let hidden: Vec<HiddenLayer> = (1..=depth)
        .map(|i| {
            if i == 1 || i == 5 {
                HiddenLayer::block(width)
            } else {
                HiddenLayer::plain(width)
            }
        })
        .collect();
    build_mlp(Architecture::SMlp, in_dim, &hidden, classes, 1)
}

/// The plain MLP paired with a given prior: same layout as the I-MLP, no
/// interpolable flags.
pub fn build_smlp_for(prior: PriorKind) -> Result<ModelSpec> {
    let mut spec = build_imlp(prior)?;
    spec.arch = Architecture::SMlp;
    for l in &mut spec.layers {
        l.interpolable = false;
    }
    Ok(spec)
}

/// MLP whose hidden layers mirror the prior's flattened shapes layer for
/// layer, with every hidden layer interpolable.
pub fn build_imlp(prior: PriorKind) -> Result<ModelSpec> {
    let mut spec = match prior {
        PriorKind::Cnn => build_smlp(1024, 6, 3072, CLASSES)?,
        PriorKind::Mixer => {
            let (tokens, channels) = (16, 128);
            let hidden: Vec<HiddenLayer> = (1..=9)
                .map(|i| HiddenLayer {
                    width: tokens * channels,
                    norm: if i % 2 == 1 {
                        Norm::Groups(channels)
                    } else {
                        Norm::None
                    },
                    activation: if i % 2 == 0 {
                        Activation::Gelu
                    } else {
                        Activation::None
                    },
                    interpolable: false,
                })
                .collect();
            build_mlp(Architecture::SMlp, 3072, &hidden, CLASSES, tokens)?
        }
    };
    spec.arch = Architecture::IMlp(prior);
    let last = spec.layers.len() - 1;
    for l in &mut spec.layers[..last] {
        l.interpolable = true;
    }
    Ok(spec)
}

/// One convolution stage: output channels, stride, whether LayerNorm + GELU
/// follow, and whether the layer is interpolable.
#[derive(Clone, Copy, Debug)]
struct ConvStage {
    out: usize,
    stride: usize,
    block: bool,
    interpolable: bool,
}

/// 3×3, padding-1 convolution stack on a `[c, h, w]` input followed by a
/// linear classifier on the flattened features.
fn build_cnn_stages(arch: Architecture, input: [usize; 3], stages: &[ConvStage], classes: usize) -> Result<ModelSpec> {
    let mut layers = Vec::with_capacity(stages.len() + 1);
    let [mut c, mut h, mut w] = input;
    for s in stages {
        let spec = ConvSpec::new(c, s.out, 3, s.stride, 1);
        let (ho, wo) = spec.out_hw(h, w)?;
        layers.push(LayerDef {
            kind: LayerKind::Conv2d(spec),
            in_shape: vec![c, h, w],
            out_shape: vec![s.out, ho, wo],
            norm: if s.block { Norm::Full } else { Norm::None },
            activation: if s.block { Activation::Gelu } else { Activation::None },
            interpolable: s.interpolable,
            transpose_in: false,
            transpose_out: false,
        });
        (c, h, w) = (s.out, ho, wo);
    }
    layers.push(classifier(vec![c * h * w], 1, classes));
    ModelSpec::new(arch, layers)
}

/// Generic CNN from `(out_channels, stride)` pairs, every stage followed by
/// LayerNorm + GELU and marked interpolable.
pub fn build_cnn(input: [usize; 3], stages: &[(usize, usize)], classes: usize) -> Result<ModelSpec> {
    let stages: Vec<ConvStage> = stages
        .iter()
        .map(|&(out, stride)| ConvStage {
            out,
            stride,
            block: true,
            interpolable: true,
        })
        .collect();
    build_cnn_stages(Architecture::Custom, input, &stages, classes)
}

/// Six 3×3 convolutions whose flattened outputs are all 1024 wide:
/// `[1,32,32] [4,16,16] [16,8,8] [64,4,4] [256,2,2] [256,2,2]`. Layers 1
/// and 6 keep stride 1.
pub fn build_scnn() -> Result<ModelSpec> {
    let plan = [(1, 1), (4, 2), (16, 2), (64, 2), (256, 2), (256, 1)];
    let stages: Vec<ConvStage> = plan
        .iter()
        .enumerate()
        .map(|(i, &(out, stride))| ConvStage {
            out,
            stride,
            block: i == 0 || i == 4,
            interpolable: true,
        })
        .collect();
    build_cnn_stages(Architecture::SCnn, IMAGE, &stages, CLASSES)
}

/// Two-block MLP-Mixer without skip connections: 8×8 patch embedding to
/// `[16, 128]`, then per block a token MLP (16→16→16 along patches) and a
/// channel MLP (128→128→128), and a mean-pooled classifier.
pub fn build_mixer() -> Result<ModelSpec> {
    let (s, c, p) = (16, 128, 8);
    let mut layers = vec![LayerDef {
        kind: LayerKind::LinearPatchEmbed { patch: p },
        in_shape: IMAGE.to_vec(),
        out_shape: vec![s, c],
        norm: Norm::Groups(c),
        activation: Activation::None,
        interpolable: true,
        transpose_in: false,
        transpose_out: false,
    }];
    let mix = |kind, in_shape: [usize; 2], out_shape: [usize; 2], t_in, t_out, norm: bool| LayerDef {
        kind,
        in_shape: in_shape.to_vec(),
        out_shape: out_shape.to_vec(),
        norm: if norm { Norm::Groups(c) } else { Norm::None },
        activation: if norm { Activation::None } else { Activation::Gelu },
        interpolable: true,
        transpose_in: t_in,
        transpose_out: t_out,
    };
    for _ in 0..2 {
        layers.push(mix(LayerKind::TokenMix, [s, c], [c, s], true, false, false));
        layers.push(mix(LayerKind::TokenMix, [c, s], [s, c], false, true, true));
        layers.push(mix(LayerKind::ChannelMix, [s, c], [s, c], false, false, false));
        layers.push(mix(LayerKind::ChannelMix, [s, c], [s, c], false, false, true));
    }
    layers.push(classifier(vec![s, c], s, CLASSES));
    ModelSpec::new(Architecture::Mixer, layers)
}

const MLP1_INTERP: [usize; 6] = [1024, 1152, 1136, 1152, 1120, 1072];
const MLP1_TAIL: [usize; 4] = [1536, 1536, 954, 2080];
const MLP2_INTERP: [usize; 1] = [3072];
const MLP2_TAIL: [usize; 4] = [1024, 1024, 1596, 958];

fn budget_mlp(arch: Architecture, interp: &[usize], tail: &[usize]) -> Result<ModelSpec> {
    let hidden: Vec<HiddenLayer> = interp
        .iter()
        .map(|&w| HiddenLayer::block(w).interpolable())
        .chain(tail.iter().map(|&w| HiddenLayer::block(w)))
        .collect();
    build_mlp(arch, 3072, &hidden, CLASSES, 1)
}

/// `(MLP-1, MLP-2)`: equal interpolation budgets, spread over six layers in
/// MLP-1 and concentrated in one 3072-wide first layer in MLP-2.
///
/// # Panics
/// If the widths ever stop matching the published totals.
pub fn build_budgeted_mlps() -> Result<(ModelSpec, ModelSpec)> {
    let mlp1 = budget_mlp(Architecture::BudgetMlp1, &MLP1_INTERP, &MLP1_TAIL)?;
    let mlp2 = budget_mlp(Architecture::BudgetMlp2, &MLP2_INTERP, &MLP2_TAIL)?;
    assert_eq!(mlp1.param_count(), 16_922_724, "MLP-1 width plan drifted");
    assert_eq!(mlp2.param_count(), 16_812_024, "MLP-2 width plan drifted");
    assert_eq!(mlp1.interpolable_param_count(), BUDGET_INTERPOLATED_PARAMS);
    assert_eq!(mlp2.interpolable_param_count(), BUDGET_INTERPOLATED_PARAMS);
    Ok((mlp1, mlp2))
}

/// CNN priors for the budgeted MLPs, `(CNN-1, CNN-2)`. Their interpolable
/// convolutions have the same flattened widths as the MLPs' interpolable
/// layers.
pub fn build_budget_priors() -> Result<(ModelSpec, ModelSpec)> {
    let stage = |out, stride, interpolable| ConvStage {
        out,
        stride,
        block: true,
        interpolable,
    };
    let cnn1 = [
        stage(4, 2, true),
        stage(18, 2, true),
        stage(71, 2, true),
        stage(72, 1, true),
        stage(280, 2, true),
        stage(268, 1, true),
    ];
    let cnn2 = [
        stage(3, 1, true),
        stage(4, 2, false),
        stage(16, 2, false),
        stage(64, 2, false),
        stage(256, 2, false),
        stage(256, 1, false),
    ];
    Ok((
        build_cnn_stages(Architecture::BudgetCnn1, IMAGE, &cnn1, CLASSES)?,
        build_cnn_stages(Architecture::BudgetCnn2, IMAGE, &cnn2, CLASSES)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_zero_is_a_classifier() {
        let spec = build_smlp(1024, 0, 3072, 10).unwrap();
        assert_eq!(spec.layers.len(), 1);
        assert_eq!(spec.param_count(), 3072 * 10 + 10);
    }

    #[test]
    fn scnn_flat_widths() {
        let spec = build_scnn().unwrap();
        for l in &spec.layers[..6] {
            assert_eq!(l.out_dim(), 1024);
        }
        assert_eq!(spec.layers[5].out_shape, [256, 2, 2]);
    }

    #[test]
    fn budget_interpolable_widths_line_up() {
        let (m1, m2) = build_budgeted_mlps().unwrap();
        let (c1, c2) = build_budget_priors().unwrap();
        for (mlp, cnn) in [(&m1, &c1), (&m2, &c2)] {
            let a = mlp.interpolable_layers();
            let b = cnn.interpolable_layers();
            assert_eq!(a.len(), b.len());
            for (&i, &j) in a.iter().zip(&b) {
                assert_eq!(mlp.layers[i].in_dim(), cnn.layers[j].in_dim());
                assert_eq!(mlp.layers[i].out_dim(), cnn.layers[j].out_dim());
            }
        }
    }
}
