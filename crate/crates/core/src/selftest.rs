//! Dataset-free checks of the structured-to-dense conversions, parameter
//! counts and analytic gradients. The CLI `selftest` command prints these.

use std::time::Instant;

use crate::error::Result;
use crate::model::{
    build_budgeted_mlps, build_imlp, build_mixer, build_scnn, build_smlp, Activation, Architecture, LayerDef,
    LayerKind, Model, ModelSpec, Norm, PriorKind,
};
use crate::ops::conv::ConvSpec;
use crate::ops::{cross_entropy, finite_diff_at, relative_error};
use crate::rng::Rng;
use crate::structured::{build_patchify_matrix, build_transpose_matrix, conv_to_fc, expand_shared_weight, PatchGrid};
use crate::tensor::{matmul, Scalar, Tensor};

/// Deliberate corruption used to confirm that a check can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Perturbs one entry of every converted convolution matrix.
    Conv,
}

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckOutcome {
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Direct six-loop cross-correlation with zero padding, no bias.
pub fn reference_conv2d<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (ho, wo) = spec.out_hw(h, w)?;
    let k = spec.kernel_size;
    let mut out = Tensor::zeros([spec.out_channels, ho, wo]);
    for o in 0..spec.out_channels {
        for i in 0..ho {
            for j in 0..wo {
                let mut acc = T::zero();
                for ci in 0..c {
                    for a in 0..k {
                        for b in 0..k {
                            let (y, z) = ((i * spec.stride + a) as isize, (j * spec.stride + b) as isize);
                            let (y, z) = (y - spec.padding as isize, z - spec.padding as isize);
                            if y < 0 || z < 0 || y >= h as isize || z >= w as isize {
                                continue;
                            }
                            let xv = x.data()[(ci * h + y as usize) * w + z as usize];
                            acc += kernel.data()[((o * c + ci) * k + a) * k + b] * xv;
                        }
                    }
                }
                out.data_mut()[(o * ho + i) * wo + j] = acc;
            }
        }
    }
    Ok(out)
}

/// Worst `‖W_F·vec(x) − vec(F∗x)‖∞` over `pairs` random kernels and inputs.
pub fn conv_fc_error<T: Scalar>(
    spec: &ConvSpec,
    in_shape: [usize; 3],
    pairs: usize,
    rng: &mut Rng,
    fault: Option<Fault>,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let kernel = Tensor::<T>::from_fn(spec.kernel_shape(), |_| T::lit(rng.normal()));
        let x = Tensor::<T>::from_fn(in_shape, |_| T::lit(rng.normal()));
        let mut fc = conv_to_fc(&kernel, spec, in_shape)?;
        if fault == Some(Fault::Conv) {
            fc.matrix.data_mut()[0] += T::lit(0.5);
        }
        let dense = fc.apply(x.data())?;
        let direct = reference_conv2d(&x, &kernel, spec)?;
        for (&a, &b) in dense.iter().zip(direct.data()) {
            worst = worst.max((a - b).abs().to_f64().unwrap_or(f64::INFINITY));
        }
    }
    Ok(worst)
}

/// Every convolution of the small CNN prior, checked in both precisions.
pub fn check_conv_fc(pairs: usize, fault: Option<Fault>) -> CheckOutcome {
    timed("conv-fc", || {
        let mut rng = Rng::new(0xC0);
        let (mut e32, mut e64) = (0.0f64, 0.0f64);
        for layer in &build_scnn()?.layers {
            let LayerKind::Conv2d(spec) = layer.kind else { continue };
            let in_shape = [layer.in_shape[0], layer.in_shape[1], layer.in_shape[2]];
            e32 = e32.max(conv_fc_error::<f32>(&spec, in_shape, pairs, &mut rng, fault)?);
            e64 = e64.max(conv_fc_error::<f64>(&spec, in_shape, pairs, &mut rng, fault)?);
        }
        Ok((e32 < 1e-4 && e64 < 1e-10, format!("max err f32 {e32:.2e}, f64 {e64:.2e}")))
    })
}

/// Patch extraction by explicit loops over the patch grid.
pub fn brute_force_patchify(height: usize, width: usize, patch: usize) -> Tensor<f64> {
    let n = height * width;
    let mut m = Tensor::zeros([n, n]);
    let mut row = 0;
    for big_r in 0..height / patch {
        for big_c in 0..width / patch {
            for r in 0..patch {
                for c in 0..patch {
                    let src = (big_r * patch + r) * width + big_c * patch + c;
                    m.data_mut()[row * n + src] = 1.0;
                    row += 1;
                }
            }
        }
    }
    m
}

fn is_orthogonal(m: &Tensor<f64>) -> Result<bool> {
    Ok(matmul(m, &m.transpose2()?)? == Tensor::identity(m.shape()[0]))
}

pub const PERMUTATION_CASES: [(usize, usize, usize); 3] = [(4, 4, 2), (32, 32, 8), (6, 9, 3)];

pub fn check_permutations() -> CheckOutcome {
    timed("permutations", || {
        let mut rng = Rng::new(0xB1);
        for (h, w, p) in PERMUTATION_CASES {
            let patchify = build_patchify_matrix::<f64>(PatchGrid::new(h, w, p)?);
            if patchify.matrix != brute_force_patchify(h, w, p) || !is_orthogonal(&patchify.matrix)? {
                return Ok((false, format!("patchify ({h},{w},{p})")));
            }
            let t = build_transpose_matrix::<f64>(h, w)?;
            let x = Tensor::<f64>::from_fn([h, w], |_| rng.normal());
            if t.apply(x.data())? != x.transpose2()?.into_data() || !is_orthogonal(&t.matrix)? {
                return Ok((false, format!("transpose ({h},{w})")));
            }
        }
        Ok((true, format!("{} grids", PERMUTATION_CASES.len())))
    })
}

/// `w_r` applied to each row of `x` separately, as `[repeats × c_out]`.
pub fn rowwise_apply<T: Scalar>(w_r: &Tensor<T>, x: &Tensor<T>) -> Result<Vec<T>> {
    let (c_out, c_in) = w_r.dims2()?;
    let mut out = Vec::with_capacity(x.len() / c_in * c_out);
    for row in x.data().chunks_exact(c_in) {
        for w in w_r.data().chunks_exact(c_in) {
            out.push(w.iter().zip(row).fold(T::zero(), |acc, (&a, &b)| acc + a * b));
        }
    }
    Ok(out)
}

pub fn check_shared_weight(cases: usize) -> CheckOutcome {
    timed("shared-weight", || {
        let mut rng = Rng::new(0x7E);
        for case in 0..cases {
            let (c_out, c_in, repeats) = (1 + rng.below(40), 1 + rng.below(40), 1 + rng.below(20));
            let w_r = Tensor::<f32>::from_fn([c_out, c_in], |_| rng.normal() as f32);
            let x = Tensor::<f32>::from_fn([repeats, c_in], |_| rng.normal() as f32);
            let block = expand_shared_weight(&w_r, repeats)?.apply(x.data())?;
            if block != rowwise_apply(&w_r, &x)? {
                return Ok((false, format!("case {case} ({c_out}x{c_in}, R={repeats})")));
            }
        }
        Ok((true, format!("{cases} cases exact")))
    })
}

/// Published model sizes.
pub fn golden_counts() -> Result<Vec<(&'static str, usize, usize)>> {
    let (mlp1, mlp2) = build_budgeted_mlps()?;
    Ok(vec![
        ("I-MLP (CNN)", build_imlp(PriorKind::Cnn)?.param_count(), 8_405_002),
        ("S-CNN", build_scnn()?.param_count(), 757_982),
        ("I-MLP (Mixer)", build_imlp(PriorKind::Mixer)?.param_count(), 39_865_610),
        ("Mixer", build_mixer()?.param_count(), 93_130),
        ("MLP-1", mlp1.param_count(), 16_922_724),
        ("MLP-2", mlp2.param_count(), 16_812_024),
    ])
}

pub fn check_param_counts() -> CheckOutcome {
    timed("param-counts", || {
        let counts = golden_counts()?;
        let wrong: Vec<String> = counts
            .iter()
            .filter(|(_, got, want)| got != want)
            .map(|(name, got, want)| format!("{name} {got} != {want}"))
            .collect();
        Ok((wrong.is_empty(), if wrong.is_empty() { format!("{} models", counts.len()) } else { wrong.join("; ") }))
    })
}

fn single(kind: LayerKind, in_shape: &[usize], out_shape: &[usize], norm: Norm, act: Activation) -> LayerDef {
    LayerDef {
        kind,
        in_shape: in_shape.to_vec(),
        out_shape: out_shape.to_vec(),
        norm,
        activation: act,
        interpolable: false,
        transpose_in: false,
        transpose_out: false,
    }
}

/// One small model per layer primitive, each with at least 200 parameters,
/// plus a two-layer MLP.
pub fn gradient_specs() -> Result<Vec<(&'static str, ModelSpec)>> {
    let fc = |norm, act| single(LayerKind::FullyConnected, &[20], &[12], norm, act);
    let mut tok = single(LayerKind::TokenMix, &[16, 5], &[5, 16], Norm::None, Activation::None);
    tok.transpose_in = true;
    let one = |l: LayerDef| ModelSpec::new(Architecture::Custom, vec![l]);
    Ok(vec![
        ("linear", one(fc(Norm::None, Activation::None))?),
        ("layernorm", one(fc(Norm::Full, Activation::None))?),
        ("gelu", one(fc(Norm::None, Activation::Gelu))?),
        (
            "conv2d",
            one(single(
                LayerKind::Conv2d(ConvSpec::new(3, 8, 3, 2, 1)),
                &[3, 6, 6],
                &[8, 3, 3],
                Norm::None,
                Activation::None,
            ))?,
        ),
        (
            "patch-embed",
            one(single(LayerKind::LinearPatchEmbed { patch: 2 }, &[3, 4, 4], &[4, 20], Norm::Groups(20), Activation::None))?,
        ),
        ("token-mix", one(tok)?),
        ("channel-mix", one(single(LayerKind::ChannelMix, &[4, 20], &[4, 12], Norm::None, Activation::Gelu))?),
        (
            "classifier",
            one(single(LayerKind::Classifier { pool_rows: 4 }, &[4, 20], &[12], Norm::None, Activation::None))?,
        ),
        ("two-layer", build_smlp(16, 1, 12, 6)?),
    ])
}

/// Largest relative error between backprop and central differences of the
/// cross-entropy loss, over up to `coords` distinct parameter coordinates.
/// Returns the error and the number of coordinates checked.
pub fn model_gradient_error(spec: &ModelSpec, batch: usize, coords: usize, seed: u64) -> Result<(f64, usize)> {
    let mut rng = Rng::new(seed);
    let model: Model<f64> = spec.instantiate(&mut rng);
    let x = Tensor::<f64>::from_fn([batch, spec.input_dim()], |_| rng.normal());
    let labels: Vec<usize> = (0..batch).map(|_| rng.below(spec.classes())).collect();
    let (logits, cache) = model.forward_train(&x)?;
    let (_, dlogits) = cross_entropy(&logits, &labels)?;
    let analytic: Vec<f64> = model.backward(&cache, &dlogits)?.as_slices().concat();
    let p0: Vec<f64> = model.params().concat();
    let p0 = Tensor::new([p0.len()], p0)?;
    let mut picks = rng.permutation(p0.len());
    picks.truncate(coords);
    let mut probe = model.clone();
    let loss = |p: &Tensor<f64>, probe: &mut Model<f64>| -> Result<f64> {
        let mut off = 0;
        for block in probe.params_mut() {
            block.copy_from_slice(&p.data()[off..off + block.len()]);
            off += block.len();
        }
        Ok(cross_entropy(&probe.forward(&x)?, &labels)?.0)
    };
    let mut failure = None;
    let numeric = finite_diff_at(
        |p| {
            loss(p, &mut probe).unwrap_or_else(|e| {
                failure = Some(e);
                f64::NAN
            })
        },
        &p0,
        &picks,
        1e-6,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let worst = picks
        .iter()
        .zip(&numeric)
        .map(|(&i, &fd)| relative_error(analytic[i], fd))
        .fold(0.0, f64::max);
    Ok((worst, picks.len()))
}

pub fn check_gradients() -> CheckOutcome {
    timed("gradients", || {
        let mut worst = 0.0f64;
        for (i, (name, spec)) in gradient_specs()?.iter().enumerate() {
            let (err, n) = model_gradient_error(spec, 3, 250, 40 + i as u64)?;
            if n < 200 || err.is_nan() || err >= 1e-3 {
                return Ok((false, format!("{name}: {err:.2e} over {n} coords")));
            }
            worst = worst.max(err);
        }
        Ok((true, format!("max rel err {worst:.2e}")))
    })
}

pub fn run_selftest(fault: Option<Fault>) -> Vec<CheckOutcome> {
    vec![
        check_conv_fc(20, fault),
        check_permutations(),
        check_shared_weight(50),
        check_param_counts(),
        check_gradients(),
    ]
}
