use super::{LayerKind, Model};
use crate::error::{Error, Result};
use crate::structured::{
    build_patchify_matrix, build_transpose_matrix, compose_prior, conv_to_fc, expand_shared_weight,
    FcEquivalent, PatchGrid,
};
use crate::tensor::Scalar;

/// Dense matrix of every interpolable layer of a prior, in layer order.
pub fn extract_prior_fc<T: Scalar>(prior: &Model<T>) -> Result<Vec<FcEquivalent<T>>> {
    if !prior.arch().is_prior() {
        return Err(Error::invalid(format!("{:?} is not a prior architecture", prior.arch())));
    }
    let idx = prior.interpolable_layers();
    if idx.is_empty() {
        return Err(Error::invalid("prior has no interpolable layers"));
    }
    idx.into_iter().map(|i| layer_fc(prior, i)).collect()
}

fn layer_fc<T: Scalar>(prior: &Model<T>, i: usize) -> Result<FcEquivalent<T>> {
    let layer = &prior.layers[i];
    let def = &layer.def;
    match def.kind {
        LayerKind::Conv2d(spec) => {
            let [c, h, w] = [def.in_shape[0], def.in_shape[1], def.in_shape[2]];
            conv_to_fc(&layer.weight, &spec, [c, h, w])
        }
        LayerKind::LinearPatchEmbed { patch } => {
            let grid = PatchGrid::with_channels(def.in_shape[1], def.in_shape[2], patch, def.in_shape[0])?;
            let shared = expand_shared_weight(&layer.weight, grid.num_patches())?;
            compose_prior(&shared, Some(&build_patchify_matrix(grid)))
        }
        LayerKind::TokenMix | LayerKind::ChannelMix => {
            let (rows, _) = def.row_view_in();
            let (_, c_out) = def.row_view_out();
            let shared = expand_shared_weight(&layer.weight, rows)?;
            let t_in = if def.transpose_in {
                Some(build_transpose_matrix(def.in_shape[0], def.in_shape[1])?)
            } else {
                None
            };
            let inner = compose_prior(&shared, t_in.as_ref())?;
            if def.transpose_out {
                compose_prior(&build_transpose_matrix(rows, c_out)?, Some(&inner))
            } else {
                Ok(inner)
            }
        }
        LayerKind::FullyConnected | LayerKind::Classifier { .. } => Err(Error::invalid(format!(
            "layer {i} ({:?}) has no structured equivalent",
            def.kind
        ))),
    }
}
