//! Checkpoint file: one line of JSON header terminated by `\n`, then every
//! layer's weight and bias as little-endian `f32`, in layer order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const MAGIC: &str = "biasblend-checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub spec: ModelSpec,
    pub shapes: Vec<Vec<usize>>,
    pub seed: u64,
    pub epoch: usize,
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, model: &Model<T>, seed: u64, epoch: usize) -> Result<()> {
    let header = CheckpointHeader {
        format: MAGIC.to_string(),
        version: 1,
        spec: model.spec().clone(),
        shapes: model
            .layers
            .iter()
            .flat_map(|l| [l.weight.shape().to_vec(), l.bias.shape().to_vec()])
            .collect(),
        seed,
        epoch,
    };
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for block in model.params() {
        for v in block {
            out.write_all(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model<f32>, CheckpointHeader)> {
    let bad = |m: String| Error::Checkpoint(m);
    let mut input = BufReader::new(File::open(path)?);
    let mut line = Vec::new();
    input.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(bad("missing header terminator".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&line)?;
    if header.format != MAGIC || header.version != 1 {
        return Err(bad(format!("unsupported format {} v{}", header.format, header.version)));
    }
    let spec = ModelSpec::new(header.spec.arch, header.spec.layers.clone())?;
    let mut model = spec.zeros::<f32>();
    let expected: Vec<Vec<usize>> = model
        .layers
        .iter()
        .flat_map(|l| [l.weight.shape().to_vec(), l.bias.shape().to_vec()])
        .collect();
    if expected != header.shapes {
        return Err(bad("parameter shapes disagree with the layer definitions".into()));
    }
    let mut buf = [0u8; 4];
    for block in model.params_mut() {
        for v in block.iter_mut() {
            input
                .read_exact(&mut buf)
                .map_err(|_| bad("parameter data truncated".into()))?;
            *v = f32::from_le_bytes(buf);
        }
    }
    if input.read(&mut buf)? != 0 {
        return Err(bad("trailing bytes after parameter data".into()));
    }
    Ok((model, header))
}

impl<T: Scalar> Model<T> {
    /// Replaces this model's parameters with another model's of the same spec.
    pub fn copy_params_from(&mut self, other: &Model<T>) -> Result<()> {
        if self.spec() != other.spec() {
            return Err(Error::invalid("cannot copy parameters across model specs"));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight = b.weight.clone();
            a.bias = b.bias.clone();
        }
        Ok(())
    }

    pub fn layer_weight(&self, i: usize) -> &Tensor<T> {
        &self.layers[i].weight
    }
}
