//! CIFAR-10/100 binary files, normalization, augmentation and subsets.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const CHANNELS: usize = 3;
pub const SIDE: usize = 32;
pub const IMAGE_LEN: usize = CHANNELS * SIDE * SIDE;
/// Reflect padding used by [`augment`].
pub const PAD: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Cifar10,
    Cifar100,
}

impl Variant {
    pub fn classes(self) -> usize {
        match self {
            Variant::Cifar10 => 10,
            Variant::Cifar100 => 100,
        }
    }

    /// Bytes per record: label byte(s) followed by 3072 pixel bytes.
    pub fn record_size(self) -> usize {
        match self {
            Variant::Cifar10 => 1 + IMAGE_LEN,
            Variant::Cifar100 => 2 + IMAGE_LEN,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Cifar10 => "cifar10",
            Variant::Cifar100 => "cifar100",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cifar10" => Some(Variant::Cifar10),
            "cifar100" => Some(Variant::Cifar100),
            _ => None,
        }
    }

    fn subdir(self) -> &'static str {
        match self {
            Variant::Cifar10 => "cifar-10-batches-bin",
            Variant::Cifar100 => "cifar-100-binary",
        }
    }

    /// Files making up a split, relative to the dataset root.
    pub fn files(self, split: Split) -> Vec<PathBuf> {
        let names: Vec<String> = match (self, split) {
            (Variant::Cifar10, Split::Train) => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
            (Variant::Cifar10, Split::Test) => vec!["test_batch.bin".into()],
            (Variant::Cifar100, Split::Train) => vec!["train.bin".into()],
            (Variant::Cifar100, Split::Test) => vec!["test.bin".into()],
        };
        names.into_iter().map(|n| Path::new(self.subdir()).join(n)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

/// One image as a `[3, 32, 32]` tensor and its class.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub pixels: Tensor<f32>,
    pub label: usize,
}

/// Images stored contiguously, `[n, 3, 32, 32]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub variant: Variant,
    pub split: Split,
    images: Vec<f32>,
    labels: Vec<usize>,
    /// CIFAR-100 coarse labels, kept so records re-encode exactly.
    coarse: Vec<u8>,
}

impl Dataset {
    pub fn new(variant: Variant, split: Split, images: Vec<f32>, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() * IMAGE_LEN {
            return Err(Error::shape("dataset", &[images.len()], &[labels.len(), IMAGE_LEN]));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= variant.classes()) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: variant.classes(),
            });
        }
        let coarse = match variant {
            Variant::Cifar10 => Vec::new(),
            Variant::Cifar100 => vec![0; labels.len()],
        };
        Ok(Self {
            variant,
            split,
            images,
            labels,
            coarse,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.variant.classes()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn images(&self) -> &[f32] {
        &self.images
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.images[i * IMAGE_LEN..(i + 1) * IMAGE_LEN]
    }

    pub fn get(&self, i: usize) -> LabeledImage {
        LabeledImage {
            pixels: Tensor::new([CHANNELS, SIDE, SIDE], self.image(i).to_vec()).expect("image length"),
            label: self.labels[i],
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Records at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(indices.len() * IMAGE_LEN);
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Dataset {
            variant: self.variant,
            split: self.split,
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            coarse: if self.coarse.is_empty() {
                Vec::new()
            } else {
                indices.iter().map(|&i| self.coarse[i]).collect()
            },
        }
    }

    /// The canonical binary record of image `i`. Pixels must be in `[0, 1]`.
    pub fn encode_record(&self, i: usize) -> Vec<u8> {
        let mut rec = Vec::with_capacity(self.variant.record_size());
        match self.variant {
            Variant::Cifar10 => rec.push(self.labels[i] as u8),
            Variant::Cifar100 => {
                rec.push(self.coarse[i]);
                rec.push(self.labels[i] as u8);
            }
        }
        rec.extend(self.image(i).iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
        rec
    }

    /// Every record, concatenated.
    pub fn encode(&self) -> Vec<u8> {
        (0..self.len()).flat_map(|i| self.encode_record(i)).collect()
    }
}

/// Decodes a buffer of whole records. `origin` only labels errors.
pub fn parse_records(bytes: &[u8], variant: Variant, split: Split, origin: &Path) -> Result<Dataset> {
    let rs = variant.record_size();
    let format = |offset: usize, message: String| Error::Format {
        path: origin.to_path_buf(),
        offset: offset as u64,
        message,
    };
    if bytes.len() % rs != 0 {
        let offset = bytes.len() - bytes.len() % rs;
        return Err(format(
            offset,
            format!("truncated record: {} trailing bytes, records are {rs} bytes", bytes.len() % rs),
        ));
    }
    let n = bytes.len() / rs;
    let mut images = Vec::with_capacity(n * IMAGE_LEN);
    let mut labels = Vec::with_capacity(n);
    let mut coarse = Vec::new();
    for (r, rec) in bytes.chunks_exact(rs).enumerate() {
        let (label, pixels) = match variant {
            Variant::Cifar10 => (rec[0], &rec[1..]),
            Variant::Cifar100 => {
                coarse.push(rec[0]);
                (rec[1], &rec[2..])
            }
        };
        if usize::from(label) >= variant.classes() {
            return Err(format(r * rs, format!("label {label} out of range")));
        }
        labels.push(usize::from(label));
        images.extend(pixels.iter().map(|&p| f32::from(p) / 255.0));
    }
    Ok(Dataset {
        variant,
        split,
        images,
        labels,
        coarse,
    })
}

/// Loads a split from `root` (the directory containing
/// `cifar-10-batches-bin/` or `cifar-100-binary/`).
pub fn load_cifar(root: impl AsRef<Path>, variant: Variant, split: Split) -> Result<Dataset> {
    let mut all: Option<Dataset> = None;
    for rel in variant.files(split) {
        let path = root.as_ref().join(rel);
        let bytes = fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingData {
                path: path.clone(),
                record_size: variant.record_size(),
            },
            _ => Error::Io(e),
        })?;
        let part = parse_records(&bytes, variant, split, &path)?;
        match all.as_mut() {
            None => all = Some(part),
            Some(acc) => {
                acc.images.extend_from_slice(&part.images);
                acc.labels.extend_from_slice(&part.labels);
                acc.coarse.extend_from_slice(&part.coarse);
            }
        }
    }
    Ok(all.expect("every split has at least one file"))
}

/// Writes both splits in the canonical file layout under `root`.
pub fn write_cifar(root: impl AsRef<Path>, train: &Dataset, test: &Dataset) -> Result<()> {
    let variant = train.variant;
    for (data, split) in [(train, Split::Train), (test, Split::Test)] {
        let files = variant.files(split);
        let per = data.len().div_ceil(files.len());
        for (k, rel) in files.iter().enumerate() {
            let path = root.as_ref().join(rel);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir)?;
            }
            let lo = (k * per).min(data.len());
            let hi = ((k + 1) * per).min(data.len());
            let bytes: Vec<u8> = (lo..hi).flat_map(|i| data.encode_record(i)).collect();
            fs::write(path, bytes)?;
        }
    }
    Ok(())
}

/// Per-channel mean and standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f32; CHANNELS],
    pub std: [f32; CHANNELS],
}

impl ChannelStats {
    pub const STD_FLOOR: f64 = 1e-8;

    /// Population statistics over every pixel of every image.
    pub fn compute(data: &Dataset) -> Self {
        let plane = SIDE * SIDE;
        let mut sum = [0f64; CHANNELS];
        let mut sq = [0f64; CHANNELS];
        for img in data.images.chunks_exact(IMAGE_LEN) {
            for (c, p) in img.chunks_exact(plane).enumerate() {
                for &v in p {
                    sum[c] += f64::from(v);
                    sq[c] += f64::from(v) * f64::from(v);
                }
            }
        }
        let count = (data.len() * plane).max(1) as f64;
        let mut mean = [0f32; CHANNELS];
        let mut std = [0f32; CHANNELS];
        for c in 0..CHANNELS {
            let m = sum[c] / count;
            let var = (sq[c] / count - m * m).max(0.0);
            mean[c] = m as f32;
            std[c] = var.sqrt().max(Self::STD_FLOOR) as f32;
        }
        Self { mean, std }
    }
}

/// Standardizes `[n, 3, 32, 32]` images in place with fixed statistics.
pub fn normalize(images: &mut [f32], stats: &ChannelStats) {
    let plane = SIDE * SIDE;
    for img in images.chunks_exact_mut(IMAGE_LEN) {
        for (c, p) in img.chunks_exact_mut(plane).enumerate() {
            let (m, s) = (stats.mean[c], stats.std[c]);
            p.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
    }
}

impl Dataset {
    /// Copy standardized with `stats` (computed on the training split).
    pub fn normalized(&self, stats: &ChannelStats) -> Dataset {
        let mut out = self.clone();
        normalize(&mut out.images, stats);
        out
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Crop at offset `(dy, dx)` of the reflect-padded image (each in
/// `0..=2·PAD`; `(PAD, PAD)` is the centre), optionally mirrored
/// left-right.
pub fn augment_with(image: &[f32], dy: usize, dx: usize, flip: bool) -> Vec<f32> {
    assert_eq!(image.len(), IMAGE_LEN, "augment expects a 3x32x32 image");
    assert!(dy <= 2 * PAD && dx <= 2 * PAD, "crop offset out of range");
    let mut out = vec![0f32; IMAGE_LEN];
    let plane = SIDE * SIDE;
    for c in 0..CHANNELS {
        for y in 0..SIDE {
            let sy = reflect(y as isize + dy as isize - PAD as isize, SIDE);
            for x in 0..SIDE {
                let xx = if flip { SIDE - 1 - x } else { x };
                let sx = reflect(xx as isize + dx as isize - PAD as isize, SIDE);
                out[c * plane + y * SIDE + x] = image[c * plane + sy * SIDE + sx];
            }
        }
    }
    out
}

/// Random crop of the 4-pixel reflect-padded image plus a horizontal flip
/// with probability one half.
pub fn augment(image: &[f32], rng: &mut Rng) -> Vec<f32> {
    let dy = rng.below(2 * PAD + 1);
    let dx = rng.below(2 * PAD + 1);
    let flip = rng.bernoulli(0.5);
    augment_with(image, dy, dx, flip)
}

/// Deterministic stratified sample of `n` records: per-class counts differ
/// by at most one (subject to availability). `n` equal to the dataset size
/// returns the original order.
pub fn subset(data: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    let classes = data.classes();
    if n > data.len() {
        return Err(Error::invalid(format!("subset of {n} from {} records", data.len())));
    }
    if n == data.len() {
        return Ok(data.clone());
    }
    if n < classes {
        return Err(Error::invalid(format!("subset of {n} is smaller than the {classes} classes")));
    }
    let mut rng = Rng::new(seed).derive("subset");
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in data.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for idx in &mut by_class {
        rng.shuffle(idx);
    }
    // Water-fill quotas so that scarce classes give their share to others.
    let mut quota = vec![0usize; classes];
    let mut left = n;
    let order = rng.permutation(classes);
    while left > 0 {
        let open: Vec<usize> = order.iter().copied().filter(|&c| quota[c] < by_class[c].len()).collect();
        let share = (left / open.len()).max(1);
        for c in open {
            if left == 0 {
                break;
            }
            let take = share.min(by_class[c].len() - quota[c]).min(left);
            quota[c] += take;
            left -= take;
        }
    }
    let mut chosen: Vec<usize> = by_class
        .iter()
        .zip(&quota)
        .flat_map(|(idx, &q)| idx[..q].iter().copied())
        .collect();
    chosen.sort_unstable();
    Ok(data.select(&chosen))
}

/// Learnable stand-in data in `[0, 1]`: every class has a smooth colour
/// pattern, and samples add per-pixel noise and a random brightness shift.
pub fn synthetic(variant: Variant, split: Split, n: usize, seed: u64) -> Dataset {
    let classes = variant.classes();
    let mut proto_rng = Rng::new(seed).derive("prototypes");
    let protos: Vec<Vec<f32>> = (0..classes)
        .map(|_| {
            let f = [proto_rng.uniform(0.5, 3.0), proto_rng.uniform(0.5, 3.0)];
            let phase: Vec<f64> = (0..CHANNELS).map(|_| proto_rng.uniform(0.0, 6.28)).collect();
            let mut img = vec![0f32; IMAGE_LEN];
            for c in 0..CHANNELS {
                for y in 0..SIDE {
                    for x in 0..SIDE {
                        let (u, v) = (y as f64 / SIDE as f64, x as f64 / SIDE as f64);
                        let s = (6.28 * (f[0] * u + f[1] * v) + phase[c]).sin();
                        img[c * SIDE * SIDE + y * SIDE + x] = (0.5 + 0.3 * s) as f32;
                    }
                }
            }
            img
        })
        .collect();
    let label = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    let mut rng = Rng::new(seed).derive(label);
    let mut images = Vec::with_capacity(n * IMAGE_LEN);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    for &l in &labels {
        let shift = rng.uniform(-0.1, 0.1);
        images.extend(
            protos[l]
                .iter()
                .map(|&p| (f64::from(p) + shift + 0.15 * rng.normal()).clamp(0.0, 1.0) as f32),
        );
    }
    // Quantize to the 1/255 grid so the data survives a file round trip.
    images.iter_mut().for_each(|v| *v = (*v * 255.0).round() / 255.0);
    Dataset::new(variant, split, images, labels).expect("synthetic dataset is consistent")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 32), 1);
        assert_eq!(reflect(-4, 32), 4);
        assert_eq!(reflect(32, 32), 30);
        assert_eq!(reflect(35, 32), 27);
        assert_eq!(reflect(7, 32), 7);
    }

    #[test]
    fn truncated_buffer_reports_offset() {
        let bytes = vec![0u8; 3073 * 2 + 10];
        let err = parse_records(&bytes, Variant::Cifar10, Split::Train, Path::new("x.bin")).unwrap_err();
        match err {
            Error::Format { offset, .. } => assert_eq!(offset, 6146),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cifar100_uses_fine_label() {
        let mut rec = vec![0u8; 3074];
        rec[0] = 3;
        rec[1] = 42;
        let d = parse_records(&rec, Variant::Cifar100, Split::Test, Path::new("t")).unwrap();
        assert_eq!(d.labels(), &[42]);
        assert_eq!(d.encode_record(0), rec);
    }
}
