//! Dataset listing, train/val splitting and batch assembly.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::augment::{augment, AugmentPolicy};
use super::io::{load_sample, SamplePair};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Derives an independent stream seed from a base seed and a path of
/// indices (SplitMix64 finalizer folded over the path).
pub fn stream_seed(seed: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

pub fn stream_rng(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, path))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SamplePair>,
    pub val: Vec<SamplePair>,
    pub split_seed: u64,
}

/// Shuffles with `seed` and holds out `round(n * val_fraction)` samples,
/// clamped so both sides are non-empty. Each side keeps input order.
pub fn split_dataset(samples: Vec<SamplePair>, val_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "val_fraction must be in (0, 1), got {val_fraction}"
        )));
    }
    if n < 2 {
        return Err(Error::Data("need at least 2 samples to split".into()));
    }
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, &[]));
    let mut is_val = vec![false; n];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let (mut train, mut val) = (Vec::with_capacity(n - n_val), Vec::with_capacity(n_val));
    for (s, v) in samples.into_iter().zip(is_val) {
        if v {
            val.push(s);
        } else {
            train.push(s);
        }
    }
    Ok(DatasetSplit {
        train,
        val,
        split_seed: seed,
    })
}

/// Sample indices of each batch for one epoch. The order is a pure function
/// of `(shuffle_seed, epoch)`; the last batch may be short.
pub fn batch_plan(n: usize, batch_size: usize, shuffle_seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(shuffle_seed, &[epoch as u64]));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Images and masks stacked as `[N, 1, H, W]`, aligned index for index.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub masks: Tensor<f32>,
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Stacks the selected samples, augmenting each with its own
/// `(policy.seed, epoch, index)` stream when a policy is given.
pub fn assemble_batch(
    samples: &[SamplePair],
    indices: &[usize],
    policy: Option<&AugmentPolicy>,
    epoch: usize,
) -> Result<Batch> {
    let first = indices
        .first()
        .and_then(|&i| samples.get(i))
        .ok_or(Error::EmptyDataset)?;
    let (h, w) = (first.height(), first.width());
    let mut images = Vec::with_capacity(indices.len() * h * w);
    let mut masks = Vec::with_capacity(indices.len() * h * w);
    for &i in indices {
        let s = samples
            .get(i)
            .ok_or_else(|| Error::Data(format!("sample index {i} out of range")))?;
        let s = match policy {
            Some(p) => augment(s, p, &mut stream_rng(p.seed, &[epoch as u64, i as u64])),
            None => s.clone(),
        };
        if (s.height(), s.width()) != (h, w) {
            return Err(Error::ShapeMismatch(format!(
                "batch mixes {h}x{w} and {}x{} samples",
                s.height(),
                s.width()
            )));
        }
        images.extend_from_slice(s.image.data());
        masks.extend_from_slice(s.mask.data());
    }
    let shape = [indices.len(), 1, h, w];
    Ok(Batch {
        images: Tensor::new(shape, images)?,
        masks: Tensor::new(shape, masks)?,
        indices: indices.to_vec(),
    })
}

pub fn make_batches(
    samples: &[SamplePair],
    batch_size: usize,
    shuffle_seed: u64,
    epoch: usize,
    policy: Option<&AugmentPolicy>,
) -> Result<Vec<Batch>> {
    batch_plan(samples.len(), batch_size, shuffle_seed, epoch)?
        .iter()
        .map(|idx| assemble_batch(samples, idx, policy, epoch))
        .collect()
}

/// Reads `image<TAB>mask` lines. Relative paths resolve against the
/// manifest's directory; blank lines and `#` comments are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut pairs = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (img, mask) = line.split_once('\t').ok_or_else(|| {
            Error::Data(format!("{}:{}: expected image<TAB>mask", path.display(), no + 1))
        })?;
        pairs.push((base.join(img.trim()), base.join(mask.trim())));
    }
    Ok(pairs)
}

/// Pairs `root/images/<name>` with `root/masks/<name>`, sorted by name.
pub fn list_dir_pairs(root: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let images = root.join("images");
    let masks = root.join("masks");
    if !images.is_dir() {
        return Err(Error::FileNotFound(images));
    }
    let mut names: Vec<_> = std::fs::read_dir(&images)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name())
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let m = masks.join(&name);
            if m.is_file() {
                Ok((images.join(&name), m))
            } else {
                Err(Error::Data(format!("no mask for {}", images.join(&name).display())))
            }
        })
        .collect()
}

pub fn load_pairs(pairs: &[(PathBuf, PathBuf)], threshold: f64) -> Result<Vec<SamplePair>> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    crate::par::map_indexed(pairs.len(), |i| load_sample(&pairs[i].0, &pairs[i].1, threshold))
        .into_iter()
        .collect()
}
