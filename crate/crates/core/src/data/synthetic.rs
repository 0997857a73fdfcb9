//! Synthetic "circles" segmentation data.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::stream_rng;
use super::io::{write_gray_png, write_mask_png, SamplePair};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CirclesConfig {
    pub count: usize,
    pub size: usize,
    pub min_circles: usize,
    pub max_circles: usize,
    /// Std of the additive Gaussian pixel noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for CirclesConfig {
    fn default() -> Self {
        Self {
            count: 200,
            size: 64,
            min_circles: 1,
            max_circles: 4,
            noise: 0.08,
            seed: 0,
        }
    }
}

/// One image per index, each drawn from its own `(seed, index)` stream:
/// `min..=max` filled circles, mask = union, image = dim noisy background
/// with brighter noisy discs.
pub fn synthetic_circles(cfg: &CirclesConfig) -> Result<Vec<SamplePair>> {
    if cfg.size < 8 || cfg.min_circles == 0 || cfg.min_circles > cfg.max_circles {
        return Err(Error::InvalidConfig(format!("bad synthetic dataset config {cfg:?}")));
    }
    let noise = Normal::new(0.0, cfg.noise)
        .map_err(|e| Error::InvalidConfig(format!("noise: {e}")))?;
    let n = cfg.size;
    let size = n as f64;
    Ok((0..cfg.count)
        .map(|i| {
            let mut rng = stream_rng(cfg.seed, &[i as u64]);
            let k = rng.random_range(cfg.min_circles..=cfg.max_circles);
            let circles: Vec<(f64, f64, f64)> = (0..k)
                .map(|_| {
                    let r = rng.random_range(size / 12.0..size / 5.0);
                    let cy = rng.random_range(r..size - r);
                    let cx = rng.random_range(r..size - r);
                    (cy, cx, r)
                })
                .collect();
            let bg = rng.random_range(0.1..0.3);
            let fg = rng.random_range(0.6..0.9);
            let mut image = Vec::with_capacity(n * n);
            let mut mask = Vec::with_capacity(n * n);
            for y in 0..n {
                for x in 0..n {
                    let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                    let inside = circles
                        .iter()
                        .any(|&(cy, cx, r)| (py - cy).powi(2) + (px - cx).powi(2) <= r * r);
                    let base = if inside { fg } else { bg };
                    image.push((base + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32);
                    mask.push(if inside { 1.0 } else { 0.0 });
                }
            }
            SamplePair {
                image: Tensor::new([n, n], image).expect("plane"),
                mask: Tensor::new([n, n], mask).expect("plane"),
                source: None,
            }
        })
        .collect())
}

/// Writes `root/images/NNNN.png` and `root/masks/NNNN.png` plus a
/// `manifest.tsv` listing them.
pub fn write_dataset(samples: &[SamplePair], root: &Path) -> Result<()> {
    std::fs::create_dir_all(root.join("images"))?;
    std::fs::create_dir_all(root.join("masks"))?;
    let mut manifest = String::new();
    for (i, s) in samples.iter().enumerate() {
        let name = format!("{i:04}.png");
        write_gray_png(&root.join("images").join(&name), &s.image)?;
        write_mask_png(&root.join("masks").join(&name), &s.mask)?;
        manifest.push_str(&format!("images/{name}\tmasks/{name}\n"));
    }
    std::fs::write(root.join("manifest.tsv"), manifest)?;
    Ok(())
}
