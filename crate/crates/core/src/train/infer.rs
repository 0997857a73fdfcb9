//! Prediction and evaluation with a trained checkpoint.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::trainer::TrainMeta;
use crate::checkpoint;
use crate::data::{load_image, load_mask, load_sample, read_manifest, write_mask_png};
use crate::error::{Error, Result};
use crate::loss::{binarize, dice_coefficient, DiceMode};
use crate::nn::{resize_bilinear_forward, resize_nearest_plane};
use crate::optim::is_optimizer_tensor;
use crate::par;
use crate::tensor::Tensor;
use crate::unet::UNetModel;

/// A model ready for inference plus the resolution it was trained at.
#[derive(Clone, Debug)]
pub struct Predictor {
    pub model: UNetModel<f32>,
    /// Side length inputs are resized to; `None` runs at native size.
    pub image_size: Option<usize>,
}

impl Predictor {
    /// Loads a training checkpoint or a bare weights file.
    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = checkpoint::read::<f32>(path)?;
        let image_size = TrainMeta::from_checkpoint(&ckpt).ok().map(|m| m.image_size);
        let weights: BTreeMap<String, Tensor<f32>> = ckpt
            .tensors
            .into_iter()
            .filter(|(k, _)| !is_optimizer_tensor(k))
            .collect();
        Ok(Self {
            model: UNetModel::from_tensors(ckpt.config, &weights)?,
            image_size,
        })
    }

    /// Binary `[H, W]` mask for an `[H, W]` image: resize to the training
    /// size, run in eval mode, threshold, and resize back with nearest
    /// neighbour to the original dimensions.
    pub fn predict_mask(&self, image: &Tensor<f32>, threshold: f64) -> Result<Tensor<f32>> {
        let &[h, w] = image.shape() else {
            return Err(Error::ShapeMismatch(format!("expected an [H, W] image, got {:?}", image.shape())));
        };
        let (ih, iw) = self.image_size.map_or((h, w), |s| (s, s));
        let x = image.clone().reshape([1, 1, h, w])?;
        let x = if (ih, iw) == (h, w) {
            x
        } else {
            resize_bilinear_forward(&x, ih, iw)?
        };
        let probs = self.model.predict(&x)?;
        let mask = binarize(probs.data(), threshold);
        Tensor::new([h, w], resize_nearest_plane(&mask, ih, iw, h, w))
    }
}

pub fn predict(checkpoint_path: &Path, image_path: &Path, out_path: &Path, threshold: f64) -> Result<()> {
    let p = Predictor::load(checkpoint_path)?;
    let image = load_image(image_path)?;
    write_mask_png(out_path, &p.predict_mask(&image, threshold)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub dice: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mode: DiceMode,
    pub rows: Vec<EvalRow>,
    pub mean: f64,
}

impl EvalReport {
    fn from_rows(mode: DiceMode, rows: Vec<EvalRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mean = rows.iter().map(|r| r.dice).sum::<f64>() / rows.len() as f64;
        Ok(Self { mode, rows, mean })
    }

    pub fn count(&self) -> usize {
        self.rows.len()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fail = |e: csv::Error| Error::Format(format!("report: {e}"));
        w.write_record(["image", "mask", "dice"]).map_err(fail)?;
        for r in &self.rows {
            let (i, m) = (r.image.display().to_string(), r.mask.display().to_string());
            w.write_record([i, m, r.dice.to_string()]).map_err(fail)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(format!("report: {e}")))?;
        Ok(String::from_utf8(bytes).expect("utf-8 paths"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        checkpoint::write_atomic(path, self.to_csv()?.as_bytes())
    }
}

/// Per-image Dice of the checkpoint's thresholded predictions against the
/// manifest's masks.
pub fn evaluate(checkpoint_path: &Path, manifest: &Path, mode: DiceMode, threshold: f64) -> Result<EvalReport> {
    let p = Predictor::load(checkpoint_path)?;
    let pairs = read_manifest(manifest)?;
    let rows = par::map_indexed(pairs.len(), |i| -> Result<EvalRow> {
        let (img, msk) = &pairs[i];
        let s = load_sample(img, msk, 0.5)?;
        let pred = p.predict_mask(&s.image, threshold)?;
        Ok(EvalRow {
            image: img.clone(),
            mask: msk.clone(),
            dice: dice_coefficient(pred.data(), s.mask.data(), mode)?,
        })
    });
    EvalReport::from_rows(mode, rows.into_iter().collect::<Result<_>>()?)
}

/// Dice between mask files listed as `predicted<TAB>truth` lines.
pub fn score_masks(manifest: &Path, mode: DiceMode) -> Result<EvalReport> {
    let pairs = read_manifest(manifest)?;
    let rows = par::map_indexed(pairs.len(), |i| -> Result<EvalRow> {
        let (a, b) = &pairs[i];
        let (ma, mb) = (load_mask(a, 0.5)?, load_mask(b, 0.5)?);
        if ma.shape() != mb.shape() {
            return Err(Error::DimensionMismatch(format!("{} vs {}", a.display(), b.display())));
        }
        Ok(EvalRow {
            image: a.clone(),
            mask: b.clone(),
            dice: dice_coefficient(ma.data(), mb.data(), mode)?,
        })
    });
    EvalReport::from_rows(mode, rows.into_iter().collect::<Result<_>>()?)
}
