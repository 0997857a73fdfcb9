//! Training configuration: one JSON document, every field defaulted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{AugmentPolicy, CirclesConfig, Rotation};
use crate::error::{Error, Result};
use crate::loss::{DiceMode, LossConfig};
use crate::optim::{AdamConfig, LrSchedule};
use crate::unet::{validate_depth, UNetConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// `images/` and `masks/` subdirectories with matching file names.
    Dir(PathBuf),
    /// Text file of `image<TAB>mask` lines.
    Manifest(PathBuf),
    /// Generated circles, never touching the disk.
    Synthetic(CirclesConfig),
}

impl DataSource {
    fn resolve(&mut self, base: &Path) {
        match self {
            Self::Dir(p) | Self::Manifest(p) => *p = base.join(&*p),
            Self::Synthetic(_) => {}
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<DataSource>,
    /// Predefined validation set; when absent `train` is split.
    pub val: Option<DataSource>,
    pub val_fraction: f64,
    /// 8-bit masks: foreground is `pixel > mask_threshold * 255`.
    pub mask_threshold: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: None,
            val: None,
            val_fraction: 0.2,
            mask_threshold: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub base_lr: f32,
    /// Multiplier applied at the half-way and three-quarter epochs.
    pub factor: f32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            base_lr: 0.001,
            factor: 0.75,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
        }
    }
}

impl OptimizerConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub weights: u64,
    pub split: u64,
    pub shuffle: u64,
    pub augment: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            weights: 0,
            split: 1,
            shuffle: 2,
            augment: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub hflip_prob: f64,
    pub rotation: Rotation,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        let p = AugmentPolicy::default();
        Self {
            enabled: true,
            hflip_prob: p.hflip_prob,
            rotation: p.rotation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub data: DataConfig,
    /// Side length every image is resized to before training.
    pub image_size: usize,
    pub model: UNetConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub augment: AugmentConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seeds: Seeds,
    pub checkpoint_dir: PathBuf,
    /// Also keep `epoch_NNNN.ckpt` every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Dice variant reported in the metrics CSV.
    pub dice_mode: DiceMode,
    /// Probability above which a pixel counts as foreground.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            image_size: 256,
            model: UNetConfig::default(),
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            augment: AugmentConfig::default(),
            epochs: 20,
            batch_size: 4,
            seeds: Seeds::default(),
            checkpoint_dir: PathBuf::from("runs/unet"),
            checkpoint_every: 0,
            dice_mode: DiceMode::Standard,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    /// Parses JSON; relative paths are taken relative to `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("config JSON: {e}")))?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Reads a config file. Every failure here is a configuration error.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("reading {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_json(&text, base)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for src in [&mut self.data.train, &mut self.data.val].into_iter().flatten() {
            src.resolve(base);
        }
        self.checkpoint_dir = base.join(&self.checkpoint_dir);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule::new(self.optimizer.base_lr, self.optimizer.factor, self.epochs)
    }

    pub fn augment_policy(&self) -> Option<AugmentPolicy> {
        self.augment.enabled.then_some(AugmentPolicy {
            hflip_prob: self.augment.hflip_prob,
            rotation: self.augment.rotation,
            seed: self.seeds.augment,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.data.train.is_none() {
            return bad("data.train is required".into());
        }
        if self.data.val.is_none() && !(self.data.val_fraction > 0.0 && self.data.val_fraction < 1.0) {
            return bad(format!("data.val_fraction must be in (0, 1), got {}", self.data.val_fraction));
        }
        if !(0.0..1.0).contains(&self.data.mask_threshold) {
            return bad(format!("data.mask_threshold must be in [0, 1), got {}", self.data.mask_threshold));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold must be in (0, 1), got {}", self.threshold));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        let opt = &self.optimizer;
        if !(opt.base_lr > 0.0 && opt.base_lr.is_finite() && opt.factor > 0.0 && opt.factor.is_finite()) {
            return bad(format!("optimizer needs positive base_lr and factor, got {opt:?}"));
        }
        if !((0.0..1.0).contains(&opt.beta1) && (0.0..1.0).contains(&opt.beta2) && opt.eps > 0.0) {
            return bad(format!("invalid Adam coefficients {opt:?}"));
        }
        self.model.validate()?;
        self.loss.validate()?;
        if let Some(p) = self.augment_policy() {
            p.validate()?;
        }
        validate_depth(self.image_size, self.image_size, self.model.depth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_takes_defaults() {
        let cfg = TrainConfig::from_json("{}", Path::new("")).unwrap();
        assert_eq!(cfg, TrainConfig::default());
        assert_eq!(cfg.image_size, 256);
        assert_eq!(cfg.optimizer.base_lr, 0.001);
        assert_eq!(cfg.optimizer.factor, 0.75);
        assert_eq!(cfg.loss.gamma, 0.9);
    }

    #[test]
    fn resolved_config_round_trips() {
        let text = r#"{
            "data": {"train": {"manifest": "list.tsv"}, "val": {"synthetic": {"count": 3}}},
            "image_size": 64,
            "model": {"base_channels": 8, "depth": 3},
            "augment": {"rotation": {"kind": "small_angle", "max_degrees": 10.0}},
            "checkpoint_dir": "out"
        }"#;
        let cfg = TrainConfig::from_json(text, Path::new("/data/run")).unwrap();
        assert_eq!(cfg.data.train, Some(DataSource::Manifest("/data/run/list.tsv".into())));
        assert_eq!(cfg.checkpoint_dir, PathBuf::from("/data/run/out"));
        cfg.validate().unwrap();
        let back = TrainConfig::from_json(&cfg.to_json(), Path::new("/elsewhere")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_configs() {
        let base = Path::new("");
        assert!(matches!(
            TrainConfig::from_json(r#"{"epochz": 3}"#, base),
            Err(Error::InvalidConfig(_))
        ));
        let mut cfg = TrainConfig {
            data: DataConfig {
                train: Some(DataSource::Synthetic(CirclesConfig::default())),
                ..Default::default()
            },
            ..Default::default()
        };
        cfg.validate().unwrap();
        cfg.image_size = 96;
        cfg.model.depth = 6;
        assert!(matches!(cfg.validate(), Err(Error::DepthTooDeep { .. })));
        cfg.model.depth = 4;
        cfg.batch_size = 0;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        cfg.batch_size = 1;
        cfg.loss.gamma = -1.0;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
    }
}
