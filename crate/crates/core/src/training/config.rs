//! Training configuration and its two presets.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::config::{parse_key_values, parse_num};
use crate::model::RedNetConfig;
use crate::training::adam::AdamConfig;
use crate::training::loss::LossWeights;

/// Scalar type used for training arithmetic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

/// Every knob of a training run. Network hyper-parameters live in `model`
/// and share the same flat `key=value` namespace.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: RedNetConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub patch_size: usize,
    /// Random crops drawn once per training image before the first epoch.
    pub patches_per_image: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Deep-supervision weights; `None` means `alpha_l = l + 1`.
    pub loss_alpha: Option<Vec<f64>>,
    pub hflip: bool,
    /// Additive Gaussian noise std on the 0..255 intensity scale; 0 disables it.
    pub noise_std: f64,
    /// Gaussian blur sigma in pixels; 0 disables it.
    pub blur_sigma: f64,
    /// Write a numbered checkpoint every this many epochs.
    pub checkpoint_every: usize,
    pub precision: Precision,
}

impl TrainConfig {
    /// Full-scale constants: batch 8, 256x256 patches, 500 patches per
    /// image, 500 epochs, Adam lr 1e-4 with weight decay 1e-6, noise std 20.
    pub fn paper() -> Self {
        Self {
            model: RedNetConfig::paper(),
            batch_size: 8,
            epochs: 500,
            patch_size: 256,
            patches_per_image: 500,
            seed: 0,
            adam: AdamConfig::default(),
            loss_alpha: None,
            hflip: true,
            noise_std: 20.0,
            blur_sigma: 0.0,
            checkpoint_every: 1,
            precision: Precision::F32,
        }
    }

    /// Desk scale: width 1/8, one full 64x64 crop per image, batch 4, 2000
    /// epochs. On a four-image set every epoch is a single full-batch step.
    pub fn desk() -> Self {
        Self {
            model: RedNetConfig::desk(),
            batch_size: 4,
            epochs: 2000,
            patch_size: 64,
            patches_per_image: 1,
            checkpoint_every: 500,
            ..Self::paper()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected `paper` or `desk`)"))),
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        match &self.loss_alpha {
            Some(alpha) => LossWeights { alpha: alpha.clone() },
            None => LossWeights::increasing(self.model.recursion_depth),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let weights = self.loss_weights();
        weights.validate()?;
        if weights.alpha.len() != self.model.recursion_depth + 1 {
            return Err(Error::Config(format!(
                "loss_alpha has {} entries but recursion_depth {} needs {}",
                weights.alpha.len(),
                self.model.recursion_depth,
                self.model.recursion_depth + 1
            )));
        }
        let positive = [
            ("batch_size", self.batch_size),
            ("patch_size", self.patch_size),
            ("patches_per_image", self.patches_per_image),
            ("checkpoint_every", self.checkpoint_every),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{k}` must be positive")));
        }
        if self.patch_size % self.model.grid() != 0 {
            return Err(Error::Config(format!("patch_size must be a multiple of {}", self.model.grid())));
        }
        let a = &self.adam;
        if !(a.lr >= 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) || !(a.weight_decay >= 0.0) {
            return Err(Error::Config(format!("invalid optimizer settings {a:?}")));
        }
        if !(self.noise_std >= 0.0) || !(self.blur_sigma >= 0.0) {
            return Err(Error::Config("noise_std and blur_sigma must be non-negative".into()));
        }
        Ok(())
    }

    /// Applies one `key=value` setting; network keys are forwarded to the model config.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "patch_size" => self.patch_size = parse_num(key, v)?,
            "patches_per_image" => self.patches_per_image = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "lr" => self.adam.lr = parse_num(key, v)?,
            "beta1" => self.adam.beta1 = parse_num(key, v)?,
            "beta2" => self.adam.beta2 = parse_num(key, v)?,
            "adam_eps" => self.adam.eps = parse_num(key, v)?,
            "weight_decay" => self.adam.weight_decay = parse_num(key, v)?,
            "loss_alpha" => {
                self.loss_alpha = match v {
                    "auto" => None,
                    list => Some(list.split(',').map(|x| parse_num(key, x)).collect::<Result<_>>()?),
                }
            }
            "hflip" => self.hflip = parse_num(key, v)?,
            "noise_std" => self.noise_std = parse_num(key, v)?,
            "blur_sigma" => self.blur_sigma = parse_num(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, v)?,
            "precision" => {
                self.precision = match v {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    other => return Err(Error::Config(format!("`precision`: expected f32 or f64, got `{other}`"))),
                }
            }
            _ if RedNetConfig::KEYS.contains(&key) => self.model.set(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a `key=value` file on top of `self`, then validates.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_key_values(text)? {
            self.set(&k, &v)?;
        }
        self.validate()
    }

    /// Complete `key=value` listing; feeding it back through [`TrainConfig::apply_text`]
    /// reproduces the config exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "patch_size={}", self.patch_size);
        let _ = writeln!(s, "patches_per_image={}", self.patches_per_image);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "lr={}", self.adam.lr);
        let _ = writeln!(s, "beta1={}", self.adam.beta1);
        let _ = writeln!(s, "beta2={}", self.adam.beta2);
        let _ = writeln!(s, "adam_eps={}", self.adam.eps);
        let _ = writeln!(s, "weight_decay={}", self.adam.weight_decay);
        let alpha = match &self.loss_alpha {
            None => "auto".to_string(),
            Some(a) => a.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
        };
        let _ = writeln!(s, "loss_alpha={alpha}");
        let _ = writeln!(s, "hflip={}", self.hflip);
        let _ = writeln!(s, "noise_std={}", self.noise_std);
        let _ = writeln!(s, "blur_sigma={}", self.blur_sigma);
        let _ = writeln!(s, "checkpoint_every={}", self.checkpoint_every);
        let precision = match self.precision {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        };
        let _ = writeln!(s, "precision={precision}");
        let _ = writeln!(s, "# loss is summed over pixels, not averaged");
        s + &self.model.to_text()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_preset_values() {
        let c = TrainConfig::paper();
        assert_eq!((c.batch_size, c.patch_size, c.epochs, c.patches_per_image), (8, 256, 500, 500));
        assert_eq!((c.adam.lr, c.adam.weight_decay), (1e-4, 1e-6));
        assert_eq!(c.noise_std, 20.0);
        assert_eq!(c.model.recursion_depth, 2);
        assert_eq!(c.loss_weights().alpha, vec![1.0, 2.0, 3.0]);
        c.validate().unwrap();
        TrainConfig::desk().validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::desk();
        c.apply_text("lr=0.001\nloss_alpha=1,1,1\nprecision=f64\nwidth_multiplier=1/4\n").unwrap();
        assert_eq!(c.model.width_multiplier, 0.25);
        let mut back = TrainConfig::paper();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_unknown_and_inconsistent_keys() {
        let err = TrainConfig::desk().apply_text("learning_rate=1").unwrap_err().to_string();
        assert!(err.contains("learning_rate"), "{err}");
        assert!(TrainConfig::desk().apply_text("loss_alpha=1,2").is_err());
        assert!(TrainConfig::desk().apply_text("patch_size=60").is_err());
        assert!(TrainConfig::preset("huge").is_err());
    }
}
