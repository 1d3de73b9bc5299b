//! Training configuration and its `key = value` text form.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::discriminators::{AttentionMode, GlobalConfig, LocalConfig};
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::losses::LossWeights;
use crate::perceptual::StGcnConfig;

/// Cumulative training conditions: each enables everything the previous one
/// does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Condition {
    /// Joint reconstruction only.
    L1Only,
    /// Adds the global content discriminator and feature matching.
    GlobalD,
    /// Adds the local temporal discriminator.
    LocalD,
    /// Adds the pose perceptual loss (the full model).
    Perceptual,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::L1Only, Condition::GlobalD, Condition::LocalD, Condition::Perceptual];

    pub fn uses_global(self) -> bool {
        self >= Condition::GlobalD
    }

    pub fn uses_local(self) -> bool {
        self >= Condition::LocalD
    }

    pub fn uses_perceptual(self) -> bool {
        self >= Condition::Perceptual
    }

    pub fn name(self) -> &'static str {
        match self {
            Condition::L1Only => "l1",
            Condition::GlobalD => "global",
            Condition::LocalD => "local",
            Condition::Perceptual => "perceptual",
        }
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::config(format!("unknown condition {s:?} (l1, global, local, perceptual)")))
    }
}

/// Network sizes: the full widths or reduced ones for single-core runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Full,
    Desk,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Scale::Full),
            "desk" => Ok(Scale::Desk),
            other => Err(Error::config(format!("unknown scale {other:?} (full, desk)"))),
        }
    }
}

impl Scale {
    fn name(self) -> &'static str {
        match self {
            Scale::Full => "full",
            Scale::Desk => "desk",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub generator: GeneratorConfig,
    pub local: LocalConfig,
    pub global: GlobalConfig,
    pub stgcn: StGcnConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_generator: f64,
    pub lr_local_d: f64,
    pub lr_global_d: f64,
    pub lr_pretrain: f64,
    pub pretrain_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub condition: Condition,
    pub scale: Scale,
    pub attention_mode: AttentionMode,
    /// Categories of the perceptual network's pretraining head.
    pub pretrain_classes: usize,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 400,
            lr_generator: 0.003,
            lr_local_d: 0.003,
            lr_global_d: 0.005,
            lr_pretrain: 0.002,
            pretrain_steps: 200,
            batch_size: 16,
            seed: 0,
            condition: Condition::Perceptual,
            scale: Scale::Full,
            attention_mode: AttentionMode::Softmax,
            pretrain_classes: 16,
            weights: LossWeights::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value {value:?} for {key}")))
}

impl TrainConfig {
    /// Reduced network widths with otherwise default settings.
    pub fn desk() -> Self {
        TrainConfig {
            scale: Scale::Desk,
            batch_size: 4,
            pretrain_classes: 5,
            ..Self::default()
        }
    }

    pub fn model(&self) -> ModelConfig {
        let (generator, local, mut global, stgcn) = match self.scale {
            Scale::Full => (
                GeneratorConfig::full(),
                LocalConfig::full(),
                GlobalConfig::full(),
                StGcnConfig::full(self.pretrain_classes),
            ),
            Scale::Desk => (
                GeneratorConfig::desk(),
                LocalConfig::desk(),
                GlobalConfig::desk(),
                StGcnConfig::desk(self.pretrain_classes),
            ),
        };
        global.attention_mode = self.attention_mode;
        ModelConfig {
            generator,
            local,
            global,
            stgcn,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [
            ("lr_generator", self.lr_generator),
            ("lr_local_d", self.lr_local_d),
            ("lr_global_d", self.lr_global_d),
            ("lr_pretrain", self.lr_pretrain),
        ] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::config(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.pretrain_classes < 2 {
            return Err(Error::config("pretrain_classes must be at least 2"));
        }
        self.weights.validate()?;
        let taps = self.model().stgcn.num_taps();
        if self.weights.lambda.len() != taps {
            return Err(Error::config(format!(
                "lambda has {} entries but the perceptual network has {taps} tap points",
                self.weights.lambda.len()
            )));
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "lr_generator" => self.lr_generator = parse(key, value)?,
            "lr_local_d" => self.lr_local_d = parse(key, value)?,
            "lr_global_d" => self.lr_global_d = parse(key, value)?,
            "lr_pretrain" => self.lr_pretrain = parse(key, value)?,
            "pretrain_steps" => self.pretrain_steps = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "condition" => self.condition = value.parse()?,
            "scale" => self.scale = value.parse()?,
            "attention_mode" => self.attention_mode = value.parse()?,
            "pretrain_classes" => self.pretrain_classes = parse(key, value)?,
            "lambda" => {
                self.weights.lambda = value
                    .split(',')
                    .map(|v| parse(key, v.trim()))
                    .collect::<Result<_>>()?
            }
            "w_gp" => self.weights.w_gp = parse(key, value)?,
            "w_p" => self.weights.w_p = parse(key, value)?,
            "w_fm" => self.weights.w_fm = parse(key, value)?,
            "w_l1" => self.weights.w_l1 = parse(key, value)?,
            other => return Err(Error::config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_text_over(Self::default(), text)
    }

    pub fn from_text_over(mut base: Self, text: &str) -> Result<Self> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", n + 1)))?;
            base.set(k.trim(), v.trim())?;
        }
        base.validate()?;
        Ok(base)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Canonical text form; [`TrainConfig::from_text`] reads it back exactly.
    pub fn to_text(&self) -> String {
        let w = &self.weights;
        let lambda: Vec<String> = w.lambda.iter().map(|v| format!("{v:?}")).collect();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("epochs", self.epochs.to_string());
        kv("lr_generator", format!("{:?}", self.lr_generator));
        kv("lr_local_d", format!("{:?}", self.lr_local_d));
        kv("lr_global_d", format!("{:?}", self.lr_global_d));
        kv("lr_pretrain", format!("{:?}", self.lr_pretrain));
        kv("pretrain_steps", self.pretrain_steps.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("seed", self.seed.to_string());
        kv("condition", self.condition.name().into());
        kv("scale", self.scale.name().into());
        let mode = match self.attention_mode {
            AttentionMode::Softmax => "softmax",
            AttentionMode::PaperNeglog => "paper-neglog",
        };
        kv("attention_mode", mode.into());
        kv("pretrain_classes", self.pretrain_classes.to_string());
        kv("lambda", lambda.join(","));
        kv("w_gp", format!("{:?}", w.w_gp));
        kv("w_p", format!("{:?}", w.w_p));
        kv("w_fm", format!("{:?}", w.w_fm));
        kv("w_l1", format!("{:?}", w.w_l1));
        s
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        hex_sha256(&self.to_text())
    }
}

pub fn hex_sha256(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_settings() {
        let c = TrainConfig::default();
        assert_eq!((c.lr_generator, c.lr_local_d, c.lr_global_d), (0.003, 0.003, 0.005));
        assert_eq!(c.epochs, 400);
        assert_eq!(c.weights.lambda, vec![20.0, 5.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!((c.weights.w_gp, c.weights.w_p, c.weights.w_fm, c.weights.w_l1), (1.0, 1.0, 1.0, 200.0));
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::desk();
        c.seed = 42;
        c.condition = Condition::LocalD;
        c.attention_mode = AttentionMode::PaperNeglog;
        c.lr_generator = 0.1 + 0.2;
        let back = TrainConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(TrainConfig::default().hash(), c.hash());
    }

    #[test]
    fn comments_and_errors() {
        let c = TrainConfig::from_text("# header\nepochs = 3 # short\n\nseed=7\n").unwrap();
        assert_eq!((c.epochs, c.seed), (3, 7));
        for bad in ["epochs: 3", "bogus = 1", "lr_generator = -1", "lambda = 1,2", "condition = gan"] {
            assert!(matches!(TrainConfig::from_text(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn conditions_are_cumulative() {
        assert!(!Condition::L1Only.uses_global());
        assert!(Condition::GlobalD.uses_global() && !Condition::GlobalD.uses_local());
        assert!(Condition::LocalD.uses_global() && Condition::LocalD.uses_local());
        assert!(Condition::Perceptual.uses_local() && Condition::Perceptual.uses_perceptual());
    }
}
