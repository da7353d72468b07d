use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ivim,
    Noddi,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ivim" => Ok(Self::Ivim),
            "noddi" => Ok(Self::Noddi),
            other => Err(Error::Usage(format!("unknown model kind '{other}' (expected ivim or noddi)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Ivim => "ivim",
            Self::Noddi => "noddi",
        }
    }

    /// Names of the regressed outputs, in column order.
    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Self::Ivim => &["f", "D", "Dstar"],
            Self::Noddi => &["v_ic", "v_iso", "OD"],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Transformer,
    /// 3×3 convolution over the patch grid in place of self-attention.
    Conv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Odd patch side length.
    pub patch_size: usize,
    /// Patches per side of the neighbourhood fed jointly; odd.
    pub window: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub depth: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub positional: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Transformer,
            patch_size: 3,
            window: 3,
            embed_dim: 64,
            heads: 4,
            depth: 2,
            ffn_dim: 128,
            dropout: 0.1,
            positional: false,
        }
    }
}

impl EncoderConfig {
    /// Side of the voxel region one sample covers.
    pub fn region(&self) -> usize {
        self.patch_size + self.window - 1
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.patch_size.is_multiple_of(2) || self.patch_size == 0 {
            return Err(Error::Config(format!("patch size must be odd, got {}", self.patch_size)));
        }
        if self.window.is_multiple_of(2) || self.window == 0 {
            return Err(Error::Config(format!("patch window must be odd, got {}", self.window)));
        }
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embedding width {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if self.embed_dim < channels {
            return Err(Error::Config(format!(
                "embedding width {} is below the channel count {channels}",
                self.embed_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    Unrolled,
    /// Three fully connected layers regressing the parameters directly.
    ModelFree,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub kind: DecoderKind,
    pub n_layers: usize,
    pub lambda_init: f64,
    pub weights_shared: bool,
    /// Hidden width of the model-free head.
    pub hidden: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            kind: DecoderKind::Unrolled,
            n_layers: 8,
            lambda_init: 1e-4,
            weights_shared: true,
            hidden: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Measurements per voxel fed to the network.
    pub channels: usize,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    /// Concatenate the raw core signal to the encoder output before decoding.
    pub skip: bool,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, channels: usize) -> Self {
        Self {
            kind,
            channels,
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            skip: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("model needs at least one channel".into()));
        }
        self.encoder.validate(self.channels)?;
        if self.decoder.kind == DecoderKind::Unrolled {
            if self.decoder.n_layers == 0 {
                return Err(Error::Config("unrolled decoder needs at least one layer".into()));
            }
            if !(self.decoder.lambda_init > 0.0) {
                return Err(Error::Config("initial threshold must be positive".into()));
            }
        } else if self.decoder.hidden == 0 {
            return Err(Error::Config("model-free head needs a hidden width".into()));
        }
        Ok(())
    }

    /// Flattened input length of one sample: region² × channels.
    pub fn input_len(&self) -> usize {
        let r = self.encoder.region();
        r * r * self.channels
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
    /// Stop after this many epochs without validation improvement.
    pub patience: Option<usize>,
    pub adam: crate::autodiff::AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch: 512,
            lr: 1e-4,
            warmup_epochs: 20,
            seed: 0,
            patience: None,
            adam: Default::default(),
        }
    }
}

impl TrainConfig {
    /// Linear warm-up over `warmup_epochs`, then cosine decay to zero.
    /// `progress` counts epochs completed, fractional within an epoch and
    /// including the current step.
    pub fn lr_at(&self, progress: f64) -> f64 {
        let warm = self.warmup_epochs as f64;
        let total = self.epochs as f64;
        if progress < warm {
            return self.lr * progress / warm;
        }
        if total <= warm {
            return self.lr;
        }
        let t = ((progress - warm) / (total - warm)).clamp(0.0, 1.0);
        self.lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}
