use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionKind;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageEncoderKind {
    #[default]
    SmallCnn,
    /// Small-CNN architecture initialised from `image_weights`.
    PretrainedCheckpoint,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextEncoderKind {
    #[default]
    Bilstm,
    PooledTransformerStub,
    /// Architecture and weights taken from `text_weights`.
    PretrainedCheckpoint,
}

/// Encoder, fusion and head hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub image_encoder: ImageEncoderKind,
    pub image_weights: Option<PathBuf>,
    pub text_encoder: TextEncoderKind,
    pub text_weights: Option<PathBuf>,
    /// Joint embedding dimension.
    pub d: usize,
    pub image_side: usize,
    pub image_channels: usize,
    pub cnn_channels: [usize; 4],
    /// Filled from the question vocabulary when the model is built.
    pub text_vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub max_len: usize,
    pub freeze_image: bool,
    pub freeze_text: bool,
    pub fusion: FusionKind,
    /// Optional hidden layer (tanh) in the answer head.
    pub head_hidden: Option<usize>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_encoder: ImageEncoderKind::SmallCnn,
            image_weights: None,
            text_encoder: TextEncoderKind::Bilstm,
            text_weights: None,
            d: 256,
            image_side: 64,
            image_channels: 1,
            cnn_channels: [8, 16, 16, 32],
            text_vocab_size: 0,
            embed_dim: 64,
            hidden_dim: 64,
            max_len: 24,
            freeze_image: false,
            freeze_text: false,
            fusion: FusionKind::Product,
            head_hidden: None,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("d must be positive".into()));
        }
        if self.image_side < 16 || !self.image_side.is_multiple_of(16) {
            return Err(Error::Config(format!(
                "image_side must be a positive multiple of 16 (got {})",
                self.image_side
            )));
        }
        if !matches!(self.image_channels, 1 | 3) {
            return Err(Error::Config("image_channels must be 1 or 3".into()));
        }
        if self.cnn_channels.contains(&0) || self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        if self.head_hidden == Some(0) {
            return Err(Error::Config("head_hidden must be positive".into()));
        }
        let image_loadable = self.image_encoder == ImageEncoderKind::PretrainedCheckpoint;
        let text_loadable = self.text_encoder == TextEncoderKind::PretrainedCheckpoint;
        if image_loadable != self.image_weights.is_some() {
            return Err(Error::Config(
                "image_weights must be set exactly when image_encoder = pretrained_checkpoint".into(),
            ));
        }
        if text_loadable != self.text_weights.is_some() {
            return Err(Error::Config(
                "text_weights must be set exactly when text_encoder = pretrained_checkpoint".into(),
            ));
        }
        if self.freeze_image && !image_loadable {
            return Err(Error::Config(
                "freeze_image requires a pretrained_checkpoint image encoder".into(),
            ));
        }
        if self.freeze_text && !text_loadable {
            return Err(Error::Config(
                "freeze_text requires a pretrained_checkpoint text encoder".into(),
            ));
        }
        Ok(())
    }

    /// Short labels used in report tables.
    pub fn image_label(&self) -> String {
        match self.image_encoder {
            ImageEncoderKind::SmallCnn => "SmallCNN".into(),
            ImageEncoderKind::PretrainedCheckpoint => "SmallCNN (Pretrained)".into(),
        }
    }

    pub fn text_label(&self) -> String {
        match self.text_encoder {
            TextEncoderKind::Bilstm => "BiLSTM".into(),
            TextEncoderKind::PooledTransformerStub => "PooledStub".into(),
            TextEncoderKind::PretrainedCheckpoint => "Text (Pretrained)".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn freeze_requires_weights() {
        let cfg = ModelConfig {
            freeze_image: true,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            freeze_image: true,
            image_encoder: ImageEncoderKind::PretrainedCheckpoint,
            image_weights: Some("w.mvqa".into()),
            ..ModelConfig::default()
        };
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_zero_dimension_and_odd_side() {
        assert!(ModelConfig { d: 0, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { image_side: 40, ..Default::default() }.validate().is_err());
    }
}
