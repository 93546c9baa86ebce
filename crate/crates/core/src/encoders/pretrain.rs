//! Contrastive pretraining of the image and text encoders on aligned pairs.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{contrastive_loss, Checkpoint, ImageTensor, ModelConfig, SmallCnn, TextEncoder};
use super::{BiLstmEncoder, PooledEncoder, TextEncoderKind, DEFAULT_TEMPERATURE};
use crate::corpus::{TextVocab, TokenSequence};
use crate::error::{Error, Result};
use crate::model::{KIND_ENCODERS, META_CONFIG, META_KIND, META_TEXT_VOCAB};
use crate::tensor::{stream_rng, Params, Tensor};
use crate::trainer::{AdaDelta, AdaDeltaConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub optimizer: AdaDeltaConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 16,
            temperature: DEFAULT_TEMPERATURE,
            optimizer: AdaDeltaConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    /// `image.*` and `text.*` tensors plus config and question vocabulary.
    pub checkpoint: Checkpoint,
    /// Batch loss before each step.
    pub losses: Vec<f64>,
    /// Loss over all pairs before the first and after the last step.
    pub initial_loss: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone)]
struct Encoders {
    image: SmallCnn,
    text: TextEncoder,
}

impl Params for Encoders {
    fn visit<'a>(&'a self, _prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor)) {
        self.image.visit("image", f);
        self.text.visit("text", f);
    }

    fn visit_mut(&mut self, _prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.image.visit_mut("image", f);
        self.text.visit_mut("text", f);
    }
}

impl Encoders {
    fn loss_on(&self, pairs: &[(ImageTensor, TokenSequence)], idx: &[usize], t: f64) -> Result<f64> {
        let mut imgs = Vec::with_capacity(idx.len());
        let mut txts = Vec::with_capacity(idx.len());
        for &i in idx {
            imgs.push(self.image.encode(&pairs[i].0)?);
            txts.push(self.text.encode(&pairs[i].1)?);
        }
        Ok(contrastive_loss(&imgs, &txts, t)?.loss)
    }
}

/// Minimises the contrastive loss over `pairs` with AdaDelta. Only
/// `small_cnn` and the trainable text encoders can be pretrained.
pub fn pretrain(
    pairs: &[(ImageTensor, TokenSequence)],
    model: &ModelConfig,
    text_vocab: &TextVocab,
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome> {
    if pairs.len() < 2 {
        return Err(Error::Domain(format!(
            "pretraining needs at least 2 pairs (got {})",
            pairs.len()
        )));
    }
    if cfg.batch_size < 2 {
        return Err(Error::Config("pretraining batch size must be at least 2".into()));
    }
    cfg.optimizer.validate()?;
    let seed = model.seed;
    let text = match model.text_encoder {
        TextEncoderKind::Bilstm => TextEncoder::BiLstm(BiLstmEncoder::new(
            text_vocab.len(),
            model.embed_dim,
            model.hidden_dim,
            model.d,
            seed,
        )),
        TextEncoderKind::PooledTransformerStub => TextEncoder::Pooled(PooledEncoder::new(
            text_vocab.len(),
            model.embed_dim,
            model.d,
            seed,
        )),
        TextEncoderKind::PretrainedCheckpoint => {
            return Err(Error::Config(
                "pretraining starts from a fresh text encoder".into(),
            ))
        }
    };
    let mut enc = Encoders {
        image: SmallCnn::new(
            model.image_side,
            model.image_channels,
            model.cnn_channels,
            model.d,
            seed,
        ),
        text,
    };
    let all: Vec<usize> = (0..pairs.len()).collect();
    let initial_loss = enc.loss_on(pairs, &all, cfg.temperature)?;

    let mut opt = AdaDelta::new(cfg.optimizer);
    let mut losses = Vec::with_capacity(cfg.steps);
    let take = cfg.batch_size.min(pairs.len());
    for step in 0..cfg.steps {
        let mut order = all.clone();
        order.shuffle(&mut stream_rng(cfg.seed, &format!("pretrain/step{step}")));
        let batch = &order[..take];

        let mut img_embs = Vec::with_capacity(take);
        let mut txt_embs = Vec::with_capacity(take);
        let mut traces = Vec::with_capacity(take);
        for &i in batch {
            let (ie, it) = enc.image.forward(&pairs[i].0)?;
            let (te, tt) = enc.text.forward(&pairs[i].1)?;
            img_embs.push(ie);
            txt_embs.push(te);
            traces.push((it, tt));
        }
        let out = contrastive_loss(&img_embs, &txt_embs, cfg.temperature)?;
        losses.push(out.loss);

        let mut grads = Encoders {
            image: enc.image.zeros_like(),
            text: enc.text.zeros_like(),
        };
        for (k, (it, tt)) in traces.iter().enumerate() {
            enc.image.backward(it, &out.grad_image[k], &mut grads.image);
            enc.text.backward(tt, &out.grad_text[k], &mut grads.text);
        }
        opt.step(&mut enc, &grads)?;
    }
    let final_loss = enc.loss_on(pairs, &all, cfg.temperature)?;

    let mut checkpoint = Checkpoint::new();
    checkpoint.insert_params("", &enc);
    checkpoint
        .meta
        .insert(META_KIND.into(), Value::from(KIND_ENCODERS));
    checkpoint
        .meta
        .insert(META_CONFIG.into(), serde_json::to_value(model)?);
    checkpoint
        .meta
        .insert(META_TEXT_VOCAB.into(), serde_json::to_value(text_vocab)?);
    Ok(PretrainOutcome {
        checkpoint,
        losses,
        initial_loss,
        final_loss,
    })
}
