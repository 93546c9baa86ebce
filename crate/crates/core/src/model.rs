//! The joint-embedding VQA model: image encoder, question encoder, fusion
//! and answer head, plus conversion to and from checkpoints.

use serde_json::Value;

use crate::corpus::{tokenize, AnswerVocabulary, TextVocab, TokenSequence};
use crate::encoders::{
    BiLstmEncoder, Checkpoint, CnnTrace, ImageEncoderKind, ImageTensor, ModelConfig,
    PooledEncoder, SmallCnn, TextEncoder, TextEncoderKind, TextTrace,
};
use crate::error::{Error, Result};
use crate::fusion::{
    classify, cross_entropy_from_logits, fuse, fuse_backward, softmax, top_k, Head, HeadTrace,
    Prediction,
};
use crate::tensor::{Params, Tensor};

pub const META_KIND: &str = "kind";
pub const META_CONFIG: &str = "config";
pub const META_TEXT_VOCAB: &str = "text_vocab";
pub const META_ANSWERS: &str = "answers";
pub const KIND_MODEL: &str = "vqa_model";
pub const KIND_ENCODERS: &str = "encoders";

/// Trainable tensors of the model, named `image.*`, `text.*`, `head.*`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub image: SmallCnn,
    pub text: TextEncoder,
    pub head: Head,
}

impl Network {
    pub fn zeros_like(&self) -> Self {
        Self {
            image: self.image.zeros_like(),
            text: self.text.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    pub fn zero(&mut self) {
        self.visit_mut("", &mut |_, t| t.fill(0.0));
    }
}

impl Params for Network {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor)) {
        debug_assert!(prefix.is_empty());
        self.image.visit("image", f);
        self.text.visit("text", f);
        self.head.visit("head", f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        debug_assert!(prefix.is_empty());
        self.image.visit_mut("image", f);
        self.text.visit_mut("text", f);
        self.head.visit_mut("head", f);
    }
}

/// Saved activations for one (image, question) example.
#[derive(Debug, Clone)]
pub struct ExampleTrace {
    /// Absent when the image embedding was computed elsewhere.
    pub image: Option<CnnTrace>,
    pub text: TextTrace,
    pub image_emb: Vec<f64>,
    pub text_emb: Vec<f64>,
    pub head: HeadTrace,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqaModel {
    pub config: ModelConfig,
    pub text_vocab: TextVocab,
    pub net: Network,
}

fn text_encoder_from_checkpoint(ck: &Checkpoint) -> Result<TextEncoder> {
    let shape = |name: &str| {
        ck.tensors
            .get(name)
            .map(|t| t.shape.clone())
            .ok_or_else(|| Error::Shape(format!("checkpoint lacks tensor `{name}`")))
    };
    let table = shape("text.embedding.table")?;
    let proj = shape("text.proj.weight")?;
    let (vocab, embed) = (table[0], table[1]);
    let mut enc = if ck.tensors.contains_key("text.fwd.w_hh") {
        let hidden = shape("text.fwd.w_hh")?[1];
        TextEncoder::BiLstm(BiLstmEncoder::new(vocab, embed, hidden, proj[0], 0))
    } else {
        TextEncoder::Pooled(PooledEncoder::new(vocab, embed, proj[0], 0))
    };
    ck.load_params("text", &mut enc)?;
    Ok(enc)
}

fn meta_text_vocab(ck: &Checkpoint) -> Result<TextVocab> {
    let value = ck
        .meta
        .get(META_TEXT_VOCAB)
        .ok_or_else(|| Error::Format("checkpoint meta lacks `text_vocab`".into()))?;
    Ok(serde_json::from_value(value.clone())?)
}

impl VqaModel {
    /// Builds a freshly initialised model, loading pretrained encoder weights
    /// when the configuration asks for them. A pretrained text encoder brings
    /// its own question vocabulary.
    pub fn new(config: &ModelConfig, text_vocab: TextVocab, n_answers: usize) -> Result<Self> {
        config.validate()?;
        if n_answers == 0 {
            return Err(Error::EmptyVocabulary);
        }
        let mut config = config.clone();
        let seed = config.seed;

        let mut image = SmallCnn::new(
            config.image_side,
            config.image_channels,
            config.cnn_channels,
            config.d,
            seed,
        );
        if config.image_encoder == ImageEncoderKind::PretrainedCheckpoint {
            let path = config.image_weights.as_ref().expect("validated");
            let ck = Checkpoint::load(path)?;
            ck.load_params("image", &mut image)?;
        }

        let (text, text_vocab) = match config.text_encoder {
            TextEncoderKind::Bilstm => (
                TextEncoder::BiLstm(BiLstmEncoder::new(
                    text_vocab.len(),
                    config.embed_dim,
                    config.hidden_dim,
                    config.d,
                    seed,
                )),
                text_vocab,
            ),
            TextEncoderKind::PooledTransformerStub => (
                TextEncoder::Pooled(PooledEncoder::new(
                    text_vocab.len(),
                    config.embed_dim,
                    config.d,
                    seed,
                )),
                text_vocab,
            ),
            TextEncoderKind::PretrainedCheckpoint => {
                let path = config.text_weights.as_ref().expect("validated");
                let ck = Checkpoint::load(path)?;
                let enc = text_encoder_from_checkpoint(&ck)?;
                let vocab = meta_text_vocab(&ck)?;
                if enc.vocab_size() != vocab.len() {
                    return Err(Error::Shape(
                        "pretrained text embedding does not match its vocabulary".into(),
                    ));
                }
                (enc, vocab)
            }
        };
        if text.output_dim() != config.d {
            return Err(Error::Shape(format!(
                "text encoder produces {} values, model dimension is {}",
                text.output_dim(),
                config.d
            )));
        }
        config.text_vocab_size = text_vocab.len();
        let head = Head::new(
            config.fusion.output_dim(config.d),
            config.head_hidden,
            n_answers,
            seed,
        );
        Ok(Self {
            config,
            text_vocab,
            net: Network { image, text, head },
        })
    }

    pub fn n_answers(&self) -> usize {
        self.net.head.classes()
    }

    pub fn tokenize(&self, question: &str) -> TokenSequence {
        tokenize(question, &self.text_vocab, self.config.max_len)
    }

    pub fn encode_image(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        self.net.image.encode(image)
    }

    pub fn encode_text(&self, tokens: &TokenSequence) -> Result<Vec<f64>> {
        self.net.text.encode(tokens)
    }

    /// Logits from precomputed embeddings.
    pub fn logits_from_embeddings(&self, image_emb: &[f64], text_emb: &[f64]) -> Result<Vec<f64>> {
        let fused = fuse(image_emb, text_emb, self.config.fusion)?;
        self.net.head.logits(&fused.values)
    }

    pub fn logits(&self, image: &ImageTensor, tokens: &TokenSequence) -> Result<Vec<f64>> {
        self.logits_from_embeddings(&self.encode_image(image)?, &self.encode_text(tokens)?)
    }

    pub fn probabilities(&self, image: &ImageTensor, question: &str) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(image, &self.tokenize(question))?))
    }

    /// encode -> fuse -> classify -> top-k.
    pub fn predict(
        &self,
        image: &ImageTensor,
        question: &str,
        vocab: &AnswerVocabulary,
        k: usize,
    ) -> Result<Prediction> {
        if k == 0 {
            return Err(Error::Domain("k must be at least 1".into()));
        }
        let fused = fuse(
            &self.encode_image(image)?,
            &self.encode_text(&self.tokenize(question))?,
            self.config.fusion,
        )?;
        let probs = classify(&fused, &self.net.head, vocab)?;
        Ok(top_k(&probs, vocab, k))
    }

    pub fn forward_example(&self, image: &ImageTensor, tokens: &TokenSequence) -> Result<ExampleTrace> {
        let (image_emb, image_trace) = self.net.image.forward(image)?;
        let (text_emb, text_trace) = self.net.text.forward(tokens)?;
        self.forward_head(Some(image_trace), image_emb, text_trace, text_emb)
    }

    pub fn forward_head(
        &self,
        image: Option<CnnTrace>,
        image_emb: Vec<f64>,
        text: TextTrace,
        text_emb: Vec<f64>,
    ) -> Result<ExampleTrace> {
        let fused = fuse(&image_emb, &text_emb, self.config.fusion)?;
        let (logits, head) = self.net.head.forward(&fused.values)?;
        Ok(ExampleTrace {
            image,
            text,
            image_emb,
            text_emb,
            head,
            logits,
        })
    }

    /// Backpropagates `weight * d loss / d logits` through the head and fusion.
    /// Returns the gradients on the image and text embeddings.
    pub fn backward_head(
        &self,
        trace: &ExampleTrace,
        grad_logits: &[f64],
        grads: &mut Network,
    ) -> (Vec<f64>, Vec<f64>) {
        let g_fused = self.net.head.backward(&trace.head, grad_logits, &mut grads.head);
        fuse_backward(&trace.image_emb, &trace.text_emb, self.config.fusion, &g_fused)
    }

    /// Cross-entropy loss for one example with gradients accumulated into
    /// `grads`, scaled by `weight`.
    pub fn loss_and_grad(
        &self,
        image: &ImageTensor,
        tokens: &TokenSequence,
        target: usize,
        weight: f64,
        grads: &mut Network,
    ) -> Result<f64> {
        let trace = self.forward_example(image, tokens)?;
        let out = cross_entropy_from_logits(&trace.logits, target)?;
        let g: Vec<f64> = out.grad_logits.iter().map(|v| v * weight).collect();
        let (g_img, g_txt) = self.backward_head(&trace, &g, grads);
        if let Some(image_trace) = &trace.image {
            self.net.image.backward(image_trace, &g_img, &mut grads.image);
        }
        self.net.text.backward(&trace.text, &g_txt, &mut grads.text);
        Ok(out.loss)
    }

    pub fn to_checkpoint(&self, answers: Option<&AnswerVocabulary>) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        ck.insert_params("", &self.net);
        ck.meta.insert(META_KIND.into(), Value::from(KIND_MODEL));
        ck.meta.insert(META_CONFIG.into(), serde_json::to_value(&self.config)?);
        ck.meta
            .insert(META_TEXT_VOCAB.into(), serde_json::to_value(&self.text_vocab)?);
        if let Some(v) = answers {
            ck.meta.insert(META_ANSWERS.into(), serde_json::to_value(v.answers())?);
        }
        Ok(ck)
    }

    /// Rebuilds a model from a checkpoint written by [`VqaModel::to_checkpoint`].
    /// Encoder weight paths in the stored config are not re-read.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta.get(META_KIND).and_then(Value::as_str) != Some(KIND_MODEL) {
            return Err(Error::Format("checkpoint does not hold a VQA model".into()));
        }
        let config: ModelConfig = serde_json::from_value(
            ck.meta
                .get(META_CONFIG)
                .cloned()
                .ok_or_else(|| Error::Format("checkpoint meta lacks `config`".into()))?,
        )?;
        let text_vocab = meta_text_vocab(ck)?;
        let mut image = SmallCnn::new(
            config.image_side,
            config.image_channels,
            config.cnn_channels,
            config.d,
            0,
        );
        ck.load_params("image", &mut image)?;
        let text = text_encoder_from_checkpoint(ck)?;
        let out = ck
            .tensors
            .get("head.out.weight")
            .ok_or_else(|| Error::Shape("checkpoint lacks `head.out.weight`".into()))?;
        let mut head = Head::new(
            config.fusion.output_dim(config.d),
            config.head_hidden,
            out.shape[0],
            0,
        );
        ck.load_params("head", &mut head)?;
        Ok(Self {
            config,
            text_vocab,
            net: Network { image, text, head },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::FusionKind;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            d: 6,
            image_side: 16,
            cnn_channels: [2, 2, 3, 3],
            embed_dim: 4,
            hidden_dim: 3,
            max_len: 6,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn checkpoint_roundtrip_preserves_predictions() {
        let vocab = TextVocab::build(["is there a mass", "what organ"]);
        for fusion in [FusionKind::Product, FusionKind::Concat] {
            let cfg = ModelConfig {
                fusion,
                head_hidden: Some(5),
                ..tiny_config()
            };
            let model = VqaModel::new(&cfg, vocab.clone(), 4).unwrap();
            let ck = model.to_checkpoint(None).unwrap();
            let back = VqaModel::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap()).unwrap();
            let img = ImageTensor::zeros(16, 1);
            let a = model.probabilities(&img, "is there a mass").unwrap();
            let b = back.probabilities(&img, "is there a mass").unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let vocab = TextVocab::build(["a b c"]);
        let a = VqaModel::new(&tiny_config(), vocab.clone(), 3).unwrap();
        let b = VqaModel::new(&tiny_config(), vocab, 3).unwrap();
        assert_eq!(a, b);
    }
}
