use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{evaluate, AdaDelta, AdaDeltaConfig, CurveRow, Dataset};
use crate::corpus::{batches, build_vocab, AnswerVocabulary, QaPair, SplitName, TextVocab};
use crate::encoders::{Checkpoint, ModelConfig};
use crate::error::{Error, Result};
use crate::fusion::{argmax, cross_entropy_from_logits};
use crate::model::VqaModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdaDeltaConfig,
    pub seed: u64,
    /// Stop after this many epochs without a new best validation accuracy.
    pub patience: Option<usize>,
    pub min_freq: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 32,
            optimizer: AdaDeltaConfig::default(),
            seed: 0,
            patience: None,
            min_freq: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience == Some(0) {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the best validation accuracy (the last
    /// epoch when there is no validation split).
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
    /// Weights after the final epoch.
    pub model: VqaModel,
    pub answers: AnswerVocabulary,
    pub curves: Vec<CurveRow>,
}

/// Builds the question and answer vocabularies from the training split and
/// a freshly initialised model.
pub fn build_model(
    data: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(VqaModel, AnswerVocabulary)> {
    let train = data.pairs(SplitName::Train);
    if train.is_empty() {
        return Err(Error::Config("training split has no pairs".into()));
    }
    let answers = build_vocab(&train, train_cfg.min_freq)?;
    let text_vocab = TextVocab::build(train.iter().map(|p| p.question.as_str()));
    let model = VqaModel::new(model_cfg, text_vocab, answers.len())?;
    Ok((model, answers))
}

struct BatchStats {
    loss_sum: f64,
    loss_n: usize,
    correct: usize,
    total: usize,
}

/// One optimizer step on `batch`. Each image goes through the CNN once; the
/// loss is the mean over pairs whose gold answer is encodable.
fn train_batch(
    model: &mut VqaModel,
    opt: &mut AdaDelta,
    batch: &[&QaPair],
    answers: &AnswerVocabulary,
    data: &Dataset,
    frozen_image_embs: Option<&HashMap<String, Vec<f64>>>,
) -> Result<BatchStats> {
    let mut groups: Vec<(&str, Vec<&QaPair>)> = Vec::new();
    for pair in batch {
        match groups.iter_mut().find(|(id, _)| *id == pair.image_id) {
            Some((_, members)) => members.push(pair),
            None => groups.push((&pair.image_id, vec![pair])),
        }
    }
    let targets: Vec<Option<usize>> = batch.iter().map(|p| answers.encode(&p.answer).ok()).collect();
    let n_targets = targets.iter().flatten().count();
    let mut stats = BatchStats {
        loss_sum: 0.0,
        loss_n: 0,
        correct: 0,
        total: batch.len(),
    };
    let weight = if n_targets > 0 { 1.0 / n_targets as f64 } else { 0.0 };
    let mut grads = model.net.zeros_like();
    let train_text = !model.config.freeze_text;

    for (image_id, members) in groups {
        let (image_emb, cnn_trace) = match frozen_image_embs {
            Some(cache) => (cache[image_id].clone(), None),
            None => {
                let (emb, trace) = model.net.image.forward(data.image(image_id)?)?;
                (emb, Some(trace))
            }
        };
        let mut g_image = vec![0.0; image_emb.len()];
        for pair in members {
            let target = answers.encode(&pair.answer).ok();
            let (text_emb, text_trace) = model.net.text.forward(&model.tokenize(&pair.question))?;
            let trace = model.forward_head(None, image_emb.clone(), text_trace, text_emb)?;
            let predicted = argmax(&trace.logits);
            let Some(target) = target else { continue };
            stats.correct += usize::from(predicted == target);
            let out = cross_entropy_from_logits(&trace.logits, target)?;
            stats.loss_sum += out.loss;
            stats.loss_n += 1;
            let g: Vec<f64> = out.grad_logits.iter().map(|v| v * weight).collect();
            let (gi, gt) = model.backward_head(&trace, &g, &mut grads);
            for (a, b) in g_image.iter_mut().zip(&gi) {
                *a += b;
            }
            if train_text {
                model.net.text.backward(&trace.text, &gt, &mut grads.text);
            }
        }
        if let Some(cnn_trace) = cnn_trace {
            model.net.image.backward(&cnn_trace, &g_image, &mut grads.image);
        }
    }
    if n_targets > 0 {
        opt.step(&mut model.net, &grads)?;
    }
    Ok(stats)
}

/// Trains `model` with AdaDelta, evaluating on the validation split after
/// every epoch and keeping the checkpoint with the best validation accuracy.
pub fn train(
    mut model: VqaModel,
    answers: AnswerVocabulary,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if answers.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    if model.n_answers() != answers.len() {
        return Err(Error::Config(format!(
            "model has {} outputs, vocabulary has {} answers",
            model.n_answers(),
            answers.len()
        )));
    }
    let train_pairs = data.pairs(SplitName::Train);
    if train_pairs.is_empty() {
        return Err(Error::Config("training split has no pairs".into()));
    }
    let val_pairs = data.pairs(SplitName::Val);

    let mut opt = AdaDelta::new(cfg.optimizer);
    if model.config.freeze_image {
        opt.freeze("image");
    }
    if model.config.freeze_text {
        opt.freeze("text");
    }
    let frozen_image_embs = if model.config.freeze_image {
        let mut cache = HashMap::new();
        for p in &train_pairs {
            if !cache.contains_key(&p.image_id) {
                cache.insert(p.image_id.clone(), model.encode_image(data.image(&p.image_id)?)?);
            }
        }
        Some(cache)
    } else {
        None
    };

    let mut curves = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(Checkpoint, usize, Option<f64>)> = None;
    let mut since_best = 0;
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        let mut loss_n = 0;
        let mut correct = 0;
        let mut total = 0;
        for batch in batches(&train_pairs, &data.split, SplitName::Train, cfg.batch_size, cfg.seed, epoch)? {
            let s = train_batch(&mut model, &mut opt, &batch, &answers, data, frozen_image_embs.as_ref())?;
            loss_sum += s.loss_sum;
            loss_n += s.loss_n;
            correct += s.correct;
            total += s.total;
        }
        let val = if val_pairs.is_empty() {
            None
        } else {
            Some(evaluate(&model, &answers, &val_pairs, data)?)
        };
        let row = CurveRow {
            epoch,
            train_loss: if loss_n > 0 { loss_sum / loss_n as f64 } else { f64::NAN },
            train_acc: correct as f64 / total.max(1) as f64,
            val_loss: val.as_ref().and_then(|v| v.loss),
            val_acc: val.as_ref().map(|v| v.accuracy),
        };
        log::info!(
            "epoch {epoch}: train_loss {:.4} train_acc {:.4} val_acc {}",
            row.train_loss,
            row.train_acc,
            row.val_acc.map_or("-".into(), |a| format!("{a:.4}"))
        );
        let improved = match (&best, row.val_acc) {
            (None, _) => true,
            (Some((_, _, Some(prev))), Some(acc)) => acc > *prev,
            (Some(_), None) => true,
            (Some((_, _, None)), Some(_)) => true,
        };
        curves.push(row);
        if improved {
            best = Some((model.to_checkpoint(Some(&answers))?, epoch, row.val_acc));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                log::info!("no validation improvement for {since_best} epochs, stopping");
                break;
            }
        }
    }
    let (best, best_epoch, best_val_accuracy) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_accuracy,
        model,
        answers,
        curves,
    })
}
