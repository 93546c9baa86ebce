//! Fusion of image and question embeddings and the answer classifier.

use serde::{Deserialize, Serialize};

use crate::corpus::AnswerVocabulary;
use crate::encoders::layers::Linear;
use crate::error::{Error, Result};
use crate::tensor::{join, Params, Tensor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    /// Element-wise (Hadamard) product, length `d`.
    #[default]
    Product,
    /// Image values followed by text values, length `2d`.
    Concat,
}

impl FusionKind {
    pub fn output_dim(self, d: usize) -> usize {
        match self {
            FusionKind::Product => d,
            FusionKind::Concat => 2 * d,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedVector {
    pub values: Vec<f64>,
    pub kind: FusionKind,
}

pub fn fuse(img: &[f64], txt: &[f64], kind: FusionKind) -> Result<FusedVector> {
    if img.len() != txt.len() {
        return Err(Error::Shape(format!(
            "cannot fuse embeddings of length {} and {}",
            img.len(),
            txt.len()
        )));
    }
    let values = match kind {
        FusionKind::Product => img.iter().zip(txt).map(|(a, b)| a * b).collect(),
        FusionKind::Concat => img.iter().chain(txt).copied().collect(),
    };
    Ok(FusedVector { values, kind })
}

/// Gradients of the fused vector pulled back to `(img, txt)`.
pub fn fuse_backward(img: &[f64], txt: &[f64], kind: FusionKind, grad: &[f64]) -> (Vec<f64>, Vec<f64>) {
    match kind {
        FusionKind::Product => (
            grad.iter().zip(txt).map(|(g, t)| g * t).collect(),
            grad.iter().zip(img).map(|(g, i)| g * i).collect(),
        ),
        FusionKind::Concat => {
            let (a, b) = grad.split_at(img.len());
            (a.to_vec(), b.to_vec())
        }
    }
}

/// Answer classifier: a linear layer, optionally preceded by one tanh hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub hidden: Option<Linear>,
    pub out: Linear,
}

#[derive(Debug, Clone)]
pub struct HeadTrace {
    input: Vec<f64>,
    hidden_act: Option<Vec<f64>>,
}

impl Head {
    pub fn new(input: usize, hidden: Option<usize>, classes: usize, seed: u64) -> Self {
        match hidden {
            Some(h) => Self {
                hidden: Some(Linear::new(input, h, seed, "head.hidden")),
                out: Linear::new(h, classes, seed, "head.out"),
            },
            None => Self {
                hidden: None,
                out: Linear::new(input, classes, seed, "head.out"),
            },
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.as_ref().unwrap_or(&self.out).input_dim()
    }

    pub fn classes(&self) -> usize {
        self.out.output_dim()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hidden: self.hidden.as_ref().map(Linear::zeros_like),
            out: self.out.zeros_like(),
        }
    }

    pub fn logits(&self, fused: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(fused)?.0)
    }

    pub fn forward(&self, fused: &[f64]) -> Result<(Vec<f64>, HeadTrace)> {
        if fused.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "head expects input of length {}, got {}",
                self.input_dim(),
                fused.len()
            )));
        }
        let (logits, hidden_act) = match &self.hidden {
            Some(h) => {
                let act: Vec<f64> = h.forward(fused).into_iter().map(f64::tanh).collect();
                (self.out.forward(&act), Some(act))
            }
            None => (self.out.forward(fused), None),
        };
        Ok((
            logits,
            HeadTrace {
                input: fused.to_vec(),
                hidden_act,
            },
        ))
    }

    pub fn backward(&self, trace: &HeadTrace, grad_logits: &[f64], grads: &mut Head) -> Vec<f64> {
        match (&self.hidden, &trace.hidden_act) {
            (Some(h), Some(act)) => {
                let g_act = self.out.backward(act, grad_logits, &mut grads.out);
                let g_pre: Vec<f64> = g_act
                    .iter()
                    .zip(act)
                    .map(|(g, a)| g * (1.0 - a * a))
                    .collect();
                let gh = grads.hidden.as_mut().expect("gradient buffer has hidden layer");
                h.backward(&trace.input, &g_pre, gh)
            }
            _ => self.out.backward(&trace.input, grad_logits, &mut grads.out),
        }
    }
}

impl Params for Head {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor)) {
        if let Some(h) = &self.hidden {
            h.visit(&join(prefix, "hidden"), f);
        }
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        if let Some(h) = &mut self.hidden {
            h.visit_mut(&join(prefix, "hidden"), f);
        }
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Linear head + softmax over the answer vocabulary.
pub fn classify(fused: &FusedVector, head: &Head, vocab: &AnswerVocabulary) -> Result<Vec<f64>> {
    if head.classes() != vocab.len() {
        return Err(Error::Shape(format!(
            "head has {} outputs, vocabulary has {} answers",
            head.classes(),
            vocab.len()
        )));
    }
    Ok(softmax(&head.logits(&fused.values)?))
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    /// Gradient with respect to the logits that produced the probabilities
    /// (`p - onehot(target)`).
    pub grad_logits: Vec<f64>,
}

/// Negative log-likelihood of `target`.
pub fn nll_loss(probabilities: &[f64], target: usize) -> Result<LossOutput> {
    if target >= probabilities.len() {
        return Err(Error::Domain(format!(
            "target index {target} out of range for {} classes",
            probabilities.len()
        )));
    }
    let mut grad_logits = probabilities.to_vec();
    grad_logits[target] -= 1.0;
    Ok(LossOutput {
        loss: -probabilities[target].ln(),
        grad_logits,
    })
}

/// Softmax cross-entropy computed from logits via log-sum-exp.
pub fn cross_entropy_from_logits(logits: &[f64], target: usize) -> Result<LossOutput> {
    if target >= logits.len() {
        return Err(Error::Domain(format!(
            "target index {target} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let mut grad_logits: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
    grad_logits[target] -= 1.0;
    Ok(LossOutput {
        loss: lse - logits[target],
        grad_logits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub answer: String,
    pub confidence: f64,
    pub top_k: Vec<(String, f64)>,
}

/// Class indices sorted by probability, descending; lower index wins ties.
pub fn ranked(probabilities: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probabilities.len()).collect();
    idx.sort_by(|&a, &b| {
        probabilities[b]
            .partial_cmp(&probabilities[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

pub fn argmax(values: &[f64]) -> usize {
    ranked(values).first().copied().unwrap_or(0)
}

/// Top-`k` answers (clamped to the vocabulary size, at least one).
pub fn top_k(probabilities: &[f64], vocab: &AnswerVocabulary, k: usize) -> Prediction {
    let k = k.clamp(1, probabilities.len().max(1));
    let top: Vec<(String, f64)> = ranked(probabilities)
        .into_iter()
        .take(k)
        .map(|i| (vocab.answers()[i].clone(), probabilities[i]))
        .collect();
    Prediction {
        answer: top[0].0.clone(),
        confidence: top[0].1,
        top_k: top,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::UnkPolicy;

    fn vocab(n: usize) -> AnswerVocabulary {
        AnswerVocabulary::from_answers((0..n).map(|i| format!("a{i}")).collect(), UnkPolicy::Reject)
            .unwrap()
    }

    #[test]
    fn fuse_definitions() {
        let p = fuse(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], FusionKind::Product).unwrap();
        assert_eq!(p.values, [4.0, 10.0, 18.0]);
        let v = [0.3, -2.0, 7.5];
        assert_eq!(fuse(&v, &[1.0; 3], FusionKind::Product).unwrap().values, v);
        let c = fuse(&[1.0, 2.0], &[3.0, 4.0], FusionKind::Concat).unwrap();
        assert_eq!(c.values, [1.0, 2.0, 3.0, 4.0]);
        assert!(fuse(&[1.0], &[1.0, 2.0], FusionKind::Product).is_err());
    }

    #[test]
    fn zero_head_is_uniform() {
        let mut head = Head::new(4, None, 5, 0);
        head.out.weight.fill(0.0);
        head.out.bias.fill(0.0);
        let fused = fuse(&[1.0, 2.0, 3.0, 4.0], &[1.0; 4], FusionKind::Product).unwrap();
        let p = classify(&fused, &head, &vocab(5)).unwrap();
        assert!(p.iter().all(|x| (x - 0.2).abs() < 1e-15));
    }

    #[test]
    fn softmax_of_large_gap() {
        let p = softmax(&[10.0, 0.0, 0.0]);
        let expected = 1.0 / (1.0 + 2.0 * (-10.0f64).exp());
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((p[0] - 0.99991).abs() < 1e-5);
        let big = softmax(&[1000.0, 999.0]);
        assert!(big.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn loss_edge_cases() {
        let v = 7;
        let uniform = vec![1.0 / v as f64; v];
        assert!((nll_loss(&uniform, 3).unwrap().loss - (v as f64).ln()).abs() < 1e-12);
        assert_eq!(nll_loss(&[0.0, 1.0], 1).unwrap().loss, 0.0);
        assert!(nll_loss(&[1.0], 1).is_err());
        let a = cross_entropy_from_logits(&[0.5, -1.0, 2.0], 2).unwrap();
        let b = nll_loss(&softmax(&[0.5, -1.0, 2.0]), 2).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-12);
    }

    #[test]
    fn top_k_ties_prefer_lower_index() {
        let p = top_k(&[0.25, 0.25, 0.5], &vocab(3), 3);
        assert_eq!(p.answer, "a2");
        assert_eq!(p.top_k[1].0, "a0");
        assert_eq!(p.top_k[2].0, "a1");
        assert_eq!(top_k(&[0.25, 0.25, 0.5], &vocab(3), 10).top_k.len(), 3);
        assert_eq!(top_k(&[0.25, 0.25, 0.5], &vocab(3), 0).top_k.len(), 1);
    }
}
