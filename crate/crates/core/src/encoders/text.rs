use super::layers::{Embedding, Linear, Lstm, LstmTrace};
use crate::corpus::TokenSequence;
use crate::error::{Error, Result};
use crate::tensor::{join, Params, Tensor};

/// Token embeddings, forward and backward LSTMs over the non-padding prefix,
/// concatenated final states, linear projection.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmEncoder {
    pub embedding: Embedding,
    pub fwd: Lstm,
    pub bwd: Lstm,
    pub proj: Linear,
}

/// Mean of token embeddings followed by a linear projection. Interface stub
/// standing in for a transformer text encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledEncoder {
    pub embedding: Embedding,
    pub proj: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TextEncoder {
    BiLstm(BiLstmEncoder),
    Pooled(PooledEncoder),
}

#[derive(Debug, Clone)]
pub enum TextTrace {
    BiLstm {
        ids: Vec<u32>,
        fwd: LstmTrace,
        bwd: LstmTrace,
        concat: Vec<f64>,
    },
    Pooled {
        ids: Vec<u32>,
        mean: Vec<f64>,
    },
}

impl BiLstmEncoder {
    pub fn new(vocab: usize, embed_dim: usize, hidden: usize, d: usize, seed: u64) -> Self {
        Self {
            embedding: Embedding::new(vocab, embed_dim, seed, "text.embedding"),
            fwd: Lstm::new(embed_dim, hidden, seed, "text.fwd"),
            bwd: Lstm::new(embed_dim, hidden, seed, "text.bwd"),
            proj: Linear::new(2 * hidden, d, seed, "text.proj"),
        }
    }
}

impl PooledEncoder {
    pub fn new(vocab: usize, embed_dim: usize, d: usize, seed: u64) -> Self {
        Self {
            embedding: Embedding::new(vocab, embed_dim, seed, "text.embedding"),
            proj: Linear::new(embed_dim, d, seed, "text.proj"),
        }
    }
}

impl TextEncoder {
    pub fn vocab_size(&self) -> usize {
        self.embedding().vocab_size()
    }

    pub fn output_dim(&self) -> usize {
        match self {
            TextEncoder::BiLstm(e) => e.proj.output_dim(),
            TextEncoder::Pooled(e) => e.proj.output_dim(),
        }
    }

    fn embedding(&self) -> &Embedding {
        match self {
            TextEncoder::BiLstm(e) => &e.embedding,
            TextEncoder::Pooled(e) => &e.embedding,
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            TextEncoder::BiLstm(e) => TextEncoder::BiLstm(BiLstmEncoder {
                embedding: e.embedding.zeros_like(),
                fwd: e.fwd.zeros_like(),
                bwd: e.bwd.zeros_like(),
                proj: e.proj.zeros_like(),
            }),
            TextEncoder::Pooled(e) => TextEncoder::Pooled(PooledEncoder {
                embedding: e.embedding.zeros_like(),
                proj: e.proj.zeros_like(),
            }),
        }
    }

    pub fn encode(&self, tokens: &TokenSequence) -> Result<Vec<f64>> {
        Ok(self.forward(tokens)?.0)
    }

    /// Encodes the non-padding prefix; an empty prefix yields the projection
    /// of a zero state.
    pub fn forward(&self, tokens: &TokenSequence) -> Result<(Vec<f64>, TextTrace)> {
        let vocab = self.vocab_size();
        let ids = tokens.active().to_vec();
        if let Some(bad) = ids.iter().find(|&&id| id as usize >= vocab) {
            return Err(Error::Vocabulary(format!(
                "token id {bad} out of range for vocabulary of {vocab}"
            )));
        }
        match self {
            TextEncoder::BiLstm(enc) => {
                let rows: Vec<&[f64]> = ids.iter().map(|&id| enc.embedding.row(id)).collect();
                let (h_f, fwd) = enc.fwd.forward(&rows);
                let reversed: Vec<&[f64]> = rows.iter().rev().copied().collect();
                let (h_b, bwd) = enc.bwd.forward(&reversed);
                let concat: Vec<f64> = h_f.into_iter().chain(h_b).collect();
                let emb = enc.proj.forward(&concat);
                Ok((
                    emb,
                    TextTrace::BiLstm {
                        ids,
                        fwd,
                        bwd,
                        concat,
                    },
                ))
            }
            TextEncoder::Pooled(enc) => {
                let mut mean = vec![0.0; enc.embedding.dim()];
                if !ids.is_empty() {
                    for &id in &ids {
                        for (m, v) in mean.iter_mut().zip(enc.embedding.row(id)) {
                            *m += v;
                        }
                    }
                    let n = ids.len() as f64;
                    mean.iter_mut().for_each(|m| *m /= n);
                }
                let emb = enc.proj.forward(&mean);
                Ok((emb, TextTrace::Pooled { ids, mean }))
            }
        }
    }

    pub fn backward(&self, trace: &TextTrace, grad_emb: &[f64], grads: &mut TextEncoder) {
        match (self, trace, grads) {
            (
                TextEncoder::BiLstm(enc),
                TextTrace::BiLstm {
                    ids,
                    fwd,
                    bwd,
                    concat,
                },
                TextEncoder::BiLstm(g),
            ) => {
                let g_concat = enc.proj.backward(concat, grad_emb, &mut g.proj);
                let hd = enc.fwd.hidden();
                let dx_f = enc.fwd.backward(fwd, &g_concat[..hd], &mut g.fwd);
                let dx_b = enc.bwd.backward(bwd, &g_concat[hd..], &mut g.bwd);
                let n = ids.len();
                for (t, &id) in ids.iter().enumerate() {
                    enc.embedding.accumulate(id, &dx_f[t], &mut g.embedding);
                    enc.embedding.accumulate(id, &dx_b[n - 1 - t], &mut g.embedding);
                }
            }
            (TextEncoder::Pooled(enc), TextTrace::Pooled { ids, mean }, TextEncoder::Pooled(g)) => {
                let g_mean = enc.proj.backward(mean, grad_emb, &mut g.proj);
                if !ids.is_empty() {
                    let scale = 1.0 / ids.len() as f64;
                    let row: Vec<f64> = g_mean.iter().map(|v| v * scale).collect();
                    for &id in ids {
                        enc.embedding.accumulate(id, &row, &mut g.embedding);
                    }
                }
            }
            _ => panic!("text encoder, trace and gradient buffer variants differ"),
        }
    }
}

impl Params for TextEncoder {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor)) {
        match self {
            TextEncoder::BiLstm(e) => {
                e.embedding.visit(&join(prefix, "embedding"), f);
                e.fwd.visit(&join(prefix, "fwd"), f);
                e.bwd.visit(&join(prefix, "bwd"), f);
                e.proj.visit(&join(prefix, "proj"), f);
            }
            TextEncoder::Pooled(e) => {
                e.embedding.visit(&join(prefix, "embedding"), f);
                e.proj.visit(&join(prefix, "proj"), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        match self {
            TextEncoder::BiLstm(e) => {
                e.embedding.visit_mut(&join(prefix, "embedding"), f);
                e.fwd.visit_mut(&join(prefix, "fwd"), f);
                e.bwd.visit_mut(&join(prefix, "bwd"), f);
                e.proj.visit_mut(&join(prefix, "proj"), f);
            }
            TextEncoder::Pooled(e) => {
                e.embedding.visit_mut(&join(prefix, "embedding"), f);
                e.proj.visit_mut(&join(prefix, "proj"), f);
            }
        }
    }
}
