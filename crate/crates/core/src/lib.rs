//! Joint-embedding medical visual question answering.
//!
//! An image encoder and a question encoder map their inputs to a shared
//! `d`-dimensional space, the two embeddings are fused and a softmax head
//! classifies over a fixed answer vocabulary. Around the model sit corpus
//! loading and splitting, rule-based QA synthesis from radiology reports,
//! contrastive pretraining and a deterministic AdaDelta training loop.

pub mod corpus;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod model;
pub mod synth;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use model::VqaModel;
