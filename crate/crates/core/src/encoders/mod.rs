//! Image and question encoders, checkpoint container and contrastive
//! pretraining.

mod checkpoint;
mod config;
mod contrastive;
mod image;
pub mod layers;
mod pretrain;
mod text;

pub use checkpoint::{Checkpoint, StoredTensor, FORMAT_VERSION, MAGIC};
pub use config::{ImageEncoderKind, ModelConfig, TextEncoderKind};
pub use contrastive::{contrastive_loss, ContrastiveOutput, DEFAULT_TEMPERATURE};
pub use image::{CnnTrace, ImageTensor, SmallCnn};
pub use pretrain::{pretrain, PretrainConfig, PretrainOutcome};
pub use text::{BiLstmEncoder, PooledEncoder, TextEncoder, TextTrace};
