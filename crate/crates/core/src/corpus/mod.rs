//! QA corpora: loading and validation, image-level stratified splits,
//! answer and question vocabularies, tokenization and mini-batching.

mod batch;
mod load;
mod split;
mod tokenize;
mod types;
mod vocab;

pub use batch::{batches, Batches};
pub use load::{
    load_corpus, load_image_tensors, read_jsonl, validate_corpus, write_jsonl, Corpus,
    IMAGES_FILE, QA_FILE,
};
pub use split::{
    largest_remainder, split_corpus, DatasetSplit, SplitName, SplitOutcome, DEFAULT_RATIOS,
    MIN_STRATUM,
};
pub use tokenize::{tokenize, words, TokenSequence};
pub use types::{
    normalize_answer, AnswerType, BodyPart, ImageRecord, Language, Modality, PairSource,
    Provenance, QaPair,
};
pub use vocab::{
    build_vocab, build_vocab_with_policy, AnswerVocabulary, TextVocab, UnkPolicy, PAD_ID,
    RESERVED_ANSWER, UNK_ID,
};
