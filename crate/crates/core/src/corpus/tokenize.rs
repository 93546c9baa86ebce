use super::vocab::{TextVocab, PAD_ID, UNK_ID};

/// Fixed-length id sequence; positions at or past `length` hold `pad_id`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub length: usize,
    pub pad_id: u32,
    pub unk_id: u32,
}

impl TokenSequence {
    /// Wraps raw ids, padding to `max_len` (truncating if longer).
    pub fn from_ids(ids: &[u32], max_len: usize) -> Self {
        let length = ids.len().min(max_len);
        let mut padded = ids[..length].to_vec();
        padded.resize(max_len, PAD_ID);
        Self {
            ids: padded,
            length,
            pad_id: PAD_ID,
            unk_id: UNK_ID,
        }
    }

    /// The non-padding prefix.
    pub fn active(&self) -> &[u32] {
        &self.ids[..self.length]
    }

    pub fn max_len(&self) -> usize {
        self.ids.len()
    }
}

/// Lowercases, drops non-alphanumeric characters and splits on whitespace.
pub fn words(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

pub fn tokenize(question: &str, vocab: &TextVocab, max_len: usize) -> TokenSequence {
    assert!(max_len >= 1, "max_len must be at least 1");
    let ids: Vec<u32> = words(question)
        .iter()
        .take(max_len)
        .map(|w| vocab.id(w))
        .collect();
    TokenSequence::from_ids(&ids, max_len)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_words() {
        assert_eq!(
            words("Does the image show pneumonia?"),
            ["does", "the", "image", "show", "pneumonia"]
        );
        assert!(words("").is_empty());
        assert!(words("?!").is_empty());
    }

    #[test]
    fn pads_truncates_and_maps_unknowns() {
        let vocab = TextVocab::build(["does the image show pneumonia"]);
        let seq = tokenize("Does the image show pneumonia?", &vocab, 8);
        assert_eq!(seq.length, 5);
        assert_eq!(seq.ids.len(), 8);
        assert!(seq.ids[5..].iter().all(|&id| id == PAD_ID));
        assert!(seq.active().iter().all(|&id| id >= 2));

        let seq = tokenize("zygoma", &vocab, 4);
        assert_eq!(seq.active(), [UNK_ID]);

        let seq = tokenize("", &vocab, 4);
        assert_eq!(seq.length, 0);
        assert_eq!(seq.ids, [PAD_ID; 4]);

        let seq = tokenize("does the image show pneumonia", &vocab, 2);
        assert_eq!(seq.length, 2);
    }
}
