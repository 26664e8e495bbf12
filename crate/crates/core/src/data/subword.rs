use std::collections::{HashMap, HashSet};

pub const UNK_TOKEN: &str = "[UNK]";

/// Greedy longest-prefix subword split. If some remainder of the word has no
/// matching prefix, the whole word becomes a single `[UNK]`.
pub fn greedy_subword_tokenize(word: &str, vocab: &HashSet<String>) -> Vec<String> {
    let mut pieces = Vec::new();
    let mut rest = word;
    while !rest.is_empty() {
        let longest =
            rest.char_indices().map(|(i, c)| i + c.len_utf8()).rev().find(|&end| vocab.contains(&rest[..end]));
        match longest {
            Some(end) => {
                pieces.push(rest[..end].to_string());
                rest = &rest[end..];
            }
            None => return vec![UNK_TOKEN.to_string()],
        }
    }
    pieces
}

/// Subword pieces with stable ids starting at `first_id`.
#[derive(Debug, Clone)]
pub struct SubwordVocab {
    pieces: HashSet<String>,
    ids: HashMap<String, u32>,
    unk_id: u32,
}

impl SubwordVocab {
    pub fn new(pieces: &[&str], first_id: u32, unk_id: u32) -> Self {
        let mut sorted: Vec<&str> = pieces.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let ids = sorted.iter().enumerate().map(|(i, p)| (p.to_string(), first_id + i as u32)).collect();
        Self { pieces: sorted.iter().map(|p| p.to_string()).collect(), ids, unk_id }
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn tokenize_ids(&self, word: &str) -> Vec<u32> {
        greedy_subword_tokenize(word, &self.pieces)
            .iter()
            .map(|p| self.ids.get(p).copied().unwrap_or(self.unk_id))
            .collect()
    }
}
