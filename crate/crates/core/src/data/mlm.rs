//! Masked-token and next-sentence training instance construction.

use super::record::{Field, Record};
use super::DataError;
use crate::checkpoint::SeededRng;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;
/// Ids below this are special and never masked.
pub const FIRST_WORD_ID: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskConfig {
    pub p_select: f64,
    /// Share of selected tokens replaced by `[MASK]`.
    pub p_mask: f64,
    /// Share replaced by a uniformly drawn word; the remainder stays unchanged.
    pub p_random: f64,
    pub vocab_size: u32,
}

impl MaskConfig {
    pub fn standard(vocab_size: u32) -> Self {
        Self { p_select: 0.15, p_mask: 0.8, p_random: 0.1, vocab_size }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskBranch {
    Masked,
    Random,
    Kept,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedTokens {
    pub tokens: Vec<u32>,
    pub positions: Vec<usize>,
    pub originals: Vec<u32>,
    pub branches: Vec<MaskBranch>,
}

/// Independently selects each non-special token with `p_select`; a selected
/// token becomes `[MASK]`, a random word, or stays, per the configured split.
pub fn mask_tokens(tokens: &[u32], rng: &mut SeededRng, cfg: &MaskConfig) -> MaskedTokens {
    let mut out = tokens.to_vec();
    let mut positions = Vec::new();
    let mut originals = Vec::new();
    let mut branches = Vec::new();
    let words = cfg.vocab_size.saturating_sub(FIRST_WORD_ID).max(1) as u64;
    for (i, &t) in tokens.iter().enumerate() {
        if t < FIRST_WORD_ID || rng.next_f64() >= cfg.p_select {
            continue;
        }
        let u = rng.next_f64();
        let branch = if u < cfg.p_mask {
            out[i] = MASK_ID;
            MaskBranch::Masked
        } else if u < cfg.p_mask + cfg.p_random {
            out[i] = FIRST_WORD_ID + rng.bounded(words) as u32;
            MaskBranch::Random
        } else {
            MaskBranch::Kept
        };
        positions.push(i);
        originals.push(t);
        branches.push(branch);
    }
    MaskedTokens { tokens: out, positions, originals, branches }
}

/// Documents of sentences of token ids.
pub type Corpus = Vec<Vec<Vec<u32>>>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NspPair {
    pub first: Vec<u32>,
    pub second: Vec<u32>,
    /// 1 when `second` follows `first` in its document.
    pub is_next: bool,
}

/// Draws a sentence with a successor; half the time pairs it with that
/// successor, otherwise with a random sentence from another document.
/// `force` pins the label.
pub fn make_nsp_pair(corpus: &Corpus, rng: &mut SeededRng, force: Option<bool>) -> Result<NspPair, DataError> {
    if corpus.len() < 2 {
        return Err(DataError::Corpus(format!("need at least 2 documents, got {}", corpus.len())));
    }
    if let Some(i) = corpus.iter().position(|d| d.len() < 2) {
        return Err(DataError::Corpus(format!("document {i} has fewer than 2 sentences")));
    }
    let doc = rng.bounded(corpus.len() as u64) as usize;
    let sent = rng.bounded(corpus[doc].len() as u64 - 1) as usize;
    let is_next = match force {
        Some(v) => v,
        None => rng.next_f64() < 0.5,
    };
    let second = if is_next {
        corpus[doc][sent + 1].clone()
    } else {
        let mut other = rng.bounded(corpus.len() as u64 - 1) as usize;
        if other >= doc {
            other += 1;
        }
        let s = rng.bounded(corpus[other].len() as u64) as usize;
        corpus[other][s].clone()
    };
    Ok(NspPair { first: corpus[doc][sent].clone(), second, is_next })
}

/// `[CLS] A [SEP] B [SEP]` with segment 0 through the first `[SEP]` and 1 after.
/// The longer sentence is trimmed from its end until the pair fits `max_len`.
pub fn assemble_pair(first: &[u32], second: &[u32], max_len: usize) -> Result<(Vec<u32>, Vec<u32>), DataError> {
    if max_len < 5 {
        return Err(DataError::Config(format!("max_len {max_len} cannot hold a sentence pair")));
    }
    let (mut a, mut b) = (first.len(), second.len());
    while a + b + 3 > max_len {
        if a >= b {
            a -= 1;
        } else {
            b -= 1;
        }
    }
    let mut tokens = Vec::with_capacity(a + b + 3);
    tokens.push(CLS_ID);
    tokens.extend_from_slice(&first[..a]);
    tokens.push(SEP_ID);
    tokens.extend_from_slice(&second[..b]);
    tokens.push(SEP_ID);
    let segments = (0..tokens.len()).map(|i| u32::from(i > a + 1)).collect();
    Ok((tokens, segments))
}

/// A complete masked-token / next-sentence training instance.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedInstance {
    pub tokens: Vec<u32>,
    pub segments: Vec<u32>,
    pub mask_positions: Vec<usize>,
    pub mask_originals: Vec<u32>,
    pub is_next: bool,
}

impl MaskedInstance {
    pub fn build(pair: &NspPair, max_len: usize, rng: &mut SeededRng, cfg: &MaskConfig) -> Result<Self, DataError> {
        let (tokens, segments) = assemble_pair(&pair.first, &pair.second, max_len)?;
        let masked = mask_tokens(&tokens, rng, cfg);
        Ok(Self {
            tokens: masked.tokens,
            segments,
            mask_positions: masked.positions,
            mask_originals: masked.originals,
            is_next: pair.is_next,
        })
    }

    pub fn to_record(&self) -> Record {
        let ints = |v: &[u32]| v.iter().map(|&x| x as i64).collect::<Vec<_>>();
        Record::new(
            vec![
                Field::vector_i64("tokens", ints(&self.tokens)),
                Field::vector_i64("segments", ints(&self.segments)),
                Field::vector_i64("mask_pos", self.mask_positions.iter().map(|&p| p as i64).collect()),
                Field::vector_i64("mask_orig", ints(&self.mask_originals)),
                Field::vector_i64("nsp", vec![i64::from(self.is_next)]),
            ],
            self.tokens.len() as u32,
        )
    }
}
