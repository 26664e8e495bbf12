//! Synthetic dataset generators, selected by task name.

use std::path::{Path, PathBuf};

use super::mlm::{make_nsp_pair, Corpus, MaskConfig, MaskedInstance, FIRST_WORD_ID, UNK_ID};
use super::record::{Field, Record};
use super::shard::write_shard;
use super::subword::SubwordVocab;
use super::DataError;
use crate::checkpoint::SeededRng;
use crate::registry::Registry;

#[derive(Debug, Clone, PartialEq)]
pub struct DatagenConfig {
    pub n: usize,
    pub dim: usize,
    pub classes: usize,
    pub seed: u64,
    /// Documents in the synthetic corpus (mlm-nsp).
    pub docs: usize,
    /// Sequence length cap (mlm-nsp, synthetic-sequence).
    pub max_len: usize,
    /// Vocabulary size (synthetic-sequence).
    pub vocab_size: usize,
    pub p_select: f64,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self { n: 1000, dim: 20, classes: 5, seed: 7, docs: 64, max_len: 32, vocab_size: 32, p_select: 0.15 }
    }
}

pub type Generator = fn(&DatagenConfig) -> Result<Vec<Record>, DataError>;

pub fn datagen_registry() -> Registry<Generator> {
    Registry::<Generator>::new("datagen task")
        .with("synthetic-classify", synthetic_classify)
        .with("synthetic-sequence", synthetic_sequence)
        .with("mlm-nsp", mlm_nsp)
}

fn gaussian(rng: &mut SeededRng) -> f64 {
    let u1 = 1.0 - rng.next_f64();
    let u2 = rng.next_f64();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Feature vectors `x` drawn around one of `classes` well separated centers,
/// labelled `y` with the center index.
pub fn synthetic_classify(cfg: &DatagenConfig) -> Result<Vec<Record>, DataError> {
    if cfg.dim == 0 || cfg.classes < 2 {
        return Err(DataError::Config("synthetic-classify needs dim >= 1 and classes >= 2".into()));
    }
    let mut rng = SeededRng::new(cfg.seed);
    let centers: Vec<Vec<f64>> =
        (0..cfg.classes).map(|_| (0..cfg.dim).map(|_| 4.0 * (2.0 * rng.next_f64() - 1.0)).collect()).collect();
    Ok((0..cfg.n)
        .map(|_| {
            let c = rng.bounded(cfg.classes as u64) as usize;
            let x = centers[c].iter().map(|m| m + 0.5 * gaussian(&mut rng)).collect();
            Record::new(vec![Field::vector_f64("x", x), Field::vector_i64("y", vec![c as i64])], 1)
        })
        .collect())
}

/// Variable-length token sequences labelled by their first token's class.
pub fn synthetic_sequence(cfg: &DatagenConfig) -> Result<Vec<Record>, DataError> {
    if cfg.vocab_size <= FIRST_WORD_ID as usize || cfg.max_len < 2 || cfg.classes < 2 {
        return Err(DataError::Config("synthetic-sequence needs vocab_size > 5, max_len >= 2, classes >= 2".into()));
    }
    let mut rng = SeededRng::new(cfg.seed);
    let words = (cfg.vocab_size - FIRST_WORD_ID as usize) as u64;
    Ok((0..cfg.n)
        .map(|_| {
            let len = 2 + rng.bounded(cfg.max_len as u64 - 1) as usize;
            let tokens: Vec<i64> = (0..len).map(|_| (FIRST_WORD_ID as u64 + rng.bounded(words)) as i64).collect();
            let label = tokens[0] as usize % cfg.classes;
            Record::new(
                vec![Field::vector_i64("tokens", tokens), Field::vector_i64("label", vec![label as i64])],
                len as u32,
            )
        })
        .collect())
}

const LETTERS: &[u8] = b"abcdefghz";
const PIECES: &[&str] = &["a", "b", "c", "d", "e", "f", "g", "h", "ab", "cd", "ef", "gh", "ba", "dc", "abc", "fed"];

/// Vocabulary used by the mlm-nsp generator. The letter `z` is not covered,
/// so words containing it become `[UNK]`.
pub fn corpus_vocab() -> SubwordVocab {
    SubwordVocab::new(PIECES, FIRST_WORD_ID, UNK_ID)
}

pub fn mlm_vocab_size() -> usize {
    FIRST_WORD_ID as usize + corpus_vocab().len()
}

/// Random documents of random words, tokenized with [`corpus_vocab`].
pub fn synthetic_corpus(docs: usize, rng: &mut SeededRng) -> Corpus {
    let vocab = corpus_vocab();
    (0..docs)
        .map(|_| {
            let sentences = 2 + rng.bounded(5) as usize;
            (0..sentences)
                .map(|_| {
                    let words = 2 + rng.bounded(5) as usize;
                    let mut ids = Vec::new();
                    for _ in 0..words {
                        let len = 1 + rng.bounded(5) as usize;
                        let w: String =
                            (0..len).map(|_| LETTERS[rng.bounded(LETTERS.len() as u64) as usize] as char).collect();
                        ids.extend(vocab.tokenize_ids(&w));
                    }
                    ids
                })
                .collect()
        })
        .collect()
}

/// `[CLS] A [SEP] B [SEP]` instances with masks and next-sentence labels.
pub fn mlm_nsp(cfg: &DatagenConfig) -> Result<Vec<Record>, DataError> {
    let mut rng = SeededRng::new(cfg.seed);
    let corpus = synthetic_corpus(cfg.docs, &mut rng);
    let mask = MaskConfig { p_select: cfg.p_select, ..MaskConfig::standard(mlm_vocab_size() as u32) };
    (0..cfg.n)
        .map(|_| {
            let pair = make_nsp_pair(&corpus, &mut rng, None)?;
            Ok(MaskedInstance::build(&pair, cfg.max_len, &mut rng, &mask)?.to_record())
        })
        .collect()
}

/// Splits records into `shards` contiguous files named `shard-XXXX.hsd`.
pub fn write_dataset(records: &[Record], dir: &Path, shards: usize) -> Result<Vec<PathBuf>, DataError> {
    if shards == 0 {
        return Err(DataError::Config("shard count must be >= 1".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(shards);
    for s in 0..shards {
        let lo = records.len() * s / shards;
        let hi = records.len() * (s + 1) / shards;
        let path = dir.join(format!("shard-{s:04}.hsd"));
        write_shard(&records[lo..hi], &path)?;
        paths.push(path);
    }
    Ok(paths)
}
