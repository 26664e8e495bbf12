use hetpar::checkpoint::SeededRng;
use hetpar::data::mlm::{make_nsp_pair, mask_tokens, MaskBranch, MaskConfig, FIRST_WORD_ID};
use hetpar::data::{mlm_vocab_size, synthetic_corpus};

#[test]
fn masking_rates() {
    let cfg = MaskConfig::standard(mlm_vocab_size() as u32);
    let mut rng = SeededRng::new(2024);
    let vocab = mlm_vocab_size() as u64 - FIRST_WORD_ID as u64;
    let (mut seen, mut counts) = (0usize, [0usize; 3]);
    while seen < 100_000 {
        let sentence: Vec<u32> = (0..64).map(|_| FIRST_WORD_ID + rng.bounded(vocab) as u32).collect();
        let m = mask_tokens(&sentence, &mut rng, &cfg);
        seen += sentence.len();
        for b in m.branches {
            counts[match b {
                MaskBranch::Masked => 0,
                MaskBranch::Random => 1,
                MaskBranch::Kept => 2,
            }] += 1;
        }
    }
    let selected: usize = counts.iter().sum();
    let frac = selected as f64 / seen as f64;
    assert!((0.14..=0.16).contains(&frac), "selected {frac}");
    for (c, target) in counts.iter().zip([0.8, 0.1, 0.1]) {
        let share = *c as f64 / selected as f64;
        assert!((share - target).abs() <= 0.02, "branch share {share} vs {target}");
    }
}

#[test]
fn specials_are_never_selected() {
    let cfg = MaskConfig { p_select: 1.0, ..MaskConfig::standard(30) };
    let m = mask_tokens(&[2, 9, 3, 7, 3, 0], &mut SeededRng::new(1), &cfg);
    assert_eq!(m.positions, vec![1, 3]);
}

#[test]
fn next_sentence_balance() {
    let mut rng = SeededRng::new(99);
    let corpus = synthetic_corpus(50, &mut rng);
    let positives = (0..20_000).filter(|_| make_nsp_pair(&corpus, &mut rng, None).unwrap().is_next).count();
    let frac = positives as f64 / 20_000.0;
    assert!((0.48..=0.52).contains(&frac), "positive fraction {frac}");
}
