//! Small generated corpora with known structure.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ItemIdx, SessionCorpus};

/// Sessions walking one of `chains` cyclic item chains of equal length.
///
/// Item `i` belongs to chain `i / (vocab / chains)` and is always followed
/// by the next item of its chain. Sessions start at a random chain position
/// and have between `min_len` and `max_len` clicks. Nothing is held out.
pub fn chain_corpus(sessions: usize, vocab: usize, chains: usize, min_len: usize, max_len: usize, seed: u64) -> SessionCorpus {
    assert!(chains > 0 && vocab % chains == 0 && vocab / chains >= 2, "vocab must split into chains of length >= 2");
    assert!(2 <= min_len && min_len <= max_len);
    let per = vocab / chains;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..sessions)
        .map(|t| {
            let chain = rng.random_range(0..chains);
            let start = rng.random_range(0..per);
            let len = rng.random_range(min_len..=max_len);
            let items = (0..len).map(|k| (chain * per + (start + k) % per) as ItemIdx).collect();
            (t as i64, items)
        })
        .collect();
    SessionCorpus::from_indexed(vocab, rows)
}

/// Parameters of [`regime_corpus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegimeSpec {
    pub contexts: usize,
    pub targets: usize,
    pub regimes: usize,
    /// Sessions per context within each regime.
    pub repeats: usize,
    /// Sessions of the last regime that go to the test partition, per context.
    pub test_repeats: usize,
}

impl Default for RegimeSpec {
    fn default() -> Self {
        RegimeSpec {
            contexts: 10,
            targets: 20,
            regimes: 20,
            repeats: 8,
            test_repeats: 4,
        }
    }
}

/// Two-click sessions `[context, target]` where the target of each context
/// is redrawn in every time regime.
///
/// Across the whole history every context is followed by every target about
/// equally often, so the clicked context alone says little about the next
/// item. The current target is visible only in recent sessions that share
/// the context. Items `0..contexts` are contexts, the rest targets. The
/// last `test_repeats` sessions per context of the final regime form the
/// test partition.
pub fn regime_corpus(spec: RegimeSpec, seed: u64) -> SessionCorpus {
    assert!(spec.test_repeats < spec.repeats && spec.targets > 0 && spec.contexts > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut clock = 0i64;
    for r in 0..spec.regimes {
        let mapping: Vec<usize> = (0..spec.contexts).map(|_| rng.random_range(0..spec.targets)).collect();
        let mut block: Vec<(usize, usize)> = (0..spec.contexts).flat_map(|c| (0..spec.repeats).map(move |k| (c, k))).collect();
        block.shuffle(&mut rng);
        if r + 1 == spec.regimes {
            // held-out sessions come after every training session
            block.sort_by_key(|&(_, k)| k >= spec.repeats - spec.test_repeats);
        }
        for (c, k) in block {
            let row = (clock, vec![c as ItemIdx, (spec.contexts + mapping[c]) as ItemIdx]);
            clock += 1;
            if r + 1 == spec.regimes && k >= spec.repeats - spec.test_repeats {
                test.push(row);
            } else {
                train.push(row);
            }
        }
    }
    let n_train = train.len();
    train.extend(test);
    let mut corpus = SessionCorpus::from_indexed(spec.contexts + spec.targets, train);
    corpus.split = n_train;
    corpus
}
