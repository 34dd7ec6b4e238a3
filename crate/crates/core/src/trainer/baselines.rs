//! Non-neural recommenders: popularity, session kNN and item kNN.

use crate::corpus::{ItemIdx, SessionCorpus};
use crate::neighbors::{distinct, NeighborSet};

/// Training click counts; higher is better, ties by item index.
#[derive(Debug, Clone)]
pub struct Popularity {
    counts: Vec<f64>,
}

impl Popularity {
    pub fn fit(corpus: &SessionCorpus) -> Self {
        let mut counts = vec![0.0; corpus.num_items()];
        for s in corpus.train() {
            for &i in &s.items {
                counts[i as usize] += 1.0;
            }
        }
        Popularity { counts }
    }

    pub fn scores(&self) -> &[f64] {
        &self.counts
    }
}

/// `score(i) = Σ_j sim(s, j) · 1[i ∈ j]` over the neighbor sessions `j`.
///
/// Returns `None` for an empty neighbor set: no recommendation is made.
pub fn sknn_scores(neighbors: &NeighborSet, corpus: &SessionCorpus) -> Option<Vec<f64>> {
    if neighbors.is_empty() {
        return None;
    }
    let mut scores = vec![0.0; corpus.num_items()];
    for n in neighbors.iter() {
        for i in distinct(&corpus.session(n.session).items) {
            scores[i as usize] += n.similarity;
        }
    }
    Some(scores)
}

/// Item-to-item cosine over binary session-occurrence vectors.
#[derive(Debug, Clone)]
pub struct ItemKnn {
    /// Training sessions containing each item.
    occurrences: Vec<Vec<u32>>,
    /// Distinct items of each training session.
    session_items: Vec<Vec<ItemIdx>>,
}

impl ItemKnn {
    pub fn fit(corpus: &SessionCorpus) -> Self {
        let mut occurrences = vec![Vec::new(); corpus.num_items()];
        let mut session_items = Vec::with_capacity(corpus.train().len());
        for (pos, s) in corpus.train().iter().enumerate() {
            let d = distinct(&s.items);
            for &i in &d {
                occurrences[i as usize].push(pos as u32);
            }
            session_items.push(d);
        }
        ItemKnn {
            occurrences,
            session_items,
        }
    }

    pub fn similarity(&self, a: ItemIdx, b: ItemIdx) -> f64 {
        let (sa, sb) = (&self.occurrences[a as usize], &self.occurrences[b as usize]);
        if sa.is_empty() || sb.is_empty() {
            return 0.0;
        }
        let common = sa.iter().filter(|s| sb.binary_search(s).is_ok()).count();
        common as f64 / ((sa.len() * sb.len()) as f64).sqrt()
    }

    /// `score(i) = sim(last item of prefix, i)`; `None` when the last item
    /// never occurs in training.
    pub fn scores(&self, prefix: &[ItemIdx]) -> Option<Vec<f64>> {
        let last = *prefix.last()?;
        let occ = &self.occurrences[last as usize];
        if occ.is_empty() {
            return None;
        }
        let mut common = vec![0usize; self.occurrences.len()];
        for &s in occ {
            for &i in &self.session_items[s as usize] {
                common[i as usize] += 1;
            }
        }
        Some(
            common
                .iter()
                .zip(&self.occurrences)
                .map(|(&c, o)| if c == 0 { 0.0 } else { c as f64 / ((occ.len() * o.len()) as f64).sqrt() })
                .collect(),
        )
    }
}
