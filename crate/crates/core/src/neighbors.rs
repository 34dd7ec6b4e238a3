//! Past-session retrieval: inverted index, recency subsampling, cosine
//! similarity over binary item vectors, thresholding and top-k selection.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{ItemIdx, Session, SessionCorpus, SessionId};

/// Which length enters the cosine denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthNorm {
    /// Number of distinct items; identical sessions score exactly 1.
    #[default]
    Distinct,
    /// Raw click count, repeats included.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k: usize,
    pub threshold: f64,
    /// Candidates kept after recency subsampling.
    pub m: usize,
    pub length_norm: LengthNorm,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: 120,
            threshold: 0.5,
            m: 1000,
            length_norm: LengthNorm::Distinct,
        }
    }
}

/// Sorted distinct items of `items`.
pub fn distinct(items: &[ItemIdx]) -> Vec<ItemIdx> {
    let mut d = items.to_vec();
    d.sort_unstable();
    d.dedup();
    d
}

fn sorted_overlap(a: &[ItemIdx], b: &[ItemIdx]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn cosine(overlap: usize, la: usize, lb: usize) -> f64 {
    if overlap == 0 {
        return 0.0;
    }
    overlap as f64 / ((la * lb) as f64).sqrt()
}

/// Cosine similarity of two sessions encoded as binary item vectors.
pub fn similarity(a: &[ItemIdx], b: &[ItemIdx], norm: LengthNorm) -> f64 {
    let (da, db) = (distinct(a), distinct(b));
    let (la, lb) = match norm {
        LengthNorm::Distinct => (da.len(), db.len()),
        LengthNorm::Raw => (a.len(), b.len()),
    };
    cosine(sorted_overlap(&da, &db), la, lb)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub session: SessionId,
    pub similarity: f64,
}

/// Retrieved past sessions, most similar first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NeighborSet {
    pub entries: Vec<Neighbor>,
}

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Neighbor> {
        self.entries.iter()
    }
}

#[derive(Debug, Clone)]
struct IndexedSession {
    start_time: i64,
    distinct: Vec<ItemIdx>,
    raw_len: usize,
}

/// Item → training sessions containing it, newest first.
///
/// Recency is `(start_time, id)`: sessions with equal start times are
/// ordered by id, which follows input order.
#[derive(Debug, Clone)]
pub struct InvertedIndex {
    postings: HashMap<ItemIdx, Vec<SessionId>>,
    sessions: HashMap<SessionId, IndexedSession>,
}

impl InvertedIndex {
    /// Indexes the training partition of `corpus`.
    pub fn build(corpus: &SessionCorpus) -> Self {
        Self::from_sessions(corpus.train())
    }

    pub fn from_sessions(sessions: &[Session]) -> Self {
        let mut postings: HashMap<ItemIdx, Vec<SessionId>> = HashMap::new();
        let mut indexed = HashMap::with_capacity(sessions.len());
        for s in sessions {
            let d = distinct(&s.items);
            for &i in &d {
                postings.entry(i).or_default().push(s.id);
            }
            indexed.insert(
                s.id,
                IndexedSession {
                    start_time: s.start_time,
                    distinct: d,
                    raw_len: s.items.len(),
                },
            );
        }
        let mut idx = InvertedIndex {
            postings,
            sessions: indexed,
        };
        let keys: Vec<ItemIdx> = idx.postings.keys().copied().collect();
        for k in keys {
            let mut list = std::mem::take(idx.postings.get_mut(&k).expect("key"));
            list.sort_unstable_by_key(|&s| std::cmp::Reverse(idx.recency(s)));
            idx.postings.insert(k, list);
        }
        idx
    }

    fn recency(&self, s: SessionId) -> (i64, SessionId) {
        (self.sessions[&s].start_time, s)
    }

    pub fn num_sessions(&self) -> usize {
        self.sessions.len()
    }

    /// Sessions containing `item`, newest first.
    pub fn postings(&self, item: ItemIdx) -> &[SessionId] {
        self.postings.get(&item).map_or(&[], Vec::as_slice)
    }

    /// Distinct items of an indexed session, ascending.
    pub fn session_items(&self, s: SessionId) -> Option<&[ItemIdx]> {
        self.sessions.get(&s).map(|e| e.distinct.as_slice())
    }

    /// Union of the postings of `prefix`'s items, restricted to sessions
    /// starting strictly before `now`, newest first, at most `m`.
    pub fn candidates(&self, prefix: &[ItemIdx], m: usize, now: i64) -> Vec<SessionId> {
        let mut all: Vec<SessionId> = distinct(prefix)
            .iter()
            .flat_map(|&i| self.postings(i).iter().copied())
            .filter(|&s| self.sessions[&s].start_time < now)
            .collect();
        all.sort_unstable_by_key(|&s| std::cmp::Reverse(self.recency(s)));
        all.dedup();
        all.truncate(m);
        all
    }

    /// The `k` most similar candidates with similarity at least `threshold`,
    /// ties going to the more recent session.
    pub fn neighbors(&self, prefix: &[ItemIdx], now: i64, cfg: &RetrievalConfig) -> NeighborSet {
        let query = distinct(prefix);
        let lq = match cfg.length_norm {
            LengthNorm::Distinct => query.len(),
            LengthNorm::Raw => prefix.len(),
        };
        let mut scored: Vec<(f64, (i64, SessionId))> = self
            .candidates(prefix, cfg.m, now)
            .into_iter()
            .filter_map(|s| {
                let e = &self.sessions[&s];
                let ls = match cfg.length_norm {
                    LengthNorm::Distinct => e.distinct.len(),
                    LengthNorm::Raw => e.raw_len,
                };
                let sim = cosine(sorted_overlap(&query, &e.distinct), lq, ls);
                (sim >= cfg.threshold && sim > 0.0).then_some((sim, (e.start_time, s)))
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
        scored.truncate(cfg.k);
        NeighborSet {
            entries: scored
                .into_iter()
                .map(|(similarity, (_, session))| Neighbor { session, similarity })
                .collect(),
        }
    }
}

/// Neighbor sets for every augmented prefix of a set of sessions, keyed by
/// `(session id, prefix length)`. Each prefix uses its session's start time
/// as `now`.
#[derive(Debug, Clone, Default)]
pub struct NeighborCache {
    map: HashMap<(SessionId, usize), NeighborSet>,
}

impl NeighborCache {
    pub fn build(index: &InvertedIndex, sessions: &[Session], cfg: &RetrievalConfig) -> Self {
        use rayon::prelude::*;
        let keys: Vec<(&Session, usize)> =
            sessions.iter().flat_map(|s| (1..s.items.len()).map(move |len| (s, len))).collect();
        let map = keys
            .par_iter()
            .map(|&(s, len)| ((s.id, len), index.neighbors(&s.items[..len], s.start_time, cfg)))
            .collect();
        NeighborCache { map }
    }

    pub fn get(&self, session: SessionId, prefix_len: usize) -> Option<&NeighborSet> {
        self.map.get(&(session, prefix_len))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
