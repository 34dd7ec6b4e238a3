//! Click logs to chronologically ordered, filtered, split session corpora.

mod filter;
mod ingest;
mod persist;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use filter::{drop_unseen_test_sessions, filter_corpus, split_by_time, take_recent_fraction, Fraction};
pub use ingest::{ingest_events, parse_timestamp, read_events, Column, ColumnMap, RowFilter};
pub use persist::{load_corpus, save_corpus, CORPUS_FILE, CORPUS_FORMAT_VERSION, VOCAB_FILE};

/// Dense item index in `[0, vocab.len())`.
pub type ItemIdx = u32;
/// Dense session index; equal to the session's position in the corpus.
pub type SessionId = u32;

/// One raw click.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub session_key: String,
    /// Seconds since the epoch.
    pub timestamp: i64,
    pub item_key: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub id: SessionId,
    /// Items in click order; repeats allowed.
    pub items: Vec<ItemIdx>,
    pub start_time: i64,
}

impl Session {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ItemVocab {
    keys: Vec<String>,
    index: HashMap<String, ItemIdx>,
    support: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct VocabEntry {
    key: String,
    support: u64,
}

impl ItemVocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index of `key`, assigning the next free index to unseen keys.
    pub fn intern(&mut self, key: &str) -> ItemIdx {
        if let Some(&i) = self.index.get(key) {
            return i;
        }
        let i = self.keys.len() as ItemIdx;
        self.keys.push(key.to_string());
        self.index.insert(key.to_string(), i);
        self.support.push(0);
        i
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<ItemIdx> {
        self.index.get(key).copied()
    }

    pub fn key(&self, item: ItemIdx) -> &str {
        &self.keys[item as usize]
    }

    /// Total click count of `item`.
    pub fn support(&self, item: ItemIdx) -> u64 {
        self.support[item as usize]
    }

    fn recount(&mut self, sessions: &[Session]) {
        self.support = vec![0; self.keys.len()];
        for s in sessions {
            for &i in &s.items {
                self.support[i as usize] += 1;
            }
        }
    }

    pub(crate) fn to_json(&self) -> serde_json::Result<String> {
        let entries: Vec<VocabEntry> = self
            .keys
            .iter()
            .zip(&self.support)
            .map(|(k, s)| VocabEntry {
                key: k.clone(),
                support: *s,
            })
            .collect();
        serde_json::to_string_pretty(&serde_json::json!({ "version": 1, "items": entries }))
    }

    pub(crate) fn from_json(text: &str) -> std::result::Result<Self, String> {
        #[derive(Deserialize)]
        struct File {
            items: Vec<VocabEntry>,
        }
        let file: File = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let mut vocab = ItemVocab::new();
        for e in file.items {
            let before = vocab.len();
            let i = vocab.intern(&e.key);
            if vocab.len() == before {
                return Err(format!("duplicate item key {:?}", e.key));
            }
            vocab.support[i as usize] = e.support;
        }
        Ok(vocab)
    }
}

/// Sessions sorted by start time plus a train/test boundary.
///
/// `sessions[..split]` is the training partition, `sessions[split..]` the
/// test partition. An unsplit corpus has `split == sessions.len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionCorpus {
    pub sessions: Vec<Session>,
    pub vocab: ItemVocab,
    pub split: usize,
}

impl SessionCorpus {
    /// Builds a corpus from item-index sequences and start times, sorting
    /// chronologically (stable) and assigning ids by position.
    pub fn from_sessions(mut sessions: Vec<(i64, Vec<ItemIdx>)>, vocab: ItemVocab) -> Self {
        sessions.sort_by_key(|(t, _)| *t);
        let sessions: Vec<Session> = sessions
            .into_iter()
            .enumerate()
            .map(|(i, (start_time, items))| Session {
                id: i as SessionId,
                items,
                start_time,
            })
            .collect();
        let split = sessions.len();
        let mut corpus = SessionCorpus { sessions, vocab, split };
        corpus.vocab.recount(&corpus.sessions);
        corpus
    }

    /// Corpus over items named `"0".."n_items-1"`; handy for synthetic data.
    pub fn from_indexed(n_items: usize, sessions: Vec<(i64, Vec<ItemIdx>)>) -> Self {
        let mut vocab = ItemVocab::new();
        for i in 0..n_items {
            vocab.intern(&i.to_string());
        }
        SessionCorpus::from_sessions(sessions, vocab)
    }

    pub fn train(&self) -> &[Session] {
        &self.sessions[..self.split]
    }

    pub fn test(&self) -> &[Session] {
        &self.sessions[self.split..]
    }

    pub fn is_split(&self) -> bool {
        self.split < self.sessions.len()
    }

    pub fn num_items(&self) -> usize {
        self.vocab.len()
    }

    pub fn session(&self, id: SessionId) -> &Session {
        &self.sessions[id as usize]
    }

    pub fn training_examples(&self) -> Vec<TrainingExample> {
        self.train().iter().flat_map(augment).collect()
    }

    pub fn test_examples(&self) -> Vec<TrainingExample> {
        self.test().iter().flat_map(augment).collect()
    }

    /// Rebuilds with the given train/test session lists, renumbering ids
    /// and recounting support. Item indices are left untouched.
    pub(crate) fn rebuild(&self, train: Vec<Session>, test: Vec<Session>) -> SessionCorpus {
        let split = train.len();
        let sessions: Vec<Session> = train
            .into_iter()
            .chain(test)
            .enumerate()
            .map(|(i, mut s)| {
                s.id = i as SessionId;
                s
            })
            .collect();
        let mut vocab = self.vocab.clone();
        vocab.recount(&sessions);
        SessionCorpus { sessions, vocab, split }
    }

    /// Re-indexes items densely, keeping only those with `keep[item]`.
    /// Surviving items keep their relative order.
    pub(crate) fn compact_vocab(&self, keep: &[bool]) -> SessionCorpus {
        let mut remap = vec![None; self.vocab.len()];
        let mut vocab = ItemVocab::new();
        for (old, &k) in keep.iter().enumerate() {
            if k {
                remap[old] = Some(vocab.intern(self.vocab.key(old as ItemIdx)));
            }
        }
        let sessions = self
            .sessions
            .iter()
            .map(|s| Session {
                id: s.id,
                items: s.items.iter().filter_map(|&i| remap[i as usize]).collect(),
                start_time: s.start_time,
            })
            .collect::<Vec<_>>();
        vocab.recount(&sessions);
        SessionCorpus {
            sessions,
            vocab,
            split: self.split,
        }
    }
}

/// A `(prefix, next item)` pair cut from a session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub session: SessionId,
    pub prefix: Vec<ItemIdx>,
    pub label: ItemIdx,
}

/// All `([v1..vi], v(i+1))` pairs of a session, shortest prefix first.
pub fn augment(session: &Session) -> Vec<TrainingExample> {
    (1..session.items.len())
        .map(|end| TrainingExample {
            session: session.id,
            prefix: session.items[..end].to_vec(),
            label: session.items[end],
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(items: &[ItemIdx]) -> Session {
        Session {
            id: 0,
            items: items.to_vec(),
            start_time: 0,
        }
    }

    #[test]
    fn augment_three_items() {
        let ex = augment(&session(&[1, 2, 3]));
        let pairs: Vec<_> = ex.iter().map(|e| (e.prefix.clone(), e.label)).collect();
        assert_eq!(pairs, vec![(vec![1], 2), (vec![1, 2], 3)]);
    }

    #[test]
    fn augment_minimal_and_degenerate() {
        assert_eq!(augment(&session(&[4, 9])).len(), 1);
        assert!(augment(&session(&[4])).is_empty());
    }

    #[test]
    fn augment_length_seven() {
        let items = [3, 1, 4, 1, 5, 9, 2];
        let ex = augment(&session(&items));
        assert_eq!(ex.len(), 6);
        for e in &ex {
            let mut joined = e.prefix.clone();
            joined.push(e.label);
            assert_eq!(joined.as_slice(), &items[..joined.len()]);
        }
    }

    #[test]
    fn vocab_json_round_trip() {
        let c = SessionCorpus::from_indexed(3, vec![(5, vec![0, 1, 1]), (2, vec![2, 0])]);
        let back = ItemVocab::from_json(&c.vocab.to_json().unwrap()).unwrap();
        assert_eq!(back, c.vocab);
        assert_eq!(back.support(1), 2);
    }

    #[test]
    fn from_sessions_sorts_and_numbers() {
        let c = SessionCorpus::from_indexed(3, vec![(5, vec![0, 1]), (2, vec![2, 0])]);
        assert_eq!(c.sessions[0].start_time, 2);
        assert_eq!(c.sessions[1].id, 1);
        assert!(!c.is_split());
    }
}
