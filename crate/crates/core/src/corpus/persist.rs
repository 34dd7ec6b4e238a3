//! On-disk corpus: `corpus.bin` (sessions) and `vocab.json` (items).
//!
//! `corpus.bin`, little-endian:
//!
//! ```text
//! version     u8   = 1 (offset 0)
//! sessions    u64  number of sessions
//! split       u64  number of training sessions (they come first)
//! per session, chronological:
//!   start     i64  seconds since epoch
//!   len       u32
//!   items     len x u32 item indices
//! ```
//!
//! `vocab.json` lists `{key, support}` objects; an item's index is its
//! position in the list.

use std::fs;
use std::path::Path;

use super::{ItemIdx, ItemVocab, Session, SessionCorpus, SessionId};
use crate::error::{Error, Result};

pub const CORPUS_FILE: &str = "corpus.bin";
pub const VOCAB_FILE: &str = "vocab.json";
pub const CORPUS_FORMAT_VERSION: u8 = 1;

pub fn encode_sessions(c: &SessionCorpus) -> Vec<u8> {
    let clicks: usize = c.sessions.iter().map(Session::len).sum();
    let mut out = Vec::with_capacity(17 + c.sessions.len() * 12 + clicks * 4);
    out.push(CORPUS_FORMAT_VERSION);
    out.extend_from_slice(&(c.sessions.len() as u64).to_le_bytes());
    out.extend_from_slice(&(c.split as u64).to_le_bytes());
    for s in &c.sessions {
        out.extend_from_slice(&s.start_time.to_le_bytes());
        out.extend_from_slice(&(s.items.len() as u32).to_le_bytes());
        for i in &s.items {
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    out
}

fn decode_sessions(bytes: &[u8], n_items: usize) -> std::result::Result<(Vec<Session>, usize), String> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> std::result::Result<&[u8], String> {
        if bytes.len() - pos < n {
            return Err(format!("truncated at byte {pos}"));
        }
        pos += n;
        Ok(&bytes[pos - n..pos])
    };
    let version = take(1)?[0];
    if version != CORPUS_FORMAT_VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let split = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    if split > count {
        return Err(format!("split {split} exceeds session count {count}"));
    }
    let mut sessions = Vec::with_capacity(count.min(1 << 24));
    let mut last_start = i64::MIN;
    for id in 0..count {
        let start_time = i64::from_le_bytes(take(8)?.try_into().unwrap());
        let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let raw = take(len.checked_mul(4).ok_or("length overflow")?)?;
        let items: Vec<ItemIdx> = raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        if let Some(bad) = items.iter().find(|&&i| i as usize >= n_items) {
            return Err(format!("session {id} references item {bad} outside vocabulary of {n_items}"));
        }
        // training and test partitions are each chronological
        if id != split && start_time < last_start {
            return Err(format!("session {id} is out of chronological order"));
        }
        last_start = start_time;
        sessions.push(Session {
            id: id as SessionId,
            items,
            start_time,
        });
    }
    if pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - pos));
    }
    Ok((sessions, split))
}

pub fn save_corpus(c: &SessionCorpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CORPUS_FILE), encode_sessions(c))?;
    fs::write(dir.join(VOCAB_FILE), c.vocab.to_json()?)?;
    Ok(())
}

pub fn load_corpus(dir: &Path) -> Result<SessionCorpus> {
    let vocab_path = dir.join(VOCAB_FILE);
    let vocab = ItemVocab::from_json(&fs::read_to_string(&vocab_path)?).map_err(|reason| Error::Format {
        path: vocab_path,
        reason,
    })?;
    let corpus_path = dir.join(CORPUS_FILE);
    let (sessions, split) = decode_sessions(&fs::read(&corpus_path)?, vocab.len()).map_err(|reason| Error::Format {
        path: corpus_path,
        reason,
    })?;
    Ok(SessionCorpus { sessions, vocab, split })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_byte_at_offset_zero() {
        let c = SessionCorpus::from_indexed(2, vec![(1, vec![0, 1])]);
        assert_eq!(encode_sessions(&c)[0], CORPUS_FORMAT_VERSION);
    }

    #[test]
    fn save_then_load_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = SessionCorpus::from_indexed(3, vec![(1, vec![0, 1, 1]), (7, vec![2, 0]), (9, vec![1, 2])]);
        c.split = 2;
        save_corpus(&c, dir.path()).unwrap();
        let back = load_corpus(dir.path()).unwrap();
        assert_eq!(back, c);
        let bytes = fs::read(dir.path().join(CORPUS_FILE)).unwrap();
        assert_eq!(encode_sessions(&back), bytes);
    }

    #[test]
    fn rejects_out_of_vocab_items_and_truncation() {
        let c = SessionCorpus::from_indexed(3, vec![(1, vec![0, 2])]);
        let bytes = encode_sessions(&c);
        assert!(decode_sessions(&bytes, 2).is_err());
        assert!(decode_sessions(&bytes[..bytes.len() - 2], 3).is_err());
    }
}
