use std::fmt;
use std::str::FromStr;

use super::{Session, SessionCorpus};
use crate::error::{Error, Result};

/// Drops rare items and short sessions until neither rule removes anything.
///
/// Support is the total click count of an item. Removing an item can push
/// a session under `min_len`, and removing a session can push an item under
/// `min_support`, so the two rules are applied alternately to a fixed point.
/// Surviving items are re-indexed densely in their original order.
pub fn filter_corpus(c: &SessionCorpus, min_len: usize, min_support: u64) -> Result<SessionCorpus> {
    let n_items = c.vocab.len();
    let mut keep_item = vec![true; n_items];
    let mut train: Vec<Session> = c.train().to_vec();
    let mut test: Vec<Session> = c.test().to_vec();
    loop {
        let mut support = vec![0u64; n_items];
        for s in train.iter().chain(&test) {
            for &i in &s.items {
                support[i as usize] += 1;
            }
        }
        let mut changed = false;
        for (i, k) in keep_item.iter_mut().enumerate() {
            if *k && support[i] < min_support {
                *k = false;
                changed = true;
            }
        }
        let before = train.len() + test.len();
        for part in [&mut train, &mut test] {
            for s in part.iter_mut() {
                s.items.retain(|&i| keep_item[i as usize]);
            }
            part.retain(|s| s.items.len() >= min_len.max(1));
        }
        if !changed && train.len() + test.len() == before {
            break;
        }
    }
    if train.is_empty() && test.is_empty() {
        return Err(Error::FullyFiltered);
    }
    Ok(c.rebuild(train, test).compact_vocab(&keep_item))
}

/// Sessions starting within the last `test_window` seconds become the test
/// partition. Test sessions that click any item absent from training are
/// then dropped (see [`drop_unseen_test_sessions`]).
pub fn split_by_time(c: &SessionCorpus, test_window: i64) -> Result<SessionCorpus> {
    if test_window <= 0 {
        return Err(Error::InvalidArgument(format!("test window must be positive, got {test_window}")));
    }
    let last = c.sessions.iter().map(|s| s.start_time).max().ok_or(Error::EmptyPartition("train"))?;
    let boundary = last - test_window;
    let (train, test): (Vec<Session>, Vec<Session>) = c.sessions.iter().cloned().partition(|s| s.start_time <= boundary);
    if train.is_empty() {
        return Err(Error::EmptyPartition("train"));
    }
    drop_unseen_test_sessions(&c.rebuild(train, test))
}

/// Removes test sessions containing items never clicked in training, then
/// restricts the vocabulary to training items.
pub fn drop_unseen_test_sessions(c: &SessionCorpus) -> Result<SessionCorpus> {
    let mut seen = vec![false; c.vocab.len()];
    for s in c.train() {
        for &i in &s.items {
            seen[i as usize] = true;
        }
    }
    let test: Vec<Session> = c.test().iter().filter(|s| s.items.iter().all(|&i| seen[i as usize])).cloned().collect();
    if c.train().is_empty() {
        return Err(Error::EmptyPartition("train"));
    }
    if test.is_empty() {
        return Err(Error::EmptyPartition("test"));
    }
    Ok(c.rebuild(c.train().to_vec(), test).compact_vocab(&seen))
}

/// Positive rational `num/den`, parsed from `"p/q"` or an integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 || num > den {
            return Err(Error::InvalidArgument(format!("fraction must lie in (0, 1], got {num}/{den}")));
        }
        Ok(Fraction { num, den })
    }

    /// `ceil(self * n)`
    pub fn ceil_of(&self, n: usize) -> usize {
        let n = n as u128;
        ((n * self.num as u128).div_ceil(self.den as u128)) as usize
    }
}

impl FromStr for Fraction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad fraction {s:?}"));
        match s.split_once('/') {
            Some((p, q)) => Fraction::new(p.trim().parse().map_err(|_| bad())?, q.trim().parse().map_err(|_| bad())?),
            None => Fraction::new(s.trim().parse().map_err(|_| bad())?, 1),
        }
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// Keeps the `ceil(fraction * |train|)` most recent training sessions.
/// The test partition and the vocabulary are left as they are.
pub fn take_recent_fraction(c: &SessionCorpus, fraction: Fraction) -> SessionCorpus {
    let keep = fraction.ceil_of(c.split);
    let train = c.train()[c.split - keep..].to_vec();
    c.rebuild(train, c.test().to_vec())
}
