use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 1-based rank of `target` when items are sorted by descending score and
/// equal scores are ordered by ascending item index.
pub fn rank_of(scores: &[f64], target: usize) -> usize {
    let t = scores[target];
    let above = scores.iter().filter(|&&s| s > t).count();
    let tied_before = scores[..target].iter().filter(|&&s| s == t).count();
    1 + above + tied_before
}

/// Indices of the `n` best items under the same ordering as [`rank_of`].
pub fn top_n(scores: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

/// Recall@N and MRR@N over a set of cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cases: usize,
    pub recall: BTreeMap<usize, f64>,
    pub mrr: BTreeMap<usize, f64>,
}

impl EvalReport {
    /// `ranks[i]` is `None` when the recommender produced nothing for the
    /// case; it then counts as a miss at every cutoff.
    pub fn from_ranks(ranks: &[Option<usize>], cutoffs: &[usize]) -> Result<EvalReport> {
        if ranks.is_empty() {
            return Err(Error::EmptyPartition("evaluation"));
        }
        if cutoffs.is_empty() || cutoffs.contains(&0) {
            return Err(Error::InvalidArgument(format!("cutoffs must be positive, got {cutoffs:?}")));
        }
        let n = ranks.len() as f64;
        let mut recall = BTreeMap::new();
        let mut mrr = BTreeMap::new();
        for &k in cutoffs {
            let mut hits = 0usize;
            let mut rr = 0.0;
            for r in ranks.iter().flatten() {
                if *r <= k {
                    hits += 1;
                    rr += 1.0 / *r as f64;
                }
            }
            recall.insert(k, hits as f64 / n);
            mrr.insert(k, rr / n);
        }
        Ok(EvalReport {
            cases: ranks.len(),
            recall,
            mrr,
        })
    }

    pub fn recall_at(&self, k: usize) -> f64 {
        self.recall.get(&k).copied().unwrap_or(f64::NAN)
    }

    pub fn mrr_at(&self, k: usize) -> f64 {
        self.mrr.get(&k).copied().unwrap_or(f64::NAN)
    }
}
