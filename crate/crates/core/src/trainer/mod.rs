//! Mini-batch training with per-group learning-rate decay, evaluation and
//! the non-neural baselines.

pub mod baselines;
pub mod metrics;

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use gradkit::{adam_step, AdamConfig, GradError, GroupRates, ParamGrads};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{augment, ItemIdx, Session, SessionCorpus, TrainingExample};
use crate::encoders::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::neighbors::{InvertedIndex, NeighborCache, NeighborSet, RetrievalConfig};

pub use baselines::{sknn_scores, ItemKnn, Popularity};
pub use metrics::{rank_of, top_n, EvalReport};

/// Examples whose gradients are summed sequentially before the ordered
/// reduction across chunks. Fixed so results do not depend on the number
/// of worker threads.
const GRAD_CHUNK: usize = 8;

/// Training hyperparameters. `model.num_items` is overwritten with the
/// corpus vocabulary size by [`train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub retrieval: RetrievalConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    /// Epochs between decays of the embedding/intra/fusion group.
    pub intra_decay_every: usize,
    /// Epochs between decays of the attention/inter group.
    pub inter_decay_every: usize,
    /// Stop after this many epochs without a better validation Recall@10;
    /// 0 disables early stopping.
    pub patience: usize,
    /// Share of the most recent training sessions held out for validation.
    pub validation_fraction: f64,
    pub seed: u64,
    /// Worker threads for the per-batch fan-out; 0 uses the rayon default.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            retrieval: RetrievalConfig::default(),
            epochs: 30,
            batch_size: 128,
            lr: 0.001,
            lr_decay: 0.1,
            intra_decay_every: 3,
            inter_decay_every: 5,
            patience: 3,
            validation_fraction: 0.05,
            seed: 0,
            workers: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr {} / lr_decay {} out of range", self.lr, self.lr_decay));
        }
        if self.intra_decay_every == 0 || self.inter_decay_every == 0 {
            return bad("decay periods must be positive".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!("validation_fraction {} not in [0, 1)", self.validation_fraction));
        }
        if self.retrieval.k == 0 || self.retrieval.m == 0 || !(0.0..=1.0).contains(&self.retrieval.threshold) {
            return bad("retrieval needs k, m > 0 and threshold in [0, 1]".into());
        }
        let mut model = self.model.clone();
        model.num_items = model.num_items.max(1);
        model.validate()
    }
}

/// Learning rates in force during zero-based `epoch`.
pub fn learning_rates(cfg: &TrainConfig, epoch: usize) -> GroupRates {
    GroupRates {
        intra_shared: cfg.lr * cfg.lr_decay.powi((epoch / cfg.intra_decay_every) as i32),
        inter: cfg.lr * cfg.lr_decay.powi((epoch / cfg.inter_decay_every) as i32),
    }
}

/// One line of `log.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// One-based.
    pub epoch: usize,
    /// Mean per-example training loss.
    pub loss: f64,
    pub lr_intra_shared: f64,
    pub lr_inter: f64,
    pub wall_secs: f64,
    pub val_recall_at_10: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// The model after the best validation epoch, or after the last epoch
    /// when there is no validation set.
    pub model: Model,
    pub log: Vec<EpochLog>,
    /// One-based epoch whose weights `model` holds.
    pub best_epoch: usize,
}

/// Trains on the training partition; see [`train_with`].
pub fn train(corpus: &SessionCorpus, cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    train_with(corpus, cfg, out, |_| Control::Continue)
}

/// Trains on the training partition of `corpus`. When `out` is given, every
/// epoch writes `epoch_<n>.ckpt` and appends to `log.jsonl` there.
/// `on_epoch` sees each log entry and may stop training early.
pub fn train_with(
    corpus: &SessionCorpus,
    cfg: &TrainConfig,
    out: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochLog) -> Control,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train = corpus.train();
    if train.is_empty() {
        return Err(Error::EmptyPartition("train"));
    }
    let mut model_cfg = cfg.model.clone();
    model_cfg.num_items = corpus.num_items();
    let mut model = Model::new(model_cfg, cfg.seed)?;

    let (fit, val) = train.split_at(train.len() - validation_sessions(corpus, cfg).len());
    let examples: Vec<TrainingExample> = fit.iter().flat_map(augment).collect();
    if examples.is_empty() {
        return Err(Error::EmptyPartition("training examples"));
    }
    let val_examples: Vec<TrainingExample> = val.iter().flat_map(augment).collect();

    let uses_inter = model.config().variant.uses_inter();
    let index = InvertedIndex::from_sessions(fit);
    let cache = if uses_inter {
        NeighborCache::build(&index, train, &cfg.retrieval)
    } else {
        NeighborCache::default()
    };

    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        File::create(dir.join("log.jsonl"))?;
    }
    let pool = thread_pool(cfg.workers)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, gradkit::ParamStore)> = None;
    let adam = AdamConfig::default();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let rates = learning_rates(cfg, epoch);
        let batches = make_batches(&examples, cfg.batch_size, &mut rng);
        let mut total = 0.0;
        for batch in &batches {
            let (loss, mut grads) = pool
                .install(|| batch_gradients(&model, corpus, &cache, batch))
                .map_err(|e| diverged(epoch + 1, e))?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    reason: format!("batch loss {loss}"),
                });
            }
            total += loss;
            grads.scale(1.0 / batch.len() as f64);
            adam_step(model.store_mut(), &grads, &rates, &adam).map_err(|e| diverged(epoch + 1, e.into()))?;
        }

        let val_recall = if val_examples.is_empty() {
            None
        } else {
            let rec = Recommender::Model(&model);
            let report = pool.install(|| evaluate_examples(&rec, corpus, &index, &cfg.retrieval, &val_examples, &[10]))?;
            Some(report.recall_at(10))
        };
        let entry = EpochLog {
            epoch: epoch + 1,
            loss: total / examples.len() as f64,
            lr_intra_shared: rates.intra_shared,
            lr_inter: rates.inter,
            wall_secs: started.elapsed().as_secs_f64(),
            val_recall_at_10: val_recall,
        };
        log::info!("epoch {} loss {:.6} val R@10 {:?}", entry.epoch, entry.loss, entry.val_recall_at_10);
        if let Some(dir) = out {
            model.save(&dir.join(format!("epoch_{}.ckpt", epoch + 1)))?;
            let mut f = fs::OpenOptions::new().append(true).open(dir.join("log.jsonl"))?;
            writeln!(f, "{}", serde_json::to_string(&entry)?)?;
        }
        let control = on_epoch(&entry);
        log.push(entry);

        if let Some(r) = val_recall {
            if best.as_ref().is_none_or(|b| r > b.0) {
                best = Some((r, epoch + 1, model.store().clone()));
            } else if cfg.patience > 0 && epoch + 1 - best.as_ref().map_or(0, |b| b.1) >= cfg.patience {
                log::info!("no validation improvement for {} epochs, stopping", cfg.patience);
                break;
            }
        }
        if control == Control::Stop {
            break;
        }
    }

    let best_epoch = match best {
        Some((_, e, store)) => {
            *model.store_mut() = store;
            e
        }
        None => log.len(),
    };
    Ok(TrainOutcome { model, log, best_epoch })
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::Grad(g @ (GradError::NonFinite { .. } | GradError::NonFiniteGradient { .. })) => Error::Diverged {
            epoch,
            reason: g.to_string(),
        },
        other => other,
    }
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

/// Shuffles, groups by prefix length, cuts each group into batches and
/// shuffles the batch order.
fn make_batches<'a>(examples: &'a [TrainingExample], size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<&'a TrainingExample>> {
    let mut order: Vec<&TrainingExample> = examples.iter().collect();
    order.shuffle(rng);
    order.sort_by_key(|e| e.prefix.len());
    let mut batches: Vec<Vec<&TrainingExample>> = Vec::new();
    for group in order.chunk_by(|a, b| a.prefix.len() == b.prefix.len()) {
        batches.extend(group.chunks(size).map(<[_]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

fn neighbor_items<'c>(corpus: &'c SessionCorpus, set: Option<&NeighborSet>) -> Vec<&'c [ItemIdx]> {
    set.map_or_else(Vec::new, |s| s.iter().map(|n| corpus.session(n.session).items.as_slice()).collect())
}

/// Summed loss and gradients of a batch.
fn batch_gradients(model: &Model, corpus: &SessionCorpus, cache: &NeighborCache, batch: &[&TrainingExample]) -> Result<(f64, ParamGrads)> {
    let partials: Vec<Result<(f64, ParamGrads)>> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut loss = 0.0;
            let mut grads = ParamGrads::new();
            for ex in chunk {
                let nb = neighbor_items(corpus, cache.get(ex.session, ex.prefix.len()));
                let (l, g) = model.loss_and_grads(&ex.prefix, &nb, ex.label)?;
                loss += l;
                grads.accumulate(&g);
            }
            Ok((loss, grads))
        })
        .collect();
    let mut loss = 0.0;
    let mut grads = ParamGrads::new();
    for p in partials {
        let (l, g) = p?;
        loss += l;
        grads.accumulate(&g);
    }
    Ok((loss, grads))
}

/// Anything that can rank items for a prefix.
#[derive(Debug)]
pub enum Recommender<'a> {
    Model(&'a Model),
    Pop(Popularity),
    Sknn,
    ItemKnn(ItemKnn),
}

impl Recommender<'_> {
    fn needs_neighbors(&self) -> bool {
        match self {
            Recommender::Model(m) => m.config().variant.uses_inter(),
            Recommender::Sknn => true,
            Recommender::Pop(_) | Recommender::ItemKnn(_) => false,
        }
    }

    /// Item scores for `prefix`, or `None` when no recommendation is made.
    pub fn scores(&self, corpus: &SessionCorpus, prefix: &[ItemIdx], neighbors: &NeighborSet) -> Result<Option<Vec<f64>>> {
        Ok(match self {
            Recommender::Model(m) => Some(m.scores(prefix, &neighbor_items(corpus, Some(neighbors)))?),
            Recommender::Pop(p) => Some(p.scores().to_vec()),
            Recommender::Sknn => sknn_scores(neighbors, corpus),
            Recommender::ItemKnn(k) => k.scores(prefix),
        })
    }
}

/// Neighbors of `prefix` among indexed sessions starting before `now`;
/// empty when `rec` does not use them.
fn retrieve(rec: &Recommender, index: &InvertedIndex, prefix: &[ItemIdx], now: i64, cfg: &RetrievalConfig) -> NeighborSet {
    if rec.needs_neighbors() {
        index.neighbors(prefix, now, cfg)
    } else {
        NeighborSet::default()
    }
}

/// Recall@N and MRR@N over every augmented prefix of the test partition,
/// with neighbors retrieved from the training partition.
pub fn evaluate(rec: &Recommender, corpus: &SessionCorpus, retrieval: &RetrievalConfig, cutoffs: &[usize]) -> Result<EvalReport> {
    let index = InvertedIndex::build(corpus);
    let examples = corpus.test_examples();
    if examples.is_empty() {
        return Err(Error::EmptyPartition("test"));
    }
    evaluate_examples(rec, corpus, &index, retrieval, &examples, cutoffs)
}

/// Like [`evaluate`] over an explicit example list; each example retrieves
/// from `index` with its session's start time as `now`.
pub fn evaluate_examples(
    rec: &Recommender,
    corpus: &SessionCorpus,
    index: &InvertedIndex,
    retrieval: &RetrievalConfig,
    examples: &[TrainingExample],
    cutoffs: &[usize],
) -> Result<EvalReport> {
    let ranks: Vec<Option<usize>> = examples
        .par_iter()
        .map(|ex| {
            let now = corpus.session(ex.session).start_time;
            let nb = retrieve(rec, index, &ex.prefix, now, retrieval);
            let scores = rec.scores(corpus, &ex.prefix, &nb)?;
            Ok(scores.map(|s| rank_of(&s, ex.label as usize)))
        })
        .collect::<Result<_>>()?;
    EvalReport::from_ranks(&ranks, cutoffs)
}

/// Top `n` items for a live session, retrieving from every indexed session.
pub fn recommend(
    rec: &Recommender,
    corpus: &SessionCorpus,
    index: &InvertedIndex,
    retrieval: &RetrievalConfig,
    prefix: &[ItemIdx],
    n: usize,
) -> Result<Vec<(ItemIdx, f64)>> {
    if prefix.is_empty() {
        return Err(Error::InvalidArgument("empty session".into()));
    }
    let nb = retrieve(rec, index, prefix, i64::MAX, retrieval);
    Ok(match rec.scores(corpus, prefix, &nb)? {
        Some(s) => top_n(&s, n).into_iter().map(|i| (i as ItemIdx, s[i])).collect(),
        None => Vec::new(),
    })
}

/// Sessions used for validation by [`train`] under `cfg`.
pub fn validation_sessions<'c>(corpus: &'c SessionCorpus, cfg: &TrainConfig) -> &'c [Session] {
    let train = corpus.train();
    if cfg.validation_fraction <= 0.0 || train.is_empty() {
        return &train[train.len()..];
    }
    let n = ((cfg.validation_fraction * train.len() as f64).ceil() as usize).min(train.len() - 1);
    &train[train.len() - n..]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_schedule() {
        let cfg = TrainConfig::default();
        let r = |e| learning_rates(&cfg, e);
        assert_eq!(r(0), GroupRates::uniform(0.001));
        assert_eq!(r(2), GroupRates::uniform(0.001));
        assert_eq!(r(3).intra_shared, 0.001 * 0.1);
        assert_eq!(r(3).inter, 0.001);
        assert_eq!(r(4).inter, 0.001);
        assert_eq!(r(5).inter, 0.001 * 0.1);
        assert_eq!(r(6).intra_shared, 0.001 * 0.1f64.powi(2));
        for e in 0..20 {
            assert_eq!(r(e).intra_shared, 0.001 * 0.1f64.powi((e / 3) as i32));
            assert_eq!(r(e).inter, 0.001 * 0.1f64.powi((e / 5) as i32));
        }
    }

    #[test]
    fn batches_are_length_uniform_and_complete() {
        let c = SessionCorpus::from_indexed(5, (0..40).map(|i| (i, (0..(2 + i as u32 % 4)).collect())).collect());
        let ex = c.training_examples();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = make_batches(&ex, 7, &mut rng);
        assert!(b.iter().all(|b| b.len() <= 7 && b.iter().all(|e| e.prefix.len() == b[0].prefix.len())));
        assert_eq!(b.iter().map(Vec::len).sum::<usize>(), ex.len());
    }

    #[test]
    fn config_rejects_nonsense() {
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
        let json = r#"{"epochs": 2, "model": {"d": 16, "variant": "intra_only"}}"#;
        let cfg: TrainConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.model.d, 16);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 2}"#).is_err());
    }
}
