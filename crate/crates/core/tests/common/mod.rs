//! Oracles and experiment drivers shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::time::Instant;

use gradkit::Tape;
use num_rational::Ratio;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sessgraph::corpus::{ItemIdx, Session, SessionCorpus, SessionId};
use sessgraph::encoders::{Model, ModelConfig, Variant};
use sessgraph::graphs::build_inter_graph;
use sessgraph::neighbors::{LengthNorm, RetrievalConfig};
use sessgraph::synthetic::{chain_corpus, regime_corpus, RegimeSpec};
use sessgraph::trainer::{self, evaluate_examples, EvalReport, Recommender, TrainConfig};

// ---------------------------------------------------------------- retrieval

/// Random corpus with repeated start times and repeated items.
pub fn random_corpus(rng: &mut ChaCha8Rng, max_sessions: usize) -> SessionCorpus {
    let n_items = rng.random_range(3..60);
    let n = rng.random_range(1..=max_sessions);
    let horizon = rng.random_range(1..(n as i64 + 2));
    let rows = (0..n)
        .map(|_| {
            let len = rng.random_range(1..10);
            let items = (0..len).map(|_| rng.random_range(0..n_items) as ItemIdx).collect();
            (rng.random_range(0..horizon), items)
        })
        .collect();
    SessionCorpus::from_indexed(n_items, rows)
}

pub fn random_retrieval(rng: &mut ChaCha8Rng) -> RetrievalConfig {
    RetrievalConfig {
        k: *[1, 3, 10, 120, 500].choose(rng).unwrap(),
        threshold: *[0.0, 0.2, 0.5, 0.8].choose(rng).unwrap(),
        m: *[1, 5, 50, 1000].choose(rng).unwrap(),
        length_norm: if rng.random_bool(0.5) { LengthNorm::Distinct } else { LengthNorm::Raw },
    }
}

/// Full scan: every session, no index.
pub fn brute_neighbors(sessions: &[Session], prefix: &[ItemIdx], now: i64, cfg: &RetrievalConfig) -> Vec<(SessionId, f64)> {
    let q: BTreeSet<ItemIdx> = prefix.iter().copied().collect();
    let mut cands: Vec<&Session> = sessions
        .iter()
        .filter(|s| s.start_time < now && s.items.iter().any(|i| q.contains(i)))
        .collect();
    cands.sort_by(|a, b| (b.start_time, b.id).cmp(&(a.start_time, a.id)));
    cands.truncate(cfg.m);
    let mut scored: Vec<(f64, &Session)> = cands
        .into_iter()
        .map(|s| {
            let set: BTreeSet<ItemIdx> = s.items.iter().copied().collect();
            let common = q.intersection(&set).count();
            let (lq, ls) = match cfg.length_norm {
                LengthNorm::Distinct => (q.len(), set.len()),
                LengthNorm::Raw => (prefix.len(), s.items.len()),
            };
            (common as f64 / ((lq * ls) as f64).sqrt(), s)
        })
        .filter(|(sim, _)| *sim >= cfg.threshold)
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then((b.1.start_time, b.1.id).cmp(&(a.1.start_time, a.1.id))));
    scored.truncate(cfg.k);
    scored.into_iter().map(|(sim, s)| (s.id, sim)).collect()
}

/// `score(i) = Σ_j sim(j) · [i ∈ j]`, summed in neighbor order.
pub fn brute_sknn(corpus: &SessionCorpus, neighbors: &[(SessionId, f64)]) -> Option<Vec<f64>> {
    if neighbors.is_empty() {
        return None;
    }
    Some(
        (0..corpus.num_items() as ItemIdx)
            .map(|i| {
                neighbors
                    .iter()
                    .filter(|(s, _)| corpus.session(*s).items.contains(&i))
                    .fold(0.0, |acc, (_, sim)| acc + sim)
            })
            .collect(),
    )
}

/// Checks index retrieval and SKNN against the full scan on random queries.
/// Returns how many queries had a non-empty neighbor set.
pub fn retrieval_matches_brute_force(corpus: &SessionCorpus, cfg: &RetrievalConfig, rng: &mut ChaCha8Rng, queries: usize) -> Result<usize, String> {
    let mut hits = 0;
    let index = sessgraph::neighbors::InvertedIndex::build(corpus);
    let max_t = corpus.sessions.iter().map(|s| s.start_time).max().unwrap_or(0);
    for _ in 0..queries {
        let prefix: Vec<ItemIdx> = if rng.random_bool(0.5) {
            let s = &corpus.sessions[rng.random_range(0..corpus.sessions.len())].items;
            s[..rng.random_range(1..=s.len())].to_vec()
        } else {
            let len = rng.random_range(1..8);
            (0..len).map(|_| rng.random_range(0..corpus.num_items()) as ItemIdx).collect()
        };
        let now = if rng.random_bool(0.2) { i64::MAX } else { rng.random_range(0..=max_t + 1) };
        let got = index.neighbors(&prefix, now, cfg);
        let got: Vec<(SessionId, f64)> = got.iter().map(|n| (n.session, n.similarity)).collect();
        let want = brute_neighbors(corpus.train(), &prefix, now, cfg);
        if got != want {
            return Err(format!("neighbors of {prefix:?} at {now} under {cfg:?}: {got:?} != {want:?}"));
        }
        let set = sessgraph::neighbors::NeighborSet {
            entries: got
                .iter()
                .map(|&(session, similarity)| sessgraph::neighbors::Neighbor { session, similarity })
                .collect(),
        };
        let s = trainer::sknn_scores(&set, corpus);
        if s != brute_sknn(corpus, &want) {
            return Err(format!("sknn scores of {prefix:?} differ"));
        }
        hits += usize::from(!want.is_empty());
    }
    Ok(hits)
}

// ---------------------------------------------------------------- graphs

/// Hand count for `[v1,v3,v2,v3,v4,v1]`, nodes ordered (v1, v3, v2, v4):
/// edges v1→v3, v3→v2, v2→v3, v3→v4, v4→v1.
pub fn fig3_expected() -> (Vec<Vec<Ratio<u32>>>, Vec<Vec<Ratio<u32>>>) {
    let z = Ratio::from_integer(0);
    let one = Ratio::from_integer(1);
    let half = Ratio::new(1, 2);
    let a_out = vec![
        vec![z, one, z, z],
        vec![z, z, half, half],
        vec![z, one, z, z],
        vec![one, z, z, z],
    ];
    let a_in = vec![
        vec![z, z, z, one],
        vec![half, z, half, z],
        vec![z, one, z, z],
        vec![z, one, z, z],
    ];
    (a_out, a_in)
}

pub fn fig3_adjacency_matches() -> Result<(), String> {
    let g = sessgraph::graphs::build_intra_graph(&[1, 3, 2, 3, 4, 1]);
    if g.node_items != [1, 3, 2, 4] {
        return Err(format!("node order {:?}", g.node_items));
    }
    let (want_out, want_in) = fig3_expected();
    for i in 0..4 {
        for j in 0..4 {
            let (n, d) = g.out_fraction(i, j);
            let got = if d == 0 { Ratio::from_integer(0) } else { Ratio::new(n, d) };
            if got != want_out[i][j] {
                return Err(format!("A_out[{i}][{j}] = {got}, expected {}", want_out[i][j]));
            }
            let (n, d) = g.in_fraction(i, j);
            let got = if d == 0 { Ratio::from_integer(0) } else { Ratio::new(n, d) };
            if got != want_in[i][j] {
                return Err(format!("A_in[{i}][{j}] = {got}, expected {}", want_in[i][j]));
            }
            let f = |r: Ratio<u32>| *r.numer() as f64 / *r.denom() as f64;
            if g.a_out.get(i, j) != f(want_out[i][j]) || g.a_in.get(i, j) != f(want_in[i][j]) {
                return Err(format!("float matrices disagree at ({i}, {j})"));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- attention

/// One random model, session and neighbor set: attention rows are
/// distributions over the inter-graph adjacency, and the fused session
/// vector lies between its two inputs.
pub fn attention_invariants(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let variants = [Variant::Full, Variant::InterOnly, Variant::AvgPool, Variant::MeanGat, Variant::MeanReadout, Variant::MeanGatReadout];
    let num_items = rng.random_range(2..20);
    let heads = rng.random_range(1..5);
    let cfg = ModelConfig {
        num_items,
        d: rng.random_range(1..7),
        heads,
        gat_layers: rng.random_range(1..4),
        variant: *variants.choose(&mut rng).unwrap(),
        init_std: *[0.1, 1.0, 5.0].choose(&mut rng).unwrap(),
        ..ModelConfig::default()
    };
    let model = Model::new(cfg.clone(), rng.random()).map_err(|e| e.to_string())?;
    let draw = |rng: &mut ChaCha8Rng, lo: usize| -> Vec<ItemIdx> {
        (0..rng.random_range(lo..7)).map(|_| rng.random_range(0..num_items) as ItemIdx).collect()
    };
    let prefix = draw(&mut rng, 1);
    let neighbors: Vec<Vec<ItemIdx>> = (0..rng.random_range(0..5)).map(|_| draw(&mut rng, 1)).collect();
    let mut tape = Tape::new();
    let f = model.forward(&mut tape, &prefix, &neighbors).map_err(|e| e.to_string())?;
    let g = build_inter_graph(&prefix, &neighbors);
    for (l, layer) in f.attention.iter().enumerate() {
        for (k, &a) in layer.iter().enumerate() {
            let a = tape.value(a);
            for (i, adj) in g.adjacency.iter().enumerate() {
                let row = a.row_slice(i);
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(format!("seed {seed} layer {l} head {k} row {i} sums to {sum}"));
                }
                if let Some(j) = (0..row.len()).find(|j| !adj.contains(j) && row[*j] != 0.0) {
                    return Err(format!("seed {seed}: weight on non-edge ({i}, {j})"));
                }
                if row.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                    return Err(format!("seed {seed}: weight outside [0, 1]"));
                }
            }
        }
    }
    if let (Some(a), Some(b)) = (f.s_intra, f.s_inter) {
        let (a, b, h) = (tape.value(a).data(), tape.value(b).data(), tape.value(f.s_h).data());
        for c in 0..h.len() {
            // one rounding of the convex combination
            let slack = 4.0 * f64::EPSILON * a[c].abs().max(b[c].abs());
            if h[c] < a[c].min(b[c]) - slack || h[c] > a[c].max(b[c]) + slack {
                return Err(format!("seed {seed}: s_h[{c}] = {} outside [{}, {}]", h[c], a[c].min(b[c]), a[c].max(b[c])));
            }
        }
    } else if cfg.variant.uses_fusion() {
        return Err(format!("seed {seed}: fused variant without both session vectors"));
    }
    Ok(())
}

// ---------------------------------------------------------------- reports

/// Structural checks on a serialized [`EvalReport`] with cutoffs 5 and 10.
pub fn validate_report_json(v: &serde_json::Value) -> Result<(), String> {
    let obj = v.as_object().ok_or("report is not an object")?;
    let keys: BTreeSet<&str> = obj.keys().map(String::as_str).collect();
    if keys != BTreeSet::from(["cases", "recall", "mrr"]) {
        return Err(format!("unexpected keys {keys:?}"));
    }
    if !v["cases"].as_u64().is_some_and(|c| c > 0) {
        return Err("cases must be a positive integer".into());
    }
    let get = |m: &str, k: &str| v[m][k].as_f64().ok_or(format!("{m}@{k} missing"));
    for k in ["5", "10"] {
        let (r, m) = (get("recall", k)?, get("mrr", k)?);
        if !(0.0..=1.0).contains(&r) || !(0.0..=1.0).contains(&m) || m > r {
            return Err(format!("recall@{k} = {r}, mrr@{k} = {m}"));
        }
    }
    if get("recall", "5")? > get("recall", "10")? {
        return Err("recall@5 > recall@10".into());
    }
    Ok(())
}

// ---------------------------------------------------------------- experiments

pub struct Overfit {
    pub recall_at_5: f64,
    pub losses: Vec<f64>,
    pub secs: f64,
}

/// Full model, d = 32, k = 10, on 200 chain sessions over 30 items;
/// Recall@5 on the training prefixes after 30 epochs.
pub fn chain_overfit(seed: u64) -> Overfit {
    let started = Instant::now();
    let corpus = chain_corpus(200, 30, 3, 2, 8, seed);
    let cfg = TrainConfig {
        model: ModelConfig {
            d: 32,
            variant: Variant::Full,
            ..ModelConfig::default()
        },
        retrieval: RetrievalConfig {
            k: 10,
            ..RetrievalConfig::default()
        },
        epochs: 30,
        batch_size: 16,
        validation_fraction: 0.0,
        workers: 1,
        seed,
        ..TrainConfig::default()
    };
    let out = trainer::train(&corpus, &cfg, None).unwrap();
    let index = sessgraph::neighbors::InvertedIndex::build(&corpus);
    let report = evaluate_examples(&Recommender::Model(&out.model), &corpus, &index, &cfg.retrieval, &corpus.training_examples(), &[5]).unwrap();
    Overfit {
        recall_at_5: report.recall_at(5),
        losses: out.log.iter().map(|e| e.loss).collect(),
        secs: started.elapsed().as_secs_f64(),
    }
}

pub fn regime_config(variant: Variant, seed: u64) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            d: 16,
            variant,
            ..ModelConfig::default()
        },
        retrieval: RetrievalConfig {
            k: 3,
            ..RetrievalConfig::default()
        },
        epochs: 10,
        batch_size: 16,
        lr: 0.01,
        validation_fraction: 0.0,
        workers: 1,
        seed,
        ..TrainConfig::default()
    }
}

/// Test Recall@5 of `variant` on the regime corpus drawn with `seed`.
pub fn regime_recall(variant: Variant, seed: u64) -> EvalReport {
    let corpus = regime_corpus(RegimeSpec::default(), seed);
    let cfg = regime_config(variant, seed);
    let out = trainer::train(&corpus, &cfg, None).unwrap();
    trainer::evaluate(&Recommender::Model(&out.model), &corpus, &cfg.retrieval, &[5, 10]).unwrap()
}
