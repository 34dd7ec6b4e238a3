//! Train on the bundled click log and compare with the non-neural
//! baselines.
//!
//! ```bash
//! cargo run --release -p sessgraph --example train_and_evaluate
//! ```

use std::fs::File;
use std::io::BufReader;

use sessgraph::corpus::{filter_corpus, ingest_events, read_events, split_by_time, ColumnMap};
use sessgraph::encoders::ModelConfig;
use sessgraph::neighbors::RetrievalConfig;
use sessgraph::trainer::{self, Control, ItemKnn, Popularity, Recommender, TrainConfig};

fn main() -> sessgraph::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/yoochoose-clicks-200.dat");
    let raw = ingest_events(read_events(BufReader::new(File::open(path)?), &ColumnMap::default())?)?;
    let corpus = split_by_time(&filter_corpus(&raw, 2, 5)?, 86_400)?;

    let cfg = TrainConfig {
        model: ModelConfig {
            d: 32,
            ..ModelConfig::default()
        },
        retrieval: RetrievalConfig {
            k: 20,
            ..RetrievalConfig::default()
        },
        epochs: 10,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let out = trainer::train_with(&corpus, &cfg, None, |e| {
        println!("epoch {:2}  loss {:.4}  val R@10 {:.3}  ({:.1}s)", e.epoch, e.loss, e.val_recall_at_10.unwrap_or(f64::NAN), e.wall_secs);
        Control::Continue
    })?;
    println!("keeping epoch {}", out.best_epoch);

    let at = [5, 10];
    let rows = [
        ("model", Recommender::Model(&out.model)),
        ("pop", Recommender::Pop(Popularity::fit(&corpus))),
        ("sknn", Recommender::Sknn),
        ("item-knn", Recommender::ItemKnn(ItemKnn::fit(&corpus))),
    ];
    println!("\n{:<10} {:>7} {:>7} {:>7} {:>7}", "", "R@5", "R@10", "MRR@5", "MRR@10");
    for (name, rec) in &rows {
        let r = trainer::evaluate(rec, &corpus, &cfg.retrieval, &at)?;
        println!("{name:<10} {:7.3} {:7.3} {:7.3} {:7.3}", r.recall_at(5), r.recall_at(10), r.mrr_at(5), r.mrr_at(10));
    }
    Ok(())
}
