//! Every model variant on a corpus where the next item can only be read off
//! recent neighbor sessions.
//!
//! ```bash
//! cargo run --release -p sessgraph --example ablation_variants
//! ```

use sessgraph::encoders::{ModelConfig, Variant};
use sessgraph::neighbors::RetrievalConfig;
use sessgraph::synthetic::{regime_corpus, RegimeSpec};
use sessgraph::trainer::{self, Recommender, TrainConfig};

fn main() -> sessgraph::Result<()> {
    let corpus = regime_corpus(RegimeSpec::default(), 0);
    println!("{} train / {} test sessions\n", corpus.train().len(), corpus.test().len());
    for variant in Variant::ALL {
        let cfg = TrainConfig {
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
            ..TrainConfig::default()
        };
        let out = trainer::train(&corpus, &cfg, None)?;
        let r = trainer::evaluate(&Recommender::Model(&out.model), &corpus, &cfg.retrieval, &[5, 10])?;
        println!("{:<18} R@5 {:.3}  MRR@5 {:.3}", variant.name(), r.recall_at(5), r.mrr_at(5));
    }
    let r = trainer::evaluate(&Recommender::Sknn, &corpus, &RetrievalConfig { k: 3, ..Default::default() }, &[5])?;
    println!("{:<18} R@5 {:.3}", "sknn", r.recall_at(5));
    Ok(())
}
