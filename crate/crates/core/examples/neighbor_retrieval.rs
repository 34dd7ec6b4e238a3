//! Find similar past sessions through the inverted index and score items
//! with session kNN.
//!
//! ```bash
//! cargo run --release -p sessgraph --example neighbor_retrieval
//! ```

use sessgraph::corpus::SessionCorpus;
use sessgraph::neighbors::{InvertedIndex, RetrievalConfig};
use sessgraph::trainer::{sknn_scores, top_n};

fn main() {
    let corpus = SessionCorpus::from_indexed(
        6,
        vec![
            (10, vec![0, 1, 2]),
            (20, vec![1, 2, 3]),
            (30, vec![0, 1]),
            (40, vec![4, 5]),
            (50, vec![1, 2, 5]),
            (60, vec![0, 1, 2, 3]),
        ],
    );
    let index = InvertedIndex::build(&corpus);
    println!("postings of item 1 (newest first): {:?}", index.postings(1));

    let cfg = RetrievalConfig {
        k: 3,
        ..RetrievalConfig::default()
    };
    let prefix = [1, 2];
    // only sessions that started before `now` are candidates
    for now in [35, i64::MAX] {
        let nb = index.neighbors(&prefix, now, &cfg);
        println!("\nneighbors of {prefix:?} before t={now}:");
        for n in nb.iter() {
            println!("  session {} {:?}  sim {:.3}", n.session, corpus.session(n.session).items, n.similarity);
        }
        if let Some(scores) = sknn_scores(&nb, &corpus) {
            println!("  SKNN top 3: {:?}", top_n(&scores, 3));
        }
    }
}
