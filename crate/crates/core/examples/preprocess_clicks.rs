//! Turn a raw click log into a split, filtered session corpus.
//!
//! ```bash
//! cargo run --release -p sessgraph --example preprocess_clicks [clicks.dat]
//! ```

use std::fs::File;
use std::io::BufReader;

use sessgraph::corpus::{filter_corpus, ingest_events, read_events, split_by_time, take_recent_fraction, ColumnMap, Fraction};

fn main() -> sessgraph::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/yoochoose-clicks-200.dat").into());
    // sessionId,timestamp,itemId,category with ISO-8601 timestamps
    let rows = read_events(BufReader::new(File::open(&path)?), &ColumnMap::default())?;
    let raw = ingest_events(rows)?;
    println!("raw: {} sessions, {} items", raw.sessions.len(), raw.num_items());

    let filtered = filter_corpus(&raw, 2, 5)?;
    println!("after dropping short sessions and rare items: {} sessions, {} items", filtered.sessions.len(), filtered.num_items());

    let corpus = split_by_time(&filtered, 86_400)?;
    println!("train {} / test {} sessions (last day held out)", corpus.train().len(), corpus.test().len());

    let half = take_recent_fraction(&corpus, Fraction::new(1, 2)?);
    println!("most recent 1/2 of training: {} sessions", half.train().len());

    let s = &corpus.train()[0];
    let keys: Vec<&str> = s.items.iter().map(|&i| corpus.vocab.key(i)).collect();
    println!("\nsession {} {:?} expands to:", s.id, keys);
    for ex in sessgraph::corpus::augment(s) {
        let prefix: Vec<&str> = ex.prefix.iter().map(|&i| corpus.vocab.key(i)).collect();
        println!("  {prefix:?} -> {}", corpus.vocab.key(ex.label));
    }
    println!("\n{} training and {} test examples", corpus.training_examples().len(), corpus.test_examples().len());
    Ok(())
}
