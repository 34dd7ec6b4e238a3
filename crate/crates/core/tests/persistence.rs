use proptest::prelude::*;
use sessgraph::corpus::{load_corpus, save_corpus, SessionCorpus};
use sessgraph::encoders::{Model, ModelConfig, Variant};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn corpus_round_trip(
        rows in prop::collection::vec((0i64..1_000_000, prop::collection::vec(0u32..20, 1..8)), 1..40),
        split_at in 0usize..40,
    ) {
        let mut c = SessionCorpus::from_indexed(20, rows);
        c.split = split_at.min(c.sessions.len());
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&c, dir.path()).unwrap();
        let back = load_corpus(dir.path()).unwrap();
        prop_assert_eq!(&back, &c);
        save_corpus(&back, dir.path()).unwrap();
        prop_assert_eq!(load_corpus(dir.path()).unwrap(), c);
    }
}

#[test]
fn truncated_corpus_is_rejected() {
    let c = SessionCorpus::from_indexed(3, vec![(0, vec![0, 1, 2]), (1, vec![2, 1])]);
    let dir = tempfile::tempdir().unwrap();
    save_corpus(&c, dir.path()).unwrap();
    let path = dir.path().join(sessgraph::corpus::CORPUS_FILE);
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(load_corpus(dir.path()).is_err());
    let mut bad = bytes.clone();
    bad[0] = 99;
    std::fs::write(&path, &bad).unwrap();
    assert!(load_corpus(dir.path()).is_err());
}

#[test]
fn model_checkpoint_round_trip() {
    for variant in Variant::ALL {
        let cfg = ModelConfig {
            num_items: 9,
            d: 6,
            heads: 2,
            variant,
            ..ModelConfig::default()
        };
        let m = Model::new(cfg, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        m.save(&path).unwrap();
        let back = Model::load(&path).unwrap();
        assert_eq!(back.config(), m.config());
        let nb = vec![vec![1u32, 4, 5]];
        assert_eq!(back.predict(&[1, 2, 1], &nb).unwrap(), m.predict(&[1, 2, 1], &nb).unwrap());
    }
}
