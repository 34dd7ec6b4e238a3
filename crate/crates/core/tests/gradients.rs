use gradkit::{grad_check_store, ParamStore, DEFAULT_STEP};
use sessgraph::encoders::{LossKind, Model, ModelConfig, Variant};

const PREFIX: [u32; 3] = [0, 1, 2];
const TARGET: u32 = 5;

fn neighbor() -> Vec<Vec<u32>> {
    vec![vec![1, 3, 2, 4]]
}

fn small(variant: Variant) -> ModelConfig {
    ModelConfig {
        num_items: 6,
        d: 8,
        variant,
        init_std: 0.5,
        ..ModelConfig::default()
    }
}

fn loss_at(cfg: &ModelConfig, store: &ParamStore) -> f64 {
    Model::from_store(cfg.clone(), store.clone()).unwrap().loss(&PREFIX, &neighbor(), TARGET).unwrap()
}

/// Strict check: relative error with the default `1e-8` floor.
fn strict(cfg: ModelConfig, seed: u64) -> Vec<(String, f64)> {
    let model = Model::new(cfg.clone(), seed).unwrap();
    let (_, grads) = model.loss_and_grads(&PREFIX, &neighbor(), TARGET).unwrap();
    let report = grad_check_store(model.store(), &grads, DEFAULT_STEP, |s| Ok(loss_at(&cfg, s))).unwrap();
    report.into_iter().map(|(id, e)| (model.store().get(id).name.clone(), e)).collect()
}

/// Roundoff-aware check. Returns the worst ratio of `|a - fd|` to the
/// allowance `1e-4 * max(|a|, |fd|) + 8 |L| eps / h`; the second term is the
/// rounding error of a central difference of a loss of size `|L|`. It only
/// matters where the true gradient vanishes, e.g. the source half of an
/// attention vector when a whole score row shares one leaky-ReLU branch.
fn floored(cfg: &ModelConfig, seed: u64) -> (String, f64) {
    let model = Model::new(cfg.clone(), seed).unwrap();
    let (loss, grads) = model.loss_and_grads(&PREFIX, &neighbor(), TARGET).unwrap();
    let noise = 8.0 * loss.abs() * f64::EPSILON / DEFAULT_STEP;
    let mut worst = (String::new(), 0.0);
    let mut probe = model.store().clone();
    for id in model.store().ids() {
        let g = grads.get(id).expect("every parameter is reachable");
        for i in 0..g.len() {
            let x = probe.value(id).data()[i];
            probe.value_mut(id).data_mut()[i] = x + DEFAULT_STEP;
            let up = loss_at(cfg, &probe);
            probe.value_mut(id).data_mut()[i] = x - DEFAULT_STEP;
            let down = loss_at(cfg, &probe);
            probe.value_mut(id).data_mut()[i] = x;
            let fd = (up - down) / (2.0 * DEFAULT_STEP);
            let a = g.data()[i];
            let ratio = (a - fd).abs() / (1e-4 * a.abs().max(fd.abs()) + noise);
            if ratio > worst.1 {
                worst = (format!("{}[{i}] a={a:e} fd={fd:e}", model.store().get(id).name), ratio);
            }
        }
    }
    worst
}

#[test]
fn full_model_strict_at_reference_point() {
    for (name, err) in strict(small(Variant::Full), 0) {
        assert!(err < 1e-4, "{name} relative error {err:e}");
    }
}

#[test]
fn full_model_many_points() {
    for seed in 0..6 {
        for std in [0.1, 0.5] {
            let cfg = ModelConfig {
                init_std: std,
                ..small(Variant::Full)
            };
            let (name, err) = floored(&cfg, seed);
            assert!(err < 1.0, "seed {seed} std {std}: {name} {err:e}");
        }
    }
}

#[test]
fn categorical_loss() {
    let cfg = ModelConfig {
        loss: LossKind::Categorical,
        ..small(Variant::Full)
    };
    let (name, err) = floored(&cfg, 3);
    assert!(err < 1.0, "{name} {err:e}");
}

#[test]
fn ablation_variants() {
    for v in Variant::ALL {
        let cfg = ModelConfig { heads: 2, ..small(v) };
        let (name, err) = floored(&cfg, 1);
        assert!(err < 1.0, "{v}: {name} {err:e}");
    }
}

#[test]
fn options() {
    let cfg = ModelConfig {
        separate_embeddings: true,
        share_readout: true,
        ggnn_steps: 2,
        heads: 2,
        ..small(Variant::Full)
    };
    let (name, err) = floored(&cfg, 2);
    assert!(err < 1.0, "{name} {err:e}");
}
