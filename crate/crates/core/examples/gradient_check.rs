//! Compare backpropagated gradients of the full model with central finite
//! differences, tensor by tensor.
//!
//! ```bash
//! cargo run --release -p sessgraph --example gradient_check
//! ```

use gradkit::{grad_check_store, GradError, DEFAULT_STEP};
use sessgraph::encoders::{Model, ModelConfig};

fn main() -> sessgraph::Result<()> {
    let cfg = ModelConfig {
        num_items: 6,
        d: 8,
        init_std: 0.5,
        ..ModelConfig::default()
    };
    let prefix = [0, 1, 2];
    let neighbors = vec![vec![1, 3, 2, 4]];
    let model = Model::new(cfg.clone(), 0)?;
    let (loss, grads) = model.loss_and_grads(&prefix, &neighbors, 5)?;
    println!("loss {loss:.6}, {} parameter tensors", model.store().len());
    let report = grad_check_store(model.store(), &grads, DEFAULT_STEP, |s| {
        Model::from_store(cfg.clone(), s.clone())
            .and_then(|m| m.loss(&prefix, &neighbors, 5))
            .map_err(|e| GradError::InvalidArgument {
                op: "loss",
                detail: e.to_string(),
            })
    })?;
    for (id, err) in &report {
        println!("{:<24} {err:.2e}", model.store().get(*id).name);
    }
    let worst = report.iter().map(|r| r.1).fold(0.0, f64::max);
    println!("max relative error {worst:.2e}");
    Ok(())
}
