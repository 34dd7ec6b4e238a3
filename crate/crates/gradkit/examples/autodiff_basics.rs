//! Record a small computation, differentiate it, check it numerically and
//! take a few Adam steps on a least-squares fit.
//!
//! ```bash
//! cargo run -p gradkit --example autodiff_basics
//! ```

use gradkit::{adam_step, grad_check, init_params, AdamConfig, GroupRates, ParamGroup, ParamSpec, Tape, Tensor, DEFAULT_STEP};

fn main() -> gradkit::Result<()> {
    // y = sum(tanh(x W) ⊙ x W)
    let w = Tensor::from_rows(&[vec![0.3, -0.2], vec![0.8, 0.5], vec![-0.4, 0.1]]);
    let x = Tensor::row(vec![1.0, -2.0, 0.5]);
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone())?;
    let wv = tape.constant(w.clone())?;
    let h = tape.matmul(xv, wv)?;
    let t = tape.tanh(h)?;
    let p = tape.mul(t, h)?;
    let y = tape.sum(p)?;
    let grads = tape.backward(y)?;
    println!("y = {:.6}", tape.value(y).item());
    println!("dy/dx = {:?}", grads.wrt(xv).unwrap().data());

    let err = grad_check(
        |tape, xv| {
            let wv = tape.constant(w.clone())?;
            let h = tape.matmul(xv, wv)?;
            let t = tape.tanh(h)?;
            let p = tape.mul(t, h)?;
            tape.sum(p)
        },
        &x,
        DEFAULT_STEP,
    )?;
    println!("max relative error against central differences: {err:.2e}");

    // fit w so that [1, 2] · w ≈ 3 and [2, -1] · w ≈ 1
    let mut store = init_params(&[ParamSpec::new("w", &[2, 1], ParamGroup::IntraShared)], 0)?;
    let id = store.id("w")?;
    let inputs = Tensor::from_rows(&[vec![1.0, 2.0], vec![2.0, -1.0]]);
    let targets = Tensor::from_rows(&[vec![3.0], vec![1.0]]);
    for step in 0..=300 {
        let mut tape = Tape::new();
        let a = tape.constant(inputs.clone())?;
        let w = tape.param(&store, id)?;
        let b = tape.constant(targets.clone())?;
        let pred = tape.matmul(a, w)?;
        let diff = tape.sub(pred, b)?;
        let sq = tape.mul(diff, diff)?;
        let loss = tape.mean(sq)?;
        let value = tape.value(loss).item();
        let g = tape.backward(loss)?.into_params();
        if step % 100 == 0 {
            println!("step {step:3}: loss {value:.6}");
        }
        adam_step(&mut store, &g, &GroupRates::uniform(0.05), &AdamConfig::default())?;
    }
    println!("w = {:?} (exact solution [1, 1])", store.value(id).data());
    Ok(())
}
