//! Every differentiable op against central differences on random shapes.

use gradkit::{grad_check, Result, Tape, Tensor, Var};
use proptest::prelude::*;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    // magnitudes bounded away from zero: a coordinate whose true gradient
    // vanishes makes the 1e-8 relative-error floor meaningless
    let value = (0.1f64..2.0, any::<bool>()).prop_map(|(m, neg)| if neg { -m } else { m });
    prop::collection::vec(value, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d))
}

fn shaped() -> impl Strategy<Value = (usize, usize)> {
    (1usize..5, 1usize..5)
}

/// Contract the op output against fixed random weights so the scalar
/// depends on every output coordinate with a different sensitivity.
fn project(tape: &mut Tape<'_>, y: Var) -> Result<Var> {
    let t = tape.value(y).clone();
    let w: Vec<f64> = (0..t.len()).map(|i| ((i * 7919) % 13) as f64 / 6.0 - 1.04).collect();
    let w = tape.constant(Tensor::new(t.shape().to_vec(), w)?)?;
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn check(f: impl for<'t> Fn(&mut Tape<'t>, Var) -> Result<Var>, x: &Tensor) -> f64 {
    grad_check(|tape, v| { let y = f(tape, v)?; project(tape, y) }, x, H).unwrap()
}

fn within(err: f64) -> std::result::Result<(), TestCaseError> {
    prop_assert!(err < TOL, "relative error {}", err);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn unary_ops((r, c) in shaped(), seed in any::<u64>()) {
        let x = Tensor::matrix(r, c, (0..r * c).map(|i| ((seed.wrapping_add(i as u64 * 2654435761) % 1000) as f64 / 250.0) - 2.0 + 0.013).collect());
        within(check(|t, v| t.sigmoid(v), &x))?;
        within(check(|t, v| t.tanh(v), &x))?;
        within(check(|t, v| t.leaky_relu(v, 0.2), &x))?;
        within(check(|t, v| t.scale(v, -1.7), &x))?;
        within(check(|t, v| t.one_minus(v), &x))?;
        within(check(|t, v| t.transpose(v), &x))?;
        within(check(|t, v| t.softmax(v, 0), &x))?;
        within(check(|t, v| t.softmax(v, 1), &x))?;
        within(check(|t, v| t.sum_axis(v, 0), &x))?;
        within(check(|t, v| t.sum_axis(v, 1), &x))?;
        within(check(|t, v| t.mean_axis(v, 0), &x))?;
        within(check(|t, v| t.mean_axis(v, 1), &x))?;
        within(check(|t, v| t.mean(v), &x))?;
        within(check(|t, v| { let s = t.sigmoid(v)?; t.ln(s) }, &x))?;
        within(check(|t, v| t.clamp(v, -1.0, 1.0), &x))?;
    }

    #[test]
    fn matmul_both_sides((m, k) in shaped(), n in 1usize..5, a in matrix(4, 4), b in matrix(4, 4)) {
        let a = Tensor::matrix(m, k, a.data()[..m * k].to_vec());
        let b = Tensor::matrix(k, n, b.data()[..k * n].to_vec());
        let bc = b.clone();
        within(check(move |t, v| { let w = t.constant(bc.clone())?; t.matmul(v, w) }, &a))?;
        let ac = a.clone();
        within(check(move |t, v| { let w = t.constant(ac.clone())?; t.matmul(w, v) }, &b))?;
    }

    #[test]
    fn broadcasting_binary_ops((r, c) in shaped(), full in matrix(4, 4), row in matrix(1, 4), col in matrix(4, 1)) {
        let x = Tensor::matrix(r, c, full.data()[..r * c].to_vec());
        let rv = Tensor::matrix(1, c, row.data()[..c].to_vec());
        let cv = Tensor::matrix(r, 1, col.data()[..r].to_vec());
        for other in [x.clone(), rv.clone(), cv.clone()] {
            let o = other.clone();
            within(check(move |t, v| { let w = t.constant(o.clone())?; t.add(v, w) }, &x))?;
            let o = other.clone();
            within(check(move |t, v| { let w = t.constant(o.clone())?; t.sub(w, v) }, &x))?;
            let o = other.clone();
            within(check(move |t, v| { let w = t.constant(o.clone())?; t.mul(v, w) }, &x))?;
            // gradient flowing into the broadcast (smaller) operand
            let xc = x.clone();
            within(check(move |t, v| { let w = t.constant(xc.clone())?; t.mul(w, v) }, &other))?;
        }
        // column vector plus row vector -> full matrix
        let rc = rv.clone();
        within(check(move |t, v| { let w = t.constant(rc.clone())?; t.add(v, w) }, &cv))?;
    }

    #[test]
    fn structural_ops((r, c) in shaped(), x in matrix(4, 4), y in matrix(4, 4)) {
        let x = Tensor::matrix(r, c, x.data()[..r * c].to_vec());
        let other = Tensor::matrix(r, c, y.data()[..r * c].to_vec());
        let o = other.clone();
        within(check(move |t, v| { let w = t.constant(o.clone())?; t.concat(&[v, w, v], 1) }, &x))?;
        let o = other.clone();
        within(check(move |t, v| { let w = t.constant(o.clone())?; t.concat(&[w, v], 0) }, &x))?;
        let rows: Vec<usize> = (0..r + 2).map(|i| (i * 3) % r).collect();
        within(check(move |t, v| t.gather_rows(v, &rows), &x))?;
        within(check(move |t, v| t.slice_rows(v, r - 1, 1), &x))?;
    }

    #[test]
    fn masked_softmax(n in 1usize..6, x in matrix(6, 6), mask_bits in any::<u64>()) {
        let x = Tensor::matrix(n, n, x.data()[..n * n].to_vec());
        let allowed: Vec<Vec<usize>> = (0..n)
            .map(|i| (0..n).filter(|&j| j == i || (mask_bits >> (i * 6 + j)) & 1 == 1).collect())
            .collect();
        let a = allowed.clone();
        within(check(move |t, v| t.masked_softmax_rows(v, &a), &x))?;

        let mut tape = Tape::new();
        let v = tape.constant(x).unwrap();
        let y = tape.masked_softmax_rows(v, &allowed).unwrap();
        let y = tape.value(y);
        for (i, cols) in allowed.iter().enumerate() {
            let s: f64 = y.row_slice(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            for j in 0..n {
                prop_assert_eq!(y.get(i, j) > 0.0, cols.contains(&j));
            }
        }
    }

    #[test]
    fn softmax_is_a_distribution((r, c) in shaped(), x in matrix(4, 4)) {
        let x = Tensor::matrix(r, c, x.data()[..r * c].iter().map(|v| v * 20.0).collect());
        let mut tape = Tape::new();
        let v = tape.constant(x).unwrap();
        let y = tape.softmax(v, 1).unwrap();
        let y = tape.value(y);
        for i in 0..r {
            prop_assert!(y.row_slice(i).iter().all(|p| *p > 0.0));
            prop_assert!((y.row_slice(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
