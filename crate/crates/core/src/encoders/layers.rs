//! Differentiable building blocks, recorded on a [`Tape`].
//!
//! Row-vector convention: node features are `n x d` matrices, a session
//! vector is `1 x d`, and every weight is stored input-major so a linear map
//! is `x · W` (`W` is `d_in x d_out`).

use gradkit::{Result, Tape, Tensor, Var};

use crate::graphs::{InterGraph, IntraGraph};

/// Gated graph network weights.
#[derive(Debug, Clone, Copy)]
pub struct GgnnVars {
    pub w_out: Var,
    pub b_out: Var,
    pub w_in: Var,
    pub b_in: Var,
    /// `2d x d` gate input weights and `d x d` recurrent weights.
    pub w_z: Var,
    pub u_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub w_o: Var,
    pub u_o: Var,
}

/// `T` rounds of message passing followed by the GRU-style update.
///
/// `h0` holds one row per node of `g`.
pub fn ggnn_encode(tape: &mut Tape<'_>, g: &IntraGraph, h0: Var, p: &GgnnVars, steps: usize) -> Result<Var> {
    let a_out = tape.constant(g.a_out.clone())?;
    let a_in = tape.constant(g.a_in.clone())?;
    let mut h = h0;
    for _ in 0..steps {
        let po = tape.matmul(h, p.w_out)?;
        let mo = tape.matmul(a_out, po)?;
        let ao = tape.add(mo, p.b_out)?;
        let pi = tape.matmul(h, p.w_in)?;
        let mi = tape.matmul(a_in, pi)?;
        let ai = tape.add(mi, p.b_in)?;
        let a = tape.concat(&[ao, ai], 1)?;

        let z = gate(tape, a, p.w_z, h, p.u_z)?;
        let z = tape.sigmoid(z)?;
        let r = gate(tape, a, p.w_r, h, p.u_r)?;
        let r = tape.sigmoid(r)?;
        let rh = tape.mul(r, h)?;
        let cand = gate(tape, a, p.w_o, rh, p.u_o)?;
        let cand = tape.tanh(cand)?;

        let keep = tape.one_minus(z)?;
        let old = tape.mul(keep, h)?;
        let new = tape.mul(z, cand)?;
        h = tape.add(old, new)?;
    }
    Ok(h)
}

fn gate(tape: &mut Tape<'_>, a: Var, w: Var, h: Var, u: Var) -> Result<Var> {
    let x = tape.matmul(a, w)?;
    let y = tape.matmul(h, u)?;
    tape.add(x, y)
}

/// Soft-attention readout weights. `q` is `d x 1`, `w3` is `2d x d`.
#[derive(Debug, Clone, Copy)]
pub struct ReadoutVars {
    pub q: Var,
    pub w1: Var,
    pub w2: Var,
    pub b: Var,
    pub w3: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct Readout {
    /// `1 x d` session vector.
    pub out: Var,
    /// `positions.len() x 1` unnormalized attention weights.
    pub alpha: Var,
}

/// `α_i = qᵀσ(W1 v_n + W2 v_i + b)`, `s_g = Σ α_i v_i`, output
/// `W3 [v_n ‖ s_g]`. The sum runs over click `positions` (node slots, with
/// repeats) and `α` is left unnormalized.
pub fn attention_readout(tape: &mut Tape<'_>, nodes: Var, positions: &[usize], last_slot: usize, p: &ReadoutVars) -> Result<Readout> {
    let seq = tape.gather_rows(nodes, positions)?;
    let last = tape.slice_rows(nodes, last_slot, 1)?;
    let x_last = tape.matmul(last, p.w1)?;
    let x_seq = tape.matmul(seq, p.w2)?;
    let x = tape.add(x_seq, x_last)?;
    let x = tape.add(x, p.b)?;
    let x = tape.sigmoid(x)?;
    let alpha = tape.matmul(x, p.q)?;
    let weighted = tape.mul(seq, alpha)?;
    let s_g = tape.sum_axis(weighted, 0)?;
    let cat = tape.concat(&[last, s_g], 1)?;
    let out = tape.matmul(cat, p.w3)?;
    Ok(Readout { out, alpha })
}

/// Readout with the attention sum replaced by the mean over `positions`.
pub fn mean_readout(tape: &mut Tape<'_>, nodes: Var, positions: &[usize], last_slot: usize, w3: Var) -> Result<Var> {
    let seq = tape.gather_rows(nodes, positions)?;
    let last = tape.slice_rows(nodes, last_slot, 1)?;
    let s_g = tape.mean_axis(seq, 0)?;
    let cat = tape.concat(&[last, s_g], 1)?;
    tape.matmul(cat, w3)
}

/// One attention head: `w` is `d_in x d`, `a` is `2d x 1` (or absent for
/// uniform neighbor weights).
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub w: Var,
    pub a: Option<Var>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMode {
    /// `‖_k σ(Σ_j α_ij W^k h_j)`: output width `K·d`.
    Concat,
    /// `σ(mean_k Σ_j α_ij W^k h_j)`: output width `d`.
    Average,
}

#[derive(Debug, Clone)]
pub struct GatOutput {
    pub out: Var,
    /// Per head, the `n x n` attention matrix (zero outside adjacency).
    pub attention: Vec<Var>,
}

/// Multi-head graph attention over the adjacency of `g`.
///
/// `e_ij = leaky_relu(aᵀ[W h_i ‖ W h_j])` for `j ∈ adj(i)`, normalized by a
/// softmax over `adj(i)`. Heads without `a` use `α_ij = 1/|adj(i)|`.
pub fn gat_layer(tape: &mut Tape<'_>, g: &InterGraph, h: Var, heads: &[HeadVars], mode: HeadMode, slope: f64) -> Result<GatOutput> {
    assert!(!heads.is_empty(), "gat_layer needs at least one head");
    assert!(g.adjacency.iter().all(|a| !a.is_empty()), "node without self-loop");
    let n = g.len();
    let mut uniform: Option<Var> = None;
    let mut attention = Vec::with_capacity(heads.len());
    let mut outs = Vec::with_capacity(heads.len());
    for head in heads {
        let wh = tape.matmul(h, head.w)?;
        let alpha = match head.a {
            Some(a) => {
                let d = tape.value(wh).cols();
                let a_src = tape.slice_rows(a, 0, d)?;
                let a_dst = tape.slice_rows(a, d, d)?;
                let src = tape.matmul(wh, a_src)?;
                let dst = tape.matmul(wh, a_dst)?;
                let dst_row = tape.transpose(dst)?;
                let e = tape.add(src, dst_row)?;
                let e = tape.leaky_relu(e, slope)?;
                tape.masked_softmax_rows(e, &g.adjacency)?
            }
            None => match uniform {
                Some(u) => u,
                None => {
                    let mut m = Tensor::zeros(&[n, n]);
                    for (i, adj) in g.adjacency.iter().enumerate() {
                        for &j in adj {
                            m.set(i, j, 1.0 / adj.len() as f64);
                        }
                    }
                    let u = tape.constant(m)?;
                    uniform = Some(u);
                    u
                }
            },
        };
        attention.push(alpha);
        let agg = tape.matmul(alpha, wh)?;
        outs.push(agg);
    }
    let out = match mode {
        HeadMode::Concat => {
            let acts = outs.iter().map(|&o| tape.sigmoid(o)).collect::<Result<Vec<_>>>()?;
            if acts.len() == 1 {
                acts[0]
            } else {
                tape.concat(&acts, 1)?
            }
        }
        HeadMode::Average => {
            let mut acc = outs[0];
            for &o in &outs[1..] {
                acc = tape.add(acc, o)?;
            }
            let mean = tape.scale(acc, 1.0 / outs.len() as f64)?;
            tape.sigmoid(mean)?
        }
    };
    Ok(GatOutput { out, attention })
}

#[derive(Debug, Clone, Copy)]
pub struct FusionVars {
    pub w1: Var,
    pub w2: Var,
    pub b: Var,
}

/// `f = σ(W_f1 s_inter + W_f2 s_intra + b_f)`, returns
/// `(f ⊙ s_inter + (1 − f) ⊙ s_intra, f)`.
pub fn fuse(tape: &mut Tape<'_>, s_intra: Var, s_inter: Var, p: &FusionVars) -> Result<(Var, Var)> {
    let x = tape.matmul(s_inter, p.w1)?;
    let y = tape.matmul(s_intra, p.w2)?;
    let f = tape.add(x, y)?;
    let f = tape.add(f, p.b)?;
    let f = tape.sigmoid(f)?;
    let g = tape.one_minus(f)?;
    let a = tape.mul(f, s_inter)?;
    let b = tape.mul(g, s_intra)?;
    Ok((tape.add(a, b)?, f))
}

/// Scores `ẑ_i = v_iᵀ s_h` for every row of `embedding`, as `1 x |I|`.
pub fn score(tape: &mut Tape<'_>, s_h: Var, embedding: Var) -> Result<Var> {
    let vt = tape.transpose(embedding)?;
    tape.matmul(s_h, vt)
}

/// Probabilities `ŷ = softmax(ẑ)` from `1 x |I|` scores.
pub fn predict(tape: &mut Tape<'_>, scores: Var) -> Result<Var> {
    tape.softmax(scores, 1)
}

/// Score and normalize in one step.
pub fn score_and_predict(tape: &mut Tape<'_>, s_h: Var, embedding: Var) -> Result<Var> {
    let z = score(tape, s_h, embedding)?;
    predict(tape, z)
}

pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `−Σ_i [y_i ln ŷ_i + (1 − y_i) ln(1 − ŷ_i)]` over all items.
    #[default]
    BinarySum,
    /// `−ln ŷ_target`.
    Categorical,
}

/// Loss of `1 x |I|` probabilities `y_hat` against `target`, after
/// clamping to `[ε, 1 − ε]`.
pub fn loss(tape: &mut Tape<'_>, y_hat: Var, target: usize, kind: LossKind) -> Result<Var> {
    let n = tape.value(y_hat).cols();
    if target >= n {
        return Err(gradkit::GradError::InvalidArgument {
            op: "loss",
            detail: format!("target {target} out of range for {n} items"),
        });
    }
    let p = tape.clamp(y_hat, PROB_EPS, 1.0 - PROB_EPS)?;
    match kind {
        LossKind::Categorical => {
            let pt = tape.slice_cols_via_transpose(p, target)?;
            let l = tape.ln(pt)?;
            tape.scale(l, -1.0)
        }
        LossKind::BinarySum => {
            let mut onehot = Tensor::zeros(&[1, n]);
            onehot.set(0, target, 1.0);
            let y = tape.constant(onehot.clone())?;
            let not_y = tape.constant(onehot.map(|v| 1.0 - v))?;
            let lp = tape.ln(p)?;
            let q = tape.one_minus(p)?;
            let lq = tape.ln(q)?;
            let a = tape.mul(y, lp)?;
            let b = tape.mul(not_y, lq)?;
            let s = tape.add(a, b)?;
            let s = tape.sum(s)?;
            tape.scale(s, -1.0)
        }
    }
}

trait TapeExt {
    fn slice_cols_via_transpose(&mut self, v: Var, col: usize) -> Result<Var>;
}

impl TapeExt for Tape<'_> {
    fn slice_cols_via_transpose(&mut self, v: Var, col: usize) -> Result<Var> {
        let t = self.transpose(v)?;
        self.slice_rows(t, col, 1)
    }
}
