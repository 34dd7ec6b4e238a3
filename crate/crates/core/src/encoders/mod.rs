//! The recommendation model: a gated graph encoder over the session graph,
//! a multi-head attention encoder over the merged neighbor graph, a fusion
//! gate, and softmax scoring over all items.

pub mod layers;

use std::path::Path;

use gradkit::{checkpoint, ParamGrads, ParamGroup, ParamId, ParamSpec, ParamStore, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::corpus::ItemIdx;
use crate::error::{Error, Result};
use crate::graphs::{build_inter_graph, build_intra_graph, InterGraph, IntraGraph};

pub use layers::{
    attention_readout, fuse, gat_layer, ggnn_encode, loss, mean_readout, predict, score, score_and_predict, FusionVars, GatOutput,
    GgnnVars, HeadMode, HeadVars, LossKind, Readout, ReadoutVars, PROB_EPS,
};

/// Which parts of the model are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Both encoders joined by the fusion gate.
    #[default]
    Full,
    /// Session graph only; no neighbors, no fusion.
    IntraOnly,
    /// Neighbor graph only.
    InterOnly,
    /// Inter representation is the mean of all neighbor-graph embeddings.
    AvgPool,
    /// Attention coefficients fixed to `1/|adj(i)|`.
    MeanGat,
    /// Inter readout uses the mean of session nodes instead of attention.
    MeanReadout,
    /// `MeanGat` and `MeanReadout` together.
    MeanGatReadout,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::IntraOnly,
        Variant::InterOnly,
        Variant::AvgPool,
        Variant::MeanGat,
        Variant::MeanReadout,
        Variant::MeanGatReadout,
    ];

    pub fn uses_intra(self) -> bool {
        self != Variant::InterOnly
    }

    pub fn uses_inter(self) -> bool {
        self != Variant::IntraOnly
    }

    pub fn uses_gat(self) -> bool {
        self.uses_inter() && self != Variant::AvgPool
    }

    fn gat_attention(self) -> bool {
        !matches!(self, Variant::MeanGat | Variant::MeanGatReadout)
    }

    fn inter_attention_readout(self) -> bool {
        !matches!(self, Variant::MeanReadout | Variant::MeanGatReadout)
    }

    pub fn uses_fusion(self) -> bool {
        self.uses_intra() && self.uses_inter()
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::IntraOnly => "intra_only",
            Variant::InterOnly => "inter_only",
            Variant::AvgPool => "avg_pool",
            Variant::MeanGat => "mean_gat",
            Variant::MeanReadout => "mean_readout",
            Variant::MeanGatReadout => "mean_gat_readout",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant {s:?}")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Model hyperparameters.
///
/// JSON form (all fields optional except `num_items` when loading a bare
/// config; defaults shown):
///
/// ```json
/// {
///   "num_items": 0,          // rows of the item embedding table
///   "d": 100,                // embedding and hidden width
///   "heads": 8,              // attention heads per layer
///   "gat_layers": 2,         // hidden layers concatenate, the last averages
///   "ggnn_steps": 1,         // propagation rounds of the gated encoder
///   "variant": "full",       // see Variant
///   "leaky_slope": 0.2,      // negative slope inside attention scores
///   "loss": "binary_sum",    // or "categorical"
///   "separate_embeddings": false, // give the inter encoder its own table
///   "share_readout": false,  // one readout for both encoders
///   "init_std": 0.1          // std of the Gaussian initializer
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_items: usize,
    pub d: usize,
    pub heads: usize,
    pub gat_layers: usize,
    pub ggnn_steps: usize,
    pub variant: Variant,
    pub leaky_slope: f64,
    pub loss: LossKind,
    pub separate_embeddings: bool,
    pub share_readout: bool,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_items: 0,
            d: 100,
            heads: 8,
            gat_layers: 2,
            ggnn_steps: 1,
            variant: Variant::Full,
            leaky_slope: 0.2,
            loss: LossKind::BinarySum,
            separate_embeddings: false,
            share_readout: false,
            init_std: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.num_items == 0 {
            return bad("num_items must be positive");
        }
        if self.d == 0 || self.heads == 0 || self.gat_layers == 0 || self.ggnn_steps == 0 {
            return bad("d, heads, gat_layers and ggnn_steps must be positive");
        }
        if !(self.leaky_slope.is_finite() && self.init_std.is_finite() && self.init_std >= 0.0) {
            return bad("leaky_slope and init_std must be finite");
        }
        Ok(())
    }

    /// Names, shapes and learning-rate groups of every parameter the
    /// configured variant uses.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        use ParamGroup::{Inter, IntraShared};
        let (d, v) = (self.d, self.variant);
        let mut specs = vec![ParamSpec::new("embedding", &[self.num_items, d], IntraShared)];
        if v.uses_inter() && self.separate_embeddings {
            specs.push(ParamSpec::new("inter.embedding", &[self.num_items, d], Inter));
        }
        let readout = |specs: &mut Vec<ParamSpec>, prefix: &str, group: ParamGroup, attention: bool| {
            if attention {
                specs.push(ParamSpec::new(format!("{prefix}.q"), &[d, 1], group));
                specs.push(ParamSpec::new(format!("{prefix}.w1"), &[d, d], group));
                specs.push(ParamSpec::new(format!("{prefix}.w2"), &[d, d], group));
                specs.push(ParamSpec::new(format!("{prefix}.b"), &[1, d], group));
            }
            specs.push(ParamSpec::new(format!("{prefix}.w3"), &[2 * d, d], group));
        };
        if v.uses_intra() {
            for (name, shape) in [
                ("ggnn.w_out", [d, d]),
                ("ggnn.b_out", [1, d]),
                ("ggnn.w_in", [d, d]),
                ("ggnn.b_in", [1, d]),
                ("ggnn.w_z", [2 * d, d]),
                ("ggnn.u_z", [d, d]),
                ("ggnn.w_r", [2 * d, d]),
                ("ggnn.u_r", [d, d]),
                ("ggnn.w_o", [2 * d, d]),
                ("ggnn.u_o", [d, d]),
            ] {
                specs.push(ParamSpec::new(name, &shape, IntraShared));
            }
        }
        if self.share_readout {
            let attention = v.uses_intra() || (v.uses_gat() && v.inter_attention_readout());
            if v.uses_intra() || v.uses_gat() {
                readout(&mut specs, "readout", IntraShared, attention);
            }
        } else {
            if v.uses_intra() {
                readout(&mut specs, "intra.readout", IntraShared, true);
            }
            if v.uses_gat() {
                readout(&mut specs, "inter.readout", Inter, v.inter_attention_readout());
            }
        }
        if v.uses_gat() {
            for l in 0..self.gat_layers {
                let d_in = if l == 0 { d } else { self.heads * d };
                for k in 0..self.heads {
                    specs.push(ParamSpec::new(format!("gat.{l}.{k}.w"), &[d_in, d], Inter));
                    if v.gat_attention() {
                        specs.push(ParamSpec::new(format!("gat.{l}.{k}.a"), &[2 * d, 1], Inter));
                    }
                }
            }
        }
        if v.uses_fusion() {
            specs.push(ParamSpec::new("fusion.w1", &[d, d], IntraShared));
            specs.push(ParamSpec::new("fusion.w2", &[d, d], IntraShared));
            specs.push(ParamSpec::new("fusion.b", &[1, d], IntraShared));
        }
        specs
    }
}

#[derive(Debug, Clone, Copy)]
struct ReadoutIds {
    q: Option<ParamId>,
    w1: Option<ParamId>,
    w2: Option<ParamId>,
    b: Option<ParamId>,
    w3: ParamId,
}

#[derive(Debug, Clone)]
struct Layout {
    embedding: ParamId,
    inter_embedding: Option<ParamId>,
    ggnn: Option<[ParamId; 10]>,
    intra_readout: Option<ReadoutIds>,
    inter_readout: Option<ReadoutIds>,
    gat: Vec<Vec<(ParamId, Option<ParamId>)>>,
    fusion: Option<[ParamId; 3]>,
}

impl Layout {
    fn resolve(cfg: &ModelConfig, store: &ParamStore) -> Result<Layout> {
        let id = |n: &str| store.id(n).map_err(Error::from);
        let opt = |n: &str| store.id(n).ok();
        let readout = |prefix: &str| -> Result<ReadoutIds> {
            Ok(ReadoutIds {
                q: opt(&format!("{prefix}.q")),
                w1: opt(&format!("{prefix}.w1")),
                w2: opt(&format!("{prefix}.w2")),
                b: opt(&format!("{prefix}.b")),
                w3: id(&format!("{prefix}.w3"))?,
            })
        };
        let v = cfg.variant;
        let (intra_prefix, inter_prefix) = if cfg.share_readout {
            ("readout", "readout")
        } else {
            ("intra.readout", "inter.readout")
        };
        let ggnn = if v.uses_intra() {
            let names = ["w_out", "b_out", "w_in", "b_in", "w_z", "u_z", "w_r", "u_r", "w_o", "u_o"];
            let mut ids = [ParamId(0); 10];
            for (slot, n) in ids.iter_mut().zip(names) {
                *slot = id(&format!("ggnn.{n}"))?;
            }
            Some(ids)
        } else {
            None
        };
        let mut gat = Vec::new();
        if v.uses_gat() {
            for l in 0..cfg.gat_layers {
                let mut heads = Vec::new();
                for k in 0..cfg.heads {
                    heads.push((id(&format!("gat.{l}.{k}.w"))?, opt(&format!("gat.{l}.{k}.a"))));
                }
                gat.push(heads);
            }
        }
        let layout = Layout {
            embedding: id("embedding")?,
            inter_embedding: opt("inter.embedding"),
            ggnn,
            intra_readout: if v.uses_intra() { Some(readout(intra_prefix)?) } else { None },
            inter_readout: if v.uses_gat() { Some(readout(inter_prefix)?) } else { None },
            gat,
            fusion: if v.uses_fusion() {
                Some([id("fusion.w1")?, id("fusion.w2")?, id("fusion.b")?])
            } else {
                None
            },
        };
        let expected = cfg.param_specs();
        if store.len() != expected.len() {
            return Err(Error::InvalidConfig(format!(
                "parameter store has {} tensors, configuration expects {}",
                store.len(),
                expected.len()
            )));
        }
        for spec in &expected {
            let p = store.get(id(&spec.name)?);
            if p.value.shape() != spec.shape.as_slice() {
                return Err(Error::InvalidConfig(format!(
                    "{} has shape {:?}, expected {:?}",
                    spec.name,
                    p.value.shape(),
                    spec.shape
                )));
            }
        }
        Ok(layout)
    }
}

/// Values recorded by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `1 x |I|` scores before the softmax.
    pub scores: Var,
    /// `1 x |I|` probabilities.
    pub probs: Var,
    pub s_h: Var,
    pub s_intra: Option<Var>,
    pub s_inter: Option<Var>,
    /// Fusion gate, when both encoders are active.
    pub gate: Option<Var>,
    /// Per layer, per head attention matrices of the inter encoder.
    pub attention: Vec<Vec<Var>>,
}

/// Parameters plus the configuration that shapes them.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    layout: Layout,
}

impl Model {
    /// Fresh model with Gaussian-initialized parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let store = gradkit::init_params_with_std(&config.param_specs(), seed, config.init_std)?;
        Model::from_store(config, store)
    }

    /// Wraps an existing store, checking it matches `config`.
    pub fn from_store(config: ModelConfig, store: ParamStore) -> Result<Model> {
        config.validate()?;
        let layout = Layout::resolve(&config, &store)?;
        Ok(Model { config, store, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Records the full model on `tape`.
    pub fn forward<'p, S: AsRef<[ItemIdx]>>(&'p self, tape: &mut Tape<'p>, prefix: &[ItemIdx], neighbors: &[S]) -> Result<Forward> {
        if prefix.is_empty() {
            return Err(Error::InvalidArgument("empty prefix".into()));
        }
        let n_items = self.config.num_items;
        if let Some(&bad) = prefix.iter().chain(neighbors.iter().flat_map(|s| s.as_ref())).find(|&&i| i as usize >= n_items) {
            return Err(Error::InvalidArgument(format!("item {bad} outside vocabulary of {n_items}")));
        }
        let v = self.config.variant;
        let store = &self.store;
        let l = &self.layout;
        let emb = tape.param(store, l.embedding)?;

        let s_intra = if v.uses_intra() {
            let g = build_intra_graph(prefix);
            Some(self.intra(tape, &g, emb)?)
        } else {
            None
        };
        let mut attention = Vec::new();
        let s_inter = if v.uses_inter() {
            let g = build_inter_graph(prefix, neighbors);
            let table = match l.inter_embedding {
                Some(id) => tape.param(store, id)?,
                None => emb,
            };
            let (s, att) = self.inter(tape, &g, table)?;
            attention = att;
            Some(s)
        } else {
            None
        };
        let (s_h, gate) = match (s_intra, s_inter) {
            (Some(a), Some(b)) => {
                let [w1, w2, b_f] = l.fusion.expect("fusion params");
                let p = FusionVars {
                    w1: tape.param(store, w1)?,
                    w2: tape.param(store, w2)?,
                    b: tape.param(store, b_f)?,
                };
                let (s, f) = fuse(tape, a, b, &p)?;
                (s, Some(f))
            }
            (Some(a), None) => (a, None),
            (None, Some(b)) => (b, None),
            (None, None) => unreachable!("every variant uses an encoder"),
        };
        let scores = score(tape, s_h, emb)?;
        let probs = predict(tape, scores)?;
        Ok(Forward {
            scores,
            probs,
            s_h,
            s_intra,
            s_inter,
            gate,
            attention,
        })
    }

    fn intra<'p>(&'p self, tape: &mut Tape<'p>, g: &IntraGraph, emb: Var) -> Result<Var> {
        let store = &self.store;
        let ids = self.layout.ggnn.expect("ggnn params");
        let mut vars = [emb; 10];
        for (v, id) in vars.iter_mut().zip(ids) {
            *v = tape.param(store, id)?;
        }
        let [w_out, b_out, w_in, b_in, w_z, u_z, w_r, u_r, w_o, u_o] = vars;
        let p = GgnnVars {
            w_out,
            b_out,
            w_in,
            b_in,
            w_z,
            u_z,
            w_r,
            u_r,
            w_o,
            u_o,
        };
        let rows: Vec<usize> = g.node_items.iter().map(|&i| i as usize).collect();
        let h0 = tape.gather_rows(emb, &rows)?;
        let h = ggnn_encode(tape, g, h0, &p, self.config.ggnn_steps)?;
        let r = self.readout_vars(tape, self.layout.intra_readout.expect("intra readout"))?;
        Ok(attention_readout(tape, h, &g.alias, g.last_slot, &r.expect("attention readout"))?.out)
    }

    fn readout_vars<'p>(&'p self, tape: &mut Tape<'p>, ids: ReadoutIds) -> Result<std::result::Result<ReadoutVars, Var>> {
        let w3 = tape.param(&self.store, ids.w3)?;
        Ok(match (ids.q, ids.w1, ids.w2, ids.b) {
            (Some(q), Some(w1), Some(w2), Some(b)) => Ok(ReadoutVars {
                q: tape.param(&self.store, q)?,
                w1: tape.param(&self.store, w1)?,
                w2: tape.param(&self.store, w2)?,
                b: tape.param(&self.store, b)?,
                w3,
            }),
            _ => Err(w3),
        })
    }

    fn inter<'p>(&'p self, tape: &mut Tape<'p>, g: &InterGraph, table: Var) -> Result<(Var, Vec<Vec<Var>>)> {
        let rows: Vec<usize> = g.node_items.iter().map(|&i| i as usize).collect();
        let h0 = tape.gather_rows(table, &rows)?;
        let v = self.config.variant;
        if !v.uses_gat() {
            return Ok((tape.mean_axis(h0, 0)?, Vec::new()));
        }
        let mut h = h0;
        let mut attention = Vec::new();
        let layers = self.layout.gat.len();
        for (li, heads) in self.layout.gat.iter().enumerate() {
            let vars = heads
                .iter()
                .map(|&(w, a)| {
                    Ok(HeadVars {
                        w: tape.param(&self.store, w)?,
                        a: a.map(|a| tape.param(&self.store, a)).transpose()?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let mode = if li + 1 == layers { HeadMode::Average } else { HeadMode::Concat };
            let out = gat_layer(tape, g, h, &vars, mode, self.config.leaky_slope)?;
            h = out.out;
            attention.push(out.attention);
        }
        let ids = self.layout.inter_readout.expect("inter readout");
        let s = match self.readout_vars(tape, ids)? {
            Ok(r) if v.inter_attention_readout() => attention_readout(tape, h, &g.session_slots, g.last_slot, &r)?.out,
            Ok(r) => mean_readout(tape, h, &g.session_slots, g.last_slot, r.w3)?,
            Err(w3) => mean_readout(tape, h, &g.session_slots, g.last_slot, w3)?,
        };
        Ok((s, attention))
    }

    /// Loss of predicting `target` after `prefix`, and its gradient.
    pub fn loss_and_grads<S: AsRef<[ItemIdx]>>(&self, prefix: &[ItemIdx], neighbors: &[S], target: ItemIdx) -> Result<(f64, ParamGrads)> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, prefix, neighbors)?;
        let l = loss(&mut tape, f.probs, target as usize, self.config.loss)?;
        let value = tape.value(l).item();
        let grads = tape.backward(l)?;
        Ok((value, grads.into_params()))
    }

    /// Loss only.
    pub fn loss<S: AsRef<[ItemIdx]>>(&self, prefix: &[ItemIdx], neighbors: &[S], target: ItemIdx) -> Result<f64> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, prefix, neighbors)?;
        let l = loss(&mut tape, f.probs, target as usize, self.config.loss)?;
        Ok(tape.value(l).item())
    }

    /// Probability of every item being the next click.
    pub fn predict<S: AsRef<[ItemIdx]>>(&self, prefix: &[ItemIdx], neighbors: &[S]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, prefix, neighbors)?;
        Ok(tape.value(f.probs).data().to_vec())
    }

    /// Pre-softmax scores `ẑ`; same ordering as [`Model::predict`] without
    /// the underflow of tiny probabilities.
    pub fn scores<S: AsRef<[ItemIdx]>>(&self, prefix: &[ItemIdx], neighbors: &[S]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, prefix, neighbors)?;
        Ok(tape.value(f.scores).data().to_vec())
    }

    /// Writes parameters, optimizer state and the JSON config.
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_vec(&self.config)?;
        checkpoint::save(path, &self.store, &meta)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        let (store, meta) = checkpoint::load(path)?;
        let config: ModelConfig = serde_json::from_slice(&meta).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: format!("checkpoint config: {e}"),
        })?;
        Model::from_store(config, store)
    }
}
