//! Graph decision networks: message-passing layers over an environment-masked
//! communication graph, followed by one actor head shared by every agent.
//!
//! Per-agent values are rows of a matrix. A layer computes
//!
//! ```text
//! v' = φ(v·W_self + agg(v)·W_agg + b [+ mean_all(v)·W_read])
//! ```
//!
//! where `agg` is a mean, sum, attention-weighted, or gated-mean combination of
//! in-neighbor values. An empty neighborhood aggregates to the zero vector.

mod augment;
mod checkpoint;

pub use augment::{augment, AugmentError, Augmentation, Augmenter};
pub use checkpoint::{
    load_checkpoint, parse_checkpoint, save_checkpoint, write_checkpoint, CheckpointError,
};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Var};
use crate::graph::{AttributedGraph, NodePermutation};
use crate::params::{ParamId, ParamStore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("expected {expected} observation components per agent, got {got}")]
    ObsDim { expected: usize, got: usize },
    #[error("communication graph has {graph} nodes but {agents} agents were given")]
    AgentCount { graph: usize, agents: usize },
    #[error("hidden state has shape {got:?}, expected {expected:?}")]
    HiddenShape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("invalid model configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    MeanAgg,
    SumAgg,
    Attention,
    GatedMean,
}

impl LayerKind {
    pub const ALL: [LayerKind; 4] = [
        Self::MeanAgg,
        Self::SumAgg,
        Self::Attention,
        Self::GatedMean,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

/// Architecture description; together with a [`ParamStore`] it fully
/// determines a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub obs_dim: usize,
    pub hidden: usize,
    pub layers: Vec<LayerKind>,
    /// Width of the shared actor head (action logits or Q-values).
    pub n_outputs: usize,
    pub value_head: bool,
    pub recurrent: bool,
    pub readout: bool,
    pub key_dim: usize,
    pub value_dim: usize,
    pub heads: usize,
    /// Scale attention values by a per-sender sigmoid gate.
    pub gated_attention: bool,
    #[serde(default)]
    pub activation: Activation,
}

impl ModelConfig {
    pub fn new(obs_dim: usize, n_outputs: usize, kind: LayerKind) -> Self {
        Self {
            obs_dim,
            hidden: 128,
            layers: vec![kind; 4],
            n_outputs,
            value_head: false,
            recurrent: false,
            readout: false,
            key_dim: 16,
            value_dim: 32,
            heads: 1,
            gated_attention: false,
            activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.hidden == 0 || self.n_outputs == 0 {
            return bad("hidden and output sizes must be positive");
        }
        if self.heads == 0 {
            return bad("attention needs at least one head");
        }
        if self.key_dim == 0 || self.value_dim == 0 {
            return bad("attention key and value sizes must be positive");
        }
        if self.recurrent && self.layers.is_empty() {
            return bad("recurrent models need at least one message-passing layer");
        }
        Ok(())
    }

    /// Width of the per-agent value fed to the actor head.
    pub fn final_dim(&self) -> usize {
        if self.layers.is_empty() && !self.recurrent {
            self.obs_dim
        } else {
            self.hidden
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct AttentionParams {
    query: ParamId,
    key: ParamId,
    value: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct GateParams {
    weight: ParamId,
    bias: ParamId,
}

/// Parameters and shape of one message-passing round.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    w_self: ParamId,
    w_agg: ParamId,
    bias: ParamId,
    heads: Vec<AttentionParams>,
    gate: Option<GateParams>,
    readout: Option<ParamId>,
}

#[derive(Debug, Clone, PartialEq)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct GruCell {
    wz: ParamId,
    uz: ParamId,
    bz: ParamId,
    wr: ParamId,
    ur: ParamId,
    br: ParamId,
    wh: ParamId,
    uh: ParamId,
    bh: ParamId,
}

/// Per-agent recurrent state, one row per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState(pub Array2<f64>);

impl HiddenState {
    pub fn zeros(agents: usize, dim: usize) -> Self {
        Self(Array2::zeros((agents, dim)))
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.0.rows().into_iter().map(|r| r.to_vec()).collect()
    }
}

/// Constant matrices derived from a communication graph.
#[derive(Debug, Clone)]
pub struct CommMatrices {
    /// `adj[i][j] = 1` when `j` sends to `i`.
    pub adj: Array2<f64>,
    /// Row-normalized `adj`; empty rows stay zero.
    pub mean: Array2<f64>,
}

impl CommMatrices {
    pub fn from_graph(g: &AttributedGraph) -> Self {
        let n = g.node_count();
        let mut adj = Array2::zeros((n, n));
        let mut mean = Array2::zeros((n, n));
        for (i, nb) in g.in_adjacency().iter().enumerate() {
            for &j in nb {
                adj[[i, j]] = 1.0;
                mean[[i, j]] = 1.0 / nb.len() as f64;
            }
        }
        Self { adj, mean }
    }

    /// From a send mask, `mask[i][j]` meaning `i` may send to `j`.
    pub fn from_mask(mask: &[Vec<bool>]) -> Self {
        let n = mask.len();
        let mut adj = Array2::zeros((n, n));
        for (i, row) in mask.iter().enumerate() {
            for (j, &b) in row.iter().enumerate() {
                if b && i != j {
                    adj[[j, i]] = 1.0;
                }
            }
        }
        let mut mean = adj.clone();
        for mut row in mean.rows_mut() {
            let s = row.sum();
            if s > 0.0 {
                row /= s;
            }
        }
        Self { adj, mean }
    }

    pub fn agents(&self) -> usize {
        self.adj.nrows()
    }
}

/// Tape handles produced by [`GdnModel::forward_tape`].
#[derive(Debug, Clone, Copy)]
pub struct TapeOutput {
    pub outputs: Var,
    pub values: Option<Var>,
    pub hidden: Option<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Actor-head output per agent.
    pub outputs: Vec<Vec<f64>>,
    pub values: Option<Vec<f64>>,
    pub hidden: Option<HiddenState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdnModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    layers: Vec<LayerSpec>,
    gru: Option<GruCell>,
    head: Linear,
    value: Option<Linear>,
}

fn uniform(rng: &mut (impl Rng + ?Sized), rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound))
}

impl GdnModel {
    /// Builds a model with uniform `±1/√fan_in` initialization.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let mut p = ParamStore::new();
        let c = &config;
        let lin = |p: &mut ParamStore, name: &str, i: usize, o: usize, rng: &mut R| Linear {
            weight: p.add(format!("{name}.w"), uniform(rng, i, o, i)),
            bias: p.add(format!("{name}.b"), uniform(rng, 1, o, i)),
        };

        let gru = c.recurrent.then(|| {
            let (x, h) = (c.obs_dim, c.hidden);
            let mut m = |name: &str, r: usize, cols: usize, fan: usize| {
                p.add(format!("gru.{name}"), uniform(rng, r, cols, fan))
            };
            GruCell {
                wz: m("wz", x, h, x),
                uz: m("uz", h, h, h),
                bz: m("bz", 1, h, h),
                wr: m("wr", x, h, x),
                ur: m("ur", h, h, h),
                br: m("br", 1, h, h),
                wh: m("wh", x, h, x),
                uh: m("uh", h, h, h),
                bh: m("bh", 1, h, h),
            }
        });

        let mut in_dim = if c.recurrent { c.hidden } else { c.obs_dim };
        let mut layers = Vec::with_capacity(c.layers.len());
        for (m, &kind) in c.layers.iter().enumerate() {
            let out_dim = c.hidden;
            let pre = format!("layer{m}");
            let mut heads = Vec::new();
            let mut gate = None;
            let agg_dim = match kind {
                LayerKind::Attention => {
                    for h in 0..c.heads {
                        heads.push(AttentionParams {
                            query: p.add(
                                format!("{pre}.head{h}.query"),
                                uniform(rng, in_dim, c.key_dim, in_dim),
                            ),
                            key: p.add(
                                format!("{pre}.head{h}.key"),
                                uniform(rng, in_dim, c.key_dim, in_dim),
                            ),
                            value: p.add(
                                format!("{pre}.head{h}.value"),
                                uniform(rng, in_dim, c.value_dim, in_dim),
                            ),
                        });
                    }
                    c.heads * c.value_dim
                }
                _ => in_dim,
            };
            if kind == LayerKind::GatedMean || (kind == LayerKind::Attention && c.gated_attention) {
                gate = Some(GateParams {
                    weight: p.add(format!("{pre}.gate.w"), uniform(rng, in_dim, 1, in_dim)),
                    bias: p.add(format!("{pre}.gate.b"), uniform(rng, 1, 1, in_dim)),
                });
            }
            let w_self = p.add(
                format!("{pre}.w_self"),
                uniform(rng, in_dim, out_dim, in_dim),
            );
            let w_agg = p.add(
                format!("{pre}.w_agg"),
                uniform(rng, agg_dim, out_dim, agg_dim),
            );
            let bias = p.add(format!("{pre}.bias"), uniform(rng, 1, out_dim, in_dim));
            let readout = c.readout.then(|| {
                p.add(
                    format!("{pre}.w_read"),
                    uniform(rng, in_dim, out_dim, in_dim),
                )
            });
            layers.push(LayerSpec {
                kind,
                in_dim,
                out_dim,
                w_self,
                w_agg,
                bias,
                heads,
                gate,
                readout,
            });
            in_dim = out_dim;
        }

        let fin = c.final_dim();
        let head = lin(&mut p, "head", fin, c.n_outputs, rng);
        let value = c.value_head.then(|| lin(&mut p, "value", fin, 1, rng));
        Ok(Self {
            config,
            params: p,
            layers,
            gru,
            head,
            value,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.params.parameter_count()
    }

    /// Sets a named parameter, checking the shape.
    pub fn set_param(&mut self, name: &str, value: Array2<f64>) -> Result<(), ModelError> {
        let id = self
            .params
            .find(name)
            .ok_or_else(|| ModelError::Config(format!("no parameter named {name}")))?;
        if self.params.value(id).dim() != value.dim() {
            return Err(ModelError::Config(format!("shape mismatch for {name}")));
        }
        *self.params.value_mut(id) = value;
        Ok(())
    }

    fn act(&self, tape: &mut Tape, x: Var) -> Var {
        match self.config.activation {
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => x,
        }
    }

    fn linear(&self, tape: &mut Tape, x: Var, l: &Linear) -> Var {
        let w = tape.param(&self.params, l.weight);
        let b = tape.param(&self.params, l.bias);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }

    fn gate(&self, tape: &mut Tape, x: Var, g: &GateParams) -> Var {
        let w = tape.param(&self.params, g.weight);
        let b = tape.param(&self.params, g.bias);
        let s = tape.matmul(x, w);
        let s = tape.add_row(s, b);
        tape.sigmoid(s)
    }

    fn layer(&self, tape: &mut Tape, x: Var, spec: &LayerSpec, comm: &CommMatrices) -> Var {
        let n = comm.agents();
        let agg = match spec.kind {
            LayerKind::MeanAgg => {
                let m = tape.constant(comm.mean.clone());
                tape.matmul(m, x)
            }
            LayerKind::SumAgg => {
                let a = tape.constant(comm.adj.clone());
                tape.matmul(a, x)
            }
            LayerKind::GatedMean => {
                let g = self.gate(tape, x, spec.gate.as_ref().expect("gated layer has a gate"));
                let msgs = tape.mul_col(x, g);
                let m = tape.constant(comm.mean.clone());
                tape.matmul(m, msgs)
            }
            LayerKind::Attention => {
                let gate = spec.gate.as_ref().map(|g| self.gate(tape, x, g));
                let scale = 1.0 / (self.config.key_dim as f64).sqrt();
                let mut out: Option<Var> = None;
                for h in &spec.heads {
                    let wq = tape.param(&self.params, h.query);
                    let wk = tape.param(&self.params, h.key);
                    let wv = tape.param(&self.params, h.value);
                    let q = tape.matmul(x, wq);
                    let k = tape.matmul(x, wk);
                    let mut v = tape.matmul(x, wv);
                    if let Some(g) = gate {
                        v = tape.mul_col(v, g);
                    }
                    let kt = tape.transpose(k);
                    let scores = tape.matmul(q, kt);
                    let scores = tape.scale(scores, scale);
                    let alpha = tape.masked_softmax(scores, comm.adj.clone());
                    let msg = tape.matmul(alpha, v);
                    out = Some(match out {
                        None => msg,
                        Some(prev) => tape.concat_cols(prev, msg),
                    });
                }
                out.expect("at least one head")
            }
        };
        let ws = tape.param(&self.params, spec.w_self);
        let wa = tape.param(&self.params, spec.w_agg);
        let b = tape.param(&self.params, spec.bias);
        let own = tape.matmul(x, ws);
        let agg = tape.matmul(agg, wa);
        let mut pre = tape.add(own, agg);
        pre = tape.add_row(pre, b);
        if let Some(r) = spec.readout {
            let wr = tape.param(&self.params, r);
            let global = tape.mean_rows(x);
            let global = tape.matmul(global, wr);
            let global = tape.broadcast_rows(global, n);
            pre = tape.add(pre, global);
        }
        self.act(tape, pre)
    }

    fn gru_step(&self, tape: &mut Tape, x: Var, h: Var, c: &GruCell) -> Var {
        let affine = |tape: &mut Tape, w: ParamId, u: ParamId, b: ParamId, hin: Var| {
            let w = tape.param(&self.params, w);
            let u = tape.param(&self.params, u);
            let b = tape.param(&self.params, b);
            let a = tape.matmul(x, w);
            let c = tape.matmul(hin, u);
            let s = tape.add(a, c);
            tape.add_row(s, b)
        };
        let z = affine(tape, c.wz, c.uz, c.bz, h);
        let z = tape.sigmoid(z);
        let r = affine(tape, c.wr, c.ur, c.br, h);
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h);
        let cand = affine(tape, c.wh, c.uh, c.bh, rh);
        let cand = tape.tanh(cand);
        // h' = h + z ∘ (ĥ - h)
        let diff = tape.sub(cand, h);
        let step = tape.mul(z, diff);
        tape.add(h, step)
    }

    /// Records a forward pass on `tape`. `obs` is `agents x obs_dim`.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        comm: &CommMatrices,
        obs: Var,
        hidden: Option<Var>,
    ) -> Result<TapeOutput, ModelError> {
        let (n, d) = tape.value(obs).dim();
        if d != self.config.obs_dim {
            return Err(ModelError::ObsDim {
                expected: self.config.obs_dim,
                got: d,
            });
        }
        if n != comm.agents() {
            return Err(ModelError::AgentCount {
                graph: comm.agents(),
                agents: n,
            });
        }
        let mut x = obs;
        if let Some(cell) = &self.gru {
            let h = match hidden {
                Some(h) => {
                    let got = tape.value(h).dim();
                    if got != (n, self.config.hidden) {
                        return Err(ModelError::HiddenShape {
                            expected: (n, self.config.hidden),
                            got,
                        });
                    }
                    h
                }
                None => tape.constant(Array2::zeros((n, self.config.hidden))),
            };
            x = self.gru_step(tape, x, h, cell);
        }
        for spec in &self.layers {
            x = self.layer(tape, x, spec, comm);
        }
        let outputs = self.linear(tape, x, &self.head);
        let values = self.value.as_ref().map(|v| self.linear(tape, x, v));
        Ok(TapeOutput {
            outputs,
            values,
            hidden: self.gru.is_some().then_some(x),
        })
    }

    /// Evaluates the model on concrete inputs.
    pub fn forward(
        &self,
        comm: &AttributedGraph,
        obs: &[Vec<f64>],
        hidden: Option<&HiddenState>,
    ) -> Result<ForwardOutput, ModelError> {
        let mats = CommMatrices::from_graph(comm);
        self.forward_with(&mats, obs, hidden)
    }

    pub fn forward_with(
        &self,
        comm: &CommMatrices,
        obs: &[Vec<f64>],
        hidden: Option<&HiddenState>,
    ) -> Result<ForwardOutput, ModelError> {
        let mut tape = Tape::new();
        let o = tape.constant(rows_to_matrix(obs, self.config.obs_dim)?);
        let h = hidden.map(|h| tape.constant(h.0.clone()));
        let out = self.forward_tape(&mut tape, comm, o, h)?;
        Ok(ForwardOutput {
            outputs: matrix_to_rows(tape.value(out.outputs)),
            values: out.values.map(|v| tape.value(v).column(0).to_vec()),
            hidden: out.hidden.map(|h| HiddenState(tape.value(h).clone())),
        })
    }
}

pub fn rows_to_matrix(rows: &[Vec<f64>], dim: usize) -> Result<Array2<f64>, ModelError> {
    let mut m = Array2::zeros((rows.len(), dim));
    for (r, row) in rows.iter().enumerate() {
        if row.len() != dim {
            return Err(ModelError::ObsDim {
                expected: dim,
                got: row.len(),
            });
        }
        for (c, &v) in row.iter().enumerate() {
            m[[r, c]] = v;
        }
    }
    Ok(m)
}

pub fn matrix_to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Max deviation between `forward(σ∘inputs)` and `σ∘forward(inputs)`.
pub fn equivariance_check(
    model: &GdnModel,
    comm: &AttributedGraph,
    obs: &[Vec<f64>],
    sigma: &NodePermutation,
) -> Result<f64, ModelError> {
    let base = model.forward(comm, obs, None)?;
    let pg = comm
        .permute(sigma)
        .map_err(|e| ModelError::Config(e.to_string()))?;
    let pobs = sigma.permute_rows(obs);
    let moved = model.forward(&pg, &pobs, None)?;
    let expected = sigma.permute_rows(&base.outputs);
    let mut dev = max_abs_diff(&moved.outputs, &expected);
    if let (Some(a), Some(b)) = (&moved.values, &base.values) {
        let pb = sigma.permute_rows(b);
        dev = dev.max(
            a.iter()
                .zip(&pb)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max),
        );
    }
    if let (Some(a), Some(b)) = (&moved.hidden, &base.hidden) {
        dev = dev.max(max_abs_diff(&a.rows(), &sigma.permute_rows(&b.rows())));
    }
    Ok(dev)
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}
