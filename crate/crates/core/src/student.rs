//! Pose-only student: per-frame graph layers over the COCO skeleton, a
//! temporal encoder across frames and a linear projection to the social
//! representation.
//!
//! The default is two single-head GAT layers (hidden 16), a flatten of the
//! 17 node states to a 272-wide frame embedding, a one-layer Bi-LSTM
//! (hidden 128) read out by concatenating both directions' final states, and
//! a 256 → 16 projection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::heads::{ChainHeads, ChainLogits};
use crate::nn::{glorot, uniform, Linear};
use crate::pose::skeleton::COCO_EDGES;
use crate::pose::{PoseSequence, BODY_JOINTS};
use crate::seed;
use crate::tensor::{Bound, ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::{Error, Result};

const MASKED: f64 = -1e9;
const GAT_SLOPE: f64 = 0.2;
pub const JOINT_FEATURES: usize = 3;

/// Undirected graph with a self-loop on every node.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonGraph {
    nodes: usize,
    adjacency: Vec<bool>,
}

impl SkeletonGraph {
    pub fn new(nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adjacency = vec![false; nodes * nodes];
        for i in 0..nodes {
            adjacency[i * nodes + i] = true;
        }
        for &(a, b) in edges {
            if a >= nodes || b >= nodes {
                return Err(Error::Contract(format!("edge ({a}, {b}) outside a {nodes}-node graph")));
            }
            adjacency[a * nodes + b] = true;
            adjacency[b * nodes + a] = true;
        }
        Ok(SkeletonGraph { nodes, adjacency })
    }

    pub fn coco() -> Self {
        Self::new(BODY_JOINTS, &COCO_EDGES).expect("COCO edges are in range")
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn connected(&self, a: usize, b: usize) -> bool {
        self.adjacency[a * self.nodes + b]
    }

    pub fn neighbors(&self, a: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes).filter(move |&b| self.connected(a, b))
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.nodes];
        let mut stack = vec![0];
        while let Some(n) = stack.pop() {
            if !std::mem::replace(&mut seen[n], true) {
                stack.extend(self.neighbors(n).filter(|&m| !seen[m]));
            }
        }
        seen.iter().all(|&s| s)
    }

    /// Additive attention mask: 0 on edges, a large negative value elsewhere.
    pub fn attention_mask<R: Real>(&self) -> Vec<R> {
        self.adjacency.iter().map(|&e| R::from_f64_lossy(if e { 0.0 } else { MASKED })).collect()
    }

    /// Symmetrically normalized adjacency `D^-1/2 A D^-1/2` (self-loops included).
    pub fn normalized_adjacency<R: Real>(&self) -> Vec<R> {
        let deg: Vec<f64> = (0..self.nodes).map(|i| self.neighbors(i).count() as f64).collect();
        let mut out = vec![R::zero(); self.nodes * self.nodes];
        for i in 0..self.nodes {
            for j in self.neighbors(i) {
                out[i * self.nodes + j] = R::from_f64_lossy(1.0 / (deg[i] * deg[j]).sqrt());
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    Identity,
}

/// Single-head graph attention layer without bias.
#[derive(Clone, Debug)]
pub struct GatLayer {
    pub weight: ParamId,
    pub att_src: ParamId,
    pub att_dst: ParamId,
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl GatLayer {
    pub fn new<R: Real, G: Rng + ?Sized>(
        store: &mut ParamStore<R>,
        name: &str,
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut G,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), glorot(&[input, output], input, output, rng));
        let att_src = store.add(format!("{name}.att_src"), glorot(&[output, 1], 2 * output, 1, rng));
        let att_dst = store.add(format!("{name}.att_dst"), glorot(&[output, 1], 2 * output, 1, rng));
        GatLayer { weight, att_src, att_dst, input, output, activation }
    }

    /// `x` is `[N, nodes, input]`. Returns the layer output `[N, nodes, output]`
    /// and the attention weights `[N, nodes, nodes]` (row `i` attends over
    /// the neighbours `j` of node `i`).
    pub fn forward<R: Real>(&self, tape: &mut Tape<R>, p: &Bound, x: Var, graph: &SkeletonGraph) -> Result<(Var, Var)> {
        let n = graph.nodes();
        let wh = tape.matmul(x, p[self.weight])?;
        let src = tape.matmul(wh, p[self.att_src])?;
        let dst = tape.matmul(wh, p[self.att_dst])?;
        let dst_t = tape.transpose(dst)?;
        let logits = tape.add(src, dst_t)?;
        let logits = tape.leaky_relu(logits, R::from_f64_lossy(GAT_SLOPE))?;
        let mask = tape.constant(&[n, n], graph.attention_mask())?;
        let logits = tape.add(logits, mask)?;
        let att = tape.softmax(logits, 2)?;
        let out = tape.matmul(att, wh)?;
        let out = match self.activation {
            Activation::Elu => tape.elu(out, R::one())?,
            Activation::Identity => out,
        };
        Ok((out, att))
    }

    pub fn num_params(&self) -> usize {
        self.input * self.output + 2 * self.output
    }
}

/// Graph convolution `act(Â X W)` with the normalized adjacency `Â`.
#[derive(Clone, Debug)]
pub struct GcnLayer {
    pub weight: ParamId,
    pub input: usize,
    pub output: usize,
}

impl GcnLayer {
    pub fn new<R: Real, G: Rng + ?Sized>(
        store: &mut ParamStore<R>,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut G,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), glorot(&[input, output], input, output, rng));
        GcnLayer { weight, input, output }
    }

    pub fn forward<R: Real>(&self, tape: &mut Tape<R>, p: &Bound, x: Var, graph: &SkeletonGraph) -> Result<Var> {
        let n = graph.nodes();
        let xw = tape.matmul(x, p[self.weight])?;
        // Â is symmetric, so Â·XW = ((XW)ᵀ Â)ᵀ, which lets Â be a shared rhs.
        let xw_t = tape.transpose(xw)?;
        let adj = tape.constant(&[n, n], graph.normalized_adjacency())?;
        let mixed = tape.matmul(xw_t, adj)?;
        let out = tape.transpose(mixed)?;
        Ok(tape.elu(out, R::one())?)
    }
}

/// One direction of an LSTM layer. Gate order: input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct LstmDirection {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmDirection {
    pub fn new<R: Real, G: Rng + ?Sized>(
        store: &mut ParamStore<R>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut G,
    ) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        LstmDirection {
            w_ih: store.add(format!("{name}.w_ih"), uniform(&[input, 4 * hidden], k, rng)),
            w_hh: store.add(format!("{name}.w_hh"), uniform(&[hidden, 4 * hidden], k, rng)),
            b_ih: store.add(format!("{name}.b_ih"), uniform(&[4 * hidden], k, rng)),
            b_hh: store.add(format!("{name}.b_hh"), uniform(&[4 * hidden], k, rng)),
            input,
            hidden,
        }
    }

    pub fn num_params(&self) -> usize {
        4 * (self.input * self.hidden + self.hidden * self.hidden + 2 * self.hidden)
    }

    /// Runs over `x: [B, T, input]`, in reverse time order if `reverse`.
    /// Returns the hidden state after every step, indexed by time (not by
    /// processing order).
    pub fn run<R: Real>(&self, tape: &mut Tape<R>, p: &Bound, x: Var, reverse: bool) -> Result<Vec<Var>> {
        let shape = tape.shape(x)?.to_vec();
        let (b, t_len) = (shape[0], shape[1]);
        let h4 = 4 * self.hidden;
        let hsz = self.hidden;
        let proj = tape.matmul(x, p[self.w_ih])?;
        let proj = tape.add(proj, p[self.b_ih])?;
        let proj = tape.add(proj, p[self.b_hh])?;
        let mut h: Option<Var> = None;
        let mut c: Option<Var> = None;
        let mut outputs = vec![None; t_len];
        let order: Vec<usize> = if reverse { (0..t_len).rev().collect() } else { (0..t_len).collect() };
        for t in order {
            let xt = tape.slice(proj, 1, t, 1)?;
            let mut gates = tape.reshape(xt, &[b, h4])?;
            if let Some(h) = h {
                let rec = tape.matmul(h, p[self.w_hh])?;
                gates = tape.add(gates, rec)?;
            }
            let i = tape.slice(gates, 1, 0, hsz)?;
            let i = tape.sigmoid(i)?;
            let f = tape.slice(gates, 1, hsz, hsz)?;
            let f = tape.sigmoid(f)?;
            let g = tape.slice(gates, 1, 2 * hsz, hsz)?;
            let g = tape.tanh(g)?;
            let o = tape.slice(gates, 1, 3 * hsz, hsz)?;
            let o = tape.sigmoid(o)?;
            let ig = tape.mul(i, g)?;
            let c_new = match c {
                Some(c) => {
                    let fc = tape.mul(f, c)?;
                    tape.add(fc, ig)?
                }
                None => ig,
            };
            let tc = tape.tanh(c_new)?;
            let h_new = tape.mul(o, tc)?;
            c = Some(c_new);
            h = Some(h_new);
            outputs[t] = Some(h_new);
        }
        Ok(outputs.into_iter().map(|o| o.expect("every step visited")).collect())
    }
}

/// Stacked bidirectional LSTM.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub layers: Vec<[LstmDirection; 2]>,
}

impl BiLstm {
    pub fn new<R: Real, G: Rng + ?Sized>(
        store: &mut ParamStore<R>,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        rng: &mut G,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let inp = if l == 0 { input } else { 2 * hidden };
                [
                    LstmDirection::new(store, &format!("{name}.l{l}.fwd"), inp, hidden, rng),
                    LstmDirection::new(store, &format!("{name}.l{l}.bwd"), inp, hidden, rng),
                ]
            })
            .collect();
        BiLstm { layers }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().flat_map(|l| l.iter()).map(LstmDirection::num_params).sum()
    }

    /// `x: [B, T, input]` → `[B, 2·hidden]`: the forward direction's state after
    /// the last frame next to the backward direction's state after the first.
    pub fn forward<R: Real>(&self, tape: &mut Tape<R>, p: &Bound, x: Var) -> Result<Var> {
        let mut input = x;
        let mut readout = None;
        for (l, [fwd, bwd]) in self.layers.iter().enumerate() {
            let hf = fwd.run(tape, p, input, false)?;
            let hb = bwd.run(tape, p, input, true)?;
            readout = Some(tape.concat(&[*hf.last().unwrap(), hb[0]], 1)?);
            if l + 1 < self.layers.len() {
                let b = tape.shape(hf[0])?[0];
                let mut steps = Vec::with_capacity(hf.len());
                for (f, r) in hf.iter().zip(&hb) {
                    let step = tape.concat(&[*f, *r], 1)?;
                    steps.push(tape.reshape(step, &[b, 1, 2 * fwd.hidden])?);
                }
                input = tape.concat(&steps, 1)?;
            }
        }
        readout.ok_or_else(|| Error::Contract("Bi-LSTM needs at least one layer".into()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialKind {
    Gat,
    Gcn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalKind {
    Bilstm,
    /// Two temporal convolutions (kernel 3) with mean pooling over time.
    Tcn,
    /// One self-attention block over frames with mean pooling.
    Attention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudentConfig {
    pub spatial: SpatialKind,
    pub spatial_layers: usize,
    pub graph_hidden: usize,
    pub temporal: TemporalKind,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub repr_dim: usize,
    pub frames: usize,
}

impl Default for StudentConfig {
    fn default() -> Self {
        StudentConfig {
            spatial: SpatialKind::Gat,
            spatial_layers: 2,
            graph_hidden: 16,
            temporal: TemporalKind::Bilstm,
            lstm_hidden: 128,
            lstm_layers: 1,
            repr_dim: 16,
            frames: crate::pose::DEFAULT_FRAMES,
        }
    }
}

impl StudentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(1..=3).contains(&self.spatial_layers) {
            return bad(format!("student spatial_layers must be 1, 2 or 3, got {}", self.spatial_layers));
        }
        if !(1..=2).contains(&self.lstm_layers) {
            return bad(format!("student lstm_layers must be 1 or 2, got {}", self.lstm_layers));
        }
        if self.graph_hidden == 0 || self.lstm_hidden == 0 || self.repr_dim == 0 || self.frames == 0 {
            return bad("student widths and frame count must be positive".into());
        }
        Ok(())
    }

    fn frame_dim(&self) -> usize {
        BODY_JOINTS * self.graph_hidden
    }
}

const TEMPORAL_WIDTH: usize = 256;
const ATTENTION_KEY: usize = 64;

#[derive(Clone, Debug)]
enum Spatial {
    Gat(Vec<GatLayer>),
    Gcn(Vec<GcnLayer>),
}

#[derive(Clone, Debug)]
enum Temporal {
    Lstm(BiLstm),
    Tcn { w1: ParamId, b1: ParamId, w2: ParamId, b2: ParamId },
    Attention { pos: ParamId, q: Linear, k: Linear, v: Linear },
}

#[derive(Clone, Debug)]
pub struct Student<R> {
    pub config: StudentConfig,
    pub num_actions: usize,
    pub params: ParamStore<R>,
    graph: SkeletonGraph,
    spatial: Spatial,
    temporal: Temporal,
    proj: Linear,
    pub heads: ChainHeads,
}

impl<R: Real> Student<R> {
    pub fn new(config: StudentConfig, num_actions: usize, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(init_seed, &[seed::hash_str("student")]);
        let mut store = ParamStore::new();
        let hid = config.graph_hidden;
        let spatial = match config.spatial {
            SpatialKind::Gat => Spatial::Gat(
                (0..config.spatial_layers)
                    .map(|l| {
                        let inp = if l == 0 { JOINT_FEATURES } else { hid };
                        GatLayer::new(&mut store, &format!("gat{}", l + 1), inp, hid, Activation::Elu, &mut rng)
                    })
                    .collect(),
            ),
            SpatialKind::Gcn => Spatial::Gcn(
                (0..config.spatial_layers)
                    .map(|l| {
                        let inp = if l == 0 { JOINT_FEATURES } else { hid };
                        GcnLayer::new(&mut store, &format!("gcn{}", l + 1), inp, hid, &mut rng)
                    })
                    .collect(),
            ),
        };
        let fd = config.frame_dim();
        let (temporal, readout) = match config.temporal {
            TemporalKind::Bilstm => {
                let lstm = BiLstm::new(&mut store, "lstm", fd, config.lstm_hidden, config.lstm_layers, &mut rng);
                (Temporal::Lstm(lstm), 2 * config.lstm_hidden)
            }
            TemporalKind::Tcn => {
                let w = TEMPORAL_WIDTH;
                let w1 = store.add("tcn1.weight", glorot(&[w, fd, 3, 1, 1], fd * 3, w * 3, &mut rng));
                let b1 = store.add("tcn1.bias", Tensor::zeros(&[1, w, 1, 1, 1]));
                let w2 = store.add("tcn2.weight", glorot(&[w, w, 3, 1, 1], w * 3, w * 3, &mut rng));
                let b2 = store.add("tcn2.bias", Tensor::zeros(&[1, w, 1, 1, 1]));
                (Temporal::Tcn { w1, b1, w2, b2 }, w)
            }
            TemporalKind::Attention => {
                let pos = store.add("attn.pos", uniform(&[config.frames, fd], 0.02, &mut rng));
                let q = Linear::new(&mut store, "attn.q", fd, ATTENTION_KEY, false, &mut rng);
                let k = Linear::new(&mut store, "attn.k", fd, ATTENTION_KEY, false, &mut rng);
                let v = Linear::new(&mut store, "attn.v", fd, TEMPORAL_WIDTH, true, &mut rng);
                (Temporal::Attention { pos, q, k, v }, TEMPORAL_WIDTH)
            }
        };
        let proj = Linear::new(&mut store, "proj", readout, config.repr_dim, true, &mut rng);
        let heads = ChainHeads::new(&mut store, "heads", config.repr_dim, num_actions, &mut rng);
        Ok(Student { config, num_actions, params: store, graph: SkeletonGraph::coco(), spatial, temporal, proj, heads })
    }

    /// Exact learnable scalar count, heads included.
    pub fn count_params(&self) -> usize {
        self.params.numel()
    }

    /// Parameters of the temporal encoder alone.
    pub fn temporal_params(&self) -> usize {
        match &self.temporal {
            Temporal::Lstm(l) => l.num_params(),
            Temporal::Tcn { w1, b1, w2, b2 } => [w1, b1, w2, b2].iter().map(|&&id| self.params.get(id).numel()).sum(),
            Temporal::Attention { pos, q, k, v } => {
                self.params.get(*pos).numel() + q.num_params() + k.num_params() + v.num_params()
            }
        }
    }

    pub fn gat_layers(&self) -> &[GatLayer] {
        match &self.spatial {
            Spatial::Gat(l) => l,
            Spatial::Gcn(_) => &[],
        }
    }

    /// `[B, T, 17, 3]` input buffer of body `(x, y, c)` features.
    pub fn batch_input(seqs: &[&PoseSequence]) -> (Vec<usize>, Vec<R>) {
        let t = seqs.first().map_or(0, |s| s.len());
        let data = seqs.iter().flat_map(|s| s.body_features()).map(R::from_f64_lossy).collect();
        (vec![seqs.len(), t, BODY_JOINTS, JOINT_FEATURES], data)
    }

    /// Per-frame node embeddings `[B·T, 17, hidden]`.
    pub fn spatial_forward(&self, tape: &mut Tape<R>, p: &Bound, x: Var) -> Result<Var> {
        let shape = tape.shape(x)?.to_vec();
        if shape.len() != 4 || shape[2] != BODY_JOINTS || shape[3] != JOINT_FEATURES {
            return Err(Error::Contract(format!("student input must be [B, T, 17, 3], got {:?}", shape)));
        }
        let mut h = tape.reshape(x, &[shape[0] * shape[1], BODY_JOINTS, JOINT_FEATURES])?;
        match &self.spatial {
            Spatial::Gat(layers) => {
                for layer in layers {
                    h = layer.forward(tape, p, h, &self.graph)?.0;
                }
            }
            Spatial::Gcn(layers) => {
                for layer in layers {
                    h = layer.forward(tape, p, h, &self.graph)?;
                }
            }
        }
        Ok(h)
    }

    /// Social representation `[B, repr_dim]` for input `[B, T, 17, 3]`.
    pub fn forward(&self, tape: &mut Tape<R>, p: &Bound, x: Var) -> Result<Var> {
        let shape = tape.shape(x)?.to_vec();
        let (b, t) = (shape[0], shape[1]);
        let nodes = self.spatial_forward(tape, p, x)?;
        let fd = self.config.frame_dim();
        let frames = tape.reshape(nodes, &[b, t, fd])?;
        let pooled = match &self.temporal {
            Temporal::Lstm(lstm) => lstm.forward(tape, p, frames)?,
            Temporal::Tcn { w1, b1, w2, b2 } => {
                let x = tape.permute(frames, &[0, 2, 1])?;
                let x = tape.reshape(x, &[b, fd, t, 1, 1])?;
                let x = tape.conv3d(x, p[*w1], [1, 1, 1], [1, 0, 0])?;
                let x = tape.add(x, p[*b1])?;
                let x = tape.relu(x)?;
                let x = tape.conv3d(x, p[*w2], [1, 1, 1], [1, 0, 0])?;
                let x = tape.add(x, p[*b2])?;
                let x = tape.relu(x)?;
                let x = tape.reshape(x, &[b, TEMPORAL_WIDTH, t])?;
                tape.mean_axis(x, 2, false)?
            }
            Temporal::Attention { pos, q, k, v } => {
                if t != self.config.frames {
                    return Err(Error::Contract(format!(
                        "attention encoder was built for {} frames, got {}",
                        self.config.frames, t
                    )));
                }
                let x = tape.add(frames, p[*pos])?;
                let qv = q.forward(tape, p, x)?;
                let kv = k.forward(tape, p, x)?;
                let vv = v.forward(tape, p, x)?;
                let kt = tape.transpose(kv)?;
                let scores = tape.matmul(qv, kt)?;
                let scores = tape.scale(scores, R::from_f64_lossy(1.0 / (ATTENTION_KEY as f64).sqrt()))?;
                let att = tape.softmax(scores, 2)?;
                let mixed = tape.matmul(att, vv)?;
                let mixed = tape.elu(mixed, R::one())?;
                tape.mean_axis(mixed, 1, false)?
            }
        };
        self.proj.forward(tape, p, pooled).map_err(Into::into)
    }

    /// Representation and chained logits.
    pub fn forward_full(&self, tape: &mut Tape<R>, p: &Bound, x: Var) -> Result<(Var, ChainLogits)> {
        let r = self.forward(tape, p, x)?;
        let logits = self.heads.forward(tape, p, r)?;
        Ok((r, logits))
    }

    /// Inference helper: representations `[B, repr_dim]` of `seqs`.
    pub fn represent(&self, seqs: &[&PoseSequence]) -> Result<Vec<R>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let (shape, data) = Self::batch_input(seqs);
        let x = tape.constant(&shape, data)?;
        let r = self.forward(&mut tape, &p, x)?;
        Ok(tape.value(r)?.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_gat(x: &[f64], nodes: usize, edges: &[(usize, usize)], layer_setup: impl Fn(&mut ParamStore<f64>, &GatLayer)) -> (Vec<f64>, Vec<f64>) {
        let graph = SkeletonGraph::new(nodes, edges).unwrap();
        let mut store = ParamStore::new();
        let f = x.len() / nodes;
        let layer = GatLayer::new(&mut store, "g", f, f, Activation::Identity, &mut seed::rng(2, &[]));
        layer_setup(&mut store, &layer);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let xv = tape.constant(&[1, nodes, f], x.to_vec()).unwrap();
        let (out, att) = layer.forward(&mut tape, &p, xv, &graph).unwrap();
        (tape.value(out).unwrap().to_vec(), tape.value(att).unwrap().to_vec())
    }

    fn identity(f: usize) -> Vec<f64> {
        (0..f * f).map(|i| if i % (f + 1) == 0 { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn single_node_self_loop_is_linear() {
        let (out, att) = run_gat(&[0.3, -0.7], 1, &[], |s, l| {
            s.set_data(l.weight, identity(2)).unwrap();
            s.set_data(l.att_src, vec![0.0; 2]).unwrap();
            s.set_data(l.att_dst, vec![0.0; 2]).unwrap();
        });
        assert_eq!(att, vec![1.0]);
        assert_eq!(out, vec![0.3, -0.7]);
    }

    #[test]
    fn equal_neighbours_share_attention() {
        let (_, att) = run_gat(&[0.5, 0.5, 0.5, 0.5], 2, &[(0, 1)], |_, _| {});
        assert!(att.iter().all(|a| (a - 0.5).abs() < 1e-12));
    }

    #[test]
    fn coco_graph_is_connected_with_self_loops() {
        let g = SkeletonGraph::coco();
        assert!(g.is_connected());
        assert!((0..17).all(|i| g.connected(i, i)));
        assert!(g.connected(9, 7) && !g.connected(9, 10));
    }

    #[test]
    fn default_parameter_budget() {
        let s = Student::<f32>::new(StudentConfig::default(), 10, 0).unwrap();
        let per_direction = 4 * (272 * 128 + 128 * 128 + 2 * 128);
        assert_eq!(s.temporal_params(), 2 * per_direction);
        assert_eq!(s.gat_layers()[0].num_params(), 80);
        assert_eq!(s.gat_layers()[1].num_params(), 288);
        assert_eq!(s.count_params(), 80 + 288 + 2 * per_direction + 256 * 16 + 16 + s.heads.num_params());
        assert!((400_000..=460_000).contains(&s.count_params()));
    }

    #[test]
    fn zero_lstm_reads_out_zero() {
        let mut store = ParamStore::<f64>::new();
        let lstm = BiLstm::new(&mut store, "l", 4, 3, 1, &mut seed::rng(0, &[]));
        for id in store.ids().collect::<Vec<_>>() {
            let n = store.get(id).numel();
            store.set_data(id, vec![0.0; n]).unwrap();
        }
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let x = tape.constant(&[2, 5, 4], (0..40).map(|i| i as f64 * 0.1).collect()).unwrap();
        let r = lstm.forward(&mut tape, &p, x).unwrap();
        assert_eq!(tape.shape(r).unwrap(), &[2, 6]);
        assert!(tape.value(r).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reverse_direction_mirrors_forward() {
        let mut store = ParamStore::<f64>::new();
        let dir = LstmDirection::new(&mut store, "d", 2, 3, &mut seed::rng(4, &[]));
        let x: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).sin()).collect();
        let reversed: Vec<f64> = x.chunks(2).rev().flatten().copied().collect();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let xf = tape.constant(&[1, 4, 2], x).unwrap();
        let xr = tape.constant(&[1, 4, 2], reversed).unwrap();
        let hf = dir.run(&mut tape, &p, xf, false).unwrap();
        let hr = dir.run(&mut tape, &p, xr, true).unwrap();
        for t in 0..4 {
            assert_eq!(tape.value(hf[t]).unwrap(), tape.value(hr[3 - t]).unwrap());
        }
    }

    #[test]
    fn every_variant_emits_the_representation() {
        let configs = [
            StudentConfig::default(),
            StudentConfig { spatial_layers: 1, ..Default::default() },
            StudentConfig { spatial_layers: 3, ..Default::default() },
            StudentConfig { spatial: SpatialKind::Gcn, ..Default::default() },
            StudentConfig { lstm_layers: 2, ..Default::default() },
            StudentConfig { temporal: TemporalKind::Tcn, ..Default::default() },
            StudentConfig { temporal: TemporalKind::Attention, ..Default::default() },
        ];
        let seq = PoseSequence {
            id: "z".into(),
            fps: 10,
            frames: vec![crate::pose::Frame::body_only(vec![crate::pose::Keypoint::MISSING; 17]); 10],
        };
        for cfg in configs {
            let s = Student::<f32>::new(cfg.clone(), 6, 1).unwrap();
            let r = s.represent(&[&seq, &seq]).unwrap();
            assert_eq!(r.len(), 32, "{cfg:?}");
            assert!(r.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn bad_layer_counts_rejected() {
        let cfg = StudentConfig { spatial_layers: 4, ..Default::default() };
        assert!(matches!(Student::<f32>::new(cfg, 10, 0), Err(Error::Config(_))));
    }
}
