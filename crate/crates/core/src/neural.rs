//! Small graph encoders over memory graphs and the Q-heads built on them.
//!
//! All parameters live in one flat vector whose layout is fixed by the
//! encoder configuration and the vocabulary sizes. Forward passes keep the
//! intermediate values the hand-written backward pass needs.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ParseKindError, Result};
use crate::kg::{EntityId, GraphView, MemoryItem, Vocab};
use crate::seed;

/// Number of per-edge annotation features fed to the StarE-lite encoder.
pub const QUALIFIER_FEATURES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    #[default]
    Gcn,
    Rgcn,
    StareLite,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 3] = [EncoderKind::Gcn, EncoderKind::Rgcn, EncoderKind::StareLite];

    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::Gcn => "gcn",
            EncoderKind::Rgcn => "rgcn",
            EncoderKind::StareLite => "stare_lite",
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EncoderKind {
    type Err = ParseKindError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "gcn" => Ok(EncoderKind::Gcn),
            "rgcn" | "r_gcn" => Ok(EncoderKind::Rgcn),
            "stare_lite" | "stare" => Ok(EncoderKind::StareLite),
            _ => Err(ParseKindError::new("encoder kind", s)),
        }
    }
}

/// Per-item rows or one pooled row broadcast to all items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    Local,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    #[serde(default)]
    pub kind: EncoderKind,
    #[serde(default = "default_width")]
    pub dim: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    /// Width of the Q-head's hidden layer.
    #[serde(default = "default_width")]
    pub hidden: usize,
    /// Basis count of the R-GCN decomposition.
    #[serde(default = "default_bases")]
    pub bases: usize,
}

fn default_width() -> usize {
    16
}

fn default_layers() -> usize {
    2
}

fn default_bases() -> usize {
    20
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::new(EncoderKind::Gcn)
    }
}

impl EncoderConfig {
    pub fn new(kind: EncoderKind) -> Self {
        Self {
            kind,
            dim: default_width(),
            layers: default_layers(),
            hidden: default_width(),
            bases: default_bases(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("dim", self.dim), ("hidden", self.hidden), ("bases", self.bases)] {
            if v == 0 {
                return Err(Error::config(format!("encoder.{key}"), "must be positive"));
            }
        }
        Ok(())
    }
}

/// Name and shape of one parameter block, as stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockShape {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Block {
    shape: BlockShape,
    range: Range<usize>,
    bias: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct LayerLayout {
    w: usize,
    b: usize,
    basis: usize,
    coeff: usize,
    qual: usize,
    rel_w: usize,
    rel_b: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    entity: usize,
    relation: usize,
    layers: Vec<LayerLayout>,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    blocks: Vec<Block>,
    len: usize,
}

impl Layout {
    fn new(cfg: &EncoderConfig, num_entities: usize, num_relations: usize) -> Self {
        let d = cfg.dim;
        let mut blocks = Vec::new();
        let mut len = 0;
        let mut add = |name: String, shape: &[usize], bias: bool| {
            let start = len;
            len += shape.iter().product::<usize>();
            blocks.push(Block {
                shape: BlockShape {
                    name,
                    shape: shape.to_vec(),
                },
                range: start..len,
                bias,
            });
            start
        };
        let entity = add("entity_embeddings".into(), &[num_entities, d], false);
        let relation = add("relation_embeddings".into(), &[num_relations, d], false);
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let mut lay = LayerLayout {
                w: add(format!("layer{l}.weight"), &[d, d], false),
                b: add(format!("layer{l}.bias"), &[d], true),
                ..LayerLayout::default()
            };
            match cfg.kind {
                EncoderKind::Gcn => {}
                EncoderKind::Rgcn => {
                    lay.basis = add(format!("layer{l}.bases"), &[cfg.bases, d, d], false);
                    lay.coeff =
                        add(format!("layer{l}.coefficients"), &[2 * num_relations, cfg.bases], false);
                }
                EncoderKind::StareLite => {
                    lay.qual = add(format!("layer{l}.qualifier"), &[d, QUALIFIER_FEATURES], false);
                }
            }
            lay.rel_w = add(format!("layer{l}.relation_weight"), &[d, d], false);
            lay.rel_b = add(format!("layer{l}.relation_bias"), &[d], true);
            layers.push(lay);
        }
        let w1 = add("head.hidden_weight".into(), &[cfg.hidden, 2 * d], false);
        let b1 = add("head.hidden_bias".into(), &[cfg.hidden], true);
        let w2 = add("head.out_weight".into(), &[2, cfg.hidden], false);
        let b2 = add("head.out_bias".into(), &[2], true);
        Self {
            entity,
            relation,
            layers,
            w1,
            b1,
            w2,
            b2,
            blocks,
            len,
        }
    }
}

/// Flat parameter vector of one encoder plus Q-head.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    config: EncoderConfig,
    num_entities: usize,
    num_relations: usize,
    seed: u64,
    layout: Layout,
    values: Vec<f64>,
}

impl ParameterSet {
    /// Weights and embeddings uniform in `±1/sqrt(dim)`, biases zero.
    pub fn init(
        config: EncoderConfig,
        num_entities: usize,
        num_relations: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut params = Self::zeros(config, num_entities, num_relations)?;
        params.seed = seed;
        let bound = 1.0 / (config.dim as f64).sqrt();
        let mut rng = seed::stream(seed, &[seed::tag("params")]);
        for block in &params.layout.blocks {
            if block.bias {
                continue;
            }
            for v in &mut params.values[block.range.clone()] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(params)
    }

    pub fn for_vocab(config: EncoderConfig, vocab: &Vocab, seed: u64) -> Result<Self> {
        Self::init(config, vocab.num_entities(), vocab.num_relations(), seed)
    }

    pub fn zeros(config: EncoderConfig, num_entities: usize, num_relations: usize) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config, num_entities, num_relations);
        Ok(Self {
            config,
            num_entities,
            num_relations,
            seed: 0,
            values: vec![0.0; layout.len],
            layout,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn kind(&self) -> EncoderKind {
        self.config.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    /// Total trainable parameter count.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn blocks(&self) -> Vec<BlockShape> {
        self.layout.blocks.iter().map(|b| b.shape.clone()).collect()
    }

    /// Index range of the named block.
    pub fn block(&self, name: &str) -> Option<Range<usize>> {
        self.layout
            .blocks
            .iter()
            .find(|b| b.shape.name == name)
            .map(|b| b.range.clone())
    }

    /// Same layout, all values zero.
    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }

    /// Overwrites every value with `other`'s. Layouts must match.
    pub fn copy_from(&mut self, other: &ParameterSet) {
        assert_eq!(self.layout, other.layout, "parameter layouts differ");
        self.values.copy_from_slice(&other.values);
    }

    fn slice(&self, offset: usize, len: usize) -> &[f64] {
        &self.values[offset..offset + len]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct EdgeRef {
    head: usize,
    tail: usize,
    rel: usize,
    features: [f64; QUALIFIER_FEATURES],
}

/// Node and relation states after message passing, with the forward cache.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub nodes: Vec<EntityId>,
    dim: usize,
    edges: Vec<EdgeRef>,
    /// `1 + degree` per node; every edge counts once at each endpoint.
    norm: Vec<f64>,
    /// R-GCN incoming message counts, `n × 2|R|`.
    counts: Vec<u32>,
    /// Node states before each layer and after the last, `n × d` each.
    states: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    /// GCN and StarE-lite: normalized aggregate per layer.
    agg: Vec<Vec<f64>>,
    /// R-GCN: per-relation mean messages, `n × 2|R| × d`.
    means: Vec<Vec<f64>>,
    /// R-GCN: basis-mixed messages, `n × bases × d`.
    mixed: Vec<Vec<f64>>,
    rel_states: Vec<Vec<f64>>,
    rel_pre: Vec<Vec<f64>>,
}

impl Encoding {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Final node states, one row per entry of `nodes`.
    pub fn embeddings(&self) -> &[f64] {
        self.states.last().expect("at least the input states")
    }

    pub fn row(&self, node: usize) -> &[f64] {
        &self.embeddings()[node * self.dim..(node + 1) * self.dim]
    }

    pub fn embedding(&self, entity: EntityId) -> Option<&[f64]> {
        let i = self.nodes.binary_search(&entity).ok()?;
        Some(self.row(i))
    }

    /// Final relation states, one row per vocabulary relation.
    pub fn relations(&self) -> &[f64] {
        self.rel_states.last().expect("at least the input states")
    }

    /// Smallest absolute pre-activation over every ReLU in the encoder.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.pre
            .iter()
            .chain(&self.rel_pre)
            .flatten()
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    /// Accumulates parameter gradients given `d_out`, the gradient of the
    /// loss with respect to [`Encoding::embeddings`].
    pub fn backward(&self, params: &ParameterSet, d_out: &[f64], grad: &mut [f64]) {
        let d = self.dim;
        let n = self.nodes.len();
        let nr = params.num_relations;
        let kinds = 2 * nr;
        let cfg = params.config;
        assert_eq!(d_out.len(), n * d);
        let mut dh = d_out.to_vec();
        let mut drel = vec![0.0; nr * d];
        for l in (0..cfg.layers).rev() {
            let lay = params.layout.layers[l];
            let h = &self.states[l];

            let mut drel_prev = vec![0.0; nr * d];
            let rel_w = params.slice(lay.rel_w, d * d);
            for j in 0..nr {
                let row = j * d..(j + 1) * d;
                let dpre = relu_grad(&drel[row.clone()], &self.rel_pre[l][row.clone()]);
                outer_acc(&mut grad[lay.rel_w..lay.rel_w + d * d], &dpre, &self.rel_states[l][row.clone()]);
                add_into(&mut grad[lay.rel_b..lay.rel_b + d], &dpre);
                matvec_t_acc(rel_w, d, d, &dpre, &mut drel_prev[row]);
            }

            let dpre = relu_grad(&dh, &self.pre[l]);
            let mut dh_prev = vec![0.0; n * d];
            match cfg.kind {
                EncoderKind::Gcn | EncoderKind::StareLite => {
                    let w = params.slice(lay.w, d * d);
                    let agg = &self.agg[l];
                    let mut g = vec![0.0; n * d];
                    for v in 0..n {
                        let row = v * d..(v + 1) * d;
                        outer_acc(&mut grad[lay.w..lay.w + d * d], &dpre[row.clone()], &agg[row.clone()]);
                        add_into(&mut grad[lay.b..lay.b + d], &dpre[row.clone()]);
                        matvec_t_acc(w, d, d, &dpre[row.clone()], &mut g[row.clone()]);
                        for x in &mut g[row] {
                            *x /= self.norm[v];
                        }
                    }
                    add_into(&mut dh_prev, &g);
                    for e in &self.edges {
                        for k in 0..d {
                            let to_tail = g[e.tail * d + k];
                            let to_head = g[e.head * d + k];
                            dh_prev[e.head * d + k] += to_tail;
                            dh_prev[e.tail * d + k] += to_head;
                            if cfg.kind == EncoderKind::StareLite {
                                let dr = to_tail - to_head;
                                drel_prev[e.rel * d + k] += dr;
                                for (f, feat) in e.features.iter().enumerate() {
                                    grad[lay.qual + k * QUALIFIER_FEATURES + f] += dr * feat;
                                }
                            }
                        }
                    }
                }
                EncoderKind::Rgcn => {
                    let nb = cfg.bases;
                    let w0 = params.slice(lay.w, d * d);
                    let basis = params.slice(lay.basis, nb * d * d);
                    let coeff = params.slice(lay.coeff, kinds * nb);
                    let means = &self.means[l];
                    let mixed = &self.mixed[l];
                    let mut dmeans = vec![0.0; n * kinds * d];
                    let mut du = vec![0.0; d];
                    for v in 0..n {
                        let row = v * d..(v + 1) * d;
                        let dp = &dpre[row.clone()];
                        outer_acc(&mut grad[lay.w..lay.w + d * d], dp, &h[row.clone()]);
                        add_into(&mut grad[lay.b..lay.b + d], dp);
                        matvec_t_acc(w0, d, d, dp, &mut dh_prev[row]);
                        for b in 0..nb {
                            let u = &mixed[(v * nb + b) * d..(v * nb + b + 1) * d];
                            let vb = b * d * d;
                            outer_acc(&mut grad[lay.basis + vb..lay.basis + vb + d * d], dp, u);
                            du.iter_mut().for_each(|x| *x = 0.0);
                            matvec_t_acc(&basis[vb..vb + d * d], d, d, dp, &mut du);
                            for k in 0..kinds {
                                if self.counts[v * kinds + k] == 0 {
                                    continue;
                                }
                                let m = &means[(v * kinds + k) * d..(v * kinds + k + 1) * d];
                                grad[lay.coeff + k * nb + b] += dot(&du, m);
                                let c = coeff[k * nb + b];
                                let dm = &mut dmeans[(v * kinds + k) * d..(v * kinds + k + 1) * d];
                                for (x, y) in dm.iter_mut().zip(&du) {
                                    *x += c * y;
                                }
                            }
                        }
                    }
                    for e in &self.edges {
                        let kt = e.tail * kinds + 2 * e.rel;
                        let kh = e.head * kinds + 2 * e.rel + 1;
                        let ct = f64::from(self.counts[kt]);
                        let ch = f64::from(self.counts[kh]);
                        for k in 0..d {
                            dh_prev[e.head * d + k] += dmeans[kt * d + k] / ct;
                            dh_prev[e.tail * d + k] += dmeans[kh * d + k] / ch;
                        }
                    }
                }
            }
            dh = dh_prev;
            drel = drel_prev;
        }
        for (v, node) in self.nodes.iter().enumerate() {
            let off = params.layout.entity + node.index() * d;
            add_into(&mut grad[off..off + d], &dh[v * d..(v + 1) * d]);
        }
        let off = params.layout.relation;
        add_into(&mut grad[off..off + nr * d], &drel);
    }
}

/// Runs `layers` rounds of message passing over `graph`.
pub fn encode(graph: &GraphView, params: &ParameterSet) -> Result<Encoding> {
    let cfg = params.config;
    let d = cfg.dim;
    let n = graph.nodes.len();
    let nr = params.num_relations;
    let kinds = 2 * nr;
    for &node in &graph.nodes {
        if node.index() >= params.num_entities {
            return Err(Error::Vocabulary(format!(
                "entity id {} outside the parameter vocabulary of {}",
                node.0, params.num_entities
            )));
        }
    }
    let mut edges = Vec::with_capacity(graph.edges.len());
    for e in &graph.edges {
        let t = e.triple;
        if t.relation.index() >= nr {
            return Err(Error::Vocabulary(format!(
                "relation id {} outside the parameter vocabulary of {nr}",
                t.relation.0
            )));
        }
        let (Some(head), Some(tail)) = (graph.node_index(t.head), graph.node_index(t.tail)) else {
            return Err(Error::usage("edge endpoint missing from graph nodes"));
        };
        edges.push(EdgeRef {
            head,
            tail,
            rel: t.relation.index(),
            features: e.features,
        });
    }

    let mut norm = vec![1.0; n];
    let mut counts = vec![0u32; n * kinds];
    for e in &edges {
        norm[e.head] += 1.0;
        norm[e.tail] += 1.0;
        counts[e.tail * kinds + 2 * e.rel] += 1;
        counts[e.head * kinds + 2 * e.rel + 1] += 1;
    }

    let mut h0 = Vec::with_capacity(n * d);
    for node in &graph.nodes {
        let off = params.layout.entity + node.index() * d;
        h0.extend_from_slice(params.slice(off, d));
    }
    let mut enc = Encoding {
        nodes: graph.nodes.clone(),
        dim: d,
        edges,
        norm,
        counts,
        states: vec![h0],
        pre: Vec::new(),
        agg: Vec::new(),
        means: Vec::new(),
        mixed: Vec::new(),
        rel_states: vec![params.slice(params.layout.relation, nr * d).to_vec()],
        rel_pre: Vec::new(),
    };

    for l in 0..cfg.layers {
        let lay = params.layout.layers[l];
        let h = &enc.states[l];
        let r = &enc.rel_states[l];
        let mut pre = vec![0.0; n * d];
        match cfg.kind {
            EncoderKind::Gcn | EncoderKind::StareLite => {
                let mut agg = h.clone();
                let qual = params.slice(lay.qual, d * QUALIFIER_FEATURES);
                let mut msg = vec![0.0; d];
                for e in &enc.edges {
                    if cfg.kind == EncoderKind::StareLite {
                        msg.copy_from_slice(&r[e.rel * d..(e.rel + 1) * d]);
                        matvec_acc(qual, d, QUALIFIER_FEATURES, &e.features, &mut msg);
                    }
                    for k in 0..d {
                        agg[e.tail * d + k] += h[e.head * d + k] + msg[k];
                        agg[e.head * d + k] += h[e.tail * d + k] - msg[k];
                    }
                }
                let w = params.slice(lay.w, d * d);
                let b = params.slice(lay.b, d);
                for v in 0..n {
                    let row = v * d..(v + 1) * d;
                    for x in &mut agg[row.clone()] {
                        *x /= enc.norm[v];
                    }
                    pre[row.clone()].copy_from_slice(b);
                    matvec_acc(w, d, d, &agg[row.clone()], &mut pre[row]);
                }
                enc.agg.push(agg);
            }
            EncoderKind::Rgcn => {
                let nb = cfg.bases;
                let mut means = vec![0.0; n * kinds * d];
                for e in &enc.edges {
                    let kt = e.tail * kinds + 2 * e.rel;
                    let kh = e.head * kinds + 2 * e.rel + 1;
                    for k in 0..d {
                        means[kt * d + k] += h[e.head * d + k];
                        means[kh * d + k] += h[e.tail * d + k];
                    }
                }
                for (slot, &c) in enc.counts.iter().enumerate() {
                    if c > 1 {
                        for x in &mut means[slot * d..(slot + 1) * d] {
                            *x /= f64::from(c);
                        }
                    }
                }
                let coeff = params.slice(lay.coeff, kinds * nb);
                let basis = params.slice(lay.basis, nb * d * d);
                let w0 = params.slice(lay.w, d * d);
                let b = params.slice(lay.b, d);
                let mut mixed = vec![0.0; n * nb * d];
                for v in 0..n {
                    let row = v * d..(v + 1) * d;
                    pre[row.clone()].copy_from_slice(b);
                    matvec_acc(w0, d, d, &h[row.clone()], &mut pre[row.clone()]);
                    for bi in 0..nb {
                        let u = &mut mixed[(v * nb + bi) * d..(v * nb + bi + 1) * d];
                        for k in 0..kinds {
                            if enc.counts[v * kinds + k] == 0 {
                                continue;
                            }
                            let c = coeff[k * nb + bi];
                            let m = &means[(v * kinds + k) * d..(v * kinds + k + 1) * d];
                            for (x, y) in u.iter_mut().zip(m) {
                                *x += c * y;
                            }
                        }
                        let vb = bi * d * d;
                        let u = &mixed[(v * nb + bi) * d..(v * nb + bi + 1) * d];
                        matvec_acc(&basis[vb..vb + d * d], d, d, u, &mut pre[row.clone()]);
                    }
                }
                enc.means.push(means);
                enc.mixed.push(mixed);
            }
        }
        let next: Vec<f64> = pre.iter().map(|&x| x.max(0.0)).collect();

        let rel_w = params.slice(lay.rel_w, d * d);
        let rel_b = params.slice(lay.rel_b, d);
        let mut rpre = vec![0.0; nr * d];
        for j in 0..nr {
            let row = j * d..(j + 1) * d;
            rpre[row.clone()].copy_from_slice(rel_b);
            matvec_acc(rel_w, d, d, &r[row.clone()], &mut rpre[row]);
        }
        let rnext: Vec<f64> = rpre.iter().map(|&x| x.max(0.0)).collect();

        enc.pre.push(pre);
        enc.states.push(next);
        enc.rel_pre.push(rpre);
        enc.rel_states.push(rnext);
    }
    Ok(enc)
}

/// Q-values of one memory state with everything needed for backward.
#[derive(Debug, Clone, PartialEq)]
pub struct QForward {
    mode: HeadMode,
    q: Vec<[f64; 2]>,
    encoding: Encoding,
    /// Head and tail node index of every item.
    endpoints: Vec<(usize, usize)>,
    /// Head inputs, one `2d` row per head evaluation.
    z: Vec<f64>,
    /// Hidden pre-activations, one row per head evaluation.
    a1: Vec<f64>,
}

impl QForward {
    /// `n × 2` in local mode, `1 × 2` in global mode. Column 0 is drop.
    pub fn rows(&self) -> &[[f64; 2]] {
        &self.q
    }

    pub fn mode(&self) -> HeadMode {
        self.mode
    }

    pub fn encoding(&self) -> &Encoding {
        &self.encoding
    }

    /// Value of `action` for item `i`; global mode shares its single row.
    pub fn value(&self, i: usize, action: usize) -> f64 {
        match self.mode {
            HeadMode::Local => self.q[i][action],
            HeadMode::Global => self.q[0][action],
        }
    }

    pub fn min_abs_preactivation(&self) -> f64 {
        self.a1
            .iter()
            .fold(self.encoding.min_abs_preactivation(), |m, v| m.min(v.abs()))
    }

    /// Accumulates parameter gradients for `dq`, shaped like [`QForward::rows`].
    pub fn backward(&self, params: &ParameterSet, dq: &[[f64; 2]], grad: &mut [f64]) {
        assert_eq!(dq.len(), self.q.len(), "gradient rows do not match outputs");
        assert_eq!(grad.len(), params.len());
        let cfg = params.config;
        let (d, hid) = (cfg.dim, cfg.hidden);
        let lay = &params.layout;
        let w1 = params.slice(lay.w1, hid * 2 * d);
        let w2 = params.slice(lay.w2, 2 * hid);
        let n_nodes = self.encoding.nodes.len();
        let mut dh = vec![0.0; n_nodes * d];
        let mut da1 = vec![0.0; hid];
        let mut dz = vec![0.0; 2 * d];
        for (row, g) in dq.iter().enumerate() {
            if g[0] == 0.0 && g[1] == 0.0 {
                continue;
            }
            let a1 = &self.a1[row * hid..(row + 1) * hid];
            let h1: Vec<f64> = a1.iter().map(|&x| x.max(0.0)).collect();
            outer_acc(&mut grad[lay.w2..lay.w2 + 2 * hid], g, &h1);
            add_into(&mut grad[lay.b2..lay.b2 + 2], g);
            da1.iter_mut().for_each(|x| *x = 0.0);
            matvec_t_acc(w2, 2, hid, g, &mut da1);
            for (x, a) in da1.iter_mut().zip(a1) {
                if *a <= 0.0 {
                    *x = 0.0;
                }
            }
            let z = &self.z[row * 2 * d..(row + 1) * 2 * d];
            outer_acc(&mut grad[lay.w1..lay.w1 + hid * 2 * d], &da1, z);
            add_into(&mut grad[lay.b1..lay.b1 + hid], &da1);
            dz.iter_mut().for_each(|x| *x = 0.0);
            matvec_t_acc(w1, hid, 2 * d, &da1, &mut dz);
            match self.mode {
                HeadMode::Local => {
                    let (hi, ti) = self.endpoints[row];
                    add_into(&mut dh[hi * d..(hi + 1) * d], &dz[..d]);
                    add_into(&mut dh[ti * d..(ti + 1) * d], &dz[d..]);
                }
                HeadMode::Global => {
                    let inv = 1.0 / self.endpoints.len() as f64;
                    for &(hi, ti) in &self.endpoints {
                        for k in 0..d {
                            dh[hi * d + k] += dz[k] * inv;
                            dh[ti * d + k] += dz[d + k] * inv;
                        }
                    }
                }
            }
        }
        self.encoding.backward(params, &dh, grad);
    }
}

/// Per-item Q rows: `Q-head([h_head ‖ h_tail])` for every item.
pub fn q_values_local(graph: &GraphView, items: &[MemoryItem], params: &ParameterSet) -> Result<QForward> {
    q_values(graph, items, params, HeadMode::Local)
}

/// One Q row from the mean of all item representations.
pub fn q_values_global(graph: &GraphView, items: &[MemoryItem], params: &ParameterSet) -> Result<QForward> {
    q_values(graph, items, params, HeadMode::Global)
}

pub fn q_values(
    graph: &GraphView,
    items: &[MemoryItem],
    params: &ParameterSet,
    mode: HeadMode,
) -> Result<QForward> {
    if mode == HeadMode::Global && items.is_empty() {
        return Err(Error::usage("global head needs at least one item"));
    }
    let encoding = encode(graph, params)?;
    let endpoints = items
        .iter()
        .map(|m| {
            match (graph.node_index(m.triple.head), graph.node_index(m.triple.tail)) {
                (Some(h), Some(t)) => Ok((h, t)),
                _ => Err(Error::usage("item endpoint missing from graph nodes")),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let cfg = params.config;
    let d = cfg.dim;
    let mut z = Vec::new();
    match mode {
        HeadMode::Local => {
            for &(h, t) in &endpoints {
                z.extend_from_slice(encoding.row(h));
                z.extend_from_slice(encoding.row(t));
            }
        }
        HeadMode::Global => {
            z = vec![0.0; 2 * d];
            for &(h, t) in &endpoints {
                add_into(&mut z[..d], encoding.row(h));
                add_into(&mut z[d..], encoding.row(t));
            }
            let inv = 1.0 / endpoints.len() as f64;
            z.iter_mut().for_each(|x| *x *= inv);
        }
    }
    let rows = z.len() / (2 * d);
    let lay = &params.layout;
    let hid = cfg.hidden;
    let w1 = params.slice(lay.w1, hid * 2 * d);
    let b1 = params.slice(lay.b1, hid);
    let w2 = params.slice(lay.w2, 2 * hid);
    let b2 = params.slice(lay.b2, 2);
    let mut a1 = vec![0.0; rows * hid];
    let mut q = Vec::with_capacity(rows);
    for row in 0..rows {
        let a = &mut a1[row * hid..(row + 1) * hid];
        a.copy_from_slice(b1);
        matvec_acc(w1, hid, 2 * d, &z[row * 2 * d..(row + 1) * 2 * d], a);
        let h1: Vec<f64> = a.iter().map(|&x| x.max(0.0)).collect();
        let mut out = [b2[0], b2[1]];
        matvec_acc(w2, 2, hid, &h1, &mut out);
        q.push(out);
    }
    Ok(QForward {
        mode,
        q,
        encoding,
        endpoints,
        z,
        a1,
    })
}

/// JSON checkpoint of a [`ParameterSet`] with its vocabulary and shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub encoder: EncoderConfig,
    pub seed: u64,
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    pub blocks: Vec<BlockShape>,
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub const VERSION: u32 = 1;

    pub fn new(params: &ParameterSet, vocab: &Vocab) -> Self {
        Self {
            version: Self::VERSION,
            encoder: params.config,
            seed: params.seed,
            entities: vocab.entity_labels().to_vec(),
            relations: vocab.relation_labels().to_vec(),
            blocks: params.blocks(),
            values: params.values.clone(),
        }
    }

    /// Rebuilds the parameters, rejecting a different vocabulary or layout.
    pub fn into_params(self, vocab: &Vocab) -> Result<ParameterSet> {
        if self.version != Self::VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        if self.entities != vocab.entity_labels() || self.relations != vocab.relation_labels() {
            return Err(Error::Vocabulary(format!(
                "checkpoint vocabulary ({} entities, {} relations) does not match the world ({}, {})",
                self.entities.len(),
                self.relations.len(),
                vocab.num_entities(),
                vocab.num_relations()
            )));
        }
        let mut params = ParameterSet::zeros(self.encoder, self.entities.len(), self.relations.len())?;
        if params.blocks() != self.blocks {
            return Err(Error::Checkpoint("parameter shapes do not match the encoder".into()));
        }
        if params.len() != self.values.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} values, found {}",
                params.len(),
                self.values.len()
            )));
        }
        params.seed = self.seed;
        params.values = self.values;
        Ok(params)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (x, y) in dst.iter_mut().zip(src) {
        *x += y;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out += W x` for row-major `W` of shape `rows × cols`.
fn matvec_acc(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        out[r] += dot(&w[r * cols..(r + 1) * cols], &x[..cols]);
    }
}

/// `out += Wᵀ g` for row-major `W` of shape `rows × cols`.
fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, g: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let gr = g[r];
        if gr == 0.0 {
            continue;
        }
        for (o, wv) in out[..cols].iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o += gr * wv;
        }
    }
}

/// `G += a bᵀ`.
fn outer_acc(g: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (r, &ar) in a.iter().enumerate() {
        if ar == 0.0 {
            continue;
        }
        for (x, bv) in g[r * cols..(r + 1) * cols].iter_mut().zip(b) {
            *x += ar * bv;
        }
    }
}

fn relu_grad(g: &[f64], pre: &[f64]) -> Vec<f64> {
    g.iter()
        .zip(pre)
        .map(|(&g, &p)| if p > 0.0 { g } else { 0.0 })
        .collect()
}
