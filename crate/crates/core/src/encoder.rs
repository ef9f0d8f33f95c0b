//! Knowledge-aware message passing (KMPNN) over heterogeneous graphs and a
//! plain bond-only encoder of the same family.
//!
//! One layer, for node `v` with in-messages `u -> v` over edge `e` of block `k`:
//!
//! ```text
//! m   = [h_u ; x_e] W_k
//! s   = leaky_relu(a_k . [h_v ; m])        alpha = softmax_v(s)
//! M_v = sum alpha m
//! z = sig(M Wz + h Uz + bz)   r = sig(M Wr + h Ur + br)
//! n = tanh(M Wn + (r*h) Un + bn)           h' = (1-z)*n + z*h
//! ```
//!
//! Message blocks and the gated update are tied across layers. The readout is
//! the mean of atom states followed by a linear map.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{AugmentMode, EdgeKind, HeteroGraph, NodeKind};
use crate::chem::{hash_str, Atom, BondOrder, Element, MolecularGraph};
use crate::kg::ELEMENT_RELATIONS;
use crate::kge::EmbeddingTable;
use crate::moiety::RelationLabel;
use crate::nn::{
    mat_vec_t_acc, outer_acc, rng_from_seed, sigmoid, vec_mat, Activation, NnError, ParamStore, Tensor2,
};

pub const ATOM_FEATURE_DIM: usize = 18;
const DEGREE_SLOTS: usize = 6;
/// Random property vectors use this width when no embedding table is given.
pub const RANDOM_PROPERTY_DIM: usize = 16;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("encoder `{encoder}` has no `{block}` message block")]
    MissingBlock { encoder: String, block: &'static str },
    #[error("encoder `{encoder}` has no input projection for {kind} nodes")]
    MissingInput { encoder: String, kind: &'static str },
    #[error("graph has no atom nodes")]
    NoAtoms,
    #[error("no feature for {kind} label `{label}`")]
    MissingLabel { kind: &'static str, label: String },
    #[error("feature width {found} for {what}, expected {expected}")]
    FeatureWidth {
        what: &'static str,
        found: usize,
        expected: usize,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
}

// ---------------------------------------------------------------- features

pub fn atom_features(atom: &Atom, degree: usize) -> Vec<f64> {
    let mut v = vec![0.0; ATOM_FEATURE_DIM];
    v[atom.element.ordinal()] = 1.0;
    v[Element::ALL.len() + degree.min(DEGREE_SLOTS - 1)] = 1.0;
    v[Element::ALL.len() + DEGREE_SLOTS] = if atom.aromatic { 1.0 } else { 0.0 };
    v[Element::ALL.len() + DEGREE_SLOTS + 1] = atom.formal_charge as f64;
    v
}

pub fn bond_features(order: BondOrder) -> Vec<f64> {
    let mut v = vec![0.0; BondOrder::ALL.len()];
    v[order.ordinal()] = 1.0;
    v
}

/// Widths of the raw feature vectors for every node and edge kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub property_dim: usize,
    pub relation_dim: usize,
    /// Moiety vocabulary (`kind:type`), one-hot order.
    pub vocabulary: Vec<String>,
    /// Seed for random property vectors; unused with an embedding table.
    pub seed: u64,
}

impl FeatureSpec {
    pub fn new(emb: Option<&EmbeddingTable>, vocabulary: Vec<String>, seed: u64) -> FeatureSpec {
        match emb {
            Some(e) => FeatureSpec {
                property_dim: e.entity_len(),
                relation_dim: e.relation_len(),
                vocabulary,
                seed,
            },
            None => FeatureSpec {
                property_dim: RANDOM_PROPERTY_DIM,
                relation_dim: ELEMENT_RELATIONS.len(),
                vocabulary,
                seed,
            },
        }
    }

    pub fn input_dim(&self, kind: NodeKind) -> usize {
        match kind {
            NodeKind::Atom => ATOM_FEATURE_DIM,
            NodeKind::Property => self.property_dim,
            NodeKind::Moiety => self.vocabulary.len(),
        }
    }

    pub fn edge_dim(&self, block: Block) -> usize {
        match block {
            Block::Bond => BondOrder::ALL.len(),
            Block::Property => self.relation_dim,
            Block::Moiety => RelationLabel::ALL.len(),
            Block::AtomFromMoiety | Block::MoietyFromAtom => 1,
        }
    }
}

/// Deterministic pseudo-random vector in (-1, 1) keyed by `seed` and `label`.
pub fn random_property_vector(label: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed ^ hash_str(label));
    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Raw per-node and per-edge vectors of a HeteroGraph, indexed like its
/// `nodes` and `edges`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureAssignment {
    pub node_kinds: Vec<NodeKind>,
    pub nodes: Vec<Vec<f64>>,
    pub edges: Vec<Vec<f64>>,
}

pub fn init_node_features(
    hg: &HeteroGraph,
    emb: Option<&EmbeddingTable>,
    spec: &FeatureSpec,
) -> Result<FeatureAssignment, EncoderError> {
    let mut degree = vec![0usize; hg.nodes.len()];
    for e in hg.edges.iter().filter(|e| e.kind == EdgeKind::Bond) {
        degree[e.src] += 1;
        degree[e.dst] += 1;
    }
    let mut nodes = Vec::with_capacity(hg.nodes.len());
    for n in &hg.nodes {
        let x = match n.kind {
            NodeKind::Atom => {
                let atom = Atom::from_token(&n.label, n.id).map_err(|_| EncoderError::MissingLabel {
                    kind: "atom",
                    label: n.label.clone(),
                })?;
                atom_features(&atom, degree[n.id])
            }
            NodeKind::Property => match emb {
                Some(t) => t
                    .entity(&n.label)
                    .map_err(|_| EncoderError::MissingLabel {
                        kind: "property",
                        label: n.label.clone(),
                    })?
                    .to_vec(),
                None => random_property_vector(&n.label, spec.property_dim, spec.seed),
            },
            NodeKind::Moiety => {
                let i = spec
                    .vocabulary
                    .iter()
                    .position(|v| *v == n.label)
                    .ok_or_else(|| EncoderError::MissingLabel {
                        kind: "moiety",
                        label: n.label.clone(),
                    })?;
                let mut v = vec![0.0; spec.vocabulary.len()];
                v[i] = 1.0;
                v
            }
        };
        if x.len() != spec.input_dim(n.kind) {
            return Err(EncoderError::FeatureWidth {
                what: n.kind.name(),
                found: x.len(),
                expected: spec.input_dim(n.kind),
            });
        }
        nodes.push(x);
    }
    let mut edges = Vec::with_capacity(hg.edges.len());
    for e in &hg.edges {
        let x = match e.kind {
            EdgeKind::Bond => {
                let o = BondOrder::from_name(&e.label).ok_or_else(|| EncoderError::MissingLabel {
                    kind: "bond",
                    label: e.label.clone(),
                })?;
                bond_features(o)
            }
            EdgeKind::PropOf => {
                let missing = || EncoderError::MissingLabel {
                    kind: "relation",
                    label: e.label.clone(),
                };
                match emb {
                    Some(t) => t.relation(&e.label).map_err(|_| missing())?.to_vec(),
                    None => {
                        let i = ELEMENT_RELATIONS.iter().position(|r| *r == e.label).ok_or_else(missing)?;
                        let mut v = vec![0.0; ELEMENT_RELATIONS.len()];
                        v[i] = 1.0;
                        v
                    }
                }
            }
            EdgeKind::PartOf => vec![1.0],
            k => {
                let label = RelationLabel::from_name(k.name()).expect("moiety edge kinds are relation labels");
                let mut v = vec![0.0; RelationLabel::ALL.len()];
                v[label.ordinal()] = 1.0;
                v
            }
        };
        edges.push(x);
    }
    Ok(FeatureAssignment {
        node_kinds: hg.nodes.iter().map(|n| n.kind).collect(),
        nodes,
        edges,
    })
}

// ---------------------------------------------------------------- graph view

/// Message-passing block, one per directed edge type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    /// atom <-> atom over bonds
    Bond,
    /// property -> atom
    Property,
    /// moiety <-> moiety
    Moiety,
    /// moiety -> atom over part_of
    AtomFromMoiety,
    /// atom -> moiety over part_of
    MoietyFromAtom,
}

impl Block {
    pub fn short(self) -> &'static str {
        match self {
            Block::Bond => "a",
            Block::Property => "p",
            Block::Moiety => "m",
            Block::AtomFromMoiety => "am",
            Block::MoietyFromAtom => "ma",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub src: usize,
    pub dst: usize,
    pub block: Block,
    pub x: Vec<f64>,
}

/// Flattened input to the encoders: typed nodes with raw features and
/// directed messages.
#[derive(Debug, Clone, PartialEq)]
pub struct EncGraph {
    pub kinds: Vec<NodeKind>,
    pub x: Vec<Vec<f64>>,
    pub messages: Vec<Message>,
}

impl EncGraph {
    /// Undirected edges become two messages; part_of splits into the
    /// moiety->atom and atom->moiety blocks.
    pub fn from_hetero(hg: &HeteroGraph, feats: &FeatureAssignment) -> EncGraph {
        let mut messages = Vec::new();
        for (e, x) in hg.edges.iter().zip(&feats.edges) {
            let mut push = |src, dst, block| {
                messages.push(Message {
                    src,
                    dst,
                    block,
                    x: x.clone(),
                })
            };
            match e.kind {
                EdgeKind::Bond => {
                    push(e.src, e.dst, Block::Bond);
                    push(e.dst, e.src, Block::Bond);
                }
                EdgeKind::PropOf => push(e.src, e.dst, Block::Property),
                EdgeKind::PartOf => {
                    push(e.src, e.dst, Block::AtomFromMoiety);
                    push(e.dst, e.src, Block::MoietyFromAtom);
                }
                _ => {
                    push(e.src, e.dst, Block::Moiety);
                    push(e.dst, e.src, Block::Moiety);
                }
            }
        }
        EncGraph {
            kinds: feats.node_kinds.clone(),
            x: feats.nodes.clone(),
            messages,
        }
    }

    pub fn from_molecule(g: &MolecularGraph) -> EncGraph {
        let x = g.atoms.iter().map(|a| atom_features(a, g.degree(a.index))).collect();
        let mut messages = Vec::new();
        for b in &g.bonds {
            let x = bond_features(b.order);
            messages.push(Message {
                src: b.a,
                dst: b.b,
                block: Block::Bond,
                x: x.clone(),
            });
            messages.push(Message {
                src: b.b,
                dst: b.a,
                block: Block::Bond,
                x,
            });
        }
        EncGraph {
            kinds: vec![NodeKind::Atom; g.num_atoms()],
            x,
            messages,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.kinds.len()
    }

    /// Relabel nodes: node `i` moves to `perm[i]`. Message order is kept.
    pub fn permuted(&self, perm: &[usize]) -> EncGraph {
        let n = self.num_nodes();
        let mut kinds = vec![NodeKind::Atom; n];
        let mut x = vec![Vec::new(); n];
        for i in 0..n {
            kinds[perm[i]] = self.kinds[i];
            x[perm[i]] = self.x[i].clone();
        }
        let messages = self
            .messages
            .iter()
            .map(|m| Message {
                src: perm[m.src],
                dst: perm[m.dst],
                block: m.block,
                x: m.x.clone(),
            })
            .collect();
        EncGraph { kinds, x, messages }
    }
}

// ---------------------------------------------------------------- encoder

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub layers: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { hidden: 64, layers: 3 }
    }
}

/// Architecture description; parameters live in a [`ParamStore`] under `prefix.`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encoder {
    pub prefix: String,
    pub hidden: usize,
    pub layers: usize,
    /// Input projection width per node kind.
    pub inputs: Vec<(NodeKind, usize)>,
    /// Edge feature width per message block.
    pub blocks: Vec<(Block, usize)>,
}

const GATES: [&str; 3] = ["z", "r", "n"];

fn kind_key(k: NodeKind) -> &'static str {
    k.name()
}

impl Encoder {
    /// Bond-only encoder for original molecular graphs.
    pub fn plain(cfg: &EncoderConfig) -> Encoder {
        Encoder {
            prefix: "plain".into(),
            hidden: cfg.hidden,
            layers: cfg.layers,
            inputs: vec![(NodeKind::Atom, ATOM_FEATURE_DIM)],
            blocks: vec![(Block::Bond, BondOrder::ALL.len())],
        }
    }

    /// KMPNN: two blocks for element-KG graphs, four for FG-KG graphs, five when composed.
    pub fn kmpnn(cfg: &EncoderConfig, spec: &FeatureSpec, mode: AugmentMode, compose: bool) -> Encoder {
        let element = compose || mode == AugmentMode::ElementKg;
        let fg = compose || mode == AugmentMode::FgKg;
        let mut inputs = vec![(NodeKind::Atom, ATOM_FEATURE_DIM)];
        let mut blocks = vec![Block::Bond];
        if element {
            inputs.push((NodeKind::Property, spec.property_dim));
            blocks.push(Block::Property);
        }
        if fg {
            inputs.push((NodeKind::Moiety, spec.vocabulary.len()));
            blocks.extend([Block::Moiety, Block::AtomFromMoiety, Block::MoietyFromAtom]);
        }
        Encoder {
            prefix: "kmpnn".into(),
            hidden: cfg.hidden,
            layers: cfg.layers,
            inputs,
            blocks: blocks.into_iter().map(|b| (b, spec.edge_dim(b))).collect(),
        }
    }

    fn name(&self, rest: &str) -> String {
        format!("{}.{rest}", self.prefix)
    }

    fn in_w(&self, k: NodeKind) -> String {
        self.name(&format!("in.{}.w", kind_key(k)))
    }
    fn in_b(&self, k: NodeKind) -> String {
        self.name(&format!("in.{}.b", kind_key(k)))
    }
    fn msg_w(&self, b: Block) -> String {
        self.name(&format!("msg.{}.w", b.short()))
    }
    fn msg_att(&self, b: Block) -> String {
        self.name(&format!("msg.{}.att", b.short()))
    }
    fn gru(&self, what: &str, gate: &str) -> String {
        self.name(&format!("gru.{what}{gate}"))
    }

    /// Xavier-uniform matrices and attention vectors, zero biases.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = rng_from_seed(seed);
        let d = self.hidden;
        let mut s = ParamStore::new();
        for &(k, w) in &self.inputs {
            s.insert(self.in_w(k), Tensor2::xavier(w, d, &mut rng));
            s.insert(self.in_b(k), Tensor2::zeros(1, d));
        }
        for &(b, e) in &self.blocks {
            s.insert(self.msg_w(b), Tensor2::xavier(d + e, d, &mut rng));
            s.insert(self.msg_att(b), Tensor2::xavier(1, 2 * d, &mut rng));
        }
        for g in GATES {
            s.insert(self.gru("w", g), Tensor2::xavier(d, d, &mut rng));
            s.insert(self.gru("u", g), Tensor2::xavier(d, d, &mut rng));
            s.insert(self.gru("b", g), Tensor2::zeros(1, d));
        }
        s.insert(self.name("out.w"), Tensor2::xavier(d, d, &mut rng));
        s.insert(self.name("out.b"), Tensor2::zeros(1, d));
        s
    }

    fn check(&self, g: &EncGraph) -> Result<(), EncoderError> {
        for (i, k) in g.kinds.iter().enumerate() {
            let Some(&(_, w)) = self.inputs.iter().find(|(kk, _)| kk == k) else {
                return Err(EncoderError::MissingInput {
                    encoder: self.prefix.clone(),
                    kind: k.name(),
                });
            };
            if g.x[i].len() != w {
                return Err(EncoderError::FeatureWidth {
                    what: k.name(),
                    found: g.x[i].len(),
                    expected: w,
                });
            }
        }
        for m in &g.messages {
            let Some(&(_, e)) = self.blocks.iter().find(|(b, _)| *b == m.block) else {
                return Err(EncoderError::MissingBlock {
                    encoder: self.prefix.clone(),
                    block: m.block.short(),
                });
            };
            if m.x.len() != e {
                return Err(EncoderError::FeatureWidth {
                    what: "edge",
                    found: m.x.len(),
                    expected: e,
                });
            }
        }
        if !g.kinds.contains(&NodeKind::Atom) {
            return Err(EncoderError::NoAtoms);
        }
        Ok(())
    }

    pub fn forward(&self, params: &ParamStore, g: &EncGraph) -> Result<Forward, EncoderError> {
        self.check(g)?;
        let d = self.hidden;
        let n = g.num_nodes();
        let mut incoming = vec![Vec::new(); n];
        for (i, m) in g.messages.iter().enumerate() {
            incoming[m.dst].push(i);
        }
        let mut h = vec![vec![0.0; d]; n];
        for (v, hv) in h.iter_mut().enumerate() {
            let k = g.kinds[v];
            vec_mat(&g.x[v], params.value(&self.in_w(k))?, hv);
            for (a, b) in hv.iter_mut().zip(params.value(&self.in_b(k))?.data()) {
                *a += b;
            }
        }
        let gw: Vec<&Tensor2> = GATES.iter().map(|q| params.value(&self.gru("w", q))).collect::<Result<_, _>>()?;
        let gu: Vec<&Tensor2> = GATES.iter().map(|q| params.value(&self.gru("u", q))).collect::<Result<_, _>>()?;
        let gb: Vec<&Tensor2> = GATES.iter().map(|q| params.value(&self.gru("b", q))).collect::<Result<_, _>>()?;
        let mut blocks = BTreeMap::new();
        for &(b, _) in &self.blocks {
            blocks.insert(b, (params.value(&self.msg_w(b))?, params.value(&self.msg_att(b))?));
        }

        let mut layers = Vec::with_capacity(self.layers);
        for _ in 0..self.layers {
            let mut c = Vec::with_capacity(g.messages.len());
            let mut msg = Vec::with_capacity(g.messages.len());
            let mut s = vec![0.0; g.messages.len()];
            let mut alpha = vec![0.0; g.messages.len()];
            for (i, m) in g.messages.iter().enumerate() {
                let (w, att) = blocks[&m.block];
                let mut ci = h[m.src].clone();
                ci.extend_from_slice(&m.x);
                let mut mi = vec![0.0; d];
                vec_mat(&ci, w, &mut mi);
                let a = att.data();
                s[i] = dot(&a[..d], &h[m.dst]) + dot(&a[d..], &mi);
                c.push(ci);
                msg.push(mi);
            }
            let mut agg = vec![vec![0.0; d]; n];
            for v in 0..n {
                let ins = &incoming[v];
                if ins.is_empty() {
                    continue;
                }
                let e: Vec<f64> = ins.iter().map(|&i| Activation::LeakyRelu.apply(s[i])).collect();
                let mx = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let ex: Vec<f64> = e.iter().map(|x| (x - mx).exp()).collect();
                let sum: f64 = ex.iter().sum();
                for (&i, x) in ins.iter().zip(&ex) {
                    alpha[i] = x / sum;
                    for (o, mv) in agg[v].iter_mut().zip(&msg[i]) {
                        *o += alpha[i] * mv;
                    }
                }
            }
            let mut z = vec![vec![0.0; d]; n];
            let mut r = vec![vec![0.0; d]; n];
            let mut ng = vec![vec![0.0; d]; n];
            let mut next = vec![vec![0.0; d]; n];
            let mut t1 = vec![0.0; d];
            let mut t2 = vec![0.0; d];
            for v in 0..n {
                for (q, out) in [(0, &mut z[v]), (1, &mut r[v])] {
                    vec_mat(&agg[v], gw[q], &mut t1);
                    vec_mat(&h[v], gu[q], &mut t2);
                    for j in 0..d {
                        out[j] = sigmoid(t1[j] + t2[j] + gb[q].data()[j]);
                    }
                }
                let rh: Vec<f64> = r[v].iter().zip(&h[v]).map(|(a, b)| a * b).collect();
                vec_mat(&agg[v], gw[2], &mut t1);
                vec_mat(&rh, gu[2], &mut t2);
                for j in 0..d {
                    ng[v][j] = (t1[j] + t2[j] + gb[2].data()[j]).tanh();
                    next[v][j] = (1.0 - z[v][j]) * ng[v][j] + z[v][j] * h[v][j];
                }
            }
            layers.push(LayerCache {
                h: std::mem::replace(&mut h, next),
                c,
                msg,
                s,
                alpha,
                agg,
                z,
                r,
                n: ng,
            });
        }
        let graph_vector = self.readout(params, &h, &g.kinds)?;
        Ok(Forward {
            graph_vector,
            states: h,
            layers,
            incoming,
        })
    }

    /// Mean over atom-node states, then `out.w`, `out.b`.
    pub fn readout(&self, params: &ParamStore, states: &[Vec<f64>], kinds: &[NodeKind]) -> Result<Vec<f64>, EncoderError> {
        let pooled = mean_atom_state(states, kinds)?;
        let mut out = vec![0.0; self.hidden];
        vec_mat(&pooled, params.value(&self.name("out.w"))?, &mut out);
        for (o, b) in out.iter_mut().zip(params.value(&self.name("out.b"))?.data()) {
            *o += b;
        }
        Ok(out)
    }

    /// Accumulate `d loss / d params` into `params`' gradients given `d loss / d graph_vector`.
    pub fn backward(&self, params: &mut ParamStore, g: &EncGraph, fwd: &Forward, dg: &[f64]) -> Result<(), EncoderError> {
        let d = self.hidden;
        let n = g.num_nodes();
        let mut grads: BTreeMap<String, Tensor2> = BTreeMap::new();
        let mut acc = |name: String, f: &dyn Fn(&mut Tensor2), shape: (usize, usize)| {
            let t = grads.entry(name).or_insert_with(|| Tensor2::zeros(shape.0, shape.1));
            f(t);
        };

        // readout
        let atoms: Vec<usize> = (0..n).filter(|&v| g.kinds[v] == NodeKind::Atom).collect();
        let pooled = mean_atom_state(&fwd.states, &g.kinds)?;
        acc(self.name("out.w"), &|t| outer_acc(t, &pooled, dg), (d, d));
        acc(self.name("out.b"), &|t| add_into(t.data_mut(), dg), (1, d));
        let mut dpool = vec![0.0; d];
        mat_vec_t_acc(params.value(&self.name("out.w"))?, dg, &mut dpool);
        let mut dh = vec![vec![0.0; d]; n];
        let inv = 1.0 / atoms.len() as f64;
        for &v in &atoms {
            for (o, x) in dh[v].iter_mut().zip(&dpool) {
                *o = x * inv;
            }
        }

        let gw: Vec<Tensor2> = GATES.iter().map(|q| params.value(&self.gru("w", q)).cloned()).collect::<Result<_, _>>()?;
        let gu: Vec<Tensor2> = GATES.iter().map(|q| params.value(&self.gru("u", q)).cloned()).collect::<Result<_, _>>()?;
        let mut blocks = BTreeMap::new();
        for &(b, _) in &self.blocks {
            blocks.insert(b, (params.value(&self.msg_w(b))?.clone(), params.value(&self.msg_att(b))?.clone()));
        }
        let mut dgw = vec![Tensor2::zeros(d, d); 3];
        let mut dgu = vec![Tensor2::zeros(d, d); 3];
        let mut dgb = vec![vec![0.0; d]; 3];
        let mut dmsg_w: BTreeMap<Block, Tensor2> = BTreeMap::new();
        let mut datt: BTreeMap<Block, Vec<f64>> = BTreeMap::new();
        for &(b, e) in &self.blocks {
            dmsg_w.insert(b, Tensor2::zeros(d + e, d));
            datt.insert(b, vec![0.0; 2 * d]);
        }

        for lc in fwd.layers.iter().rev() {
            let mut dprev = vec![vec![0.0; d]; n];
            let mut dagg = vec![vec![0.0; d]; n];
            for v in 0..n {
                let (h, z, r, ng, m) = (&lc.h[v], &lc.z[v], &lc.r[v], &lc.n[v], &lc.agg[v]);
                let dout = &dh[v];
                let mut dn = vec![0.0; d];
                let mut dz = vec![0.0; d];
                for j in 0..d {
                    dprev[v][j] += dout[j] * z[j];
                    dn[j] = dout[j] * (1.0 - z[j]) * (1.0 - ng[j] * ng[j]);
                    dz[j] = dout[j] * (h[j] - ng[j]) * z[j] * (1.0 - z[j]);
                }
                // candidate gate
                let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
                outer_acc(&mut dgw[2], m, &dn);
                outer_acc(&mut dgu[2], &rh, &dn);
                add_into(&mut dgb[2], &dn);
                mat_vec_t_acc(&gw[2], &dn, &mut dagg[v]);
                let mut drh = vec![0.0; d];
                mat_vec_t_acc(&gu[2], &dn, &mut drh);
                let mut dr = vec![0.0; d];
                for j in 0..d {
                    dprev[v][j] += drh[j] * r[j];
                    dr[j] = drh[j] * h[j] * r[j] * (1.0 - r[j]);
                }
                for (q, dq) in [(0, &dz), (1, &dr)] {
                    outer_acc(&mut dgw[q], m, dq);
                    outer_acc(&mut dgu[q], h, dq);
                    add_into(&mut dgb[q], dq);
                    mat_vec_t_acc(&gw[q], dq, &mut dagg[v]);
                    mat_vec_t_acc(&gu[q], dq, &mut dprev[v]);
                }
            }
            for v in 0..n {
                let ins = &fwd.incoming[v];
                if ins.is_empty() {
                    continue;
                }
                let dav: Vec<f64> = ins.iter().map(|&i| dot(&dagg[v], &lc.msg[i])).collect();
                let mean: f64 = ins.iter().zip(&dav).map(|(&i, x)| lc.alpha[i] * x).sum();
                for (&i, da) in ins.iter().zip(&dav) {
                    let msg = &g.messages[i];
                    let (w, att) = &blocks[&msg.block];
                    let a = att.data();
                    let ds = lc.alpha[i] * (da - mean) * Activation::LeakyRelu.derivative(lc.s[i]);
                    let mut dm: Vec<f64> = dagg[v].iter().map(|x| lc.alpha[i] * x).collect();
                    for j in 0..d {
                        dm[j] += ds * a[d + j];
                        dprev[v][j] += ds * a[j];
                    }
                    let dat = datt.get_mut(&msg.block).unwrap();
                    for j in 0..d {
                        dat[j] += ds * lc.h[v][j];
                        dat[d + j] += ds * lc.msg[i][j];
                    }
                    outer_acc(dmsg_w.get_mut(&msg.block).unwrap(), &lc.c[i], &dm);
                    let mut dc = vec![0.0; w.rows()];
                    mat_vec_t_acc(w, &dm, &mut dc);
                    add_into(&mut dprev[msg.src], &dc[..d]);
                }
            }
            dh = dprev;
        }

        for v in 0..n {
            let k = g.kinds[v];
            let w = g.x[v].len();
            let (x, dv) = (&g.x[v], &dh[v]);
            acc(self.in_w(k), &|t| outer_acc(t, x, dv), (w, d));
            acc(self.in_b(k), &|t| add_into(t.data_mut(), dv), (1, d));
        }
        for (q, gate) in GATES.iter().enumerate() {
            grads.insert(self.gru("w", gate), dgw[q].clone());
            grads.insert(self.gru("u", gate), dgu[q].clone());
            grads.insert(self.gru("b", gate), Tensor2::row_vector(&dgb[q]));
        }
        for (b, t) in dmsg_w {
            grads.insert(self.msg_w(b), t);
        }
        for (b, v) in datt {
            grads.insert(self.msg_att(b), Tensor2::row_vector(&v));
        }
        for (name, t) in grads {
            add_into(params.grad_mut(&name)?.data_mut(), t.data());
        }
        Ok(())
    }

    /// Forward pass followed by backward with `dg`; returns the graph vector.
    pub fn forward_backward(&self, params: &mut ParamStore, g: &EncGraph, dg: &[f64]) -> Result<Vec<f64>, EncoderError> {
        let f = self.forward(params, g)?;
        self.backward(params, g, &f, dg)?;
        Ok(f.graph_vector)
    }
}

struct LayerCache {
    h: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    msg: Vec<Vec<f64>>,
    s: Vec<f64>,
    alpha: Vec<f64>,
    agg: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    n: Vec<Vec<f64>>,
}

/// Forward result plus the activations needed for backward.
pub struct Forward {
    pub graph_vector: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    layers: Vec<LayerCache>,
    incoming: Vec<Vec<usize>>,
}

impl Forward {
    /// Attention weights of the given layer, one per message.
    pub fn attention(&self, layer: usize) -> &[f64] {
        &self.layers[layer].alpha
    }

    /// Node states entering the given layer.
    pub fn layer_input(&self, layer: usize) -> &[Vec<f64>] {
        &self.layers[layer].h
    }

    pub fn incoming(&self, node: usize) -> &[usize] {
        &self.incoming[node]
    }
}

pub fn mean_atom_state(states: &[Vec<f64>], kinds: &[NodeKind]) -> Result<Vec<f64>, EncoderError> {
    let d = states.first().map_or(0, |s| s.len());
    let mut sum = vec![0.0; d];
    let mut count = 0usize;
    for (s, k) in states.iter().zip(kinds) {
        if *k == NodeKind::Atom {
            add_into(&mut sum, s);
            count += 1;
        }
    }
    if count == 0 {
        return Err(EncoderError::NoAtoms);
    }
    Ok(sum.into_iter().map(|x| x / count as f64).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(out: &mut [f64], x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += v;
    }
}

/// KMPNN forward over an augmented graph: `(graph_vector, node_states)`.
pub fn kmpnn_forward(
    enc: &Encoder,
    hg: &HeteroGraph,
    feats: &FeatureAssignment,
    params: &ParamStore,
) -> Result<(Vec<f64>, Vec<Vec<f64>>), EncoderError> {
    let f = enc.forward(params, &EncGraph::from_hetero(hg, feats))?;
    Ok((f.graph_vector, f.states))
}

/// Plain-encoder graph vector of an original molecule.
pub fn encode_original(enc: &Encoder, g: &MolecularGraph, params: &ParamStore) -> Result<Vec<f64>, EncoderError> {
    Ok(enc.forward(params, &EncGraph::from_molecule(g))?.graph_vector)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{augment_with_element_kg, Augmenter};
    use crate::chem::parse_smiles;
    use crate::kg::{KnowledgeGraph, KnowledgeTriple};
    use crate::moiety::PatternLibrary;
    use crate::nn::{finite_diff_gradcheck, GradCheckConfig};

    fn small() -> EncoderConfig {
        EncoderConfig { hidden: 6, layers: 2 }
    }

    fn loss_weights(d: usize) -> Vec<f64> {
        (0..d).map(|i| ((i * 7 + 3) % 5) as f64 - 2.0 + 0.3).collect()
    }

    fn gradcheck(enc: &Encoder, g: &EncGraph, seed: u64) {
        let mut params = enc.init_params(seed);
        let w = loss_weights(enc.hidden);
        enc.forward_backward(&mut params, g, &w).unwrap();
        let cfg = GradCheckConfig {
            samples: 150,
            ..GradCheckConfig::default()
        };
        let rep = finite_diff_gradcheck(
            |p| dot(&enc.forward(p, g).unwrap().graph_vector, &w),
            &params,
            &cfg,
        );
        assert!(rep.passed, "{rep:?}");
        assert!(rep.checked >= 100);
        let nonzero = params.iter().flat_map(|(_, p)| p.grad.data().iter()).filter(|g| g.abs() > 1e-10).count();
        assert!(2 * nonzero > params.num_scalars());
    }

    #[test]
    fn atom_feature_layout() {
        let g = parse_smiles("c1ccccc1[O-]", "x").unwrap();
        let f = atom_features(&g.atoms[6], 1);
        assert_eq!(f.len(), 18);
        assert_eq!(f[Element::O.ordinal()], 1.0);
        assert_eq!(f[11], 1.0);
        assert_eq!(f[17], -1.0);
        assert_eq!(atom_features(&g.atoms[0], 2)[16], 1.0);
    }

    #[test]
    fn plain_gradients() {
        let g = parse_smiles("OC(=O)C=C", "x").unwrap();
        gradcheck(&Encoder::plain(&small()), &EncGraph::from_molecule(&g), 3);
    }

    #[test]
    fn kmpnn_gradients_element() {
        let g = parse_smiles("ClCO", "x").unwrap();
        let kg = crate::kg::load_sample_element_kg();
        let hg = augment_with_element_kg(&g, &kg);
        let spec = FeatureSpec::new(None, vec![], 5);
        let feats = init_node_features(&hg, None, &spec).unwrap();
        let enc = Encoder::kmpnn(&small(), &spec, AugmentMode::ElementKg, false);
        gradcheck(&enc, &EncGraph::from_hetero(&hg, &feats), 4);
    }

    #[test]
    fn kmpnn_gradients_fg() {
        let g = parse_smiles("CC(=O)O", "x").unwrap();
        let lib = PatternLibrary::default_library();
        let vocab = lib.vocabulary();
        let hg = Augmenter::new(AugmentMode::FgKg, KnowledgeGraph::default(), lib)
            .augment(&g)
            .unwrap();
        assert!(hg.nodes.len() <= 8);
        let spec = FeatureSpec::new(None, vocab, 5);
        let feats = init_node_features(&hg, None, &spec).unwrap();
        let enc = Encoder::kmpnn(&small(), &spec, AugmentMode::FgKg, false);
        gradcheck(&enc, &EncGraph::from_hetero(&hg, &feats), 6);
    }

    #[test]
    fn attention_sums_to_one() {
        let g = parse_smiles("CC(C)(C)Cl", "x").unwrap();
        let enc = Encoder::plain(&small());
        let p = enc.init_params(1);
        let eg = EncGraph::from_molecule(&g);
        let f = enc.forward(&p, &eg).unwrap();
        for l in 0..enc.layers {
            for v in 0..eg.num_nodes() {
                let s: f64 = f.incoming(v).iter().map(|&i| f.attention(l)[i]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn directionality_of_prop_of() {
        let g = parse_smiles("Cl", "x").unwrap();
        let kg = KnowledgeGraph::from_triples([KnowledgeTriple::new("Gas", "isStateOf", "Cl")]);
        let hg = augment_with_element_kg(&g, &kg);
        let spec = FeatureSpec::new(None, vec![], 0);
        let feats = init_node_features(&hg, None, &spec).unwrap();
        let enc = Encoder::kmpnn(&EncoderConfig { hidden: 8, layers: 1 }, &spec, AugmentMode::ElementKg, false);
        let mut p = enc.init_params(2);
        let eg = EncGraph::from_hetero(&hg, &feats);
        let base = enc.forward(&p, &eg).unwrap().states;
        // perturb the property message weights: only the atom may change
        for x in p.value_mut("kmpnn.msg.p.w").unwrap().data_mut() {
            *x += 0.5;
        }
        let after = enc.forward(&p, &eg).unwrap().states;
        assert_ne!(base[0], after[0]);
        assert_eq!(base[1], after[1]);
    }

    #[test]
    fn missing_block_is_an_error() {
        let g = parse_smiles("Cl", "x").unwrap();
        let kg = KnowledgeGraph::from_triples([KnowledgeTriple::new("Gas", "isStateOf", "Cl")]);
        let hg = augment_with_element_kg(&g, &kg);
        let spec = FeatureSpec::new(None, vec![], 0);
        let feats = init_node_features(&hg, None, &spec).unwrap();
        let enc = Encoder::plain(&small());
        let p = enc.init_params(0);
        assert!(matches!(
            enc.forward(&p, &EncGraph::from_hetero(&hg, &feats)),
            Err(EncoderError::MissingInput { .. })
        ));
    }

    #[test]
    fn zero_message_weights_ignore_topology() {
        let enc = Encoder::plain(&small());
        let mut p = enc.init_params(9);
        p.value_mut("plain.msg.a.w").unwrap().fill(0.0);
        let chain = EncGraph::from_molecule(&parse_smiles("CCCC", "x").unwrap());
        let mut bare = chain.clone();
        bare.messages.clear();
        let a = enc.forward(&p, &chain).unwrap().states;
        let b = enc.forward(&p, &bare).unwrap().states;
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn readout_is_mean_then_projection() {
        let enc = Encoder::plain(&small());
        let p = enc.init_params(4);
        let states: Vec<Vec<f64>> = (0..5).map(|i| (0..6).map(|j| ((i * 6 + j) as f64).sin()).collect()).collect();
        let kinds = vec![NodeKind::Atom; 5];
        let got = enc.readout(&p, &states, &kinds).unwrap();
        let mut mean = vec![0.0; 6];
        for s in &states {
            for j in 0..6 {
                mean[j] += s[j];
            }
        }
        let w = p.value("plain.out.w").unwrap();
        for c in 0..6 {
            let want: f64 = (0..6).map(|r| mean[r] / 5.0 * w.get(r, c)).sum();
            assert!((got[c] - want).abs() < 1e-12);
        }
        assert!(matches!(enc.readout(&p, &states, &[NodeKind::Property; 5]), Err(EncoderError::NoAtoms)));
    }

    #[test]
    fn random_property_vectors_are_reproducible() {
        assert_eq!(random_property_vector("Gas", 8, 1), random_property_vector("Gas", 8, 1));
        assert_ne!(random_property_vector("Gas", 8, 1), random_property_vector("Gas", 8, 2));
        assert_ne!(random_property_vector("Gas", 8, 1), random_property_vector("Solid", 8, 1));
    }
}
