//! Rings, functional groups and aliphatic chains, plus the relations between them.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::{Atom, BondOrder, Element, MolecularGraph};

/// Bundled pattern library (16 groups).
pub const DEFAULT_PATTERNS: &str = include_str!("../data/functional_groups.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoietyKind {
    Ring,
    FunctionalGroup,
    AliphaticChain,
}

impl MoietyKind {
    pub fn name(self) -> &'static str {
        match self {
            MoietyKind::Ring => "ring",
            MoietyKind::FunctionalGroup => "functional_group",
            MoietyKind::AliphaticChain => "aliphatic_chain",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Moiety {
    pub graph_id: String,
    pub kind: MoietyKind,
    /// `aromatic`/`aliphatic` for rings, `saturated`/`unsaturated` for chains,
    /// the pattern name for functional groups.
    pub type_label: String,
    pub atoms: Vec<usize>,
    pub length: usize,
}

impl Moiety {
    fn new(graph_id: &str, kind: MoietyKind, type_label: &str, atoms: Vec<usize>) -> Moiety {
        Moiety {
            graph_id: graph_id.to_string(),
            kind,
            length: atoms.len(),
            type_label: type_label.to_string(),
            atoms,
        }
    }

    /// Name used in `has_struc` and relation records, e.g. `aromatic_ring`.
    pub fn struc_name(&self) -> String {
        match self.kind {
            MoietyKind::Ring => format!("{}_ring", self.type_label),
            MoietyKind::AliphaticChain => format!("{}_chain", self.type_label),
            MoietyKind::FunctionalGroup => self.type_label.clone(),
        }
    }

    /// Vocabulary key, `kind:label`.
    pub fn vocab_key(&self) -> String {
        format!("{}:{}", self.kind.name(), self.type_label)
    }

    pub fn is_saturated_chain(&self) -> bool {
        self.kind == MoietyKind::AliphaticChain && self.type_label == "saturated"
    }

    pub fn atom_set(&self) -> BTreeSet<usize> {
        self.atoms.iter().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationLabel {
    Fused,
    Connected,
    Saturated,
    Unsaturated,
}

impl RelationLabel {
    pub const ALL: [RelationLabel; 4] = [
        RelationLabel::Fused,
        RelationLabel::Connected,
        RelationLabel::Saturated,
        RelationLabel::Unsaturated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RelationLabel::Fused => "fused",
            RelationLabel::Connected => "connected",
            RelationLabel::Saturated => "saturated",
            RelationLabel::Unsaturated => "unsaturated",
        }
    }

    pub fn from_name(s: &str) -> Option<RelationLabel> {
        RelationLabel::ALL.iter().copied().find(|l| l.name() == s)
    }

    pub fn ordinal(self) -> usize {
        self as usize
    }
}

/// Relation between moieties `a < b`, given as indices into the moiety list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MoietyRelation {
    pub a: usize,
    pub b: usize,
    pub label: RelationLabel,
}

#[derive(Debug, Error)]
pub enum MoietyError {
    #[error("malformed pattern `{name}`: {msg}")]
    MalformedPattern { name: String, msg: String },
    #[error("pattern library JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("moiety {index} belongs to graph `{found}`, expected `{expected}`")]
    GraphMismatch {
        index: usize,
        found: String,
        expected: String,
    },
    #[error("moiety {index} references atom {atom}, graph has {len} atoms")]
    AtomOutOfRange { index: usize, atom: usize, len: usize },
}

// ---------------------------------------------------------------- patterns

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    #[default]
    Core,
    Anchor,
}

/// Per-atom constraint. Absent fields match anything.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternNode {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aromatic: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_degree: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_degree: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_h: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_h: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charge: Option<i32>,
    #[serde(default)]
    pub role: NodeRole,
}

impl PatternNode {
    pub fn accepts(&self, atom: &Atom, degree: usize) -> bool {
        if let Some(els) = &self.element {
            if !els.iter().any(|e| e == atom.element.symbol()) {
                return false;
            }
        }
        self.aromatic.is_none_or(|a| a == atom.aromatic)
            && self.min_degree.is_none_or(|d| degree >= d)
            && self.max_degree.is_none_or(|d| degree <= d)
            && self.min_h.is_none_or(|h| atom.implicit_h >= h)
            && self.max_h.is_none_or(|h| atom.implicit_h <= h)
            && self.charge.is_none_or(|q| atom.formal_charge == q)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternEdge {
    pub a: usize,
    pub b: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<Vec<BondOrder>>,
}

impl PatternEdge {
    pub fn accepts(&self, order: BondOrder) -> bool {
        self.order.as_ref().is_none_or(|os| os.contains(&order))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoietyPattern {
    pub name: String,
    pub nodes: Vec<PatternNode>,
    pub edges: Vec<PatternEdge>,
    /// Less specific groups suppressed when their core lies inside a match of this one.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subsumes: Vec<String>,
}

impl MoietyPattern {
    pub fn validate(&self) -> Result<(), MoietyError> {
        let bad = |msg: String| {
            Err(MoietyError::MalformedPattern {
                name: self.name.clone(),
                msg,
            })
        };
        if self.name.trim().is_empty() {
            return bad("empty name".into());
        }
        let n = self.nodes.len();
        if n == 0 {
            return bad("no nodes".into());
        }
        if !self.nodes.iter().any(|x| x.role == NodeRole::Core) {
            return bad("no core node".into());
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(els) = &node.element {
                if els.is_empty() {
                    return bad(format!("node {i}: empty element list"));
                }
                if let Some(e) = els.iter().find(|e| Element::from_symbol(e).is_none()) {
                    return bad(format!("node {i}: unsupported element `{e}`"));
                }
            }
            if let (Some(lo), Some(hi)) = (node.min_degree, node.max_degree) {
                if lo > hi {
                    return bad(format!("node {i}: min_degree > max_degree"));
                }
            }
            if let (Some(lo), Some(hi)) = (node.min_h, node.max_h) {
                if lo > hi {
                    return bad(format!("node {i}: min_h > max_h"));
                }
            }
        }
        let mut seen = BTreeSet::new();
        let mut adj = vec![Vec::new(); n];
        for e in &self.edges {
            if e.a >= n || e.b >= n {
                return bad(format!("edge ({}, {}) out of range", e.a, e.b));
            }
            if e.a == e.b {
                return bad(format!("self edge on node {}", e.a));
            }
            if !seen.insert((e.a.min(e.b), e.a.max(e.b))) {
                return bad(format!("duplicate edge ({}, {})", e.a, e.b));
            }
            if e.order.as_ref().is_some_and(|o| o.is_empty()) {
                return bad(format!("edge ({}, {}): empty order list", e.a, e.b));
            }
            adj[e.a].push(e.b);
            adj[e.b].push(e.a);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.max_degree.is_some_and(|d| d < adj[i].len()) {
                return bad(format!("node {i}: max_degree below pattern degree"));
            }
        }
        let mut reached = vec![false; n];
        let mut stack = vec![0];
        reached[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !reached[w] {
                    reached[w] = true;
                    stack.push(w);
                }
            }
        }
        if reached.iter().any(|r| !r) {
            return bad("pattern graph is disconnected".into());
        }
        Ok(())
    }

    fn core_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].role == NodeRole::Core)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternLibrary {
    pub patterns: Vec<MoietyPattern>,
}

impl PatternLibrary {
    pub fn from_json(text: &str) -> Result<PatternLibrary, MoietyError> {
        let lib: PatternLibrary = serde_json::from_str(text)?;
        lib.validate()?;
        Ok(lib)
    }

    pub fn default_library() -> PatternLibrary {
        PatternLibrary::from_json(DEFAULT_PATTERNS).expect("bundled pattern library is valid")
    }

    pub fn validate(&self) -> Result<(), MoietyError> {
        let mut names = BTreeSet::new();
        for p in &self.patterns {
            p.validate()?;
            if !names.insert(p.name.as_str()) {
                return Err(MoietyError::MalformedPattern {
                    name: p.name.clone(),
                    msg: "duplicate pattern name".into(),
                });
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&MoietyPattern> {
        self.patterns.iter().find(|p| p.name == name)
    }

    /// Sorted moiety vocabulary (`kind:label`) this library can produce.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut v: BTreeSet<String> = self
            .patterns
            .iter()
            .map(|p| format!("functional_group:{}", p.name))
            .collect();
        for k in ["ring:aromatic", "ring:aliphatic", "aliphatic_chain:saturated", "aliphatic_chain:unsaturated"] {
            v.insert(k.to_string());
        }
        v.into_iter().collect()
    }
}

// ---------------------------------------------------------------- rings

type BitSet = Vec<u64>;

fn bit_set(n: usize) -> BitSet {
    vec![0; n.div_ceil(64).max(1)]
}

fn bit_flip(s: &mut BitSet, i: usize) {
    s[i / 64] ^= 1 << (i % 64);
}

fn bit_get(s: &BitSet, i: usize) -> bool {
    s[i / 64] >> (i % 64) & 1 == 1
}

fn bit_xor(a: &mut BitSet, b: &BitSet) {
    for (x, y) in a.iter_mut().zip(b) {
        *x ^= y;
    }
}

fn lowest_bit(s: &BitSet) -> Option<usize> {
    s.iter()
        .enumerate()
        .find(|(_, w)| **w != 0)
        .map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
}

/// BFS parents from `root`, exploring neighbors in ascending order.
fn bfs_tree(adj: &[Vec<usize>], root: usize) -> (Vec<usize>, Vec<usize>) {
    let n = adj.len();
    let mut dist = vec![usize::MAX; n];
    let mut parent = vec![usize::MAX; n];
    dist[root] = 0;
    let mut q = VecDeque::from([root]);
    while let Some(v) = q.pop_front() {
        for &w in &adj[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                parent[w] = v;
                q.push_back(w);
            }
        }
    }
    (dist, parent)
}

fn tree_path(parent: &[usize], root: usize, mut v: usize) -> Vec<usize> {
    let mut p = vec![v];
    while v != root {
        v = parent[v];
        p.push(v);
    }
    p
}

/// Walk a cycle given as a set of bonds: start at the smallest atom and step
/// to its smaller ring neighbor.
fn cycle_atoms(g: &MolecularGraph, edges: &BitSet) -> Vec<usize> {
    let mut nbrs: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, b) in g.bonds.iter().enumerate() {
        if bit_get(edges, i) {
            nbrs.entry(b.a).or_default().push(b.b);
            nbrs.entry(b.b).or_default().push(b.a);
        }
    }
    let start = *nbrs.keys().next().expect("cycle has atoms");
    let mut order = vec![start];
    let mut prev = start;
    let mut cur = *nbrs[&start].iter().min().unwrap();
    while cur != start {
        order.push(cur);
        let next = nbrs[&cur].iter().copied().find(|&x| x != prev).unwrap();
        prev = cur;
        cur = next;
    }
    order
}

/// Minimum cycle basis by Horton's candidate set: for every atom `v` and bond
/// `(x, y)`, the cycle `P(v,x) + (x,y) + P(y,v)` over BFS shortest paths.
/// Candidates are taken shortest first while independent over GF(2).
pub fn perceive_rings(g: &MolecularGraph) -> Vec<Moiety> {
    let n = g.num_atoms();
    let m = g.num_bonds();
    let c = g.num_components();
    let rank = (m + c).saturating_sub(n);
    if rank == 0 {
        return Vec::new();
    }
    let mut adj = vec![Vec::new(); n];
    let mut bond_id = BTreeMap::new();
    for (i, b) in g.bonds.iter().enumerate() {
        adj[b.a].push(b.b);
        adj[b.b].push(b.a);
        bond_id.insert((b.a.min(b.b), b.a.max(b.b)), i);
    }
    for a in &mut adj {
        a.sort_unstable();
    }
    let edge_of = |x: usize, y: usize| bond_id[&(x.min(y), x.max(y))];

    let mut candidates: BTreeSet<(usize, Vec<usize>)> = BTreeSet::new();
    for v in 0..n {
        let (dist, parent) = bfs_tree(&adj, v);
        for b in &g.bonds {
            let (x, y) = (b.a, b.b);
            if dist[x] == usize::MAX || dist[y] == usize::MAX {
                continue;
            }
            let px = tree_path(&parent, v, x);
            let py = tree_path(&parent, v, y);
            let sx: BTreeSet<usize> = px.iter().copied().collect();
            if py.iter().filter(|a| sx.contains(a)).count() != 1 {
                continue;
            }
            let len = px.len() + py.len() - 1;
            if len < 3 {
                continue;
            }
            let mut es: Vec<usize> = px
                .windows(2)
                .chain(py.windows(2))
                .map(|w| edge_of(w[0], w[1]))
                .collect();
            es.push(edge_of(x, y));
            es.sort_unstable();
            candidates.insert((len, es));
        }
    }

    // Gaussian elimination keyed by pivot bit.
    let mut basis: BTreeMap<usize, BitSet> = BTreeMap::new();
    let mut chosen = Vec::new();
    for (_, es) in candidates {
        let mut set = bit_set(m);
        for &e in &es {
            bit_flip(&mut set, e);
        }
        let mut r = set.clone();
        while let Some(p) = lowest_bit(&r) {
            match basis.get(&p) {
                Some(row) => bit_xor(&mut r, row),
                None => break,
            }
        }
        if let Some(p) = lowest_bit(&r) {
            basis.insert(p, r);
            chosen.push(set);
            if chosen.len() == rank {
                break;
            }
        }
    }

    let mut rings: Vec<Vec<usize>> = chosen.iter().map(|s| cycle_atoms(g, s)).collect();
    rings.sort_by(|a, b| {
        let mut sa = a.clone();
        let mut sb = b.clone();
        sa.sort_unstable();
        sb.sort_unstable();
        sa.cmp(&sb)
    });
    rings
        .into_iter()
        .map(|atoms| {
            let k = atoms.len();
            let aromatic = (0..k).all(|i| {
                g.bond_between(atoms[i], atoms[(i + 1) % k])
                    .is_some_and(|b| b.order == BondOrder::Aromatic)
            });
            let label = if aromatic { "aromatic" } else { "aliphatic" };
            Moiety::new(&g.id, MoietyKind::Ring, label, atoms)
        })
        .collect()
}

// ---------------------------------------------------------------- functional groups

struct Matcher<'a> {
    g: &'a MolecularGraph,
    adj: Vec<Vec<(usize, BondOrder)>>,
    p: &'a MoietyPattern,
    /// Pattern nodes in BFS order; each after the first has a mapped parent.
    order: Vec<usize>,
    parent: Vec<Option<usize>>,
    map: Vec<usize>,
    used: Vec<bool>,
    out: Vec<Vec<usize>>,
}

impl<'a> Matcher<'a> {
    fn new(g: &'a MolecularGraph, p: &'a MoietyPattern) -> Matcher<'a> {
        let k = p.nodes.len();
        let mut padj = vec![Vec::new(); k];
        for e in &p.edges {
            padj[e.a].push(e.b);
            padj[e.b].push(e.a);
        }
        let mut order = vec![0];
        let mut parent = vec![None; k];
        let mut seen = vec![false; k];
        seen[0] = true;
        let mut i = 0;
        while i < order.len() {
            let v = order[i];
            for &w in &padj[v] {
                if !seen[w] {
                    seen[w] = true;
                    parent[w] = Some(v);
                    order.push(w);
                }
            }
            i += 1;
        }
        Matcher {
            g,
            adj: g.adjacency(),
            p,
            order,
            parent,
            map: vec![usize::MAX; k],
            used: vec![false; g.num_atoms()],
            out: Vec::new(),
        }
    }

    fn consistent(&self, node: usize, atom: usize) -> bool {
        if self.used[atom] || !self.p.nodes[node].accepts(&self.g.atoms[atom], self.adj[atom].len()) {
            return false;
        }
        self.p.edges.iter().all(|e| {
            let other = if e.a == node {
                e.b
            } else if e.b == node {
                e.a
            } else {
                return true;
            };
            let mapped = self.map[other];
            if mapped == usize::MAX {
                return true;
            }
            self.adj[atom]
                .iter()
                .any(|&(w, o)| w == mapped && e.accepts(o))
        })
    }

    fn search(&mut self, depth: usize) {
        if depth == self.order.len() {
            self.out.push(self.map.clone());
            return;
        }
        let node = self.order[depth];
        let cands: Vec<usize> = match self.parent[node] {
            Some(p) => self.adj[self.map[p]].iter().map(|&(w, _)| w).collect(),
            None => (0..self.g.num_atoms()).collect(),
        };
        for atom in cands {
            if self.consistent(node, atom) {
                self.map[node] = atom;
                self.used[atom] = true;
                self.search(depth + 1);
                self.used[atom] = false;
                self.map[node] = usize::MAX;
            }
        }
    }
}

/// All embeddings of one pattern, atoms listed in pattern node order.
pub fn pattern_embeddings(g: &MolecularGraph, p: &MoietyPattern) -> Vec<Vec<usize>> {
    if g.num_atoms() == 0 {
        return Vec::new();
    }
    let mut m = Matcher::new(g, p);
    m.search(0);
    m.out
}

/// Independent re-check of a mapping against every node and edge constraint.
pub fn verify_embedding(g: &MolecularGraph, p: &MoietyPattern, atoms: &[usize]) -> bool {
    if atoms.len() != p.nodes.len() || atoms.iter().any(|&a| a >= g.num_atoms()) {
        return false;
    }
    let distinct: BTreeSet<_> = atoms.iter().collect();
    if distinct.len() != atoms.len() {
        return false;
    }
    let nodes_ok = p
        .nodes
        .iter()
        .zip(atoms)
        .all(|(node, &a)| node.accepts(&g.atoms[a], g.degree(a)));
    let edges_ok = p.edges.iter().all(|e| {
        g.bond_between(atoms[e.a], atoms[e.b])
            .is_some_and(|b| e.accepts(b.order))
    });
    nodes_ok && edges_ok
}

/// Match every library pattern, deduplicate by (atom set, type), then drop
/// matches whose core atoms sit inside a match of a subsuming type.
pub fn match_functional_groups(g: &MolecularGraph, lib: &PatternLibrary) -> Result<Vec<Moiety>, MoietyError> {
    lib.validate()?;
    struct Hit<'p> {
        pattern: &'p MoietyPattern,
        atoms: Vec<usize>,
        set: BTreeSet<usize>,
        core: BTreeSet<usize>,
    }
    let mut hits: Vec<Hit> = Vec::new();
    for p in &lib.patterns {
        let mut seen = BTreeSet::new();
        for atoms in pattern_embeddings(g, p) {
            let set: BTreeSet<usize> = atoms.iter().copied().collect();
            if !seen.insert(set.clone()) {
                continue;
            }
            let core = p.core_nodes().map(|i| atoms[i]).collect();
            hits.push(Hit {
                pattern: p,
                atoms,
                set,
                core,
            });
        }
    }
    let suppressed = |h: &Hit| {
        hits.iter().any(|s| {
            s.pattern.subsumes.iter().any(|n| *n == h.pattern.name) && h.core.is_subset(&s.set)
        })
    };
    let mut out: Vec<(Vec<usize>, Moiety)> = hits
        .iter()
        .filter(|h| !suppressed(h))
        .map(|h| {
            (
                h.set.iter().copied().collect(),
                Moiety::new(&g.id, MoietyKind::FunctionalGroup, &h.pattern.name, h.atoms.clone()),
            )
        })
        .collect();
    out.sort_by(|a, b| (&a.0, &a.1.type_label).cmp(&(&b.0, &b.1.type_label)));
    Ok(out.into_iter().map(|(_, m)| m).collect())
}

// ---------------------------------------------------------------- chains

/// Connected components of non-ring carbons, minus components lying wholly
/// inside functional-group matches.
pub fn detect_aliphatic_chains(g: &MolecularGraph, moieties: &[Moiety]) -> Vec<Moiety> {
    let mut in_ring = vec![false; g.num_atoms()];
    let mut in_fg = vec![false; g.num_atoms()];
    for m in moieties {
        let flags = match m.kind {
            MoietyKind::Ring => &mut in_ring,
            MoietyKind::FunctionalGroup => &mut in_fg,
            MoietyKind::AliphaticChain => continue,
        };
        for &a in &m.atoms {
            if a < flags.len() {
                flags[a] = true;
            }
        }
    }
    let eligible: Vec<bool> = g
        .atoms
        .iter()
        .map(|a| a.element == Element::C && !a.aromatic && !in_ring[a.index])
        .collect();
    let adj = g.adjacency();
    let mut seen = vec![false; g.num_atoms()];
    let mut chains = Vec::new();
    for start in 0..g.num_atoms() {
        if !eligible[start] || seen[start] {
            continue;
        }
        let mut comp = vec![start];
        seen[start] = true;
        let mut saturated = true;
        let mut i = 0;
        while i < comp.len() {
            let v = comp[i];
            for &(w, o) in &adj[v] {
                if !eligible[w] {
                    continue;
                }
                if o != BondOrder::Single {
                    saturated = false;
                }
                if !seen[w] {
                    seen[w] = true;
                    comp.push(w);
                }
            }
            i += 1;
        }
        if comp.iter().all(|&a| in_fg[a]) {
            continue;
        }
        comp.sort_unstable();
        let label = if saturated { "saturated" } else { "unsaturated" };
        chains.push(Moiety::new(&g.id, MoietyKind::AliphaticChain, label, comp));
    }
    chains
}

/// Rings, then functional groups, then chains.
pub fn detect_moieties(g: &MolecularGraph, lib: &PatternLibrary) -> Result<Vec<Moiety>, MoietyError> {
    let mut all = perceive_rings(g);
    all.extend(match_functional_groups(g, lib)?);
    let chains = detect_aliphatic_chains(g, &all);
    all.extend(chains);
    Ok(all)
}

// ---------------------------------------------------------------- relations

pub fn infer_moiety_relations(g: &MolecularGraph, moieties: &[Moiety]) -> Result<Vec<MoietyRelation>, MoietyError> {
    let n = g.num_atoms();
    for (i, m) in moieties.iter().enumerate() {
        if m.graph_id != g.id {
            return Err(MoietyError::GraphMismatch {
                index: i,
                found: m.graph_id.clone(),
                expected: g.id.clone(),
            });
        }
        if let Some(&a) = m.atoms.iter().find(|&&a| a >= n) {
            return Err(MoietyError::AtomOutOfRange { index: i, atom: a, len: n });
        }
    }
    let masks: Vec<Vec<bool>> = moieties
        .iter()
        .map(|m| {
            let mut v = vec![false; n];
            for &a in &m.atoms {
                v[a] = true;
            }
            v
        })
        .collect();
    let mut out = Vec::new();
    for i in 0..moieties.len() {
        for j in i + 1..moieties.len() {
            let (mi, mj) = (&masks[i], &masks[j]);
            let label = if moieties[i].atoms.iter().any(|&a| mj[a]) {
                RelationLabel::Fused
            } else if g.bonds.iter().any(|b| (mi[b.a] && mj[b.b]) || (mi[b.b] && mj[b.a])) {
                let chains: Vec<&Moiety> = [&moieties[i], &moieties[j]]
                    .into_iter()
                    .filter(|m| m.kind == MoietyKind::AliphaticChain)
                    .collect();
                if chains.is_empty() {
                    RelationLabel::Connected
                } else if chains.iter().all(|c| c.is_saturated_chain()) {
                    RelationLabel::Saturated
                } else {
                    RelationLabel::Unsaturated
                }
            } else {
                continue;
            };
            out.push(MoietyRelation { a: i, b: j, label });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- records

struct AtomList<'a>(&'a [usize]);

impl fmt::Display for AtomList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str("]")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum FgRecord {
    FunctionalGroup {
        compound: String,
        atoms: Vec<usize>,
        length: usize,
        kind: String,
    },
    Ring {
        compound: String,
        ring_id: String,
        atoms: Vec<usize>,
        length: usize,
        kind: String,
    },
    HasStruc {
        compound: String,
        atoms: Vec<usize>,
        length: usize,
        struc: String,
    },
    Fused {
        compound: String,
        struc1: String,
        atoms1: Vec<usize>,
        struc2: String,
        atoms2: Vec<usize>,
    },
    Connected {
        compound: String,
        struc1: String,
        atoms1: Vec<usize>,
        struc2: String,
        atoms2: Vec<usize>,
    },
}

impl fmt::Display for FgRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FgRecord::FunctionalGroup { compound, atoms, length, kind } => {
                write!(f, "functional_group({compound}, {}, {length}, {kind})", AtomList(atoms))
            }
            FgRecord::Ring { compound, ring_id, atoms, length, kind } => {
                write!(f, "ring({compound}, {ring_id}, {}, {length}, {kind})", AtomList(atoms))
            }
            FgRecord::HasStruc { compound, atoms, length, struc } => {
                write!(f, "has_struc({compound}, {}, {length}, {struc})", AtomList(atoms))
            }
            FgRecord::Fused { compound, struc1, atoms1, struc2, atoms2 } => write!(
                f,
                "fused({compound}, {struc1}, {}, {struc2}, {})",
                AtomList(atoms1),
                AtomList(atoms2)
            ),
            FgRecord::Connected { compound, struc1, atoms1, struc2, atoms2 } => write!(
                f,
                "connected({compound}, {struc1}, {}, {struc2}, {})",
                AtomList(atoms1),
                AtomList(atoms2)
            ),
        }
    }
}

/// Per moiety its primary record (chains have none) then `has_struc`; relations
/// follow in input order. Chain links become `connected` records whose struc
/// names carry the saturation.
pub fn emit_fg_records(compound_id: &str, moieties: &[Moiety], relations: &[MoietyRelation]) -> Vec<FgRecord> {
    let mut out = Vec::new();
    let mut ring_no = 0;
    for m in moieties {
        match m.kind {
            MoietyKind::Ring => {
                out.push(FgRecord::Ring {
                    compound: compound_id.to_string(),
                    ring_id: format!("r{ring_no}"),
                    atoms: m.atoms.clone(),
                    length: m.length,
                    kind: m.type_label.clone(),
                });
                ring_no += 1;
            }
            MoietyKind::FunctionalGroup => out.push(FgRecord::FunctionalGroup {
                compound: compound_id.to_string(),
                atoms: m.atoms.clone(),
                length: m.length,
                kind: m.type_label.clone(),
            }),
            MoietyKind::AliphaticChain => {}
        }
        out.push(FgRecord::HasStruc {
            compound: compound_id.to_string(),
            atoms: m.atoms.clone(),
            length: m.length,
            struc: m.struc_name(),
        });
    }
    for r in relations {
        let (x, y) = (&moieties[r.a], &moieties[r.b]);
        let compound = compound_id.to_string();
        let (struc1, atoms1, struc2, atoms2) = (x.struc_name(), x.atoms.clone(), y.struc_name(), y.atoms.clone());
        out.push(match r.label {
            RelationLabel::Fused => FgRecord::Fused { compound, struc1, atoms1, struc2, atoms2 },
            _ => FgRecord::Connected { compound, struc1, atoms1, struc2, atoms2 },
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;

    fn mol(s: &str) -> MolecularGraph {
        parse_smiles(s, "m").unwrap()
    }

    fn fgs(s: &str) -> Vec<(String, Vec<usize>)> {
        match_functional_groups(&mol(s), &PatternLibrary::default_library())
            .unwrap()
            .into_iter()
            .map(|m| (m.type_label, m.atoms))
            .collect()
    }

    #[test]
    fn library_loads() {
        let lib = PatternLibrary::default_library();
        assert_eq!(lib.patterns.len(), 16);
        assert_eq!(lib.vocabulary().len(), 20);
    }

    #[test]
    fn rings_basic() {
        let r = perceive_rings(&mol("c1ccccc1"));
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].atoms, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(r[0].type_label, "aromatic");
        let r = perceive_rings(&mol("C1CC1"));
        assert_eq!((r.len(), r[0].length, r[0].type_label.as_str()), (1, 3, "aliphatic"));
        assert!(perceive_rings(&mol("CCO")).is_empty());
    }

    #[test]
    fn naphthalene_rings_share_two_atoms() {
        let r = perceive_rings(&mol("c1ccc2ccccc2c1"));
        assert_eq!(r.len(), 2);
        assert!(r.iter().all(|x| x.length == 6));
        assert_eq!(r[0].atom_set().intersection(&r[1].atom_set()).count(), 2);
    }

    #[test]
    fn cubane_basis_is_all_four_rings() {
        // 8 atoms, 12 bonds: rank 5, all chosen rings are 4-cycles.
        let r = perceive_rings(&mol("C12C3C4C1C5C2C3C45"));
        assert_eq!(r.len(), 5);
        assert!(r.iter().all(|x| x.length == 4));
    }

    #[test]
    fn hydroxyl_in_ethanol() {
        assert_eq!(fgs("CCO"), vec![("hydroxyl".to_string(), vec![2, 1])]);
        assert!(fgs("c1ccccc1").is_empty());
    }

    #[test]
    fn aspirin_groups() {
        // C0 C1(=O2) O3 c4 c5 c6 c7 c8 c9 C10(=O11) O12
        let got = fgs("CC(=O)Oc1ccccc1C(=O)O");
        assert_eq!(
            got,
            vec![
                ("ester".to_string(), vec![1, 2, 3, 4]),
                ("carboxyl".to_string(), vec![10, 11, 12]),
            ]
        );
    }

    #[test]
    fn subsumption_keeps_specific_types() {
        let got: Vec<String> = fgs("CC(=O)N").into_iter().map(|x| x.0).collect();
        assert_eq!(got, vec!["amide"]);
        let got: Vec<String> = fgs("CC(=O)C").into_iter().map(|x| x.0).collect();
        assert_eq!(got, vec!["carbonyl"]);
        let got: Vec<String> = fgs("C[N+](=O)[O-]").into_iter().map(|x| x.0).collect();
        assert_eq!(got, vec!["nitro"]);
    }

    #[test]
    fn chains() {
        let lib = PatternLibrary::default_library();
        let d = |s: &str| {
            detect_moieties(&mol(s), &lib)
                .unwrap()
                .into_iter()
                .filter(|m| m.kind == MoietyKind::AliphaticChain)
                .map(|m| (m.type_label, m.atoms))
                .collect::<Vec<_>>()
        };
        assert_eq!(d("CCCC"), vec![("saturated".to_string(), vec![0, 1, 2, 3])]);
        assert_eq!(d("CC=CC"), vec![("unsaturated".to_string(), vec![0, 1, 2, 3])]);
        assert_eq!(d("Cc1ccccc1"), vec![("saturated".to_string(), vec![0])]);
        // methanol carbon is the hydroxyl anchor, so no chain survives
        assert!(d("CO").is_empty());
    }

    fn labels(s: &str) -> Vec<RelationLabel> {
        let g = mol(s);
        let ms = detect_moieties(&g, &PatternLibrary::default_library()).unwrap();
        infer_moiety_relations(&g, &ms).unwrap().into_iter().map(|r| r.label).collect()
    }

    #[test]
    fn relations() {
        assert_eq!(labels("c1ccc2ccccc2c1"), vec![RelationLabel::Fused]);
        assert_eq!(labels("c1ccccc1-c2ccccc2"), vec![RelationLabel::Connected]);
        assert_eq!(labels("Cc1ccccc1"), vec![RelationLabel::Saturated]);
        let mut l = labels("CC=Cc1ccccc1");
        l.sort();
        assert_eq!(
            l,
            vec![RelationLabel::Fused, RelationLabel::Connected, RelationLabel::Unsaturated]
        );
    }

    #[test]
    fn relation_errors() {
        let g = mol("CCO");
        let mut ms = detect_moieties(&g, &PatternLibrary::default_library()).unwrap();
        ms[0].graph_id = "other".into();
        assert!(matches!(infer_moiety_relations(&g, &ms), Err(MoietyError::GraphMismatch { .. })));
    }

    #[test]
    fn records() {
        let g = parse_smiles("c1ccccc1", "benzene").unwrap();
        let ms = detect_moieties(&g, &PatternLibrary::default_library()).unwrap();
        let rs = infer_moiety_relations(&g, &ms).unwrap();
        let lines: Vec<String> = emit_fg_records("benzene", &ms, &rs).iter().map(|r| r.to_string()).collect();
        assert_eq!(
            lines,
            vec![
                "ring(benzene, r0, [0,1,2,3,4,5], 6, aromatic)",
                "has_struc(benzene, [0,1,2,3,4,5], 6, aromatic_ring)"
            ]
        );
        let g = parse_smiles("CCO", "ethanol").unwrap();
        let ms = match_functional_groups(&g, &PatternLibrary::default_library()).unwrap();
        let lines: Vec<String> = emit_fg_records("ethanol", &ms, &[]).iter().map(|r| r.to_string()).collect();
        assert_eq!(lines[0], "functional_group(ethanol, [2,1], 2, hydroxyl)");
        assert_eq!(lines[1], "has_struc(ethanol, [2,1], 2, hydroxyl)");
    }

    #[test]
    fn malformed_patterns_rejected() {
        let bad = [
            r#"{"patterns":[{"name":"x","nodes":[],"edges":[]}]}"#,
            r#"{"patterns":[{"name":"x","nodes":[{"element":["Xx"]}],"edges":[]}]}"#,
            r#"{"patterns":[{"name":"x","nodes":[{},{}],"edges":[]}]}"#,
            r#"{"patterns":[{"name":"x","nodes":[{},{}],"edges":[{"a":0,"b":2}]}]}"#,
            r#"{"patterns":[{"name":"x","nodes":[{"min_degree":3,"max_degree":1}],"edges":[]}]}"#,
            r#"{"patterns":[{"name":"x","nodes":[{"role":"anchor"}],"edges":[]}]}"#,
        ];
        for b in bad {
            assert!(PatternLibrary::from_json(b).is_err(), "{b}");
        }
    }
}
