//! Heterogeneous graphs built by attaching element-property nodes or moiety
//! nodes to a molecular graph.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::{Atom, Bond, BondOrder, MolecularGraph};
use crate::kg::{one_hop_properties, KnowledgeGraph};
use crate::moiety::{
    detect_moieties, infer_moiety_relations, Moiety, MoietyError, MoietyRelation, PatternLibrary, RelationLabel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Atom,
    Property,
    Moiety,
}

impl NodeKind {
    pub fn name(self) -> &'static str {
        match self {
            NodeKind::Atom => "atom",
            NodeKind::Property => "property",
            NodeKind::Moiety => "moiety",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Bond,
    PropOf,
    PartOf,
    Fused,
    Connected,
    Saturated,
    Unsaturated,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 7] = [
        EdgeKind::Bond,
        EdgeKind::PropOf,
        EdgeKind::PartOf,
        EdgeKind::Fused,
        EdgeKind::Connected,
        EdgeKind::Saturated,
        EdgeKind::Unsaturated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EdgeKind::Bond => "bond",
            EdgeKind::PropOf => "prop_of",
            EdgeKind::PartOf => "part_of",
            EdgeKind::Fused => "fused",
            EdgeKind::Connected => "connected",
            EdgeKind::Saturated => "saturated",
            EdgeKind::Unsaturated => "unsaturated",
        }
    }

    pub fn from_relation(label: RelationLabel) -> EdgeKind {
        match label {
            RelationLabel::Fused => EdgeKind::Fused,
            RelationLabel::Connected => EdgeKind::Connected,
            RelationLabel::Saturated => EdgeKind::Saturated,
            RelationLabel::Unsaturated => EdgeKind::Unsaturated,
        }
    }

    pub fn is_moiety_relation(self) -> bool {
        matches!(
            self,
            EdgeKind::Fused | EdgeKind::Connected | EdgeKind::Saturated | EdgeKind::Unsaturated
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeteroNode {
    pub id: usize,
    pub kind: NodeKind,
    /// Bracket atom token for atoms, property name, or `kind:type` for moieties.
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeteroEdge {
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeKind,
    pub directed: bool,
    pub label: String,
}

/// Atom nodes come first, so node id `i < num_atoms` is atom `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeteroGraph {
    pub id: String,
    pub nodes: Vec<HeteroNode>,
    pub edges: Vec<HeteroEdge>,
}

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("moiety {index} references atom {atom}, graph has {len} atoms")]
    AtomOutOfRange { index: usize, atom: usize, len: usize },
    #[error("relation references moiety {index}, only {len} moieties given")]
    MoietyOutOfRange { index: usize, len: usize },
    #[error("invalid heterogeneous graph: {0}")]
    Invalid(String),
    #[error(transparent)]
    Moiety(#[from] MoietyError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl HeteroGraph {
    /// The plain atom-bond graph.
    pub fn from_molecule(g: &MolecularGraph) -> HeteroGraph {
        let nodes = g
            .atoms
            .iter()
            .map(|a| HeteroNode {
                id: a.index,
                kind: NodeKind::Atom,
                label: a.token(),
            })
            .collect();
        let edges = g
            .bonds
            .iter()
            .map(|b| HeteroEdge {
                src: b.a,
                dst: b.b,
                kind: EdgeKind::Bond,
                directed: false,
                label: b.order.name().to_string(),
            })
            .collect();
        HeteroGraph {
            id: g.id.clone(),
            nodes,
            edges,
        }
    }

    fn add_node(&mut self, kind: NodeKind, label: impl Into<String>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(HeteroNode {
            id,
            kind,
            label: label.into(),
        });
        id
    }

    fn add_edge(&mut self, src: usize, dst: usize, kind: EdgeKind, directed: bool, label: impl Into<String>) {
        self.edges.push(HeteroEdge {
            src,
            dst,
            kind,
            directed,
            label: label.into(),
        });
    }

    pub fn num_atoms(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Atom).count()
    }

    pub fn count_nodes(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    pub fn count_edges(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    /// Check the structural invariants: ids dense, atoms first, endpoint kinds
    /// per edge kind, and only prop_of edges directed.
    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: String| Err(AugmentError::Invalid(m));
        let atoms = self.num_atoms();
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return bad(format!("node at position {i} has id {}", n.id));
            }
            if (i < atoms) != (n.kind == NodeKind::Atom) {
                return bad(format!("atom nodes must precede other nodes (node {i})"));
            }
        }
        for e in &self.edges {
            let (Some(s), Some(d)) = (self.nodes.get(e.src), self.nodes.get(e.dst)) else {
                return bad(format!("edge {}->{} out of range", e.src, e.dst));
            };
            let ok = match e.kind {
                EdgeKind::Bond => s.kind == NodeKind::Atom && d.kind == NodeKind::Atom && !e.directed,
                EdgeKind::PropOf => s.kind == NodeKind::Property && d.kind == NodeKind::Atom && e.directed,
                EdgeKind::PartOf => s.kind == NodeKind::Moiety && d.kind == NodeKind::Atom && !e.directed,
                _ => s.kind == NodeKind::Moiety && d.kind == NodeKind::Moiety && !e.directed,
            };
            if !ok {
                return bad(format!(
                    "{} edge {}->{} joins {} to {}",
                    e.kind.name(),
                    e.src,
                    e.dst,
                    s.kind.name(),
                    d.kind.name()
                ));
            }
        }
        Ok(())
    }

    /// Rebuild the molecule from atom nodes and bond edges only.
    pub fn restrict_to_molecule(&self) -> Result<MolecularGraph, AugmentError> {
        let mut atoms = Vec::new();
        for n in self.nodes.iter().filter(|n| n.kind == NodeKind::Atom) {
            let atom = Atom::from_token(&n.label, atoms.len())
                .map_err(|e| AugmentError::Invalid(format!("atom node {}: {e}", n.id)))?;
            if n.id != atom.index {
                return Err(AugmentError::Invalid("atom nodes are not a prefix".into()));
            }
            atoms.push(atom);
        }
        let mut bonds = Vec::new();
        for e in self.edges.iter().filter(|e| e.kind == EdgeKind::Bond) {
            let order = BondOrder::from_name(&e.label)
                .ok_or_else(|| AugmentError::Invalid(format!("bond label `{}`", e.label)))?;
            bonds.push(Bond {
                a: e.src,
                b: e.dst,
                order,
            });
        }
        let mut g = MolecularGraph {
            id: self.id.clone(),
            atoms,
            bonds,
            multi_fragment: false,
        };
        g.multi_fragment = g.num_components() > 1;
        Ok(g)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("hetero graph serializes")
    }

    pub fn from_json(text: &str) -> Result<HeteroGraph, AugmentError> {
        let hg: HeteroGraph = serde_json::from_str(text)?;
        hg.validate()?;
        Ok(hg)
    }

    /// Graphviz rendering; shapes by node kind, styles by edge kind.
    pub fn to_dot(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "graph \"{}\" {{", escape(&self.id));
        for n in &self.nodes {
            let shape = match n.kind {
                NodeKind::Atom => "circle",
                NodeKind::Property => "box",
                NodeKind::Moiety => "hexagon",
            };
            let _ = writeln!(s, "  n{} [label=\"{}\", shape={shape}];", n.id, escape(&n.label));
        }
        for e in &self.edges {
            let style = match e.kind {
                EdgeKind::Bond => "style=solid",
                EdgeKind::PropOf => "style=dashed, dir=forward",
                EdgeKind::PartOf => "style=dotted",
                EdgeKind::Fused => "style=bold, color=red",
                EdgeKind::Connected => "style=bold, color=blue",
                EdgeKind::Saturated => "style=bold, color=darkgreen",
                EdgeKind::Unsaturated => "style=bold, color=orange",
            };
            let _ = writeln!(
                s,
                "  n{} -- n{} [kind={}, label=\"{}\", {style}];",
                e.src,
                e.dst,
                e.kind.name(),
                escape(&e.label)
            );
        }
        s.push_str("}\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn add_element_kg(hg: &mut HeteroGraph, g: &MolecularGraph, kg: &KnowledgeGraph, dup_properties: bool) {
    let mut shared: BTreeMap<String, usize> = BTreeMap::new();
    for atom in &g.atoms {
        for t in one_hop_properties(kg, atom.element.symbol()) {
            let p = if dup_properties {
                hg.add_node(NodeKind::Property, t.head.clone())
            } else if let Some(&p) = shared.get(&t.head) {
                p
            } else {
                let p = hg.add_node(NodeKind::Property, t.head.clone());
                shared.insert(t.head.clone(), p);
                p
            };
            hg.add_edge(p, atom.index, EdgeKind::PropOf, true, t.relation.clone());
        }
    }
}

fn add_fg_kg(
    hg: &mut HeteroGraph,
    g: &MolecularGraph,
    moieties: &[Moiety],
    relations: &[MoietyRelation],
) -> Result<(), AugmentError> {
    let n = g.num_atoms();
    for (i, m) in moieties.iter().enumerate() {
        if let Some(&a) = m.atoms.iter().find(|&&a| a >= n) {
            return Err(AugmentError::AtomOutOfRange { index: i, atom: a, len: n });
        }
    }
    for r in relations {
        if let Some(idx) = [r.a, r.b].into_iter().find(|&x| x >= moieties.len()) {
            return Err(AugmentError::MoietyOutOfRange {
                index: idx,
                len: moieties.len(),
            });
        }
    }
    let ids: Vec<usize> = moieties
        .iter()
        .map(|m| hg.add_node(NodeKind::Moiety, m.vocab_key()))
        .collect();
    for (m, &id) in moieties.iter().zip(&ids) {
        for &a in &m.atoms {
            hg.add_edge(id, a, EdgeKind::PartOf, false, "part_of");
        }
    }
    for r in relations {
        hg.add_edge(ids[r.a], ids[r.b], EdgeKind::from_relation(r.label), false, r.label.name());
    }
    Ok(())
}

/// Property nodes are shared across atoms; one prop_of edge per (triple, atom).
pub fn augment_with_element_kg(g: &MolecularGraph, kg: &KnowledgeGraph) -> HeteroGraph {
    let mut hg = HeteroGraph::from_molecule(g);
    add_element_kg(&mut hg, g, kg, false);
    hg
}

/// Like [`augment_with_element_kg`] but every prop_of edge gets its own property node.
pub fn augment_with_element_kg_per_atom(g: &MolecularGraph, kg: &KnowledgeGraph) -> HeteroGraph {
    let mut hg = HeteroGraph::from_molecule(g);
    add_element_kg(&mut hg, g, kg, true);
    hg
}

pub fn augment_with_fg_kg(
    g: &MolecularGraph,
    moieties: &[Moiety],
    relations: &[MoietyRelation],
) -> Result<HeteroGraph, AugmentError> {
    let mut hg = HeteroGraph::from_molecule(g);
    add_fg_kg(&mut hg, g, moieties, relations)?;
    Ok(hg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    ElementKg,
    FgKg,
}

impl AugmentMode {
    pub fn name(self) -> &'static str {
        match self {
            AugmentMode::ElementKg => "element-kg",
            AugmentMode::FgKg => "fg-kg",
        }
    }

    pub fn from_name(s: &str) -> Option<AugmentMode> {
        match s.replace('_', "-").as_str() {
            "element-kg" => Some(AugmentMode::ElementKg),
            "fg-kg" => Some(AugmentMode::FgKg),
            _ => None,
        }
    }
}

/// Everything needed to augment molecules in either mode.
#[derive(Debug, Clone)]
pub struct Augmenter {
    pub mode: AugmentMode,
    pub kg: KnowledgeGraph,
    pub library: PatternLibrary,
    pub dup_properties: bool,
    /// Apply both augmentations regardless of `mode`.
    pub compose: bool,
}

impl Augmenter {
    pub fn new(mode: AugmentMode, kg: KnowledgeGraph, library: PatternLibrary) -> Augmenter {
        Augmenter {
            mode,
            kg,
            library,
            dup_properties: false,
            compose: false,
        }
    }

    pub fn augment(&self, g: &MolecularGraph) -> Result<HeteroGraph, AugmentError> {
        let mut hg = HeteroGraph::from_molecule(g);
        if self.compose || self.mode == AugmentMode::ElementKg {
            add_element_kg(&mut hg, g, &self.kg, self.dup_properties);
        }
        if self.compose || self.mode == AugmentMode::FgKg {
            let ms = detect_moieties(g, &self.library)?;
            let rs = infer_moiety_relations(g, &ms)?;
            add_fg_kg(&mut hg, g, &ms, &rs)?;
        }
        Ok(hg)
    }
}
