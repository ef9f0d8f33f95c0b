//! Knowledge-guided augmentation and contrastive pretraining for molecular graphs.
//!
//! The crate covers the whole pipeline: SMILES ingestion ([`chem`]), the
//! element-property knowledge graph ([`kg`]) and its embeddings ([`kge`]),
//! ring / functional-group perception ([`moiety`]), heterogeneous graph
//! construction ([`augment`]), a small dense numeric core ([`nn`]), the
//! knowledge-aware message-passing encoder ([`encoder`]) and contrastive
//! pretraining with a frozen-encoder linear probe ([`ssl`]).
//!
//! Runnable walkthroughs live in `examples/`; the `kgmol` binary is a thin
//! batch front-end over [`cli::dispatch`].

pub mod augment;
pub mod chem;
pub mod cli;
pub mod encoder;
pub mod kg;
pub mod kge;
pub mod moiety;
pub mod nn;
pub mod ssl;


pub use chem::{parse_smiles, Atom, Bond, BondOrder, Element, MolecularGraph};
pub use kg::{KnowledgeGraph, KnowledgeTriple};
pub use kge::{EmbeddingTable, KgeConfig, KgeModel};

pub use moiety::{Moiety, MoietyKind, MoietyRelation, PatternLibrary, RelationLabel};
pub use augment::{AugmentMode, Augmenter, EdgeKind, HeteroEdge, HeteroGraph, HeteroNode, NodeKind};

/// Bundled molecule sets.
pub mod datasets {
    use crate::chem::{parse_molecule_list, MolecularGraph};

    /// 20 small molecules covering rings, fused systems and common groups.
    pub const CORPUS: &str = include_str!("../data/corpus.smi");
    /// 20 alcohols and 20 chloroalkanes, labeled.
    pub const TWO_FAMILY: &str = include_str!("../data/two_family.smi");

    pub fn corpus() -> Vec<MolecularGraph> {
        parse_molecule_list(CORPUS)
            .expect("bundled corpus parses")
            .into_iter()
            .map(|(g, _)| g)
            .collect()
    }

    pub fn two_family() -> Vec<(MolecularGraph, String)> {
        parse_molecule_list(TWO_FAMILY)
            .expect("bundled two-family set parses")
            .into_iter()
            .map(|(g, l)| (g, l.expect("labeled")))
            .collect()
    }
}
