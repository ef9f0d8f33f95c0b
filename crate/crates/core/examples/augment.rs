//! Build both knowledge-augmented views of a molecule and print them as DOT.
//!
//! cargo run --example augment | dot -Tsvg > view.svg

use kgmol::augment::{AugmentMode, Augmenter, EdgeKind, NodeKind};
use kgmol::chem::parse_smiles;
use kgmol::kg::load_sample_element_kg;
use kgmol::moiety::PatternLibrary;

fn main() {
    let g = parse_smiles("CC=Cc1ccccc1", "propenylbenzene").unwrap();
    for mode in [AugmentMode::ElementKg, AugmentMode::FgKg] {
        let aug = Augmenter::new(mode, load_sample_element_kg(), PatternLibrary::default_library());
        let hg = aug.augment(&g).unwrap();
        eprintln!(
            "{}: {} atoms, {} property nodes, {} moiety nodes, {} prop_of, {} part_of",
            mode.name(),
            hg.count_nodes(NodeKind::Atom),
            hg.count_nodes(NodeKind::Property),
            hg.count_nodes(NodeKind::Moiety),
            hg.count_edges(EdgeKind::PropOf),
            hg.count_edges(EdgeKind::PartOf),
        );
        assert_eq!(hg.restrict_to_molecule().unwrap(), g);
        print!("{}", hg.to_dot());
    }
}
