//! Rings, functional groups and aliphatic chains, with their pairwise relations.

use kgmol::chem::parse_smiles;
use kgmol::moiety::{detect_moieties, emit_fg_records, infer_moiety_relations, PatternLibrary};

fn main() {
    let lib = PatternLibrary::default_library();
    let smiles = std::env::args().nth(1).unwrap_or_else(|| "CC(=O)Oc1ccccc1C(=O)O".into());
    let g = parse_smiles(&smiles, "query").expect("valid SMILES");
    let ms = detect_moieties(&g, &lib).expect("detection");
    let rs = infer_moiety_relations(&g, &ms).expect("relations");
    for (i, m) in ms.iter().enumerate() {
        println!("m{i}: {:<16} {:?}", m.struc_name(), m.atoms);
    }
    for r in &rs {
        println!("m{} {} m{}", r.a, r.label.name(), r.b);
    }
    println!();
    for rec in emit_fg_records(&g.id, &ms, &rs) {
        println!("{rec}");
    }
}
