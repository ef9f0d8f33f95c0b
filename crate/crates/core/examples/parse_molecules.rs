//! Parse SMILES into molecular graphs and print a canonical signature.
//!
//! cargo run --example parse_molecules -- "CC(=O)Oc1ccccc1C(=O)O"

use kgmol::chem::{graph_signature, parse_smiles};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let inputs = if args.is_empty() {
        vec!["CCO".to_string(), "c1ccccc1O".into(), "[O-][N+](=O)c1ccccc1".into()]
    } else {
        args
    };
    for smi in inputs {
        match parse_smiles(&smi, &smi) {
            Ok(g) => {
                println!("{smi}: {} atoms, {} bonds", g.num_atoms(), g.num_bonds());
                for (i, a) in g.atoms.iter().enumerate() {
                    println!("  {i:>2} {:<6} degree {}", a.token(), g.degree(i));
                }
                println!("  signature {}", graph_signature(&g));
            }
            Err(e) => eprintln!("{smi}: {e}"),
        }
    }
}
