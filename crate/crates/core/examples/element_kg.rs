//! Load the bundled element knowledge graph, validate it, and list the
//! one-hop properties of a few elements.

use kgmol::kg::{load_sample_element_kg, one_hop_properties, validate_element_kg, KnowledgeGraph, KnowledgeTriple};

fn main() {
    let kg = load_sample_element_kg();
    println!("{} triples, {} entities, {} relations", kg.len(), kg.entities().len(), kg.relations().len());
    println!("valid: {}", validate_element_kg(&kg).is_valid());

    for el in ["C", "O", "Cl"] {
        let props: Vec<String> = one_hop_properties(&kg, el)
            .iter()
            .map(|t| format!("{} --{}-->", t.head, t.relation))
            .collect();
        println!("{el}: {}", props.join(", "));
    }

    let bad = KnowledgeGraph::from_triples([KnowledgeTriple::new("Gas", "isstateof", "O")]);
    for f in validate_element_kg(&bad).findings {
        println!("finding: {f:?}");
    }
}
