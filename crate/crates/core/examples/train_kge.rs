//! Train RotatE on the element KG, then TransE on a synthetic translation KG
//! with held-out link prediction.

use kgmol::kg::{load_sample_element_kg, KnowledgeGraph};
use kgmol::kge::{
    evaluate_filtered, synthetic_translation_kg, train_embeddings, train_embeddings_with, KgeConfig, KgeModel,
};

fn main() {
    let kg = load_sample_element_kg();
    let cfg = KgeConfig {
        dim: 16,
        steps: 2000,
        ..KgeConfig::default()
    };
    let (table, losses) = train_embeddings_with(&kg, &cfg, |_| {}).expect("training");
    println!(
        "rotate: loss {:.3} -> {:.3}, {} entities",
        losses[0],
        losses[losses.len() - 1],
        table.entity_len()
    );
    if let Ok(v) = table.entity("Gas") {
        println!("Gas = {:?}...", &v[..4]);
    }

    let (train, test) = synthetic_translation_kg(50, 4, 200, 20, 1);
    let cfg = KgeConfig {
        model: KgeModel::TransE,
        dim: 16,
        margin: 1.0,
        learning_rate: 0.2,
        negatives_per_positive: 16,
        steps: 5000,
        seed: 1,
    };
    let table = train_embeddings(&train, &cfg).expect("training");
    let known = train.merged(&KnowledgeGraph::from_triples(test.clone()));
    let m = evaluate_filtered(&test, &known, &table, KgeModel::TransE).expect("evaluation");
    println!(
        "transe held-out: MRR {:.3}  Hits@1 {:.3}  Hits@3 {:.3}  Hits@10 {:.3}",
        m.mrr, m.hits_at_1, m.hits_at_3, m.hits_at_10
    );
}
