//! Contrastive pretraining on two molecule families, then a linear probe on
//! the frozen encoder.
//!
//! cargo run --release --example pretrain_probe -- [element-kg|fg-kg] [epochs]

use kgmol::augment::{AugmentMode, Augmenter};
use kgmol::datasets;
use kgmol::kg::load_sample_element_kg;
use kgmol::kge::{train_embeddings, KgeConfig};
use kgmol::moiety::PatternLibrary;
use kgmol::ssl::{linear_probe, pretrain, PretrainContext, ProbeConfig, SslConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let mode = args
        .next()
        .and_then(|m| AugmentMode::from_name(&m))
        .unwrap_or(AugmentMode::ElementKg);
    let epochs = args.next().and_then(|e| e.parse().ok()).unwrap_or(30);

    let data = datasets::two_family();
    let mols: Vec<_> = data.iter().map(|(g, _)| g.clone()).collect();
    let kg = load_sample_element_kg();
    let emb = train_embeddings(&kg, &KgeConfig { dim: 16, steps: 2000, ..KgeConfig::default() }).unwrap();
    let ctx = PretrainContext {
        augmenter: Augmenter::new(mode, kg, PatternLibrary::default_library()),
        embeddings: Some(emb),
    };
    let cfg = SslConfig { mode, epochs, ..SslConfig::default() };
    let (models, log) = pretrain(&mols, &ctx, &cfg).unwrap();
    for e in log.epochs.iter().step_by(5) {
        println!("epoch {:>3}  loss {:.4}", e.epoch, e.mean_loss);
    }
    let m = linear_probe(&models, &data, &ProbeConfig::default()).unwrap();
    println!("probe accuracy {:.3} on {} held-out molecules", m.accuracy, m.test_size);
    for (label, acc) in &m.per_class {
        println!("  {label:<14} {acc:.3}");
    }
}
