//! Encode a molecule with the plain MPNN and with KMPNN over its augmented
//! view, and show the attention weights on one atom.

use kgmol::augment::{AugmentMode, Augmenter};
use kgmol::chem::parse_smiles;
use kgmol::encoder::{encode_original, init_node_features, EncGraph, Encoder, EncoderConfig, FeatureSpec};
use kgmol::kg::load_sample_element_kg;
use kgmol::moiety::PatternLibrary;

fn main() {
    let g = parse_smiles("ClCC(=O)O", "chloroacetic_acid").unwrap();
    let cfg = EncoderConfig { hidden: 16, layers: 2 };
    let aug = Augmenter::new(AugmentMode::ElementKg, load_sample_element_kg(), PatternLibrary::default_library());
    let spec = FeatureSpec::new(None, aug.library.vocabulary(), 0);

    let plain = Encoder::plain(&cfg);
    let params = plain.init_params(0);
    let v = encode_original(&plain, &g, &params).unwrap();
    println!("plain  {:?}", &v[..4]);

    let kmpnn = Encoder::kmpnn(&cfg, &spec, AugmentMode::ElementKg, false);
    let params = kmpnn.init_params(1);
    let hg = aug.augment(&g).unwrap();
    let feats = init_node_features(&hg, None, &spec).unwrap();
    let eg = EncGraph::from_hetero(&hg, &feats);
    let fwd = kmpnn.forward(&params, &eg).unwrap();
    println!("kmpnn  {:?}", &fwd.graph_vector[..4]);

    let last = cfg.layers - 1;
    let att = fwd.attention(last);
    for &m in fwd.incoming(0) {
        let msg = &eg.messages[m];
        println!("  atom 0 <- {:<24} {:?}  weight {:.3}", hg.nodes[msg.src].label, msg.block, att[m]);
    }
}
