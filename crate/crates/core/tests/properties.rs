use std::collections::BTreeSet;

use kgmol::augment::{augment_with_element_kg, augment_with_element_kg_per_atom, augment_with_fg_kg, EdgeKind, NodeKind};
use kgmol::chem::{graph_signature, parse_smiles, MolecularGraph};
use kgmol::kg::{load_sample_element_kg, one_hop_properties, KnowledgeGraph, KnowledgeTriple, ELEMENT_RELATIONS};
use kgmol::moiety::{
    detect_moieties, infer_moiety_relations, perceive_rings, verify_embedding, MoietyKind, PatternLibrary, RelationLabel,
};
use kgmol::ssl::ntxent_loss;
use proptest::prelude::*;

const MIDDLE: &[&str] = &[
    "C", "CC", "C=C", "O", "N", "S", "C(=O)", "C(=O)O", "C(C)(C)", "c1ccc(cc1)", "C1CCC(CC1)", "c1ccc2cc(ccc2c1)",
    "C(Cl)", "C(O)", "c1cc(ncc1)",
];
const START: &[&str] = &["C", "Cl", "Br", "F", "O", "N", "N#C", "OC(=O)", "[O-][N+](=O)", "c1ccccc1", "C#C", "S"];
const END: &[&str] = &["C", "Cl", "Br", "O", "N", "C#N", "[N+](=O)[O-]", "C(=O)O", "c1ccccc1", "F", "C#C", "S"];

fn smiles() -> impl Strategy<Value = String> {
    (
        prop::sample::select(START),
        prop::collection::vec(prop::sample::select(MIDDLE), 0..5),
        prop::option::of(prop::sample::select(END)),
    )
        .prop_map(|(a, mid, b)| {
            let mut s = a.to_string();
            s.extend(mid);
            s.push_str(b.unwrap_or(""));
            s
        })
}

fn molecule() -> impl Strategy<Value = MolecularGraph> {
    smiles().prop_filter_map("valid SMILES", |s| parse_smiles(&s, "m").ok())
}

fn permuted(g: MolecularGraph) -> impl Strategy<Value = (MolecularGraph, Vec<usize>)> {
    let n = g.num_atoms();
    (Just(g), Just((0..n).collect::<Vec<usize>>()).prop_shuffle())
}

fn triples() -> impl Strategy<Value = Vec<KnowledgeTriple>> {
    let heads = prop::sample::select(vec!["Gas", "Solid", "Halogen", "Nonmetal", "High", "Low", "P1"]);
    let rels = prop::sample::select(ELEMENT_RELATIONS.to_vec());
    let tails = prop::sample::select(vec!["C", "N", "O", "Cl", "S", "F", "H", "Br"]);
    prop::collection::vec((heads, rels, tails), 0..40)
        .prop_map(|v| v.into_iter().map(|(h, r, t)| KnowledgeTriple::new(h, r, t)).collect())
}

fn components(g: &MolecularGraph) -> usize {
    let mut parent: Vec<usize> = (0..g.num_atoms()).collect();
    fn find(p: &mut Vec<usize>, x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    for b in &g.bonds {
        let (x, y) = (find(&mut parent, b.a), find(&mut parent, b.b));
        parent[x] = y;
    }
    (0..g.num_atoms()).filter(|&i| find(&mut parent, i) == i).count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn signature_ignores_atom_order((g, perm) in molecule().prop_flat_map(permuted)) {
        prop_assert_eq!(graph_signature(&g), graph_signature(&g.relabeled(&perm)));
    }

    #[test]
    fn relabeling_round_trips((g, perm) in molecule().prop_flat_map(permuted)) {
        let mut inv = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let back = g.relabeled(&perm).relabeled(&inv);
        prop_assert_eq!(&back.atoms, &g.atoms);
        let norm = |m: &MolecularGraph| {
            m.bonds.iter().map(|b| (b.a.min(b.b), b.a.max(b.b), b.order)).collect::<BTreeSet<_>>()
        };
        prop_assert_eq!(norm(&back), norm(&g));
    }

    #[test]
    fn one_hop_is_a_tail_filter(ts in triples(), el in prop::sample::select(vec!["C", "N", "O", "Cl", "Xe"])) {
        let kg = KnowledgeGraph::from_triples(ts);
        let got: BTreeSet<_> = one_hop_properties(&kg, el).into_iter().cloned().collect();
        let want: BTreeSet<_> = kg.triples().filter(|t| t.tail == el).cloned().collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn ring_count_is_cyclomatic_number(g in molecule()) {
        let rings = perceive_rings(&g);
        prop_assert_eq!(rings.len() + g.num_atoms(), g.num_bonds() + components(&g));
        for r in &rings {
            let n = r.atoms.len();
            for i in 0..n {
                prop_assert!(g.bond_between(r.atoms[i], r.atoms[(i + 1) % n]).is_some());
            }
        }
    }

    #[test]
    fn functional_group_matches_verify(g in molecule()) {
        let lib = PatternLibrary::default_library();
        for m in detect_moieties(&g, &lib).unwrap() {
            if m.kind == MoietyKind::FunctionalGroup {
                let p = lib.get(&m.type_label).unwrap();
                prop_assert!(verify_embedding(&g, p, &m.atoms), "{} {:?}", m.type_label, m.atoms);
            }
        }
    }

    #[test]
    fn relations_follow_overlap_and_bonds(g in molecule()) {
        let ms = detect_moieties(&g, &PatternLibrary::default_library()).unwrap();
        let rs = infer_moiety_relations(&g, &ms).unwrap();
        let mut pairs = BTreeSet::new();
        for r in &rs {
            prop_assert!(r.a < r.b);
            prop_assert!(pairs.insert((r.a, r.b)), "two relations for one pair");
            let a: BTreeSet<usize> = ms[r.a].atoms.iter().copied().collect();
            let b: BTreeSet<usize> = ms[r.b].atoms.iter().copied().collect();
            let bonded = g.bonds.iter().any(|x| a.contains(&x.a) && b.contains(&x.b) || a.contains(&x.b) && b.contains(&x.a));
            match r.label {
                RelationLabel::Fused => prop_assert!(!a.is_disjoint(&b)),
                _ => prop_assert!(a.is_disjoint(&b) && bonded),
            }
        }
        for i in 0..ms.len() {
            for j in i + 1..ms.len() {
                if !pairs.contains(&(i, j)) {
                    let a: BTreeSet<usize> = ms[i].atoms.iter().copied().collect();
                    let b: BTreeSet<usize> = ms[j].atoms.iter().copied().collect();
                    prop_assert!(a.is_disjoint(&b));
                }
            }
        }
    }

    #[test]
    fn element_augmentation_counts(g in molecule(), ts in triples()) {
        let kg = KnowledgeGraph::from_triples(ts).merged(&load_sample_element_kg());
        let hg = augment_with_element_kg(&g, &kg);
        let expected: usize = g.atoms.iter().map(|a| one_hop_properties(&kg, a.element.symbol()).len()).sum();
        prop_assert_eq!(hg.count_nodes(NodeKind::Atom), g.num_atoms());
        prop_assert_eq!(hg.count_edges(EdgeKind::Bond), g.num_bonds());
        prop_assert_eq!(hg.count_edges(EdgeKind::PropOf), expected);
        let per_atom = augment_with_element_kg_per_atom(&g, &kg);
        prop_assert_eq!(per_atom.count_nodes(NodeKind::Property), expected);
        prop_assert_eq!(hg.restrict_to_molecule().unwrap(), g.clone());
        prop_assert_eq!(per_atom.restrict_to_molecule().unwrap(), g);
    }

    #[test]
    fn fg_augmentation_counts(g in molecule()) {
        let ms = detect_moieties(&g, &PatternLibrary::default_library()).unwrap();
        let rs = infer_moiety_relations(&g, &ms).unwrap();
        let hg = augment_with_fg_kg(&g, &ms, &rs).unwrap();
        prop_assert_eq!(hg.count_nodes(NodeKind::Moiety), ms.len());
        prop_assert_eq!(hg.count_edges(EdgeKind::PartOf), ms.iter().map(|m| m.atoms.len()).sum::<usize>());
        let rel_edges: usize = EdgeKind::ALL.iter().filter(|k| k.is_moiety_relation()).map(|&k| hg.count_edges(k)).sum();
        prop_assert_eq!(rel_edges, rs.len());
        prop_assert_eq!(hg.restrict_to_molecule().unwrap(), g);
    }

    #[test]
    fn ntxent_ignores_pair_order_and_scale(
        z in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 5), 6),
        scale in 0.1f64..10.0,
        tau in 0.05f64..2.0,
    ) {
        prop_assume!(z.iter().all(|v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3));
        let (l, _) = ntxent_loss(&z, tau).unwrap();
        prop_assert!(l >= 0.0);
        // pairs are (i, i+3); rotate the pair order
        let n = 3;
        let rot: Vec<Vec<f64>> = (0..2 * n).map(|k| z[(k / n) * n + (k % n + 1) % n].clone()).collect();
        let (lr, _) = ntxent_loss(&rot, tau).unwrap();
        prop_assert!((l - lr).abs() < 1e-9 * l.max(1.0));
        let scaled: Vec<Vec<f64>> = z.iter().map(|v| v.iter().map(|x| x * scale).collect()).collect();
        let (ls, _) = ntxent_loss(&scaled, tau).unwrap();
        prop_assert!((l - ls).abs() < 1e-9 * l.max(1.0));
        // swapping the two views leaves the loss unchanged
        let swapped: Vec<Vec<f64>> = z[n..].iter().chain(&z[..n]).cloned().collect();
        let (lw, _) = ntxent_loss(&swapped, tau).unwrap();
        prop_assert!((l - lw).abs() < 1e-9 * l.max(1.0));
    }

    #[test]
    fn aligned_orthogonal_pairs_improve_as_temperature_drops(n in 2usize..8, t1 in 0.05f64..1.0, dt in 0.01f64..1.0) {
        let z: Vec<Vec<f64>> = (0..2 * n)
            .map(|k| (0..n).map(|j| if j == k % n { 1.0 } else { 0.0 }).collect())
            .collect();
        let (a, _) = ntxent_loss(&z, t1).unwrap();
        let (b, _) = ntxent_loss(&z, t1 + dt).unwrap();
        prop_assert!(a < b);
        let want = (1.0 + (2 * n - 2) as f64 * (-1.0 / t1).exp()).ln();
        prop_assert!((a - want).abs() < 1e-12);
    }
}
