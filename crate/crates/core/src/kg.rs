//! Element-property knowledge graph stored as `(property, relation, element)` triples.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The 17 relation types of the element knowledge graph, one per property family.
pub const ELEMENT_RELATIONS: [&str; 17] = [
    "isFamilyOf",
    "isMetallicityOf",
    "isPeriodOf",
    "isStateOf",
    "isWeightOf",
    "isElectronegativityOf",
    "isElectronAffinityOf",
    "isMeltingPointOf",
    "isBoilingPointOf",
    "isIonizationOf",
    "isRadiusOf",
    "isHardnessOf",
    "isModulusOf",
    "isDensityOf",
    "isConductivityOf",
    "isHeatOf",
    "isAbundanceOf",
];

/// IUPAC element symbols, Z = 1..=118.
pub const ELEMENT_SYMBOLS: [&str; 118] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb",
    "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl",
    "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk",
    "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh",
    "Fl", "Mc", "Lv", "Ts", "Og",
];

/// Small hand-written element KG over H, C, N, O and Cl.
pub const SAMPLE_ELEMENT_KG: &str = include_str!("../data/sample_element_kg.tsv");

pub fn is_element_symbol(s: &str) -> bool {
    ELEMENT_SYMBOLS.contains(&s)
}

pub fn is_element_relation(s: &str) -> bool {
    ELEMENT_RELATIONS.contains(&s)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct KnowledgeTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl KnowledgeTriple {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        KnowledgeTriple {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum KgError {
    #[error("line {line}: expected `head<TAB>relation<TAB>tail`, found {fields} field(s)")]
    Malformed { line: usize, fields: usize },
    #[error("line {line}: empty {field} field")]
    EmptyField { line: usize, field: &'static str },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Deduplicated triple set with sorted entity and relation indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeGraph {
    triples: BTreeSet<KnowledgeTriple>,
    entities: Vec<String>,
    relations: Vec<String>,
    entity_index: BTreeMap<String, usize>,
    relation_index: BTreeMap<String, usize>,
}

impl KnowledgeGraph {
    pub fn from_triples(triples: impl IntoIterator<Item = KnowledgeTriple>) -> Self {
        let triples: BTreeSet<KnowledgeTriple> = triples.into_iter().collect();
        let mut ents = BTreeSet::new();
        let mut rels = BTreeSet::new();
        for t in &triples {
            ents.insert(t.head.clone());
            ents.insert(t.tail.clone());
            rels.insert(t.relation.clone());
        }
        let entities: Vec<String> = ents.into_iter().collect();
        let relations: Vec<String> = rels.into_iter().collect();
        let entity_index = entities.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
        let relation_index = relations.iter().enumerate().map(|(i, r)| (r.clone(), i)).collect();
        KnowledgeGraph {
            triples,
            entities,
            relations,
            entity_index,
            relation_index,
        }
    }

    /// Triples in sorted order.
    pub fn triples(&self) -> impl Iterator<Item = &KnowledgeTriple> {
        self.triples.iter()
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn contains(&self, t: &KnowledgeTriple) -> bool {
        self.triples.contains(t)
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entity_index.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_index.get(name).copied()
    }

    /// Union with another graph; duplicates collapse.
    pub fn merged(&self, other: &KnowledgeGraph) -> KnowledgeGraph {
        KnowledgeGraph::from_triples(self.triples.iter().chain(other.triples.iter()).cloned())
    }
}

/// Read TSV triples (`head<TAB>relation<TAB>tail`); blank and `#` lines are skipped.
pub fn load_triples<R: Read>(source: R) -> Result<KnowledgeGraph, KgError> {
    let mut triples = Vec::new();
    for (i, line) in BufReader::new(source).lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(KgError::Malformed {
                line: i + 1,
                fields: fields.len(),
            });
        }
        for (f, name) in fields.iter().zip(["head", "relation", "tail"]) {
            if f.trim().is_empty() {
                return Err(KgError::EmptyField {
                    line: i + 1,
                    field: name,
                });
            }
        }
        triples.push(KnowledgeTriple::new(
            fields[0].trim(),
            fields[1].trim(),
            fields[2].trim(),
        ));
    }
    Ok(KnowledgeGraph::from_triples(triples))
}

pub fn load_sample_element_kg() -> KnowledgeGraph {
    load_triples(SAMPLE_ELEMENT_KG.as_bytes()).expect("bundled sample KG parses")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    UnknownRelation { triple: KnowledgeTriple },
    UnknownElement { triple: KnowledgeTriple },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Check every triple's relation against the 17-name vocabulary and its tail
/// against the element table. A triple failing both yields two findings.
pub fn validate_element_kg(kg: &KnowledgeGraph) -> ValidationReport {
    let mut findings = Vec::new();
    for t in kg.triples() {
        if !is_element_relation(&t.relation) {
            findings.push(Finding::UnknownRelation { triple: t.clone() });
        }
        if !is_element_symbol(&t.tail) {
            findings.push(Finding::UnknownElement { triple: t.clone() });
        }
    }
    ValidationReport {
        findings,
        entities: kg.entities().len(),
        relations: kg.relations().len(),
        triples: kg.len(),
    }
}

/// Triples whose tail is `element`, sorted.
pub fn one_hop_properties<'a>(kg: &'a KnowledgeGraph, element: &str) -> Vec<&'a KnowledgeTriple> {
    kg.triples().filter(|t| t.tail == element).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kg(text: &str) -> KnowledgeGraph {
        load_triples(text.as_bytes()).unwrap()
    }

    #[test]
    fn single_triple() {
        let g = kg("Gas\tisStateOf\tCl\n");
        assert_eq!(g.len(), 1);
        assert_eq!(g.entities(), &["Cl".to_string(), "Gas".to_string()]);
        assert_eq!(g.relations(), &["isStateOf".to_string()]);
    }

    #[test]
    fn duplicate_lines_collapse() {
        let g = kg("Gas\tisStateOf\tCl\nGas\tisStateOf\tCl\n");
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn malformed_and_empty_fields() {
        assert!(matches!(
            load_triples("# c\nGas\tisStateOf\n".as_bytes()),
            Err(KgError::Malformed { line: 2, fields: 2 })
        ));
        assert!(matches!(
            load_triples("Gas\t \tCl\n".as_bytes()),
            Err(KgError::EmptyField { line: 1, field: "relation" })
        ));
    }

    #[test]
    fn validator_findings() {
        assert!(validate_element_kg(&kg("Gas\tisStateOf\tCl")).is_valid());
        let r = validate_element_kg(&kg("Gas\tstateOf\tCl"));
        assert_eq!(
            r.findings,
            vec![Finding::UnknownRelation {
                triple: KnowledgeTriple::new("Gas", "stateOf", "Cl")
            }]
        );
        let r = validate_element_kg(&kg("Gas\tisStateOf\tXx"));
        assert!(matches!(&r.findings[..], [Finding::UnknownElement { triple }] if triple.tail == "Xx"));
        assert_eq!((r.entities, r.relations, r.triples), (2, 1, 1));
    }

    #[test]
    fn one_hop() {
        let g = kg("Gas\tisStateOf\tCl\n");
        assert_eq!(one_hop_properties(&g, "Cl"), vec![&KnowledgeTriple::new("Gas", "isStateOf", "Cl")]);
        assert!(one_hop_properties(&g, "He").is_empty());
        let g = kg("Halogen\tisFamilyOf\tCl\nGas\tisStateOf\tCl\nGas\tisStateOf\tO\nP3\tisPeriodOf\tCl\nNonmetal\tisMetallicityOf\tO\n");
        let got: Vec<_> = one_hop_properties(&g, "Cl").into_iter().map(|t| t.head.as_str()).collect();
        assert_eq!(got, vec!["Gas", "Halogen", "P3"]);
    }

    #[test]
    fn sample_kg_is_valid() {
        let g = load_sample_element_kg();
        let r = validate_element_kg(&g);
        assert!(r.is_valid(), "{:?}", r.findings);
        assert!(g.len() >= 35);
        assert!(g.contains(&KnowledgeTriple::new("Gas", "isStateOf", "Cl")));
    }

    #[test]
    fn tables() {
        assert_eq!(ELEMENT_SYMBOLS.len(), 118);
        assert_eq!(ELEMENT_SYMBOLS[16], "Cl");
        assert_eq!(ELEMENT_SYMBOLS.iter().collect::<BTreeSet<_>>().len(), 118);
        assert_eq!(ELEMENT_RELATIONS.iter().collect::<BTreeSet<_>>().len(), 17);
    }
}
