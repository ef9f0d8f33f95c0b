//! Molecular graphs parsed from a SMILES subset.
//!
//! Hydrogens are never graph nodes: each heavy atom carries an implicit
//! hydrogen count. Aromaticity is read from lowercase symbols only.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Elements accepted by the parser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    B,
    C,
    N,
    O,
    P,
    S,
    F,
    Cl,
    Br,
    I,
}

impl Element {
    pub const ALL: [Element; 10] = [
        Element::B,
        Element::C,
        Element::N,
        Element::O,
        Element::P,
        Element::S,
        Element::F,
        Element::Cl,
        Element::Br,
        Element::I,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::P => "P",
            Element::S => "S",
            Element::F => "F",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Element> {
        Element::ALL.iter().copied().find(|e| e.symbol() == s)
    }

    /// Position in [`Element::ALL`], used for one-hot features.
    pub fn ordinal(self) -> usize {
        Element::ALL.iter().position(|&e| e == self).unwrap()
    }

    /// Standard valences, ascending.
    pub fn valences(self) -> &'static [u32] {
        match self {
            Element::B => &[3],
            Element::C => &[4],
            Element::N => &[3],
            Element::O => &[2],
            Element::P => &[3, 5],
            Element::S => &[2, 4, 6],
            Element::F | Element::Cl | Element::Br | Element::I => &[1],
        }
    }

    fn can_be_aromatic(self) -> bool {
        matches!(
            self,
            Element::B | Element::C | Element::N | Element::O | Element::P | Element::S
        )
    }

    pub fn is_halogen(self) -> bool {
        matches!(self, Element::F | Element::Cl | Element::Br | Element::I)
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub const ALL: [BondOrder; 4] = [
        BondOrder::Single,
        BondOrder::Double,
        BondOrder::Triple,
        BondOrder::Aromatic,
    ];

    /// Valence contribution; aromatic bonds count 1.5.
    pub fn value(self) -> f64 {
        match self {
            BondOrder::Single => 1.0,
            BondOrder::Double => 2.0,
            BondOrder::Triple => 3.0,
            BondOrder::Aromatic => 1.5,
        }
    }

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            BondOrder::Single => "single",
            BondOrder::Double => "double",
            BondOrder::Triple => "triple",
            BondOrder::Aromatic => "aromatic",
        }
    }

    pub fn from_name(s: &str) -> Option<BondOrder> {
        BondOrder::ALL.iter().copied().find(|o| o.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    pub index: usize,
    pub element: Element,
    pub aromatic: bool,
    pub formal_charge: i32,
    pub implicit_h: u32,
}

impl Atom {
    /// Bracket-atom token that round-trips through the parser, e.g. `[CH3]`, `[nH]`, `[O-]`.
    pub fn token(&self) -> String {
        let mut s = String::from("[");
        if self.aromatic {
            s.push_str(&self.element.symbol().to_lowercase());
        } else {
            s.push_str(self.element.symbol());
        }
        match self.implicit_h {
            0 => {}
            1 => s.push('H'),
            n => s.push_str(&format!("H{n}")),
        }
        match self.formal_charge {
            0 => {}
            1 => s.push('+'),
            -1 => s.push('-'),
            q if q > 0 => s.push_str(&format!("+{q}")),
            q => s.push_str(&format!("-{}", -q)),
        }
        s.push(']');
        s
    }

    /// Inverse of [`Atom::token`]; the index is supplied by the caller.
    pub fn from_token(token: &str, index: usize) -> Result<Atom, SmilesError> {
        let g = parse_smiles(token, "")?;
        if g.atoms.len() != 1 || !token.starts_with('[') {
            return Err(SmilesError::Syntax {
                pos: 0,
                msg: format!("not a single bracket atom: {token}"),
            });
        }
        let mut atom = g.atoms.into_iter().next().unwrap();
        atom.index = index;
        Ok(atom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn other(&self, atom: usize) -> Option<usize> {
        if self.a == atom {
            Some(self.b)
        } else if self.b == atom {
            Some(self.a)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MolecularGraph {
    pub id: String,
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    /// Set when the SMILES used `.` to join disconnected fragments.
    #[serde(default)]
    pub multi_fragment: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChemError {
    #[error("atom index {index} out of range (molecule has {len} atoms)")]
    AtomOutOfRange { index: usize, len: usize },
    #[error("invalid molecular graph: {0}")]
    Invalid(String),
}

impl MolecularGraph {
    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn num_bonds(&self) -> usize {
        self.bonds.len()
    }

    /// Neighbor lists with bond orders, one entry per atom.
    pub fn adjacency(&self) -> Vec<Vec<(usize, BondOrder)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for b in &self.bonds {
            adj[b.a].push((b.b, b.order));
            adj[b.b].push((b.a, b.order));
        }
        adj
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.bonds.iter().filter(|b| b.a == atom || b.b == atom).count()
    }

    pub fn bond_between(&self, x: usize, y: usize) -> Option<&Bond> {
        self.bonds
            .iter()
            .find(|b| (b.a == x && b.b == y) || (b.a == y && b.b == x))
    }

    /// Number of connected components.
    pub fn num_components(&self) -> usize {
        let adj = self.adjacency();
        let mut seen = vec![false; self.atoms.len()];
        let mut count = 0;
        for start in 0..self.atoms.len() {
            if seen[start] {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(v) = stack.pop() {
                for &(u, _) in &adj[v] {
                    if !seen[u] {
                        seen[u] = true;
                        stack.push(u);
                    }
                }
            }
        }
        count
    }

    /// Check structural invariants: dense indices, valid endpoints, no
    /// self-loops or duplicate bonds.
    pub fn validate(&self) -> Result<(), ChemError> {
        for (i, a) in self.atoms.iter().enumerate() {
            if a.index != i {
                return Err(ChemError::Invalid(format!(
                    "atom at position {i} has index {}",
                    a.index
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for b in &self.bonds {
            if b.a >= self.atoms.len() || b.b >= self.atoms.len() {
                return Err(ChemError::Invalid(format!(
                    "bond {}-{} references a missing atom",
                    b.a, b.b
                )));
            }
            if b.a == b.b {
                return Err(ChemError::Invalid(format!("self bond on atom {}", b.a)));
            }
            if !seen.insert((b.a.min(b.b), b.a.max(b.b))) {
                return Err(ChemError::Invalid(format!("duplicate bond {}-{}", b.a, b.b)));
            }
        }
        if !self.multi_fragment && self.num_components() > 1 {
            return Err(ChemError::Invalid(
                "disconnected graph not flagged as multi-fragment".into(),
            ));
        }
        Ok(())
    }

    /// Same molecule with atom `i` moved to position `perm[i]`.
    pub fn relabeled(&self, perm: &[usize]) -> MolecularGraph {
        assert_eq!(perm.len(), self.atoms.len(), "permutation length");
        let mut atoms = self.atoms.clone();
        for a in &self.atoms {
            let mut moved = a.clone();
            moved.index = perm[a.index];
            atoms[perm[a.index]] = moved;
        }
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond {
                a: perm[b.a],
                b: perm[b.b],
                order: b.order,
            })
            .collect();
        MolecularGraph {
            id: self.id.clone(),
            atoms,
            bonds,
            multi_fragment: self.multi_fragment,
        }
    }
}

/// Sum of incident bond orders, aromatic bonds counting 1.5.
pub fn bond_order_sum(g: &MolecularGraph, atom: usize) -> Result<f64, ChemError> {
    if atom >= g.atoms.len() {
        return Err(ChemError::AtomOutOfRange {
            index: atom,
            len: g.atoms.len(),
        });
    }
    Ok(g
        .bonds
        .iter()
        .filter(|b| b.a == atom || b.b == atom)
        .map(|b| b.order.value())
        .sum())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unsupported element '{symbol}' at position {pos}")]
    UnsupportedElement { pos: usize, symbol: String },
    #[error("unsupported feature at position {pos}: {what}")]
    Unsupported { pos: usize, what: String },
    #[error("ring closure {label} opened at position {pos} is never closed")]
    UnmatchedRingClosure { pos: usize, label: u32 },
    #[error("unbalanced parenthesis at position {pos}")]
    UnbalancedParenthesis { pos: usize },
}

struct PendingRing {
    atom: usize,
    order: Option<BondOrder>,
    pos: usize,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    /// Atoms written without brackets get hydrogens filled in afterwards.
    bracket: Vec<bool>,
    prev: Option<usize>,
    pending_bond: Option<(BondOrder, usize)>,
    branches: Vec<(Option<usize>, usize)>,
    rings: BTreeMap<u32, PendingRing>,
    multi_fragment: bool,
}

impl<'a> Parser<'a> {
    fn syntax<T>(&self, pos: usize, msg: impl Into<String>) -> Result<T, SmilesError> {
        Err(SmilesError::Syntax {
            pos,
            msg: msg.into(),
        })
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn add_bond(&mut self, a: usize, b: usize, order: BondOrder, pos: usize) -> Result<(), SmilesError> {
        if a == b {
            return self.syntax(pos, "bond from an atom to itself");
        }
        if self
            .bonds
            .iter()
            .any(|x| (x.a == a && x.b == b) || (x.a == b && x.b == a))
        {
            return self.syntax(pos, format!("duplicate bond between atoms {a} and {b}"));
        }
        self.bonds.push(Bond { a, b, order });
        Ok(())
    }

    fn default_order(&self, a: usize, b: usize) -> BondOrder {
        if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn push_atom(&mut self, atom: Atom, bracket: bool, pos: usize) -> Result<(), SmilesError> {
        let idx = self.atoms.len();
        self.atoms.push(Atom { index: idx, ..atom });
        self.bracket.push(bracket);
        if let Some(p) = self.prev {
            let order = match self.pending_bond.take() {
                Some((o, _)) => o,
                None => self.default_order(p, idx),
            };
            self.add_bond(p, idx, order, pos)?;
        } else if let Some((_, bpos)) = self.pending_bond {
            return self.syntax(bpos, "bond symbol without a preceding atom");
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn organic_atom(&mut self) -> Result<(), SmilesError> {
        let start = self.pos;
        let c = self.src[self.pos];
        let next = self.src.get(self.pos + 1).copied();
        let (element, aromatic, len) = match (c, next) {
            (b'C', Some(b'l')) => (Element::Cl, false, 2),
            (b'B', Some(b'r')) => (Element::Br, false, 2),
            (b'B', _) => (Element::B, false, 1),
            (b'C', _) => (Element::C, false, 1),
            (b'N', _) => (Element::N, false, 1),
            (b'O', _) => (Element::O, false, 1),
            (b'P', _) => (Element::P, false, 1),
            (b'S', _) => (Element::S, false, 1),
            (b'F', _) => (Element::F, false, 1),
            (b'I', _) => (Element::I, false, 1),
            (b'b', _) => (Element::B, true, 1),
            (b'c', _) => (Element::C, true, 1),
            (b'n', _) => (Element::N, true, 1),
            (b'o', _) => (Element::O, true, 1),
            (b'p', _) => (Element::P, true, 1),
            (b's', _) => (Element::S, true, 1),
            _ => {
                let mut symbol = (c as char).to_string();
                if let Some(n) = next.filter(|n| n.is_ascii_lowercase()) {
                    symbol.push(n as char);
                }
                return Err(SmilesError::UnsupportedElement { pos: start, symbol });
            }
        };
        self.pos += len;
        self.push_atom(
            Atom {
                index: 0,
                element,
                aromatic,
                formal_charge: 0,
                implicit_h: 0,
            },
            false,
            start,
        )
    }

    fn read_number(&mut self) -> Option<u32> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            None
        } else {
            std::str::from_utf8(&self.src[start..self.pos]).ok()?.parse().ok()
        }
    }

    fn bracket_atom(&mut self) -> Result<(), SmilesError> {
        let open = self.pos;
        self.pos += 1;
        if self.peek().is_some_and(|c| c.is_ascii_digit()) {
            return Err(SmilesError::Unsupported {
                pos: self.pos,
                what: "isotope labels".into(),
            });
        }
        let sym_start = self.pos;
        let Some(first) = self.peek() else {
            return self.syntax(self.pos, "unterminated bracket atom");
        };
        if !first.is_ascii_alphabetic() {
            if first == b'*' {
                return Err(SmilesError::Unsupported {
                    pos: self.pos,
                    what: "wildcard atoms".into(),
                });
            }
            return self.syntax(self.pos, "expected element symbol");
        }
        self.pos += 1;
        let (element, aromatic) = if first.is_ascii_lowercase() {
            let sym = (first as char).to_ascii_uppercase().to_string();
            match Element::from_symbol(&sym).filter(|e| e.can_be_aromatic()) {
                Some(e) => (e, true),
                None => {
                    let mut symbol = (first as char).to_string();
                    if let Some(n) = self.peek().filter(|n| n.is_ascii_lowercase()) {
                        symbol.push(n as char);
                    }
                    return Err(SmilesError::UnsupportedElement {
                        pos: sym_start,
                        symbol,
                    });
                }
            }
        } else {
            let mut sym = (first as char).to_string();
            if let Some(n) = self.peek().filter(|n| n.is_ascii_lowercase()) {
                sym.push(n as char);
                self.pos += 1;
            }
            match Element::from_symbol(&sym) {
                Some(e) => (e, false),
                None => {
                    return Err(SmilesError::UnsupportedElement {
                        pos: sym_start,
                        symbol: sym,
                    })
                }
            }
        };
        if self.peek() == Some(b'@') {
            return Err(SmilesError::Unsupported {
                pos: self.pos,
                what: "stereochemistry".into(),
            });
        }
        let mut hcount = 0;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            hcount = self.read_number().unwrap_or(1);
        }
        let mut charge: i32 = 0;
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            if let Some(n) = self.read_number() {
                charge = unit * n as i32;
            } else {
                charge = unit;
                while self.peek() == Some(sign) {
                    self.pos += 1;
                    charge += unit;
                }
            }
        }
        match self.peek() {
            Some(b']') => self.pos += 1,
            Some(b':') => {
                return Err(SmilesError::Unsupported {
                    pos: self.pos,
                    what: "atom classes".into(),
                })
            }
            Some(_) => return self.syntax(self.pos, "unexpected character in bracket atom"),
            None => return self.syntax(open, "unterminated bracket atom"),
        }
        self.push_atom(
            Atom {
                index: 0,
                element,
                aromatic,
                formal_charge: charge,
                implicit_h: hcount,
            },
            true,
            open,
        )
    }

    fn ring_closure(&mut self, label: u32, pos: usize) -> Result<(), SmilesError> {
        let Some(current) = self.prev else {
            return self.syntax(pos, "ring closure without a preceding atom");
        };
        let order = self.pending_bond.take().map(|(o, _)| o);
        match self.rings.remove(&label) {
            Some(open) => {
                let order = match (open.order, order) {
                    (Some(a), Some(b)) if a != b => {
                        return self.syntax(pos, format!("conflicting bond orders on ring closure {label}"))
                    }
                    (Some(a), _) | (None, Some(a)) => a,
                    (None, None) => self.default_order(open.atom, current),
                };
                self.add_bond(open.atom, current, order, pos)
            }
            None => {
                self.rings.insert(
                    label,
                    PendingRing {
                        atom: current,
                        order,
                        pos,
                    },
                );
                Ok(())
            }
        }
    }

    fn run(mut self, id: &str) -> Result<MolecularGraph, SmilesError> {
        if self.src.is_empty() {
            return self.syntax(0, "empty SMILES");
        }
        while let Some(c) = self.peek() {
            let pos = self.pos;
            match c {
                b'(' => {
                    if self.prev.is_none() {
                        return self.syntax(pos, "branch without a preceding atom");
                    }
                    if self.pending_bond.is_some() {
                        return self.syntax(pos, "bond symbol before branch");
                    }
                    self.branches.push((self.prev, pos));
                    self.pos += 1;
                    if self.peek() == Some(b')') {
                        return self.syntax(self.pos, "empty branch");
                    }
                }
                b')' => {
                    let Some((p, _)) = self.branches.pop() else {
                        return Err(SmilesError::UnbalancedParenthesis { pos });
                    };
                    if let Some((_, bpos)) = self.pending_bond {
                        return self.syntax(bpos, "dangling bond symbol");
                    }
                    self.prev = p;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' => {
                    if self.pending_bond.is_some() {
                        return self.syntax(pos, "two consecutive bond symbols");
                    }
                    if self.prev.is_none() {
                        return self.syntax(pos, "bond symbol without a preceding atom");
                    }
                    let order = match c {
                        b'-' => BondOrder::Single,
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        _ => BondOrder::Aromatic,
                    };
                    self.pending_bond = Some((order, pos));
                    self.pos += 1;
                }
                b'/' | b'\\' => {
                    return Err(SmilesError::Unsupported {
                        pos,
                        what: "directional bonds".into(),
                    })
                }
                b'.' => {
                    if self.prev.is_none() || self.pending_bond.is_some() {
                        return self.syntax(pos, "misplaced fragment separator");
                    }
                    if !self.branches.is_empty() {
                        return self.syntax(pos, "fragment separator inside a branch");
                    }
                    self.prev = None;
                    self.multi_fragment = true;
                    self.pos += 1;
                }
                b'0'..=b'9' => {
                    self.pos += 1;
                    self.ring_closure((c - b'0') as u32, pos)?;
                }
                b'%' => {
                    let d = self.src.get(pos + 1..pos + 3);
                    match d {
                        Some(d) if d.iter().all(|x| x.is_ascii_digit()) => {
                            let label = ((d[0] - b'0') * 10 + (d[1] - b'0')) as u32;
                            self.pos += 3;
                            self.ring_closure(label, pos)?;
                        }
                        _ => return self.syntax(pos, "'%' must be followed by two digits"),
                    }
                }
                b'[' => self.bracket_atom()?,
                b'*' => {
                    return Err(SmilesError::Unsupported {
                        pos,
                        what: "wildcard atoms".into(),
                    })
                }
                c if c.is_ascii_alphabetic() => self.organic_atom()?,
                _ => return self.syntax(pos, format!("unexpected character '{}'", c as char)),
            }
        }
        if let Some((_, bpos)) = self.pending_bond {
            return self.syntax(bpos, "dangling bond symbol at end of input");
        }
        if let Some(&(_, pos)) = self.branches.last() {
            return Err(SmilesError::UnbalancedParenthesis { pos });
        }
        if let Some((&label, ring)) = self.rings.iter().next() {
            return Err(SmilesError::UnmatchedRingClosure {
                pos: ring.pos,
                label,
            });
        }
        let mut g = MolecularGraph {
            id: id.to_string(),
            atoms: self.atoms,
            bonds: self.bonds,
            multi_fragment: self.multi_fragment,
        };
        fill_implicit_hydrogens(&mut g, &self.bracket);
        Ok(g)
    }
}

fn fill_implicit_hydrogens(g: &mut MolecularGraph, bracket: &[bool]) {
    let mut sums = vec![0u32; g.atoms.len()];
    for b in &g.bonds {
        let v = match b.order {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        };
        sums[b.a] += v;
        sums[b.b] += v;
    }
    for (atom, &is_bracket) in g.atoms.iter_mut().zip(bracket) {
        if is_bracket {
            continue;
        }
        let valences = atom.element.valences();
        let mut used = sums[atom.index];
        if atom.aromatic {
            // one extra valence unit for the delocalized pi bond
            used += 1;
            atom.implicit_h = valences[0].saturating_sub(used);
            continue;
        }
        atom.implicit_h = valences
            .iter()
            .find(|&&v| v >= used)
            .map(|&v| v - used)
            .unwrap_or(0);
    }
}

/// Parse a SMILES string (organic subset, bracket atoms with H count and
/// charge, branches, ring closures, `- = # :` bonds, `.` fragments).
pub fn parse_smiles(text: &str, id: &str) -> Result<MolecularGraph, SmilesError> {
    if let Some((pos, c)) = text.char_indices().find(|(_, c)| !c.is_ascii()) {
        return Err(SmilesError::Syntax {
            pos,
            msg: format!("non-ASCII character '{c}'"),
        });
    }
    Parser {
        src: text.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        bracket: Vec::new(),
        prev: None,
        pending_bond: None,
        branches: Vec::new(),
        rings: BTreeMap::new(),
        multi_fragment: false,
    }
    .run(id)
}

pub(crate) fn hash_str(s: &str) -> u64 {
    // FNV-1a; stable across runs and platforms
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Relabeling-invariant signature from iterative neighborhood refinement
/// (Weisfeiler-Lehman style) over element, aromaticity, charge, hydrogen
/// count and bond orders.
pub fn graph_signature(g: &MolecularGraph) -> String {
    let adj = g.adjacency();
    let mut labels: Vec<u64> = g
        .atoms
        .iter()
        .map(|a| hash_str(&a.token()))
        .collect();
    let distinct = |ls: &[u64]| ls.iter().collect::<std::collections::HashSet<_>>().len();
    let mut classes = distinct(&labels);
    for _ in 0..g.atoms.len().max(1) {
        let next: Vec<u64> = (0..g.atoms.len())
            .map(|v| {
                let mut neigh: Vec<(usize, u64)> = adj[v]
                    .iter()
                    .map(|&(u, o)| (o.ordinal(), labels[u]))
                    .collect();
                neigh.sort_unstable();
                let mut key = format!("{}", labels[v]);
                for (o, l) in neigh {
                    key.push_str(&format!("|{o}:{l}"));
                }
                hash_str(&key)
            })
            .collect();
        let next_classes = distinct(&next);
        labels = next;
        if next_classes == classes {
            break;
        }
        classes = next_classes;
    }
    let mut sorted = labels.clone();
    sorted.sort_unstable();
    let mut hasher = Sha256::new();
    for l in &sorted {
        hasher.update(l.to_le_bytes());
    }
    let digest = hasher.finalize();
    let hex: String = digest.iter().take(16).map(|b| format!("{b:02x}")).collect();
    format!("n{}e{}:{}", g.atoms.len(), g.bonds.len(), hex)
}

/// One line of a molecule list file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MoleculeRecord {
    pub smiles: String,
    pub id: String,
    pub label: Option<String>,
}

#[derive(Debug, Error)]
pub enum MoleculeFileError {
    #[error("line {line}: expected `SMILES<TAB>id[<TAB>label]`")]
    Malformed { line: usize },
    #[error("line {line}: {source}")]
    Smiles { line: usize, source: SmilesError },
}

/// Read `SMILES<TAB>id[<TAB>label]` records; blank and `#` lines are skipped.
pub fn read_molecule_list(text: &str) -> Result<Vec<MoleculeRecord>, MoleculeFileError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if !(2..=3).contains(&fields.len()) || fields.iter().any(|f| f.trim().is_empty()) {
            return Err(MoleculeFileError::Malformed { line: i + 1 });
        }
        out.push(MoleculeRecord {
            smiles: fields[0].trim().to_string(),
            id: fields[1].trim().to_string(),
            label: fields.get(2).map(|s| s.trim().to_string()),
        });
    }
    Ok(out)
}

/// Read a molecule list and parse every record.
pub fn parse_molecule_list(
    text: &str,
) -> Result<Vec<(MolecularGraph, Option<String>)>, MoleculeFileError> {
    read_molecule_list(text)?
        .into_iter()
        .enumerate()
        .map(|(n, r)| {
            parse_smiles(&r.smiles, &r.id)
                .map(|g| (g, r.label))
                .map_err(|source| MoleculeFileError::Smiles { line: n + 1, source })
        })
        .collect()
}

/// Element counts, handy for quick summaries.
pub fn element_counts(g: &MolecularGraph) -> HashMap<Element, usize> {
    let mut m = HashMap::new();
    for a in &g.atoms {
        *m.entry(a.element).or_insert(0) += 1;
    }
    m
}
