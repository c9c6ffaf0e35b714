//! SMILES parsing into molecular graphs, atom/bond featurization, a plain
//! SMILES writer and Murcko-style scaffold keys.
//!
//! The accepted grammar is a practical subset: organic-subset atoms
//! (`B C N O S P F Cl Br I`), aromatic lowercase `b c n o s p`, bracket
//! atoms with explicit hydrogens and charge, bonds `- = # :`, branches, ring
//! closures `1`-`9` and `%nn`, and `.` between fragments. Stereochemistry,
//! isotopes and atom classes are rejected.
//!
//! Aromaticity is taken verbatim from lowercase notation; no perception is
//! attempted.

mod features;
mod parser;
mod scaffold;
mod writer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;

pub use features::{featurize, ATOM_FEATURES, BOND_FEATURES};
pub use parser::parse_smiles;
pub use scaffold::{murcko_scaffold, scaffold_graph, ScaffoldKey};
pub use writer::to_smiles;

/// Highest heavy-atom degree covered by the degree-indexed weight bank.
pub const MAX_DEGREE: usize = 5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SmilesError {
    #[error("empty SMILES")]
    EmptyInput,
    #[error("unmatched parenthesis at position {0}")]
    UnmatchedParenthesis(usize),
    #[error("unclosed ring bond {0}")]
    UnmatchedRingClosure(u32),
    #[error("unknown token {token:?} at position {position}")]
    UnknownToken { token: String, position: usize },
    #[error("atom {atom} has {degree} heavy neighbours (max 5)")]
    DegreeOverflow { atom: usize, degree: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    C,
    N,
    O,
    S,
    F,
    Cl,
    Br,
    I,
    P,
    Other,
}

impl Element {
    pub const ALL: [Element; 10] = [
        Element::C,
        Element::N,
        Element::O,
        Element::S,
        Element::F,
        Element::Cl,
        Element::Br,
        Element::I,
        Element::P,
        Element::Other,
    ];

    pub fn from_symbol(symbol: &str) -> Self {
        match symbol {
            "C" | "c" => Element::C,
            "N" | "n" => Element::N,
            "O" | "o" => Element::O,
            "S" | "s" => Element::S,
            "F" => Element::F,
            "Cl" => Element::Cl,
            "Br" => Element::Br,
            "I" => Element::I,
            "P" | "p" => Element::P,
            _ => Element::Other,
        }
    }

    pub fn one_hot_index(self) -> usize {
        self as usize
    }
}

/// Fixed default valences used for implicit hydrogens.
pub fn default_valence(symbol: &str) -> Option<u32> {
    Some(match symbol {
        "B" => 3,
        "C" => 4,
        "N" => 3,
        "O" => 2,
        "P" => 3,
        "S" => 2,
        "F" | "Cl" | "Br" | "I" => 1,
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    pub element: Element,
    /// Capitalized element symbol as written (`"C"`, `"Cl"`, `"Na"`).
    pub symbol: String,
    pub formal_charge: i32,
    pub aromatic: bool,
    pub implicit_h: u32,
    /// Heavy-atom neighbours.
    pub degree: u32,
    /// Hydrogen count written inside brackets; `None` for organic-subset atoms.
    pub bracket_h: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub fn one_hot_index(self) -> usize {
        match self {
            BondOrder::Single => 0,
            BondOrder::Double => 1,
            BondOrder::Triple => 2,
            BondOrder::Aromatic => 3,
        }
    }

    /// Twice the bond order, so aromatic bonds stay integral (3 = 1.5).
    pub fn doubled(self) -> u32 {
        match self {
            BondOrder::Single => 2,
            BondOrder::Double => 4,
            BondOrder::Triple => 6,
            BondOrder::Aromatic => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bond {
    pub endpoints: (usize, usize),
    pub order: BondOrder,
    pub in_ring: bool,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.endpoints.0 == atom {
            self.endpoints.1
        } else {
            self.endpoints.0
        }
    }
}

/// A parsed molecule. `atom_features`/`bond_features` are empty until
/// [`featurize`] runs.
#[derive(Debug, Clone, PartialEq)]
pub struct MolGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    /// `adjacency[v]` lists `(neighbour, bond index)` pairs.
    pub adjacency: Vec<Vec<(usize, usize)>>,
    pub atom_features: Tensor,
    pub bond_features: Tensor,
    pub source_smiles: String,
}

impl MolGraph {
    /// Builds a graph from atoms and bonds, recomputing degrees, implicit
    /// hydrogens, adjacency and ring flags.
    pub fn from_parts(
        mut atoms: Vec<Atom>,
        mut bonds: Vec<Bond>,
        source_smiles: String,
    ) -> Result<Self, SmilesError> {
        let mut adjacency = vec![Vec::new(); atoms.len()];
        for (i, b) in bonds.iter().enumerate() {
            adjacency[b.endpoints.0].push((b.endpoints.1, i));
            adjacency[b.endpoints.1].push((b.endpoints.0, i));
        }
        for (v, atom) in atoms.iter_mut().enumerate() {
            let degree = adjacency[v].len();
            if degree > MAX_DEGREE {
                return Err(SmilesError::DegreeOverflow { atom: v, degree });
            }
            atom.degree = degree as u32;
            atom.implicit_h = match atom.bracket_h {
                Some(h) => h,
                None => {
                    let doubled: u32 = adjacency[v].iter().map(|&(_, b)| bonds[b].order.doubled()).sum();
                    let valence = default_valence(&atom.symbol).unwrap_or(0);
                    valence.saturating_sub(doubled / 2)
                }
            };
        }
        let ring = ring_bonds(atoms.len(), &bonds, &adjacency);
        for (b, flag) in bonds.iter_mut().zip(ring) {
            b.in_ring = flag;
        }
        Ok(Self {
            atoms,
            bonds,
            adjacency,
            atom_features: Tensor::zeros(0, ATOM_FEATURES),
            bond_features: Tensor::zeros(0, BOND_FEATURES),
            source_smiles,
        })
    }

    /// The same molecule with atom `i` moved to position `perm[i]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self, SmilesError> {
        let mut atoms = self.atoms.clone();
        for (old, a) in self.atoms.iter().enumerate() {
            atoms[perm[old]] = a.clone();
        }
        let mut bonds: Vec<Bond> = self
            .bonds
            .iter()
            .map(|b| Bond {
                endpoints: (perm[b.endpoints.1], perm[b.endpoints.0]),
                ..*b
            })
            .collect();
        bonds.reverse();
        let graph = Self::from_parts(atoms, bonds, self.source_smiles.clone())?;
        Ok(if self.is_featurized() { featurize(graph) } else { graph })
    }

    /// Parses and featurizes in one step.
    pub fn from_smiles(text: &str) -> Result<Self, SmilesError> {
        Ok(featurize(parse_smiles(text)?))
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn num_bonds(&self) -> usize {
        self.bonds.len()
    }

    pub fn is_featurized(&self) -> bool {
        self.atom_features.rows() == self.atoms.len() && self.bond_features.rows() == self.bonds.len()
    }

    pub fn num_components(&self) -> usize {
        let n = self.atoms.len();
        let mut seen = vec![false; n];
        let mut count = 0;
        for start in 0..n {
            if seen[start] {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(v) = stack.pop() {
                for &(w, _) in &self.adjacency[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        count
    }

    /// Cycle rank (number of independent rings).
    pub fn num_rings(&self) -> usize {
        self.bonds.len() + self.num_components() - self.atoms.len()
    }

    pub fn count_element(&self, element: Element) -> usize {
        self.atoms.iter().filter(|a| a.element == element).count()
    }

    pub fn num_aromatic_atoms(&self) -> usize {
        self.atoms.iter().filter(|a| a.aromatic).count()
    }
}

/// Marks bonds that lie on a cycle (i.e. are not bridges).
fn ring_bonds(n: usize, bonds: &[Bond], adjacency: &[Vec<(usize, usize)>]) -> Vec<bool> {
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut is_bridge = vec![false; bonds.len()];
    let mut timer = 0;
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        // iterative DFS: (vertex, bond used to enter, next neighbour position)
        let mut stack: Vec<(usize, Option<usize>, usize)> = vec![(root, None, 0)];
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        while let Some(&mut (v, via, ref mut pos)) = stack.last_mut() {
            if *pos < adjacency[v].len() {
                let (w, b) = adjacency[v][*pos];
                *pos += 1;
                if Some(b) == via {
                    continue;
                }
                if disc[w] == usize::MAX {
                    disc[w] = timer;
                    low[w] = timer;
                    timer += 1;
                    stack.push((w, Some(b), 0));
                } else {
                    low[v] = low[v].min(disc[w]);
                }
            } else {
                stack.pop();
                if let (Some(b), Some(&(parent, _, _))) = (via, stack.last()) {
                    low[parent] = low[parent].min(low[v]);
                    if low[v] > disc[parent] {
                        is_bridge[b] = true;
                    }
                }
            }
        }
    }
    is_bridge.into_iter().map(|b| !b).collect()
}

#[cfg(test)]
mod tests;
