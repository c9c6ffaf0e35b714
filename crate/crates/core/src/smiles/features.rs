use super::{MolGraph, MAX_DEGREE};
use crate::autodiff::Tensor;

/// 10 element + 6 degree + 5 hydrogen one-hots, scaled charge, aromatic flag.
pub const ATOM_FEATURES: usize = 23;
/// 4 bond-order one-hots and a ring flag.
pub const BOND_FEATURES: usize = 5;

const DEGREE_OFFSET: usize = 10;
const HYDROGEN_OFFSET: usize = DEGREE_OFFSET + MAX_DEGREE + 1;
const CHARGE_OFFSET: usize = HYDROGEN_OFFSET + 5;
const AROMATIC_OFFSET: usize = CHARGE_OFFSET + 1;

/// Fills the atom and bond feature matrices.
pub fn featurize(mut graph: MolGraph) -> MolGraph {
    let mut atoms = Tensor::zeros(graph.atoms.len(), ATOM_FEATURES);
    for (v, atom) in graph.atoms.iter().enumerate() {
        let row = atoms.row_mut(v);
        row[atom.element.one_hot_index()] = 1.0;
        row[DEGREE_OFFSET + (atom.degree as usize).min(MAX_DEGREE)] = 1.0;
        row[HYDROGEN_OFFSET + (atom.implicit_h as usize).min(4)] = 1.0;
        row[CHARGE_OFFSET] = f64::from(atom.formal_charge.clamp(-2, 2)) / 2.0;
        row[AROMATIC_OFFSET] = if atom.aromatic { 1.0 } else { 0.0 };
    }
    let mut bonds = Tensor::zeros(graph.bonds.len(), BOND_FEATURES);
    for (i, bond) in graph.bonds.iter().enumerate() {
        let row = bonds.row_mut(i);
        row[bond.order.one_hot_index()] = 1.0;
        row[4] = if bond.in_ring { 1.0 } else { 0.0 };
    }
    graph.atom_features = atoms;
    graph.bond_features = bonds;
    graph
}
