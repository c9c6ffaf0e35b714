use std::sync::Arc;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::smiles::{MolGraph, ATOM_FEATURES, BOND_FEATURES, MAX_DEGREE};

/// Disjoint union of several molecules, laid out for batched message
/// passing.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub n_mols: usize,
    pub n_atoms: usize,
    pub atom_features: Tensor,
    /// Per-atom sum of incident bond features.
    pub bond_sum: Tensor,
    /// Directed edges `src → dst`, one per bond direction.
    pub edge_src: Arc<[usize]>,
    pub edge_dst: Arc<[usize]>,
    /// Atoms of degree `d` at position `d - 1`.
    pub degree_groups: Vec<Arc<[usize]>>,
    pub isolated: Arc<[usize]>,
    pub atom_mol: Arc<[usize]>,
}

impl GraphBatch {
    pub fn new(graphs: &[&MolGraph]) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let n_atoms: usize = graphs.iter().map(|g| g.num_atoms()).sum();
        let mut atom_features = Vec::with_capacity(n_atoms * ATOM_FEATURES);
        let mut bond_sum = Tensor::zeros(n_atoms, BOND_FEATURES);
        let mut src = Vec::new();
        let mut dst = Vec::new();
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); MAX_DEGREE];
        let mut isolated = Vec::new();
        let mut atom_mol = Vec::with_capacity(n_atoms);
        let mut offset = 0;
        for (m, g) in graphs.iter().enumerate() {
            if !g.is_featurized() {
                return Err(Error::Format(format!(
                    "molecule {} is not featurized",
                    g.source_smiles
                )));
            }
            atom_features.extend_from_slice(g.atom_features.data());
            for v in 0..g.num_atoms() {
                let degree = g.adjacency[v].len();
                match degree {
                    0 => isolated.push(offset + v),
                    d if d <= MAX_DEGREE => groups[d - 1].push(offset + v),
                    d => return Err(Error::DegreeOverflow { atom: v, degree: d }),
                }
                for &(w, b) in &g.adjacency[v] {
                    src.push(offset + w);
                    dst.push(offset + v);
                    for (acc, f) in bond_sum.row_mut(offset + v).iter_mut().zip(g.bond_features.row(b)) {
                        *acc += f;
                    }
                }
                atom_mol.push(m);
            }
            offset += g.num_atoms();
        }
        Ok(Self {
            n_mols: graphs.len(),
            n_atoms,
            atom_features: Tensor::matrix(n_atoms, ATOM_FEATURES, atom_features)?,
            bond_sum,
            edge_src: src.into(),
            edge_dst: dst.into(),
            degree_groups: groups.into_iter().map(Arc::from).collect(),
            isolated: isolated.into(),
            atom_mol: atom_mol.into(),
        })
    }
}
