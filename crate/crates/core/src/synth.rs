//! Deterministic synthetic molecule sets: an aqueous-solubility-like
//! regression set, scaffold families for the dataset-bias probe, and a
//! clustered set for active-learning experiments.
//!
//! Molecules are assembled from SMILES templates. In a template, `{k}`
//! is a ring-closure placeholder (renumbered per molecule) and `R` marks
//! an optional substituent position.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::smiles::{BondOrder, Element, MolGraph};

/// Box–Muller standard normal draw.
fn standard_normal(rng: &mut Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Acyclic substituents.
const CHAINS: &[&str] = &[
    "C", "CC", "CCC", "C(C)C", "CCCC", "C(C)(C)C", "O", "OC", "OCC", "N", "NC", "N(C)C", "F", "Cl", "Br",
    "I", "C(=O)O", "C(=O)OC", "C(=O)N", "C(=O)C", "C#N", "C(F)(F)F", "[N+](=O)[O-]", "S", "SC", "CO",
    "CCO", "CCN", "C=C", "CC(=O)O", "NC(=O)C", "OC(=O)C", "CCl", "C=O", "CCCCC", "OCCO", "S(=O)(=O)N",
];

/// Groups that add a ring system.
const RING_GROUPS: &[&str] = &[
    "c{1}ccccc{1}",
    "c{1}ccc(R)cc{1}",
    "C{1}CCCCC{1}",
    "c{1}ccncc{1}",
    "C{1}CCCC{1}",
    "c{1}ccco{1}",
    "c{1}cccs{1}",
    "C{1}CCNCC{1}",
];

/// Core templates for the general set.
const CORES: &[&str] = &[
    "c{1}c(R)c(R)c(R)c(R)c{1}R",
    "c{1}c(R)cc(R)nc{1}R",
    "C{1}C(R)CC(R)CC{1}R",
    "C{1}C(R)CC(R)C{1}R",
    "c{1}ccc{2}c(R)cc(R)cc{2}c{1}R",
    "c{1}c(R)oc(R)c{1}",
    "c{1}c(R)sc(R)c{1}",
    "C{1}CN(R)CCN{1}R",
    "O=C{1}CCCCC{1}R",
    "c{1}ccc{2}[nH]c(R)cc{2}c{1}",
    "c{1}cc(R)c(R)cn{1}",
    "C(R)C(R)C(R)CR",
    "CC(R)(R)CR",
    "OC(R)CCR",
    "C=CC(R)CR",
    "N(R)C(=O)C(R)R",
    "CCOC(=O)C(R)R",
    "CC(C)CC(R)R",
];

struct Assembler<'a> {
    rng: &'a mut Rng,
    next_label: u32,
    p_substituent: f64,
    ring_groups: bool,
}

impl Assembler<'_> {
    fn label(n: u32) -> String {
        if n < 10 {
            n.to_string()
        } else {
            format!("%{n}")
        }
    }

    fn expand(&mut self, template: &str, depth: usize) -> String {
        let mut out = String::new();
        let mut local: Vec<(u32, u32)> = Vec::new();
        let chars: Vec<char> = template.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            match chars[i] {
                '{' => {
                    let end = i + chars[i..].iter().position(|&c| c == '}').expect("closed placeholder");
                    let k: u32 = chars[i + 1..end].iter().collect::<String>().parse().expect("digit");
                    let global = match local.iter().find(|(l, _)| *l == k) {
                        Some(&(_, g)) => g,
                        None => {
                            self.next_label += 1;
                            local.push((k, self.next_label));
                            self.next_label
                        }
                    };
                    out.push_str(&Self::label(global));
                    i = end + 1;
                }
                // `(R)` is a branch that may vanish entirely
                '(' if chars.get(i + 1) == Some(&'R') && chars.get(i + 2) == Some(&')') => {
                    if self.rng.gen::<f64>() < self.p_substituent {
                        let sub = self.substituent(depth);
                        out.push('(');
                        out.push_str(&sub);
                        out.push(')');
                    }
                    i += 3;
                }
                'R' => {
                    if self.rng.gen::<f64>() < self.p_substituent {
                        let sub = self.substituent(depth);
                        if i + 1 == chars.len() {
                            out.push_str(&sub);
                        } else {
                            out.push('(');
                            out.push_str(&sub);
                            out.push(')');
                        }
                    }
                    i += 1;
                }
                c => {
                    out.push(c);
                    i += 1;
                }
            }
        }
        out
    }

    fn substituent(&mut self, depth: usize) -> String {
        if self.ring_groups && depth < 1 && self.rng.gen::<f64>() < 0.2 {
            let group = *RING_GROUPS.choose(self.rng).expect("non-empty");
            self.expand(group, depth + 1)
        } else {
            CHAINS.choose(self.rng).expect("non-empty").to_string()
        }
    }
}

fn assemble(template: &str, p_substituent: f64, ring_groups: bool, rng: &mut Rng) -> String {
    Assembler {
        rng,
        next_label: 0,
        p_substituent,
        ring_groups,
    }
    .expand(template, 0)
}

fn atomic_mass(symbol: &str) -> f64 {
    match symbol {
        "C" | "c" => 12.011,
        "N" | "n" => 14.007,
        "O" | "o" => 15.999,
        "S" | "s" => 32.06,
        "P" | "p" => 30.974,
        "F" => 18.998,
        "Cl" => 35.45,
        "Br" => 79.904,
        "I" => 126.904,
        "B" | "b" => 10.81,
        "Na" => 22.99,
        _ => 30.0,
    }
}

/// Molecular weight including implicit hydrogens.
pub fn molecular_weight(g: &MolGraph) -> f64 {
    g.atoms
        .iter()
        .map(|a| atomic_mass(&a.symbol) + 1.008 * f64::from(a.implicit_h))
        .sum()
}

/// Additive lipophilicity surrogate from atom types.
pub fn lipophilicity(g: &MolGraph) -> f64 {
    g.atoms
        .iter()
        .enumerate()
        .map(|(v, a)| {
            let hetero_nbrs = g.adjacency[v]
                .iter()
                .filter(|(w, _)| !matches!(g.atoms[*w].element, Element::C))
                .count() as f64;
            let base = match a.element {
                Element::C if a.aromatic => 0.30,
                Element::C => 0.36 - 0.12 * hetero_nbrs,
                Element::N if a.aromatic => -0.50,
                Element::N => -0.75,
                Element::O => {
                    let carbonyl = g.adjacency[v].iter().any(|&(_, b)| g.bonds[b].order == BondOrder::Double);
                    if carbonyl {
                        -0.25
                    } else {
                        -0.55
                    }
                }
                Element::S => 0.40,
                Element::F => 0.20,
                Element::Cl => 0.65,
                Element::Br => 0.85,
                Element::I => 1.10,
                Element::P => -0.20,
                Element::Other => -0.50,
            };
            let donor = if matches!(a.element, Element::N | Element::O) && a.implicit_h > 0 {
                -0.30
            } else {
                0.0
            };
            let charge = if a.formal_charge != 0 { -0.6 } else { 0.0 };
            base + donor + charge
        })
        .sum()
}

/// Single non-ring bonds between two non-terminal heavy atoms.
pub fn rotatable_bonds(g: &MolGraph) -> usize {
    g.bonds
        .iter()
        .filter(|b| {
            b.order == BondOrder::Single
                && !b.in_ring
                && g.adjacency[b.endpoints.0].len() > 1
                && g.adjacency[b.endpoints.1].len() > 1
        })
        .count()
}

pub fn aromatic_proportion(g: &MolGraph) -> f64 {
    g.num_aromatic_atoms() as f64 / g.num_atoms().max(1) as f64
}

/// Noise-free solubility-like value: linear in lipophilicity, weight,
/// rotatable bonds and aromatic proportion.
pub fn solubility_surrogate(g: &MolGraph) -> f64 {
    0.16 - 0.63 * lipophilicity(g) - 0.0062 * molecular_weight(g) + 0.066 * rotatable_bonds(g) as f64
        - 0.74 * aromatic_proportion(g)
}

/// Structure-dependent noise scale, about 0.45 log units for a typical
/// molecule and up to ~2 for small charged heteroatom-rich ones.
pub fn solubility_noise_scale(g: &MolGraph) -> f64 {
    let n = g.num_atoms().max(1) as f64;
    let hetero = g.atoms.iter().filter(|a| !matches!(a.element, Element::C)).count() as f64;
    let charged = g.atoms.iter().any(|a| a.formal_charge != 0);
    0.15 + 1.5 * hetero / n + if charged { 0.4 } else { 0.0 }
}

fn unique_molecules(
    count: usize,
    rng: &mut Rng,
    mut draw: impl FnMut(&mut Rng) -> String,
) -> Result<Vec<(String, MolGraph)>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > count * 200 {
            return Err(Error::DegenerateInput("template space too small for requested count"));
        }
        let smiles = draw(rng);
        if seen.contains(&smiles) {
            continue;
        }
        let graph = match MolGraph::from_smiles(&smiles) {
            Ok(g) => g,
            // over-substituted atoms are simply redrawn
            Err(_) => continue,
        };
        if graph.num_atoms() > 60 {
            continue;
        }
        seen.insert(smiles.clone());
        out.push((smiles, graph));
    }
    Ok(out)
}

/// Solubility-like regression set with heteroscedastic noise.
pub fn solubility_dataset(count: usize, seed: u64) -> Result<Dataset> {
    let mut structures = rng::stream(seed, "synth-structures");
    let mols = unique_molecules(count, &mut structures, |r| {
        let core = *CORES.choose(r).expect("non-empty");
        let p = r.gen_range(0.25..0.6);
        assemble(core, p, true, r)
    })?;
    let mut noise = rng::stream(seed, "synth-noise");
    let pairs = mols.into_iter().map(|(s, g)| {
        let y = solubility_surrogate(&g) + solubility_noise_scale(&g) * standard_normal(&mut noise);
        (s, y)
    });
    let (ds, rejected) = Dataset::from_pairs("synthetic-solubility", "log(mol/L)", pairs);
    debug_assert!(rejected.is_empty());
    Ok(ds)
}

/// Scaffold families whose members differ only in acyclic substituents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    BetaLactam,
    Benzodiazepine,
    Steroid,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::BetaLactam, Family::Benzodiazepine, Family::Steroid];

    pub fn name(self) -> &'static str {
        match self {
            Family::BetaLactam => "beta-lactam",
            Family::Benzodiazepine => "benzodiazepine",
            Family::Steroid => "steroid",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn template(self) -> &'static str {
        match self {
            Family::BetaLactam => "O=C{1}C(R)C{2}SC(R)(C)C(R)N{1}{2}",
            Family::Benzodiazepine => "c{1}c(R)cc{2}c(c{1})C(c{3}ccc(R)cc{3})=NC(R)C(=O)N{2}R",
            Family::Steroid => "C{1}C(R)CC{2}C(C{1})CC(R)C{3}C{2}CCC{4}(R)C(R)CCC{3}{4}",
        }
    }
}

/// Count-based lipophilicity surrogate: 0.5·#C − 0.7·#O − 0.4·#N +
/// 0.3·#aromatic + 1.1·#rings.
pub fn logp_surrogate(g: &MolGraph) -> f64 {
    0.5 * g.count_element(Element::C) as f64 - 0.7 * g.count_element(Element::O) as f64
        - 0.4 * g.count_element(Element::N) as f64
        + 0.3 * g.num_aromatic_atoms() as f64
        + 1.1 * g.num_rings() as f64
}

/// Distinct members of `family`, each tagged with the family.
pub fn family_members(family: Family, count: usize, seed: u64) -> Result<Vec<(String, MolGraph)>> {
    let mut r = rng::indexed_stream(seed, "family", family as u64);
    unique_molecules(count, &mut r, |r| assemble(family.template(), 0.5, false, r))
}

/// Members of several families labelled with [`logp_surrogate`]; the
/// second value gives each record's family.
pub fn family_dataset(families: &[Family], per_family: usize, seed: u64) -> Result<(Dataset, Vec<Family>)> {
    let mut pairs = Vec::new();
    let mut tags = Vec::new();
    for &f in families {
        for (s, g) in family_members(f, per_family, seed)? {
            pairs.push((s, logp_surrogate(&g)));
            tags.push(f);
        }
    }
    let (ds, rejected) = Dataset::from_pairs("synthetic-families", "logP-like", pairs);
    debug_assert!(rejected.is_empty());
    Ok((ds, tags))
}

/// Core templates for the clustered active-learning set, with the slope
/// applied to that cluster's substituent signal.
const CLUSTERS: &[(&str, f64, f64)] = &[
    ("c{1}c(R)c(R)c(R)c(R)c{1}R", -1.0, 0.25),
    ("C{1}C(R)CC(R)CC{1}R", 0.5, 0.25),
    ("c{1}c(R)cc(R)nc{1}R", 1.5, 1.6),
    ("c{1}ccc{2}c(R)cc(R)cc{2}c{1}R", -2.0, 1.8),
    ("C{1}CN(R)CCN{1}R", 2.0, 0.3),
    ("c{1}c(R)sc(R)c{1}", -0.5, 1.4),
];

pub const CLUSTER_COUNT: usize = 6;

/// Clustered regression set: each scaffold cluster has its own offset and
/// its own sensitivity to substituents, so some clusters need many more
/// labels than others. Returns the dataset and each record's cluster.
pub fn clustered_dataset(per_cluster: usize, seed: u64) -> Result<(Dataset, Vec<usize>)> {
    let mut members = Vec::new();
    let mut tags = Vec::new();
    for (c, &(template, _, _)) in CLUSTERS.iter().enumerate() {
        let mut r = rng::indexed_stream(seed, "cluster", c as u64);
        for (s, g) in unique_molecules(per_cluster, &mut r, |r| assemble(template, 0.6, false, r))? {
            members.push((s, solubility_surrogate(&g) - 0.5 * logp_surrogate(&g)));
            tags.push(c);
        }
    }
    // the substituent signal is standardized over the whole set so that
    // the slopes alone set how hard each cluster is
    let n = members.len().max(1) as f64;
    let mu = members.iter().map(|m| m.1).sum::<f64>() / n;
    let sd = (members.iter().map(|m| (m.1 - mu).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    let mut noise = rng::stream(seed, "cluster-noise");
    let pairs: Vec<(String, f64)> = members
        .into_iter()
        .zip(&tags)
        .map(|((s, signal), &c)| {
            let (_, offset, slope) = CLUSTERS[c];
            (s, offset + slope * (signal - mu) / sd + 0.1 * standard_normal(&mut noise))
        })
        .collect();
    let (ds, rejected) = Dataset::from_pairs("synthetic-clusters", "arbitrary", pairs);
    debug_assert!(rejected.is_empty());
    Ok((ds, tags))
}

/// One-dimensional regression with noise scale ramping linearly from 0.1
/// to 1.0 across `x ∈ [-3, 3]`. Returns `(x, y, σ²)`.
pub fn heteroscedastic_1d(count: usize, seed: u64) -> Vec<(f64, f64, f64)> {
    let mut r = rng::stream(seed, "hetero");
    (0..count)
        .map(|_| {
            let x: f64 = r.gen_range(-3.0..3.0);
            let sigma = 0.1 + 0.9 * (x + 3.0) / 6.0;
            let y = x.sin() + sigma * standard_normal(&mut r);
            (x, y, sigma * sigma)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::murcko_scaffold;

    #[test]
    fn solubility_set_is_valid_and_reproducible() {
        let a = solubility_dataset(200, 1).unwrap();
        let b = solubility_dataset(200, 1).unwrap();
        assert_eq!(a.len(), 200);
        assert_eq!(a.targets(), b.targets());
        let smiles: BTreeSet<&str> = a.records.iter().map(|r| r.smiles.as_str()).collect();
        assert_eq!(smiles.len(), 200);
        let rings = a.records.iter().filter(|r| r.graph.num_rings() > 0).count();
        assert!(rings > 100);
        let y = a.targets();
        let spread = y.iter().cloned().fold(f64::MIN, f64::max) - y.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread > 3.0);
    }

    #[test]
    fn families_share_one_scaffold_each() {
        let mut keys = Vec::new();
        for f in Family::ALL {
            let members = family_members(f, 40, 3).unwrap();
            let first = murcko_scaffold(&members[0].1);
            assert!(!first.is_empty());
            for (s, g) in &members {
                assert_eq!(murcko_scaffold(g), first, "{s}");
            }
            keys.push(first);
        }
        assert_ne!(keys[0], keys[1]);
        assert_ne!(keys[1], keys[2]);
        assert_ne!(keys[0], keys[2]);
    }

    #[test]
    fn no_empty_or_doubled_branches() {
        let mut all: Vec<String> = solubility_dataset(300, 8).unwrap().records.into_iter().map(|r| r.smiles).collect();
        all.extend(clustered_dataset(30, 8).unwrap().0.records.into_iter().map(|r| r.smiles));
        all.extend(family_dataset(&Family::ALL, 30, 8).unwrap().0.records.into_iter().map(|r| r.smiles));
        for s in all {
            assert!(!s.contains("()") && !s.contains("((") && !s.contains("))"), "{s}");
        }
    }

    #[test]
    fn surrogate_counts() {
        // benzene: 6 C, 6 aromatic, 1 ring
        let g = MolGraph::from_smiles("c1ccccc1").unwrap();
        assert!((logp_surrogate(&g) - (3.0 + 1.8 + 1.1)).abs() < 1e-12);
        let g = MolGraph::from_smiles("CCO").unwrap();
        assert!((logp_surrogate(&g) - (1.0 - 0.7)).abs() < 1e-12);
    }

    #[test]
    fn clusters_have_distinct_scaffolds() {
        let (ds, tags) = clustered_dataset(20, 4).unwrap();
        assert_eq!(ds.len(), 20 * CLUSTER_COUNT);
        for c in 0..CLUSTER_COUNT {
            let keys: BTreeSet<_> = ds
                .records
                .iter()
                .zip(&tags)
                .filter(|(_, t)| **t == c)
                .map(|(r, _)| murcko_scaffold(&r.graph))
                .collect();
            assert_eq!(keys.len(), 1);
        }
    }

    #[test]
    fn ramped_noise() {
        let d = heteroscedastic_1d(100, 2);
        for (x, _, v) in d {
            let s = v.sqrt();
            assert!((0.1..=1.0).contains(&s));
            assert!((s - (0.1 + 0.15 * (x + 3.0))).abs() < 1e-12);
        }
    }
}
