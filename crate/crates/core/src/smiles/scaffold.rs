use std::fmt;

use serde::{Deserialize, Serialize};

use super::{to_smiles, Bond, MolGraph};

/// Canonical text key of a molecule's ring-system skeleton. Acyclic
/// molecules share the empty key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScaffoldKey(pub String);

impl ScaffoldKey {
    pub fn empty() -> Self {
        Self(String::new())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ScaffoldKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            f.write_str("<acyclic>")
        } else {
            f.write_str(&self.0)
        }
    }
}

/// Ring systems plus the linker paths between them: repeatedly strips
/// atoms with at most one remaining neighbour. Atoms keep their labels;
/// hydrogens of organic-subset atoms are recomputed for the smaller graph.
pub fn scaffold_graph(graph: &MolGraph) -> MolGraph {
    let n = graph.atoms.len();
    let mut alive = vec![true; n];
    let mut degree: Vec<usize> = graph.adjacency.iter().map(Vec::len).collect();
    let mut queue: Vec<usize> = (0..n).filter(|&v| degree[v] <= 1).collect();
    while let Some(v) = queue.pop() {
        if !alive[v] {
            continue;
        }
        alive[v] = false;
        for &(w, _) in &graph.adjacency[v] {
            if alive[w] {
                degree[w] -= 1;
                if degree[w] <= 1 {
                    queue.push(w);
                }
            }
        }
    }
    let mut remap = vec![usize::MAX; n];
    let mut atoms = Vec::new();
    for v in 0..n {
        if alive[v] {
            remap[v] = atoms.len();
            atoms.push(graph.atoms[v].clone());
        }
    }
    let bonds: Vec<Bond> = graph
        .bonds
        .iter()
        .filter(|b| alive[b.endpoints.0] && alive[b.endpoints.1])
        .map(|b| Bond {
            endpoints: (remap[b.endpoints.0], remap[b.endpoints.1]),
            order: b.order,
            in_ring: false,
        })
        .collect();
    let mut out = MolGraph::from_parts(atoms, bonds, String::new())
        .expect("a subgraph cannot raise degrees");
    out.source_smiles = to_smiles(&out);
    out
}

/// Canonical key of [`scaffold_graph`].
pub fn murcko_scaffold(graph: &MolGraph) -> ScaffoldKey {
    let core = scaffold_graph(graph);
    if core.atoms.is_empty() {
        return ScaffoldKey::empty();
    }
    ScaffoldKey(canonical_encoding(&core))
}

fn atom_label(graph: &MolGraph, v: usize) -> String {
    let a = &graph.atoms[v];
    let sym = if a.aromatic {
        a.symbol.to_ascii_lowercase()
    } else {
        a.symbol.clone()
    };
    match a.formal_charge {
        0 => sym,
        c => format!("{sym}{c:+}"),
    }
}

/// Minimum adjacency encoding over all discrete rankings reachable by
/// colour refinement plus individualization of tied atoms.
fn canonical_encoding(graph: &MolGraph) -> String {
    let labels: Vec<String> = (0..graph.atoms.len()).map(|v| atom_label(graph, v)).collect();
    let initial: Vec<(String, usize)> = labels
        .iter()
        .enumerate()
        .map(|(v, l)| (l.clone(), graph.adjacency[v].len()))
        .collect();
    let ranks = dense_ranks(&initial);
    let ranks = refine(graph, ranks);
    let mut best: Option<String> = None;
    search(graph, &labels, ranks, &mut best);
    best.expect("at least one leaf")
}

fn dense_ranks<T: Ord + Clone>(keys: &[T]) -> Vec<usize> {
    let mut sorted: Vec<T> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter()
        .map(|k| sorted.binary_search(k).expect("present"))
        .collect()
}

fn num_classes(ranks: &[usize]) -> usize {
    let mut r = ranks.to_vec();
    r.sort_unstable();
    r.dedup();
    r.len()
}

fn refine(graph: &MolGraph, mut ranks: Vec<usize>) -> Vec<usize> {
    loop {
        let keys: Vec<(usize, Vec<(usize, u32)>)> = (0..ranks.len())
            .map(|v| {
                let mut nb: Vec<(usize, u32)> = graph.adjacency[v]
                    .iter()
                    .map(|&(w, b)| (ranks[w], graph.bonds[b].order.doubled()))
                    .collect();
                nb.sort_unstable();
                (ranks[v], nb)
            })
            .collect();
        let next = dense_ranks(&keys);
        if num_classes(&next) == num_classes(&ranks) {
            return next;
        }
        ranks = next;
    }
}

fn encode(graph: &MolGraph, labels: &[String], ranks: &[usize]) -> String {
    let n = ranks.len();
    let mut by_rank = vec![0; n];
    for (v, &r) in ranks.iter().enumerate() {
        by_rank[r] = v;
    }
    let atoms: Vec<&str> = by_rank.iter().map(|&v| labels[v].as_str()).collect();
    let mut edges: Vec<(usize, usize, u32)> = graph
        .bonds
        .iter()
        .map(|b| {
            let (x, y) = (ranks[b.endpoints.0], ranks[b.endpoints.1]);
            (x.min(y), x.max(y), b.order.doubled())
        })
        .collect();
    edges.sort_unstable();
    let edges: Vec<String> = edges
        .iter()
        .map(|(x, y, o)| format!("{x}-{y}:{o}"))
        .collect();
    format!("{}|{}", atoms.join(","), edges.join(","))
}

fn search(graph: &MolGraph, labels: &[String], ranks: Vec<usize>, best: &mut Option<String>) {
    let n = ranks.len();
    if num_classes(&ranks) == n {
        let enc = encode(graph, labels, &ranks);
        if best.as_ref().map_or(true, |b| enc < *b) {
            *best = Some(enc);
        }
        return;
    }
    // smallest rank shared by more than one atom
    let mut counts = vec![0; n];
    for &r in &ranks {
        counts[r] += 1;
    }
    let target = (0..n).find(|&r| counts[r] > 1).expect("a tied class");
    let members: Vec<usize> = (0..n).filter(|&v| ranks[v] == target).collect();
    for &chosen in &members {
        let keys: Vec<(usize, u8)> = ranks
            .iter()
            .enumerate()
            .map(|(v, &r)| (r, u8::from(!(v == chosen || r != target))))
            .collect();
        let split = refine(graph, dense_ranks(&keys));
        search(graph, labels, split, best);
    }
}
