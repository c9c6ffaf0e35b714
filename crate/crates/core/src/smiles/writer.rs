use super::{Atom, BondOrder, MolGraph};

/// Writes a (non-canonical) SMILES string that parses back to the same
/// graph up to atom order.
pub fn to_smiles(graph: &MolGraph) -> String {
    let n = graph.atoms.len();
    let mut order = vec![usize::MAX; n];
    let mut children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut tree_bond = vec![false; graph.bonds.len()];
    let mut roots = Vec::new();
    let mut counter = 0;

    for root in 0..n {
        if order[root] != usize::MAX {
            continue;
        }
        roots.push(root);
        // recursive DFS order, done iteratively
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        order[root] = counter;
        counter += 1;
        while let Some(&mut (v, ref mut pos)) = stack.last_mut() {
            if *pos < graph.adjacency[v].len() {
                let (w, b) = graph.adjacency[v][*pos];
                *pos += 1;
                if order[w] == usize::MAX {
                    order[w] = counter;
                    counter += 1;
                    tree_bond[b] = true;
                    children[v].push((w, b));
                    stack.push((w, 0));
                }
            } else {
                stack.pop();
            }
        }
    }

    // ring-closure bonds, attached to both endpoints
    let mut closures: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (b, bond) in graph.bonds.iter().enumerate() {
        if !tree_bond[b] {
            closures[bond.endpoints.0].push(b);
            closures[bond.endpoints.1].push(b);
        }
    }

    let mut out = String::new();
    let mut labels: Vec<Option<u32>> = vec![None; graph.bonds.len()];
    let mut in_use: Vec<u32> = Vec::new();
    for (i, &root) in roots.iter().enumerate() {
        if i > 0 {
            out.push('.');
        }
        let mut ctx = Emitter {
            graph,
            order: &order,
            children: &children,
            closures: &closures,
            labels: &mut labels,
            in_use: &mut in_use,
            out: &mut out,
        };
        ctx.emit(root);
    }
    out
}

struct Emitter<'a> {
    graph: &'a MolGraph,
    order: &'a [usize],
    children: &'a [Vec<(usize, usize)>],
    closures: &'a [Vec<usize>],
    labels: &'a mut Vec<Option<u32>>,
    in_use: &'a mut Vec<u32>,
    out: &'a mut String,
}

impl Emitter<'_> {
    fn emit(&mut self, v: usize) {
        self.out.push_str(&atom_text(&self.graph.atoms[v]));
        let mut ring: Vec<usize> = self.closures[v].clone();
        ring.sort_by_key(|&b| self.order[self.graph.bonds[b].other(v)]);
        for b in ring {
            let other = self.graph.bonds[b].other(v);
            if self.order[other] < self.order[v] {
                let label = self.labels[b].expect("opened earlier");
                self.in_use.retain(|&l| l != label);
                self.out.push_str(&label_text(label));
            } else {
                let label = (1..).find(|l| !self.in_use.contains(l)).unwrap();
                self.in_use.push(label);
                self.labels[b] = Some(label);
                self.out.push_str(bond_text(self.graph, b));
                self.out.push_str(&label_text(label));
            }
        }
        let kids = &self.children[v];
        for (i, &(w, b)) in kids.iter().enumerate() {
            let last = i + 1 == kids.len();
            if !last {
                self.out.push('(');
            }
            self.out.push_str(bond_text(self.graph, b));
            self.emit(w);
            if !last {
                self.out.push(')');
            }
        }
    }
}

fn label_text(label: u32) -> String {
    if label < 10 {
        label.to_string()
    } else {
        format!("%{label:02}")
    }
}

fn bond_text(graph: &MolGraph, b: usize) -> &'static str {
    let bond = &graph.bonds[b];
    let both_aromatic =
        graph.atoms[bond.endpoints.0].aromatic && graph.atoms[bond.endpoints.1].aromatic;
    match (bond.order, both_aromatic) {
        (BondOrder::Single, true) => "-",
        (BondOrder::Single, false) => "",
        (BondOrder::Double, _) => "=",
        (BondOrder::Triple, _) => "#",
        (BondOrder::Aromatic, true) => "",
        (BondOrder::Aromatic, false) => ":",
    }
}

fn atom_text(atom: &Atom) -> String {
    let symbol = if atom.aromatic {
        atom.symbol.to_ascii_lowercase()
    } else {
        atom.symbol.clone()
    };
    let Some(h) = atom.bracket_h else {
        return symbol;
    };
    let mut s = format!("[{symbol}");
    match h {
        0 => {}
        1 => s.push('H'),
        n => s.push_str(&format!("H{n}")),
    }
    match atom.formal_charge {
        0 => {}
        1 => s.push('+'),
        -1 => s.push('-'),
        c if c > 0 => s.push_str(&format!("+{c}")),
        c => s.push_str(&format!("-{}", -c)),
    }
    s.push(']');
    s
}
