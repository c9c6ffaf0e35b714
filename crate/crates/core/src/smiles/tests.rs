use proptest::prelude::*;

use super::*;

/// (smiles, atoms, bonds, rings) counted by hand.
pub(crate) const CURATED: &[(&str, usize, usize, usize)] = &[
    ("C", 1, 0, 0),
    ("CC", 2, 1, 0),
    ("CCO", 3, 2, 0),
    ("CCCC", 4, 3, 0),
    ("CC(C)C", 4, 3, 0),
    ("CC(C)(C)C", 5, 4, 0),
    ("C=C", 2, 1, 0),
    ("C#N", 2, 1, 0),
    ("CC(=O)O", 4, 3, 0),
    ("CC(=O)OC", 5, 4, 0),
    ("c1ccccc1", 6, 6, 1),
    ("Cc1ccccc1", 7, 7, 1),
    ("Oc1ccccc1", 7, 7, 1),
    ("c1ccncc1", 6, 6, 1),
    ("c1ccoc1", 5, 5, 1),
    ("c1ccsc1", 5, 5, 1),
    ("c1cc[nH]c1", 5, 5, 1),
    ("C1CCCCC1", 6, 6, 1),
    ("C1CC1", 3, 3, 1),
    ("C1CCC1", 4, 4, 1),
    ("c1ccc2ccccc2c1", 10, 11, 2),
    ("c1ccc(cc1)-c1ccccc1", 12, 13, 2),
    ("C1CCC2CCCCC2C1", 10, 11, 2),
    ("ClC(Cl)Cl", 4, 3, 0),
    ("FC(F)(F)F", 5, 4, 0),
    ("BrCCBr", 4, 3, 0),
    ("ICI", 3, 2, 0),
    ("CS(=O)(=O)C", 5, 4, 0),
    ("CP(C)C", 4, 3, 0),
    ("[NH4+]", 1, 0, 0),
    ("[O-]C=O", 3, 2, 0),
    ("C[N+](C)(C)C", 5, 4, 0),
    ("[Na+].[Cl-]", 2, 0, 0),
    ("CCO.CC", 5, 3, 0),
    ("O=C1CCCCC1", 7, 7, 1),
    ("C1CC2CCC1C2", 7, 8, 2),
    ("c1ccc2[nH]ccc2c1", 9, 10, 2),
    ("O=C(O)c1ccccc1", 9, 9, 1),
    ("CC(=O)Nc1ccc(O)cc1", 11, 11, 1),
    ("CC(=O)Oc1ccccc1C(=O)O", 13, 13, 1),
    ("CN1C=NC2=C1C(=O)N(C(=O)N2C)C", 14, 15, 2),
    ("C1CCOC1", 5, 5, 1),
    ("C1COCCN1", 6, 6, 1),
    ("c1ccc2c(c1)ccc1ccccc12", 14, 16, 3),
    ("C(C(=O)O)N", 5, 4, 0),
    ("OCC(O)CO", 6, 5, 0),
    ("CC#CC", 4, 3, 0),
    ("N#Cc1ccccc1", 8, 8, 1),
    ("C1CC1C1CC1", 6, 7, 2),
    ("CC%10CCCCC%10", 7, 7, 1),
];

fn parse(s: &str) -> MolGraph {
    MolGraph::from_smiles(s).unwrap_or_else(|e| panic!("{s}: {e}"))
}

#[test]
fn curated_counts_match() {
    assert_eq!(CURATED.len(), 50);
    for &(s, atoms, bonds, rings) in CURATED {
        let g = parse(s);
        assert_eq!(g.num_atoms(), atoms, "{s} atoms");
        assert_eq!(g.num_bonds(), bonds, "{s} bonds");
        assert_eq!(g.num_rings(), rings, "{s} rings");
    }
}

#[test]
fn ethanol() {
    let g = parse("CCO");
    let elements: Vec<Element> = g.atoms.iter().map(|a| a.element).collect();
    assert_eq!(elements, [Element::C, Element::C, Element::O]);
    assert!(g.bonds.iter().all(|b| b.order == BondOrder::Single && !b.in_ring));
    let h: Vec<u32> = g.atoms.iter().map(|a| a.implicit_h).collect();
    assert_eq!(h, [3, 2, 1]);
}

#[test]
fn benzene() {
    let g = parse("c1ccccc1");
    assert_eq!(g.num_atoms(), 6);
    assert!(g.atoms.iter().all(|a| a.aromatic && a.element == Element::C && a.implicit_h == 1));
    assert_eq!(g.num_bonds(), 6);
    assert!(g.bonds.iter().all(|b| b.order == BondOrder::Aromatic && b.in_ring));
}

#[test]
fn ring_flags_distinguish_substituents() {
    let g = parse("c1ccccc1CCO");
    let ring: usize = g.bonds.iter().filter(|b| b.in_ring).count();
    assert_eq!(ring, 6);
    let g = parse("C1CC1C1CC1");
    // the bond joining the two cyclopropyls is a bridge
    assert_eq!(g.bonds.iter().filter(|b| !b.in_ring).count(), 1);
}

#[test]
fn implicit_hydrogens_follow_default_valences() {
    let g = parse("c1ccncc1");
    let n = g.atoms.iter().find(|a| a.element == Element::N).unwrap();
    assert_eq!(n.implicit_h, 0);
    let g = parse("c1ccc2ccccc2c1");
    let fused = g.atoms.iter().filter(|a| a.degree == 3).count();
    assert_eq!(fused, 2);
    assert!(g.atoms.iter().filter(|a| a.degree == 3).all(|a| a.implicit_h == 0));
    let g = parse("CS(=O)(=O)C");
    assert_eq!(g.atoms[1].implicit_h, 0);
    let g = parse("C=C");
    assert_eq!(g.atoms[0].implicit_h, 2);
    let g = parse("C#N");
    assert_eq!((g.atoms[0].implicit_h, g.atoms[1].implicit_h), (1, 0));
}

#[test]
fn bracket_atoms() {
    let g = parse("[NH4+]");
    assert_eq!(g.atoms[0].formal_charge, 1);
    assert_eq!(g.atoms[0].implicit_h, 4);
    let g = parse("[Fe+++]");
    assert_eq!(g.atoms[0].formal_charge, 3);
    assert_eq!(g.atoms[0].element, Element::Other);
    let g = parse("[O-2]");
    assert_eq!(g.atoms[0].formal_charge, -2);
    let g = parse("c1cc[nH]c1");
    assert_eq!(g.atoms[3].implicit_h, 1);
    assert!(g.atoms[3].aromatic);
}

#[test]
fn parse_errors() {
    assert_eq!(parse_smiles(""), Err(SmilesError::EmptyInput));
    assert_eq!(parse_smiles("   "), Err(SmilesError::EmptyInput));
    assert!(matches!(parse_smiles("C(C"), Err(SmilesError::UnmatchedParenthesis(1))));
    assert!(matches!(parse_smiles("CC)C"), Err(SmilesError::UnmatchedParenthesis(2))));
    assert_eq!(parse_smiles("C1CC"), Err(SmilesError::UnmatchedRingClosure(1)));
    assert!(matches!(
        parse_smiles("CCX"),
        Err(SmilesError::UnknownToken { position: 2, .. })
    ));
    assert!(matches!(
        parse_smiles("C(C)(C)(C)(C)(C)C"),
        Err(SmilesError::DegreeOverflow { atom: 0, degree: 6 })
    ));
}

#[test]
fn stereo_and_isotopes_rejected() {
    for s in ["C[C@H](O)N", "C[C@@H](O)N", "[13CH4]", "F/C=C/F", "F\\C=C\\F", "[CH3:1]C"] {
        assert!(
            matches!(parse_smiles(s), Err(SmilesError::UnknownToken { .. })),
            "{s}"
        );
    }
}

#[test]
fn featurize_aliphatic_carbon() {
    let g = parse("CCC");
    let row = g.atom_features.row(1);
    let mut expected = [0.0; ATOM_FEATURES];
    expected[0] = 1.0; // C
    expected[10 + 2] = 1.0; // degree 2
    expected[16 + 2] = 1.0; // 2 H
    assert_eq!(row, expected);
}

#[test]
fn featurize_pyridine_nitrogen() {
    let g = parse("c1ccncc1");
    let v = g.atoms.iter().position(|a| a.element == Element::N).unwrap();
    let row = g.atom_features.row(v);
    assert_eq!(row[Element::N.one_hot_index()], 1.0);
    assert_eq!(row[22], 1.0);
}

#[test]
fn featurize_charge_scaling() {
    assert_eq!(parse("[NH4+]").atom_features.row(0)[21], 0.5);
    assert_eq!(parse("[O-]C").atom_features.row(0)[21], -0.5);
    assert_eq!(parse("[Fe+++]").atom_features.row(0)[21], 1.0);
}

#[test]
fn feature_blocks_are_one_hot() {
    for &(s, ..) in CURATED {
        let g = parse(s);
        assert_eq!(g.atom_features.cols(), ATOM_FEATURES);
        assert_eq!(g.bond_features.cols(), BOND_FEATURES);
        for v in 0..g.num_atoms() {
            let row = g.atom_features.row(v);
            for (lo, hi) in [(0, 10), (10, 16), (16, 21)] {
                let ones = row[lo..hi].iter().filter(|&&x| x == 1.0).count();
                let zeros = row[lo..hi].iter().filter(|&&x| x == 0.0).count();
                assert_eq!((ones, zeros), (1, hi - lo - 1), "{s} atom {v}");
            }
        }
        for b in 0..g.num_bonds() {
            let row = g.bond_features.row(b);
            assert_eq!(row[..4].iter().filter(|&&x| x == 1.0).count(), 1);
            assert_eq!(row[..4].iter().sum::<f64>(), 1.0);
        }
    }
}

#[test]
fn parsing_is_deterministic() {
    for &(s, ..) in CURATED {
        assert_eq!(parse(s), parse(s));
    }
}

#[test]
fn writer_round_trips_counts_and_scaffold() {
    for &(s, atoms, bonds, rings) in CURATED {
        let g = parse(s);
        let text = to_smiles(&g);
        let back = parse(&text);
        assert_eq!(
            (back.num_atoms(), back.num_bonds(), back.num_rings()),
            (atoms, bonds, rings),
            "{s} -> {text}"
        );
        assert_eq!(murcko_scaffold(&back), murcko_scaffold(&g), "{s} -> {text}");
        let mut h1: Vec<u32> = g.atoms.iter().map(|a| a.implicit_h).collect();
        let mut h2: Vec<u32> = back.atoms.iter().map(|a| a.implicit_h).collect();
        h1.sort_unstable();
        h2.sort_unstable();
        assert_eq!(h1, h2, "{s} -> {text}");
    }
}

#[test]
fn acyclic_scaffold_is_empty() {
    assert!(murcko_scaffold(&parse("CCO")).is_empty());
    assert!(murcko_scaffold(&parse("CC(C)(C)C")).is_empty());
}

#[test]
fn side_chains_are_pruned() {
    assert_eq!(
        murcko_scaffold(&parse("c1ccccc1CCO")),
        murcko_scaffold(&parse("c1ccccc1C"))
    );
    assert_eq!(
        murcko_scaffold(&parse("c1ccccc1CCO")),
        murcko_scaffold(&parse("c1ccccc1"))
    );
}

#[test]
fn acyclic_substituents_do_not_change_key() {
    let families: &[&[&str]] = &[
        &["c1ccccc1", "Cc1ccccc1", "Oc1ccc(CC)cc1", "Clc1ccccc1Br", "CC(=O)Nc1ccc(O)cc1"],
        &["C1CCCCC1", "OC1CCCCC1", "CC1CCC(C)CC1", "NC1CCCCC1C(=O)O"],
        &["c1ccncc1", "Cc1ccncc1", "c1cc(C#N)cnc1"],
        &["c1ccc(cc1)Cc1ccccc1", "Oc1ccc(cc1)Cc1ccc(N)cc1"],
    ];
    let mut keys = Vec::new();
    for family in families {
        let key = murcko_scaffold(&parse(family[0]));
        for s in &family[1..] {
            assert_eq!(murcko_scaffold(&parse(s)), key, "{s}");
        }
        keys.push(key);
    }
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), families.len());
}

#[test]
fn linkers_are_kept() {
    assert_ne!(
        murcko_scaffold(&parse("c1ccccc1Cc1ccccc1")),
        murcko_scaffold(&parse("c1ccccc1CCc1ccccc1"))
    );
    assert_ne!(
        murcko_scaffold(&parse("c1ccccc1")),
        murcko_scaffold(&parse("c1ccncc1"))
    );
}

#[test]
fn scaffold_is_idempotent() {
    for &(s, ..) in CURATED {
        let g = parse(s);
        let key = murcko_scaffold(&g);
        let core = scaffold_graph(&g);
        if core.atoms.is_empty() {
            assert!(key.is_empty());
            continue;
        }
        let reparsed = parse(&to_smiles(&core));
        assert_eq!(murcko_scaffold(&reparsed), key, "{s}");
    }
}

fn permuted(g: &MolGraph, perm: &[usize]) -> MolGraph {
    featurize(g.relabeled(perm).unwrap())
}

proptest! {
    #[test]
    fn scaffold_key_is_label_invariant(idx in 0usize..50, seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let g = parse(CURATED[idx].0);
        let mut perm: Vec<usize> = (0..g.num_atoms()).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let p = permuted(&g, &perm);
        prop_assert_eq!(murcko_scaffold(&p), murcko_scaffold(&g));
        prop_assert_eq!(p.num_rings(), g.num_rings());
    }
}
