use super::*;
use crate::model::DropAll;
use crate::smiles::MolGraph;

fn mol(s: &str) -> MolGraph {
    MolGraph::from_smiles(s).unwrap()
}

fn small_cfg() -> ModelConfig {
    ModelConfig {
        hidden: 8,
        fp_len: 6,
        head_width: 5,
        ..ModelConfig::default()
    }
}

#[test]
fn isolated_atom_keeps_padded_features() {
    let cfg = small_cfg();
    let store = init_params(&cfg, 1).unwrap();
    let g = mol("[Na+].Cl");
    let states = hidden_states(&g, &store, &cfg).unwrap();
    for t in 1..=cfg.steps {
        assert_eq!(states[t].row(0), &g.atom_features.row(0)[..cfg.hidden]);
    }
}

#[test]
fn symmetric_atoms_share_hidden_states() {
    let cfg = small_cfg();
    let store = init_params(&cfg, 2).unwrap();
    let states = hidden_states(&mol("c1ccccc1"), &store, &cfg).unwrap();
    for t in 0..=cfg.steps {
        for v in 1..6 {
            for (a, b) in states[t].row(0).iter().zip(states[t].row(v)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn fingerprint_mass_counts_atoms_and_steps() {
    let cfg = small_cfg();
    let store = init_params(&cfg, 3).unwrap();
    let fp = fingerprint(&mol("c1ccccc1"), &store, &cfg).unwrap();
    let total: f64 = fp.iter().sum();
    assert!((total - 24.0).abs() < 1e-9);

    let no_init = ModelConfig {
        readout_initial: false,
        ..small_cfg()
    };
    let store = init_params(&no_init, 3).unwrap();
    let fp = fingerprint(&mol("CCO"), &store, &no_init).unwrap();
    assert!((fp.iter().sum::<f64>() - 9.0).abs() < 1e-9);
}

fn shuffled(g: &MolGraph, seed: u64) -> (MolGraph, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut perm: Vec<usize> = (0..g.num_atoms()).collect();
    perm.shuffle(&mut crate::rng::indexed_stream(seed, "relabel", 0));
    (g.relabeled(&perm).unwrap(), perm)
}

#[test]
fn fingerprint_bitwise_invariant_under_relabeling() {
    let cfg = small_cfg();
    let store = init_params(&cfg, 4).unwrap();
    let g = mol("CC(=O)Nc1ccc(O)cc1");
    let base = fingerprint(&g, &store, &cfg).unwrap();
    let base_pred = predict(&g, &store, &cfg, &mut NoDropout).unwrap();
    for seed in 0..20 {
        let (p, _) = shuffled(&g, seed);
        assert_eq!(base, fingerprint(&p, &store, &cfg).unwrap(), "relabeling {seed}");
        assert_eq!(base_pred, predict(&p, &store, &cfg, &mut NoDropout).unwrap());
    }
    for v in ["Oc1ccc(NC(C)=O)cc1", "O=C(C)Nc1ccc(cc1)O"] {
        assert_eq!(base, fingerprint(&mol(v), &store, &cfg).unwrap(), "{v}");
    }
}

#[test]
fn hidden_states_follow_permutation() {
    let cfg = small_cfg();
    let store = init_params(&cfg, 11).unwrap();
    let g = mol("CCO");
    let states = hidden_states(&g, &store, &cfg).unwrap();
    for seed in 0..6 {
        let (p, perm) = shuffled(&g, seed);
        let moved = hidden_states(&p, &store, &cfg).unwrap();
        for t in 0..=cfg.steps {
            for v in 0..3 {
                assert_eq!(states[t].row(v), moved[t].row(perm[v]));
            }
        }
    }
}

#[test]
fn batched_forward_matches_single() {
    let cfg = small_cfg();
    let store = init_params(&cfg, 5).unwrap();
    let graphs = Arc::new(vec![mol("CCO"), mol("c1ccncc1"), mol("C#N"), mol("[Na+].[Cl-]")]);
    let model = GraphConvRegressor::new(cfg.clone(), graphs.clone()).unwrap();
    let batch = model.batch(&[0, 1, 2, 3]).unwrap();
    let joint = model.predict(&store, &batch, &mut NoDropout).unwrap();
    for (i, g) in graphs.iter().enumerate() {
        let single = predict(g, &store, &cfg, &mut NoDropout).unwrap();
        assert!((single.0 - joint[i].0).abs() < 1e-12);
        assert!((single.1 - joint[i].1).abs() < 1e-12);
    }
}

#[test]
fn zero_dropout_is_deterministic() {
    let cfg = small_cfg();
    let store = init_params(&cfg, 6).unwrap();
    let g = mol("CC(C)Cc1ccc(cc1)C(C)C(=O)O");
    let a = predict(&g, &store, &cfg, &mut NoDropout).unwrap();
    let mut rng = crate::rng::stream(0, "dropout");
    let b = predict(&g, &store, &cfg, &mut crate::model::BernoulliDropout::new(0.0, &mut rng)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn dropping_head_leaves_output_bias() {
    let cfg = small_cfg();
    let mut store = init_params(&cfg, 7).unwrap();
    let slot = store.require("head.out.b").unwrap();
    store.value_mut(slot).data_mut().copy_from_slice(&[0.25, -1.5]);
    let mut drop = DropAll(vec![MaskSite::Head(1)]);
    let out = predict(&mol("CCN"), &store, &cfg, &mut drop).unwrap();
    assert_eq!(out, (0.25, -1.5));
}

#[test]
fn one_step_is_local() {
    let cfg = ModelConfig {
        steps: 1,
        ..small_cfg()
    };
    let store = init_params(&cfg, 8).unwrap();
    // Atom 0's neighbourhood is identical in both; atom 5 differs.
    let a = hidden_states(&mol("CCCCCC"), &store, &cfg).unwrap();
    let b = hidden_states(&mol("CCCCCO"), &store, &cfg).unwrap();
    assert_eq!(a[1].row(0), b[1].row(0));
    assert_ne!(a[1].row(4), b[1].row(4));
}

#[test]
fn degree_weights_selected_by_degree() {
    let cfg = small_cfg();
    let mut store = init_params(&cfg, 9).unwrap();
    let before = fingerprint(&mol("CC"), &store, &cfg).unwrap();
    // Ethane has only degree-1 atoms, so degree-3 weights are irrelevant.
    let slot = store.require(&message_slot(1, 3)).unwrap();
    store.value_mut(slot).data_mut().iter_mut().for_each(|x| *x = 9.0);
    assert_eq!(before, fingerprint(&mol("CC"), &store, &cfg).unwrap());
    let slot = store.require(&message_slot(1, 1)).unwrap();
    store.value_mut(slot).data_mut().iter_mut().for_each(|x| *x = 9.0);
    assert_ne!(before, fingerprint(&mol("CC"), &store, &cfg).unwrap());
}

#[test]
fn gradient_matches_finite_differences() {
    let cfg = ModelConfig {
        hidden: 4,
        fp_len: 3,
        head_width: 3,
        steps: 2,
        ..ModelConfig::default()
    };
    let store = init_params(&cfg, 10).unwrap();
    let graphs = Arc::new(vec![mol("CC(=O)O"), mol("c1ccoc1"), mol("CN")]);
    let model = GraphConvRegressor::new(cfg, graphs).unwrap();
    let batch = model.batch(&[0, 1, 2]).unwrap();
    let loss_of = |s: &ParamStore| -> (f64, Vec<f64>) {
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, s, &batch, &mut NoDropout).unwrap();
        let sq = tape.square(out.mean).unwrap();
        let e = tape.exp(out.log_var).unwrap();
        let both = tape.add(sq, e).unwrap();
        let loss = tape.sum(both).unwrap();
        let mut grad_store = s.clone();
        grad_store.zero_grads();
        tape.backward_into(loss, &mut grad_store).unwrap();
        (tape.value(loss).item(), grad_store.flatten_grads())
    };
    let (_, analytic) = loss_of(&store);
    let theta = store.flatten();
    let h = 1e-6;
    for i in (0..theta.len()).step_by(7) {
        let mut plus = theta.clone();
        plus[i] += h;
        let mut minus = theta.clone();
        minus[i] -= h;
        let fd = (loss_of(&store.unflatten(&plus).unwrap()).0
            - loss_of(&store.unflatten(&minus).unwrap()).0)
            / (2.0 * h);
        let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
        assert!(err < 1e-5, "param {i}: fd {fd} analytic {}", analytic[i]);
    }
}

#[test]
fn invalid_config_rejected() {
    let cfg = ModelConfig {
        steps: 0,
        ..ModelConfig::default()
    };
    assert!(init_params(&cfg, 0).is_err());
}
