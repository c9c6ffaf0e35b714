use super::*;
use crate::autodiff::Optimizer;
use crate::bayes::DropoutPosterior;

fn mols(smiles: &[&str]) -> Vec<MolGraph> {
    smiles.iter().map(|s| MolGraph::from_smiles(s).unwrap()).collect()
}

fn small() -> ModelConfig {
    ModelConfig {
        hidden: 6,
        fp_len: 8,
        head_width: 6,
        steps: 2,
        ..ModelConfig::default()
    }
}

#[test]
fn corpus_needs_contrast() {
    let err = train_embeddings(&mols(&["CCO"]), &small(), &EmbeddingConfig::default()).unwrap_err();
    assert!(matches!(err, Error::CorpusTooSmall(1)));
}

#[test]
fn identical_vectors_split_probability_evenly() {
    let corpus = mols(&["CCO", "CCO"]);
    let cfg = small();
    let mut params = init_embedding(2, &cfg, 3).unwrap();
    let slot = params.require(MOLECULE_VECTORS).unwrap();
    let first = params.value(slot).row(0).to_vec();
    params.value_mut(slot).row_mut(1).copy_from_slice(&first);
    let p = membership_probabilities(&corpus[0], &params, &cfg).unwrap();
    assert!(p.data().iter().all(|&x| x == 0.5));
}

#[test]
fn membership_rows_are_distributions() {
    let corpus = mols(&["CCO", "c1ccccc1", "CC(=O)N", "ClCCl"]);
    let cfg = small();
    let params = init_embedding(corpus.len(), &cfg, 5).unwrap();
    let p = membership_probabilities(&corpus[1], &params, &cfg).unwrap();
    assert_eq!(p.rows(), 6 * cfg.steps);
    for r in 0..p.rows() {
        assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

/// Direct evaluation of the corpus objective with explicit loops.
fn objective_oracle(corpus: &[MolGraph], params: &ParamStore, cfg: &ModelConfig) -> f64 {
    let u = params.get(MOLECULE_VECTORS).unwrap();
    let mut total = 0.0;
    for (m, g) in corpus.iter().enumerate() {
        let states = graphconv::hidden_states(g, params, cfg).unwrap();
        for h in &states[1..] {
            for v in 0..h.rows() {
                let scores: Vec<f64> = (0..u.rows())
                    .map(|n| h.row(v).iter().zip(u.row(n)).map(|(a, b)| a * b).sum())
                    .collect();
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
                total += scores[m] - lse;
            }
        }
    }
    total
}

#[test]
fn reported_objective_matches_independent_evaluation() {
    let corpus = mols(&["CCO", "c1ccccc1", "CC(=O)N", "ClCCl", "CCCCC", "c1ccncc1"]);
    let cfg = small();
    let emb = train_embeddings(
        &corpus,
        &cfg,
        &EmbeddingConfig {
            epochs: 3,
            batch_size: 4,
            ..EmbeddingConfig::default()
        },
    )
    .unwrap();
    let oracle = objective_oracle(&corpus, &emb.params, &cfg);
    assert!((emb.objective - oracle).abs() < 1e-9, "{} vs {oracle}", emb.objective);
}

fn two_families() -> Vec<MolGraph> {
    let mut s = Vec::new();
    for n in 1..=50 {
        // chains with a terminal alcohol or amine
        let tail = if n % 2 == 0 { "O" } else { "N" };
        s.push(format!("{}{tail}", "C".repeat(1 + n % 12)));
    }
    for n in 1..=50 {
        let sub = ["F", "Cl", "Br", "C", "O"][n % 5];
        s.push(format!("c1ccc({}){}cc1", sub, if n % 2 == 0 { "c" } else { "n" }));
    }
    s.iter().map(|x| MolGraph::from_smiles(x).unwrap()).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn family_similarity(corpus: &[MolGraph], cfg: &EmbeddingConfig) -> (f64, f64, Embedding) {
    let model = ModelConfig {
        hidden: 8,
        ..small()
    };
    let emb = train_embeddings(corpus, &model, cfg).unwrap();
    let u = emb.molecule_vectors().unwrap();
    let (mut within, mut nw, mut between, mut nb) = (0.0, 0, 0.0, 0);
    for i in 0..100 {
        for j in i + 1..100 {
            let c = cosine(u.row(i), u.row(j));
            if (i < 50) == (j < 50) {
                within += c;
                nw += 1;
            } else {
                between += c;
                nb += 1;
            }
        }
    }
    (within / nw as f64, between / nb as f64, emb)
}

#[test]
fn vectors_cluster_by_family() {
    let corpus = two_families();
    let cfg = EmbeddingConfig {
        epochs: 20,
        lr: 1e-2,
        ..EmbeddingConfig::default()
    };
    let (within, between, emb) = family_similarity(&corpus, &cfg);
    assert!(within > between, "within {within} between {between}");
    assert!(emb.history.last().unwrap() < &emb.history[0]);
}

#[test]
fn negative_sampling_trains() {
    let corpus = two_families();
    let cfg = EmbeddingConfig {
        epochs: 10,
        lr: 1e-2,
        negatives: Some(5),
        ..EmbeddingConfig::default()
    };
    let (within, between, emb) = family_similarity(&corpus, &cfg);
    assert!(within > between);
    assert!(emb.objective.is_finite());
}

fn head_setup() -> (SemiSupRegressor, ParamStore, Vec<f64>, ModelConfig) {
    let corpus = two_families();
    let cfg = small();
    let emb = init_embedding(corpus.len(), &cfg, 1).unwrap();
    let model = SemiSupRegressor::new(&emb, &cfg, &corpus).unwrap();
    let w: Vec<f64> = (0..cfg.fp_len).map(|i| (i as f64 * 0.37).sin()).collect();
    let y = corpus
        .iter()
        .map(|g| {
            let fp = graphconv::fingerprint(g, &init_readout_only(&emb, &cfg), &cfg).unwrap();
            fp.iter().zip(&w).map(|(a, b)| a * b).sum()
        })
        .collect();
    (model, emb, y, cfg)
}

fn init_readout_only(emb: &ParamStore, cfg: &ModelConfig) -> ParamStore {
    let mut store = emb.clone();
    init_readout_head(&mut store, cfg, &mut rng::stream(99, "target")).unwrap();
    store
}

#[test]
fn head_training_leaves_message_passing_untouched() {
    let (model, emb, y, _) = head_setup();
    let before = emb.to_text();
    let idx: Vec<usize> = (0..y.len()).collect();
    let params = model.init_params(2).unwrap();
    assert!(params.slot_id("mp.H1.d1").is_none());
    let zero = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let same = train_head(&model, params.clone(), &idx, &y, &zero).unwrap();
    assert_eq!(same.params.flatten(), params.flatten());
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    train_head(&model, params, &idx, &y, &cfg).unwrap();
    assert_eq!(emb.to_text(), before);
}

#[test]
fn head_training_reduces_loss_on_fingerprint_target() {
    let (model, _, y, _) = head_setup();
    let idx: Vec<usize> = (0..y.len()).collect();
    let cfg = TrainConfig {
        epochs: 8,
        batch_size: 4,
        optimizer: Optimizer::Adam(AdamConfig::with_lr(3e-3)),
        ..TrainConfig::default()
    };
    // 100 examples / batch 4 = 25 steps per epoch, 200 steps total.
    let out = train_head(&model, model.init_params(4).unwrap(), &idx, &y, &cfg).unwrap();
    assert!(out.history.last().unwrap() < &out.history[0], "{:?}", out.history);
}

#[test]
fn frozen_batches_match_direct_fingerprints() {
    let corpus = mols(&["CCO", "c1ccccc1", "CC(=O)N", "[Na+].[Cl-]"]);
    let cfg = small();
    let emb = init_embedding(corpus.len(), &cfg, 7).unwrap();
    let model = SemiSupRegressor::new(&emb, &cfg, &corpus).unwrap();
    let head = model.init_params(8).unwrap();
    let mut joint = emb.clone();
    for slot in 0..head.num_slots() {
        joint.insert(head.name(slot), head.value(slot).clone()).unwrap();
    }
    let batch = model.batch(&[0, 1, 2, 3]).unwrap();
    let preds = model.predict(&head, &batch, &mut NoDropout).unwrap();
    for (g, p) in corpus.iter().zip(&preds) {
        let direct = graphconv::predict(g, &joint, &cfg, &mut NoDropout).unwrap();
        assert!((direct.0 - p.0).abs() < 1e-12 && (direct.1 - p.1).abs() < 1e-12);
    }
    // benzene's six atoms share one state row per step
    assert!(model.distinct_rows().iter().all(|&n| n < 6 + 3 + 4 + 2));
}

#[test]
fn cached_mc_dropout_matches_full_passes() {
    let corpus = mols(&["CCO", "c1ccccc1", "CC(=O)N"]);
    let cfg = small();
    let emb = init_embedding(corpus.len(), &cfg, 2).unwrap();
    let model = SemiSupRegressor::new(&emb, &cfg, &corpus).unwrap();
    let head = model.init_params(3).unwrap();
    let batch = model.batch(&[0, 1, 2]).unwrap();
    let fast = model.predict_mc(&head, &batch, 0.3, 5, &mut rng::stream(1, "x")).unwrap();
    let mut r = rng::stream(1, "x");
    let slow: Vec<_> = (0..5)
        .map(|_| model.predict(&head, &batch, &mut BernoulliDropout::new(0.3, &mut r)).unwrap())
        .collect();
    for (a, b) in fast.iter().flatten().zip(slow.iter().flatten()) {
        assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
    }
    let post = DropoutPosterior::new(head, 0.2, 10).unwrap();
    for d in post.predict(&model, &batch, 0).unwrap() {
        assert_eq!(d.total_var, d.epistemic_var + d.aleatoric_var);
    }
}
