use std::cell::RefCell;

use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};
use rand::Rng as _;

use super::*;
use crate::autodiff::Tensor;
use crate::graphconv::ModelConfig;
use crate::model::MlpRegressor;
use crate::pipeline::{InferenceKind, ModelKind};
use crate::synth::{self, Family};

/// Constant predictions with a caller-chosen epistemic variance per index;
/// records every labeled set it was trained on.
struct Scripted<F: Fn(usize) -> f64> {
    epistemic: F,
    seen: RefCell<Vec<Vec<usize>>>,
}

impl<F: Fn(usize) -> f64> Scripted<F> {
    fn new(epistemic: F) -> Self {
        Self {
            epistemic,
            seen: RefCell::new(Vec::new()),
        }
    }
}

impl<F: Fn(usize) -> f64> ModelFactory for Scripted<F> {
    fn fit_predict(&self, labeled: &[usize], targets: &[f64], queries: &[usize], _: u64) -> Result<Vec<PredictiveDistribution>> {
        self.seen.borrow_mut().push(labeled.to_vec());
        let mean = targets.iter().sum::<f64>() / targets.len() as f64;
        Ok(queries
            .iter()
            .map(|&i| {
                let e = (self.epistemic)(i);
                PredictiveDistribution {
                    mean,
                    epistemic_var: e,
                    aleatoric_var: 0.1,
                    total_var: e + 0.1,
                }
            })
            .collect())
    }
}

fn ramp(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 * 0.1).collect()
}

#[test]
fn pools_are_disjoint_and_conserved() {
    let cfg = ActiveConfig::default();
    let pool = PoolState::random(100, &cfg, 3).unwrap();
    assert!(pool.is_disjoint());
    assert_eq!(pool.test.len(), 20);
    assert_eq!(pool.labeled.len(), 20);
    assert_eq!(pool.universe().len() + pool.test.len(), 100);
    assert!(PoolState::new(vec![1, 2], vec![2], vec![3]).is_err());
}

#[test]
fn exhausted_pool_refuses_acquisition() {
    let mut pool = PoolState::new(vec![0], vec![], vec![1]).unwrap();
    assert!(matches!(pool.acquire(&[]), Err(Error::PoolExhausted)));
    let mut pool = PoolState::new(vec![0], vec![2], vec![1]).unwrap();
    assert!(pool.acquire(&[1]).is_err());
}

#[test]
fn whole_pool_batch_gives_one_acquisition() {
    let y = ramp(50);
    let cfg = ActiveConfig {
        batch_frac: 0.99,
        iterations: 5,
        ..ActiveConfig::default()
    };
    let pool = PoolState::random(50, &cfg, 1).unwrap();
    let universe = pool.universe();
    let factory = Scripted::new(|_| 1.0);
    let curve = run_active_learning(&y, &factory, Strategy::Random, &cfg, pool, 1).unwrap();
    assert_eq!(curve.acquisitions.len(), 1);
    assert_eq!(curve.points.len(), 2);
    assert_eq!(factory.seen.borrow().last().unwrap(), &universe);
}

#[test]
fn constant_uncertainty_selects_lowest_indices() {
    let y = ramp(60);
    let cfg = ActiveConfig {
        iterations: 1,
        ..ActiveConfig::default()
    };
    let pool = PoolState::random(60, &cfg, 2).unwrap();
    let expected: Vec<usize> = pool.unlabeled[..cfg.batch_size(48)].to_vec();
    let curve = run_active_learning(&y, &Scripted::new(|_| 0.5), Strategy::Active, &cfg, pool, 2).unwrap();
    assert_eq!(curve.acquisitions[0].selected, expected);
}

#[test]
fn labeled_count_grows_by_batch_until_exhaustion() {
    let y = ramp(40);
    let cfg = ActiveConfig {
        batch_frac: 0.2,
        iterations: 10,
        ..ActiveConfig::default()
    };
    let pool = PoolState::random(40, &cfg, 4).unwrap();
    let curve = run_active_learning(&y, &Scripted::new(|i| (i * 7 % 11) as f64), Strategy::Active, &cfg, pool, 4).unwrap();
    let counts: Vec<usize> = curve.points.iter().map(|p| p.labeled_count).collect();
    // 32 in the universe: 8 initial, batches of 6 (round(0.2·32)), last one partial
    assert_eq!(counts, vec![8, 14, 20, 26, 32]);
}

#[test]
fn curves_are_reproducible_and_serialize() {
    let y = ramp(40);
    let cfg = ActiveConfig {
        iterations: 3,
        ..ActiveConfig::default()
    };
    let run = || {
        let pool = PoolState::random(40, &cfg, 9).unwrap();
        run_active_learning(&y, &Scripted::new(|i| (i % 5) as f64), Strategy::Random, &cfg, pool, 9).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    let csv = LearningCurve::to_csv(&[a]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(LEARNING_CURVE_HEADER));
    assert!(lines.next().unwrap().ends_with(",random,9"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn acquisition_is_top_k_of_logged_scores(seed in 0u64..1000, levels in 1usize..6) {
        let y = ramp(80);
        let cfg = ActiveConfig { iterations: 3, ..ActiveConfig::default() };
        let pool = PoolState::random(80, &cfg, seed).unwrap();
        let factory = Scripted::new(move |i| ((i as u64 * 2654435761 + seed) % levels as u64) as f64);
        let curve = run_active_learning(&y, &factory, Strategy::Active, &cfg, pool, seed).unwrap();
        for acq in &curve.acquisitions {
            let mut order = acq.scores.clone();
            order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let mut top: Vec<usize> = order[..acq.selected.len()].iter().map(|s| s.0).collect();
            top.sort_unstable();
            prop_assert_eq!(&top, &acq.selected);
        }
    }

    #[test]
    fn pools_stay_disjoint(seed in 0u64..1000, n in 20usize..120) {
        let cfg = ActiveConfig { iterations: 4, batch_frac: 0.1, ..ActiveConfig::default() };
        let mut pool = PoolState::random(n, &cfg, seed).unwrap();
        let universe = pool.universe();
        let test = pool.test.clone();
        let mut r = rng::stream(seed, "t");
        while !pool.unlabeled.is_empty() {
            let k = r.gen_range(1..=pool.unlabeled.len());
            let pick: Vec<usize> = pool.unlabeled.choose_multiple(&mut r, k).copied().collect();
            pool.acquire(&pick).unwrap();
            prop_assert!(pool.is_disjoint());
            prop_assert_eq!(pool.universe(), universe.clone());
            prop_assert_eq!(&pool.test, &test);
        }
    }
}

fn toy_scaffold_set(per_group: &[usize]) -> Vec<MolGraph> {
    let cores = ["c1ccccc1", "C1CCCCC1", "c1ccncc1", "C1CCNC1", "c1ccsc1", "C1CC1"];
    let tails = ["C", "CC", "O", "N", "CCC", "Cl", "F", "OC", "CO", "CN", "Br", "C=O"];
    let mut out = Vec::new();
    for (g, &n) in per_group.iter().enumerate() {
        for k in 0..n {
            let s = format!("{}{}", tails[k % tails.len()].repeat(1 + k / tails.len()), cores[g]);
            out.push(MolGraph::from_smiles(&s).unwrap());
        }
    }
    out
}

#[test]
fn biased_pool_on_one_scaffold_is_random_subset() {
    let graphs = toy_scaffold_set(&[20]);
    let universe: Vec<usize> = (0..16).collect();
    let pool = scaffold_biased_split(&graphs, &universe, &[16, 17, 18, 19], 0.25, 3).unwrap();
    assert_eq!(pool.labeled.len(), 4);
    assert!(pool.is_disjoint());
}

#[test]
fn biased_pool_takes_one_of_two_equal_groups() {
    let graphs = toy_scaffold_set(&[10, 10, 2]);
    let universe: Vec<usize> = (0..20).collect();
    for seed in 0..5 {
        let pool = scaffold_biased_split(&graphs, &universe, &[20, 21], 0.5, seed).unwrap();
        assert!(pool.labeled == (0..10).collect::<Vec<_>>() || pool.labeled == (10..20).collect::<Vec<_>>());
    }
}

#[test]
fn biased_pool_covers_fewer_scaffolds_than_random() {
    let graphs = toy_scaffold_set(&[14, 12, 10, 9, 8, 7]);
    let n = graphs.len();
    let cfg = ActiveConfig::default();
    let distinct = |idx: &[usize]| {
        idx.iter()
            .map(|&i| crate::smiles::murcko_scaffold(&graphs[i]))
            .collect::<BTreeSet<_>>()
            .len()
    };
    for seed in 0..10 {
        let (universe, test) = holdout(n, cfg.test_frac, seed);
        let biased = scaffold_biased_split(&graphs, &universe, &test, cfg.init_frac, seed).unwrap();
        let mut random = universe.clone();
        random.shuffle(&mut rng::stream(seed, "cmp"));
        random.truncate(biased.labeled.len());
        assert!(distinct(&biased.labeled) < distinct(&random), "seed {seed}");
    }
}

fn mlp_config(inference: InferenceKind) -> RunConfig {
    RunConfig {
        inference,
        mc_samples: 30,
        network: ModelConfig {
            dropout_p: 0.2,
            ..ModelConfig::default()
        },
        train: crate::bayes::TrainConfig {
            epochs: 60,
            batch_size: 8,
            optimizer: crate::autodiff::Optimizer::Adam(crate::autodiff::AdamConfig::with_lr(1e-2)),
            ..crate::bayes::TrainConfig::default()
        },
        ..RunConfig::default()
    }
}

#[test]
fn active_acquisition_finds_missing_cluster() {
    // two clusters in feature space; the initial pool holds only cluster 0
    let mut wins = 0;
    for seed in 0..10u64 {
        let mut r = rng::stream(seed, "clusters");
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for c in 0..2 {
            for _ in 0..40 {
                let x = [r.gen_range(-1.0..1.0) + 4.0 * c as f64, r.gen_range(-1.0..1.0) + 4.0 * c as f64];
                y.push(if c == 0 { x[0] } else { 3.0 - 2.0 * x[1] });
                rows.push(x.to_vec());
            }
        }
        let factory = RegressorFactory {
            model: MlpRegressor::new(Tensor::from_rows(&rows).unwrap(), 16),
            config: mlp_config(InferenceKind::Dropout),
        };
        let test: Vec<usize> = (0..80).filter(|i| i % 5 == 0).collect();
        let labeled: Vec<usize> = (0..40).filter(|i| i % 5 != 0).take(16).collect();
        let unlabeled: Vec<usize> = (0..80).filter(|i| i % 5 != 0 && !labeled.contains(i)).collect();
        let pool = PoolState::new(labeled, unlabeled, test).unwrap();
        let cfg = ActiveConfig {
            iterations: 1,
            batch_frac: 0.125,
            ..ActiveConfig::default()
        };
        let count = |s: Strategy| {
            let curve = run_active_learning(&y, &factory, s, &cfg, pool.clone(), seed).unwrap();
            curve.acquisitions[0].selected.iter().filter(|&&i| i >= 40).count()
        };
        if count(Strategy::Active) > count(Strategy::Random) {
            wins += 1;
        }
    }
    assert!(wins > 5, "active won {wins}/10");
}

fn probe_setup(seed: u64) -> (Vec<MolGraph>, Vec<String>, NetworkFactory) {
    let (ds, tags) = synth::family_dataset(&Family::ALL, 20, seed).unwrap();
    let graphs = ds.graphs();
    let names = tags.iter().map(|f| f.name().to_string()).collect();
    let cfg = RunConfig {
        model: ModelKind::Graphconv,
        inference: InferenceKind::Svgd,
        network: ModelConfig {
            hidden: 8,
            fp_len: 16,
            head_width: 8,
            steps: 2,
            ..ModelConfig::default()
        },
        svgd: crate::bayes::SvgdConfig {
            particles: 4,
            epochs: 10,
            batch_size: 8,
            ..crate::bayes::SvgdConfig::default()
        },
        ..RunConfig::default()
    };
    let factory = NetworkFactory::prepare(&cfg, &graphs, &[], seed).unwrap();
    (graphs, names, factory)
}

#[test]
fn probe_rejects_empty_family() {
    let (graphs, names, factory) = probe_setup(1);
    let err = bias_probe(&graphs, &names, &["beta-lactam"], "penicillin", &synth::logp_surrogate, &factory, 1);
    assert!(matches!(err, Err(Error::EmptyFamily(f)) if f == "penicillin"));
}

#[test]
fn self_probe_matches_in_domain() {
    let (graphs, names, factory) = probe_setup(2);
    let report = bias_probe(&graphs, &names, &["steroid"], "steroid", &synth::logp_surrogate, &factory, 2).unwrap();
    let (a, b) = (report.in_domain.median_total_var, report.probe.median_total_var);
    assert!((a - b).abs() <= 0.2 * a.max(b), "{a} vs {b}");
    let json = serde_json::to_string(&report).unwrap();
    assert!(json.contains("median_total_var"));
}
