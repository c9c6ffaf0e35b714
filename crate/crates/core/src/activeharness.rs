//! Simulated active learning over a fully labeled dataset, scaffold-biased
//! initial pools, and the out-of-domain uncertainty probe.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bayes::PredictiveDistribution;
use crate::dataset::scaffold_groups;
use crate::error::{Error, Result};
use crate::evalmetrics::{median, r2, rmse, PredictionRecord};
use crate::model::Regressor;
use crate::pipeline::{fit_posterior, predict_posterior, Network, RunConfig};
use crate::rng::{self, derive_seed};
use crate::semisup::train_embeddings;
use crate::smiles::MolGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActiveConfig {
    /// Initial labeled pool as a fraction of the training universe.
    pub init_frac: f64,
    /// Acquisition batch as a fraction of the training universe.
    pub batch_frac: f64,
    pub iterations: usize,
    /// Seeded runs per strategy.
    pub repetitions: usize,
    /// Held-out test fraction of the whole dataset.
    pub test_frac: f64,
}

impl Default for ActiveConfig {
    fn default() -> Self {
        Self {
            init_frac: 0.25,
            batch_frac: 0.025,
            iterations: 10,
            repetitions: 20,
            test_frac: 0.2,
        }
    }
}

impl ActiveConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("init_frac", self.init_frac), ("batch_frac", self.batch_frac), ("test_frac", self.test_frac)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::FractionInvalid(format!("{name} = {f} must lie in (0, 1)")));
            }
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidConfig("repetitions must be positive".into()));
        }
        Ok(())
    }

    pub fn batch_size(&self, universe: usize) -> usize {
        ((self.batch_frac * universe as f64).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Largest epistemic variance first.
    Active,
    Random,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Active => "active",
            Strategy::Random => "random",
        }
    }
}

/// Labeled, unlabeled and test index sets over one dataset; each kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolState {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub test: Vec<usize>,
    pub iteration: usize,
}

impl PoolState {
    pub fn new(mut labeled: Vec<usize>, mut unlabeled: Vec<usize>, mut test: Vec<usize>) -> Result<Self> {
        labeled.sort_unstable();
        unlabeled.sort_unstable();
        test.sort_unstable();
        let pool = Self {
            labeled,
            unlabeled,
            test,
            iteration: 0,
        };
        if !pool.is_disjoint() {
            return Err(Error::InvalidConfig("pool index sets overlap".into()));
        }
        if pool.labeled.is_empty() || pool.test.is_empty() {
            return Err(Error::InvalidConfig("labeled and test pools must be non-empty".into()));
        }
        Ok(pool)
    }

    /// Held-out test set of `test_frac` of all `n` examples, and a random
    /// initial labeled pool of `init_frac` of the rest.
    pub fn random(n: usize, cfg: &ActiveConfig, seed: u64) -> Result<Self> {
        let (universe, test) = holdout(n, cfg.test_frac, seed);
        let mut order = universe.clone();
        order.shuffle(&mut rng::stream(seed, "initial-pool"));
        let k = initial_size(universe.len(), cfg.init_frac);
        let unlabeled = order.split_off(k);
        Self::new(order, unlabeled, test)
    }

    pub fn universe(&self) -> Vec<usize> {
        let mut u: Vec<usize> = self.labeled.iter().chain(&self.unlabeled).copied().collect();
        u.sort_unstable();
        u
    }

    pub fn is_disjoint(&self) -> bool {
        let mut all: Vec<usize> = self.labeled.iter().chain(&self.unlabeled).chain(&self.test).copied().collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        all.len() == n
    }

    /// Moves `selected` from unlabeled to labeled.
    pub fn acquire(&mut self, selected: &[usize]) -> Result<()> {
        if self.unlabeled.is_empty() {
            return Err(Error::PoolExhausted);
        }
        let chosen: BTreeSet<usize> = selected.iter().copied().collect();
        if chosen.len() != selected.len() || !chosen.iter().all(|i| self.unlabeled.binary_search(i).is_ok()) {
            return Err(Error::InvalidConfig("acquired indices must be distinct unlabeled examples".into()));
        }
        self.unlabeled.retain(|i| !chosen.contains(i));
        self.labeled.extend(chosen);
        self.labeled.sort_unstable();
        self.iteration += 1;
        Ok(())
    }
}

fn initial_size(universe: usize, frac: f64) -> usize {
    ((frac * universe as f64).ceil() as usize).clamp(1, universe)
}

/// `(universe, test)` with `test_frac` of `0..n` held out at random.
pub fn holdout(n: usize, test_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "split"));
    let n_test = ((test_frac * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let mut universe = order.split_off(n_test);
    order.sort_unstable();
    universe.sort_unstable();
    (universe, order)
}

/// Initial pool made of whole scaffold groups, largest first, until at
/// least `init_frac` of the training universe is labeled. A universe with
/// a single scaffold gets a random subset instead.
pub fn scaffold_biased_split(
    graphs: &[MolGraph],
    universe: &[usize],
    test: &[usize],
    init_frac: f64,
    seed: u64,
) -> Result<PoolState> {
    let want = initial_size(universe.len(), init_frac);
    let groups = scaffold_groups(graphs, universe, seed, "scaffold-pool");
    let mut labeled = Vec::new();
    if groups.len() <= 1 {
        log::warn!("single scaffold group; biased pool falls back to a random subset");
        let mut order = universe.to_vec();
        order.shuffle(&mut rng::stream(seed, "scaffold-pool"));
        labeled = order[..want].to_vec();
    } else {
        for (_, members) in groups {
            if labeled.len() >= want {
                break;
            }
            labeled.extend(members);
        }
    }
    let taken: BTreeSet<usize> = labeled.iter().copied().collect();
    let unlabeled = universe.iter().copied().filter(|i| !taken.contains(i)).collect();
    PoolState::new(labeled, unlabeled, test.to_vec())
}

/// Retrains a model from scratch and scores query examples.
pub trait ModelFactory {
    /// Fits on `labeled` (with `targets` in the same order) starting from
    /// an initialisation derived from `seed`, then predicts `queries`.
    fn fit_predict(
        &self,
        labeled: &[usize],
        targets: &[f64],
        queries: &[usize],
        seed: u64,
    ) -> Result<Vec<PredictiveDistribution>>;
}

/// Factory over any [`Regressor`] using the posterior chosen by the config.
pub struct RegressorFactory<R> {
    pub model: R,
    pub config: RunConfig,
}

impl<R: Regressor> ModelFactory for RegressorFactory<R> {
    fn fit_predict(
        &self,
        labeled: &[usize],
        targets: &[f64],
        queries: &[usize],
        seed: u64,
    ) -> Result<Vec<PredictiveDistribution>> {
        let fit = fit_posterior(&self.model, labeled, targets, &self.config, seed)?;
        predict_posterior(&self.model, &fit.posterior, queries, seed)
    }
}

/// Factory backed by a [`Network`] built over every molecule of a dataset.
pub struct NetworkFactory {
    pub network: Network,
    pub config: RunConfig,
}

impl NetworkFactory {
    /// For the semi-supervised model the embedding is trained once on the
    /// structures in `corpus` (indices into `graphs`).
    pub fn prepare(config: &RunConfig, graphs: &[MolGraph], corpus: &[usize], seed: u64) -> Result<Self> {
        let embedding = match config.model {
            crate::pipeline::ModelKind::Graphconv => None,
            crate::pipeline::ModelKind::Semisup => {
                let structures: Vec<MolGraph> = corpus.iter().map(|&i| graphs[i].clone()).collect();
                Some(train_embeddings(&structures, &config.network, &config.embedding_config(seed))?.params)
            }
        };
        Ok(Self {
            network: Network::build(config, embedding.as_ref(), graphs.to_vec())?,
            config: config.clone(),
        })
    }
}

impl ModelFactory for NetworkFactory {
    fn fit_predict(
        &self,
        labeled: &[usize],
        targets: &[f64],
        queries: &[usize],
        seed: u64,
    ) -> Result<Vec<PredictiveDistribution>> {
        let fit = self.network.fit(labeled, targets, &self.config, seed)?;
        self.network.predict(&fit.posterior, queries, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub labeled_count: usize,
    pub rmse: f64,
    pub r2: Option<f64>,
}

/// Scores seen by one acquisition, for auditing the selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acquisition {
    pub iteration: usize,
    /// `(index, epistemic variance)` for every unlabeled candidate.
    pub scores: Vec<(usize, f64)>,
    pub selected: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub strategy: Strategy,
    pub seed: u64,
    pub points: Vec<CurvePoint>,
    pub acquisitions: Vec<Acquisition>,
}

pub const LEARNING_CURVE_HEADER: &str = "iteration,labeled_count,rmse,r2,strategy,seed";

impl LearningCurve {
    /// CSV rows without the header.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            let r2 = p.r2.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                p.iteration,
                p.labeled_count,
                p.rmse,
                r2,
                self.strategy.name(),
                self.seed
            );
        }
        out
    }

    pub fn to_csv(curves: &[LearningCurve]) -> String {
        let mut out = format!("{LEARNING_CURVE_HEADER}\n");
        for c in curves {
            out.push_str(&c.csv_rows());
        }
        out
    }

    pub fn final_rmse(&self) -> f64 {
        self.points.last().map_or(f64::NAN, |p| p.rmse)
    }
}

/// Top `k` candidates by epistemic variance, ties by index ascending.
pub fn select_top_epistemic(scores: &[(usize, f64)], k: usize) -> Vec<usize> {
    let mut order = scores.to_vec();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut chosen: Vec<usize> = order.iter().take(k).map(|s| s.0).collect();
    chosen.sort_unstable();
    chosen
}

/// Runs `cfg.iterations` acquisition rounds from `pool` (or fewer if the
/// unlabeled pool runs out). The model is retrained from scratch on every
/// round and evaluated on the fixed test set.
pub fn run_active_learning(
    targets: &[f64],
    factory: &dyn ModelFactory,
    strategy: Strategy,
    cfg: &ActiveConfig,
    mut pool: PoolState,
    seed: u64,
) -> Result<LearningCurve> {
    if !pool.is_disjoint() {
        return Err(Error::InvalidConfig("pool index sets overlap".into()));
    }
    let batch = cfg.batch_size(pool.labeled.len() + pool.unlabeled.len());
    let mut curve = LearningCurve {
        strategy,
        seed,
        points: Vec::new(),
        acquisitions: Vec::new(),
    };
    let mut pick = rng::stream(seed, "acquisition");
    loop {
        let iteration = pool.iteration;
        let y: Vec<f64> = pool.labeled.iter().map(|&i| targets[i]).collect();
        let queries: Vec<usize> = pool.test.iter().chain(&pool.unlabeled).copied().collect();
        let dists = factory.fit_predict(&pool.labeled, &y, &queries, derive_seed(seed, "al-fit", iteration as u64))?;
        let (test_d, cand_d) = dists.split_at(pool.test.len());
        let records: Vec<PredictionRecord> = pool
            .test
            .iter()
            .zip(test_d)
            .map(|(&i, d)| PredictionRecord::new(i, targets[i], d))
            .collect();
        curve.points.push(CurvePoint {
            iteration,
            labeled_count: pool.labeled.len(),
            rmse: rmse(&records)?,
            r2: r2(&records).ok(),
        });
        if iteration >= cfg.iterations {
            break;
        }
        let k = batch.min(pool.unlabeled.len());
        let scores: Vec<(usize, f64)> = pool.unlabeled.iter().zip(cand_d).map(|(&i, d)| (i, d.epistemic_var)).collect();
        let selected = match strategy {
            Strategy::Active => select_top_epistemic(&scores, k),
            Strategy::Random => {
                let mut s: Vec<usize> = pool.unlabeled.choose_multiple(&mut pick, k).copied().collect();
                s.sort_unstable();
                s
            }
        };
        match pool.acquire(&selected) {
            Ok(()) => {}
            Err(Error::PoolExhausted) => {
                log::info!("unlabeled pool exhausted after iteration {iteration}");
                break;
            }
            Err(e) => return Err(e),
        }
        curve.acquisitions.push(Acquisition {
            iteration,
            scores,
            selected,
        });
        debug_assert!(pool.is_disjoint());
    }
    Ok(curve)
}

/// Random and active curves for `seeds`, starting each pair of runs from
/// the same initial pool. `biased` selects scaffold-biased initial pools.
/// Runs for different seeds execute on separate threads.
pub fn compare_strategies(
    config: &RunConfig,
    graphs: &[MolGraph],
    targets: &[f64],
    seeds: &[u64],
    biased: bool,
) -> Result<Vec<(LearningCurve, LearningCurve)>> {
    let run = |seed: u64| -> Result<(LearningCurve, LearningCurve)> {
        let cfg = &config.active;
        let (universe, test) = holdout(graphs.len(), cfg.test_frac, seed);
        let pool = if biased {
            scaffold_biased_split(graphs, &universe, &test, cfg.init_frac, seed)?
        } else {
            PoolState::random(graphs.len(), cfg, seed)?
        };
        let factory = NetworkFactory::prepare(config, graphs, &universe, seed)?;
        let active = run_active_learning(targets, &factory, Strategy::Active, cfg, pool.clone(), seed)?;
        let random = run_active_learning(targets, &factory, Strategy::Random, cfg, pool, seed)?;
        Ok((active, random))
    };
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(seeds.len().max(1));
    let mut results: Vec<Option<Result<(LearningCurve, LearningCurve)>>> = (0..seeds.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<_> = results.chunks_mut(seeds.len().div_ceil(threads).max(1)).collect();
        let mut start = 0;
        for chunk in chunks {
            let mine = &seeds[start..start + chunk.len()];
            start += chunk.len();
            let run = &run;
            scope.spawn(move || {
                for (slot, &seed) in chunk.iter_mut().zip(mine) {
                    *slot = Some(run(seed));
                }
            });
        }
    });
    results.into_iter().map(|r| r.expect("every seed ran")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSide {
    pub family: String,
    pub n: usize,
    pub rmse: f64,
    pub median_total_var: f64,
    pub median_epistemic_var: f64,
    pub total_var: Vec<f64>,
    pub epistemic_var: Vec<f64>,
}

impl ProbeSide {
    fn new(family: String, records: &[PredictionRecord]) -> Result<Self> {
        let total: Vec<f64> = records.iter().map(|r| r.total_var).collect();
        let epi: Vec<f64> = records.iter().map(|r| r.epistemic_var).collect();
        Ok(Self {
            family,
            n: records.len(),
            rmse: rmse(records)?,
            median_total_var: median(&total).ok_or(Error::EmptyRecords)?,
            median_epistemic_var: median(&epi).ok_or(Error::EmptyRecords)?,
            total_var: total,
            epistemic_var: epi,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasProbeReport {
    pub seed: u64,
    pub train_families: Vec<String>,
    pub in_domain: ProbeSide,
    pub probe: ProbeSide,
}

impl BiasProbeReport {
    pub fn probe_more_uncertain(&self) -> bool {
        self.probe.median_total_var > self.in_domain.median_total_var
    }
}

/// Trains on the members of `train_families` (80/20 split) and compares
/// predictive uncertainty on the held-out in-domain molecules with that on
/// members of `probe_family` not used for training. `families[i]` names
/// the family of `graphs[i]`; `factory` indexes the same list.
pub fn bias_probe(
    graphs: &[MolGraph],
    families: &[String],
    train_families: &[&str],
    probe_family: &str,
    target_fn: &dyn Fn(&MolGraph) -> f64,
    factory: &dyn ModelFactory,
    seed: u64,
) -> Result<BiasProbeReport> {
    if graphs.len() != families.len() {
        return Err(Error::LengthMismatch(graphs.len(), families.len()));
    }
    let members = |name: &str| -> Result<Vec<usize>> {
        let m: Vec<usize> = (0..graphs.len()).filter(|&i| families[i] == name).collect();
        if m.is_empty() {
            Err(Error::EmptyFamily(name.to_string()))
        } else {
            Ok(m)
        }
    };
    let mut in_domain = Vec::new();
    for f in train_families {
        in_domain.extend(members(f)?);
    }
    in_domain.sort_unstable();
    in_domain.dedup();
    let probe_all = members(probe_family)?;
    let targets: Vec<f64> = graphs.iter().map(target_fn).collect();

    in_domain.shuffle(&mut rng::stream(seed, "probe-split"));
    let n_test = ((0.2 * in_domain.len() as f64).round() as usize).clamp(1, in_domain.len().saturating_sub(1).max(1));
    let mut train = in_domain.split_off(n_test);
    let mut test = in_domain;
    train.sort_unstable();
    test.sort_unstable();
    let probe: Vec<usize> = probe_all.into_iter().filter(|i| train.binary_search(i).is_err()).collect();
    if probe.is_empty() {
        return Err(Error::EmptyFamily(probe_family.to_string()));
    }

    let y: Vec<f64> = train.iter().map(|&i| targets[i]).collect();
    let queries: Vec<usize> = test.iter().chain(&probe).copied().collect();
    let dists = factory.fit_predict(&train, &y, &queries, derive_seed(seed, "probe-fit", 0))?;
    let records: Vec<PredictionRecord> = queries
        .iter()
        .zip(&dists)
        .map(|(&i, d)| PredictionRecord::new(i, targets[i], d))
        .collect();
    let (test_r, probe_r) = records.split_at(test.len());
    Ok(BiasProbeReport {
        seed,
        train_families: train_families.iter().map(|s| s.to_string()).collect(),
        in_domain: ProbeSide::new(train_families.join("+"), test_r)?,
        probe: ProbeSide::new(probe_family.to_string(), probe_r)?,
    })
}

#[cfg(test)]
mod tests;
