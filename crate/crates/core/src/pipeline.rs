//! Run configuration and the fit/predict pipeline shared by the command
//! line, the active-learning harness and the acceptance suite.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::activeharness::ActiveConfig;
use crate::autodiff::ParamStore;
use crate::bayes::{train_map, train_svgd, DropoutPosterior, PredictiveDistribution, SvgdConfig, SvgdPosterior, TrainConfig};
use crate::dataset::{Dataset, Split, SplitSpec};
use crate::error::{Error, Result};
use crate::evalmetrics::PredictionRecord;
use crate::graphconv::{GraphConvRegressor, ModelConfig};
use crate::model::{NoDropout, Regressor};
use crate::rng::derive_seed;
use crate::semisup::{train_embeddings, Embedding, EmbeddingConfig, SemiSupRegressor};
use crate::smiles::MolGraph;

pub const CONFIG_VERSION: u32 = 1;

/// Examples per forward pass at prediction time.
const PREDICT_CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Message passing trained end to end on the labels.
    Graphconv,
    /// Message passing pre-trained on structures, readout and head on labels.
    Semisup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceKind {
    Map,
    Dropout,
    Svgd,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "graphconv" => Ok(Self::Graphconv),
            "semisup" => Ok(Self::Semisup),
            other => Err(Error::InvalidConfig(format!("unknown model `{other}`"))),
        }
    }
}

impl std::str::FromStr for InferenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "map" => Ok(Self::Map),
            "dropout" => Ok(Self::Dropout),
            "svgd" => Ok(Self::Svgd),
            other => Err(Error::InvalidConfig(format!("unknown inference `{other}`"))),
        }
    }
}

/// Everything needed to reproduce a run. Serialized as TOML; the `seed`
/// fields inside sections are ignored because every stream is derived
/// from the top-level `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub model: ModelKind,
    pub inference: InferenceKind,
    /// Stochastic passes per prediction under dropout inference.
    pub mc_samples: usize,
    /// Include test structures (never their labels) in the embedding corpus.
    pub transductive: bool,
    pub smiles_column: String,
    pub target_column: String,
    pub split: SplitSpec,
    pub network: ModelConfig,
    pub train: TrainConfig,
    pub svgd: SvgdConfig,
    pub embedding: EmbeddingConfig,
    pub active: ActiveConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            model: ModelKind::Semisup,
            inference: InferenceKind::Svgd,
            mc_samples: 50,
            transductive: false,
            smiles_column: "smiles".into(),
            target_column: "target".into(),
            split: SplitSpec::default(),
            network: ModelConfig::default(),
            train: TrainConfig::default(),
            svgd: SvgdConfig::default(),
            embedding: EmbeddingConfig::default(),
            active: ActiveConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::InvalidConfig(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|_| Error::FileNotFound(path.to_path_buf()))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.network.validate()?;
        self.train.validate()?;
        self.active.validate()?;
        if self.mc_samples == 0 {
            return Err(Error::InvalidConfig("mc_samples must be positive".into()));
        }
        if self.svgd.particles == 0 {
            return Err(Error::InvalidConfig("svgd.particles must be positive".into()));
        }
        if self.inference == InferenceKind::Dropout && self.network.dropout_p == 0.0 {
            log::warn!("dropout inference with network.dropout_p = 0 yields zero epistemic variance");
        }
        Ok(())
    }

    /// Training settings for one fit with all randomness derived from `seed`.
    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            dropout_p: match self.inference {
                InferenceKind::Dropout => self.network.dropout_p,
                _ => 0.0,
            },
            seed: derive_seed(seed, "train", 0),
            ..self.train.clone()
        }
    }

    fn svgd_config(&self, seed: u64) -> SvgdConfig {
        SvgdConfig {
            seed: derive_seed(seed, "svgd", 0),
            ..self.svgd.clone()
        }
    }

    pub fn embedding_config(&self, seed: u64) -> EmbeddingConfig {
        EmbeddingConfig {
            seed: derive_seed(seed, "embed", 0),
            ..self.embedding.clone()
        }
    }
}

/// A trained approximate posterior over network parameters.
#[derive(Debug, Clone)]
pub enum Posterior {
    Map(ParamStore),
    Dropout(DropoutPosterior),
    Svgd(SvgdPosterior),
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub posterior: Posterior,
    /// Mean training NLL per epoch.
    pub history: Vec<f64>,
}

/// Fits the posterior selected by `cfg.inference` on `examples`, starting
/// from a fresh initialisation derived from `seed`.
pub fn fit_posterior<R: Regressor>(
    model: &R,
    examples: &[usize],
    targets: &[f64],
    cfg: &RunConfig,
    seed: u64,
) -> Result<FitOutcome> {
    match cfg.inference {
        InferenceKind::Map | InferenceKind::Dropout => {
            let init = model.init_params(derive_seed(seed, "init", 0))?;
            let out = train_map(model, init, examples, targets, &cfg.train_config(seed))?;
            let posterior = if cfg.inference == InferenceKind::Map {
                Posterior::Map(out.params)
            } else {
                Posterior::Dropout(DropoutPosterior::new(out.params, cfg.network.dropout_p, cfg.mc_samples)?)
            };
            Ok(FitOutcome {
                posterior,
                history: out.history,
            })
        }
        InferenceKind::Svgd => {
            let post = train_svgd(model, examples, targets, &cfg.svgd_config(seed))?;
            let history = post.history.clone();
            Ok(FitOutcome {
                posterior: Posterior::Svgd(post),
                history,
            })
        }
    }
}

/// Predictive distributions for `examples`, evaluated in chunks.
pub fn predict_posterior<R: Regressor>(
    model: &R,
    posterior: &Posterior,
    examples: &[usize],
    seed: u64,
) -> Result<Vec<PredictiveDistribution>> {
    let mut out = Vec::with_capacity(examples.len());
    for (c, chunk) in examples.chunks(PREDICT_CHUNK).enumerate() {
        let batch = model.batch(chunk)?;
        let part = match posterior {
            Posterior::Map(params) => model
                .predict(params, &batch, &mut NoDropout)?
                .iter()
                .map(|&s| PredictiveDistribution::from_samples(&[s]))
                .collect::<Result<Vec<_>>>()?,
            Posterior::Dropout(post) => post.predict(model, &batch, derive_seed(seed, "mc-dropout", c as u64))?,
            Posterior::Svgd(post) => post.predict(model, &batch)?,
        };
        out.extend(part);
    }
    Ok(out)
}

/// A concrete network over a fixed list of molecules.
#[derive(Debug, Clone)]
pub enum Network {
    Graphconv(GraphConvRegressor),
    Semisup(SemiSupRegressor),
}

impl Network {
    /// `embedding` is required for the semi-supervised model.
    pub fn build(cfg: &RunConfig, embedding: Option<&ParamStore>, graphs: Vec<MolGraph>) -> Result<Self> {
        match cfg.model {
            ModelKind::Graphconv => Ok(Self::Graphconv(GraphConvRegressor::new(cfg.network.clone(), Arc::new(graphs))?)),
            ModelKind::Semisup => {
                let emb = embedding.ok_or_else(|| Error::InvalidConfig("semisup model needs an embedding".into()))?;
                Ok(Self::Semisup(SemiSupRegressor::new(emb, &cfg.network, &graphs)?))
            }
        }
    }

    pub fn fit(&self, examples: &[usize], targets: &[f64], cfg: &RunConfig, seed: u64) -> Result<FitOutcome> {
        match self {
            Self::Graphconv(m) => fit_posterior(m, examples, targets, cfg, seed),
            Self::Semisup(m) => fit_posterior(m, examples, targets, cfg, seed),
        }
    }

    pub fn predict(&self, posterior: &Posterior, examples: &[usize], seed: u64) -> Result<Vec<PredictiveDistribution>> {
        match self {
            Self::Graphconv(m) => predict_posterior(m, posterior, examples, seed),
            Self::Semisup(m) => predict_posterior(m, posterior, examples, seed),
        }
    }
}

/// Structures used to pre-train the semi-supervised embedding: training
/// and validation molecules, plus test molecules when transductive, plus
/// any extra unlabeled corpus.
pub fn embedding_corpus(cfg: &RunConfig, dataset: &Dataset, split: &Split, extra: &[MolGraph]) -> Vec<MolGraph> {
    let mut idx: Vec<usize> = split.train.iter().chain(&split.validation).copied().collect();
    if cfg.transductive {
        idx.extend(&split.test);
    }
    idx.sort_unstable();
    idx.iter()
        .map(|&i| dataset.records[i].graph.clone())
        .chain(extra.iter().cloned())
        .collect()
}

/// A fitted model that can score arbitrary molecules.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: RunConfig,
    pub embedding: Option<ParamStore>,
    pub posterior: Posterior,
    pub history: Vec<f64>,
    pub embedding_history: Vec<f64>,
}

impl TrainedModel {
    /// Trains on `split.train` of `dataset`.
    pub fn fit(cfg: &RunConfig, dataset: &Dataset, split: &Split, extra_corpus: &[MolGraph]) -> Result<Self> {
        cfg.validate()?;
        let embedding: Option<Embedding> = match cfg.model {
            ModelKind::Graphconv => None,
            ModelKind::Semisup => {
                let corpus = embedding_corpus(cfg, dataset, split, extra_corpus);
                Some(train_embeddings(&corpus, &cfg.network, &cfg.embedding_config(cfg.seed))?)
            }
        };
        let graphs: Vec<MolGraph> = split.train.iter().map(|&i| dataset.records[i].graph.clone()).collect();
        let targets = dataset.targets_of(&split.train);
        let network = Network::build(cfg, embedding.as_ref().map(|e| &e.params), graphs)?;
        let examples: Vec<usize> = (0..split.train.len()).collect();
        let fit = network.fit(&examples, &targets, cfg, cfg.seed)?;
        Ok(Self {
            config: cfg.clone(),
            embedding_history: embedding.as_ref().map(|e| e.history.clone()).unwrap_or_default(),
            embedding: embedding.map(|e| e.params),
            posterior: fit.posterior,
            history: fit.history,
        })
    }

    pub fn predict(&self, graphs: &[MolGraph]) -> Result<Vec<PredictiveDistribution>> {
        if graphs.is_empty() {
            return Ok(Vec::new());
        }
        let network = Network::build(&self.config, self.embedding.as_ref(), graphs.to_vec())?;
        let examples: Vec<usize> = (0..graphs.len()).collect();
        network.predict(&self.posterior, &examples, self.config.seed)
    }

    /// Prediction records for `indices` of `dataset`, keyed by dataset index.
    pub fn predict_records(&self, dataset: &Dataset, indices: &[usize]) -> Result<Vec<PredictionRecord>> {
        let graphs: Vec<MolGraph> = indices.iter().map(|&i| dataset.records[i].graph.clone()).collect();
        let dists = self.predict(&graphs)?;
        Ok(indices
            .iter()
            .zip(&dists)
            .map(|(&i, d)| PredictionRecord::new(i, dataset.records[i].target, d))
            .collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.snapshot"), self.config.to_toml()?)?;
        let (kind, body) = match &self.posterior {
            Posterior::Map(p) => ("map", p.to_text()),
            Posterior::Dropout(d) => ("dropout", d.params.to_text()),
            Posterior::Svgd(s) => ("svgd", s.to_text()?),
        };
        let manifest = Manifest {
            version: CONFIG_VERSION,
            posterior: kind.into(),
            history: self.history.clone(),
            embedding_history: self.embedding_history.clone(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        fs::write(dir.join("posterior.txt"), body)?;
        if let Some(e) = &self.embedding {
            fs::write(dir.join("embedding.txt"), e.to_text())?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|_| Error::FileNotFound(path))
        };
        let config = RunConfig::from_toml(&read("config.snapshot")?)?;
        let manifest: Manifest = serde_json::from_str(&read("manifest.json")?)?;
        let body = read("posterior.txt")?;
        let posterior = match manifest.posterior.as_str() {
            "map" => Posterior::Map(ParamStore::from_text(&body)?),
            "dropout" => Posterior::Dropout(DropoutPosterior::new(
                ParamStore::from_text(&body)?,
                config.network.dropout_p,
                config.mc_samples,
            )?),
            "svgd" => Posterior::Svgd(SvgdPosterior::from_text(&body)?),
            other => return Err(Error::Format(format!("unknown posterior kind `{other}`"))),
        };
        let embedding = match config.model {
            ModelKind::Semisup => Some(ParamStore::from_text(&read("embedding.txt")?)?),
            ModelKind::Graphconv => None,
        };
        Ok(Self {
            config,
            embedding,
            posterior,
            history: manifest.history,
            embedding_history: manifest.embedding_history,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    posterior: String,
    history: Vec<f64>,
    embedding_history: Vec<f64>,
}
