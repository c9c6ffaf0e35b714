//! Unsupervised pre-training of the message-passing weights, followed by a
//! supervised readout and head over the frozen hidden states.
//!
//! Every corpus molecule `m` owns a vector `u_m`. Training maximises
//! `Σ_m Σ_v Σ_{t≥1} log softmax_n(h_v^t · u_n)[m]`, i.e. each hidden state
//! should identify the molecule it came from.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, FlatOptimizer, Optimizer, ParamStore, Tape, Tensor};
use crate::bayes::{train_map, TrainConfig, TrainOutcome};
use crate::error::{Error, Result};
use crate::graphconv::{
    self, init_message_passing, init_readout_head, message_pass, readout, GraphBatch, ModelConfig,
    ReadoutInput,
};
use crate::model::{
    apply_mask, head_forward, BernoulliDropout, HeadOutput, MaskSampler, MaskSite, NoDropout, Regressor,
};
use crate::rng::{self, Rng};
use crate::smiles::MolGraph;

pub const EMBEDDING_TAG: &str = "semisup-v1";
pub const MOLECULE_VECTORS: &str = "embed.u";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Corpus molecules per gradient step.
    pub batch_size: usize,
    /// Contrast molecules per corpus molecule in a step; `None` uses the
    /// full softmax over the corpus.
    pub negatives: Option<usize>,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 1e-3,
            batch_size: 16,
            negatives: None,
            seed: 0,
        }
    }
}

/// Trained message-passing weights plus one vector per corpus molecule.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub params: ParamStore,
    pub model: ModelConfig,
    /// Mean negative log-probability per term, per epoch.
    pub history: Vec<f64>,
    /// Full-softmax objective on the final parameters.
    pub objective: f64,
}

impl Embedding {
    pub fn molecule_vectors(&self) -> Result<&Tensor> {
        self.params
            .get(MOLECULE_VECTORS)
            .ok_or_else(|| Error::Format("embedding has no molecule vectors".into()))
    }
}

fn batch_of<'a>(corpus: &'a [MolGraph], indices: &[usize]) -> Result<GraphBatch> {
    let graphs: Vec<&'a MolGraph> = indices.iter().map(|&i| &corpus[i]).collect();
    GraphBatch::new(&graphs)
}

/// Sum over the batch of `log P(h_v^t | u_m)` for `t ∈ 1..=T`, with the
/// softmax taken over `candidates` (all corpus molecules when `None`).
fn batch_log_likelihood(
    tape: &mut Tape,
    params: &ParamStore,
    cfg: &ModelConfig,
    corpus: &[MolGraph],
    molecules: &[usize],
    candidates: Option<&[usize]>,
) -> Result<(crate::autodiff::Var, usize)> {
    let batch = batch_of(corpus, molecules)?;
    let states = message_pass(tape, params, cfg, &batch, &mut NoDropout)?;
    let u_all = tape.param(params, params.require(MOLECULE_VECTORS)?)?;
    let (u, column_of): (_, HashMap<usize, usize>) = match candidates {
        Some(c) => {
            let u = tape.gather_rows(u_all, Arc::from(c))?;
            (u, c.iter().enumerate().map(|(pos, &m)| (m, pos)).collect())
        }
        None => (u_all, HashMap::new()),
    };
    let targets: Arc<[usize]> = batch
        .atom_mol
        .iter()
        .map(|&local| {
            let m = molecules[local];
            if candidates.is_some() {
                column_of[&m]
            } else {
                m
            }
        })
        .collect();
    let mut total = None;
    for h in &states[1..] {
        let logits = tape.matmul_t(*h, u)?;
        let logp = tape.log_softmax(logits)?;
        let picked = tape.pick_cols(logp, targets.clone())?;
        let s = tape.sum(picked)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    let total = total.ok_or(Error::InvalidConfig("steps must be at least 1".into()))?;
    Ok((total, batch.n_atoms * cfg.steps))
}

/// Training loss on `molecules`: mean negative log-probability per term
/// under the full softmax.
pub fn embedding_loss(
    tape: &mut Tape,
    params: &ParamStore,
    cfg: &ModelConfig,
    corpus: &[MolGraph],
    molecules: &[usize],
) -> Result<crate::autodiff::Var> {
    let (ll, terms) = batch_log_likelihood(tape, params, cfg, corpus, molecules, None)?;
    Ok(tape.scale(ll, -1.0 / terms as f64)?)
}

/// Full-softmax objective `Σ_m Σ_v Σ_t log P(h_v^t | u_m)` over the corpus.
pub fn log_likelihood(corpus: &[MolGraph], params: &ParamStore, cfg: &ModelConfig) -> Result<f64> {
    let mut total = 0.0;
    let all: Vec<usize> = (0..corpus.len()).collect();
    for chunk in all.chunks(64) {
        let mut tape = Tape::new();
        let (ll, _) = batch_log_likelihood(&mut tape, params, cfg, corpus, chunk, None)?;
        total += tape.value(ll).item();
    }
    Ok(total)
}

/// `P(h_v^t | u_n)` for every state of `graph` (rows ordered by `t`, then
/// atom) against every corpus molecule `n`.
pub fn membership_probabilities(graph: &MolGraph, params: &ParamStore, cfg: &ModelConfig) -> Result<Tensor> {
    let u = params
        .get(MOLECULE_VECTORS)
        .ok_or_else(|| Error::Format("embedding has no molecule vectors".into()))?;
    let states = graphconv::hidden_states(graph, params, cfg)?;
    let mut rows = Vec::new();
    for h in &states[1..] {
        let mut tape = Tape::new();
        let hv = tape.leaf(h.clone())?;
        let uv = tape.leaf(u.clone())?;
        let logits = tape.matmul_t(hv, uv)?;
        let p = tape.softmax(logits)?;
        let p = tape.value(p);
        rows.extend((0..p.rows()).map(|r| p.row(r).to_vec()));
    }
    Ok(Tensor::from_rows(&rows)?)
}

fn sample_candidates(molecules: &[usize], corpus_len: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut set: BTreeSet<usize> = molecules.iter().copied().collect();
    let wanted = (set.len() + k * molecules.len()).min(corpus_len);
    while set.len() < wanted {
        set.insert(rng.gen_range(0..corpus_len));
    }
    set.into_iter().collect()
}

pub fn init_embedding(corpus_len: usize, cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    let mut init = rng::stream(seed, "init");
    let mut params = ParamStore::new(EMBEDDING_TAG);
    init_message_passing(&mut params, cfg, &mut init)?;
    params.insert(MOLECULE_VECTORS, crate::model::uniform_init(cfg.hidden, corpus_len, &mut init).transpose())?;
    Ok(params)
}

pub fn train_embeddings(corpus: &[MolGraph], model: &ModelConfig, cfg: &EmbeddingConfig) -> Result<Embedding> {
    if corpus.len() < 2 {
        return Err(Error::CorpusTooSmall(corpus.len()));
    }
    model.validate()?;
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    let mut params = init_embedding(corpus.len(), model, cfg.seed)?;
    let mut optimizer = FlatOptimizer::new(Optimizer::Adam(AdamConfig::with_lr(cfg.lr)), params.num_params());
    let mut shuffle = rng::stream(cfg.seed, "shuffle");
    let mut negatives = rng::stream(cfg.seed, "negatives");
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut shuffle);
        let (mut epoch_nll, mut epoch_terms) = (0.0, 0usize);
        for molecules in order.chunks(cfg.batch_size) {
            let candidates = cfg
                .negatives
                .map(|k| sample_candidates(molecules, corpus.len(), k, &mut negatives));
            let mut tape = Tape::new();
            let (ll, terms) =
                batch_log_likelihood(&mut tape, &params, model, corpus, molecules, candidates.as_deref())?;
            let value = tape.value(ll).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss);
            }
            epoch_nll -= value;
            epoch_terms += terms;
            let loss = tape.scale(ll, -1.0 / terms as f64)?;
            let grad = tape.flat_param_grads(loss, &params)?;
            let mut theta = params.flatten();
            optimizer.step(&mut theta, &grad);
            params.set_flat(&theta)?;
        }
        history.push(epoch_nll / epoch_terms as f64);
    }
    let objective = log_likelihood(corpus, &params, model)?;
    Ok(Embedding {
        params,
        model: model.clone(),
        history,
        objective,
    })
}

/// Distinct hidden-state rows of a molecule set at each readout step.
#[derive(Debug, Clone)]
struct StateTable {
    rows: Tensor,
    /// Per molecule, the table row of each atom.
    atom_rows: Vec<Vec<usize>>,
}

fn build_table(states: &[Tensor]) -> Result<StateTable> {
    let width = states.first().map_or(0, Tensor::cols);
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut data = Vec::new();
    let mut atom_rows = Vec::with_capacity(states.len());
    for mol in states {
        let mut rows = Vec::with_capacity(mol.rows());
        for r in 0..mol.rows() {
            let key: Vec<u64> = mol.row(r).iter().map(|v| v.to_bits()).collect();
            let next = index.len();
            let id = *index.entry(key).or_insert_with(|| {
                data.extend_from_slice(mol.row(r));
                next
            });
            rows.push(id);
        }
        atom_rows.push(rows);
    }
    Ok(StateTable {
        rows: Tensor::matrix(index.len(), width, data)?,
        atom_rows,
    })
}

/// Inputs for a readout over frozen states.
#[derive(Debug, Clone)]
pub struct SemiSupBatch {
    inputs: Vec<Tensor>,
    expand: Vec<Arc<[usize]>>,
    atom_mol: Arc<[usize]>,
    n_mols: usize,
}

/// Readout + head trained over hidden states from frozen message-passing
/// weights. Dropout applies to the fingerprint and head layers only.
#[derive(Debug, Clone)]
pub struct SemiSupRegressor {
    cfg: ModelConfig,
    tables: Arc<Vec<StateTable>>,
}

impl SemiSupRegressor {
    /// Runs the frozen message passing once over `graphs`.
    pub fn new(embedding: &ParamStore, cfg: &ModelConfig, graphs: &[MolGraph]) -> Result<Self> {
        cfg.validate()?;
        let steps: Vec<usize> = readout_steps(cfg).collect();
        let mut per_step: Vec<Vec<Tensor>> = vec![Vec::with_capacity(graphs.len()); steps.len()];
        for g in graphs {
            let states = graphconv::hidden_states(g, embedding, cfg)?;
            for (slot, &t) in steps.iter().enumerate() {
                per_step[slot].push(states[t].clone());
            }
        }
        let tables = per_step.iter().map(|s| build_table(s)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            tables: Arc::new(tables),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Number of distinct state rows per readout step.
    pub fn distinct_rows(&self) -> Vec<usize> {
        self.tables.iter().map(|t| t.rows.rows()).collect()
    }

    fn fingerprint(&self, tape: &mut Tape, params: &ParamStore, batch: &SemiSupBatch) -> Result<crate::autodiff::Var> {
        let inputs = batch
            .inputs
            .iter()
            .zip(&batch.expand)
            .map(|(rows, expand)| {
                Ok(ReadoutInput {
                    states: tape.leaf(rows.clone())?,
                    expand: Some(expand.clone()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        readout(tape, params, &self.cfg, &inputs, batch.atom_mol.clone(), batch.n_mols)
    }
}

fn readout_steps(cfg: &ModelConfig) -> std::ops::RangeInclusive<usize> {
    usize::from(!cfg.readout_initial)..=cfg.steps
}

impl Regressor for SemiSupRegressor {
    type Batch = SemiSupBatch;

    fn num_examples(&self) -> usize {
        self.tables.first().map_or(0, |t| t.atom_rows.len())
    }

    fn batch(&self, indices: &[usize]) -> Result<SemiSupBatch> {
        if indices.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut atom_mol = Vec::new();
        for (local, &m) in indices.iter().enumerate() {
            atom_mol.extend(std::iter::repeat(local).take(self.tables[0].atom_rows[m].len()));
        }
        let mut inputs = Vec::with_capacity(self.tables.len());
        let mut expand = Vec::with_capacity(self.tables.len());
        for table in self.tables.iter() {
            let mut local_of: HashMap<usize, usize> = HashMap::new();
            let mut used = Vec::new();
            let mut map = Vec::with_capacity(atom_mol.len());
            for &m in indices {
                for &row in &table.atom_rows[m] {
                    let next = local_of.len();
                    let id = *local_of.entry(row).or_insert_with(|| {
                        used.push(row);
                        next
                    });
                    map.push(id);
                }
            }
            let rows: Vec<Vec<f64>> = used.iter().map(|&r| table.rows.row(r).to_vec()).collect();
            inputs.push(if rows.is_empty() {
                Tensor::zeros(0, table.rows.cols())
            } else {
                Tensor::from_rows(&rows)?
            });
            expand.push(Arc::from(map));
        }
        Ok(SemiSupBatch {
            inputs,
            expand,
            atom_mol: atom_mol.into(),
            n_mols: indices.len(),
        })
    }

    fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let mut init = rng::stream(seed, "init");
        let mut params = ParamStore::new("semisup-head-v1");
        init_readout_head(&mut params, &self.cfg, &mut init)?;
        Ok(params)
    }

    fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        batch: &SemiSupBatch,
        masks: &mut dyn MaskSampler,
    ) -> Result<HeadOutput> {
        let fp = self.fingerprint(tape, params, batch)?;
        let fp = apply_mask(tape, fp, MaskSite::Fingerprint, masks)?;
        head_forward(tape, params, fp, masks)
    }

    /// The fingerprint carries no dropout upstream of its own mask, so it
    /// is computed once and only the masked head is resampled.
    fn predict_mc(
        &self,
        params: &ParamStore,
        batch: &SemiSupBatch,
        p: f64,
        n_samples: usize,
        rng: &mut Rng,
    ) -> Result<Vec<Vec<(f64, f64)>>> {
        let mut tape = Tape::new();
        let fp = self.fingerprint(&mut tape, params, batch)?;
        let fp = tape.value(fp).clone();
        (0..n_samples)
            .map(|_| {
                let mut tape = Tape::new();
                let mut masks = BernoulliDropout::new(p, rng);
                let x = tape.leaf(fp.clone())?;
                let x = apply_mask(&mut tape, x, MaskSite::Fingerprint, &mut masks)?;
                let out = head_forward(&mut tape, params, x, &mut masks)?;
                Ok(tape
                    .value(out.mean)
                    .data()
                    .iter()
                    .zip(tape.value(out.log_var).data())
                    .map(|(m, s)| (*m, *s))
                    .collect())
            })
            .collect()
    }
}

/// Supervised phase: trains readout and head only.
pub fn train_head(
    model: &SemiSupRegressor,
    params: ParamStore,
    examples: &[usize],
    targets: &[f64],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_map(model, params, examples, targets, cfg)
}

#[cfg(test)]
mod tests;
