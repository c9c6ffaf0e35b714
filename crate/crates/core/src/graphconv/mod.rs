//! Neural-fingerprint graph convolution.
//!
//! Each atom starts from its feature row. At step `t` it sums, over its
//! neighbours, the concatenation of the neighbour's previous hidden state
//! and the connecting bond's features, then applies a degree-specific
//! linear map and a sigmoid. Every hidden state (including the initial
//! features) is projected to fingerprint length, softmaxed, and summed over
//! atoms and steps. A two-headed MLP maps the fingerprint to `(μ, log σ²)`.

mod batch;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{
    apply_mask, head_forward, init_head, uniform_init, HeadOutput, MaskSampler, MaskSite,
    NoDropout, Regressor,
};
use crate::rng::{self, Rng};
use crate::smiles::{MolGraph, ATOM_FEATURES, BOND_FEATURES, MAX_DEGREE};

pub use batch::GraphBatch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Message-passing steps `T`.
    pub steps: usize,
    pub hidden: usize,
    pub fp_len: usize,
    pub head_width: usize,
    pub dropout_p: f64,
    /// Include the step-0 (raw feature) readout term.
    pub readout_initial: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            steps: 3,
            hidden: 32,
            fp_len: 64,
            head_width: 32,
            dropout_p: 0.2,
            readout_initial: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Widths used in the published experiments.
    pub fn paper_scale() -> Self {
        Self {
            hidden: 128,
            fp_len: 256,
            head_width: 128,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidConfig("dropout_p must lie in [0, 1)".into()));
        }
        if self.hidden == 0 || self.fp_len == 0 || self.head_width == 0 {
            return Err(Error::InvalidConfig("widths must be positive".into()));
        }
        Ok(())
    }

    /// Input width of `H[t][d]`.
    pub fn message_width(&self, t: usize) -> usize {
        if t == 1 {
            ATOM_FEATURES + BOND_FEATURES
        } else {
            self.hidden + BOND_FEATURES
        }
    }

    fn readout_steps(&self) -> std::ops::RangeInclusive<usize> {
        let first = usize::from(!self.readout_initial);
        first..=self.steps
    }
}

pub fn message_slot(t: usize, degree: usize) -> String {
    format!("mp.H{t}.d{degree}")
}

pub fn readout_slot(t: usize) -> String {
    format!("readout.W{t}")
}

/// Adds `H[t][d]` for `t ∈ 1..=T`, `d ∈ 1..=5`.
pub fn init_message_passing(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut Rng) -> Result<()> {
    for t in 1..=cfg.steps {
        for d in 1..=MAX_DEGREE {
            store.insert(message_slot(t, d), uniform_init(cfg.message_width(t), cfg.hidden, rng))?;
        }
    }
    Ok(())
}

/// Adds the readout matrices `W[t]` and the MLP head.
pub fn init_readout_head(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut Rng) -> Result<()> {
    for t in cfg.readout_steps() {
        let input = if t == 0 { ATOM_FEATURES } else { cfg.hidden };
        store.insert(readout_slot(t), uniform_init(input, cfg.fp_len, rng))?;
    }
    init_head(store, cfg.fp_len, cfg.head_width, rng)
}

pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = rng::stream(seed, "init");
    let mut store = ParamStore::new("graphconv-v1");
    init_message_passing(&mut store, cfg, &mut rng)?;
    init_readout_head(&mut store, cfg, &mut rng)?;
    Ok(store)
}

/// Hidden states `h[0..=T]`, each `[n_atoms, width]`.
///
/// Isolated atoms receive no messages; their state at every step is the
/// feature row, zero-padded or truncated to the hidden width.
pub fn message_pass(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    batch: &GraphBatch,
    masks: &mut dyn MaskSampler,
) -> Result<Vec<Var>> {
    let n = batch.n_atoms;
    let mut states = vec![tape.leaf(batch.atom_features.clone())?];
    let bond_sum = tape.leaf(batch.bond_sum.clone())?;
    let isolated = if batch.isolated.is_empty() {
        None
    } else {
        let mut padded = Tensor::zeros(n, cfg.hidden);
        for &v in batch.isolated.iter() {
            let w = ATOM_FEATURES.min(cfg.hidden);
            padded.row_mut(v)[..w].copy_from_slice(&batch.atom_features.row(v)[..w]);
        }
        Some(tape.leaf(padded)?)
    };
    for t in 1..=cfg.steps {
        let prev = *states.last().expect("h0");
        let from = tape.gather_rows(prev, batch.edge_src.clone())?;
        let summed = tape.scatter_sum_sorted(from, batch.edge_dst.clone(), n)?;
        let message = tape.concat(&[summed, bond_sum])?;
        let mut next = isolated;
        for d in 1..=MAX_DEGREE {
            let atoms = &batch.degree_groups[d - 1];
            if atoms.is_empty() {
                continue;
            }
            let h = tape.param(store, store.require(&message_slot(t, d))?)?;
            let rows = tape.gather_rows(message, atoms.clone())?;
            let z = tape.matmul(rows, h)?;
            let act = tape.sigmoid(z)?;
            let placed = tape.scatter_add_rows(act, atoms.clone(), n)?;
            next = Some(match next {
                Some(acc) => tape.add(acc, placed)?,
                None => placed,
            });
        }
        let next = match next {
            Some(v) => v,
            None => tape.leaf(Tensor::zeros(n, cfg.hidden))?,
        };
        let next = apply_mask(tape, next, MaskSite::Hidden(t), masks)?;
        states.push(next);
    }
    Ok(states)
}

/// One hidden-state matrix entering the readout. When `expand` is set the
/// matrix holds distinct rows only and `expand[a]` gives atom `a`'s row.
pub struct ReadoutInput {
    pub states: Var,
    pub expand: Option<Arc<[usize]>>,
}

/// `Σ_{v,t} softmax(W_t h_v^t)` per molecule, `[n_mols, fp_len]`.
pub fn readout(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    inputs: &[ReadoutInput],
    atom_mol: Arc<[usize]>,
    n_mols: usize,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (t, input) in cfg.readout_steps().zip(inputs) {
        let w = tape.param(store, store.require(&readout_slot(t))?)?;
        let logits = tape.matmul(input.states, w)?;
        let mut sm = tape.softmax(logits)?;
        if let Some(expand) = &input.expand {
            sm = tape.gather_rows(sm, expand.clone())?;
        }
        total = Some(match total {
            Some(acc) => tape.add(acc, sm)?,
            None => sm,
        });
    }
    let total = total.ok_or_else(|| Error::InvalidConfig("empty readout".into()))?;
    Ok(tape.scatter_sum_sorted(total, atom_mol, n_mols)?)
}

/// Full supervised forward pass over a batch.
pub fn forward(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    batch: &GraphBatch,
    masks: &mut dyn MaskSampler,
) -> Result<HeadOutput> {
    let states = message_pass(tape, store, cfg, batch, masks)?;
    let inputs: Vec<ReadoutInput> = cfg
        .readout_steps()
        .map(|t| ReadoutInput {
            states: states[t],
            expand: None,
        })
        .collect();
    let fp = readout(tape, store, cfg, &inputs, batch.atom_mol.clone(), batch.n_mols)?;
    let fp = apply_mask(tape, fp, MaskSite::Fingerprint, masks)?;
    head_forward(tape, store, fp, masks)
}

/// Hidden states of one molecule, `h[t]` for `t = 0..=T`.
pub fn hidden_states(graph: &MolGraph, store: &ParamStore, cfg: &ModelConfig) -> Result<Vec<Tensor>> {
    let batch = GraphBatch::new(&[graph])?;
    let mut tape = Tape::new();
    let states = message_pass(&mut tape, store, cfg, &batch, &mut NoDropout)?;
    Ok(states.iter().map(|v| tape.value(*v).clone()).collect())
}

pub fn fingerprint(graph: &MolGraph, store: &ParamStore, cfg: &ModelConfig) -> Result<Vec<f64>> {
    let batch = GraphBatch::new(&[graph])?;
    let mut tape = Tape::new();
    let states = message_pass(&mut tape, store, cfg, &batch, &mut NoDropout)?;
    let inputs: Vec<ReadoutInput> = cfg
        .readout_steps()
        .map(|t| ReadoutInput {
            states: states[t],
            expand: None,
        })
        .collect();
    let fp = readout(&mut tape, store, cfg, &inputs, batch.atom_mol.clone(), 1)?;
    Ok(tape.value(fp).data().to_vec())
}

/// `(μ, s)` for one molecule.
pub fn predict(
    graph: &MolGraph,
    store: &ParamStore,
    cfg: &ModelConfig,
    masks: &mut dyn MaskSampler,
) -> Result<(f64, f64)> {
    let batch = GraphBatch::new(&[graph])?;
    let mut tape = Tape::new();
    let out = forward(&mut tape, store, cfg, &batch, masks)?;
    Ok((tape.value(out.mean).item(), tape.value(out.log_var).item()))
}

/// Fully supervised graph-convolution regressor over a fixed molecule set.
#[derive(Debug, Clone)]
pub struct GraphConvRegressor {
    cfg: ModelConfig,
    graphs: Arc<Vec<MolGraph>>,
}

impl GraphConvRegressor {
    pub fn new(cfg: ModelConfig, graphs: Arc<Vec<MolGraph>>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, graphs })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }
}

impl Regressor for GraphConvRegressor {
    type Batch = GraphBatch;

    fn num_examples(&self) -> usize {
        self.graphs.len()
    }

    fn batch(&self, indices: &[usize]) -> Result<GraphBatch> {
        let graphs: Vec<&MolGraph> = indices.iter().map(|&i| &self.graphs[i]).collect();
        GraphBatch::new(&graphs)
    }

    fn init_params(&self, seed: u64) -> Result<ParamStore> {
        init_params(&self.cfg, seed)
    }

    fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        batch: &GraphBatch,
        masks: &mut dyn MaskSampler,
    ) -> Result<HeadOutput> {
        forward(tape, params, &self.cfg, batch, masks)
    }
}

#[cfg(test)]
mod tests;
