//! Central-difference checks of reverse-mode gradients, for every tape
//! primitive and for the end-to-end models.

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::bayes::nll_on_tape;
use crate::error::Result;
use crate::graphconv::{GraphConvRegressor, ModelConfig};
use crate::model::{NoDropout, Regressor};
use crate::rng::{self, Rng};
use crate::semisup::{embedding_loss, init_embedding, SemiSupRegressor};
use crate::smiles::MolGraph;

pub const DEFAULT_STEP: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub n_params: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// `|a − n| / max(|a|, |n|, 1e-6)`, the largest over coordinates.
pub fn check_store(
    name: &str,
    store: &ParamStore,
    loss: impl Fn(&mut Tape, &ParamStore) -> Result<Var>,
    step: f64,
    tolerance: f64,
) -> Result<CheckResult> {
    let mut tape = Tape::new();
    let l = loss(&mut tape, store)?;
    let analytic = tape.flat_param_grads(l, store)?;
    let theta = store.flatten();
    let eval = |flat: &[f64]| -> Result<f64> {
        let s = store.unflatten(flat)?;
        let mut tape = Tape::new();
        let l = loss(&mut tape, &s)?;
        Ok(tape.value(l).item())
    };
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let mut plus = theta.clone();
        plus[i] += step;
        let mut minus = theta.clone();
        minus[i] -= step;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * step);
        let err = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-6);
        worst = worst.max(err);
    }
    Ok(CheckResult {
        name: name.to_string(),
        n_params: theta.len(),
        max_rel_err: worst,
        passed: worst < tolerance,
    })
}

fn random_matrix(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

/// Entries with magnitude in `[0.2, 1.0)` and random sign, keeping clear of
/// the kinks of relu and clamp.
fn off_kink(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m: f64 = rng.gen_range(0.2..1.0);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

type Build = fn(&mut Tape, &[Var]) -> Result<Var>;

/// `Σ out ⊙ W` with a fixed random `W`, so that the gradient of every
/// output entry matters.
fn weighted(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let v = tape.value(out);
    let w = random_matrix(v.rows(), v.cols(), -1.0, 1.0, &mut rng::stream(seed, "weights"));
    let w = tape.leaf(w.reshaped(v.shape().to_vec())?)?;
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p)?)
}

fn primitive_cases(rng: &mut Rng) -> Vec<(&'static str, Vec<Tensor>, Build)> {
    let m = |r, c, rng: &mut Rng| random_matrix(r, c, -1.0, 1.0, rng);
    vec![
        ("matmul", vec![m(3, 4, rng), m(4, 2, rng)], |t, v| Ok(t.matmul(v[0], v[1])?)),
        ("matmul_t", vec![m(3, 4, rng), m(2, 4, rng)], |t, v| Ok(t.matmul_t(v[0], v[1])?)),
        ("add", vec![m(3, 2, rng), m(3, 2, rng)], |t, v| Ok(t.add(v[0], v[1])?)),
        ("sub", vec![m(3, 2, rng), m(3, 2, rng)], |t, v| Ok(t.sub(v[0], v[1])?)),
        ("mul", vec![m(3, 2, rng), m(3, 2, rng)], |t, v| Ok(t.mul(v[0], v[1])?)),
        ("add_row", vec![m(3, 4, rng), m(1, 4, rng)], |t, v| Ok(t.add_row(v[0], v[1])?)),
        ("mul_col", vec![m(3, 4, rng), m(3, 1, rng)], |t, v| Ok(t.mul_col(v[0], v[1])?)),
        ("scale", vec![m(2, 3, rng)], |t, v| Ok(t.scale(v[0], -1.7)?)),
        ("concat", vec![m(3, 2, rng), m(3, 1, rng), m(3, 3, rng)], |t, v| Ok(t.concat(v)?)),
        ("gather_rows", vec![m(3, 2, rng)], |t, v| {
            Ok(t.gather_rows(v[0], Arc::from(vec![2, 0, 2, 1]))?)
        }),
        ("scatter_add_rows", vec![m(4, 2, rng)], |t, v| {
            Ok(t.scatter_add_rows(v[0], Arc::from(vec![1, 0, 1, 2]), 3)?)
        }),
        ("scatter_sum_sorted", vec![m(4, 2, rng)], |t, v| {
            Ok(t.scatter_sum_sorted(v[0], Arc::from(vec![1, 0, 1, 2]), 3)?)
        }),
        ("slice_cols", vec![m(3, 5, rng)], |t, v| Ok(t.slice_cols(v[0], 1, 4)?)),
        ("pick_cols", vec![m(3, 4, rng)], |t, v| Ok(t.pick_cols(v[0], Arc::from(vec![3, 0, 3]))?)),
        ("reshape", vec![m(2, 6, rng)], |t, v| Ok(t.reshape(v[0], vec![4, 3])?)),
        ("sum", vec![m(3, 3, rng)], |t, v| {
            let s = t.sum(v[0])?;
            Ok(t.square(s)?)
        }),
        ("mean", vec![m(3, 3, rng)], |t, v| {
            let s = t.mean(v[0])?;
            Ok(t.square(s)?)
        }),
        ("sum_cols", vec![m(4, 3, rng)], |t, v| Ok(t.sum_cols(v[0])?)),
        ("sigmoid", vec![m(3, 3, rng)], |t, v| Ok(t.sigmoid(v[0])?)),
        ("relu", vec![], |t, v| Ok(t.relu(v[0])?)),
        ("exp", vec![m(3, 3, rng)], |t, v| Ok(t.exp(v[0])?)),
        ("log", vec![random_matrix(3, 3, 0.5, 2.0, rng)], |t, v| Ok(t.log(v[0])?)),
        ("softmax", vec![m(3, 4, rng)], |t, v| Ok(t.softmax(v[0])?)),
        ("log_softmax", vec![m(3, 4, rng)], |t, v| Ok(t.log_softmax(v[0])?)),
        ("square", vec![m(3, 3, rng)], |t, v| Ok(t.square(v[0])?)),
        ("clamp", vec![], |t, v| Ok(t.clamp(v[0], -0.6, 0.6)?)),
    ]
}

/// One check per tape primitive.
pub fn check_primitives(seed: u64, step: f64, tolerance: f64) -> Result<Vec<CheckResult>> {
    let mut rng = rng::stream(seed, "gradcheck");
    let mut out = Vec::new();
    for (k, (name, mut inputs, build)) in primitive_cases(&mut rng).into_iter().enumerate() {
        if inputs.is_empty() {
            // relu and clamp: keep entries away from 0 and from ±0.6
            let mut x = off_kink(4, 3, &mut rng);
            for v in x.data_mut() {
                if (v.abs() - 0.6).abs() < 0.05 {
                    *v *= 0.8;
                }
            }
            inputs.push(x);
        }
        let mut store = ParamStore::new("gradcheck");
        for (i, t) in inputs.into_iter().enumerate() {
            store.insert(format!("x{i}"), t)?;
        }
        let weight_seed = rng::derive_seed(seed, "case", k as u64);
        out.push(check_store(
            name,
            &store,
            |tape, s| {
                let vars = (0..s.num_slots()).map(|i| tape.param(s, i)).collect::<Result<Vec<_>, _>>()?;
                let y = build(tape, &vars)?;
                weighted(tape, y, weight_seed)
            },
            step,
            tolerance,
        )?);
    }
    Ok(out)
}

fn small_config() -> ModelConfig {
    ModelConfig {
        hidden: 5,
        fp_len: 4,
        head_width: 4,
        steps: 2,
        ..ModelConfig::default()
    }
}

pub const CHECK_MOLECULES: [&str; 3] = ["CC(=O)O", "c1ccncc1", "ClCCN"];

/// Heteroscedastic NLL of the end-to-end graph model, the semi-supervised
/// embedding objective, and the semi-supervised readout+head NLL, each on a
/// three-molecule batch.
pub fn check_models(seed: u64, step: f64, tolerance: f64) -> Result<Vec<CheckResult>> {
    let graphs: Vec<MolGraph> = CHECK_MOLECULES.iter().map(|s| MolGraph::from_smiles(s)).collect::<Result<_, _>>()?;
    let cfg = small_config();
    let targets = [0.3, -1.1, 0.8];
    let mut out = Vec::new();

    let model = GraphConvRegressor::new(cfg.clone(), Arc::new(graphs.clone()))?;
    let batch = model.batch(&[0, 1, 2])?;
    let store = model.init_params(seed)?;
    out.push(check_store(
        "graphconv end-to-end",
        &store,
        |tape, s| {
            let o = model.forward(tape, s, &batch, &mut NoDropout)?;
            nll_on_tape(tape, o, &targets)
        },
        step,
        tolerance,
    )?);

    let emb = init_embedding(graphs.len(), &cfg, seed)?;
    out.push(check_store(
        "semisup embedding objective",
        &emb,
        |tape, s| embedding_loss(tape, s, &cfg, &graphs, &[0, 1, 2]),
        step,
        tolerance,
    )?);

    let semi = SemiSupRegressor::new(&emb, &cfg, &graphs)?;
    let batch = semi.batch(&[0, 1, 2])?;
    let head = semi.init_params(seed)?;
    out.push(check_store(
        "semisup readout and head",
        &head,
        |tape, s| {
            let o = semi.forward(tape, s, &batch, &mut NoDropout)?;
            nll_on_tape(tape, o, &targets)
        },
        step,
        tolerance,
    )?);
    Ok(out)
}
