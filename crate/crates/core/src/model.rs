//! The interface shared by every regressor (graph convolution, the
//! semi-supervised readout and a plain MLP), plus dropout masking and the
//! two-headed MLP that produces mean and log-variance.

use rand::Rng as _;

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::Result;
use crate::rng::Rng;

/// Where a dropout mask is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSite {
    /// Message-passing hidden state at step `t` (1-based).
    Hidden(usize),
    Fingerprint,
    /// Output of head layer `i` (0-based).
    Head(usize),
}

/// Supplies multiplicative unit masks during a forward pass.
pub trait MaskSampler {
    /// `None` leaves the site untouched.
    fn mask(&mut self, site: MaskSite, rows: usize, cols: usize) -> Option<Tensor>;
}

pub struct NoDropout;

impl MaskSampler for NoDropout {
    fn mask(&mut self, _: MaskSite, _: usize, _: usize) -> Option<Tensor> {
        None
    }
}

/// Inverted dropout: units are zeroed with probability `p` and survivors
/// scaled by `1/(1-p)`.
pub struct BernoulliDropout<'a> {
    p: f64,
    rng: &'a mut Rng,
}

impl<'a> BernoulliDropout<'a> {
    pub fn new(p: f64, rng: &'a mut Rng) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout probability must lie in [0, 1)");
        Self { p, rng }
    }
}

impl MaskSampler for BernoulliDropout<'_> {
    fn mask(&mut self, _: MaskSite, rows: usize, cols: usize) -> Option<Tensor> {
        if self.p == 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - self.p);
        let data = (0..rows * cols)
            .map(|_| if self.rng.gen::<f64>() < self.p { 0.0 } else { keep })
            .collect();
        Some(Tensor::matrix(rows, cols, data).expect("sized"))
    }
}

/// Drops every unit at the listed sites.
pub struct DropAll(pub Vec<MaskSite>);

impl MaskSampler for DropAll {
    fn mask(&mut self, site: MaskSite, rows: usize, cols: usize) -> Option<Tensor> {
        self.0.contains(&site).then(|| Tensor::zeros(rows, cols))
    }
}

pub(crate) fn apply_mask(
    tape: &mut Tape,
    x: Var,
    site: MaskSite,
    masks: &mut dyn MaskSampler,
) -> Result<Var> {
    let (rows, cols) = (tape.value(x).rows(), tape.value(x).cols());
    match masks.mask(site, rows, cols) {
        Some(m) => {
            let m = tape.leaf(m)?;
            Ok(tape.mul(x, m)?)
        }
        None => Ok(x),
    }
}

/// Mean and log-variance columns, each `[n, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct HeadOutput {
    pub mean: Var,
    pub log_var: Var,
}

/// `uniform(-1/√fan_in, 1/√fan_in)` weights.
pub fn uniform_init(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let bound = 1.0 / (rows.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::matrix(rows, cols, data).expect("sized")
}

pub const HEAD_LAYERS: [(&str, &str); 3] = [
    ("head.l1.w", "head.l1.b"),
    ("head.l2.w", "head.l2.b"),
    ("head.out.w", "head.out.b"),
];

/// Adds the `input → width → width → 2` head to `store`. Biases start at 0.
pub fn init_head(store: &mut ParamStore, input: usize, width: usize, rng: &mut Rng) -> Result<()> {
    let dims = [(input, width), (width, width), (width, 2)];
    for ((w, b), (i, o)) in HEAD_LAYERS.iter().zip(dims) {
        store.insert(*w, uniform_init(i, o, rng))?;
        store.insert(*b, Tensor::zeros(1, o))?;
    }
    Ok(())
}

/// Two ReLU layers then a linear layer with two outputs `(μ, s = log σ²)`.
pub fn head_forward(
    tape: &mut Tape,
    store: &ParamStore,
    input: Var,
    masks: &mut dyn MaskSampler,
) -> Result<HeadOutput> {
    let mut x = input;
    for (layer, (w, b)) in HEAD_LAYERS.iter().enumerate() {
        let w = tape.param(store, store.require(w)?)?;
        let b = tape.param(store, store.require(b)?)?;
        let z = tape.matmul(x, w)?;
        x = tape.add_row(z, b)?;
        if layer < 2 {
            x = tape.relu(x)?;
            x = apply_mask(tape, x, MaskSite::Head(layer), masks)?;
        }
    }
    Ok(HeadOutput {
        mean: tape.slice_cols(x, 0, 1)?,
        log_var: tape.slice_cols(x, 1, 2)?,
    })
}

/// A model that maps examples (addressed by index) to `(μ, s)` pairs.
pub trait Regressor {
    type Batch;

    fn num_examples(&self) -> usize;

    fn batch(&self, indices: &[usize]) -> Result<Self::Batch>;

    fn init_params(&self, seed: u64) -> Result<ParamStore>;

    fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        batch: &Self::Batch,
        masks: &mut dyn MaskSampler,
    ) -> Result<HeadOutput>;

    /// `(μ, s)` per example without recording gradients.
    fn predict(
        &self,
        params: &ParamStore,
        batch: &Self::Batch,
        masks: &mut dyn MaskSampler,
    ) -> Result<Vec<(f64, f64)>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, params, batch, masks)?;
        Ok(tape
            .value(out.mean)
            .data()
            .iter()
            .zip(tape.value(out.log_var).data())
            .map(|(m, s)| (*m, *s))
            .collect())
    }

    /// `n_samples` stochastic passes with fresh dropout masks; result is
    /// indexed `[sample][example]`.
    fn predict_mc(
        &self,
        params: &ParamStore,
        batch: &Self::Batch,
        p: f64,
        n_samples: usize,
        rng: &mut Rng,
    ) -> Result<Vec<Vec<(f64, f64)>>> {
        (0..n_samples)
            .map(|_| self.predict(params, batch, &mut BernoulliDropout::new(p, rng)))
            .collect()
    }
}

/// Small fully connected regressor on fixed feature vectors; used for
/// synthetic checks of the Bayesian machinery.
#[derive(Debug, Clone)]
pub struct MlpRegressor {
    inputs: Tensor,
    width: usize,
}

impl MlpRegressor {
    pub fn new(inputs: Tensor, width: usize) -> Self {
        Self { inputs, width }
    }
}

impl Regressor for MlpRegressor {
    type Batch = Tensor;

    fn num_examples(&self) -> usize {
        self.inputs.rows()
    }

    fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = indices.iter().map(|&i| self.inputs.row(i).to_vec()).collect();
        if rows.is_empty() {
            return Err(crate::Error::EmptyBatch);
        }
        Ok(Tensor::from_rows(&rows)?)
    }

    fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let mut rng = crate::rng::stream(seed, "init");
        let mut store = ParamStore::new("mlp-v1");
        init_head(&mut store, self.inputs.cols(), self.width, &mut rng)?;
        Ok(store)
    }

    fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        batch: &Tensor,
        masks: &mut dyn MaskSampler,
    ) -> Result<HeadOutput> {
        let x = tape.leaf(batch.clone())?;
        head_forward(tape, params, x, masks)
    }
}
