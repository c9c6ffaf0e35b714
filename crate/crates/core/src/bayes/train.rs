use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{nll_on_tape, PredictiveDistribution, DEFAULT_PRIOR_PRECISION};
use crate::autodiff::{AdamConfig, FlatOptimizer, Optimizer, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::model::{BernoulliDropout, MaskSampler, NoDropout, Regressor};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub prior_precision: f64,
    /// Dropout rate while training; 0 disables masking.
    pub dropout_p: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            optimizer: Optimizer::Adam(AdamConfig::default()),
            prior_precision: DEFAULT_PRIOR_PRECISION,
            dropout_p: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidConfig("dropout_p must lie in [0, 1)".into()));
        }
        if self.prior_precision < 0.0 {
            return Err(Error::InvalidConfig("prior_precision must be non-negative".into()));
        }
        Ok(())
    }
}

/// Minibatches of positions `0..n` for one epoch.
pub fn batch_schedule(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// `∇ log P(θ | batch)` with the likelihood scaled by `scale` (dataset size
/// over batch size) and a Gaussian prior of precision `lambda`. Returns the
/// unscaled batch NLL alongside.
#[allow(clippy::too_many_arguments)]
pub fn log_posterior_grad<R: Regressor>(
    model: &R,
    params: &ParamStore,
    batch: &R::Batch,
    targets: &[f64],
    scale: f64,
    lambda: f64,
    masks: &mut dyn MaskSampler,
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, params, batch, masks)?;
    let nll = nll_on_tape(&mut tape, out, targets)?;
    let value = tape.value(nll).item();
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let scaled = tape.scale(nll, scale)?;
    let mut grad = tape.flat_param_grads(scaled, params)?;
    for (g, t) in grad.iter_mut().zip(params.flatten()) {
        *g = -*g - lambda * t;
    }
    Ok((value, grad))
}

/// Point-estimate trainer minimising the negative log posterior.
#[derive(Debug, Clone)]
pub struct MapTrainer {
    pub params: ParamStore,
    optimizer: FlatOptimizer,
    lambda: f64,
    dropout_p: f64,
    dropout_rng: Rng,
}

impl MapTrainer {
    pub fn new(params: ParamStore, cfg: &TrainConfig) -> Self {
        let len = params.num_params();
        Self {
            params,
            optimizer: FlatOptimizer::new(cfg.optimizer, len),
            lambda: cfg.prior_precision,
            dropout_p: cfg.dropout_p,
            dropout_rng: rng::stream(cfg.seed, "dropout"),
        }
    }

    /// One update on a minibatch drawn from `dataset_size` examples.
    /// Returns the batch NLL before the update.
    pub fn step<R: Regressor>(
        &mut self,
        model: &R,
        batch: &R::Batch,
        targets: &[f64],
        dataset_size: usize,
    ) -> Result<f64> {
        let scale = dataset_size as f64 / targets.len() as f64;
        let (nll, grad_log_p) = if self.dropout_p > 0.0 {
            let mut masks = BernoulliDropout::new(self.dropout_p, &mut self.dropout_rng);
            log_posterior_grad(model, &self.params, batch, targets, scale, self.lambda, &mut masks)?
        } else {
            log_posterior_grad(model, &self.params, batch, targets, scale, self.lambda, &mut NoDropout)?
        };
        let descent: Vec<f64> = grad_log_p.iter().map(|g| -g).collect();
        let mut theta = self.params.flatten();
        self.optimizer.step(&mut theta, &descent);
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFiniteUpdate);
        }
        self.params.set_flat(&theta)?;
        Ok(nll)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamStore,
    /// Mean per-example NLL over each epoch.
    pub history: Vec<f64>,
}

/// Trains `params` on `examples` (model indices) with matching `targets`.
pub fn train_map<R: Regressor>(
    model: &R,
    params: ParamStore,
    examples: &[usize],
    targets: &[f64],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if examples.len() != targets.len() {
        return Err(Error::LengthMismatch(examples.len(), targets.len()));
    }
    let mut trainer = MapTrainer::new(params, cfg);
    let mut shuffle = rng::stream(cfg.seed, "shuffle");
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut total = 0.0;
        for positions in batch_schedule(examples.len(), cfg.batch_size, &mut shuffle) {
            let idx: Vec<usize> = positions.iter().map(|&p| examples[p]).collect();
            let y: Vec<f64> = positions.iter().map(|&p| targets[p]).collect();
            let batch = model.batch(&idx)?;
            total += trainer.step(model, &batch, &y, examples.len())?;
        }
        history.push(total / examples.len() as f64);
    }
    Ok(TrainOutcome {
        params: trainer.params,
        history,
    })
}

/// A single network whose dropout masks are resampled at prediction time.
#[derive(Debug, Clone)]
pub struct DropoutPosterior {
    pub params: ParamStore,
    pub p: f64,
    pub n_mc: usize,
}

impl DropoutPosterior {
    pub fn new(params: ParamStore, p: f64, n_mc: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidConfig("dropout p must lie in [0, 1)".into()));
        }
        if n_mc == 0 {
            return Err(Error::InvalidConfig("n_mc must be at least 1".into()));
        }
        Ok(Self { params, p, n_mc })
    }

    pub fn predict<R: Regressor>(
        &self,
        model: &R,
        batch: &R::Batch,
        seed: u64,
    ) -> Result<Vec<PredictiveDistribution>> {
        let mut rng = rng::stream(seed, "mc-dropout");
        let samples = model.predict_mc(&self.params, batch, self.p, self.n_mc, &mut rng)?;
        PredictiveDistribution::combine(&samples)
    }
}
