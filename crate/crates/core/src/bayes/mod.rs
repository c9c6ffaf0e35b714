//! Heteroscedastic likelihood, MC-dropout and SVGD posteriors, and the
//! predictive distribution with its epistemic/aleatoric split.

mod svgd;
mod train;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::HeadOutput;

pub use svgd::{
    gaussian_oracle, median_bandwidth, stein_direction, svgd_predict, train_svgd, Bandwidth, GaussianOracleReport, SvgdConfig,
    SvgdPosterior, SvgdState,
};
pub use train::{
    batch_schedule, log_posterior_grad, train_map, DropoutPosterior, MapTrainer, TrainConfig,
    TrainOutcome,
};

/// Bound applied to the predicted log-variance before it enters any loss
/// or variance.
pub const LOG_VAR_CLAMP: f64 = 10.0;

pub const DEFAULT_PRIOR_PRECISION: f64 = 1e-2;

pub fn clamp_log_var(s: f64) -> f64 {
    s.clamp(-LOG_VAR_CLAMP, LOG_VAR_CLAMP)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub mean: f64,
    pub epistemic_var: f64,
    pub aleatoric_var: f64,
    pub total_var: f64,
}

impl PredictiveDistribution {
    /// Combines per-sample means and aleatoric variances: the epistemic part
    /// is the population variance of the means, the aleatoric part their
    /// average variance.
    pub fn from_moments(means: &[f64], variances: &[f64]) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::EmptyRecords);
        }
        if means.len() != variances.len() {
            return Err(Error::LengthMismatch(means.len(), variances.len()));
        }
        let n = means.len() as f64;
        // Shifted by the first sample so identical samples give exactly zero.
        let shift = means[0];
        let offset = means.iter().map(|m| m - shift).sum::<f64>() / n;
        let mean = shift + offset;
        let second = means.iter().map(|m| (m - shift).powi(2)).sum::<f64>() / n;
        let epistemic_var = (second - offset * offset).max(0.0);
        let base = variances[0];
        let aleatoric_var = base + variances.iter().map(|v| v - base).sum::<f64>() / n;
        let out = Self {
            mean,
            epistemic_var,
            aleatoric_var,
            total_var: epistemic_var + aleatoric_var,
        };
        if !(out.mean.is_finite() && out.total_var.is_finite()) {
            return Err(Error::DegenerateInput("non-finite predictive moments"));
        }
        Ok(out)
    }

    /// From `(μ, s = log σ²)` samples.
    pub fn from_samples(samples: &[(f64, f64)]) -> Result<Self> {
        let means: Vec<f64> = samples.iter().map(|p| p.0).collect();
        let vars: Vec<f64> = samples.iter().map(|p| clamp_log_var(p.1).exp()).collect();
        Self::from_moments(&means, &vars)
    }

    /// Per-example distributions from `[sample][example]` predictions.
    pub fn combine(samples: &[Vec<(f64, f64)>]) -> Result<Vec<Self>> {
        let first = samples.first().ok_or(Error::EmptyRecords)?;
        (0..first.len())
            .map(|i| {
                let column: Vec<(f64, f64)> = samples.iter().map(|s| s[i]).collect();
                Self::from_samples(&column)
            })
            .collect()
    }

    pub fn std(&self) -> f64 {
        self.total_var.sqrt()
    }
}

/// `Σ_i (y_i − μ_i)²/(2 e^{s_i}) + s_i/2 + (λ/2)‖θ‖²` with `s` clamped.
pub fn nlp_loss(predictions: &[(f64, f64)], targets: &[f64], theta: &[f64], lambda: f64) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::LengthMismatch(predictions.len(), targets.len()));
    }
    let data: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(&(mu, s), y)| {
            let s = clamp_log_var(s);
            (y - mu).powi(2) / (2.0 * s.exp()) + s / 2.0
        })
        .sum();
    let prior = 0.5 * lambda * theta.iter().map(|t| t * t).sum::<f64>();
    let loss = data + prior;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok(loss)
}

/// Data term of [`nlp_loss`] recorded on the tape.
pub fn nll_on_tape(tape: &mut Tape, out: HeadOutput, targets: &[f64]) -> Result<Var> {
    let y = tape.leaf(Tensor::column(targets.to_vec()))?;
    let s = tape.clamp(out.log_var, -LOG_VAR_CLAMP, LOG_VAR_CLAMP)?;
    let diff = tape.sub(out.mean, y)?;
    let sq = tape.square(diff)?;
    let neg_s = tape.scale(s, -1.0)?;
    let precision = tape.exp(neg_s)?;
    let weighted = tape.mul(sq, precision)?;
    let fit = tape.scale(weighted, 0.5)?;
    let half_s = tape.scale(s, 0.5)?;
    let terms = tape.add(fit, half_s)?;
    Ok(tape.sum(terms)?)
}
