use serde::{Deserialize, Serialize};

use super::train::{batch_schedule, log_posterior_grad};
use super::{PredictiveDistribution, DEFAULT_PRIOR_PRECISION};
use crate::autodiff::{AdamConfig, FlatOptimizer, Optimizer, ParamStore};
use crate::error::{Error, Result};
use crate::model::{NoDropout, Regressor};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bandwidth {
    /// `h = med² / log(N + 1)` over pairwise particle distances, recomputed
    /// every step.
    Median,
    Fixed(f64),
}

/// `None` when fewer than two particles exist or all coincide.
pub fn median_bandwidth(particles: &[Vec<f64>]) -> Option<f64> {
    let n = particles.len();
    let mut dists = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dists.push(squared_distance(&particles[i], &particles[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return None;
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let med = if dists.len() % 2 == 0 {
        0.5 * (dists[mid - 1] + dists[mid])
    } else {
        dists[mid]
    };
    let h = med * med / ((n + 1) as f64).ln();
    (h > 0.0 && h.is_finite()).then_some(h)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `φ(θ_i) = (1/N) Σ_j [k(θ_j, θ_i) ∇log p(θ_j) + ∇_{θ_j} k(θ_j, θ_i)]`
/// for the RBF kernel `k(a, b) = exp(−‖a − b‖²/h)`.
pub fn stein_direction(particles: &[Vec<f64>], grads: &[Vec<f64>], h: f64) -> Vec<Vec<f64>> {
    let n = particles.len();
    let mut kernel = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            kernel[i * n + j] = (-squared_distance(&particles[i], &particles[j]) / h).exp();
        }
    }
    let inv_n = 1.0 / n as f64;
    (0..n)
        .map(|i| {
            let mut phi = vec![0.0; particles[i].len()];
            for j in 0..n {
                let k = kernel[i * n + j];
                let repulse = 2.0 / h * k;
                for (d, p) in phi.iter_mut().enumerate() {
                    *p += k * grads[j][d] + repulse * (particles[i][d] - particles[j][d]);
                }
            }
            phi.iter_mut().for_each(|p| *p *= inv_n);
            phi
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SvgdState {
    pub particles: Vec<Vec<f64>>,
    optimizers: Vec<FlatOptimizer>,
    pub bandwidth: Bandwidth,
    /// Bandwidth used by the most recent step.
    pub last_h: Option<f64>,
}

impl SvgdState {
    pub fn new(particles: Vec<Vec<f64>>, optimizer: Optimizer, bandwidth: Bandwidth) -> Result<Self> {
        let len = particles.first().ok_or(Error::InvalidConfig("need at least one particle".into()))?.len();
        if let Some(bad) = particles.iter().find(|p| p.len() != len) {
            return Err(Error::LengthMismatch(len, bad.len()));
        }
        if let Bandwidth::Fixed(h) = bandwidth {
            if !(h > 0.0) {
                return Err(Error::InvalidConfig("bandwidth must be positive".into()));
            }
        }
        let optimizers = particles.iter().map(|_| FlatOptimizer::new(optimizer, len)).collect();
        Ok(Self {
            particles,
            optimizers,
            bandwidth,
            last_h: None,
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    fn resolve_bandwidth(&self) -> f64 {
        match self.bandwidth {
            Bandwidth::Fixed(h) => h,
            Bandwidth::Median => median_bandwidth(&self.particles).unwrap_or_else(|| {
                if self.particles.len() > 1 {
                    log::warn!("particles coincide; falling back to bandwidth 1");
                }
                1.0
            }),
        }
    }

    /// One transport step; `grad_log_p(i, θ_i)` supplies the score of
    /// particle `i`. Returns the bandwidth used.
    pub fn step_with(
        &mut self,
        mut grad_log_p: impl FnMut(usize, &[f64]) -> Result<Vec<f64>>,
    ) -> Result<f64> {
        let grads = self
            .particles
            .iter()
            .enumerate()
            .map(|(i, p)| grad_log_p(i, p))
            .collect::<Result<Vec<_>>>()?;
        let h = self.resolve_bandwidth();
        let phi = stein_direction(&self.particles, &grads, h);
        for ((theta, opt), direction) in self.particles.iter_mut().zip(&mut self.optimizers).zip(phi) {
            let descent: Vec<f64> = direction.iter().map(|d| -d).collect();
            opt.step(theta, &descent);
            if theta.iter().any(|t| !t.is_finite()) {
                return Err(Error::NonFiniteUpdate);
            }
        }
        self.last_h = Some(h);
        Ok(h)
    }

    /// One step on a model minibatch drawn from `dataset_size` examples.
    /// Returns the batch NLL averaged over particles.
    pub fn step<R: Regressor>(
        &mut self,
        model: &R,
        template: &ParamStore,
        batch: &R::Batch,
        targets: &[f64],
        dataset_size: usize,
        lambda: f64,
    ) -> Result<f64> {
        let scale = dataset_size as f64 / targets.len() as f64;
        let mut nll = 0.0;
        self.step_with(|_, theta| {
            let params = template.unflatten(theta)?;
            let (value, grad) = log_posterior_grad(model, &params, batch, targets, scale, lambda, &mut NoDropout)?;
            nll += value;
            Ok(grad)
        })?;
        Ok(nll / self.particles.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvgdConfig {
    pub particles: usize,
    pub optimizer: Optimizer,
    pub bandwidth: Bandwidth,
    pub prior_precision: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SvgdConfig {
    fn default() -> Self {
        Self {
            particles: 50,
            optimizer: Optimizer::Adam(AdamConfig::default()),
            bandwidth: Bandwidth::Median,
            prior_precision: DEFAULT_PRIOR_PRECISION,
            epochs: 40,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Trained particle ensemble plus the schema needed to rebuild each
/// particle's parameter store.
#[derive(Debug, Clone)]
pub struct SvgdPosterior {
    pub template: ParamStore,
    pub state: SvgdState,
    pub history: Vec<f64>,
}

const CHECKPOINT_HEADER: &str = "molbayes-svgd v1";
const PARTICLE_SEPARATOR: &str = "--- particle";

impl SvgdPosterior {
    pub fn particle(&self, i: usize) -> Result<ParamStore> {
        Ok(self.template.unflatten(&self.state.particles[i])?)
    }

    pub fn predict<R: Regressor>(&self, model: &R, batch: &R::Batch) -> Result<Vec<PredictiveDistribution>> {
        svgd_predict(model, self, batch)
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = format!("{CHECKPOINT_HEADER}\nparticles {}\n", self.state.len());
        for i in 0..self.state.len() {
            out.push_str(&format!("{PARTICLE_SEPARATOR} {i}\n"));
            out.push_str(&self.particle(i)?.to_text());
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CHECKPOINT_HEADER) {
            return Err(Error::Format("missing svgd checkpoint header".into()));
        }
        let count: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("particles "))
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| Error::Format("missing particle count".into()))?;
        let body: Vec<&str> = lines.collect();
        let mut stores = Vec::with_capacity(count);
        let mut current = String::new();
        for line in body {
            if line.starts_with(PARTICLE_SEPARATOR) {
                if !current.is_empty() {
                    stores.push(ParamStore::from_text(&current)?);
                    current.clear();
                }
                continue;
            }
            current.push_str(line);
            current.push('\n');
        }
        if !current.is_empty() {
            stores.push(ParamStore::from_text(&current)?);
        }
        if stores.len() != count || count == 0 {
            return Err(Error::Format(format!("expected {count} particles, found {}", stores.len())));
        }
        let template = stores[0].clone();
        let particles = stores.iter().map(ParamStore::flatten).collect();
        Ok(Self {
            template,
            state: SvgdState::new(particles, Optimizer::Sgd { lr: 0.0 }, Bandwidth::Median)?,
            history: Vec::new(),
        })
    }
}

/// Initialises `cfg.particles` independent networks and transports them
/// with minibatch SVGD.
pub fn train_svgd<R: Regressor>(
    model: &R,
    examples: &[usize],
    targets: &[f64],
    cfg: &SvgdConfig,
) -> Result<SvgdPosterior> {
    if cfg.particles == 0 {
        return Err(Error::InvalidConfig("particles must be at least 1".into()));
    }
    if examples.is_empty() || cfg.batch_size == 0 {
        return Err(Error::EmptyBatch);
    }
    if examples.len() != targets.len() {
        return Err(Error::LengthMismatch(examples.len(), targets.len()));
    }
    let stores = (0..cfg.particles)
        .map(|i| model.init_params(rng::derive_seed(cfg.seed, "particle", i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let template = stores[0].clone();
    let particles = stores.iter().map(ParamStore::flatten).collect();
    let mut state = SvgdState::new(particles, cfg.optimizer, cfg.bandwidth)?;
    let mut shuffle = rng::stream(cfg.seed, "shuffle");
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut total = 0.0;
        for positions in batch_schedule(examples.len(), cfg.batch_size, &mut shuffle) {
            let idx: Vec<usize> = positions.iter().map(|&p| examples[p]).collect();
            let y: Vec<f64> = positions.iter().map(|&p| targets[p]).collect();
            let batch = model.batch(&idx)?;
            total += state.step(model, &template, &batch, &y, examples.len(), cfg.prior_precision)?;
        }
        history.push(total / examples.len() as f64);
    }
    Ok(SvgdPosterior {
        template,
        state,
        history,
    })
}

/// Deterministic prediction from every particle, combined per example.
pub fn svgd_predict<R: Regressor>(
    model: &R,
    posterior: &SvgdPosterior,
    batch: &R::Batch,
) -> Result<Vec<PredictiveDistribution>> {
    let samples = (0..posterior.state.len())
        .map(|i| model.predict(&posterior.particle(i)?, batch, &mut NoDropout))
        .collect::<Result<Vec<_>>>()?;
    PredictiveDistribution::combine(&samples)
}

/// Outcome of transporting particles toward a standard normal target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianOracleReport {
    pub particles: usize,
    pub dim: usize,
    pub steps: usize,
    pub step_size: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub mean_tolerance: f64,
    pub variance_tolerance: f64,
    pub mean_ok: bool,
    pub variance_ok: bool,
    pub last_bandwidth: f64,
}

impl GaussianOracleReport {
    pub fn passed(&self) -> bool {
        self.mean_ok && self.variance_ok
    }
}

/// Plain SVGD (`θ ← θ + ε·φ`) with the median-heuristic RBF kernel on
/// `log p(x) = −|x|²/2`, starting from a box offset from the origin. The
/// target moments are mean 0 and unit variance per coordinate; the mean
/// must land within `0.05` and the variance within 10% of 1.
pub fn gaussian_oracle(particles: usize, dim: usize, steps: usize, step_size: f64, seed: u64) -> Result<GaussianOracleReport> {
    use rand::Rng as _;
    let mut r = rng::stream(seed, "particle");
    let init = (0..particles)
        .map(|_| (0..dim).map(|d| r.gen_range(-1.0..1.0) + if d % 2 == 0 { -3.0 } else { 2.0 }).collect())
        .collect();
    let mut state = SvgdState::new(init, Optimizer::Sgd { lr: step_size }, Bandwidth::Median)?;
    for _ in 0..steps {
        state.step_with(|_, x| Ok(x.iter().map(|v| -v).collect()))?;
    }
    let n = particles as f64;
    let mean: Vec<f64> = (0..dim).map(|d| state.particles.iter().map(|p| p[d]).sum::<f64>() / n).collect();
    let variance: Vec<f64> = (0..dim)
        .map(|d| state.particles.iter().map(|p| (p[d] - mean[d]).powi(2)).sum::<f64>() / n)
        .collect();
    let (mean_tolerance, variance_tolerance) = (0.05, 0.1);
    Ok(GaussianOracleReport {
        particles,
        dim,
        steps,
        step_size,
        mean_ok: mean.iter().all(|m| m.abs() < mean_tolerance),
        variance_ok: variance.iter().all(|v| (v - 1.0).abs() <= variance_tolerance),
        mean,
        variance,
        mean_tolerance,
        variance_tolerance,
        last_bandwidth: state.last_h.unwrap_or(1.0),
    })
}
