//! Adam ascent on the mean weighted bound, with the warm-up and
//! learning-rate schedule used for all experiments.

use kvae_autodiff::Tensor;
use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynparam::AlphaNet;
use crate::error::{CoreError, Result};
use crate::kvae::{episode_gradients, ElboNoise, ElboValues, KvaeModel, MaskedOptions, Sequence};
use crate::lgssm::ObservationMask;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub decay_rate: f64,
    pub decay_every: usize,
    /// Epochs during which the α network receives no gradient.
    pub warmup_epochs: usize,
    pub recon_weight: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Independent single-sample estimates averaged per episode.
    pub elbo_samples: usize,
    pub sample_predictive: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.007,
            decay_rate: 0.85,
            decay_every: 20,
            warmup_epochs: 5,
            recon_weight: 0.3,
            batch_size: 32,
            clip_norm: 10.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            elbo_samples: 1,
            sample_predictive: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.decay_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(CoreError::Config("lr, decay_rate and clip_norm must be positive".into()));
        }
        if self.decay_every == 0 || self.batch_size == 0 || self.elbo_samples == 0 {
            return Err(CoreError::Config("decay_every, batch_size and elbo_samples must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(CoreError::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Staircase decay: `lr · rate^floor(epoch / every)`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.lr * self.decay_rate.powi((epoch / self.decay_every) as i32)
    }
}

/// SplitMix64 finalizer folded over `parts`.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

/// First and second moments per trainable parameter, in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub step: u64,
    pub names: Vec<String>,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(model: &KvaeModel) -> Self {
        let trainable: Vec<_> = model.params.iter().filter(|p| p.trainable).collect();
        Adam {
            step: 0,
            names: trainable.iter().map(|p| p.name.clone()).collect(),
            m: trainable.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: trainable.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    /// One ascent step along `grads`, which must follow `self.names`.
    pub fn apply(&mut self, model: &mut KvaeModel, grads: &[Tensor], lr: f64, cfg: &TrainConfig) -> Result<()> {
        if grads.len() != self.names.len() {
            return Err(CoreError::Config(format!("{} gradients for {} parameters", grads.len(), self.names.len())));
        }
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        for (i, name) in self.names.iter().enumerate() {
            let value = model.params.value_mut(name)?;
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, (&g, x)) in grads[i].data().iter().zip(value.data_mut()).enumerate() {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
                *x += lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub seed: u64,
    /// Next epoch to run.
    pub epoch: usize,
    pub adam: Adam,
    pub skipped_steps: u64,
}

impl TrainState {
    pub fn new(model: &KvaeModel, seed: u64) -> Self {
        TrainState { seed, epoch: 0, adam: Adam::new(model), skipped_steps: 0 }
    }
}

/// Per-episode means over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub elbo: ElboValues,
    pub lr: f64,
    pub steps: usize,
    pub skipped_steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Mean bound over the episodes that evaluated.
    pub elbo: ElboValues,
    pub evaluated: usize,
    pub applied: bool,
}

fn add_values(acc: &mut ElboValues, v: &ElboValues) {
    acc.recon += v.recon;
    acc.lgssm_joint += v.lgssm_joint;
    acc.entropy_q += v.entropy_q;
    acc.neg_post += v.neg_post;
    acc.total += v.total;
    acc.weighted += v.weighted;
}

fn scale_values(v: &mut ElboValues, s: f64) {
    v.recon *= s;
    v.lgssm_joint *= s;
    v.entropy_q *= s;
    v.neg_post *= s;
    v.total *= s;
    v.weighted *= s;
}

type EpisodeResult = Result<(ElboValues, Vec<(String, Tensor)>)>;

fn episode(model: &KvaeModel, seq: &Sequence, mask: Option<&ObservationMask>, seed: u64, cfg: &TrainConfig) -> EpisodeResult {
    let opts = MaskedOptions { sample_predictive: cfg.sample_predictive };
    let (m, n) = (model.config.a_dim, model.config.z_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = ElboValues::default();
    let mut grads: Vec<(String, Tensor)> = Vec::new();
    for _ in 0..cfg.elbo_samples {
        let noise = ElboNoise::draw(&mut rng, seq.steps(), m, n);
        let (v, g) = episode_gradients(model, seq, mask, &noise, cfg.recon_weight, opts)?;
        add_values(&mut values, &v);
        if grads.is_empty() {
            grads = g;
        } else {
            for ((_, acc), (_, g)) in grads.iter_mut().zip(&g) {
                acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
            }
        }
    }
    if cfg.elbo_samples > 1 {
        let s = 1.0 / cfg.elbo_samples as f64;
        scale_values(&mut values, s);
        for (_, g) in &mut grads {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    Ok((values, grads))
}

/// One update from a batch. Episodes run in parallel; gradients are summed
/// in batch order so the result does not depend on the thread count.
pub fn training_step(
    model: &mut KvaeModel,
    state: &mut TrainState,
    batch: &[(&Sequence, Option<&ObservationMask>)],
    seeds: &[u64],
    lr: f64,
    warmup: bool,
    cfg: &TrainConfig,
) -> Result<StepOutcome> {
    let results: Vec<EpisodeResult> = batch
        .par_iter()
        .zip(seeds.par_iter())
        .enumerate()
        .map(|(i, ((seq, mask), &seed))| episode(model, seq, *mask, seed, cfg).map_err(|e| e.in_episode(i)))
        .collect();
    let names = &state.adam.names;
    let mut sum: Vec<Tensor> = state.adam.m.iter().map(|m| Tensor::zeros(m.shape())).collect();
    let mut values = ElboValues::default();
    let mut evaluated = 0;
    let mut failed = false;
    for r in results {
        match r {
            Ok((v, grads)) => {
                add_values(&mut values, &v);
                evaluated += 1;
                if grads.len() != names.len() {
                    return Err(CoreError::Config("gradient list does not match the optimizer".into()));
                }
                for ((acc, expected), (name, g)) in sum.iter_mut().zip(names).zip(grads) {
                    if &name != expected {
                        return Err(CoreError::Config(format!("gradient for {name:?} where {expected:?} was expected")));
                    }
                    acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
                }
            }
            Err(e) if e.is_numerical() => {
                warn!("step {}: {e}", state.adam.step);
                failed = true;
            }
            Err(e) => return Err(e),
        }
    }
    if evaluated > 0 {
        scale_values(&mut values, 1.0 / evaluated as f64);
    } else {
        scale_values(&mut values, f64::NAN);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut norm_sq = 0.0;
    for (name, g) in names.iter().zip(&mut sum) {
        if warmup && name.starts_with(AlphaNet::PREFIX) {
            g.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        g.data_mut().iter_mut().for_each(|x| *x *= scale);
        norm_sq += g.data().iter().map(|x| x * x).sum::<f64>();
    }
    let norm = norm_sq.sqrt();
    if failed || !norm.is_finite() {
        warn!("skipping step {} (gradient norm {norm})", state.adam.step);
        state.skipped_steps += 1;
        return Ok(StepOutcome { elbo: values, evaluated, applied: false });
    }
    if norm > cfg.clip_norm {
        let s = cfg.clip_norm / norm;
        sum.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|x| *x *= s));
    }
    state.adam.apply(model, &sum, lr, cfg)?;
    Ok(StepOutcome { elbo: values, evaluated, applied: true })
}

/// Runs `state.epoch` over a shuffled copy of the data and advances it.
/// `masks`, when given, holds one fixed mask per sequence.
pub fn train_epoch(
    model: &mut KvaeModel,
    state: &mut TrainState,
    data: &[Sequence],
    masks: Option<&[ObservationMask]>,
    cfg: &TrainConfig,
) -> Result<EpochMetrics> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(CoreError::Config("no training sequences".into()));
    }
    if masks.is_some_and(|m| m.len() != data.len()) {
        return Err(CoreError::Config("one mask per training sequence required".into()));
    }
    let epoch = state.epoch;
    let lr = cfg.learning_rate(epoch);
    let warmup = epoch < cfg.warmup_epochs;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(state.seed, &[epoch as u64, u64::MAX])));
    let mut totals = ElboValues::default();
    let mut count = 0usize;
    let mut steps = 0;
    for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let batch: Vec<(&Sequence, Option<&ObservationMask>)> =
            chunk.iter().map(|&i| (&data[i], masks.map(|m| &m[i]))).collect();
        let seeds: Vec<u64> =
            (0..chunk.len()).map(|j| derive_seed(state.seed, &[epoch as u64, b as u64, j as u64])).collect();
        let out = training_step(model, state, &batch, &seeds, lr, warmup, cfg)?;
        if out.evaluated > 0 {
            let mut v = out.elbo;
            scale_values(&mut v, out.evaluated as f64);
            add_values(&mut totals, &v);
            count += out.evaluated;
        }
        steps += 1;
    }
    scale_values(&mut totals, if count > 0 { 1.0 / count as f64 } else { f64::NAN });
    state.epoch += 1;
    Ok(EpochMetrics { epoch, elbo: totals, lr, steps, skipped_steps: state.skipped_steps })
}
