//! Exact inference in a linear Gaussian state space model with per-step
//! matrices and missing observations.
//!
//! States `z_t` and observations `a_t` are column vectors. The recursion runs
//! on a [`Tape`] so the same code serves training (tracked) and inference
//! (constants only). [`TimeVaryingParams`] wraps the tape API for plain
//! tensors.

use std::f64::consts::PI;

use kvae_autodiff::{Tape, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{CoreError, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `ι_t = true` iff `a_t` is observed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationMask(Vec<bool>);

impl ObservationMask {
    pub fn new(iota: Vec<bool>) -> Self {
        ObservationMask(iota)
    }

    pub fn all_observed(steps: usize) -> Self {
        ObservationMask(vec![true; steps])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iota(&self) -> &[bool] {
        &self.0
    }

    pub fn is_observed(&self, t: usize) -> bool {
        self.0[t]
    }

    pub fn observed(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&t| self.0[t]).collect()
    }

    pub fn missing(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&t| !self.0[t]).collect()
    }

    pub fn all(&self) -> bool {
        self.0.iter().all(|&b| b)
    }

    /// Length of the leading run of observed steps.
    pub fn observed_prefix(&self) -> usize {
        self.0.iter().take_while(|&&b| b).count()
    }
}

/// Isotropic noise scales on a tape, kept in log form.
#[derive(Clone, Copy)]
pub struct Noise<'t> {
    pub log_q: Var<'t>,
    pub log_r: Var<'t>,
    pub log_sigma0: Var<'t>,
}

impl<'t> Noise<'t> {
    pub fn constant(tape: &'t Tape, q: f64, r: f64, sigma0: f64) -> Result<Self> {
        Ok(Noise {
            log_q: tape.scalar(q.ln())?,
            log_r: tape.scalar(r.ln())?,
            log_sigma0: tape.scalar(sigma0.ln())?,
        })
    }

    fn tape(&self) -> &'t Tape {
        self.log_q.tape()
    }
}

/// `γ_t = (A_t, B_t, C_t)`; `b` is absent when there are no controls.
#[derive(Clone, Copy)]
pub struct StepParams<'t> {
    pub a: Var<'t>,
    pub b: Option<Var<'t>>,
    pub c: Var<'t>,
}

#[derive(Clone, Copy)]
pub struct Belief<'t> {
    pub mean: Var<'t>,
    pub cov: Var<'t>,
}

impl Belief<'_> {
    pub fn values(&self) -> (Tensor, Tensor) {
        (self.mean.value(), self.cov.value())
    }
}

pub struct FilterOutput<'t> {
    pub filtered: Vec<Belief<'t>>,
    pub predicted: Vec<Belief<'t>>,
    pub log_lik: Var<'t>,
}

fn scaled_eye<'t>(tape: &'t Tape, n: usize, log_scale: Var<'t>) -> Result<Var<'t>> {
    Ok(tape.constant(Tensor::eye(n))?.scale_by(&log_scale.exp()?)?)
}

/// `log N(x; μ, s·I)` for a `d x 1` residual `x - μ`.
pub fn iso_log_pdf<'t>(residual: Var<'t>, log_s: Var<'t>) -> Result<Var<'t>> {
    let d = residual.shape()[0] as f64;
    let quad = residual.square()?.sum()?.scale_by(&log_s.neg()?.exp()?)?;
    Ok(quad.add(&log_s.scale(d)?)?.scale(-0.5)?.offset(-0.5 * d * LN_2PI)?)
}

/// `z_1 ~ N(0, Σ)`.
pub fn initial_belief<'t>(noise: &Noise<'t>, n: usize) -> Result<Belief<'t>> {
    let tape = noise.tape();
    Ok(Belief { mean: tape.constant(Tensor::zeros(&[n, 1]))?, cov: scaled_eye(tape, n, noise.log_sigma0)? })
}

/// Time update from the previous filtered belief.
pub fn predict<'t>(prev: &Belief<'t>, g: &StepParams<'t>, u: Option<Var<'t>>, noise: &Noise<'t>) -> Result<Belief<'t>> {
    let n = g.a.shape()[0];
    let mut mean = g.a.matmul(&prev.mean)?;
    if let (Some(b), Some(u)) = (g.b, u) {
        mean = mean.add(&b.matmul(&u)?)?;
    }
    let cov = g
        .a
        .matmul(&prev.cov)?
        .matmul(&g.a.transpose()?)?
        .add(&scaled_eye(noise.tape(), n, noise.log_q)?)?
        .symmetrize()?;
    Ok(Belief { mean, cov })
}

/// Measurement update; also returns `log N(a; C m, C P Cᵀ + R)`.
pub fn update<'t>(pred: &Belief<'t>, g: &StepParams<'t>, a: Var<'t>, noise: &Noise<'t>) -> Result<(Belief<'t>, Var<'t>)> {
    let m = g.c.shape()[0];
    let pct = pred.cov.matmul(&g.c.transpose()?)?;
    let s = g.c.matmul(&pct)?.add(&scaled_eye(noise.tape(), m, noise.log_r)?)?.symmetrize()?;
    let s_inv = s.inverse_spd()?;
    let innovation = a.sub(&g.c.matmul(&pred.mean)?)?;
    let gain = pct.matmul(&s_inv)?;
    let mean = pred.mean.add(&gain.matmul(&innovation)?)?;
    let cov = pred.cov.sub(&gain.matmul(&pct.transpose()?)?)?.symmetrize()?;
    let quad = innovation.transpose()?.matmul(&s_inv)?.matmul(&innovation)?.reshape(&[])?;
    let ll = quad.add(&s.logdet_spd()?)?.scale(-0.5)?.offset(-0.5 * m as f64 * LN_2PI)?;
    Ok((Belief { mean, cov }, ll))
}

/// One predict/update step. `prev` is `None` at the first step; `a` is `None`
/// for a missing observation, in which case the filtered belief is the
/// prediction.
pub fn filter_step<'t>(
    t: usize,
    prev: Option<&Belief<'t>>,
    g: &StepParams<'t>,
    u: Option<Var<'t>>,
    a: Option<Var<'t>>,
    noise: &Noise<'t>,
) -> Result<(Belief<'t>, Belief<'t>, Option<Var<'t>>)> {
    let at_t = at_time(t);
    let pred = match prev {
        None => initial_belief(noise, g.a.shape()[0]).map_err(&at_t)?,
        Some(p) => predict(p, g, u, noise).map_err(&at_t)?,
    };
    match a {
        Some(a) => {
            let (filt, ll) = update(&pred, g, a, noise).map_err(&at_t)?;
            Ok((pred, filt, Some(ll)))
        }
        None => Ok((pred, pred, None)),
    }
}

pub(crate) fn at_time(t: usize) -> impl Fn(CoreError) -> CoreError {
    move |e| match e {
        CoreError::Autodiff(e) => CoreError::Autodiff(e.at_time(t)),
        other => other,
    }
}

fn control<'t>(u: &[Var<'t>], t: usize) -> Option<Var<'t>> {
    u.get(t).copied()
}

fn check_lengths(what: &str, got: usize, steps: usize) -> Result<()> {
    if got != steps {
        return Err(CoreError::Config(format!("{what} has length {got}, expected {steps}")));
    }
    Ok(())
}

/// Runs the filter over all steps. `u` is empty when there are no controls.
pub fn kalman_filter<'t>(
    a: &[Var<'t>],
    u: &[Var<'t>],
    params: &[StepParams<'t>],
    mask: &ObservationMask,
    noise: &Noise<'t>,
) -> Result<FilterOutput<'t>> {
    let steps = params.len();
    check_lengths("observation sequence", a.len(), steps)?;
    check_lengths("mask", mask.len(), steps)?;
    if !u.is_empty() {
        check_lengths("control sequence", u.len(), steps)?;
    }
    let mut filtered: Vec<Belief<'t>> = Vec::with_capacity(steps);
    let mut predicted = Vec::with_capacity(steps);
    let mut lls = Vec::new();
    for t in 0..steps {
        let obs = mask.is_observed(t).then_some(a[t]);
        let (pred, filt, ll) = filter_step(t, filtered.last(), &params[t], control(u, t), obs, noise)?;
        predicted.push(pred);
        filtered.push(filt);
        lls.extend(ll);
    }
    let log_lik = sum_scalars(noise.tape(), &lls)?;
    Ok(FilterOutput { filtered, predicted, log_lik })
}

/// Left-to-right sum; zero for an empty list.
pub fn sum_scalars<'t>(tape: &'t Tape, xs: &[Var<'t>]) -> Result<Var<'t>> {
    let mut iter = xs.iter();
    let Some(first) = iter.next() else {
        return Ok(tape.scalar(0.0)?);
    };
    let mut acc = *first;
    for x in iter {
        acc = acc.add(x)?;
    }
    Ok(acc)
}

/// Rauch-Tung-Striebel backward pass.
pub fn kalman_smooth<'t>(out: &FilterOutput<'t>, params: &[StepParams<'t>]) -> Result<Vec<Belief<'t>>> {
    let steps = out.filtered.len();
    let mut smoothed = vec![out.filtered[steps - 1]; steps];
    for t in (0..steps.saturating_sub(1)).rev() {
        let step = || -> Result<Belief<'t>> {
            let f = &out.filtered[t];
            let p = &out.predicted[t + 1];
            let next = &smoothed[t + 1];
            let gain = f.cov.matmul(&params[t + 1].a.transpose()?)?.matmul(&p.cov.inverse_spd()?)?;
            let mean = f.mean.add(&gain.matmul(&next.mean.sub(&p.mean)?)?)?;
            let cov = f
                .cov
                .add(&gain.matmul(&next.cov.sub(&p.cov)?)?.matmul(&gain.transpose()?)?)?
                .symmetrize()?;
            Ok(Belief { mean, cov })
        };
        smoothed[t] = step().map_err(at_time(t))?;
    }
    Ok(smoothed)
}

/// Forward-filter backward-sample with pinned standard-normal noise `eps`
/// (`T x n`). Returns the joint sample and `log p(z̃ | a)`.
pub fn posterior_joint_sample<'t>(
    out: &FilterOutput<'t>,
    params: &[StepParams<'t>],
    u: &[Var<'t>],
    noise: &Noise<'t>,
    eps: &Tensor,
) -> Result<(Vec<Var<'t>>, Var<'t>)> {
    let tape = noise.tape();
    let steps = out.filtered.len();
    let n = params[0].a.shape()[0];
    if eps.shape() != [steps, n] {
        return Err(CoreError::Config(format!("sampling noise has shape {:?}, expected [{steps}, {n}]", eps.shape())));
    }
    let inv_q = noise.log_q.neg()?.exp()?;
    let mut z: Vec<Option<Var<'t>>> = vec![None; steps];
    let mut terms = Vec::with_capacity(steps);
    for t in (0..steps).rev() {
        let step = |z_next: Option<Var<'t>>| -> Result<(Var<'t>, Var<'t>)> {
            let f = &out.filtered[t];
            let (mean, cov) = match z_next {
                None => (f.mean, f.cov),
                Some(zn) => {
                    // conditional of z_t given z_{t+1} in information form
                    let g = &params[t + 1];
                    let pf_inv = f.cov.inverse_spd()?;
                    let at = g.a.transpose()?;
                    let precision = pf_inv.add(&at.matmul(&g.a)?.scale_by(&inv_q)?)?.symmetrize()?;
                    let cov = precision.inverse_spd()?;
                    let mut target = zn;
                    if let (Some(b), Some(u)) = (g.b, control(u, t + 1)) {
                        target = target.sub(&b.matmul(&u)?)?;
                    }
                    let info = pf_inv.matmul(&f.mean)?.add(&at.matmul(&target)?.scale_by(&inv_q)?)?;
                    (cov.matmul(&info)?, cov)
                }
            };
            let chol = cov.cholesky()?;
            let e = Tensor::column(eps.row_slice(t).to_vec());
            let e_sq: f64 = e.data().iter().map(|v| v * v).sum();
            let sample = mean.add(&chol.matmul(&tape.constant(e)?)?)?;
            let log_det_half = chol.diag()?.log()?.sum()?;
            let term = log_det_half.neg()?.offset(-0.5 * (n as f64 * LN_2PI + e_sq))?;
            Ok((sample, term))
        };
        let next = if t + 1 < steps { z[t + 1] } else { None };
        let (sample, term) = step(next).map_err(at_time(t))?;
        z[t] = Some(sample);
        terms.push(term);
    }
    let z: Vec<Var<'t>> = z.into_iter().map(|v| v.expect("every step sampled")).collect();
    Ok((z, sum_scalars(tape, &terms)?))
}

/// `log p(z_1) + Σ log p(z_t | z_{t-1}) + Σ ι_t log p(a_t | z_t)`.
pub fn joint_log_density<'t>(
    a: &[Var<'t>],
    z: &[Var<'t>],
    u: &[Var<'t>],
    params: &[StepParams<'t>],
    mask: &ObservationMask,
    noise: &Noise<'t>,
) -> Result<Var<'t>> {
    let steps = params.len();
    check_lengths("state sequence", z.len(), steps)?;
    check_lengths("observation sequence", a.len(), steps)?;
    check_lengths("mask", mask.len(), steps)?;
    let mut terms = Vec::with_capacity(2 * steps);
    terms.push(iso_log_pdf(z[0], noise.log_sigma0)?);
    for t in 1..steps {
        let g = &params[t];
        let mut mean = g.a.matmul(&z[t - 1])?;
        if let (Some(b), Some(u)) = (g.b, control(u, t)) {
            mean = mean.add(&b.matmul(&u)?)?;
        }
        terms.push(iso_log_pdf(z[t].sub(&mean)?, noise.log_q)?);
    }
    for t in mask.observed() {
        terms.push(iso_log_pdf(a[t].sub(&params[t].c.matmul(&z[t])?)?, noise.log_r)?);
    }
    sum_scalars(noise.tape(), &terms)
}

fn normal_column(rng: &mut impl Rng, n: usize) -> Tensor {
    Tensor::column((0..n).map(|_| rng.sample(StandardNormal)).collect())
}

/// Draws `mean + chol(cov)·ε`, or returns `mean` when `sample` is false.
pub fn draw<'t>(belief: &Belief<'t>, rng: &mut impl Rng, sample: bool) -> Result<Var<'t>> {
    if !sample {
        return Ok(belief.mean);
    }
    let n = belief.mean.shape()[0];
    let e = belief.mean.tape().constant(normal_column(rng, n))?;
    Ok(belief.mean.add(&belief.cov.cholesky()?.matmul(&e)?)?)
}

/// Ancestral sampling. `hook(t, a_{t-1})` supplies `γ_t` (with `None` at the
/// first step) so the parameters may depend on what was generated so far.
/// With `sample = false` every draw is replaced by its mean.
pub fn lgssm_generate<'t, R: Rng>(
    tape: &'t Tape,
    steps: usize,
    u: &[Var<'t>],
    noise: &Noise<'t>,
    rng: &mut R,
    sample: bool,
    mut hook: impl FnMut(usize, Option<Var<'t>>) -> Result<StepParams<'t>>,
) -> Result<(Vec<Var<'t>>, Vec<Var<'t>>)> {
    let mut a_out: Vec<Var<'t>> = Vec::with_capacity(steps);
    let mut z_out: Vec<Var<'t>> = Vec::with_capacity(steps);
    for t in 0..steps {
        let g = hook(t, a_out.last().copied())?;
        let n = g.a.shape()[0];
        let m = g.c.shape()[0];
        let prior = match z_out.last() {
            None => initial_belief(noise, n)?,
            Some(z) => {
                let mut mean = g.a.matmul(z)?;
                if let (Some(b), Some(u)) = (g.b, control(u, t)) {
                    mean = mean.add(&b.matmul(&u)?)?;
                }
                Belief { mean, cov: scaled_eye(tape, n, noise.log_q)? }
            }
        };
        let z = draw(&prior, rng, sample)?;
        let emission = Belief { mean: g.c.matmul(&z)?, cov: scaled_eye(tape, m, noise.log_r)? };
        a_out.push(draw(&emission, rng, sample)?);
        z_out.push(z);
    }
    Ok((a_out, z_out))
}

/// Isotropic noise scales as plain numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseScales {
    pub q: f64,
    pub r: f64,
    pub sigma0: f64,
}

impl NoiseScales {
    pub fn on<'t>(&self, tape: &'t Tape) -> Result<Noise<'t>> {
        Noise::constant(tape, self.q, self.r, self.sigma0)
    }
}

/// Per-step matrices as plain tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeVaryingParams {
    pub a: Vec<Tensor>,
    pub b: Vec<Tensor>,
    pub c: Vec<Tensor>,
}

/// Beliefs and likelihood as plain tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefSeq {
    pub means: Vec<Tensor>,
    pub covs: Vec<Tensor>,
}

impl BeliefSeq {
    fn from_beliefs(bs: &[Belief<'_>]) -> Self {
        let (means, covs) = bs.iter().map(Belief::values).unzip();
        BeliefSeq { means, covs }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    pub filtered: BeliefSeq,
    pub predicted: BeliefSeq,
    pub smoothed: BeliefSeq,
    pub log_lik: f64,
}

impl TimeVaryingParams {
    /// The same `(A, B, C)` at every step.
    pub fn constant(steps: usize, a: Tensor, b: Option<Tensor>, c: Tensor) -> Self {
        TimeVaryingParams { a: vec![a; steps], b: b.map(|b| vec![b; steps]).unwrap_or_default(), c: vec![c; steps] }
    }

    pub fn steps(&self) -> usize {
        self.a.len()
    }

    pub fn on<'t>(&self, tape: &'t Tape) -> Result<Vec<StepParams<'t>>> {
        (0..self.steps())
            .map(|t| {
                Ok(StepParams {
                    a: tape.constant(self.a[t].clone())?,
                    b: match self.b.get(t) {
                        Some(b) => Some(tape.constant(b.clone())?),
                        None => None,
                    },
                    c: tape.constant(self.c[t].clone())?,
                })
            })
            .collect()
    }

    fn columns<'t>(tape: &'t Tape, rows: &Tensor) -> Result<Vec<Var<'t>>> {
        if rows.rank() != 2 {
            return Ok(Vec::new());
        }
        (0..rows.rows()).map(|t| Ok(tape.constant(Tensor::column(rows.row_slice(t).to_vec()))?)).collect()
    }

    /// Filters and smooths the `T x m` observations `a`. Pass an empty tensor
    /// list (`None`) for `u` when there are no controls.
    pub fn filter_smooth(&self, a: &Tensor, u: Option<&Tensor>, mask: &ObservationMask, noise: NoiseScales) -> Result<FilterResult> {
        let tape = Tape::new();
        let params = self.on(&tape)?;
        let noise = noise.on(&tape)?;
        let a = Self::columns(&tape, a)?;
        let u = match u {
            Some(u) => Self::columns(&tape, u)?,
            None => Vec::new(),
        };
        let out = kalman_filter(&a, &u, &params, mask, &noise)?;
        let smoothed = kalman_smooth(&out, &params)?;
        Ok(FilterResult {
            filtered: BeliefSeq::from_beliefs(&out.filtered),
            predicted: BeliefSeq::from_beliefs(&out.predicted),
            smoothed: BeliefSeq::from_beliefs(&smoothed),
            log_lik: out.log_lik.item(),
        })
    }

    /// Joint posterior sample `T x n` and its log-density.
    pub fn sample_posterior(
        &self,
        a: &Tensor,
        u: Option<&Tensor>,
        mask: &ObservationMask,
        noise: NoiseScales,
        rng: &mut impl Rng,
    ) -> Result<(Tensor, f64)> {
        let tape = Tape::new();
        let params = self.on(&tape)?;
        let noise = noise.on(&tape)?;
        let a = Self::columns(&tape, a)?;
        let u = match u {
            Some(u) => Self::columns(&tape, u)?,
            None => Vec::new(),
        };
        let out = kalman_filter(&a, &u, &params, mask, &noise)?;
        let n = self.a[0].rows();
        let eps = Tensor::new(&[self.steps(), n], (0..self.steps() * n).map(|_| rng.sample(StandardNormal)).collect())?;
        let (z, logp) = posterior_joint_sample(&out, &params, &u, &noise, &eps)?;
        let data = z.iter().flat_map(|v| v.value().into_data()).collect();
        Ok((Tensor::new(&[self.steps(), n], data)?, logp.item()))
    }

    pub fn joint_log_density(&self, a: &Tensor, z: &Tensor, u: Option<&Tensor>, mask: &ObservationMask, noise: NoiseScales) -> Result<f64> {
        let tape = Tape::new();
        let params = self.on(&tape)?;
        let noise = noise.on(&tape)?;
        let a = Self::columns(&tape, a)?;
        let z = Self::columns(&tape, z)?;
        let u = match u {
            Some(u) => Self::columns(&tape, u)?,
            None => Vec::new(),
        };
        Ok(joint_log_density(&a, &z, &u, &params, mask, &noise)?.item())
    }

    /// Ancestral samples `(a, z)` as `T x m` and `T x n` tensors.
    pub fn generate(&self, u: Option<&Tensor>, noise: NoiseScales, rng: &mut impl Rng) -> Result<(Tensor, Tensor)> {
        let tape = Tape::new();
        let params = self.on(&tape)?;
        let noise = noise.on(&tape)?;
        let u = match u {
            Some(u) => Self::columns(&tape, u)?,
            None => Vec::new(),
        };
        let (a, z) = lgssm_generate(&tape, self.steps(), &u, &noise, rng, true, |t, _| Ok(params[t]))?;
        let stack = |xs: &[Var<'_>]| -> Result<Tensor> {
            let d = xs[0].shape()[0];
            Ok(Tensor::new(&[xs.len(), d], xs.iter().flat_map(|v| v.value().into_data()).collect())?)
        };
        Ok((stack(&a)?, stack(&z)?))
    }
}

/// The learned global part of the dynamics: `K` base matrix sets, isotropic
/// noise scales and the start code `a_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LgssmGlobals {
    pub z_dim: usize,
    pub a_dim: usize,
    pub u_dim: usize,
    pub k: usize,
    pub init_noise: NoiseScales,
    /// Freezes `q`, `r` and `σ0` at their initial values.
    pub freeze_noise: bool,
    /// Standard deviation of the random `B` and `C` initialization.
    pub init_scale: f64,
}

/// Bound global parameters; base matrices are stored row-flattened, one row per mode.
#[derive(Clone, Copy)]
pub struct GlobalVars<'t> {
    pub a_base: Var<'t>,
    pub b_base: Option<Var<'t>>,
    pub c_base: Var<'t>,
    pub a0: Var<'t>,
    pub noise: Noise<'t>,
    pub z_dim: usize,
    pub a_dim: usize,
    pub u_dim: usize,
}

impl LgssmGlobals {
    pub const A: &'static str = "lgssm.A";
    pub const B: &'static str = "lgssm.B";
    pub const C: &'static str = "lgssm.C";
    pub const A0: &'static str = "lgssm.a0";
    pub const LOG_Q: &'static str = "lgssm.log_q";
    pub const LOG_R: &'static str = "lgssm.log_r";
    pub const LOG_SIGMA0: &'static str = "lgssm.log_sigma0";

    /// `A^(k) = I`, `B^(k)` and `C^(k)` small Gaussian, `a_0 = 0`.
    pub fn register(&self, store: &mut crate::params::ParamStore, rng: &mut impl Rng) -> Result<()> {
        let (n, m, u, k) = (self.z_dim, self.a_dim, self.u_dim, self.k);
        let eye = Tensor::eye(n);
        let a: Vec<f64> = (0..k).flat_map(|_| eye.data().to_vec()).collect();
        store.insert(Self::A, Tensor::matrix(k, n * n, a)?, true)?;
        let mut gauss = |len: usize| -> Vec<f64> {
            (0..len).map(|_| self.init_scale * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        if u > 0 {
            store.insert(Self::B, Tensor::matrix(k, n * u, gauss(k * n * u))?, true)?;
        }
        store.insert(Self::C, Tensor::matrix(k, m * n, gauss(k * m * n))?, true)?;
        store.insert(Self::A0, Tensor::zeros(&[1, m]), true)?;
        let learn = !self.freeze_noise;
        store.insert(Self::LOG_Q, Tensor::scalar(self.init_noise.q.ln()), learn)?;
        store.insert(Self::LOG_R, Tensor::scalar(self.init_noise.r.ln()), learn)?;
        store.insert(Self::LOG_SIGMA0, Tensor::scalar(self.init_noise.sigma0.ln()), learn)?;
        Ok(())
    }

    pub fn bind<'t>(&self, p: &crate::params::Bound<'t>) -> Result<GlobalVars<'t>> {
        Ok(GlobalVars {
            a_base: p.var(Self::A)?,
            b_base: if self.u_dim > 0 { Some(p.var(Self::B)?) } else { None },
            c_base: p.var(Self::C)?,
            a0: p.var(Self::A0)?,
            noise: Noise { log_q: p.var(Self::LOG_Q)?, log_r: p.var(Self::LOG_R)?, log_sigma0: p.var(Self::LOG_SIGMA0)? },
            z_dim: self.z_dim,
            a_dim: self.a_dim,
            u_dim: self.u_dim,
        })
    }

    /// Current noise scales stored in `store`.
    pub fn noise_scales(store: &crate::params::ParamStore) -> Result<NoiseScales> {
        Ok(NoiseScales {
            q: store.value(Self::LOG_Q)?.item().exp(),
            r: store.value(Self::LOG_R)?.item().exp(),
            sigma0: store.value(Self::LOG_SIGMA0)?.item().exp(),
        })
    }
}

/// `log N(x; μ, Σ)` for plain tensors, used by tests and diagnostics.
pub fn gaussian_log_pdf(x: &[f64], mean: &[f64], cov: &Tensor) -> Result<f64> {
    let d = x.len();
    let l = kvae_autodiff::kernels::cholesky(cov)?;
    let diff = Tensor::column(x.iter().zip(mean).map(|(a, b)| a - b).collect());
    let y = kvae_autodiff::kernels::tri_solve_lower(&l, &diff)?;
    let quad: f64 = y.data().iter().map(|v| v * v).sum();
    let logdet: f64 = (0..d).map(|i| l.get(i, i).ln()).sum::<f64>() * 2.0;
    Ok(-0.5 * (d as f64 * (2.0 * PI).ln() + logdet + quad))
}
