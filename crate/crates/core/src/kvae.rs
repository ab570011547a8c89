//! The full model and its single-sample evidence lower bound.

use kvae_autodiff::{backward, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dynparam::{mix_params, mix_step, AlphaNet, AlphaVariant};
use crate::error::{CoreError, Result};
use crate::lgssm::{
    at_time, filter_step, joint_log_density, kalman_filter, posterior_joint_sample, sum_scalars, Belief, FilterOutput,
    GlobalVars, LgssmGlobals, NoiseScales, ObservationMask, StepParams,
};
use crate::params::{Bound, ParamStore};
use crate::vae::{Likelihood, Vae};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub a_dim: usize,
    pub z_dim: usize,
    pub u_dim: usize,
    pub k: usize,
    pub height: usize,
    pub width: usize,
    pub alpha: AlphaVariant,
    pub lstm_hidden: usize,
    pub alpha_mlp_hidden: Vec<usize>,
    pub fifo_window: usize,
    pub vae_hidden: Vec<usize>,
    pub likelihood: Likelihood,
    pub init_noise: NoiseScales,
    pub freeze_noise: bool,
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            a_dim: 2,
            z_dim: 4,
            u_dim: 0,
            k: 3,
            height: 32,
            width: 32,
            alpha: AlphaVariant::Lstm,
            lstm_hidden: 50,
            alpha_mlp_hidden: vec![32, 32],
            fifo_window: 5,
            vae_hidden: vec![128, 128],
            likelihood: Likelihood::Bernoulli,
            init_noise: NoiseScales { q: 0.08, r: 0.03, sigma0: 20.0 },
            freeze_noise: false,
            init_scale: 0.05,
        }
    }
}

impl ModelConfig {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("a_dim", self.a_dim),
            ("z_dim", self.z_dim),
            ("k", self.k),
            ("height", self.height),
            ("width", self.width),
            ("lstm_hidden", self.lstm_hidden),
            ("fifo_window", self.fifo_window),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(CoreError::Config(format!("{name} must be positive")));
            }
        }
        if self.vae_hidden.contains(&0) || self.alpha_mlp_hidden.contains(&0) {
            return Err(CoreError::Config("hidden layer widths must be positive".into()));
        }
        let n = self.init_noise;
        if !(n.q > 0.0 && n.r > 0.0 && n.sigma0 > 0.0) {
            return Err(CoreError::Config("initial noise scales must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KvaeModel {
    pub config: ModelConfig,
    pub vae: Vae,
    pub globals: LgssmGlobals,
    pub alpha: AlphaNet,
    pub params: ParamStore,
}

impl KvaeModel {
    /// Fresh model with weights drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::skeleton(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        model.vae.register(&mut model.params, &mut rng)?;
        model.globals.register(&mut model.params, &mut rng)?;
        model.alpha.register(&mut model.params, &mut rng)?;
        Ok(model)
    }

    /// Architecture without parameters, for loading stored weights.
    pub fn skeleton(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let vae = Vae::new(config.pixels(), config.a_dim, &config.vae_hidden, config.likelihood);
        let globals = LgssmGlobals {
            z_dim: config.z_dim,
            a_dim: config.a_dim,
            u_dim: config.u_dim,
            k: config.k,
            init_noise: config.init_noise,
            freeze_noise: config.freeze_noise,
            init_scale: config.init_scale,
        };
        let alpha = AlphaNet::new(
            config.alpha,
            config.a_dim,
            config.k,
            config.lstm_hidden,
            &config.alpha_mlp_hidden,
            config.fifo_window,
        );
        Ok(KvaeModel { config, vae, globals, alpha, params: ParamStore::new() })
    }

    /// Replaces the parameters, checking names and shapes against a fresh model.
    pub fn with_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let reference = Self::new(config, 0)?;
        if reference.params.len() != params.len() {
            return Err(CoreError::Checkpoint(format!(
                "expected {} parameters, found {}",
                reference.params.len(),
                params.len()
            )));
        }
        for p in reference.params.iter() {
            let got = params
                .get(&p.name)
                .ok_or_else(|| CoreError::Checkpoint(format!("missing parameter {:?}", p.name)))?;
            if got.value.shape() != p.value.shape() {
                return Err(CoreError::Checkpoint(format!(
                    "parameter {:?} has shape {:?}, expected {:?}",
                    p.name,
                    got.value.shape(),
                    p.value.shape()
                )));
            }
        }
        Ok(KvaeModel { params, ..reference })
    }

    pub fn alpha_param_names(&self) -> Vec<String> {
        self.alpha.param_names()
    }

    pub fn noise_scales(&self) -> Result<NoiseScales> {
        LgssmGlobals::noise_scales(&self.params)
    }
}

/// One video: `T x pixels` frames in `{0, 1}` and optional `T x u_dim` controls.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub frames: Tensor,
    pub controls: Option<Tensor>,
}

impl Sequence {
    pub fn new(frames: Tensor, controls: Option<Tensor>) -> Self {
        Sequence { frames, controls }
    }

    pub fn steps(&self) -> usize {
        self.frames.rows()
    }

    pub(crate) fn frame_rows(&self, rows: &[usize]) -> Result<Tensor> {
        let p = self.frames.cols();
        let data = rows.iter().flat_map(|&t| self.frames.row_slice(t).iter().copied()).collect();
        Ok(Tensor::matrix(rows.len(), p, data)?)
    }

    pub(crate) fn control_vars<'t>(&self, tape: &'t Tape) -> Result<Vec<Var<'t>>> {
        match &self.controls {
            Some(u) if u.cols() > 0 => (0..u.rows())
                .map(|t| Ok(tape.constant(Tensor::column(u.row_slice(t).to_vec()))?))
                .collect(),
            _ => Ok(Vec::new()),
        }
    }
}

/// Standard-normal noise pinned for one ELBO evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboNoise {
    /// `T x a_dim`, for the encoder samples.
    pub enc: Tensor,
    /// `T x z_dim`, for the joint state sample.
    pub state: Tensor,
    /// `T x z_dim` and `T x a_dim`, for sampled predictive draws at masked steps.
    pub pred_z: Tensor,
    pub pred_a: Tensor,
}

fn normal_tensor(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()).expect("positive sizes")
}

impl ElboNoise {
    pub fn draw(rng: &mut impl Rng, steps: usize, a_dim: usize, z_dim: usize) -> Self {
        ElboNoise {
            enc: normal_tensor(rng, steps, a_dim),
            state: normal_tensor(rng, steps, z_dim),
            pred_z: normal_tensor(rng, steps, z_dim),
            pred_a: normal_tensor(rng, steps, a_dim),
        }
    }
}

/// The four terms of the bound as tape values, plus the samples they were
/// evaluated at.
#[derive(Clone)]
pub struct ElboBreakdown<'t> {
    pub recon: Var<'t>,
    pub lgssm_joint: Var<'t>,
    pub entropy_q: Var<'t>,
    pub neg_post: Var<'t>,
    pub total: Var<'t>,
    pub weighted: Var<'t>,
    /// `a_dim x 1` encodings: samples where observed, predictions elsewhere.
    pub a: Vec<Var<'t>>,
    /// `z_dim x 1` joint state sample.
    pub z: Vec<Var<'t>>,
    pub params: Vec<StepParams<'t>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ElboValues {
    pub recon: f64,
    pub lgssm_joint: f64,
    pub entropy_q: f64,
    pub neg_post: f64,
    pub total: f64,
    pub weighted: f64,
}

impl ElboBreakdown<'_> {
    pub fn values(&self) -> ElboValues {
        ElboValues {
            recon: self.recon.item(),
            lgssm_joint: self.lgssm_joint.item(),
            entropy_q: self.entropy_q.item(),
            neg_post: self.neg_post.item(),
            total: self.total.item(),
            weighted: self.weighted.item(),
        }
    }
}

struct Terms<'t> {
    recon: Var<'t>,
    joint: Var<'t>,
    log_q: Var<'t>,
    log_post: Var<'t>,
}

fn assemble<'t>(
    terms: Terms<'t>,
    recon_weight: f64,
    a: Vec<Var<'t>>,
    z: Vec<Var<'t>>,
    params: Vec<StepParams<'t>>,
) -> Result<ElboBreakdown<'t>> {
    let Terms { recon, joint, log_q, log_post } = terms;
    let entropy_q = log_q.neg()?;
    let neg_post = log_post.neg()?;
    let sum = |first: Var<'t>| -> Result<Var<'t>> { Ok(first.add(&joint)?.add(&entropy_q)?.add(&neg_post)?) };
    Ok(ElboBreakdown {
        recon,
        lgssm_joint: joint,
        entropy_q,
        neg_post,
        total: sum(recon)?,
        weighted: sum(recon.scale(recon_weight)?)?,
        a,
        z,
        params,
    })
}

fn check_sequence(model: &KvaeModel, seq: &Sequence, noise: &ElboNoise) -> Result<()> {
    let cfg = &model.config;
    if seq.frames.rank() != 2 || seq.frames.cols() != cfg.pixels() {
        return Err(CoreError::Config(format!(
            "frames have shape {:?}, expected T x {}",
            seq.frames.shape(),
            cfg.pixels()
        )));
    }
    let steps = seq.steps();
    let u_cols = seq.controls.as_ref().map_or(0, |u| u.cols());
    if u_cols != cfg.u_dim || seq.controls.as_ref().is_some_and(|u| u.rows() != steps) {
        return Err(CoreError::Config(format!("controls do not match u_dim {}", cfg.u_dim)));
    }
    if noise.enc.shape() != [steps, cfg.a_dim] || noise.state.shape() != [steps, cfg.z_dim] {
        return Err(CoreError::Config("pinned noise does not match the sequence".into()));
    }
    Ok(())
}

fn row_to_col<'t>(row: Var<'t>) -> Result<Var<'t>> {
    let m = row.shape()[1];
    Ok(row.reshape(&[m, 1])?)
}

fn col_to_row<'t>(col: Var<'t>) -> Result<Var<'t>> {
    let m = col.shape()[0];
    Ok(col.reshape(&[1, m])?)
}

/// The bound for a fully observed sequence: encode, unroll the α path, mix,
/// filter, sample the joint state path, and sum the terms.
pub fn elbo_estimate<'t>(
    model: &KvaeModel,
    p: &Bound<'t>,
    seq: &Sequence,
    noise: &ElboNoise,
    recon_weight: f64,
) -> Result<ElboBreakdown<'t>> {
    check_sequence(model, seq, noise)?;
    let tape = p.tape;
    let steps = seq.steps();
    let g = model.globals.bind(p)?;
    let u = seq.control_vars(tape)?;
    let x = tape.constant(seq.frames.clone())?;
    let q = model.vae.encode(p, x)?;
    let (a_tilde, log_q) = model.vae.reparam(&q, &noise.enc)?;
    let rows: Vec<Var<'t>> = (0..steps).map(|t| a_tilde.row(t)).collect::<kvae_autodiff::Result<_>>()?;
    // columns before the α path, so every row's consumers are recorded in
    // the order the masked recursion produces
    let cols: Vec<Var<'t>> = rows.iter().map(|r| row_to_col(*r)).collect::<Result<_>>()?;
    let mut inputs = vec![g.a0];
    inputs.extend_from_slice(&rows[..steps - 1]);
    let path = model.alpha.alpha_path(p, &inputs)?;
    let params = mix_params(&path, &g)?;
    let all = ObservationMask::all_observed(steps);
    let out = kalman_filter(&cols, &u, &params, &all, &g.noise)?;
    let (z, log_post) = posterior_joint_sample(&out, &params, &u, &g.noise, &noise.state)?;
    let joint = joint_log_density(&cols, &z, &u, &params, &all, &g.noise)?;
    let recon = model.vae.decode_log_lik(p, a_tilde, x)?.sum()?;
    let terms = Terms { recon, joint, log_q: log_q.sum()?, log_post };
    assemble(terms, recon_weight, cols, z, params)
}

/// How a missing step's encoding is filled in.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Predictive<'a> {
    Mean,
    /// Standard-normal draws `T x z_dim` and `T x a_dim`.
    Noise(&'a Tensor, &'a Tensor),
}

/// Result of the interleaved α/filter recursion.
pub(crate) struct Recursion<'t> {
    /// `1 x a_dim` rows: encodings at observed steps, predictions elsewhere.
    pub a_rows: Vec<Var<'t>>,
    /// The same values as `a_dim x 1` columns, as fed to the filter.
    pub a_cols: Vec<Var<'t>>,
    pub alphas: Vec<Var<'t>>,
    pub params: Vec<StepParams<'t>>,
    pub out: FilterOutput<'t>,
}

/// Runs `α_t → γ_t → filter step` one step at a time, so a missing step's
/// predicted encoding can feed the next α.
pub(crate) fn recursive_filter<'t>(
    model: &KvaeModel,
    p: &Bound<'t>,
    g: &GlobalVars<'t>,
    observed: &[Option<Var<'t>>],
    u: &[Var<'t>],
    predictive: Predictive<'_>,
) -> Result<Recursion<'t>> {
    let tape = p.tape;
    let steps = observed.len();
    let mut state = model.alpha.initial_state(tape)?;
    let mut a_rows: Vec<Var<'t>> = Vec::with_capacity(steps);
    let mut a_cols = Vec::with_capacity(steps);
    let mut alphas = Vec::with_capacity(steps);
    let mut params = Vec::with_capacity(steps);
    let mut filtered: Vec<Belief<'t>> = Vec::with_capacity(steps);
    let mut predicted = Vec::with_capacity(steps);
    let mut lls = Vec::new();
    for t in 0..steps {
        let a_prev = if t == 0 { g.a0 } else { a_rows[t - 1] };
        let (alpha, next) = model.alpha.alpha_step(p, a_prev, state)?;
        state = next;
        let gamma = mix_step(alpha, g)?;
        let obs = match observed[t] {
            Some(row) => Some(row_to_col(row)?),
            None => None,
        };
        let (pred, filt, ll) = filter_step(t, filtered.last(), &gamma, u.get(t).copied(), obs, &g.noise)?;
        let (row, col) = match (observed[t], obs) {
            (Some(row), Some(col)) => (row, col),
            _ => {
                let a_col = match predictive {
                    Predictive::Mean => gamma.c.matmul(&pred.mean)?,
                    Predictive::Noise(ez, ea) => {
                        let z = pred
                            .mean
                            .add(&pred.cov.cholesky()?.matmul(&tape.constant(Tensor::column(ez.row_slice(t).to_vec()))?)?)
                            .map_err(|e| at_time(t)(e.into()))?;
                        let sd = g.noise.log_r.scale(0.5)?.exp()?;
                        let e = tape.constant(Tensor::column(ea.row_slice(t).to_vec()))?.scale_by(&sd)?;
                        gamma.c.matmul(&z)?.add(&e)?
                    }
                };
                (col_to_row(a_col)?, a_col)
            }
        };
        a_rows.push(row);
        a_cols.push(col);
        alphas.push(alpha);
        params.push(gamma);
        predicted.push(pred);
        filtered.push(filt);
        lls.extend(ll);
    }
    let log_lik = sum_scalars(tape, &lls)?;
    Ok(Recursion { a_rows, a_cols, alphas, params, out: FilterOutput { filtered, predicted, log_lik } })
}

/// Options for the masked bound.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MaskedOptions {
    /// Sample missing encodings from the predictive distribution instead of
    /// using its mean.
    pub sample_predictive: bool,
}

/// The bound with missing frames: their reconstruction, emission and entropy
/// terms are dropped and their encodings come from the one-step prediction.
pub fn elbo_masked<'t>(
    model: &KvaeModel,
    p: &Bound<'t>,
    seq: &Sequence,
    mask: &ObservationMask,
    noise: &ElboNoise,
    recon_weight: f64,
    opts: MaskedOptions,
) -> Result<ElboBreakdown<'t>> {
    check_sequence(model, seq, noise)?;
    let steps = seq.steps();
    if mask.len() != steps {
        return Err(CoreError::Config(format!("mask has length {}, expected {steps}", mask.len())));
    }
    let tape = p.tape;
    let g = model.globals.bind(p)?;
    let u = seq.control_vars(tape)?;
    let obs = mask.observed();
    let (recon, log_q, observed) = if obs.is_empty() {
        (tape.scalar(0.0)?, tape.scalar(0.0)?, vec![None; steps])
    } else {
        let x = tape.constant(seq.frame_rows(&obs)?)?;
        let q = model.vae.encode(p, x)?;
        let eps = Tensor::matrix(
            obs.len(),
            model.config.a_dim,
            obs.iter().flat_map(|&t| noise.enc.row_slice(t).iter().copied()).collect(),
        )?;
        let (a_tilde, log_q) = model.vae.reparam(&q, &eps)?;
        let mut observed = vec![None; steps];
        for (i, &t) in obs.iter().enumerate() {
            observed[t] = Some(a_tilde.row(i)?);
        }
        let recon = model.vae.decode_log_lik(p, a_tilde, x)?.sum()?;
        (recon, log_q.sum()?, observed)
    };
    let predictive = if opts.sample_predictive { Predictive::Noise(&noise.pred_z, &noise.pred_a) } else { Predictive::Mean };
    let rec = recursive_filter(model, p, &g, &observed, &u, predictive)?;
    let cols = rec.a_cols;
    let (z, log_post) = posterior_joint_sample(&rec.out, &rec.params, &u, &g.noise, &noise.state)?;
    let joint = joint_log_density(&cols, &z, &u, &rec.params, mask, &g.noise)?;
    assemble(Terms { recon, joint, log_q, log_post }, recon_weight, cols, z, rec.params)
}

/// Bound values and parameter gradients of the weighted bound for one sequence.
pub fn episode_gradients(
    model: &KvaeModel,
    seq: &Sequence,
    mask: Option<&ObservationMask>,
    noise: &ElboNoise,
    recon_weight: f64,
    opts: MaskedOptions,
) -> Result<(ElboValues, Vec<(String, Tensor)>)> {
    let tape = Tape::new();
    let p = model.params.bind(&tape)?;
    let elbo = match mask {
        Some(mask) => elbo_masked(model, &p, seq, mask, noise, recon_weight, opts)?,
        None => elbo_estimate(model, &p, seq, noise, recon_weight)?,
    };
    let grads = backward(&tape, elbo.weighted)?;
    Ok((elbo.values(), grads.params()))
}

/// Output of [`generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    /// `T x pixels` probabilities, or `{0, 1}` when binarized.
    pub frames: Tensor,
    /// `T x a_dim` encodings: encoded seed frames, then generated ones.
    pub a: Tensor,
    /// `T x K` mixture weights.
    pub alpha: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerateOptions {
    /// Sample states and encodings; otherwise follow the means.
    pub sample: bool,
    pub binarize: bool,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions { sample: true, binarize: false }
    }
}

pub(crate) fn stack_rows(rows: &[Var<'_>]) -> Result<Tensor> {
    let cols = rows[0].shape()[1];
    Ok(Tensor::matrix(rows.len(), cols, rows.iter().flat_map(|r| r.value().into_data()).collect())?)
}

/// Encodes the seed frames (means), filters them, then rolls the model
/// forward with α recomputed from the generated encodings.
pub fn generate(
    model: &KvaeModel,
    steps: usize,
    controls: Option<&Tensor>,
    seed_frames: Option<&Tensor>,
    rng: &mut impl Rng,
    opts: GenerateOptions,
) -> Result<Generated> {
    let prefix = seed_frames.map_or(0, |f| f.rows());
    if prefix > steps || steps == 0 {
        return Err(CoreError::Config(format!("cannot generate {steps} steps from {prefix} seed frames")));
    }
    let tape = Tape::new();
    let p = model.params.bind_frozen(&tape)?;
    let g = model.globals.bind(&p)?;
    let seq = Sequence { frames: Tensor::zeros(&[steps, model.config.pixels()]), controls: controls.cloned() };
    let u = seq.control_vars(&tape)?;
    let mut observed = vec![None; prefix];
    if let Some(frames) = seed_frames {
        let q = model.vae.encode(&p, tape.constant(frames.clone())?)?;
        for (t, slot) in observed.iter_mut().enumerate() {
            *slot = Some(q.mean.row(t)?);
        }
    }
    let rec = recursive_filter(model, &p, &g, &observed, &u, Predictive::Mean)?;
    let mut a_rows = rec.a_rows;
    let mut alphas = rec.alphas;
    // replay the α state over the prefix so the rollout continues it
    let mut state = model.alpha.initial_state(&tape)?;
    for t in 0..prefix {
        let a_prev = if t == 0 { g.a0 } else { a_rows[t - 1] };
        state = model.alpha.alpha_step(&p, a_prev, state)?.1;
    }
    let mut z_prev = match rec.out.filtered.last() {
        Some(b) => Some(crate::lgssm::draw(b, rng, opts.sample)?),
        None => None,
    };
    let n = model.config.z_dim;
    let m = model.config.a_dim;
    for t in prefix..steps {
        let a_prev = if t == 0 { g.a0 } else { a_rows[t - 1] };
        let (alpha, next) = model.alpha.alpha_step(&p, a_prev, state)?;
        state = next;
        let gamma = mix_step(alpha, &g)?;
        let prior = match z_prev {
            None => crate::lgssm::initial_belief(&g.noise, n)?,
            Some(z) => {
                let mut mean = gamma.a.matmul(&z)?;
                if let (Some(b), Some(u)) = (gamma.b, u.get(t)) {
                    mean = mean.add(&b.matmul(u)?)?;
                }
                let cov = tape.constant(Tensor::eye(n))?.scale_by(&g.noise.log_q.exp()?)?;
                Belief { mean, cov }
            }
        };
        let z = crate::lgssm::draw(&prior, rng, opts.sample)?;
        let emission =
            Belief { mean: gamma.c.matmul(&z)?, cov: tape.constant(Tensor::eye(m))?.scale_by(&g.noise.log_r.exp()?)? };
        let a = crate::lgssm::draw(&emission, rng, opts.sample)?;
        a_rows.push(col_to_row(a)?);
        alphas.push(alpha);
        z_prev = Some(z);
    }
    let a_all = tape.concat(&a_rows, 0)?;
    let mut frames = model.vae.decode_mean(&p, a_all)?.value();
    if opts.binarize {
        frames = frames.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
    }
    Ok(Generated { frames, a: a_all.value(), alpha: stack_rows(&alphas)? })
}
