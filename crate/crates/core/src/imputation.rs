//! Filling in missing frames: γ is estimated forward through the gaps from
//! predicted encodings, then the states are filtered or smoothed and the
//! missing encodings decoded.

use std::fmt;
use std::str::FromStr;

use kvae_autodiff::{Tape, Tensor, Var};
use rand::Rng;

use crate::error::{CoreError, Result};
use crate::kvae::{recursive_filter, stack_rows, KvaeModel, Predictive, Sequence};
use crate::lgssm::{kalman_smooth, Belief, ObservationMask, StepParams};
use crate::params::Bound;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ImputeMode {
    Filter,
    Smooth,
    Generate,
}

impl ImputeMode {
    pub const ALL: [ImputeMode; 3] = [ImputeMode::Filter, ImputeMode::Smooth, ImputeMode::Generate];
}

impl FromStr for ImputeMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "filter" => Ok(ImputeMode::Filter),
            "smooth" => Ok(ImputeMode::Smooth),
            "generate" => Ok(ImputeMode::Generate),
            other => Err(CoreError::Config(format!("unknown imputation mode {other:?}"))),
        }
    }
}

impl fmt::Display for ImputeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ImputeMode::Filter => "filter",
            ImputeMode::Smooth => "smooth",
            ImputeMode::Generate => "generate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImputeOptions {
    pub mode: ImputeMode,
    /// Sample observed encodings from the encoder instead of using its mean.
    pub sample_encoder: bool,
    /// Sample missing states and encodings instead of using means.
    pub sample_predictive: bool,
    /// Observed frames kept by generate mode.
    pub generate_prefix: usize,
}

impl Default for ImputeOptions {
    fn default() -> Self {
        ImputeOptions { mode: ImputeMode::Smooth, sample_encoder: false, sample_predictive: false, generate_prefix: 4 }
    }
}

impl ImputeOptions {
    pub fn mode(mode: ImputeMode) -> Self {
        ImputeOptions { mode, ..Self::default() }
    }
}

/// Values from the forward recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    /// `T x a_dim`: encodings where observed, one-step predictions elsewhere.
    pub a_hat: Tensor,
    /// `T x K`.
    pub alpha: Tensor,
    pub filtered: Vec<(Tensor, Tensor)>,
    pub predicted: Vec<(Tensor, Tensor)>,
    pub log_lik: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationResult {
    /// `T x pixels` decoded probabilities.
    pub x_hat: Tensor,
    pub a_hat: Tensor,
    /// Covariance of `a_t` under the belief used at each missing step
    /// (`None` where observed).
    pub a_cov: Vec<Option<Tensor>>,
    pub alpha: Tensor,
    /// The mask actually conditioned on (truncated in generate mode).
    pub mask: ObservationMask,
}

struct Pass<'t> {
    a_rows: Vec<Var<'t>>,
    alphas: Vec<Var<'t>>,
    params: Vec<StepParams<'t>>,
    out: crate::lgssm::FilterOutput<'t>,
    log_r: Var<'t>,
}

fn normal(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
    Tensor::matrix(rows, cols, data).expect("positive sizes")
}

fn run_forward<'t>(
    model: &KvaeModel,
    p: &Bound<'t>,
    seq: &Sequence,
    mask: &ObservationMask,
    opts: &ImputeOptions,
    rng: &mut impl Rng,
) -> Result<Pass<'t>> {
    let steps = seq.steps();
    if mask.len() != steps {
        return Err(CoreError::Config(format!("mask has length {}, expected {steps}", mask.len())));
    }
    if seq.frames.cols() != model.config.pixels() {
        return Err(CoreError::Config(format!("frames have {} pixels, expected {}", seq.frames.cols(), model.config.pixels())));
    }
    let tape = p.tape;
    let g = model.globals.bind(p)?;
    let u = seq.control_vars(tape)?;
    let obs = mask.observed();
    let mut observed = vec![None; steps];
    if !obs.is_empty() {
        let x = tape.constant(seq.frame_rows(&obs)?)?;
        let q = model.vae.encode(p, x)?;
        let a = if opts.sample_encoder {
            model.vae.reparam(&q, &normal(rng, obs.len(), model.config.a_dim))?.0
        } else {
            q.mean
        };
        for (i, &t) in obs.iter().enumerate() {
            observed[t] = Some(a.row(i)?);
        }
    }
    let noise;
    let predictive = if opts.sample_predictive {
        noise = (normal(rng, steps, model.config.z_dim), normal(rng, steps, model.config.a_dim));
        Predictive::Noise(&noise.0, &noise.1)
    } else {
        Predictive::Mean
    };
    let rec = recursive_filter(model, p, &g, &observed, &u, predictive)?;
    Ok(Pass { a_rows: rec.a_rows, alphas: rec.alphas, params: rec.params, out: rec.out, log_r: g.noise.log_r })
}

/// Forward recursion alone, with γ estimated through the gaps.
pub fn forward_pass(
    model: &KvaeModel,
    seq: &Sequence,
    mask: &ObservationMask,
    opts: &ImputeOptions,
    rng: &mut impl Rng,
) -> Result<ForwardPass> {
    let tape = Tape::new();
    let p = model.params.bind_frozen(&tape)?;
    let pass = run_forward(model, &p, seq, mask, opts, rng)?;
    Ok(ForwardPass {
        a_hat: stack_rows(&pass.a_rows)?,
        alpha: stack_rows(&pass.alphas)?,
        filtered: pass.out.filtered.iter().map(Belief::values).collect(),
        predicted: pass.out.predicted.iter().map(Belief::values).collect(),
        log_lik: pass.out.log_lik.item(),
    })
}

/// Mask used by generate mode: the leading observed run, capped at `prefix`.
pub fn generate_mask(mask: &ObservationMask, prefix: usize) -> Result<ObservationMask> {
    let keep = mask.observed_prefix().min(prefix);
    if keep == 0 {
        return Err(CoreError::Config("generate mode needs an observed first frame".into()));
    }
    Ok(ObservationMask::new((0..mask.len()).map(|t| t < keep).collect()))
}

pub fn impute(
    model: &KvaeModel,
    seq: &Sequence,
    mask: &ObservationMask,
    opts: &ImputeOptions,
    rng: &mut impl Rng,
) -> Result<ImputationResult> {
    let mask = match opts.mode {
        ImputeMode::Generate => generate_mask(mask, opts.generate_prefix)?,
        _ => mask.clone(),
    };
    if mask.observed().is_empty() {
        return Err(CoreError::Config("imputation needs at least one observed frame".into()));
    }
    let tape = Tape::new();
    let p = model.params.bind_frozen(&tape)?;
    let pass = run_forward(model, &p, seq, &mask, opts, rng)?;
    let steps = seq.steps();
    let m = model.config.a_dim;
    let r_eye = tape.constant(Tensor::eye(m))?.scale_by(&pass.log_r.exp()?)?;
    let emission_cov = |g: &StepParams, cov: Var| -> Result<Tensor> {
        Ok(g.c.matmul(&cov)?.matmul(&g.c.transpose()?)?.add(&r_eye)?.value())
    };
    let mut a_rows = pass.a_rows.clone();
    let mut a_cov = vec![None; steps];
    match opts.mode {
        ImputeMode::Filter | ImputeMode::Generate => {
            for t in mask.missing() {
                a_cov[t] = Some(emission_cov(&pass.params[t], pass.out.predicted[t].cov)?);
            }
        }
        ImputeMode::Smooth => {
            let smoothed = kalman_smooth(&pass.out, &pass.params)?;
            let r_sd = pass.log_r.scale(0.5)?.exp()?;
            for t in mask.missing() {
                let (g, s) = (&pass.params[t], &smoothed[t]);
                let a_col = if opts.sample_predictive {
                    let z = crate::lgssm::draw(s, rng, true)?;
                    let e = tape.constant(normal(rng, m, 1))?.scale_by(&r_sd)?;
                    g.c.matmul(&z)?.add(&e)?
                } else {
                    g.c.matmul(&s.mean)?
                };
                a_rows[t] = a_col.reshape(&[1, m])?;
                a_cov[t] = Some(emission_cov(g, s.cov)?);
            }
        }
    }
    let a_all = tape.concat(&a_rows, 0)?;
    let x_hat = model.vae.decode_mean(&p, a_all)?.value();
    Ok(ImputationResult { x_hat, a_hat: a_all.value(), a_cov, alpha: stack_rows(&pass.alphas)?, mask })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelError {
    /// Fraction of wrong pixels per frame, `None` for observed frames.
    pub per_frame: Vec<Option<f64>>,
    /// Mean over missing frames; `None` when nothing is missing.
    pub mean: Option<f64>,
}

/// Binarizes `x_hat` at 0.5 and scores only the frames the mask hides.
pub fn pixel_error(x_hat: &Tensor, x_true: &Tensor, mask: &ObservationMask) -> Result<PixelError> {
    if x_hat.shape() != x_true.shape() || x_hat.rows() != mask.len() {
        return Err(CoreError::Config(format!(
            "shape mismatch: {:?} vs {:?} with {} mask entries",
            x_hat.shape(),
            x_true.shape(),
            mask.len()
        )));
    }
    let pixels = x_hat.cols() as f64;
    let per_frame: Vec<Option<f64>> = (0..mask.len())
        .map(|t| {
            (!mask.is_observed(t)).then(|| {
                let wrong = x_hat
                    .row_slice(t)
                    .iter()
                    .zip(x_true.row_slice(t))
                    .filter(|(p, x)| (**p >= 0.5) != (**x >= 0.5))
                    .count();
                wrong as f64 / pixels
            })
        })
        .collect();
    let missing: Vec<f64> = per_frame.iter().flatten().copied().collect();
    let mean = (!missing.is_empty()).then(|| missing.iter().sum::<f64>() / missing.len() as f64);
    Ok(PixelError { per_frame, mean })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_frames_have_zero_error() {
        let x = Tensor::matrix(2, 3, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let e = pixel_error(&x, &x, &ObservationMask::new(vec![false, false])).unwrap();
        assert_eq!(e.mean, Some(0.0));
    }

    #[test]
    fn complement_has_unit_error() {
        let x = Tensor::matrix(2, 3, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let e = pixel_error(&x.map(|v| 1.0 - v), &x, &ObservationMask::new(vec![true, false])).unwrap();
        assert_eq!(e.per_frame, vec![None, Some(1.0)]);
        assert_eq!(e.mean, Some(1.0));
    }

    #[test]
    fn nothing_missing_has_no_mean() {
        let x = Tensor::zeros(&[2, 3]);
        assert_eq!(pixel_error(&x, &x, &ObservationMask::all_observed(2)).unwrap().mean, None);
    }

    #[test]
    fn generate_mask_keeps_leading_run() {
        let mask = ObservationMask::new(vec![true, true, false, true, true, true]);
        assert_eq!(generate_mask(&mask, 4).unwrap().iota(), &[true, true, false, false, false, false]);
        let full = ObservationMask::all_observed(6);
        assert_eq!(generate_mask(&full, 4).unwrap().observed(), vec![0, 1, 2, 3]);
        assert!(generate_mask(&ObservationMask::new(vec![false, true]), 4).is_err());
    }

    #[test]
    fn modes_parse() {
        for m in ImputeMode::ALL {
            assert_eq!(m.to_string().parse::<ImputeMode>().unwrap(), m);
        }
    }
}
