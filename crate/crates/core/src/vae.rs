//! Per-frame recognition and emission networks, shared across time.

use std::fmt;
use std::str::FromStr;

use kvae_autodiff::{Tensor, Var};
use rand::Rng;

use crate::error::{CoreError, Result};
use crate::nn::Mlp;
use crate::params::{Bound, ParamStore};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Likelihood {
    Bernoulli,
    /// Factorized Gaussian with one learned log-variance shared by all pixels.
    Gaussian,
}

impl FromStr for Likelihood {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli" => Ok(Likelihood::Bernoulli),
            "gaussian" => Ok(Likelihood::Gaussian),
            other => Err(CoreError::Config(format!("unknown likelihood {other:?}"))),
        }
    }
}

impl fmt::Display for Likelihood {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Likelihood::Bernoulli => "bernoulli",
            Likelihood::Gaussian => "gaussian",
        })
    }
}

/// Diagonal Gaussian rows: `N x a_dim` means and log-variances.
#[derive(Clone, Copy)]
pub struct DiagGaussian<'t> {
    pub mean: Var<'t>,
    pub log_var: Var<'t>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vae {
    pub pixels: usize,
    pub a_dim: usize,
    pub likelihood: Likelihood,
    encoder: Mlp,
    decoder: Mlp,
}

impl Vae {
    pub const DEC_LOG_VAR: &'static str = "vae.dec.log_var";

    pub fn new(pixels: usize, a_dim: usize, hidden: &[usize], likelihood: Likelihood) -> Self {
        let mut enc = vec![pixels];
        enc.extend_from_slice(hidden);
        enc.push(2 * a_dim);
        let mut dec = vec![a_dim];
        dec.extend_from_slice(hidden);
        dec.push(pixels);
        Vae { pixels, a_dim, likelihood, encoder: Mlp::new("vae.enc", &enc), decoder: Mlp::new("vae.dec", &dec) }
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        self.encoder.register(store, rng, true)?;
        self.decoder.register(store, rng, true)?;
        if self.likelihood == Likelihood::Gaussian {
            store.insert(Self::DEC_LOG_VAR, Tensor::scalar(0.0), true)?;
        }
        Ok(())
    }

    pub fn encoder_param_names(&self) -> Vec<String> {
        self.encoder.param_names()
    }

    pub fn decoder_param_names(&self) -> Vec<String> {
        let mut names = self.decoder.param_names();
        if self.likelihood == Likelihood::Gaussian {
            names.push(Self::DEC_LOG_VAR.to_string());
        }
        names
    }

    /// `x` holds one flattened frame per row.
    pub fn encode<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<DiagGaussian<'t>> {
        let out = self.encoder.forward(p, x)?;
        Ok(DiagGaussian { mean: out.slice_cols(0, self.a_dim)?, log_var: out.slice_cols(self.a_dim, self.a_dim)? })
    }

    /// `ã = μ + exp(logvar / 2)·ε` with pinned `eps` (same shape as the mean);
    /// also returns `log q(ã | x)` per row as an `N x 1` column.
    pub fn reparam<'t>(&self, g: &DiagGaussian<'t>, eps: &Tensor) -> Result<(Var<'t>, Var<'t>)> {
        let tape = g.mean.tape();
        let e = tape.constant(eps.clone())?;
        let sample = g.mean.add(&g.log_var.scale(0.5)?.exp()?.mul(&e)?)?;
        let rows = eps.rows();
        let d = eps.cols() as f64;
        // with ε pinned, (ã - μ)² / σ² = ε² exactly
        let eps_sq = Tensor::column((0..rows).map(|i| eps.row_slice(i).iter().map(|v| v * v).sum::<f64>()).collect());
        let log_q = g
            .log_var
            .row_sum()?
            .add(&tape.constant(eps_sq)?)?
            .scale(-0.5)?
            .offset(-0.5 * d * LN_2PI)?;
        Ok((sample, log_q))
    }

    pub fn decode_logits<'t>(&self, p: &Bound<'t>, a: Var<'t>) -> Result<Var<'t>> {
        self.decoder.forward(p, a)
    }

    /// Pixel probabilities (Bernoulli) or means (Gaussian), one frame per row.
    pub fn decode_mean<'t>(&self, p: &Bound<'t>, a: Var<'t>) -> Result<Var<'t>> {
        let out = self.decode_logits(p, a)?;
        Ok(match self.likelihood {
            Likelihood::Bernoulli => out.sigmoid()?,
            Likelihood::Gaussian => out,
        })
    }

    /// `log p(x | a)` per row as an `N x 1` column.
    pub fn decode_log_lik<'t>(&self, p: &Bound<'t>, a: Var<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let out = self.decode_logits(p, a)?;
        log_lik_from_output(self.likelihood, out, x, p)
    }
}

/// Bernoulli uses the stable form `x·l - softplus(l)`.
pub fn log_lik_from_output<'t>(likelihood: Likelihood, out: Var<'t>, x: Var<'t>, p: &Bound<'t>) -> Result<Var<'t>> {
    match likelihood {
        Likelihood::Bernoulli => Ok(x.mul(&out)?.sub(&out.softplus()?)?.row_sum()?),
        Likelihood::Gaussian => {
            let log_var = p.var(Vae::DEC_LOG_VAR)?;
            let d = out.shape()[1] as f64;
            let sq = x.sub(&out)?.square()?.row_sum()?.scale_by(&log_var.neg()?.exp()?)?;
            let rows = sq.shape()[0];
            let lv = p.tape.constant(Tensor::full(&[rows, 1], d))?.scale_by(&log_var)?;
            Ok(sq.add(&lv)?.scale(-0.5)?.offset(-0.5 * d * LN_2PI)?)
        }
    }
}
