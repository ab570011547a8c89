//! The dynamics parameter network: encoding history to mixture weights, and
//! mixture weights to per-step LGSSM matrices.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use kvae_autodiff::{Tape, Tensor, Var};
use rand::Rng;

use crate::error::{CoreError, Result};
use crate::lgssm::{GlobalVars, StepParams};
use crate::nn::{Linear, Lstm, Mlp};
use crate::params::{Bound, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaVariant {
    Lstm,
    Mlp,
    FifoMlp,
}

impl FromStr for AlphaVariant {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(AlphaVariant::Lstm),
            "mlp" => Ok(AlphaVariant::Mlp),
            "fifo-mlp" => Ok(AlphaVariant::FifoMlp),
            other => Err(CoreError::Config(format!("unknown alpha network {other:?}"))),
        }
    }
}

impl fmt::Display for AlphaVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlphaVariant::Lstm => "lstm",
            AlphaVariant::Mlp => "mlp",
            AlphaVariant::FifoMlp => "fifo-mlp",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaNet {
    pub variant: AlphaVariant,
    pub a_dim: usize,
    pub k: usize,
    pub window: usize,
    lstm: Lstm,
    proj: Linear,
    mlp: Mlp,
}

/// Per-episode memory of the network.
#[derive(Clone)]
pub enum RecurrentState<'t> {
    Lstm { h: Var<'t>, c: Var<'t> },
    Fifo(VecDeque<Var<'t>>),
    Empty,
}

impl AlphaNet {
    pub const PREFIX: &'static str = "alpha";

    pub fn new(variant: AlphaVariant, a_dim: usize, k: usize, lstm_hidden: usize, mlp_hidden: &[usize], window: usize) -> Self {
        let input = match variant {
            AlphaVariant::FifoMlp => window * a_dim,
            _ => a_dim,
        };
        let mut sizes = vec![input];
        sizes.extend_from_slice(mlp_hidden);
        sizes.push(k);
        AlphaNet {
            variant,
            a_dim,
            k,
            window,
            lstm: Lstm::new("alpha.lstm", a_dim, lstm_hidden),
            proj: Linear::new("alpha.proj", lstm_hidden, k),
            mlp: Mlp::new("alpha.mlp", &sizes),
        }
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        match self.variant {
            AlphaVariant::Lstm => {
                self.lstm.register(store, rng, true)?;
                self.proj.register(store, rng, true)
            }
            AlphaVariant::Mlp | AlphaVariant::FifoMlp => self.mlp.register(store, rng, true),
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match self.variant {
            AlphaVariant::Lstm => self.lstm.param_names().into_iter().chain(self.proj.param_names()).collect(),
            AlphaVariant::Mlp | AlphaVariant::FifoMlp => self.mlp.param_names(),
        }
    }

    pub fn initial_state<'t>(&self, tape: &'t Tape) -> Result<RecurrentState<'t>> {
        Ok(match self.variant {
            AlphaVariant::Lstm => {
                let zeros = Tensor::zeros(&[1, self.lstm.hidden]);
                RecurrentState::Lstm { h: tape.constant(zeros.clone())?, c: tape.constant(zeros)? }
            }
            AlphaVariant::FifoMlp => {
                let zero = tape.constant(Tensor::zeros(&[1, self.a_dim]))?;
                RecurrentState::Fifo(std::iter::repeat_n(zero, self.window).collect())
            }
            AlphaVariant::Mlp => RecurrentState::Empty,
        })
    }

    /// Consumes `a_{t-1}` (a `1 x a_dim` row) and returns `α_t` as a `1 x K` row.
    pub fn alpha_step<'t>(&self, p: &Bound<'t>, a_prev: Var<'t>, state: RecurrentState<'t>) -> Result<(Var<'t>, RecurrentState<'t>)> {
        let (logits, state) = match state {
            RecurrentState::Lstm { h, c } => {
                let (h, c) = self.lstm.step(p, a_prev, h, c)?;
                (self.proj.forward(p, h)?, RecurrentState::Lstm { h, c })
            }
            RecurrentState::Fifo(mut buf) => {
                buf.pop_front();
                buf.push_back(a_prev);
                let parts: Vec<Var<'t>> = buf.iter().copied().collect();
                let input = p.tape.concat(&parts, 1)?;
                (self.mlp.forward(p, input)?, RecurrentState::Fifo(buf))
            }
            RecurrentState::Empty => (self.mlp.forward(p, a_prev)?, RecurrentState::Empty),
        };
        Ok((logits.softmax()?, state))
    }

    /// `a_seq` is `[a_0, a_1, .., a_{T-1}]`; entry `t` of the result depends on
    /// `a_seq[..=t]` only.
    pub fn alpha_path<'t>(&self, p: &Bound<'t>, a_seq: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        let mut state = self.initial_state(p.tape)?;
        let mut out = Vec::with_capacity(a_seq.len());
        for a in a_seq {
            let (alpha, next) = self.alpha_step(p, *a, state)?;
            out.push(alpha);
            state = next;
        }
        Ok(out)
    }
}

/// `γ_t = Σ_k α_t^(k) (A^(k), B^(k), C^(k))`.
pub fn mix_step<'t>(alpha: Var<'t>, g: &GlobalVars<'t>) -> Result<StepParams<'t>> {
    let (n, m, u) = (g.z_dim, g.a_dim, g.u_dim);
    Ok(StepParams {
        a: alpha.matmul(&g.a_base)?.reshape(&[n, n])?,
        b: match g.b_base {
            Some(b) => Some(alpha.matmul(&b)?.reshape(&[n, u])?),
            None => None,
        },
        c: alpha.matmul(&g.c_base)?.reshape(&[m, n])?,
    })
}

pub fn mix_params<'t>(path: &[Var<'t>], g: &GlobalVars<'t>) -> Result<Vec<StepParams<'t>>> {
    path.iter().map(|a| mix_step(*a, g)).collect()
}
