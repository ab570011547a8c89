//! Reverse sweep over a tape.

use crate::error::{AdError, Result};
use crate::kernels::{self, matmul_t};
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// Gradients of a scalar root with respect to the tape's leaves.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(String, usize, Vec<usize>, bool)>,
}

impl Gradients {
    /// Gradient for a tracked leaf; `None` if the leaf does not influence the root.
    pub fn wrt(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id()).and_then(Option::as_ref)
    }

    /// Gradient for a named parameter. Parameters that do not reach the root
    /// (and frozen ones) get a zero tensor; unknown names give `None`.
    pub fn param(&self, name: &str) -> Option<Tensor> {
        self.params.iter().find(|p| p.0 == name).map(|(_, id, shape, trainable)| {
            match (&self.grads[*id], trainable) {
                (Some(g), true) => g.clone(),
                _ => Tensor::zeros(shape),
            }
        })
    }

    /// `(name, gradient)` for every trainable parameter, in registration order.
    pub fn params(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .filter(|p| p.3)
            .map(|(name, id, shape, _)| {
                let g = self.grads[*id].clone().unwrap_or_else(|| Tensor::zeros(shape));
                (name.clone(), g)
            })
            .collect()
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn tril(mut t: Tensor) -> Tensor {
    let n = t.rows();
    for i in 0..n {
        for j in i + 1..n {
            t.set(i, j, 0.0);
        }
    }
    t
}

fn sym(t: &Tensor) -> Tensor {
    let n = t.rows();
    let mut out = t.clone();
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, 0.5 * (t.get(i, j) + t.get(j, i)));
        }
    }
    out
}

fn cholesky_backward(l: &Tensor, g: &Tensor) -> Result<Tensor> {
    let n = l.rows();
    let lbar = tril(g.clone());
    let mut p = matmul_t(l, true, &lbar, false)?;
    p = tril(p);
    for i in 0..n {
        let v = p.get(i, i);
        p.set(i, i, 0.5 * v);
    }
    // S = L^{-T} P L^{-1}
    let x = kernels::tri_solve_lower_transposed(l, &p)?;
    let st = kernels::tri_solve_lower_transposed(l, &kernels::transpose(&x)?)?;
    Ok(sym(&st))
}

/// Runs the reverse sweep from a scalar root.
pub fn backward(tape: &Tape, root: Var<'_>) -> Result<Gradients> {
    if !std::ptr::eq(tape, root.tape()) {
        return Err(AdError::Contract("root belongs to a different tape".into()));
    }
    let nodes = tape.nodes.borrow();
    let r = root.id();
    if nodes[r].value.len() != 1 {
        return Err(AdError::Contract(format!(
            "backward needs a scalar root, got shape {:?}",
            nodes[r].value.shape()
        )));
    }
    if !nodes[r].requires_grad {
        return Err(AdError::Contract("root is not tape-tracked".into()));
    }

    let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
    grads[r] = Some(Tensor::full(nodes[r].value.shape(), 1.0));

    for i in (0..=r).rev() {
        let node = &nodes[i];
        if !node.requires_grad || matches!(node.op, Op::Leaf) {
            continue;
        }
        let Some(g) = grads[i].take() else { continue };
        let y = &node.value;
        let val = |id: usize| &nodes[id].value;
        let wants = |id: usize| nodes[id].requires_grad;

        match &node.op {
            Op::Leaf => unreachable!(),
            Op::MatMul(a, b) => {
                if wants(*a) {
                    accumulate(&mut grads[*a], matmul_t(&g, false, val(*b), true)?);
                }
                if wants(*b) {
                    accumulate(&mut grads[*b], matmul_t(val(*a), true, &g, false)?);
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(&mut grads[*a], g.clone());
                }
                if wants(*b) {
                    accumulate(&mut grads[*b], g);
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(&mut grads[*a], g.clone());
                }
                if wants(*b) {
                    accumulate(&mut grads[*b], g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    accumulate(&mut grads[*a], kernels::hadamard(&g, val(*b))?);
                }
                if wants(*b) {
                    accumulate(&mut grads[*b], kernels::hadamard(&g, val(*a))?);
                }
            }
            Op::AddRow(a, row) => {
                if wants(*row) {
                    let c = g.cols();
                    let mut sums = vec![0.0; c];
                    for chunk in g.data().chunks(c) {
                        for (s, v) in sums.iter_mut().zip(chunk) {
                            *s += v;
                        }
                    }
                    accumulate(&mut grads[*row], Tensor::new(val(*row).shape(), sums)?);
                }
                if wants(*a) {
                    accumulate(&mut grads[*a], g);
                }
            }
            Op::Scale(a, c) => accumulate(&mut grads[*a], g.map(|v| v * c)),
            Op::Offset(a) => accumulate(&mut grads[*a], g),
            Op::ScaleBy(x, s) => {
                let sv = val(*s).data()[0];
                if wants(*s) {
                    let d: f64 = g.data().iter().zip(val(*x).data()).map(|(a, b)| a * b).sum();
                    accumulate(&mut grads[*s], Tensor::new(val(*s).shape(), vec![d])?);
                }
                if wants(*x) {
                    accumulate(&mut grads[*x], g.map(|v| v * sv));
                }
            }
            Op::Exp(a) => accumulate(&mut grads[*a], kernels::hadamard(&g, y)?),
            Op::Log(a) => accumulate(&mut grads[*a], kernels::zip_with("log", &g, val(*a), |g, x| g / x)?),
            Op::Tanh(a) => accumulate(&mut grads[*a], kernels::zip_with("tanh", &g, y, |g, y| g * (1.0 - y * y))?),
            Op::Sigmoid(a) => {
                accumulate(&mut grads[*a], kernels::zip_with("sigmoid", &g, y, |g, y| g * y * (1.0 - y))?)
            }
            Op::Relu(a) => accumulate(
                &mut grads[*a],
                kernels::zip_with("relu", &g, val(*a), |g, x| if x > 0.0 { g } else { 0.0 })?,
            ),
            Op::Softplus(a) => accumulate(
                &mut grads[*a],
                kernels::zip_with("softplus", &g, val(*a), |g, x| g * kernels::sigmoid(x))?,
            ),
            Op::Square(a) => {
                accumulate(&mut grads[*a], kernels::zip_with("square", &g, val(*a), |g, x| 2.0 * g * x)?)
            }
            Op::SoftmaxRows(a) => {
                let c = y.cols();
                let mut out = vec![0.0; y.len()];
                for ((o, gr), yr) in out.chunks_mut(c).zip(g.data().chunks(c)).zip(y.data().chunks(c)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, gv), yv) in o.iter_mut().zip(gr).zip(yr) {
                        *o = yv * (gv - dot);
                    }
                }
                accumulate(&mut grads[*a], Tensor::new(y.shape(), out)?);
            }
            Op::Sum(a) => accumulate(&mut grads[*a], Tensor::full(val(*a).shape(), g.item())),
            Op::Mean(a) => {
                let n = val(*a).len() as f64;
                accumulate(&mut grads[*a], Tensor::full(val(*a).shape(), g.item() / n));
            }
            Op::RowSum(a) => {
                let x = val(*a);
                let c = x.cols();
                let data = (0..x.len()).map(|k| g.data()[k / c]).collect();
                accumulate(&mut grads[*a], Tensor::new(x.shape(), data)?);
            }
            Op::Concat { parts, axis } => {
                let mut offset = 0;
                for &p in parts {
                    let pv = val(p);
                    let piece = match axis {
                        0 => {
                            let c = pv.cols();
                            g.data()[offset * c..(offset + pv.rows()) * c].to_vec()
                        }
                        _ => (0..pv.rows())
                            .flat_map(|i| g.row_slice(i)[offset..offset + pv.cols()].to_vec())
                            .collect(),
                    };
                    offset += if *axis == 0 { pv.rows() } else { pv.cols() };
                    if wants(p) {
                        accumulate(&mut grads[p], Tensor::new(pv.shape(), piece)?);
                    }
                }
            }
            Op::SliceRows { src, start } => {
                let x = val(*src);
                let c = x.cols();
                let mut out = Tensor::zeros(x.shape());
                out.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                accumulate(&mut grads[*src], out);
            }
            Op::SliceCols { src, start } => {
                let x = val(*src);
                let mut out = Tensor::zeros(x.shape());
                let w = g.cols();
                for i in 0..x.rows() {
                    for j in 0..w {
                        out.set(i, start + j, g.get(i, j));
                    }
                }
                accumulate(&mut grads[*src], out);
            }
            Op::GatherRows { src, index } => {
                let x = val(*src);
                let c = x.cols();
                let mut out = Tensor::zeros(x.shape());
                for (k, &i) in index.iter().enumerate() {
                    for j in 0..c {
                        out.data_mut()[i * c + j] += g.data()[k * c + j];
                    }
                }
                accumulate(&mut grads[*src], out);
            }
            Op::Reshape(a) => accumulate(&mut grads[*a], g.reshaped(val(*a).shape())?),
            Op::Transpose(a) => accumulate(&mut grads[*a], kernels::transpose(&g)?),
            Op::Diag(a) => {
                let n = val(*a).rows();
                let mut out = Tensor::zeros(&[n, n]);
                for i in 0..n {
                    out.set(i, i, g.data()[i]);
                }
                accumulate(&mut grads[*a], out);
            }
            Op::Cholesky(a) => accumulate(&mut grads[*a], cholesky_backward(y, &g)?),
            Op::TriSolve(l, b) => {
                let lv = val(*l);
                let gb = kernels::tri_solve_lower_transposed(lv, &g)?;
                if wants(*l) {
                    let gl = matmul_t(&gb, false, y, true)?.map(|v| -v);
                    accumulate(&mut grads[*l], tril(gl));
                }
                if wants(*b) {
                    accumulate(&mut grads[*b], gb);
                }
            }
            Op::InverseSpd(a) => {
                let ygy = matmul_t(&matmul_t(y, false, &g, false)?, false, y, false)?;
                accumulate(&mut grads[*a], sym(&ygy).map(|v| -v));
            }
            Op::LogDetSpd { src, inv } => {
                let s = g.item();
                accumulate(&mut grads[*src], inv.map(|v| v * s));
            }
        }
    }

    let params = tape
        .params
        .borrow()
        .iter()
        .map(|p| (p.name.clone(), p.node, nodes[p.node].value.shape().to_vec(), p.trainable))
        .collect();
    Ok(Gradients { grads, params })
}
