//! Dense reference computations for small state space models.
//!
//! Everything here builds the full joint Gaussian over `(z_1..z_T, a_1..a_T)`
//! and conditions it with nalgebra's Cholesky, without touching the tape or
//! the recursive code paths.

use nalgebra::{DMatrix, DVector};

use crate::lgssm::{NoiseScales, ObservationMask, TimeVaryingParams};
use kvae_autodiff::Tensor;

/// Mean and covariance of the stacked vector `[z_1..z_T, a_1..a_T]`.
pub struct DenseJoint {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n: usize,
    pub m: usize,
    pub steps: usize,
}

fn mat(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

fn tensor(m: &DMatrix<f64>) -> Tensor {
    let mut data = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            data.push(m[(i, j)]);
        }
    }
    Tensor::matrix(m.nrows(), m.ncols(), data).unwrap()
}

fn column(v: &DVector<f64>) -> Tensor {
    Tensor::column(v.iter().copied().collect())
}

impl DenseJoint {
    pub fn new(params: &TimeVaryingParams, u: Option<&Tensor>, noise: NoiseScales) -> Self {
        let steps = params.steps();
        let n = params.a[0].rows();
        let m = params.c[0].rows();
        let dim_xi = steps * n + steps * m;
        // z_t = Mz[t] ξ + cz[t], with ξ = (z_1 noise, w_2..w_T, v_1..v_T)
        let mut mz: Vec<DMatrix<f64>> = Vec::with_capacity(steps);
        let mut cz: Vec<DVector<f64>> = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut noise_map = DMatrix::zeros(n, dim_xi);
            noise_map.view_mut((0, t * n), (n, n)).copy_from(&DMatrix::identity(n, n));
            if t == 0 {
                mz.push(noise_map);
                cz.push(DVector::zeros(n));
            } else {
                let a = mat(&params.a[t]);
                let mut c = &a * &cz[t - 1];
                if let (Some(b), Some(u)) = (params.b.get(t), u) {
                    c += mat(b) * DVector::from_row_slice(u.row_slice(t));
                }
                mz.push(&a * &mz[t - 1] + noise_map);
                cz.push(c);
            }
        }
        let total = steps * (n + m);
        let mut g = DMatrix::zeros(total, dim_xi);
        let mut mean = DVector::zeros(total);
        for t in 0..steps {
            g.view_mut((t * n, 0), (n, dim_xi)).copy_from(&mz[t]);
            mean.rows_mut(t * n, n).copy_from(&cz[t]);
            let c = mat(&params.c[t]);
            let mut ga = &c * &mz[t];
            for k in 0..m {
                ga[(k, steps * n + t * m + k)] += 1.0;
            }
            g.view_mut((steps * n + t * m, 0), (m, dim_xi)).copy_from(&ga);
            mean.rows_mut(steps * n + t * m, m).copy_from(&(&c * &cz[t]));
        }
        let mut d = DVector::zeros(dim_xi);
        for i in 0..dim_xi {
            d[i] = if i < n {
                noise.sigma0
            } else if i < steps * n {
                noise.q
            } else {
                noise.r
            };
        }
        let cov = &g * DMatrix::from_diagonal(&d) * g.transpose();
        DenseJoint { mean, cov, n, m, steps }
    }

    fn z_index(&self, t: usize) -> Vec<usize> {
        (t * self.n..(t + 1) * self.n).collect()
    }

    fn a_index(&self, ts: &[usize]) -> Vec<usize> {
        let base = self.steps * self.n;
        ts.iter().flat_map(|&t| base + t * self.m..base + (t + 1) * self.m).collect()
    }

    fn sub(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.cov[(rows[i], cols[j])])
    }

    fn subvec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
        DVector::from_fn(idx.len(), |i, _| v[idx[i]])
    }

    fn stacked(&self, a: &Tensor, ts: &[usize]) -> DVector<f64> {
        DVector::from_iterator(ts.len() * self.m, ts.iter().flat_map(|&t| a.row_slice(t).iter().copied()))
    }

    /// Gaussian of the `target` coordinates given `a_t` at steps `obs`.
    pub fn condition(&self, target: &[usize], obs: &[usize], a: &Tensor) -> (DVector<f64>, DMatrix<f64>) {
        let mu_t = Self::subvec(&self.mean, target);
        let s_tt = self.sub(target, target);
        if obs.is_empty() {
            return (mu_t, s_tt);
        }
        let oi = self.a_index(obs);
        let s_oo = self.sub(&oi, &oi);
        let s_to = self.sub(target, &oi);
        let resid = self.stacked(a, obs) - Self::subvec(&self.mean, &oi);
        let chol = s_oo.cholesky().expect("observation covariance is SPD");
        let mean = mu_t + &s_to * chol.solve(&resid);
        let cov = s_tt - &s_to * chol.solve(&s_to.transpose());
        (mean, cov)
    }

    /// Filtered `(mean, cov)` at step `t`.
    pub fn filtered(&self, t: usize, mask: &ObservationMask, a: &Tensor) -> (Tensor, Tensor) {
        let obs: Vec<usize> = mask.observed().into_iter().filter(|&s| s <= t).collect();
        let (mu, cov) = self.condition(&self.z_index(t), &obs, a);
        (column(&mu), tensor(&cov))
    }

    pub fn smoothed(&self, t: usize, mask: &ObservationMask, a: &Tensor) -> (Tensor, Tensor) {
        let (mu, cov) = self.condition(&self.z_index(t), &mask.observed(), a);
        (column(&mu), tensor(&cov))
    }

    /// `log p(a_obs)`.
    pub fn log_lik(&self, mask: &ObservationMask, a: &Tensor) -> f64 {
        let obs = mask.observed();
        if obs.is_empty() {
            return 0.0;
        }
        let oi = self.a_index(&obs);
        log_pdf(&self.stacked(a, &obs), &Self::subvec(&self.mean, &oi), &self.sub(&oi, &oi))
    }

    /// Joint posterior of all states, `(T·n mean, T·n x T·n cov)`.
    pub fn posterior(&self, mask: &ObservationMask, a: &Tensor) -> (DVector<f64>, DMatrix<f64>) {
        let all: Vec<usize> = (0..self.steps * self.n).collect();
        self.condition(&all, &mask.observed(), a)
    }

    /// `log p(z | a_obs)` for a `T x n` state path.
    pub fn posterior_log_density(&self, mask: &ObservationMask, a: &Tensor, z: &Tensor) -> f64 {
        let (mu, cov) = self.posterior(mask, a);
        log_pdf(&DVector::from_row_slice(z.data()), &mu, &cov)
    }
}

pub fn log_pdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let chol = cov.clone().cholesky().expect("covariance is SPD");
    let d = x - mean;
    let quad = d.dot(&chol.solve(&d));
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (x.len() as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
}

/// Sum of independent dense log-pdfs, term by term, for the joint density.
pub fn joint_log_density_terms(
    params: &TimeVaryingParams,
    a: &Tensor,
    z: &Tensor,
    u: Option<&Tensor>,
    mask: &ObservationMask,
    noise: NoiseScales,
) -> f64 {
    let n = params.a[0].rows();
    let m = params.c[0].rows();
    let zt = |t: usize| DVector::from_row_slice(z.row_slice(t));
    let mut total = log_pdf(&zt(0), &DVector::zeros(n), &(DMatrix::identity(n, n) * noise.sigma0));
    for t in 1..params.steps() {
        let mut mean = mat(&params.a[t]) * zt(t - 1);
        if let (Some(b), Some(u)) = (params.b.get(t), u) {
            mean += mat(b) * DVector::from_row_slice(u.row_slice(t));
        }
        total += log_pdf(&zt(t), &mean, &(DMatrix::identity(n, n) * noise.q));
    }
    for t in mask.observed() {
        let mean = mat(&params.c[t]) * zt(t);
        total += log_pdf(&DVector::from_row_slice(a.row_slice(t)), &mean, &(DMatrix::identity(m, m) * noise.r));
    }
    total
}

/// `n`-point Gauss-Hermite rule for `∫ e^{-x²} f(x) dx` (Golub-Welsch).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |i, j| if i.abs_diff(j) == 1 { ((i.max(j)) as f64 / 2.0).sqrt() } else { 0.0 });
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], std::f64::consts::PI.sqrt() * eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Bound value (weighted) for fixed noise, with nothing recorded for gradients.
pub fn elbo_value(
    model: &crate::kvae::KvaeModel,
    seq: &crate::kvae::Sequence,
    mask: Option<&ObservationMask>,
    noise: &crate::kvae::ElboNoise,
    recon_weight: f64,
) -> crate::Result<f64> {
    let tape = kvae_autodiff::Tape::new();
    let p = model.params.bind_frozen(&tape)?;
    let elbo = match mask {
        Some(mask) => crate::kvae::elbo_masked(model, &p, seq, mask, noise, recon_weight, Default::default())?,
        None => crate::kvae::elbo_estimate(model, &p, seq, noise, recon_weight)?,
    };
    Ok(elbo.weighted.item())
}

/// One coordinate of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientProbe {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradientProbe {
    /// `|analytic - numeric| / max(|analytic|, |numeric|, 1)`.
    pub fn rel_err(&self) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(self.numeric.abs()).max(1.0)
    }
}

/// Central differences of the weighted bound against the tape gradient for
/// every trainable parameter coordinate.
pub fn elbo_gradient_probes(
    model: &crate::kvae::KvaeModel,
    seq: &crate::kvae::Sequence,
    mask: Option<&ObservationMask>,
    noise: &crate::kvae::ElboNoise,
    recon_weight: f64,
    step: f64,
) -> crate::Result<Vec<GradientProbe>> {
    let (_, grads) = crate::kvae::episode_gradients(model, seq, mask, noise, recon_weight, Default::default())?;
    let mut probes = Vec::new();
    let mut work = model.clone();
    for (name, grad) in grads {
        for index in 0..grad.len() {
            let base = model.params.value(&name)?.data()[index];
            work.params.value_mut(&name)?.data_mut()[index] = base + step;
            let plus = elbo_value(&work, seq, mask, noise, recon_weight)?;
            work.params.value_mut(&name)?.data_mut()[index] = base - step;
            let minus = elbo_value(&work, seq, mask, noise, recon_weight)?;
            work.params.value_mut(&name)?.data_mut()[index] = base;
            probes.push(GradientProbe {
                name: name.clone(),
                index,
                analytic: grad.data()[index],
                numeric: (plus - minus) / (2.0 * step),
            });
        }
    }
    Ok(probes)
}

/// Exact bound of a model with one pixel per frame, a one-dimensional
/// encoding, a linear Gaussian decoder and a linear encoder, for `T = 2`.
///
/// Averaging over the joint state sample leaves
/// `E_q[log p(x|a) + log p(a) - log q(a|x)]`, integrated here with a
/// tensor-product Gauss-Hermite rule over `(a_1, a_2)`; `log p(a)` comes from
/// dense conditioning with the model's `γ` evaluated at each node.
pub fn linear_toy_elbo(model: &crate::kvae::KvaeModel, frames: &Tensor, nodes: usize) -> crate::Result<f64> {
    use crate::lgssm::LgssmGlobals;
    use kvae_autodiff::Tape;

    let cfg = &model.config;
    assert!(cfg.pixels() == 1 && cfg.a_dim == 1 && frames.rows() == 2 && cfg.vae_hidden.is_empty());
    let v = |name: &str| -> crate::Result<f64> { Ok(model.params.value(name)?.data()[0]) };
    // encoder output is [mean, log_var] = x·w + b
    let enc_w = model.params.value("vae.enc.l0.w")?.data().to_vec();
    let enc_b = model.params.value("vae.enc.l0.b")?.data().to_vec();
    let (dec_w, dec_b, dec_lv) = (v("vae.dec.l0.w")?, v("vae.dec.l0.b")?, v(crate::vae::Vae::DEC_LOG_VAR)?);
    let noise = LgssmGlobals::noise_scales(&model.params)?;
    let (xs, ws) = gauss_hermite(nodes);
    let x = [frames.data()[0], frames.data()[1]];
    let q: Vec<(f64, f64)> = x.iter().map(|&x| (x * enc_w[0] + enc_b[0], (x * enc_w[1] + enc_b[1]).exp())).collect();
    let ln_n = |v: f64, mean: f64, var: f64| -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (v - mean).powi(2) / var);
    let mut total = 0.0;
    for (i, &xi) in xs.iter().enumerate() {
        for (j, &xj) in xs.iter().enumerate() {
            let a1 = q[0].0 + (2.0 * q[0].1).sqrt() * xi;
            let a2 = q[1].0 + (2.0 * q[1].1).sqrt() * xj;
            let tape = Tape::new();
            let p = model.params.bind_frozen(&tape)?;
            let g = model.globals.bind(&p)?;
            let a1_row = tape.constant(Tensor::row(vec![a1]))?;
            let path = model.alpha.alpha_path(&p, &[g.a0, a1_row])?;
            let steps = crate::dynparam::mix_params(&path, &g)?;
            let tv = TimeVaryingParams {
                a: steps.iter().map(|s| s.a.value()).collect(),
                b: Vec::new(),
                c: steps.iter().map(|s| s.c.value()).collect(),
            };
            let a = Tensor::column(vec![a1, a2]);
            let log_pa = DenseJoint::new(&tv, None, noise).log_lik(&ObservationMask::all_observed(2), &a);
            let dec_var = dec_lv.exp();
            let log_px = ln_n(x[0], a1 * dec_w + dec_b, dec_var) + ln_n(x[1], a2 * dec_w + dec_b, dec_var);
            let log_q = ln_n(a1, q[0].0, q[0].1) + ln_n(a2, q[1].0, q[1].1);
            total += ws[i] * ws[j] / std::f64::consts::PI * (log_px + log_pa - log_q);
        }
    }
    Ok(total)
}
