//! Forward kernels on plain tensors.
//!
//! These are the untracked primitives; the tape calls into them and records
//! the matching backward rules.

use crate::error::{AdError, Result};
use crate::tensor::Tensor;

/// Below this many multiply-adds the naive loop beats packing overhead.
const GEMM_THRESHOLD: usize = 4096;

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(AdError::shape(op, format!("expected a matrix, got shape {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn require_square(op: &'static str, t: &Tensor) -> Result<usize> {
    let (r, c) = require_matrix(op, t)?;
    if r != c {
        return Err(AdError::shape(op, format!("expected a square matrix, got {r}x{c}")));
    }
    Ok(r)
}

/// `out = op(a) * op(b)` where `op` optionally transposes. `a` is stored as
/// `m x k` (or `k x m` when `ta`), `b` as `k x n` (or `n x k` when `tb`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    out: &mut [f64],
) {
    let (rsa, csa) = if ta { (1, m) } else { (k, 1) };
    let (rsb, csb) = if tb { (1, k) } else { (n, 1) };
    if m * k * n >= GEMM_THRESHOLD {
        // SAFETY: the strides above address exactly the m*k, k*n and m*n
        // elements of the slices, whose lengths the callers have checked.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa as isize,
                csa as isize,
                b.as_ptr(),
                rsb as isize,
                csb as isize,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        return;
    }
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..m {
        for p in 0..k {
            let av = a[i * rsa + p * csa];
            if av == 0.0 {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (j, o) in row.iter_mut().enumerate() {
                *o += av * b[p * rsb + j * csb];
            }
        }
    }
}

pub(crate) fn matmul_t(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Result<Tensor> {
    let (ar, ac) = require_matrix("matmul", a)?;
    let (br, bc) = require_matrix("matmul", b)?;
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(AdError::shape(
            "matmul",
            format!("inner extents differ: {:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), ta, b.data(), tb, &mut out);
    Ok(Tensor::from_parts(vec![m, n], out))
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    matmul_t(a, false, b, false)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (r, c) = require_matrix("transpose", a)?;
    let src = a.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    Ok(Tensor::from_parts(vec![c, r], out))
}

pub(crate) fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(AdError::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn zip_with(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    same_shape(op, a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), data))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("add", a, b, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("sub", a, b, |x, y| x - y)
}

pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("hadamard", a, b, |x, y| x * y)
}

/// Adds a length-`d` row to every row of an `n x d` matrix.
pub fn add_row(a: &Tensor, row: &Tensor) -> Result<Tensor> {
    let (n, d) = require_matrix("add_row", a)?;
    if row.len() != d {
        return Err(AdError::shape("add_row", format!("{:?} + {:?}", a.shape(), row.shape())));
    }
    let mut out = a.data().to_vec();
    let r = row.data();
    for i in 0..n {
        for (o, v) in out[i * d..(i + 1) * d].iter_mut().zip(r) {
            *o += v;
        }
    }
    Ok(Tensor::from_parts(vec![n, d], out))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn softmax_rows(a: &Tensor) -> Tensor {
    let c = a.cols();
    let mut out = a.data().to_vec();
    for row in out.chunks_mut(c) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::from_parts(a.shape().to_vec(), out)
}

/// Lower Cholesky factor of the symmetric part `(A + A^T)/2`.
pub fn cholesky(a: &Tensor) -> Result<Tensor> {
    let n = require_square("cholesky", a)?;
    let src = a.data();
    let sym = |i: usize, j: usize| 0.5 * (src[i * n + j] + src[j * n + i]);
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = sym(j, j);
        for p in 0..j {
            d -= l[j * n + p] * l[j * n + p];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(AdError::NotSpd { op: "cholesky", time: None });
        }
        let ljj = d.sqrt();
        l[j * n + j] = ljj;
        for i in j + 1..n {
            let mut s = sym(i, j);
            for p in 0..j {
                s -= l[i * n + p] * l[j * n + p];
            }
            l[i * n + j] = s / ljj;
        }
    }
    Ok(Tensor::from_parts(vec![n, n], l))
}

/// Solves `L X = B` for lower-triangular `L` (upper triangle ignored).
pub fn tri_solve_lower(l: &Tensor, b: &Tensor) -> Result<Tensor> {
    let n = require_square("triangular_solve", l)?;
    let (br, bc) = require_matrix("triangular_solve", b)?;
    if br != n {
        return Err(AdError::shape("triangular_solve", format!("{:?} \\ {:?}", l.shape(), b.shape())));
    }
    let ld = l.data();
    let mut x = b.data().to_vec();
    for i in 0..n {
        let lii = ld[i * n + i];
        if lii == 0.0 {
            return Err(AdError::NonFinite { op: "triangular_solve" });
        }
        for j in 0..bc {
            let mut s = x[i * bc + j];
            for p in 0..i {
                s -= ld[i * n + p] * x[p * bc + j];
            }
            x[i * bc + j] = s / lii;
        }
    }
    Ok(Tensor::from_parts(vec![n, bc], x))
}

/// Solves `L^T X = B` for lower-triangular `L`.
pub fn tri_solve_lower_transposed(l: &Tensor, b: &Tensor) -> Result<Tensor> {
    let n = require_square("triangular_solve", l)?;
    let (br, bc) = require_matrix("triangular_solve", b)?;
    if br != n {
        return Err(AdError::shape("triangular_solve", format!("{:?}^T \\ {:?}", l.shape(), b.shape())));
    }
    let ld = l.data();
    let mut x = b.data().to_vec();
    for i in (0..n).rev() {
        let lii = ld[i * n + i];
        for j in 0..bc {
            let mut s = x[i * bc + j];
            for p in i + 1..n {
                s -= ld[p * n + i] * x[p * bc + j];
            }
            x[i * bc + j] = s / lii;
        }
    }
    Ok(Tensor::from_parts(vec![n, bc], x))
}

/// Inverse of an SPD matrix through its Cholesky factor; the result is exactly symmetric.
pub fn inverse_spd(a: &Tensor) -> Result<Tensor> {
    let l = cholesky(a).map_err(|_| AdError::NotSpd { op: "small_inverse", time: None })?;
    let n = a.rows();
    let linv = tri_solve_lower(&l, &Tensor::eye(n))?;
    let mut inv = matmul_t(&linv, true, &linv, false)?;
    let d = inv.data_mut();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (d[i * n + j] + d[j * n + i]);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    Ok(inv)
}

pub fn logdet_spd(a: &Tensor) -> Result<f64> {
    let l = cholesky(a).map_err(|_| AdError::NotSpd { op: "log_det", time: None })?;
    let n = a.rows();
    Ok(2.0 * (0..n).map(|i| l.get(i, i).ln()).sum::<f64>())
}

/// Matrix inverse by Gauss-Jordan elimination with partial pivoting.
///
/// Not used by the tape; kept as an independent reference for tests.
pub fn gauss_jordan_inverse(a: &Tensor) -> Result<Tensor> {
    let n = require_square("gauss_jordan", a)?;
    let mut m = a.data().to_vec();
    let mut inv = Tensor::eye(n).into_data();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[x * n + col].abs().total_cmp(&m[y * n + col].abs()))
            .unwrap_or(col);
        if m[pivot * n + col] == 0.0 {
            return Err(AdError::NonFinite { op: "gauss_jordan" });
        }
        for j in 0..n {
            m.swap(col * n + j, pivot * n + j);
            inv.swap(col * n + j, pivot * n + j);
        }
        let p = m[col * n + col];
        for j in 0..n {
            m[col * n + j] /= p;
            inv[col * n + j] /= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[r * n + col];
            for j in 0..n {
                m[r * n + j] -= f * m[col * n + j];
                inv[r * n + j] -= f * inv[col * n + j];
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, n], inv))
}
