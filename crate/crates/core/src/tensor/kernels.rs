//! Forward kernels shared by [`Graph`](super::Graph) and [`Eval`](super::Eval),
//! plus the slice-level helpers their backward passes reuse.

use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::math;
use crate::{Error, Result};

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

const TILE_R: usize = 4;
const TILE_C: usize = 4;

/// `out += a · b` for row-major `a: m×k`, `b: k×n`.
///
/// Works on 4×4 output tiles held in registers; every output element still
/// accumulates its products in increasing `p` order.
pub fn gemm_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    let mr = m - m % TILE_R;
    let nc = n - n % TILE_C;
    for i in (0..mr).step_by(TILE_R) {
        for j in (0..nc).step_by(TILE_C) {
            let mut acc = [[0.0f64; TILE_C]; TILE_R];
            for (r, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&out[(i + r) * n + j..(i + r) * n + j + TILE_C]);
            }
            for p in 0..k {
                let bt: &[f64; TILE_C] = b[p * n + j..p * n + j + TILE_C].try_into().unwrap();
                for (r, row) in acc.iter_mut().enumerate() {
                    let av = a[(i + r) * k + p];
                    for (o, &bv) in row.iter_mut().zip(bt) {
                        *o += av * bv;
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                out[(i + r) * n + j..(i + r) * n + j + TILE_C].copy_from_slice(row);
            }
        }
        if nc < n {
            gemm_naive(a, b, i, i + TILE_R, k, n, nc, out);
        }
    }
    gemm_naive(a, b, mr, m, k, n, 0, out);
}

/// Rows `r0..r1`, columns `c0..n` of `out += a · b`.
#[allow(clippy::too_many_arguments)]
fn gemm_naive(a: &[f64], b: &[f64], r0: usize, r1: usize, k: usize, n: usize, c0: usize, out: &mut [f64]) {
    for i in r0..r1 {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n + c0..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n + c0..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += aᵀ · c` for `a: m×k`, `c: m×n`, `out: k×n`.
pub fn gemm_at_acc(a: &[f64], c: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    let kr = k - k % TILE_R;
    let nc = n - n % TILE_C;
    for p in (0..kr).step_by(TILE_R) {
        for j in (0..nc).step_by(TILE_C) {
            let mut acc = [[0.0f64; TILE_C]; TILE_R];
            for (r, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&out[(p + r) * n + j..(p + r) * n + j + TILE_C]);
            }
            for i in 0..m {
                let ct: &[f64; TILE_C] = c[i * n + j..i * n + j + TILE_C].try_into().unwrap();
                let at: &[f64; TILE_R] = a[i * k + p..i * k + p + TILE_R].try_into().unwrap();
                for (row, &av) in acc.iter_mut().zip(at) {
                    for (o, &cv) in row.iter_mut().zip(ct) {
                        *o += av * cv;
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                out[(p + r) * n + j..(p + r) * n + j + TILE_C].copy_from_slice(row);
            }
        }
    }
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let cols = if p < kr { nc..n } else { 0..n };
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &cv) in orow[cols.clone()].iter_mut().zip(&crow[cols]) {
                *o += av * cv;
            }
        }
    }
}

/// Transpose of a row-major `rows×cols` matrix.
pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

/// `out += a · bᵀ` for `a: m×k`, `b: n×k`.
pub fn gemm_bt_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    let bt = transpose(b, n, k);
    gemm_acc(a, &bt, m, k, n, out);
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(mismatch("matmul", a, b));
    }
    let mut out = vec![0.0; m * n];
    gemm_acc(a.data(), b.data(), m, k, n, &mut out);
    Tensor::new(vec![m, n], out)
}

/// `a · bᵀ`.
pub fn matmul_bt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul_bt")?;
    let (n, k2) = b.dims2("matmul_bt")?;
    if k != k2 {
        return Err(mismatch("matmul_bt", a, b));
    }
    let mut out = vec![0.0; m * n];
    gemm_bt_acc(a.data(), b.data(), m, k, n, &mut out);
    Tensor::new(vec![m, n], out)
}

fn zip_same(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(mismatch(op, a, b));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_same("add", a, b, |x, y| x + y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_same("mul", a, b, |x, y| x * y)
}

/// Adds a length-`n` vector to every row of an `m×n` matrix.
pub fn add_row(a: &Tensor, row: &Tensor) -> Result<Tensor> {
    let (_, n) = a.dims2("add_row")?;
    if row.len() != n {
        return Err(mismatch("add_row", a, row));
    }
    let mut out = a.data().to_vec();
    for chunk in out.chunks_exact_mut(n) {
        for (o, &b) in chunk.iter_mut().zip(row.data()) {
            *o += b;
        }
    }
    Tensor::new(a.shape().to_vec(), out)
}

pub fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = a.data().iter().map(|&x| f(x)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    map(a, |x| x * c)
}

pub fn relu(a: &Tensor) -> Tensor {
    map(a, |x| if x > 0.0 { x } else { 0.0 })
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + math::exp(-x))
    } else {
        let e = math::exp(x);
        e / (1.0 + e)
    }
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    map(a, sigmoid_scalar)
}

/// Softmax over the last dimension with max subtraction.
pub fn softmax_lastdim(a: &Tensor) -> Result<Tensor> {
    let n = *a.shape().last().unwrap_or(&1);
    let mut out = a.data().to_vec();
    for row in out.chunks_exact_mut(n) {
        let mut max = f64::NEG_INFINITY;
        for &v in row.iter() {
            if v.is_nan() {
                return Err(Error::NaN("softmax"));
            }
            if v > max {
                max = v;
            }
        }
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = math::exp(*v - max);
            sum += *v;
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    Tensor::new(a.shape().to_vec(), out)
}

/// Output of [`layer_norm`] together with what its backward pass needs.
pub struct LayerNormOut {
    pub out: Tensor,
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Row-wise normalisation to zero mean / unit variance (`eps` inside the
/// square root), then `gain ⊙ x̂ + bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<LayerNormOut> {
    let (t, d) = x.dims2("layer_norm")?;
    if gain.len() != d {
        return Err(mismatch("layer_norm", x, gain));
    }
    if bias.len() != d {
        return Err(mismatch("layer_norm", x, bias));
    }
    let mut xhat = vec![0.0; t * d];
    let mut out = vec![0.0; t * d];
    let mut inv_std = vec![0.0; t];
    let (g, b) = (gain.data(), bias.data());
    for r in 0..t {
        let row = &x.data()[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / math::sqrt(var + eps);
        inv_std[r] = inv;
        for j in 0..d {
            let xh = (row[j] - mean) * inv;
            xhat[r * d + j] = xh;
            out[r * d + j] = g[j] * xh + b[j];
        }
    }
    Ok(LayerNormOut {
        out: Tensor::new(vec![t, d], out)?,
        xhat,
        inv_std,
    })
}

/// Index into a relative-position table of `2·max_len − 1` rows for query
/// `m` and key `n`; offsets beyond the table clamp to its extreme rows.
#[inline]
pub fn relpos_index(m: usize, n: usize, max_len: usize) -> usize {
    let lim = max_len as isize - 1;
    let off = (m as isize - n as isize).clamp(-lim, lim);
    (off + lim) as usize
}

/// Gathers the `2T − 1` table rows covering offsets `-(T-1) ..= T-1`
/// (clamped), ordered by offset.
pub fn relpos_gather(table: &[f64], dk: usize, t: usize, max_len: usize) -> Vec<f64> {
    let lim = max_len as isize - 1;
    let mut local = vec![0.0; (2 * t - 1) * dk];
    for (slot, off) in (-(t as isize - 1)..=(t as isize - 1)).enumerate() {
        let idx = (off.clamp(-lim, lim) + lim) as usize;
        local[slot * dk..(slot + 1) * dk].copy_from_slice(&table[idx * dk..(idx + 1) * dk]);
    }
    local
}

/// `out[m][n] = q_m · rel[m − n]` for `q: T×d_k` and a `(2M−1)×d_k` table.
pub fn relpos_scores(q: &Tensor, table: &Tensor, max_len: usize) -> Result<Tensor> {
    let (t, dk) = q.dims2("relpos_scores")?;
    let (rows, dk2) = table.dims2("relpos_scores")?;
    if dk != dk2 || rows != 2 * max_len - 1 {
        return Err(mismatch("relpos_scores", q, table));
    }
    if t > max_len {
        return Err(Error::ChunkTooLong { len: t, max: max_len });
    }
    let local = relpos_gather(table.data(), dk, t, max_len);
    let width = 2 * t - 1;
    let mut proj = vec![0.0; t * width];
    gemm_bt_acc(q.data(), &local, t, dk, width, &mut proj);
    let mut out = vec![0.0; t * t];
    for m in 0..t {
        for n in 0..t {
            // slot of offset m - n is (m - n) + (t - 1)
            out[m * t + n] = proj[m * width + m + t - 1 - n];
        }
    }
    Tensor::new(vec![t, t], out)
}

pub fn slice_cols(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let (r, c) = x.dims2("slice_cols")?;
    if start + len > c || len == 0 {
        return Err(Error::Shape {
            op: "slice_cols",
            left: x.shape().to_vec(),
            right: vec![start, len],
        });
    }
    let mut out = Vec::with_capacity(r * len);
    for row in x.data().chunks_exact(c) {
        out.extend_from_slice(&row[start..start + len]);
    }
    Tensor::new(vec![r, len], out)
}

pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
    let (r, _) = first.dims2("concat_cols")?;
    let mut total = 0;
    for p in parts {
        let (pr, pc) = p.dims2("concat_cols")?;
        if pr != r {
            return Err(mismatch("concat_cols", first, p));
        }
        total += pc;
    }
    let mut out = Vec::with_capacity(r * total);
    for i in 0..r {
        for p in parts {
            out.extend_from_slice(p.row(i));
        }
    }
    Tensor::new(vec![r, total], out)
}

pub fn sum(a: &Tensor) -> Tensor {
    Tensor::scalar(a.data().iter().sum())
}

/// Mean squared difference to a constant target.
pub fn mse_to(pred: &Tensor, target: &[f64]) -> Result<Tensor> {
    if pred.len() != target.len() {
        return Err(Error::Shape {
            op: "mse_to",
            left: pred.shape().to_vec(),
            right: vec![target.len()],
        });
    }
    let s: f64 = pred
        .data()
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(Tensor::scalar(s / pred.len() as f64))
}

/// `Σ wᵢ·xᵢ` over same-shaped tensors.
pub fn lin_comb(terms: &[(&Tensor, f64)]) -> Result<Tensor> {
    let (first, _) = terms
        .first()
        .ok_or_else(|| Error::Contract("linear combination of zero terms".into()))?;
    let mut out = vec![0.0; first.len()];
    for (t, w) in terms {
        if t.shape() != first.shape() {
            return Err(mismatch("lin_comb", first, t));
        }
        for (o, &v) in out.iter_mut().zip(t.data()) {
            *o += w * v;
        }
    }
    Tensor::new(first.shape().to_vec(), out)
}
