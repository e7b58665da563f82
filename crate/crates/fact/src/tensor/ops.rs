//! Forward operations and their backward rules.
//!
//! Every op validates shapes up front and returns a fresh tensor; while
//! gradients are enabled and any input requires them, the result records a
//! [`Node`] so [`super::Tensor::backward`] can dispatch the matching vector-
//! Jacobian product. GEMM goes through `matrixmultiply`; everything else is
//! plain loops over row-major buffers.

use std::f64::consts::PI;

use crate::error::{Error, Result};

use super::{grad_enabled, Inner, Tensor};

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) parents: Vec<Tensor>,
}

pub(crate) enum Op {
    Add,
    AddBias,
    Scale(f32),
    Matmul,
    ModeProduct { mode: usize },
    Transpose,
    Reshape,
    SliceRows { start: usize },
    SliceCols { start: usize },
    ConcatRows,
    ConcatCols,
    GatherRows { indices: Vec<usize> },
    SoftmaxRows,
    Gelu,
    LayerNorm { eps: f32 },
    SumAll,
    MeanAxis { axis: usize },
    CrossEntropy { labels: Vec<usize>, probs: Vec<f32> },
}

fn track(parents: &[&Tensor]) -> bool {
    grad_enabled() && parents.iter().any(|p| p.requires_grad())
}

fn result(op: Op, parents: Vec<Tensor>, shape: Vec<usize>, data: Vec<f32>) -> Tensor {
    let refs: Vec<&Tensor> = parents.iter().collect();
    if track(&refs) {
        Tensor::new_internal(shape, data, true, Some(Node { op, parents }))
    } else {
        Tensor::new_internal(shape, data, false, None)
    }
}

// ── raw kernels ─────────────────────────────────────────────────────

/// C[m×n] = A[m×k]·B[k×n], row-major.
pub(crate) fn matmul_raw(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut c = vec![0.0f32; m * n];
    gemm(
        m, k, n, 1.0, a, k as isize, 1, b, n as isize, 1, 0.0, &mut c, n as isize, 1,
    );
    c
}

/// Strided single-precision GEMM: C = alpha·A·B + beta·C.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    rsa: isize,
    csa: isize,
    b: &[f32],
    rsb: isize,
    csb: isize,
    beta: f32,
    c: &mut [f32],
    rsc: isize,
    csc: isize,
) {
    debug_assert!(m * n <= c.len());
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

/// Mode-`mode` product of a 3-d tensor `t` with matrix `m` of shape
/// `[r × t.shape[mode-1]]`: the indicated axis is contracted and replaced by r.
pub(crate) fn mode_product_raw(
    t: &[f32],
    (a, b, c): (usize, usize, usize),
    mat: &[f32],
    r: usize,
    mode: usize,
) -> Vec<f32> {
    match mode {
        1 => {
            // out[q,j,k] = sum_i mat[q,i] t[i,j,k]
            matmul_raw(mat, t, r, a, b * c)
        }
        2 => {
            // out[i,q,k] = sum_j mat[q,j] t[i,j,k]
            let mut out = vec![0.0f32; a * r * c];
            for i in 0..a {
                gemm(
                    r,
                    b,
                    c,
                    1.0,
                    mat,
                    b as isize,
                    1,
                    &t[i * b * c..],
                    c as isize,
                    1,
                    0.0,
                    &mut out[i * r * c..],
                    c as isize,
                    1,
                );
            }
            out
        }
        3 => {
            // out[i,j,q] = sum_k t[i,j,k] mat[q,k]
            let mut out = vec![0.0f32; a * b * r];
            for i in 0..a {
                gemm(
                    b,
                    c,
                    r,
                    1.0,
                    &t[i * b * c..],
                    c as isize,
                    1,
                    mat,
                    1,
                    c as isize,
                    0.0,
                    &mut out[i * b * r..],
                    r as isize,
                    1,
                );
            }
            out
        }
        _ => unreachable!("mode validated by caller"),
    }
}

fn transpose_raw(a: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

fn gelu_scalar(x: f32) -> f32 {
    let xd = x as f64;
    (xd * 0.5 * (1.0 + libm::erf(xd / std::f64::consts::SQRT_2))) as f32
}

fn gelu_grad_scalar(x: f32) -> f32 {
    let xd = x as f64;
    let cdf = 0.5 * (1.0 + libm::erf(xd / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * xd * xd).exp() / (2.0 * PI).sqrt();
    (cdf + xd * pdf) as f32
}

// ── forward ops ─────────────────────────────────────────────────────

impl Tensor {
    fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Elementwise sum; shapes must match exactly.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa != sb {
            return Err(Self::shape_err("add", &sa, &sb));
        }
        let data = {
            let a = self.data();
            let b = other.data();
            a.iter().zip(b.iter()).map(|(x, y)| x + y).collect()
        };
        Ok(result(Op::Add, vec![self.clone(), other.clone()], sa, data))
    }

    /// Adds a length-d bias vector to every row of an n×d matrix.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), bias.shape());
        if sa.len() != 2 || sb.len() != 1 || sb[0] != sa[1] {
            return Err(Self::shape_err("add_bias", &sa, &sb));
        }
        let (n, d) = (sa[0], sa[1]);
        let mut data = self.to_vec();
        {
            let b = bias.data();
            for i in 0..n {
                for j in 0..d {
                    data[i * d + j] += b[j];
                }
            }
        }
        Ok(result(Op::AddBias, vec![self.clone(), bias.clone()], sa, data))
    }

    /// Multiplication by a compile-time constant (scalar broadcast).
    pub fn scale(&self, factor: f32) -> Result<Tensor> {
        let data = self.data().iter().map(|x| x * factor).collect();
        Ok(result(Op::Scale(factor), vec![self.clone()], self.shape(), data))
    }

    /// Matrix product of `[m×k]` and `[k×n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Self::shape_err("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(&self.data(), &other.data(), m, k, n);
        Ok(result(
            Op::Matmul,
            vec![self.clone(), other.clone()],
            vec![m, n],
            data,
        ))
    }

    /// Mode-`mode` product: contracts axis `mode` (1-based) of a 3-d tensor
    /// with the second axis of `mat`, replacing it by `mat`'s first axis.
    pub fn mode_product(&self, mat: &Tensor, mode: usize) -> Result<Tensor> {
        let st = self.shape();
        let sm = mat.shape();
        if st.len() != 3 || sm.len() != 2 {
            return Err(Self::shape_err("mode_product", &st, &sm));
        }
        if !(1..=3).contains(&mode) {
            return Err(Error::InvalidMode { mode });
        }
        if sm[1] != st[mode - 1] {
            return Err(Self::shape_err("mode_product", &st, &sm));
        }
        let r = sm[0];
        let (a, b, c) = (st[0], st[1], st[2]);
        let data = mode_product_raw(&self.data(), (a, b, c), &mat.data(), r, mode);
        let mut shape = st;
        shape[mode - 1] = r;
        Ok(result(
            Op::ModeProduct { mode },
            vec![self.clone(), mat.clone()],
            shape,
            data,
        ))
    }

    /// 2-d transpose.
    pub fn transpose(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Self::shape_err("transpose", &s, &s));
        }
        let data = transpose_raw(&self.data(), s[0], s[1]);
        Ok(result(Op::Transpose, vec![self.clone()], vec![s[1], s[0]], data))
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let new_len: usize = shape.iter().product();
        if new_len != self.numel() || shape.iter().any(|&d| d == 0) {
            return Err(Self::shape_err("reshape", &self.shape(), shape));
        }
        Ok(result(
            Op::Reshape,
            vec![self.clone()],
            shape.to_vec(),
            self.to_vec(),
        ))
    }

    /// Contiguous slice `[start, end)` along axis 0 of any tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor> {
        let s = self.shape();
        if start >= end || end > s[0] {
            return Err(Error::IndexOutOfRange {
                index: end,
                len: s[0],
            });
        }
        let chunk: usize = s[1..].iter().product();
        let data = self.data()[start * chunk..end * chunk].to_vec();
        let mut shape = s;
        shape[0] = end - start;
        Ok(result(Op::SliceRows { start }, vec![self.clone()], shape, data))
    }

    /// Column slice `[start, end)` of an n×d matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Self::shape_err("slice_cols", &s, &s));
        }
        if start >= end || end > s[1] {
            return Err(Error::IndexOutOfRange {
                index: end,
                len: s[1],
            });
        }
        let (n, d, w) = (s[0], s[1], end - start);
        let src = self.data();
        let mut data = vec![0.0f32; n * w];
        for i in 0..n {
            data[i * w..(i + 1) * w].copy_from_slice(&src[i * d + start..i * d + end]);
        }
        drop(src);
        Ok(result(
            Op::SliceCols { start },
            vec![self.clone()],
            vec![n, w],
            data,
        ))
    }

    /// Stacks tensors along axis 0; trailing dimensions must match.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Config("concat_rows of an empty list".into()))?;
        let tail = &first.shape()[1..];
        let mut rows = 0usize;
        let mut data = Vec::new();
        for p in parts {
            let s = p.shape();
            if &s[1..] != tail {
                return Err(Self::shape_err("concat_rows", &first.shape(), &s));
            }
            rows += s[0];
            data.extend_from_slice(&p.data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(tail);
        Ok(result(
            Op::ConcatRows,
            parts.iter().map(|p| (*p).clone()).collect(),
            shape,
            data,
        ))
    }

    /// Concatenates n×dᵢ matrices side by side into n×Σdᵢ.
    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Config("concat_cols of an empty list".into()))?;
        let n = first.shape()[0];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.shape();
            if s.len() != 2 || s[0] != n {
                return Err(Self::shape_err("concat_cols", &first.shape(), &s));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0f32; n * total];
        let mut offset = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let src = p.data();
            for i in 0..n {
                data[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        Ok(result(
            Op::ConcatCols,
            parts.iter().map(|p| (*p).clone()).collect(),
            vec![n, total],
            data,
        ))
    }

    /// Row gather: `out[i] = self[indices[i]]` along axis 0.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let s = self.shape();
        let chunk: usize = s[1..].iter().product();
        let src = self.data();
        let mut data = Vec::with_capacity(indices.len() * chunk);
        for &idx in indices {
            if idx >= s[0] {
                return Err(Error::IndexOutOfRange {
                    index: idx,
                    len: s[0],
                });
            }
            data.extend_from_slice(&src[idx * chunk..(idx + 1) * chunk]);
        }
        drop(src);
        let mut shape = s;
        shape[0] = indices.len();
        Ok(result(
            Op::GatherRows {
                indices: indices.to_vec(),
            },
            vec![self.clone()],
            shape,
            data,
        ))
    }

    /// Row-wise softmax of an m×n matrix, computed with max subtraction.
    /// NaN inputs propagate NaN.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Self::shape_err("softmax_rows", &s, &s));
        }
        let (m, n) = (s[0], s[1]);
        let src = self.data();
        let mut data = vec![0.0f32; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f64;
            for j in 0..n {
                let e = ((row[j] - max) as f64).exp();
                data[i * n + j] = e as f32;
                sum += e;
            }
            let inv = (1.0 / sum) as f32;
            for v in &mut data[i * n..(i + 1) * n] {
                *v *= inv;
            }
        }
        drop(src);
        Ok(result(Op::SoftmaxRows, vec![self.clone()], s, data))
    }

    /// Exact GELU, `x·Φ(x)` with Φ the standard normal CDF via erf.
    pub fn gelu(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|&x| gelu_scalar(x)).collect();
        Ok(result(Op::Gelu, vec![self.clone()], self.shape(), data))
    }

    /// Row-wise layer normalization of an n×d matrix followed by the affine
    /// transform `gamma ⊙ x̂ + beta`; eps stabilizes the variance denominator.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
        let s = self.shape();
        let (sg, sb) = (gamma.shape(), beta.shape());
        if s.len() != 2 || sg != vec![s[1]] || sb != vec![s[1]] {
            return Err(Self::shape_err("layer_norm", &s, &sg));
        }
        let (n, d) = (s[0], s[1]);
        let src = self.data();
        let g = gamma.data();
        let b = beta.data();
        let mut data = vec![0.0f32; n * d];
        for i in 0..n {
            let row = &src[i * d..(i + 1) * d];
            let mean = row.iter().map(|&x| x as f64).sum::<f64>() / d as f64;
            let var = row
                .iter()
                .map(|&x| {
                    let c = x as f64 - mean;
                    c * c
                })
                .sum::<f64>()
                / d as f64;
            let inv_std = 1.0 / (var + eps as f64).sqrt();
            for j in 0..d {
                let xhat = ((row[j] as f64 - mean) * inv_std) as f32;
                data[i * d + j] = g[j] * xhat + b[j];
            }
        }
        drop(src);
        drop(g);
        drop(b);
        Ok(result(
            Op::LayerNorm { eps },
            vec![self.clone(), gamma.clone(), beta.clone()],
            s,
            data,
        ))
    }

    /// Sum of all elements as a scalar tensor.
    pub fn sum_all(&self) -> Result<Tensor> {
        let sum = self.data().iter().map(|&x| x as f64).sum::<f64>() as f32;
        Ok(result(Op::SumAll, vec![self.clone()], vec![1], vec![sum]))
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let s = self.shape();
        if axis >= s.len() {
            return Err(Error::IndexOutOfRange {
                index: axis,
                len: s.len(),
            });
        }
        if s.len() == 1 {
            // reduces to the scalar mean
            let mean = self.data().iter().map(|&x| x as f64).sum::<f64>() / s[0] as f64;
            return Ok(result(
                Op::MeanAxis { axis },
                vec![self.clone()],
                vec![1],
                vec![mean as f32],
            ));
        }
        let outer: usize = s[..axis].iter().product();
        let n = s[axis];
        let inner: usize = s[axis + 1..].iter().product();
        let src = self.data();
        let mut data = vec![0.0f32; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut acc = 0.0f64;
                for k in 0..n {
                    acc += src[(o * n + k) * inner + i] as f64;
                }
                data[o * inner + i] = (acc / n as f64) as f32;
            }
        }
        drop(src);
        let mut shape: Vec<usize> = s[..axis].to_vec();
        shape.extend_from_slice(&s[axis + 1..]);
        Ok(result(Op::MeanAxis { axis }, vec![self.clone()], shape, data))
    }

    /// Mean cross-entropy between row logits and integer labels, with a
    /// numerically stable internal log-softmax.
    pub fn cross_entropy_with_logits(&self, labels: &[usize]) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Self::shape_err("cross_entropy", &s, &[labels.len()]));
        }
        let (n, c) = (s[0], s[1]);
        if labels.len() != n {
            return Err(Self::shape_err("cross_entropy", &s, &[labels.len()]));
        }
        let src = self.data();
        let mut probs = vec![0.0f32; n * c];
        let mut loss = 0.0f64;
        for i in 0..n {
            let label = labels[i];
            if label >= c {
                return Err(Error::IndexOutOfRange { index: label, len: c });
            }
            let row = &src[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f64;
            for j in 0..c {
                sum += ((row[j] - max) as f64).exp();
            }
            let lse = max as f64 + sum.ln();
            for j in 0..c {
                probs[i * c + j] = (row[j] as f64 - lse).exp() as f32;
            }
            loss += lse - row[label] as f64;
        }
        drop(src);
        let loss = (loss / n as f64) as f32;
        Ok(result(
            Op::CrossEntropy {
                labels: labels.to_vec(),
                probs,
            },
            vec![self.clone()],
            vec![1],
            vec![loss],
        ))
    }
}

// ── backward rules ──────────────────────────────────────────────────

impl Op {
    /// Vector-Jacobian products for each parent, `None` for parents that do
    /// not require gradients.
    pub(crate) fn backward(
        &self,
        grad_out: &[f32],
        out: &Inner,
        parents: &[Tensor],
    ) -> Vec<Option<Vec<f32>>> {
        let need: Vec<bool> = parents.iter().map(|p| p.requires_grad()).collect();
        match self {
            Op::Add => {
                let mk = |wanted: bool| wanted.then(|| grad_out.to_vec());
                vec![mk(need[0]), mk(need[1])]
            }
            Op::AddBias => {
                let d = parents[1].numel();
                let da = need[0].then(|| grad_out.to_vec());
                let db = need[1].then(|| {
                    let mut db = vec![0.0f32; d];
                    for chunk in grad_out.chunks_exact(d) {
                        for (acc, g) in db.iter_mut().zip(chunk) {
                            *acc += g;
                        }
                    }
                    db
                });
                vec![da, db]
            }
            Op::Scale(f) => {
                vec![need[0].then(|| grad_out.iter().map(|g| g * f).collect())]
            }
            Op::Matmul => {
                let sa = parents[0].shape();
                let sb = parents[1].shape();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let da = need[0].then(|| {
                    // dA = G · Bᵀ
                    let b = parents[1].data();
                    let mut da = vec![0.0f32; m * k];
                    gemm(
                        m, n, k, 1.0, grad_out, n as isize, 1, &b, 1, n as isize, 0.0, &mut da,
                        k as isize, 1,
                    );
                    da
                });
                let db = need[1].then(|| {
                    // dB = Aᵀ · G
                    let a = parents[0].data();
                    let mut db = vec![0.0f32; k * n];
                    gemm(
                        k, m, n, 1.0, &a, 1, k as isize, grad_out, n as isize, 1, 0.0, &mut db,
                        n as isize, 1,
                    );
                    db
                });
                vec![da, db]
            }
            Op::ModeProduct { mode } => {
                let st = parents[0].shape();
                let (a, b, c) = (st[0], st[1], st[2]);
                let r = parents[1].shape()[0];
                let dt = need[0].then(|| {
                    let mat = parents[1].data();
                    match mode {
                        // dt[i,j,k] = sum_q mat[q,i] g[q,j,k]
                        1 => {
                            let mut dt = vec![0.0f32; a * b * c];
                            gemm(
                                a,
                                r,
                                b * c,
                                1.0,
                                &mat,
                                1,
                                a as isize,
                                grad_out,
                                (b * c) as isize,
                                1,
                                0.0,
                                &mut dt,
                                (b * c) as isize,
                                1,
                            );
                            dt
                        }
                        // dt[i,j,k] = sum_q mat[q,j] g[i,q,k]
                        2 => {
                            let mut dt = vec![0.0f32; a * b * c];
                            for i in 0..a {
                                gemm(
                                    b,
                                    r,
                                    c,
                                    1.0,
                                    &mat,
                                    1,
                                    b as isize,
                                    &grad_out[i * r * c..],
                                    c as isize,
                                    1,
                                    0.0,
                                    &mut dt[i * b * c..],
                                    c as isize,
                                    1,
                                );
                            }
                            dt
                        }
                        // dt[i,j,k] = sum_q g[i,j,q] mat[q,k]
                        3 => {
                            let mut dt = vec![0.0f32; a * b * c];
                            for i in 0..a {
                                gemm(
                                    b,
                                    r,
                                    c,
                                    1.0,
                                    &grad_out[i * b * r..],
                                    r as isize,
                                    1,
                                    &mat,
                                    c as isize,
                                    1,
                                    0.0,
                                    &mut dt[i * b * c..],
                                    c as isize,
                                    1,
                                );
                            }
                            dt
                        }
                        _ => unreachable!(),
                    }
                });
                let dm = need[1].then(|| {
                    let t = parents[0].data();
                    match mode {
                        // dm[q,i] = sum_{j,k} g[q,j,k] t[i,j,k]
                        1 => {
                            let mut dm = vec![0.0f32; r * a];
                            gemm(
                                r,
                                b * c,
                                a,
                                1.0,
                                grad_out,
                                (b * c) as isize,
                                1,
                                &t,
                                1,
                                (b * c) as isize,
                                0.0,
                                &mut dm,
                                a as isize,
                                1,
                            );
                            dm
                        }
                        // dm[q,j] = sum_{i,k} g[i,q,k] t[i,j,k]
                        2 => {
                            let mut dm = vec![0.0f32; r * b];
                            for i in 0..a {
                                gemm(
                                    r,
                                    c,
                                    b,
                                    1.0,
                                    &grad_out[i * r * c..],
                                    c as isize,
                                    1,
                                    &t[i * b * c..],
                                    1,
                                    c as isize,
                                    1.0,
                                    &mut dm,
                                    b as isize,
                                    1,
                                );
                            }
                            dm
                        }
                        // dm[q,k] = sum_{i,j} g[i,j,q] t[i,j,k]
                        3 => {
                            let mut dm = vec![0.0f32; r * c];
                            for i in 0..a {
                                gemm(
                                    r,
                                    b,
                                    c,
                                    1.0,
                                    &grad_out[i * b * r..],
                                    1,
                                    r as isize,
                                    &t[i * b * c..],
                                    c as isize,
                                    1,
                                    1.0,
                                    &mut dm,
                                    c as isize,
                                    1,
                                );
                            }
                            dm
                        }
                        _ => unreachable!(),
                    }
                });
                vec![dt, dm]
            }
            Op::Transpose => {
                let s = parents[0].shape();
                vec![need[0].then(|| transpose_raw(grad_out, s[1], s[0]))]
            }
            Op::Reshape => {
                vec![need[0].then(|| grad_out.to_vec())]
            }
            Op::SliceRows { start } => {
                vec![need[0].then(|| {
                    let s = parents[0].shape();
                    let chunk: usize = s[1..].iter().product();
                    let mut da = vec![0.0f32; parents[0].numel()];
                    da[start * chunk..start * chunk + grad_out.len()].copy_from_slice(grad_out);
                    da
                })]
            }
            Op::SliceCols { start } => {
                vec![need[0].then(|| {
                    let s = parents[0].shape();
                    let (n, d) = (s[0], s[1]);
                    let w = out.shape[1];
                    let mut da = vec![0.0f32; n * d];
                    for i in 0..n {
                        da[i * d + start..i * d + start + w]
                            .copy_from_slice(&grad_out[i * w..(i + 1) * w]);
                    }
                    da
                })]
            }
            Op::ConcatRows => {
                let mut offset = 0;
                parents
                    .iter()
                    .zip(&need)
                    .map(|(p, &wanted)| {
                        let len = p.numel();
                        let piece =
                            wanted.then(|| grad_out[offset..offset + len].to_vec());
                        offset += len;
                        piece
                    })
                    .collect()
            }
            Op::ConcatCols => {
                let n = out.shape[0];
                let total = out.shape[1];
                let mut offset = 0;
                parents
                    .iter()
                    .zip(&need)
                    .map(|(p, &wanted)| {
                        let w = p.shape()[1];
                        let piece = wanted.then(|| {
                            let mut dp = vec![0.0f32; n * w];
                            for i in 0..n {
                                dp[i * w..(i + 1) * w].copy_from_slice(
                                    &grad_out[i * total + offset..i * total + offset + w],
                                );
                            }
                            dp
                        });
                        offset += w;
                        piece
                    })
                    .collect()
            }
            Op::GatherRows { indices } => {
                vec![need[0].then(|| {
                    let s = parents[0].shape();
                    let chunk: usize = s[1..].iter().product();
                    let mut da = vec![0.0f32; parents[0].numel()];
                    for (row, &idx) in indices.iter().enumerate() {
                        for j in 0..chunk {
                            da[idx * chunk + j] += grad_out[row * chunk + j];
                        }
                    }
                    da
                })]
            }
            Op::SoftmaxRows => {
                vec![need[0].then(|| {
                    let (m, n) = (out.shape[0], out.shape[1]);
                    let y = &out.data;
                    let mut dx = vec![0.0f32; m * n];
                    for i in 0..m {
                        let yr = &y[i * n..(i + 1) * n];
                        let gr = &grad_out[i * n..(i + 1) * n];
                        let dot: f32 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dx[i * n + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    dx
                })]
            }
            Op::Gelu => {
                vec![need[0].then(|| {
                    let x = parents[0].data();
                    grad_out
                        .iter()
                        .zip(x.iter())
                        .map(|(g, &xv)| g * gelu_grad_scalar(xv))
                        .collect()
                })]
            }
            Op::LayerNorm { eps } => {
                let s = parents[0].shape();
                let (n, d) = (s[0], s[1]);
                let x = parents[0].data();
                let gamma = parents[1].data();

                // recompute row statistics from the input
                let mut xhat = vec![0.0f32; n * d];
                let mut inv_std = vec![0.0f64; n];
                for i in 0..n {
                    let row = &x[i * d..(i + 1) * d];
                    let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
                    let var = row
                        .iter()
                        .map(|&v| {
                            let c = v as f64 - mean;
                            c * c
                        })
                        .sum::<f64>()
                        / d as f64;
                    let is = 1.0 / (var + *eps as f64).sqrt();
                    inv_std[i] = is;
                    for j in 0..d {
                        xhat[i * d + j] = ((row[j] as f64 - mean) * is) as f32;
                    }
                }

                let dx = need[0].then(|| {
                    let mut dx = vec![0.0f32; n * d];
                    for i in 0..n {
                        let mut sum_dxhat = 0.0f64;
                        let mut sum_dxhat_xhat = 0.0f64;
                        for j in 0..d {
                            let dxh = (grad_out[i * d + j] * gamma[j]) as f64;
                            sum_dxhat += dxh;
                            sum_dxhat_xhat += dxh * xhat[i * d + j] as f64;
                        }
                        let m1 = sum_dxhat / d as f64;
                        let m2 = sum_dxhat_xhat / d as f64;
                        for j in 0..d {
                            let dxh = (grad_out[i * d + j] * gamma[j]) as f64;
                            dx[i * d + j] =
                                (inv_std[i] * (dxh - m1 - xhat[i * d + j] as f64 * m2)) as f32;
                        }
                    }
                    dx
                });
                let dgamma = need[1].then(|| {
                    let mut dg = vec![0.0f32; d];
                    for i in 0..n {
                        for j in 0..d {
                            dg[j] += grad_out[i * d + j] * xhat[i * d + j];
                        }
                    }
                    dg
                });
                let dbeta = need[2].then(|| {
                    let mut db = vec![0.0f32; d];
                    for i in 0..n {
                        for j in 0..d {
                            db[j] += grad_out[i * d + j];
                        }
                    }
                    db
                });
                vec![dx, dgamma, dbeta]
            }
            Op::SumAll => {
                vec![need[0].then(|| vec![grad_out[0]; parents[0].numel()])]
            }
            Op::MeanAxis { axis } => {
                vec![need[0].then(|| {
                    let s = parents[0].shape();
                    let outer: usize = s[..*axis].iter().product();
                    let n = s[*axis];
                    let inner: usize = s[*axis + 1..].iter().product();
                    let inv = 1.0 / n as f32;
                    let mut da = vec![0.0f32; parents[0].numel()];
                    for o in 0..outer {
                        for k in 0..n {
                            for i in 0..inner {
                                da[(o * n + k) * inner + i] = grad_out[o * inner + i] * inv;
                            }
                        }
                    }
                    da
                })]
            }
            Op::CrossEntropy { labels, probs } => {
                vec![need[0].then(|| {
                    let n = labels.len();
                    let c = probs.len() / n;
                    let scale = grad_out[0] / n as f32;
                    let mut dl = vec![0.0f32; n * c];
                    for i in 0..n {
                        for j in 0..c {
                            let indicator = if j == labels[i] { 1.0 } else { 0.0 };
                            dl[i * c + j] = scale * (probs[i * c + j] - indicator);
                        }
                    }
                    dl
                })]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::RngExt;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::super::gradcheck::{check_entries, GradCheckConfig};
    use super::super::Tensor;
    use crate::error::{Error, Result};

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, rand_vec(rng, n)).unwrap()
    }

    /// Scalar probe `mean(flatten(t) · w)` keeping loss values O(1) so the
    /// finite-difference signal stays above f32 rounding noise.
    fn weighted_mean(t: &Tensor, w: &Tensor) -> Result<Tensor> {
        let n = t.numel();
        t.reshape(&[1, n])?.matmul(w)?.scale(1.0 / n as f32)?.sum_all()
    }

    fn probe_weights(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
        Tensor::from_vec(&[n, 1], rand_vec(rng, n)).unwrap()
    }

    fn assert_close(got: &[f32], want: &[f32], tol: f32) {
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() <= tol, "{g} vs {w}");
        }
    }

    // ── matmul ──────────────────────────────────────────────────────

    #[test]
    fn matmul_identity() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = Tensor::eye(2).matmul(&a).unwrap();
        assert_eq!(out.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_hand_arithmetic() {
        let a = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(&[2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().to_vec(), vec![11.0]);
    }

    #[test]
    fn matmul_shape_mismatch_reports_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        match a.matmul(&b).unwrap_err() {
            Error::ShapeMismatch { lhs, rhs, .. } => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![4, 2]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn matmul_grads_match_fd_5x7_7x3() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_tensor(&mut rng, &[5, 7]).with_grad();
        let b = rand_tensor(&mut rng, &[7, 3]).with_grad();
        let w = probe_weights(&mut rng, 15);
        let cfg = GradCheckConfig::default();
        for leaf in [&a, &b] {
            let report =
                check_entries(leaf, None, &cfg, || weighted_mean(&a.matmul(&b)?, &w)).unwrap();
            assert!(report.ok(), "{report:?}");
        }
    }

    // ── mode product ────────────────────────────────────────────────

    #[test]
    fn mode2_identity_leaves_tensor_unchanged() {
        let t = Tensor::full(&[2, 3, 3], 1.0);
        let out = t.mode_product(&Tensor::eye(3), 2).unwrap();
        assert_eq!(out.shape(), vec![2, 3, 3]);
        assert_eq!(out.to_vec(), t.to_vec());
    }

    #[test]
    fn mode1_identity_leaves_tensor_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = rand_tensor(&mut rng, &[4, 2, 3]);
        let out = t.mode_product(&Tensor::eye(4), 1).unwrap();
        assert_eq!(out.to_vec(), t.to_vec());
    }

    #[test]
    fn mode3_matches_bruteforce_triple_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b, c, r) = (2, 3, 4, 5);
        let t = rand_tensor(&mut rng, &[a, b, c]);
        let m = rand_tensor(&mut rng, &[r, c]);
        let out = t.mode_product(&m, 3).unwrap();
        assert_eq!(out.shape(), vec![a, b, r]);
        let (td, md) = (t.to_vec(), m.to_vec());
        let mut want = vec![0.0f32; a * b * r];
        for i in 0..a {
            for j in 0..b {
                for q in 0..r {
                    let mut acc = 0.0;
                    for k in 0..c {
                        acc += td[(i * b + j) * c + k] * md[q * c + k];
                    }
                    want[(i * b + j) * r + q] = acc;
                }
            }
        }
        assert_close(&out.to_vec(), &want, 1e-6);
    }

    #[test]
    fn mode_product_rejects_invalid_mode() {
        let t = Tensor::zeros(&[2, 3, 4]);
        let m = Tensor::zeros(&[5, 4]);
        assert!(matches!(
            t.mode_product(&m, 0).unwrap_err(),
            Error::InvalidMode { mode: 0 }
        ));
        assert!(matches!(
            t.mode_product(&m, 4).unwrap_err(),
            Error::InvalidMode { mode: 4 }
        ));
    }

    #[test]
    fn mode_product_grads_match_fd_all_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = GradCheckConfig::default();
        let dims = [3usize, 4, 2];
        for mode in 1..=3usize {
            let t = rand_tensor(&mut rng, &dims).with_grad();
            let m = rand_tensor(&mut rng, &[3, dims[mode - 1]]).with_grad();
            let out_len = dims.iter().product::<usize>() / dims[mode - 1] * 3;
            let w = probe_weights(&mut rng, out_len);
            for leaf in [&t, &m] {
                let report = check_entries(leaf, None, &cfg, || {
                    weighted_mean(&t.mode_product(&m, mode)?, &w)
                })
                .unwrap();
                assert!(report.ok(), "mode {mode}: {report:?}");
            }
        }
    }

    // ── softmax ─────────────────────────────────────────────────────

    #[test]
    fn softmax_symmetry() {
        let out = Tensor::from_vec(&[1, 2], vec![0.0, 0.0])
            .unwrap()
            .softmax_rows()
            .unwrap();
        assert_eq!(out.to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_large_inputs_do_not_overflow() {
        let out = Tensor::from_vec(&[1, 2], vec![1000.0, 1000.0])
            .unwrap()
            .softmax_rows()
            .unwrap();
        assert_eq!(out.to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = rand_tensor(&mut rng, &[4, 6]).softmax_rows().unwrap();
        let data = out.to_vec();
        for row in data.chunks(6) {
            let sum: f32 = row.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-6);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn softmax_propagates_nan() {
        let out = Tensor::from_vec(&[1, 2], vec![f32::NAN, 0.0])
            .unwrap()
            .softmax_rows()
            .unwrap();
        assert!(out.to_vec().iter().all(|v| v.is_nan()));
    }

    #[test]
    fn softmax_grads_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_tensor(&mut rng, &[3, 5]).with_grad();
        let w = probe_weights(&mut rng, 15);
        let report = check_entries(&x, None, &GradCheckConfig::default(), || {
            weighted_mean(&x.softmax_rows()?, &w)
        })
        .unwrap();
        assert!(report.ok(), "{report:?}");
    }

    // ── gelu ────────────────────────────────────────────────────────

    #[test]
    fn gelu_point_values() {
        let x = Tensor::from_vec(&[3], vec![0.0, 10.0, -10.0]).unwrap();
        let y = x.gelu().unwrap().to_vec();
        assert_eq!(y[0], 0.0);
        assert!((y[1] - 10.0).abs() <= 1e-6);
        assert!(y[2].abs() <= 1e-6);
    }

    #[test]
    fn gelu_gradient_at_half_matches_fd() {
        let x = Tensor::from_vec(&[1], vec![0.5]).unwrap().with_grad();
        let report = check_entries(&x, None, &GradCheckConfig::default(), || {
            x.gelu()?.sum_all()
        })
        .unwrap();
        assert!(report.ok(), "{report:?}");
    }

    // ── layer norm ──────────────────────────────────────────────────

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let x = Tensor::full(&[2, 4], 3.7);
        let out = x
            .layer_norm(&Tensor::full(&[4], 1.0), &Tensor::zeros(&[4]), 1e-6)
            .unwrap();
        assert!(out.to_vec().iter().all(|&v| v.abs() <= 1e-6));
    }

    #[test]
    fn layer_norm_row_mean_equals_beta_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = 8;
        let x = rand_tensor(&mut rng, &[3, d]);
        let beta = rand_tensor(&mut rng, &[d]);
        let beta_mean: f32 = beta.to_vec().iter().sum::<f32>() / d as f32;
        let out = x
            .layer_norm(&Tensor::full(&[d], 1.0), &beta, 1e-6)
            .unwrap();
        for row in out.to_vec().chunks(d) {
            let mean: f32 = row.iter().sum::<f32>() / d as f32;
            assert!((mean - beta_mean).abs() <= 1e-5);
        }
    }

    #[test]
    fn layer_norm_grads_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = 6;
        let x = rand_tensor(&mut rng, &[4, d]).with_grad();
        let gamma = rand_tensor(&mut rng, &[d]).with_grad();
        let beta = rand_tensor(&mut rng, &[d]).with_grad();
        let w = probe_weights(&mut rng, 4 * d);
        let cfg = GradCheckConfig::default();
        for leaf in [&x, &gamma, &beta] {
            let report = check_entries(leaf, None, &cfg, || {
                weighted_mean(&x.layer_norm(&gamma, &beta, 1e-6)?, &w)
            })
            .unwrap();
            assert!(report.ok(), "{report:?}");
        }
    }

    // ── plumbing primitives ─────────────────────────────────────────

    #[test]
    fn chained_matmul_grads_match_fd() {
        // loss = sum((X·U)·V): the factor-style two-hop product
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = rand_tensor(&mut rng, &[3, 4]);
        let u = rand_tensor(&mut rng, &[4, 2]).with_grad();
        let v = rand_tensor(&mut rng, &[2, 4]).with_grad();
        let cfg = GradCheckConfig::default();
        for leaf in [&u, &v] {
            let report = check_entries(leaf, None, &cfg, || {
                x.matmul(&u)?.matmul(&v)?.sum_all()?.scale(1.0 / 12.0)
            })
            .unwrap();
            assert!(report.ok(), "{report:?}");
        }
    }

    #[test]
    fn reshape_round_trip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = rand_tensor(&mut rng, &[3, 4, 2]);
        let back = x.reshape(&[6, 4]).unwrap().reshape(&[3, 4, 2]).unwrap();
        assert_eq!(back.to_vec(), x.to_vec());
    }

    #[test]
    fn transpose_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_tensor(&mut rng, &[3, 5]);
        assert_eq!(
            x.transpose().unwrap().transpose().unwrap().to_vec(),
            x.to_vec()
        );
    }

    #[test]
    fn slice_and_concat_rows_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = rand_tensor(&mut rng, &[5, 3]);
        let top = x.slice_rows(0, 2).unwrap();
        let bottom = x.slice_rows(2, 5).unwrap();
        let back = Tensor::concat_rows(&[&top, &bottom]).unwrap();
        assert_eq!(back.to_vec(), x.to_vec());
        assert!(x.slice_rows(3, 6).is_err());
        assert!(x.slice_rows(2, 2).is_err());
    }

    #[test]
    fn slice_and_concat_cols_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = rand_tensor(&mut rng, &[4, 6]);
        let left = x.slice_cols(0, 2).unwrap();
        let right = x.slice_cols(2, 6).unwrap();
        let back = Tensor::concat_cols(&[&left, &right]).unwrap();
        assert_eq!(back.to_vec(), x.to_vec());
    }

    #[test]
    fn gather_rows_selects_and_backpropagates() {
        let x = Tensor::from_vec(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
            .unwrap()
            .with_grad();
        let picked = x.gather_rows(&[2, 0, 2]).unwrap();
        assert_eq!(picked.to_vec(), vec![5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        picked.sum_all().unwrap().backward().unwrap();
        // row 2 appears twice, row 1 never
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
        assert!(x.gather_rows(&[3]).is_err());
    }

    #[test]
    fn mean_axis_values_and_shapes() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let m0 = x.mean_axis(0).unwrap();
        assert_eq!(m0.shape(), vec![3]);
        assert_close(&m0.to_vec(), &[2.5, 3.5, 4.5], 1e-6);
        let m1 = x.mean_axis(1).unwrap();
        assert_eq!(m1.shape(), vec![2]);
        assert_close(&m1.to_vec(), &[2.0, 5.0], 1e-6);
        assert!(x.mean_axis(2).is_err());
    }

    #[test]
    fn add_bias_broadcasts_rows_and_backpropagates() {
        let x = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0])
            .unwrap()
            .with_grad();
        let b = Tensor::from_vec(&[2], vec![10.0, 20.0]).unwrap().with_grad();
        let out = x.add_bias(&b).unwrap();
        assert_eq!(out.to_vec(), vec![11.0, 22.0, 13.0, 24.0]);
        out.sum_all().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_log_classes() {
        let logits = Tensor::zeros(&[2, 4]);
        let loss = logits.cross_entropy_with_logits(&[0, 3]).unwrap();
        assert!((loss.item() - (4.0f32).ln()).abs() <= 1e-6);
        assert!(logits.cross_entropy_with_logits(&[0]).is_err());
        assert!(logits.cross_entropy_with_logits(&[0, 4]).is_err());
    }

    #[test]
    fn cross_entropy_grads_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let logits = rand_tensor(&mut rng, &[4, 3]).with_grad();
        let labels = vec![0usize, 2, 1, 1];
        let report = check_entries(&logits, None, &GradCheckConfig::default(), || {
            logits.cross_entropy_with_logits(&labels)
        })
        .unwrap();
        assert!(report.ok(), "{report:?}");
    }

    /// Spec invariant: every differentiable op passes central finite
    /// differences at ε=1e-3 on random inputs in [-1,1] for 20 seeds.
    #[test]
    fn all_ops_pass_fd_over_twenty_seeds() {
        let cfg = GradCheckConfig::default();
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[3, 4]).with_grad();
            let y = rand_tensor(&mut rng, &[3, 4]);
            let w12 = probe_weights(&mut rng, 12);
            let labels = vec![1usize, 0, 3];

            let cases: Vec<(&str, Box<dyn FnMut() -> Result<Tensor>>)> = vec![
                ("add", Box::new(|| weighted_mean(&x.add(&y)?, &w12))),
                ("scale", Box::new(|| weighted_mean(&x.scale(-0.7)?, &w12))),
                ("transpose", Box::new(|| weighted_mean(&x.transpose()?, &w12))),
                ("reshape", Box::new(|| weighted_mean(&x.reshape(&[2, 6])?, &w12))),
                (
                    "slice_rows",
                    Box::new(|| {
                        let w = probe_weights(&mut ChaCha8Rng::seed_from_u64(seed + 100), 8);
                        weighted_mean(&x.slice_rows(1, 3)?, &w)
                    }),
                ),
                (
                    "slice_cols",
                    Box::new(|| {
                        let w = probe_weights(&mut ChaCha8Rng::seed_from_u64(seed + 200), 6);
                        weighted_mean(&x.slice_cols(1, 3)?, &w)
                    }),
                ),
                (
                    "concat_rows",
                    Box::new(|| {
                        let w = probe_weights(&mut ChaCha8Rng::seed_from_u64(seed + 300), 24);
                        weighted_mean(&Tensor::concat_rows(&[&x, &y])?, &w)
                    }),
                ),
                (
                    "concat_cols",
                    Box::new(|| {
                        let w = probe_weights(&mut ChaCha8Rng::seed_from_u64(seed + 400), 24);
                        weighted_mean(&Tensor::concat_cols(&[&x, &y])?, &w)
                    }),
                ),
                (
                    "gather_rows",
                    Box::new(|| {
                        let w = probe_weights(&mut ChaCha8Rng::seed_from_u64(seed + 500), 16);
                        weighted_mean(&x.gather_rows(&[0, 2, 2, 1])?, &w)
                    }),
                ),
                ("gelu", Box::new(|| weighted_mean(&x.gelu()?, &w12))),
                ("softmax", Box::new(|| weighted_mean(&x.softmax_rows()?, &w12))),
                (
                    "mean_axis0",
                    Box::new(|| {
                        let w = probe_weights(&mut ChaCha8Rng::seed_from_u64(seed + 600), 4);
                        weighted_mean(&x.mean_axis(0)?, &w)
                    }),
                ),
                ("sum_all", Box::new(|| x.sum_all()?.scale(1.0 / 12.0))),
                (
                    "cross_entropy",
                    Box::new(|| x.slice_cols(0, 4)?.cross_entropy_with_logits(&labels)),
                ),
            ];
            for (name, mut loss) in cases {
                let report = check_entries(&x, None, &cfg, &mut loss).unwrap();
                assert!(report.ok(), "seed {seed}, op {name}: {report:?}");
            }
        }
    }
}
