//! Weight-increment factorizations.
//!
//! The virtual increment tensor ΔW ∈ R^{M×d×d} stacks every tensorized d×d
//! weight block of the backbone. It is never stored densely during training;
//! instead one of three factor formats represents it:
//!
//! - matrix-batch: each slice factored independently, ΔW_i = s·U_i·V_i
//!   (restricted to the query/value slices this is exactly LoRA);
//! - tensor-train: shared side factors and per-slice cores,
//!   ΔW_{i,j,k} = s·Σ_{t₁,t₂} Sigma_{i,t₁,t₂}·U_{j,t₁}·V_{k,t₂};
//! - tucker: a small core with three mode factors,
//!   ΔW_{i,j,k} = s·Σ_{t₁,t₂,t₃} C_{t₁,t₂,t₃}·P_{i,t₁}·U_{j,t₂}·V_{k,t₃}.
//!
//! In every format V starts at zero and the other factors start random, so
//! ΔW is exactly zero before the first optimizer step. `contract_forward`
//! applies one slice to activations without materializing ΔW, keeping
//! intermediates at O(N·r); `expand` materializes it for merging and for use
//! as an independent oracle in tests.

use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{matmul_raw, mode_product_raw, Tensor};

/// Which decomposition represents the increment tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorFormat {
    MatrixBatch,
    TensorTrain,
    Tucker,
}

impl FactorFormat {
    pub fn tag(self) -> u8 {
        match self {
            FactorFormat::MatrixBatch => 0,
            FactorFormat::TensorTrain => 1,
            FactorFormat::Tucker => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(FactorFormat::MatrixBatch),
            1 => Ok(FactorFormat::TensorTrain),
            2 => Ok(FactorFormat::Tucker),
            other => Err(Error::DataFormat(format!("unknown format tag {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FactorFormat::MatrixBatch => "mb",
            FactorFormat::TensorTrain => "tt",
            FactorFormat::Tucker => "tk",
        }
    }
}

/// Per-mode ranks. Formats use a prefix: matrix-batch reads `r1`,
/// tensor-train `r1, r2`, tucker all three.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ranks {
    pub r1: usize,
    pub r2: usize,
    pub r3: usize,
}

impl Ranks {
    /// Equal ranks across modes, the default setting.
    pub fn uniform(r: usize) -> Ranks {
        Ranks { r1: r, r2: r, r3: r }
    }
}

enum Factors {
    MatrixBatch {
        /// M×d×r
        u: Tensor,
        /// M×r×d, zero-initialized
        v: Tensor,
    },
    TensorTrain {
        /// d×r1
        u: Tensor,
        /// d×r2, zero-initialized
        v: Tensor,
        /// M×r1×r2
        sigma: Tensor,
    },
    Tucker {
        /// M×r1
        p: Tensor,
        /// d×r2
        u: Tensor,
        /// d×r3, zero-initialized
        v: Tensor,
        /// r1×r2×r3
        core: Tensor,
    },
}

/// Trainable factors of the increment tensor plus the scale hyperparameter.
///
/// This is the entire per-task adaptation state apart from the
/// classification head.
pub struct FactorSet {
    format: FactorFormat,
    m: usize,
    d: usize,
    ranks: Ranks,
    scale_s: f32,
    factors: Factors,
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], contracted_rank: usize) -> Tensor {
    let bound = 1.0 / (contracted_rank as f32).sqrt();
    let len: usize = shape.iter().product();
    let data: Vec<f32> = (0..len).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_vec(shape, data).expect("shape/data consistent")
}

impl FactorSet {
    /// Builds a freshly initialized factor set.
    ///
    /// V is all zeros; every other factor draws i.i.d. uniform values on
    /// [−1/√r, 1/√r] with r that factor's contracted rank, so the expanded
    /// increment starts exactly zero while keeping initial activation scale
    /// bounded. Deterministic given `seed`; the sampling order is fixed
    /// (MB: U; TT: U, Sigma; TK: P, U, C).
    pub fn init(
        format: FactorFormat,
        m: usize,
        d: usize,
        ranks: Ranks,
        scale_s: f32,
        seed: u64,
    ) -> Result<FactorSet> {
        if m == 0 || d == 0 {
            return Err(Error::Config(format!(
                "factor set needs m ≥ 1 and d ≥ 1, got m={m}, d={d}"
            )));
        }
        if !(scale_s.is_finite() && scale_s > 0.0) {
            return Err(Error::Config(format!("scale s must be positive, got {scale_s}")));
        }
        let used_ranks: &[usize] = match format {
            FactorFormat::MatrixBatch => &[ranks.r1],
            FactorFormat::TensorTrain => &[ranks.r1, ranks.r2],
            FactorFormat::Tucker => &[ranks.r1, ranks.r2, ranks.r3],
        };
        for &r in used_ranks {
            if r == 0 || r >= d {
                return Err(Error::Config(format!(
                    "rank {r} must satisfy 1 ≤ r < d (d = {d})"
                )));
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let factors = match format {
            FactorFormat::MatrixBatch => {
                let r = ranks.r1;
                Factors::MatrixBatch {
                    u: uniform_tensor(&mut rng, &[m, d, r], r),
                    v: Tensor::zeros(&[m, r, d]),
                }
            }
            FactorFormat::TensorTrain => Factors::TensorTrain {
                u: uniform_tensor(&mut rng, &[d, ranks.r1], ranks.r1),
                v: Tensor::zeros(&[d, ranks.r2]),
                sigma: uniform_tensor(&mut rng, &[m, ranks.r1, ranks.r2], ranks.r1),
            },
            FactorFormat::Tucker => Factors::Tucker {
                p: uniform_tensor(&mut rng, &[m, ranks.r1], ranks.r1),
                u: uniform_tensor(&mut rng, &[d, ranks.r2], ranks.r2),
                v: Tensor::zeros(&[d, ranks.r3]),
                core: uniform_tensor(&mut rng, &[ranks.r1, ranks.r2, ranks.r3], ranks.r1),
            },
        };
        Ok(FactorSet {
            format,
            m,
            d,
            ranks,
            scale_s,
            factors,
        })
    }

    pub fn format(&self) -> FactorFormat {
        self.format
    }

    pub fn slice_count(&self) -> usize {
        self.m
    }

    pub fn hidden_dim(&self) -> usize {
        self.d
    }

    pub fn ranks(&self) -> Ranks {
        self.ranks
    }

    pub fn scale(&self) -> f32 {
        self.scale_s
    }

    /// The trainable factor tensors, in the checkpoint payload order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        match &self.factors {
            Factors::MatrixBatch { u, v } => vec![u, v],
            Factors::TensorTrain { u, v, sigma } => vec![u, v, sigma],
            Factors::Tucker { p, u, v, core } => vec![p, u, v, core],
        }
    }

    /// Enables or disables gradient tracking on every factor.
    pub fn set_trainable(&self, yes: bool) {
        for t in self.tensors() {
            t.set_requires_grad(yes);
        }
    }

    pub fn zero_grads(&self) {
        for t in self.tensors() {
            t.zero_grad();
        }
    }

    /// Exact count of trainable scalars in this set.
    pub fn trainable_param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    /// Rebuilds a factor set from raw payload buffers (checkpoint loading).
    pub fn from_payload(
        format: FactorFormat,
        m: usize,
        d: usize,
        ranks: Ranks,
        scale_s: f32,
        payload: Vec<Vec<f32>>,
    ) -> Result<FactorSet> {
        fn expect(payload: &[Vec<f32>], count: usize) -> Result<()> {
            if payload.len() != count {
                return Err(Error::DataFormat(format!(
                    "expected {count} factor payloads, got {}",
                    payload.len()
                )));
            }
            Ok(())
        }
        let mut payload = payload;
        let factors = match format {
            FactorFormat::MatrixBatch => {
                expect(&payload, 2)?;
                let v = payload.pop().unwrap();
                let u = payload.pop().unwrap();
                Factors::MatrixBatch {
                    u: Tensor::from_vec(&[m, d, ranks.r1], u)?,
                    v: Tensor::from_vec(&[m, ranks.r1, d], v)?,
                }
            }
            FactorFormat::TensorTrain => {
                expect(&payload, 3)?;
                let sigma = payload.pop().unwrap();
                let v = payload.pop().unwrap();
                let u = payload.pop().unwrap();
                Factors::TensorTrain {
                    u: Tensor::from_vec(&[d, ranks.r1], u)?,
                    v: Tensor::from_vec(&[d, ranks.r2], v)?,
                    sigma: Tensor::from_vec(&[m, ranks.r1, ranks.r2], sigma)?,
                }
            }
            FactorFormat::Tucker => {
                expect(&payload, 4)?;
                let core = payload.pop().unwrap();
                let v = payload.pop().unwrap();
                let u = payload.pop().unwrap();
                let p = payload.pop().unwrap();
                Factors::Tucker {
                    p: Tensor::from_vec(&[m, ranks.r1], p)?,
                    u: Tensor::from_vec(&[d, ranks.r2], u)?,
                    v: Tensor::from_vec(&[d, ranks.r3], v)?,
                    core: Tensor::from_vec(&[ranks.r1, ranks.r2, ranks.r3], core)?,
                }
            }
        };
        Ok(FactorSet {
            format,
            m,
            d,
            ranks,
            scale_s,
            factors,
        })
    }

    /// Materializes the full increment tensor ΔW as a flat M×d×d buffer.
    pub fn expand(&self) -> Vec<f32> {
        let (m, d, s) = (self.m, self.d, self.scale_s);
        let mut out = match &self.factors {
            Factors::MatrixBatch { u, v } => {
                let r = self.ranks.r1;
                let ud = u.data();
                let vd = v.data();
                let mut out = vec![0.0f32; m * d * d];
                for i in 0..m {
                    let slice = matmul_raw(&ud[i * d * r..(i + 1) * d * r], &vd[i * r * d..(i + 1) * r * d], d, r, d);
                    out[i * d * d..(i + 1) * d * d].copy_from_slice(&slice);
                }
                out
            }
            Factors::TensorTrain { u, v, sigma } => {
                // ΔW_{i,j,k} = Σ_{t₁,t₂} Sigma_{i,t₁,t₂} U_{j,t₁} V_{k,t₂}
                let (r1, r2) = (self.ranks.r1, self.ranks.r2);
                let step = mode_product_raw(&sigma.data(), (m, r1, r2), &u.data(), d, 2);
                mode_product_raw(&step, (m, d, r2), &v.data(), d, 3)
            }
            Factors::Tucker { p, u, v, core } => {
                // ΔW_{i,j,k} = Σ_{t₁,t₂,t₃} C_{t₁,t₂,t₃} P_{i,t₁} U_{j,t₂} V_{k,t₃}
                let Ranks { r1, r2, r3 } = self.ranks;
                let step1 = mode_product_raw(&core.data(), (r1, r2, r3), &p.data(), m, 1);
                let step2 = mode_product_raw(&step1, (m, r2, r3), &u.data(), d, 2);
                mode_product_raw(&step2, (m, d, r3), &v.data(), d, 3)
            }
        };
        for x in &mut out {
            *x *= s;
        }
        out
    }

    /// One d×d increment slice, scaled by s.
    pub fn expand_slice(&self, index: usize) -> Result<Vec<f32>> {
        if index >= self.m {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.m,
            });
        }
        let d = self.d;
        let mut out = match &self.factors {
            Factors::MatrixBatch { u, v } => {
                let r = self.ranks.r1;
                matmul_raw(
                    &u.data()[index * d * r..(index + 1) * d * r],
                    &v.data()[index * r * d..(index + 1) * r * d],
                    d,
                    r,
                    d,
                )
            }
            Factors::TensorTrain { u, v, sigma } => {
                let (r1, r2) = (self.ranks.r1, self.ranks.r2);
                // U·Sigma_i·Vᵀ
                let us = matmul_raw(
                    &u.data(),
                    &sigma.data()[index * r1 * r2..(index + 1) * r1 * r2],
                    d,
                    r1,
                    r2,
                );
                let mut out = vec![0.0f32; d * d];
                // (U·Sigma_i) [d×r2] times Vᵀ [r2×d]
                let vd = v.data();
                for j in 0..d {
                    for t2 in 0..r2 {
                        let a = us[j * r2 + t2];
                        if a != 0.0 {
                            for k in 0..d {
                                out[j * d + k] += a * vd[k * r2 + t2];
                            }
                        }
                    }
                }
                out
            }
            Factors::Tucker { p, u, v, core } => {
                let Ranks { r1, r2, r3 } = self.ranks;
                // G_i = Σ_{t₁} P_{i,t₁}·C_{t₁,:,:}
                let pd = p.data();
                let cd = core.data();
                let mut g = vec![0.0f32; r2 * r3];
                for t1 in 0..r1 {
                    let w = pd[index * r1 + t1];
                    for e in 0..r2 * r3 {
                        g[e] += w * cd[t1 * r2 * r3 + e];
                    }
                }
                let ug = matmul_raw(&u.data(), &g, d, r2, r3);
                let vd = v.data();
                let mut out = vec![0.0f32; d * d];
                for j in 0..d {
                    for t3 in 0..r3 {
                        let a = ug[j * r3 + t3];
                        if a != 0.0 {
                            for k in 0..d {
                                out[j * d + k] += a * vd[k * r3 + t3];
                            }
                        }
                    }
                }
                out
            }
        };
        for x in &mut out {
            *x *= self.scale_s;
        }
        Ok(out)
    }

    /// Applies slice `index` of the increment to activations without
    /// materializing ΔW: returns `s · X · ΔW_index` with gradients flowing
    /// into every factor. Intermediates stay at N×r.
    pub fn contract_forward(&self, index: usize, x: &Tensor) -> Result<Tensor> {
        if index >= self.m {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.m,
            });
        }
        let d = self.d;
        let xs = x.shape();
        if xs.len() != 2 || xs[1] != d {
            return Err(Error::ShapeMismatch {
                op: "contract_forward",
                lhs: xs,
                rhs: vec![d, d],
            });
        }
        match &self.factors {
            Factors::MatrixBatch { u, v } => {
                let r = self.ranks.r1;
                let u_i = u.slice_rows(index, index + 1)?.reshape(&[d, r])?;
                let v_i = v.slice_rows(index, index + 1)?.reshape(&[r, d])?;
                x.matmul(&u_i)?.matmul(&v_i)?.scale(self.scale_s)
            }
            Factors::TensorTrain { u, v, sigma } => {
                let (r1, r2) = (self.ranks.r1, self.ranks.r2);
                let sigma_i = sigma.slice_rows(index, index + 1)?.reshape(&[r1, r2])?;
                x.matmul(u)?
                    .matmul(&sigma_i)?
                    .matmul(&v.transpose()?)?
                    .scale(self.scale_s)
            }
            Factors::Tucker { p, u, v, core } => {
                let Ranks { r1: _, r2, r3 } = self.ranks;
                // per-slice core G_i = Σ_{t₁} P_{i,t₁}·C_{t₁,:,:}, rebuilt
                // each forward so gradients reach P and C
                let p_i = p.slice_rows(index, index + 1)?;
                let g_i = core.mode_product(&p_i, 1)?.reshape(&[r2, r3])?;
                x.matmul(u)?
                    .matmul(&g_i)?
                    .matmul(&v.transpose()?)?
                    .scale(self.scale_s)
            }
        }
    }

    /// Adds every expanded slice into the matching dense d×d matrix.
    /// The factor set itself is unchanged.
    pub fn merge_into(&self, weights: &mut [Vec<f32>]) -> Result<()> {
        if weights.len() != self.m {
            return Err(Error::Config(format!(
                "merge_into: expected {} weight matrices, got {}",
                self.m,
                weights.len()
            )));
        }
        let delta = self.expand();
        let dd = self.d * self.d;
        for (i, w) in weights.iter_mut().enumerate() {
            if w.len() != dd {
                return Err(Error::Config(format!(
                    "merge_into: weight {i} has {} entries, expected {dd}",
                    w.len()
                )));
            }
            for (wv, dv) in w.iter_mut().zip(&delta[i * dd..(i + 1) * dd]) {
                *wv += dv;
            }
        }
        Ok(())
    }
}

/// Closed-form count of trainable factor entries.
///
/// With equal ranks r: matrix-batch `2Mdr`, tensor-train `2dr + Mr²`,
/// tucker `2dr + Mr + r³`; the general-rank forms below reduce to those.
/// `layers` cross-checks the tensorization convention: M must be one of
/// 2L (query/value only), 4L (MHSA), 8L (FFN), or 12L (all blocks).
pub fn param_count(
    format: FactorFormat,
    m: usize,
    d: usize,
    ranks: Ranks,
    layers: usize,
) -> Result<usize> {
    if layers == 0 || ![2, 4, 8, 12].contains(&(m / layers)) || m % layers != 0 {
        return Err(Error::Config(format!(
            "inconsistent slice count: m={m} is not 2L/4L/8L/12L for L={layers}"
        )));
    }
    Ok(match format {
        FactorFormat::MatrixBatch => m * 2 * d * ranks.r1,
        FactorFormat::TensorTrain => d * ranks.r1 + d * ranks.r2 + m * ranks.r1 * ranks.r2,
        FactorFormat::Tucker => {
            m * ranks.r1 + d * ranks.r2 + d * ranks.r3 + ranks.r1 * ranks.r2 * ranks.r3
        }
    })
}
