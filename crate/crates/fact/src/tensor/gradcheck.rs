//! Finite-difference gradient checking.
//!
//! The harness perturbs one leaf entry at a time, rebuilds the scalar loss
//! through the caller's closure, and compares the central difference against
//! the gradient produced by [`super::Tensor::backward`]. Comparison uses the
//! usual combined bound `|a − n| ≤ abs_tol + rel_tol·max(|a|, |n|)`: with f32
//! values an absolute floor is what keeps entries whose true derivative sits
//! below the finite-difference noise from producing spurious failures.

use super::Tensor;
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub epsilon: f32,
    pub rel_tol: f32,
    pub abs_tol: f32,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-3,
            rel_tol: 1e-3,
            abs_tol: 1e-3,
        }
    }
}

#[derive(Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: usize,
    pub max_abs_diff: f32,
    /// Worst `|a − n| / max(|a|, |n|)` among entries above the absolute floor.
    pub worst_rel: f32,
}

impl GradCheckReport {
    pub fn ok(&self) -> bool {
        self.failures == 0
    }
}

/// Central difference of `loss()` w.r.t. entry `idx` of `leaf`.
///
/// The leaf is mutated in place and restored afterwards, so `loss` must
/// rebuild the graph from the leaf's current values on every call.
pub fn fd_grad_at(
    leaf: &Tensor,
    idx: usize,
    epsilon: f32,
    mut loss: impl FnMut() -> Result<Tensor>,
) -> Result<f32> {
    let original = leaf.get(idx);
    leaf.set(idx, original + epsilon);
    let up = loss()?.item();
    leaf.set(idx, original - epsilon);
    let down = loss()?.item();
    leaf.set(idx, original);
    Ok((up - down) / (2.0 * epsilon))
}

/// Checks the analytic gradient of `loss` w.r.t. `leaf` at the given entries
/// (all entries when `indices` is `None`).
pub fn check_entries(
    leaf: &Tensor,
    indices: Option<&[usize]>,
    cfg: &GradCheckConfig,
    mut loss: impl FnMut() -> Result<Tensor>,
) -> Result<GradCheckReport> {
    leaf.zero_grad();
    let out = loss()?;
    out.backward()?;
    let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);

    let all: Vec<usize>;
    let entries = match indices {
        Some(list) => list,
        None => {
            all = (0..leaf.numel()).collect();
            &all
        }
    };

    let mut report = GradCheckReport {
        checked: 0,
        failures: 0,
        max_abs_diff: 0.0,
        worst_rel: 0.0,
    };
    for &idx in entries {
        let numeric = fd_grad_at(leaf, idx, cfg.epsilon, &mut loss)?;
        let a = analytic[idx];
        let diff = (a - numeric).abs();
        let scale = a.abs().max(numeric.abs());
        report.checked += 1;
        report.max_abs_diff = report.max_abs_diff.max(diff);
        if diff > cfg.abs_tol {
            report.worst_rel = report.worst_rel.max(diff / scale);
        }
        if diff > cfg.abs_tol + cfg.rel_tol * scale {
            report.failures += 1;
        }
    }
    Ok(report)
}

/// Convenience assertion wrapper around [`check_entries`].
pub fn assert_grads_match(
    leaf: &Tensor,
    cfg: &GradCheckConfig,
    loss: impl FnMut() -> Result<Tensor>,
) {
    let report = check_entries(leaf, None, cfg, loss).expect("gradcheck forward failed");
    assert!(
        report.ok(),
        "gradient check failed: {} of {} entries off (max abs diff {:.3e}, worst rel {:.3e})",
        report.failures,
        report.checked,
        report.max_abs_diff,
        report.worst_rel
    );
}
