//! The penalized objective and its gradients.
//!
//! The learner minimizes
//!
//! ```text
//! f(beta) = -LL(beta; D) + lambda1 * sum_{i,j} ||beta_{i.j}||
//!                        + lambda2 * sum_{i,j} cyc(i,j) * ||beta_{i.j}||
//! ```
//!
//! where `LL` sums the multi-logit log-likelihood over all rows and children,
//! `||.||` is the Frobenius norm of a parent block, and `cyc(i,j)` is 1 when
//! the current graph already has a directed path `i -> j`, so that keeping
//! edge `j -> i` would close a cycle. Intercepts are never penalized.
//!
//! Gradients of the smooth part follow the softmax residual form: for child
//! `i`, level `l`, covariate slot `c`, the per-row derivative of the negative
//! log-likelihood is `(p_l(x_h) - y_l) * x_hc`. Sample gradients are per-row;
//! the full gradient is their mean over rows.

use thiserror::Error;

use crate::graph::PathMatrix;
use crate::model::{softmax_in_place, Block, Dataset, ParamSet, VariableSpec};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("parameter layout does not match dataset variables")]
    ShapeMismatch,
}

/// Additive decomposition of the objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreValue {
    pub neg_ll: f64,
    pub sparsity_pen: f64,
    pub dag_pen: f64,
    pub total: f64,
}

/// How inner updates pick their gradient direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum StepMode {
    /// Draw one row per inner step and apply the variance-reduced direction.
    #[default]
    Svrg,
    /// Use the exact mean gradient every inner step (proximal gradient
    /// descent); mainly for verification, impractical for large n.
    FullBatch,
}

/// Tuning knobs of the learner. `lambda1`/`lambda2` are sample-size-free
/// penalty weights; the learner normalizes them internally (see
/// [`crate::optim::epoch_penalties`]).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma: f64,
    /// Inner steps per block epoch; `None` means one per dataset row.
    pub m: Option<usize>,
    pub sweeps: usize,
    pub tol: f64,
    pub tau: f64,
    pub mode: StepMode,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            lambda1: 1.0,
            lambda2: 0.2,
            gamma: 0.001,
            m: None,
            sweeps: 50,
            tol: 1e-4,
            tau: 1e-8,
            mode: StepMode::Svrg,
        }
    }
}

fn check_shapes(params: &ParamSet, d: &Dataset) -> Result<(), ScoreError> {
    if params.spec() != d.spec() {
        return Err(ScoreError::ShapeMismatch);
    }
    Ok(())
}

/// Child `i`'s logits at row `h`, written into `out`.
pub(crate) fn child_logits(params: &ParamSet, row: &[u32], i: usize, out: &mut [f64]) {
    out.copy_from_slice(params.intercept(i));
    for (j, &v) in row.iter().enumerate() {
        if j == i || v == 0 {
            continue;
        }
        let b = params.block(i, j);
        if b.is_zero() {
            continue;
        }
        let c = (v - 1) as usize;
        for (l, o) in out.iter_mut().enumerate() {
            *o += b.get(l, c);
        }
    }
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Log-likelihood contribution of child `i`, summed over all rows.
pub fn child_log_likelihood(params: &ParamSet, d: &Dataset, i: usize) -> f64 {
    let mut logits = vec![0.0; params.spec().levels(i)];
    let mut total = 0.0;
    for h in 0..d.n() {
        child_logits(params, d.row(h), i, &mut logits);
        total += logits[d.value(h, i) as usize] - log_sum_exp(&logits);
    }
    total
}

/// Full-data log-likelihood, summed over rows and children; always <= 0.
pub fn log_likelihood(params: &ParamSet, d: &Dataset) -> Result<f64, ScoreError> {
    check_shapes(params, d)?;
    Ok((0..d.p()).map(|i| child_log_likelihood(params, d, i)).sum())
}

/// `lambda1` times the sum of all parent-block norms; intercepts excluded.
pub fn sparsity_penalty(params: &ParamSet, lambda1: f64) -> f64 {
    let p = params.p();
    let mut total = 0.0;
    for i in 0..p {
        for j in 0..p {
            if j != i {
                total += params.block_norm(i, j);
            }
        }
    }
    lambda1 * total
}

/// `lambda2` times the summed norms of cycle-closing blocks: block `(i, j)`
/// counts when the graph already has a path `i -> j`.
pub fn dag_penalty(params: &ParamSet, pm: &PathMatrix, lambda2: f64) -> f64 {
    assert_eq!(params.p(), pm.p(), "path matrix size mismatch");
    let p = params.p();
    let mut total = 0.0;
    for i in 0..p {
        for j in 0..p {
            if j != i && pm.reaches(i, j) {
                total += params.block_norm(i, j);
            }
        }
    }
    lambda2 * total
}

pub fn total_score(
    params: &ParamSet,
    d: &Dataset,
    pm: &PathMatrix,
    hp: &HyperParams,
) -> Result<ScoreValue, ScoreError> {
    let neg_ll = -log_likelihood(params, d)?;
    let sparsity_pen = sparsity_penalty(params, hp.lambda1);
    let dag_pen = dag_penalty(params, pm, hp.lambda2);
    Ok(ScoreValue { neg_ll, sparsity_pen, dag_pen, total: neg_ll + sparsity_pen + dag_pen })
}

/// Gradient of one child's parameters: the intercept slot plus one block per
/// candidate parent (empty at `j == child`).
#[derive(Clone, Debug, PartialEq)]
pub struct ChildGrad {
    child: usize,
    pub intercept: Vec<f64>,
    blocks: Vec<Block>,
}

impl ChildGrad {
    pub fn zeros(spec: &VariableSpec, child: usize) -> Self {
        let blocks = (0..spec.p())
            .map(|j| {
                let cols = if j == child { 0 } else { spec.dummy_dim(j) };
                Block::zeros(spec.levels(child), cols)
            })
            .collect();
        ChildGrad { child, intercept: vec![0.0; spec.levels(child)], blocks }
    }

    pub fn child(&self) -> usize {
        self.child
    }

    pub fn block(&self, j: usize) -> &Block {
        &self.blocks[j]
    }

    pub fn block_mut(&mut self, j: usize) -> &mut Block {
        &mut self.blocks[j]
    }

    /// self += a * other, matching layouts assumed.
    pub fn add_scaled(&mut self, a: f64, other: &ChildGrad) {
        for (x, y) in self.intercept.iter_mut().zip(&other.intercept) {
            *x += a * y;
        }
        for (b, ob) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in b.data_mut().iter_mut().zip(ob.data()) {
                *x += a * y;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        for x in &mut self.intercept {
            *x *= a;
        }
        for b in &mut self.blocks {
            for x in b.data_mut() {
                *x *= a;
            }
        }
    }

    /// All coordinates in a fixed order (intercept first, then blocks by j).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.intercept.clone();
        for b in &self.blocks {
            out.extend_from_slice(b.data());
        }
        out
    }
}

/// Gradient of row `h`'s negative log-likelihood with respect to child `i`'s
/// parameters: residual `(p - y)` against the intercept slot and against the
/// active dummy column of every other variable.
pub fn sample_grad_ll(params: &ParamSet, d: &Dataset, i: usize, h: usize) -> ChildGrad {
    assert!(h < d.n(), "row index out of range");
    let spec = params.spec();
    let mut grad = ChildGrad::zeros(spec, i);
    let levels = spec.levels(i);
    let mut probs = vec![0.0; levels];
    let row = d.row(h);
    child_logits(params, row, i, &mut probs);
    softmax_in_place(&mut probs);
    let y = d.value(h, i) as usize;
    for l in 0..levels {
        let resid = probs[l] - if l == y { 1.0 } else { 0.0 };
        grad.intercept[l] = resid;
        for (j, &v) in row.iter().enumerate() {
            if j == i || v == 0 {
                continue;
            }
            grad.blocks[j].set(l, (v - 1) as usize, resid);
        }
    }
    grad
}

/// Mean of [`sample_grad_ll`] over all rows.
pub fn full_grad_ll(params: &ParamSet, d: &Dataset, i: usize) -> ChildGrad {
    let spec = params.spec();
    let mut grad = ChildGrad::zeros(spec, i);
    if d.n() == 0 {
        return grad;
    }
    let levels = spec.levels(i);
    let mut probs = vec![0.0; levels];
    for h in 0..d.n() {
        let row = d.row(h);
        child_logits(params, row, i, &mut probs);
        softmax_in_place(&mut probs);
        let y = d.value(h, i) as usize;
        for l in 0..levels {
            let resid = probs[l] - if l == y { 1.0 } else { 0.0 };
            grad.intercept[l] += resid;
            for (j, &v) in row.iter().enumerate() {
                if j == i || v == 0 {
                    continue;
                }
                let b = &mut grad.blocks[j];
                let c = (v - 1) as usize;
                b.set(l, c, b.get(l, c) + resid);
            }
        }
    }
    grad.scale(1.0 / d.n() as f64);
    grad
}

/// Central finite differences of `objective` over every raw coordinate of
/// `params` (intercepts and off-diagonal blocks), as a verification oracle
/// for the analytic gradients.
pub fn fd_gradient<F: FnMut(&ParamSet) -> f64>(
    mut objective: F,
    params: &ParamSet,
    step: f64,
) -> ParamSet {
    assert!(step > 0.0, "step must be positive");
    let spec = params.spec().clone();
    let p = spec.p();
    let mut work = params.clone();
    let mut grad = ParamSet::zeros(&spec);
    for i in 0..p {
        for l in 0..spec.levels(i) {
            let orig = work.intercept(i)[l];
            work.intercept_mut(i)[l] = orig + step;
            let up = objective(&work);
            work.intercept_mut(i)[l] = orig - step;
            let down = objective(&work);
            work.intercept_mut(i)[l] = orig;
            grad.intercept_mut(i)[l] = (up - down) / (2.0 * step);
        }
        for j in 0..p {
            if j == i {
                continue;
            }
            for l in 0..spec.levels(i) {
                for c in 0..spec.dummy_dim(j) {
                    let orig = work.block(i, j).get(l, c);
                    work.block_mut(i, j).set(l, c, orig + step);
                    let up = objective(&work);
                    work.block_mut(i, j).set(l, c, orig - step);
                    let down = objective(&work);
                    work.block_mut(i, j).set(l, c, orig);
                    grad.block_mut(i, j).set(l, c, (up - down) / (2.0 * step));
                }
            }
        }
    }
    grad
}

/// Max relative disagreement between an analytic child gradient and the
/// matching slice of a finite-difference [`ParamSet`] gradient, with an
/// absolute floor for near-zero coordinates.
pub fn grad_rel_error(analytic: &ChildGrad, fd: &ParamSet, floor: f64) -> f64 {
    let i = analytic.child();
    let mut worst = 0.0f64;
    let mut check = |a: f64, b: f64| {
        let denom = a.abs().max(b.abs()).max(floor);
        worst = worst.max((a - b).abs() / denom);
    };
    for (l, &a) in analytic.intercept.iter().enumerate() {
        check(a, fd.intercept(i)[l]);
    }
    for j in 0..fd.p() {
        if j == i {
            continue;
        }
        let ab = analytic.block(j);
        let fb = fd.block(i, j);
        for k in 0..ab.data().len() {
            check(ab.data()[k], fb.data()[k]);
        }
    }
    worst
}
