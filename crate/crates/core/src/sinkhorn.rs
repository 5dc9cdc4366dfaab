//! Entropic optimal transport between two histograms by Sinkhorn scaling.

use crate::error::{check_len, Result, WdlError};
use crate::kernel::{Direction, Kernel};

/// Scaling vectors after a number of alternating updates. The coupling is
/// `T = diag(b) K diag(a)`: `a` carries the column marginal `q`, `b` the row
/// marginal `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornState {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub iter: usize,
    p: Vec<f64>,
    q: Vec<f64>,
}

impl SinkhornState {
    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// L1 residuals of the row and column sums of the current coupling.
    pub fn marginal_error(&self, k: &Kernel) -> (f64, f64) {
        let ka = k.apply_unchecked(&self.a, Direction::Forward);
        let ktb = k.apply_unchecked(&self.b, Direction::Transpose);
        let rows: f64 = self.b.iter().zip(&ka).zip(&self.p).map(|((b, k), p)| (b * k - p).abs()).sum();
        let cols: f64 = self.a.iter().zip(&ktb).zip(&self.q).map(|((a, k), q)| (a * k - q).abs()).sum();
        (rows, cols)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    /// Row-major `N x N` coupling.
    pub matrix: Vec<f64>,
    /// L1 residuals `(|T 1 - p|, |T^T 1 - q|)`.
    pub marginal_error: (f64, f64),
}

fn check_pair(p: &[f64], q: &[f64], k: &Kernel) -> Result<()> {
    check_len("p", p.len(), k.len())?;
    check_len("q", q.len(), k.len())?;
    for (name, h) in [("p", p), ("q", q)] {
        if h.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(WdlError::Validation(format!("{name} must be nonnegative and finite")));
        }
        let total: f64 = h.iter().sum();
        if (total - 1.0).abs() > crate::grid::SIMPLEX_TOL {
            return Err(WdlError::Validation(format!("{name} has mass {total}, expected 1")));
        }
    }
    Ok(())
}

fn unstable(v: &[f64]) -> bool {
    v.iter().any(|x| !x.is_finite())
}

fn step(state: &mut SinkhornState, k: &Kernel) -> Result<()> {
    let ktb = k.apply_unchecked(&state.b, Direction::Transpose);
    for ((a, &q), &d) in state.a.iter_mut().zip(&state.q).zip(&ktb) {
        *a = if q == 0.0 { 0.0 } else { q / d };
    }
    let ka = k.apply_unchecked(&state.a, Direction::Forward);
    for ((b, &p), &d) in state.b.iter_mut().zip(&state.p).zip(&ka) {
        *b = if p == 0.0 { 0.0 } else { p / d };
    }
    state.iter += 1;
    if unstable(&state.a) || unstable(&state.b) {
        return Err(WdlError::Instability {
            iteration: state.iter,
            what: "non-finite Sinkhorn scaling".into(),
        });
    }
    Ok(())
}

/// Runs exactly `iters` update pairs (`a` then `b`) from `b = 1`.
pub fn sinkhorn_run(p: &[f64], q: &[f64], k: &Kernel, iters: usize) -> Result<SinkhornState> {
    check_pair(p, q, k)?;
    if iters == 0 {
        return Err(WdlError::Parameter("Sinkhorn needs at least one iteration".into()));
    }
    let n = k.len();
    let mut state = SinkhornState {
        a: vec![1.0; n],
        b: vec![1.0; n],
        iter: 0,
        p: p.to_vec(),
        q: q.to_vec(),
    };
    for _ in 0..iters {
        step(&mut state, k)?;
    }
    Ok(state)
}

/// Iterates until the column-sum residual drops to `tol` (row sums are exact
/// after each `b` update) or `max_iters` is reached.
pub fn sinkhorn_until(p: &[f64], q: &[f64], k: &Kernel, max_iters: usize, tol: f64) -> Result<SinkhornState> {
    let mut state = sinkhorn_run(p, q, k, 1)?;
    while state.iter < max_iters && state.marginal_error(k).1 > tol {
        step(&mut state, k)?;
    }
    Ok(state)
}

/// Materializes `T = diag(b) K diag(a)`.
pub fn extract_plan(state: &SinkhornState, k: &Kernel) -> Result<TransportPlan> {
    let n = k.len();
    check_len("scaling a", state.a.len(), n)?;
    check_len("scaling b", state.b.len(), n)?;
    let mut matrix = k.to_dense();
    for i in 0..n {
        for j in 0..n {
            matrix[i * n + j] *= state.b[i] * state.a[j];
        }
    }
    Ok(TransportPlan {
        matrix,
        marginal_error: state.marginal_error(k),
    })
}

/// Regularized transport cost and its gradient in `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct OtCost {
    /// `<T, C> + gamma * sum T (log T - 1)` at the final coupling.
    pub value: f64,
    /// `gamma * log b`, mean-centered over the support of `p`. Bins where
    /// `p` is zero carry `-inf`.
    pub grad_p: Vec<f64>,
    pub state: SinkhornState,
}

/// Entropic transport cost after `iters` Sinkhorn iterations.
///
/// With `log T_ij = log b_i + log K_ij + log a_j` and `C = -gamma log K`, the
/// primal objective collapses to `gamma * (<r, log b> + <c, log a> - sum T)`
/// where `r`, `c` are the row and column sums of `T`.
pub fn ot_cost(p: &[f64], q: &[f64], k: &Kernel, iters: usize) -> Result<OtCost> {
    let state = sinkhorn_run(p, q, k, iters)?;
    Ok(cost_of_state(state, k))
}

/// Same as [`ot_cost`] but iterating to a marginal tolerance.
pub fn ot_cost_until(p: &[f64], q: &[f64], k: &Kernel, max_iters: usize, tol: f64) -> Result<OtCost> {
    let state = sinkhorn_until(p, q, k, max_iters, tol)?;
    Ok(cost_of_state(state, k))
}

fn cost_of_state(state: SinkhornState, k: &Kernel) -> OtCost {
    let gamma = k.gamma();
    let ka = k.apply_unchecked(&state.a, Direction::Forward);
    let ktb = k.apply_unchecked(&state.b, Direction::Transpose);
    let xlogy = |x: f64, y: f64| if x == 0.0 { 0.0 } else { x * y.ln() };
    let mut value = 0.0;
    for i in 0..state.b.len() {
        let r = state.b[i] * ka[i];
        let c = state.a[i] * ktb[i];
        value += xlogy(r, state.b[i]) + xlogy(c, state.a[i]) - r;
    }
    value *= gamma;

    let mut grad_p: Vec<f64> = state.b.iter().map(|&b| gamma * b.ln()).collect();
    let support: Vec<usize> = (0..grad_p.len()).filter(|&i| state.p[i] > 0.0).collect();
    let mean = support.iter().map(|&i| grad_p[i]).sum::<f64>() / support.len() as f64;
    for &i in &support {
        grad_p[i] -= mean;
    }
    OtCost { value, grad_p, state }
}
