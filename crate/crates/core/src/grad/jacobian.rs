use super::{check_cotangent, dot, scale_by_atoms, GradientBackend, GradientPack};
use crate::barycenter::{barycenter_forward, BarycenterProblem, BarycenterTrace};
use crate::error::{Result, WdlError};
use crate::kernel::Direction;

/// Largest `N` accepted by [`JacobianGrads`].
pub const JACOBIAN_MAX_BINS: usize = 64;

/// Gradients from the recursion on cotangents of the scalings `b^(l)`.
///
/// `P^(L) = Psi(b^(L-1), D, lambda)` and `b^(l+1) = Phi(b^(l), D, lambda)`;
/// each Jacobian block is applied transposed, matrix-free. Written
/// independently of [`super::SinkhornGrads`] so the two can check each
/// other.
#[derive(Debug, Clone, Copy, Default)]
pub struct JacobianGrads;

impl GradientBackend for JacobianGrads {
    fn name(&self) -> &'static str {
        "jacobian-grads"
    }

    fn forward(&self, prob: &BarycenterProblem) -> Result<BarycenterTrace> {
        guard(prob)?;
        barycenter_forward(prob)
    }

    fn backward(&self, prob: &BarycenterProblem, trace: &BarycenterTrace, loss_grad: &[f64]) -> Result<GradientPack> {
        guard(prob)?;
        check_cotangent(prob, trace, loss_grad)?;
        if trace.log_space {
            return Err(WdlError::Parameter("jacobian-grads needs a plain-domain trace".into()));
        }
        let blocks = Blocks { prob, trace };
        let big_l = prob.iters;
        let (mut grad_d, mut grad_w, mut v) = blocks.psi(loss_grad);
        for l in (0..big_l - 1).rev() {
            let (gd, gw, next) = blocks.phi(l, &v);
            for (acc, g) in grad_d.iter_mut().zip(&gd) {
                acc.iter_mut().zip(g).for_each(|(a, x)| *a += x);
            }
            grad_w.iter_mut().zip(&gw).for_each(|(a, x)| *a += x);
            v = next;
        }
        Ok(GradientPack {
            barycenter: trace.barycenter.clone(),
            grad_log_atoms: scale_by_atoms(prob, &grad_d),
            grad_atoms: grad_d,
            grad_weights: grad_w,
        })
    }
}

fn guard(prob: &BarycenterProblem) -> Result<()> {
    if prob.kernel.len() > JACOBIAN_MAX_BINS {
        return Err(WdlError::SizeGuard(format!(
            "jacobian-grads is limited to N <= {JACOBIAN_MAX_BINS} (got {}); use sinkhorn-grads",
            prob.kernel.len()
        )));
    }
    if prob.log_domain || prob.tau != 0.0 || !prob.is_balanced() {
        return Err(WdlError::Parameter("jacobian-grads differentiates the plain balanced iteration only".into()));
    }
    Ok(())
}

type Vjp = (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>);

struct Blocks<'a, 'b> {
    prob: &'a BarycenterProblem<'b>,
    trace: &'a BarycenterTrace,
}

impl Blocks<'_, '_> {
    fn kb(&self, s: usize, l: usize) -> Vec<f64> {
        self.prob.kernel.apply_unchecked(&self.trace.b_history[l][s], Direction::Forward)
    }

    /// `(d phi_s / d b_s)^T w = -K^T (d_s / (K b_s)^2 . K w)`.
    fn dphi_db_t(&self, s: usize, w: &[f64], kb: &[f64]) -> Vec<f64> {
        let k = self.prob.kernel;
        let d = self.prob.atoms.atom(s);
        let kw = k.apply_unchecked(w, Direction::Forward);
        let t: Vec<f64> = (0..kw.len()).map(|i| d[i] / (kb[i] * kb[i]) * kw[i]).collect();
        k.apply_unchecked(&t, Direction::Transpose).into_iter().map(|x| -x).collect()
    }

    /// `(d phi_s / d d_s)^T w = diag(1 / K b_s) K w`.
    fn dphi_dd_t(&self, w: &[f64], kb: &[f64]) -> Vec<f64> {
        let kw = self.prob.kernel.apply_unchecked(w, Direction::Forward);
        kw.iter().zip(kb).map(|(x, k)| x / k).collect()
    }

    /// Blocks of `P^(L) = prod_s phi_s^lambda_s` with `phi = phi^(L)`
    /// computed from `b^(L-1)`.
    fn psi(&self, u: &[f64]) -> Vjp {
        let big_l = self.prob.iters;
        let phi = &self.trace.phi_history[big_l - 1];
        let p = &self.trace.barycenter;
        let s_count = self.prob.atoms.len();
        let mut gd = Vec::with_capacity(s_count);
        let mut gw = Vec::with_capacity(s_count);
        let mut vb = Vec::with_capacity(s_count);
        for s in 0..s_count {
            let lam = self.prob.weights[s];
            let kb = self.kb(s, big_l - 1);
            let phibar: Vec<f64> = (0..u.len()).map(|i| lam * p[i] * u[i] / phi[s][i]).collect();
            vb.push(self.dphi_db_t(s, &phibar, &kb));
            gd.push(self.dphi_dd_t(&phibar, &kb));
            let weighted: Vec<f64> = (0..u.len()).map(|i| p[i] * phi[s][i].ln()).collect();
            gw.push(dot(&weighted, u));
        }
        (gd, gw, vb)
    }

    /// Blocks of `b^(l+1)_t = P / phi_t` with `phi = phi^(l+1)` computed
    /// from `b^(l)`; `v` is the cotangent on `b^(l+1)`.
    fn phi(&self, l: usize, v: &[Vec<f64>]) -> Vjp {
        let phi = &self.trace.phi_history[l];
        let out = &self.trace.b_history[l + 1];
        let s_count = self.prob.atoms.len();
        let n = self.prob.kernel.len();
        let w: Vec<Vec<f64>> = (0..s_count)
            .map(|s| (0..n).map(|i| v[s][i] / phi[s][i]).collect())
            .collect();
        let w_sum: Vec<f64> = (0..n).map(|i| w.iter().map(|ws| ws[i]).sum()).collect();
        let mut gd = Vec::with_capacity(s_count);
        let mut vb = Vec::with_capacity(s_count);
        for t in 0..s_count {
            let lam = self.prob.weights[t];
            let kb = self.kb(t, l);
            let phibar: Vec<f64> = (0..n).map(|i| out[t][i] * (lam * w_sum[i] - w[t][i])).collect();
            vb.push(self.dphi_db_t(t, &phibar, &kb));
            gd.push(self.dphi_dd_t(&phibar, &kb));
        }
        let mixed: Vec<f64> = (0..n).map(|i| (0..s_count).map(|s| v[s][i] * out[s][i]).sum()).collect();
        let gw = (0..s_count)
            .map(|j| {
                let log_phi: Vec<f64> = phi[j].iter().map(|x| x.ln()).collect();
                dot(&log_phi, &mixed)
            })
            .collect();
        (gd, gw, vb)
    }
}
