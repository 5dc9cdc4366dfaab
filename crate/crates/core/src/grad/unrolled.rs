use super::{check_cotangent, dot, hadamard, scale_by_atoms, GradientBackend, GradientPack};
use crate::barycenter::{barycenter_forward, BarycenterProblem, BarycenterTrace};
use crate::error::{Result, WdlError};
use crate::kernel::Direction;

/// Two backward sweeps over the stored `b^(l)` and `phi^(l)`: one for the
/// weights, one for the atoms.
#[derive(Debug, Clone, Copy, Default)]
pub struct SinkhornGrads;

/// [`SinkhornGrads`] with the weight recursion's `g` update negated. Only
/// useful as a negative control for gradient checks.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlippedSignGrads;

impl GradientBackend for SinkhornGrads {
    fn name(&self) -> &'static str {
        "sinkhorn-grads"
    }

    fn forward(&self, prob: &BarycenterProblem) -> Result<BarycenterTrace> {
        barycenter_forward(prob)
    }

    fn backward(&self, prob: &BarycenterProblem, trace: &BarycenterTrace, loss_grad: &[f64]) -> Result<GradientPack> {
        backward(prob, trace, loss_grad, 1.0)
    }
}

impl GradientBackend for FlippedSignGrads {
    fn name(&self) -> &'static str {
        "sinkhorn-grads-flipped"
    }

    fn forward(&self, prob: &BarycenterProblem) -> Result<BarycenterTrace> {
        barycenter_forward(prob)
    }

    fn backward(&self, prob: &BarycenterProblem, trace: &BarycenterTrace, loss_grad: &[f64]) -> Result<GradientPack> {
        backward(prob, trace, loss_grad, -1.0)
    }
}

fn backward(prob: &BarycenterProblem, trace: &BarycenterTrace, loss_grad: &[f64], g_sign: f64) -> Result<GradientPack> {
    check_cotangent(prob, trace, loss_grad)?;
    if trace.log_space {
        return Err(WdlError::Parameter("plain gradients need a plain-domain trace".into()));
    }
    let k = prob.kernel;
    let n = k.len();
    let s_count = prob.atoms.len();
    let lam = prob.weights;
    let atoms = prob.atoms.atoms();
    let big_l = prob.iters;
    let p = &trace.barycenter;
    let b = |l: usize| &trace.b_history[l];
    let phi = |l: usize| &trace.phi_history[l - 1];

    // K b^(l-1) is shared by both sweeps.
    let kb: Vec<Vec<Vec<f64>>> = (0..big_l)
        .map(|l| b(l).iter().map(|bs| k.apply_unchecked(bs, Direction::Forward)).collect())
        .collect();

    // Weights.
    let mut w = vec![0.0; s_count];
    let mut r = vec![vec![0.0; n]; s_count];
    let mut g = hadamard(loss_grad, p);
    for l in (1..=big_l).rev() {
        for s in 0..s_count {
            w[s] += dot(&phi(l)[s].iter().map(|x| x.ln()).collect::<Vec<_>>(), &g);
        }
        for s in 0..s_count {
            let inner: Vec<f64> = (0..n).map(|i| (lam[s] * g[i] - r[s][i]) / phi(l)[s][i]).collect();
            let mut t = k.apply_unchecked(&inner, Direction::Forward);
            for i in 0..n {
                t[i] *= atoms[s][i] / (kb[l - 1][s][i] * kb[l - 1][s][i]);
            }
            let t = k.apply_unchecked(&t, Direction::Transpose);
            r[s] = t.iter().zip(&b(l - 1)[s]).map(|(x, bb)| -x * bb).collect();
        }
        g = (0..n).map(|i| g_sign * r.iter().map(|rs| rs[i]).sum::<f64>()).collect();
    }

    // Atoms.
    let mut y = vec![vec![0.0; n]; s_count];
    let mut z = vec![vec![0.0; n]; s_count];
    let mut nn = loss_grad.to_vec();
    for l in (1..=big_l).rev() {
        for s in 0..s_count {
            let inner: Vec<f64> = (0..n).map(|i| (lam[s] * nn[i] - z[s][i]) * b(l)[s][i]).collect();
            let c = k.apply_unchecked(&inner, Direction::Forward);
            for i in 0..n {
                y[s][i] += c[i] / kb[l - 1][s][i];
            }
            // z at l = 1 would need phi^(0) and feeds nothing.
            if l > 1 {
                let t: Vec<f64> = (0..n)
                    .map(|i| atoms[s][i] * c[i] / (kb[l - 1][s][i] * kb[l - 1][s][i]))
                    .collect();
                let t = k.apply_unchecked(&t, Direction::Transpose);
                z[s] = t.iter().zip(&phi(l - 1)[s]).map(|(x, f)| -x / f).collect();
            }
        }
        nn = (0..n).map(|i| z.iter().map(|zs| zs[i]).sum()).collect();
    }

    Ok(GradientPack {
        barycenter: p.clone(),
        grad_log_atoms: scale_by_atoms(prob, &y),
        grad_atoms: y,
        grad_weights: w,
    })
}
