use super::{check_cotangent, dot, GradientBackend, GradientPack};
use crate::barycenter::{barycenter_log_domain, BarycenterProblem, BarycenterTrace};
use crate::error::{Result, WdlError};
use crate::kernel::{signed_lse, Direction};

/// The two backward sweeps of [`super::SinkhornGrads`] on a log-space trace.
///
/// Cotangents stay real, but every kernel product runs on
/// `(log|x|, sign x)` pairs through signed log-sum-exp, so the large and
/// tiny factors `1/phi` and `d/(K b)^2` never materialize.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogSinkhornGrads;

impl GradientBackend for LogSinkhornGrads {
    fn name(&self) -> &'static str {
        "log-sinkhorn-grads"
    }

    fn forward(&self, prob: &BarycenterProblem) -> Result<BarycenterTrace> {
        guard(prob)?;
        barycenter_log_domain(&prob.with_log_domain(true))
    }

    fn backward(&self, prob: &BarycenterProblem, trace: &BarycenterTrace, loss_grad: &[f64]) -> Result<GradientPack> {
        guard(prob)?;
        check_cotangent(prob, trace, loss_grad)?;
        if !trace.log_space {
            return Err(WdlError::Parameter("log-domain gradients need a log-space trace".into()));
        }
        let k = prob.kernel;
        let n = k.len();
        let s_count = prob.atoms.len();
        let lam = prob.weights;
        let big_l = prob.iters;
        let log_d: Vec<Vec<f64>> = prob
            .atoms
            .atoms()
            .iter()
            .map(|d| d.iter().map(|x| x.ln()).collect())
            .collect();
        let v = |l: usize| &trace.b_history[l];
        let lphi = |l: usize| &trace.phi_history[l - 1];
        let lkb: Vec<Vec<Vec<f64>>> = (0..big_l)
            .map(|l| v(l).iter().map(|vs| k.log_apply_unchecked(vs, Direction::Forward)).collect())
            .collect();
        let p = &trace.barycenter;

        let mut w = vec![0.0; s_count];
        let mut r = vec![vec![0.0; n]; s_count];
        let mut g: Vec<f64> = loss_grad.iter().zip(p).map(|(a, b)| a * b).collect();
        for l in (1..=big_l).rev() {
            for s in 0..s_count {
                w[s] += dot(&lphi(l)[s], &g);
            }
            for s in 0..s_count {
                let (mut la, sa) = signed_log((0..n).map(|i| lam[s] * g[i] - r[s][i]));
                la.iter_mut().zip(&lphi(l)[s]).for_each(|(x, f)| *x -= f);
                let (mut lt, st) = k.signed_log_apply_unchecked(&la, &sa, Direction::Forward);
                for i in 0..n {
                    lt[i] += log_d[s][i] - 2.0 * lkb[l - 1][s][i];
                }
                let (lt, st) = k.signed_log_apply_unchecked(&lt, &st, Direction::Transpose);
                r[s] = (0..n).map(|i| -st[i] * (lt[i] + v(l - 1)[s][i]).exp()).collect();
            }
            g = (0..n).map(|i| r.iter().map(|rs| rs[i]).sum()).collect();
        }

        // Atom gradient kept as (log|y|, sign y): at empty bins it can leave
        // the f64 range while d . y stays small.
        let mut ly = vec![vec![f64::NEG_INFINITY; n]; s_count];
        let mut sy = vec![vec![0.0; n]; s_count];
        let mut z = vec![vec![0.0; n]; s_count];
        let mut nn = loss_grad.to_vec();
        for l in (1..=big_l).rev() {
            for s in 0..s_count {
                let (mut la, sa) = signed_log((0..n).map(|i| lam[s] * nn[i] - z[s][i]));
                la.iter_mut().zip(&v(l)[s]).for_each(|(x, b)| *x += b);
                let (lc, sc) = k.signed_log_apply_unchecked(&la, &sa, Direction::Forward);
                for i in 0..n {
                    let (l_new, s_new) = signed_lse(&[ly[s][i], lc[i] - lkb[l - 1][s][i]], &[sy[s][i], sc[i]]);
                    ly[s][i] = l_new;
                    sy[s][i] = s_new;
                }
                if l > 1 {
                    let lt: Vec<f64> = (0..n)
                        .map(|i| log_d[s][i] + lc[i] - 2.0 * lkb[l - 1][s][i])
                        .collect();
                    let (lt, st) = k.signed_log_apply_unchecked(&lt, &sc, Direction::Transpose);
                    z[s] = (0..n).map(|i| -st[i] * (lt[i] - lphi(l - 1)[s][i]).exp()).collect();
                }
            }
            nn = (0..n).map(|i| z.iter().map(|zs| zs[i]).sum()).collect();
        }

        let y: Vec<Vec<f64>> = (0..s_count)
            .map(|s| (0..n).map(|i| sy[s][i] * ly[s][i].exp()).collect())
            .collect();
        let y_log: Vec<Vec<f64>> = (0..s_count)
            .map(|s| (0..n).map(|i| sy[s][i] * (ly[s][i] + log_d[s][i]).exp()).collect())
            .collect();
        for (name, vals) in [("log-atom gradient", y_log.concat()), ("weight gradient", w.clone())] {
            if vals.iter().any(|x| !x.is_finite()) {
                return Err(WdlError::Instability {
                    iteration: big_l,
                    what: format!("{name} is not finite"),
                });
            }
        }
        Ok(GradientPack {
            barycenter: p.clone(),
            grad_atoms: y,
            grad_log_atoms: y_log,
            grad_weights: w,
        })
    }
}

fn guard(prob: &BarycenterProblem) -> Result<()> {
    if prob.tau != 0.0 || !prob.is_balanced() {
        return Err(WdlError::Parameter(
            "log-domain gradients cover the balanced iteration without extrapolation; \
             use generalized-grads in the plain domain"
                .into(),
        ));
    }
    Ok(())
}

/// `(log|x|, sign x)`, with zeros mapped to `(-inf, 0)`.
fn signed_log(x: impl Iterator<Item = f64>) -> (Vec<f64>, Vec<f64>) {
    x.map(|x| {
        if x == 0.0 {
            (f64::NEG_INFINITY, 0.0)
        } else {
            (x.abs().ln(), x.signum())
        }
    })
    .unzip()
}
