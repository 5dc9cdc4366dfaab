use super::{ensure_finite, BarycenterProblem, BarycenterSolver, BarycenterTrace};
use crate::error::{Result, WdlError};
use crate::kernel::{log_sum_exp, Direction};

/// Generalized Sinkhorn on `u = log a`, `v = log b` with log-sum-exp kernel
/// products. Handles heavyball and relaxed marginals as well; the trace
/// stores logarithms.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogDomainSolver;

impl BarycenterSolver for LogDomainSolver {
    fn name(&self) -> &'static str {
        "log-domain"
    }

    fn solve(&self, prob: &BarycenterProblem) -> Result<BarycenterTrace> {
        prob.validate()?;
        if !prob.log_domain {
            return Err(WdlError::Parameter("the log-domain solver expects log_domain = true".into()));
        }
        let k = prob.kernel;
        let n = k.len();
        let s_count = prob.atoms.len();
        let (kappa, eta) = prob.relaxation();
        let tau = prob.tau;
        let keep_a = tau != 0.0 || !prob.is_balanced();
        let log_w: Vec<f64> = prob.weights.iter().map(|w| w.ln()).collect();
        let log_d: Vec<Vec<f64>> = prob
            .atoms
            .atoms()
            .iter()
            .map(|d| d.iter().map(|x| x.ln()).collect())
            .collect();

        let mut v = prob.initial_log_b();
        let mut u = vec![vec![0.0; n]; s_count];
        let mut b_history = Vec::with_capacity(prob.iters + 1);
        let mut a_history = Vec::new();
        let mut phi_history = Vec::with_capacity(prob.iters);
        let mut residuals = Vec::with_capacity(prob.iters);
        b_history.push(v.clone());
        if keep_a {
            a_history.push(u.clone());
        }
        let mut lp = vec![0.0; n];
        let mut terms = vec![0.0; s_count];

        for l in 1..=prob.iters {
            let mut lphi = Vec::with_capacity(s_count);
            for s in 0..s_count {
                let lkb = k.log_apply_unchecked(&v[s], Direction::Forward);
                for ((u_i, &ld), &lkb) in u[s].iter_mut().zip(&log_d[s]).zip(&lkb) {
                    let fresh = kappa * (ld - lkb);
                    *u_i = blend(*u_i, fresh, tau);
                }
                if u[s].iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
                    return Err(WdlError::Instability {
                        iteration: l,
                        what: "log scaling u is not finite".into(),
                    });
                }
                lphi.push(k.log_apply_unchecked(&u[s], Direction::Transpose));
            }

            for i in 0..n {
                lp[i] = if prob.is_balanced() {
                    lphi.iter()
                        .zip(prob.weights)
                        .filter(|(_, &w)| w != 0.0)
                        .map(|(f, &w)| w * f[i])
                        .sum()
                } else {
                    for s in 0..s_count {
                        terms[s] = log_w[s] + eta * lphi[s][i];
                    }
                    log_sum_exp(&terms) / eta
                };
            }
            ensure_finite(&lp, l, "log barycenter is not finite")?;

            let mut res = 0.0f64;
            for s in 0..s_count {
                let next: Vec<f64> = lp
                    .iter()
                    .zip(&lphi[s])
                    .zip(&v[s])
                    .map(|((&p, &f), &old)| blend(old, kappa * (p - f), tau))
                    .collect();
                ensure_finite(&next, l, "log scaling v is not finite")?;
                res = res.max(log_relative_change(&next, &v[s]));
                v[s] = next;
            }
            residuals.push(res);
            b_history.push(v.clone());
            if keep_a {
                a_history.push(u.clone());
            }
            phi_history.push(lphi);
        }

        Ok(BarycenterTrace {
            barycenter: lp.iter().map(|x| x.exp()).collect(),
            log_space: true,
            b_history,
            phi_history,
            a_history,
            residuals,
        })
    }
}

/// `tau * old + (1 - tau) * fresh` in log space; a `-inf` update stays `-inf`.
#[inline]
fn blend(old: f64, fresh: f64, tau: f64) -> f64 {
    if tau == 0.0 || fresh == f64::NEG_INFINITY {
        fresh
    } else {
        tau * old + (1.0 - tau) * fresh
    }
}

/// Relative sup-norm change of `exp(new)` against `exp(old)`, scaled by the
/// largest entry of `new` so nothing overflows.
fn log_relative_change(new: &[f64], old: &[f64]) -> f64 {
    let m = new.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return 0.0;
    }
    new.iter()
        .zip(old)
        .fold(0.0f64, |acc, (&a, &b)| acc.max(((a - m).exp() - (b - m).exp()).abs()))
}
