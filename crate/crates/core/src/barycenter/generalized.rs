use super::{ensure_finite, relative_change, BarycenterProblem, BarycenterSolver, BarycenterTrace};
use crate::error::{Result, WdlError};
use crate::kernel::Direction;

/// Balanced generalized Sinkhorn with heavyball extrapolation:
/// `a = a_old^tau * a_new^(1 - tau)` and likewise for `b`. `tau = 0` is the
/// plain iteration, bit for bit.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeavyballSolver;

/// KL-relaxed (unbalanced) barycenters with optional extrapolation.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnbalancedSolver;

impl BarycenterSolver for HeavyballSolver {
    fn name(&self) -> &'static str {
        "heavyball"
    }

    fn solve(&self, prob: &BarycenterProblem) -> Result<BarycenterTrace> {
        prob.validate()?;
        if !prob.is_balanced() || prob.log_domain {
            return Err(WdlError::Parameter(
                "the heavyball solver handles balanced plain-domain problems; use `unbalanced` or `log-domain`".into(),
            ));
        }
        generalized_forward(prob)
    }
}

impl BarycenterSolver for UnbalancedSolver {
    fn name(&self) -> &'static str {
        "unbalanced"
    }

    fn solve(&self, prob: &BarycenterProblem) -> Result<BarycenterTrace> {
        prob.validate()?;
        if prob.is_balanced() || prob.log_domain {
            return Err(WdlError::Parameter(
                "the unbalanced solver needs a finite rho and the plain domain".into(),
            ));
        }
        generalized_forward(prob)
    }
}

/// `old^tau * new^(1 - tau)`, keeping zeros where the fresh update is zero.
#[inline]
pub(crate) fn extrapolate(old: f64, new: f64, tau: f64) -> f64 {
    if tau == 0.0 {
        new
    } else if new == 0.0 {
        0.0
    } else {
        old.powf(tau) * new.powf(1.0 - tau)
    }
}

#[inline]
fn relax(x: f64, kappa: f64) -> f64 {
    if kappa == 1.0 {
        x
    } else {
        x.powf(kappa)
    }
}

/// Forward loop shared by the heavyball and unbalanced solvers. Records
/// `a^(l)` as well, which the generalized backward pass reads.
pub(crate) fn generalized_forward(prob: &BarycenterProblem) -> Result<BarycenterTrace> {
    let k = prob.kernel;
    let n = k.len();
    let s_count = prob.atoms.len();
    let (kappa, eta) = prob.relaxation();
    let tau = prob.tau;

    let mut b = prob.initial_b();
    let mut a = vec![vec![1.0; n]; s_count];
    let mut b_history = Vec::with_capacity(prob.iters + 1);
    let mut a_history = Vec::with_capacity(prob.iters + 1);
    let mut phi_history = Vec::with_capacity(prob.iters);
    let mut residuals = Vec::with_capacity(prob.iters);
    b_history.push(b.clone());
    a_history.push(a.clone());
    let mut p = vec![0.0; n];

    for l in 1..=prob.iters {
        let mut phi = Vec::with_capacity(s_count);
        for (s, d) in prob.atoms.atoms().iter().enumerate() {
            let kb = k.apply_unchecked(&b[s], Direction::Forward);
            for ((a_i, &d), &kb) in a[s].iter_mut().zip(d).zip(&kb) {
                let fresh = if d == 0.0 { 0.0 } else { relax(d / kb, kappa) };
                *a_i = extrapolate(*a_i, fresh, tau);
            }
            ensure_finite(&a[s], l, "scaling a overflowed")?;
            phi.push(k.apply_unchecked(&a[s], Direction::Transpose));
        }

        if prob.is_balanced() {
            p.iter_mut().for_each(|x| *x = 1.0);
            for (phi_s, &w) in phi.iter().zip(prob.weights) {
                for (pi, &f) in p.iter_mut().zip(phi_s) {
                    *pi *= f.powf(w);
                }
            }
        } else {
            p.iter_mut().for_each(|x| *x = 0.0);
            for (phi_s, &w) in phi.iter().zip(prob.weights) {
                for (pi, &f) in p.iter_mut().zip(phi_s) {
                    *pi += w * f.powf(eta);
                }
            }
            p.iter_mut().for_each(|x| *x = x.powf(1.0 / eta));
        }
        ensure_finite(&p, l, "barycenter left the finite range")?;

        let mut res = 0.0f64;
        for s in 0..s_count {
            let next: Vec<f64> = p
                .iter()
                .zip(&phi[s])
                .zip(&b[s])
                .map(|((&p, &f), &old)| extrapolate(old, relax(p / f, kappa), tau))
                .collect();
            ensure_finite(&next, l, "scaling b overflowed (kernel underflow)")?;
            res = res.max(relative_change(&next, &b[s]));
            b[s] = next;
        }
        residuals.push(res);
        b_history.push(b.clone());
        a_history.push(a.clone());
        phi_history.push(phi);
    }

    Ok(BarycenterTrace {
        barycenter: p,
        log_space: false,
        b_history,
        phi_history,
        a_history,
        residuals,
    })
}
