use super::{ensure_finite, relative_change, BarycenterProblem, BarycenterSolver, BarycenterTrace};
use crate::error::{Result, WdlError};
use crate::kernel::Direction;

/// Balanced generalized Sinkhorn in the plain domain:
/// `phi_s = K^T (d_s / K b_s)`, `P = prod_s phi_s^lambda_s`, `b_s = P / phi_s`.
#[derive(Debug, Clone, Copy, Default)]
pub struct PlainSolver;

impl BarycenterSolver for PlainSolver {
    fn name(&self) -> &'static str {
        "sinkhorn"
    }

    fn solve(&self, prob: &BarycenterProblem) -> Result<BarycenterTrace> {
        prob.validate()?;
        if prob.log_domain || prob.tau != 0.0 || !prob.is_balanced() {
            return Err(WdlError::Parameter(
                "the plain solver handles balanced problems with tau = 0 outside the log domain".into(),
            ));
        }
        let k = prob.kernel;
        let n = k.len();
        let s_count = prob.atoms.len();
        let mut b = prob.initial_b();
        let mut b_history = Vec::with_capacity(prob.iters + 1);
        let mut phi_history = Vec::with_capacity(prob.iters);
        let mut residuals = Vec::with_capacity(prob.iters);
        b_history.push(b.clone());
        let mut p = vec![0.0; n];

        for l in 1..=prob.iters {
            let mut phi = Vec::with_capacity(s_count);
            for (s, d) in prob.atoms.atoms().iter().enumerate() {
                let kb = k.apply_unchecked(&b[s], Direction::Forward);
                let a: Vec<f64> = d
                    .iter()
                    .zip(&kb)
                    .map(|(&d, &kb)| if d == 0.0 { 0.0 } else { d / kb })
                    .collect();
                ensure_finite(&a, l, "scaling a overflowed")?;
                phi.push(k.apply_unchecked(&a, Direction::Transpose));
            }
            p.iter_mut().for_each(|x| *x = 1.0);
            for (phi_s, &w) in phi.iter().zip(prob.weights) {
                for (pi, &f) in p.iter_mut().zip(phi_s) {
                    *pi *= f.powf(w);
                }
            }
            ensure_finite(&p, l, "barycenter left the finite range")?;
            let mut res = 0.0f64;
            for s in 0..s_count {
                let next: Vec<f64> = p.iter().zip(&phi[s]).map(|(&p, &f)| p / f).collect();
                ensure_finite(&next, l, "scaling b overflowed (kernel underflow)")?;
                res = res.max(relative_change(&next, &b[s]));
                b[s] = next;
            }
            residuals.push(res);
            b_history.push(b.clone());
            phi_history.push(phi);
        }

        Ok(BarycenterTrace {
            barycenter: p,
            log_space: false,
            b_history,
            phi_history,
            a_history: Vec::new(),
            residuals,
        })
    }
}
