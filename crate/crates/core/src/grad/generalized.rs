use super::{check_cotangent, dot, scale_by_atoms, GradientBackend, GradientPack};
use crate::barycenter::{generalized_forward, BarycenterProblem, BarycenterTrace};
use crate::error::{Result, WdlError};
use crate::kernel::Direction;

/// Reverse mode through the heavyball and relaxed-marginal iterations.
///
/// Works on cotangents of `log a`, `log b`, `log phi` and `log P`. With
/// `kappa = rho / (rho + gamma)`, `eta = gamma / (rho + gamma)` one step is
///
/// ```text
/// log a = tau log a_old + (1 - tau) kappa (log d - log K b_old)
/// log phi = log K^T a
/// log P = sum_s lambda_s log phi_s                      (balanced)
///       = (1/eta) log sum_s lambda_s phi_s^eta          (relaxed)
/// log b = tau log b_old + (1 - tau) kappa (log P - log phi)
/// ```
///
/// and the sweep below is its exact transpose. Atom entries with `d = 0`
/// get the one-sided derivative `K(.) / K b` when `kappa = 1, tau = 0` and
/// zero otherwise (the true derivative is unbounded there).
#[derive(Debug, Clone, Copy, Default)]
pub struct GeneralizedGrads;

impl GradientBackend for GeneralizedGrads {
    fn name(&self) -> &'static str {
        "generalized-grads"
    }

    fn forward(&self, prob: &BarycenterProblem) -> Result<BarycenterTrace> {
        guard(prob)?;
        prob.validate()?;
        generalized_forward(prob)
    }

    fn backward(&self, prob: &BarycenterProblem, trace: &BarycenterTrace, loss_grad: &[f64]) -> Result<GradientPack> {
        guard(prob)?;
        check_cotangent(prob, trace, loss_grad)?;
        if trace.log_space || trace.a_history.len() != prob.iters + 1 {
            return Err(WdlError::Parameter(
                "generalized gradients need a plain-domain trace with recorded a^(l)".into(),
            ));
        }
        let k = prob.kernel;
        let n = k.len();
        let s_count = prob.atoms.len();
        let lam = prob.weights;
        let atoms = prob.atoms.atoms();
        let (kappa, eta) = prob.relaxation();
        let tau = prob.tau;
        let balanced = prob.is_balanced();
        let exact_zero = kappa == 1.0 && tau == 0.0;

        let mut pbar: Vec<f64> = loss_grad.iter().zip(&trace.barycenter).map(|(g, p)| g * p).collect();
        let mut bbar = vec![vec![0.0; n]; s_count];
        let mut abar = vec![vec![0.0; n]; s_count];
        let mut dbar = vec![vec![0.0; n]; s_count];
        let mut lbar = vec![0.0; s_count];

        for l in (1..=prob.iters).rev() {
            let phi = &trace.phi_history[l - 1];
            let a = &trace.a_history[l];
            let b_prev = &trace.b_history[l - 1];
            for i in 0..n {
                pbar[i] += (1.0 - tau) * kappa * bbar.iter().map(|bs| bs[i]).sum::<f64>();
            }
            // Relative weights (phi_s / P)^eta of the relaxed mean.
            let rel: Option<Vec<Vec<f64>>> = (!balanced).then(|| {
                let p: Vec<f64> = (0..n)
                    .map(|i| {
                        let m: f64 = (0..s_count).map(|s| lam[s] * phi[s][i].powf(eta)).sum();
                        m.powf(1.0 / eta)
                    })
                    .collect();
                (0..s_count)
                    .map(|s| (0..n).map(|i| (phi[s][i] / p[i]).powf(eta)).collect())
                    .collect()
            });

            for s in 0..s_count {
                let mut phibar: Vec<f64> = bbar[s].iter().map(|x| -(1.0 - tau) * kappa * x).collect();
                match &rel {
                    None => {
                        for i in 0..n {
                            phibar[i] += lam[s] * pbar[i];
                        }
                        let log_phi: Vec<f64> = phi[s].iter().map(|x| x.ln()).collect();
                        lbar[s] += dot(&log_phi, &pbar);
                    }
                    Some(rel) => {
                        for i in 0..n {
                            phibar[i] += lam[s] * rel[s][i] * pbar[i];
                        }
                        lbar[s] += rel[s].iter().zip(&pbar).map(|(r, p)| r / eta * p).sum::<f64>();
                    }
                }
                let scaled: Vec<f64> = phibar.iter().zip(&phi[s]).map(|(x, f)| x / f).collect();
                let y = k.apply_unchecked(&scaled, Direction::Forward);
                for i in 0..n {
                    abar[s][i] += a[s][i] * y[i];
                }
                let kb = k.apply_unchecked(&b_prev[s], Direction::Forward);
                let latbar: Vec<f64> = abar[s].iter().map(|x| (1.0 - tau) * x).collect();
                for i in 0..n {
                    let d = atoms[s][i];
                    dbar[s][i] += if d > 0.0 {
                        kappa * latbar[i] / d
                    } else if exact_zero {
                        y[i] / kb[i]
                    } else {
                        0.0
                    };
                }
                let t: Vec<f64> = latbar.iter().zip(&kb).map(|(x, k)| kappa * x / k).collect();
                let t = k.apply_unchecked(&t, Direction::Transpose);
                for i in 0..n {
                    bbar[s][i] = tau * bbar[s][i] - b_prev[s][i] * t[i];
                    abar[s][i] *= tau;
                }
            }
            pbar.iter_mut().for_each(|x| *x = 0.0);
        }

        Ok(GradientPack {
            barycenter: trace.barycenter.clone(),
            grad_log_atoms: scale_by_atoms(prob, &dbar),
            grad_atoms: dbar,
            grad_weights: lbar,
        })
    }
}

fn guard(prob: &BarycenterProblem) -> Result<()> {
    if prob.log_domain {
        return Err(WdlError::Parameter(
            "generalized gradients run in the plain domain; disable log_domain".into(),
        ));
    }
    Ok(())
}
