//! Forward solvers for entropic Wasserstein barycenters.
//!
//! Every solver runs a fixed number of generalized Sinkhorn iterations from
//! `b = 1` (or a warm-start vector) and records the scalings it needs for a
//! backward pass. Solvers are registered by name; [`solver_for`] picks one
//! from the problem flags.

mod generalized;
mod log_domain;
mod plain;

use std::sync::Arc;

use crate::error::{check_finite, check_len, Result, WdlError};
use crate::kernel::Kernel;
use crate::registry::Registry;

pub use generalized::{HeavyballSolver, UnbalancedSolver};
pub(crate) use generalized::generalized_forward;
pub use log_domain::LogDomainSolver;
pub use plain::PlainSolver;

/// Tolerance for simplex membership of barycentric weights.
const WEIGHT_TOL: f64 = 1e-10;

/// `S` atoms of equal length, each nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: Vec<Vec<f64>>,
}

impl Dictionary {
    pub fn new(atoms: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = atoms.first() else {
            return Err(WdlError::Validation("dictionary needs at least one atom".into()));
        };
        let n = first.len();
        for (s, d) in atoms.iter().enumerate() {
            check_len(&format!("atom {s}"), d.len(), n)?;
            check_finite(&format!("atom {s}"), d)?;
            if d.iter().any(|&v| v < 0.0) {
                return Err(WdlError::Validation(format!("atom {s} has negative mass")));
            }
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn atom(&self, s: usize) -> &[f64] {
        &self.atoms[s]
    }

    /// Number of atoms `S`.
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Number of bins `N`.
    pub fn bins(&self) -> usize {
        self.atoms[0].len()
    }

    pub fn into_atoms(self) -> Vec<Vec<f64>> {
        self.atoms
    }
}

/// One barycenter evaluation: atoms, weights, kernel and solver options.
#[derive(Debug, Clone, Copy)]
pub struct BarycenterProblem<'a> {
    pub atoms: &'a Dictionary,
    pub weights: &'a [f64],
    pub kernel: &'a Kernel,
    /// Number of Sinkhorn iterations `L`.
    pub iters: usize,
    /// Heavyball exponent, `<= 0`; zero disables extrapolation.
    pub tau: f64,
    /// Marginal relaxation strength; `f64::INFINITY` is the balanced problem.
    pub rho: f64,
    pub log_domain: bool,
    /// Warm start: `log b^(0)` per atom. `None` means `b^(0) = 1`.
    pub init_log_b: Option<&'a [Vec<f64>]>,
}

impl<'a> BarycenterProblem<'a> {
    /// Balanced, unaccelerated, plain-domain problem.
    pub fn new(atoms: &'a Dictionary, weights: &'a [f64], kernel: &'a Kernel, iters: usize) -> Self {
        Self {
            atoms,
            weights,
            kernel,
            iters,
            tau: 0.0,
            rho: f64::INFINITY,
            log_domain: false,
            init_log_b: None,
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_log_domain(mut self, on: bool) -> Self {
        self.log_domain = on;
        self
    }

    pub fn with_warm_start(mut self, log_b: Option<&'a [Vec<f64>]>) -> Self {
        self.init_log_b = log_b;
        self
    }

    pub fn is_balanced(&self) -> bool {
        self.rho == f64::INFINITY
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.kernel.len();
        check_len("atoms", self.atoms.bins(), n)?;
        check_len("weights", self.weights.len(), self.atoms.len())?;
        check_finite("weights", self.weights)?;
        if self.weights.iter().any(|&w| w < 0.0)
            || (self.weights.iter().sum::<f64>() - 1.0).abs() > WEIGHT_TOL
        {
            return Err(WdlError::Validation(format!(
                "weights {:?} are not on the simplex",
                self.weights
            )));
        }
        if self.iters == 0 {
            return Err(WdlError::Parameter("at least one Sinkhorn iteration is required".into()));
        }
        if !(self.tau <= 0.0) || !self.tau.is_finite() {
            return Err(WdlError::Parameter(format!("tau must be <= 0, got {}", self.tau)));
        }
        if !(self.rho > 0.0) {
            return Err(WdlError::Parameter(format!("rho must be > 0 or infinite, got {}", self.rho)));
        }
        if let Some(b0) = self.init_log_b {
            check_len("warm start", b0.len(), self.atoms.len())?;
            for v in b0 {
                check_len("warm start vector", v.len(), n)?;
                check_finite("warm start vector", v)?;
            }
        }
        Ok(())
    }

    /// `(rho / (rho + gamma), gamma / (rho + gamma))`; `(1, 0)` when balanced.
    pub(crate) fn relaxation(&self) -> (f64, f64) {
        if self.is_balanced() {
            (1.0, 0.0)
        } else {
            let g = self.kernel.gamma();
            (self.rho / (self.rho + g), g / (self.rho + g))
        }
    }

    pub(crate) fn initial_b(&self) -> Vec<Vec<f64>> {
        match self.init_log_b {
            Some(b0) => b0.iter().map(|v| v.iter().map(|x| x.exp()).collect()).collect(),
            None => vec![vec![1.0; self.kernel.len()]; self.atoms.len()],
        }
    }

    pub(crate) fn initial_log_b(&self) -> Vec<Vec<f64>> {
        match self.init_log_b {
            Some(b0) => b0.to_vec(),
            None => vec![vec![0.0; self.kernel.len()]; self.atoms.len()],
        }
    }
}

/// Quantities recorded during the forward loop.
///
/// `b_history[l]` holds `b^(l)` for `l = 0..=L` and `phi_history[l - 1]`
/// holds `phi^(l) = K^T a^(l)` for `l = 1..=L`, each indexed `[atom][bin]`.
/// When `log_space` is set both histories hold logarithms.
#[derive(Debug, Clone, PartialEq)]
pub struct BarycenterTrace {
    pub barycenter: Vec<f64>,
    pub log_space: bool,
    pub b_history: Vec<Vec<Vec<f64>>>,
    pub phi_history: Vec<Vec<Vec<f64>>>,
    /// `a^(l)` for `l = 0..=L`; only filled by the generalized solvers.
    pub a_history: Vec<Vec<Vec<f64>>>,
    /// Fixed-point residual `max_s |b^(l) - b^(l-1)|_inf / |b^(l)|_inf` per
    /// iteration.
    pub residuals: Vec<f64>,
}

impl BarycenterTrace {
    pub fn iters(&self) -> usize {
        self.phi_history.len()
    }

    /// Final scalings as logarithms, suitable as a warm start.
    pub fn final_log_b(&self) -> Vec<Vec<f64>> {
        let last = self.b_history.last().expect("trace has b^(0)");
        if self.log_space {
            last.clone()
        } else {
            last.iter().map(|v| v.iter().map(|x| x.ln()).collect()).collect()
        }
    }

    /// Number of stored floats across both histories.
    pub fn stored_len(&self) -> usize {
        let count = |h: &Vec<Vec<Vec<f64>>>| h.iter().flatten().map(Vec::len).sum::<usize>();
        count(&self.b_history) + count(&self.phi_history) + count(&self.a_history)
    }

    pub fn last_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(f64::INFINITY)
    }
}

/// A forward barycenter algorithm.
pub trait BarycenterSolver: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, prob: &BarycenterProblem) -> Result<BarycenterTrace>;
}

pub fn solver_registry() -> Registry<dyn BarycenterSolver> {
    let mut r: Registry<dyn BarycenterSolver> = Registry::new("barycenter solver");
    r.register("sinkhorn", Arc::new(PlainSolver))
        .register("heavyball", Arc::new(HeavyballSolver))
        .register("unbalanced", Arc::new(UnbalancedSolver))
        .register("log-domain", Arc::new(LogDomainSolver));
    r
}

/// Name of the solver matching the problem flags.
pub fn solver_name_for(prob: &BarycenterProblem) -> &'static str {
    if prob.log_domain {
        "log-domain"
    } else if !prob.is_balanced() {
        "unbalanced"
    } else if prob.tau != 0.0 {
        "heavyball"
    } else {
        "sinkhorn"
    }
}

pub fn solver_for(prob: &BarycenterProblem) -> Arc<dyn BarycenterSolver> {
    solver_registry()
        .get(solver_name_for(prob))
        .expect("built-in solver names are registered")
}

/// Solves with the solver matching the problem flags.
pub fn barycenter(prob: &BarycenterProblem) -> Result<BarycenterTrace> {
    solver_for(prob).solve(prob)
}

/// Plain balanced generalized Sinkhorn.
pub fn barycenter_forward(prob: &BarycenterProblem) -> Result<BarycenterTrace> {
    PlainSolver.solve(prob)
}

/// Heavyball-accelerated generalized Sinkhorn.
pub fn barycenter_heavyball(prob: &BarycenterProblem) -> Result<BarycenterTrace> {
    HeavyballSolver.solve(prob)
}

/// Unbalanced (KL-relaxed) generalized Sinkhorn, optionally accelerated.
pub fn barycenter_unbalanced(prob: &BarycenterProblem) -> Result<BarycenterTrace> {
    UnbalancedSolver.solve(prob)
}

/// Log-domain generalized Sinkhorn.
pub fn barycenter_log_domain(prob: &BarycenterProblem) -> Result<BarycenterTrace> {
    LogDomainSolver.solve(prob)
}

pub(crate) fn relative_change(new: &[f64], old: &[f64]) -> f64 {
    let scale = new.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = new.iter().zip(old).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if scale == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / scale
    }
}

pub(crate) fn ensure_finite(v: &[f64], iteration: usize, what: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(WdlError::Instability {
            iteration,
            what: what.to_string(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests;
