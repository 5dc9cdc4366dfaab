//! Reverse-mode differentiation of the barycenter map `(D, lambda) -> P^(L)`.
//!
//! A backend runs the forward solver it needs, then maps a cotangent on
//! `P^(L)` (the loss gradient) to gradients in the atoms and the weights.
//! The cotangent is used as given; no centering happens here.

mod unrolled;
mod generalized;
mod log_domain;
mod jacobian;

use std::sync::Arc;

use crate::barycenter::{BarycenterProblem, BarycenterTrace};
use crate::error::{check_finite, check_len, Result};
use crate::registry::Registry;

pub use unrolled::SinkhornGrads;
pub use generalized::GeneralizedGrads;
pub use log_domain::LogSinkhornGrads;
pub use jacobian::{JacobianGrads, JACOBIAN_MAX_BINS};

#[doc(hidden)]
pub use unrolled::FlippedSignGrads;

/// Barycenter together with the gradients of one datapoint's loss.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPack {
    pub barycenter: Vec<f64>,
    /// `S x N`. The log-domain backend may report `+-inf` at empty bins of
    /// an atom when the derivative there exceeds the `f64` range.
    pub grad_atoms: Vec<Vec<f64>>,
    /// `d_s . grad_atoms[s]`, the gradient in `log d_s`. Always finite; this
    /// is what the softmax chain rule consumes.
    pub grad_log_atoms: Vec<Vec<f64>>,
    /// Length `S`.
    pub grad_weights: Vec<f64>,
}

/// A differentiation scheme for the unrolled barycenter iterations.
pub trait GradientBackend: Send + Sync {
    fn name(&self) -> &'static str;

    /// Forward solve recording what [`GradientBackend::backward`] reads.
    fn forward(&self, prob: &BarycenterProblem) -> Result<BarycenterTrace>;

    /// Pulls `loss_grad`, a cotangent on the final barycenter, back to the
    /// atoms and weights.
    fn backward(&self, prob: &BarycenterProblem, trace: &BarycenterTrace, loss_grad: &[f64]) -> Result<GradientPack>;
}

pub fn backend_registry() -> Registry<dyn GradientBackend> {
    let mut r: Registry<dyn GradientBackend> = Registry::new("gradient backend");
    r.register("sinkhorn-grads", Arc::new(SinkhornGrads))
        .register("jacobian-grads", Arc::new(JacobianGrads))
        .register("log-sinkhorn-grads", Arc::new(LogSinkhornGrads))
        .register("generalized-grads", Arc::new(GeneralizedGrads));
    r
}

/// Default backend for the problem flags.
pub fn backend_name_for(prob: &BarycenterProblem) -> &'static str {
    if prob.log_domain {
        "log-sinkhorn-grads"
    } else if prob.tau != 0.0 || !prob.is_balanced() {
        "generalized-grads"
    } else {
        "sinkhorn-grads"
    }
}

pub fn backend_for(prob: &BarycenterProblem) -> Arc<dyn GradientBackend> {
    backend_registry()
        .get(backend_name_for(prob))
        .expect("built-in backend names are registered")
}

/// Forward, evaluate `loss_grad` at the barycenter, backward.
pub fn gradients<F>(backend: &dyn GradientBackend, prob: &BarycenterProblem, loss_grad: F) -> Result<(GradientPack, BarycenterTrace)>
where
    F: FnOnce(&[f64]) -> Result<Vec<f64>>,
{
    let trace = backend.forward(prob)?;
    let g = loss_grad(&trace.barycenter)?;
    let pack = backend.backward(prob, &trace, &g)?;
    Ok((pack, trace))
}

pub(crate) fn check_cotangent(prob: &BarycenterProblem, trace: &BarycenterTrace, loss_grad: &[f64]) -> Result<()> {
    check_len("loss gradient", loss_grad.len(), prob.kernel.len())?;
    check_finite("loss gradient", loss_grad)?;
    check_len("trace length", trace.iters(), prob.iters)?;
    Ok(())
}

pub(crate) fn hadamard(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

pub(crate) fn scale_by_atoms(prob: &BarycenterProblem, grad: &[Vec<f64>]) -> Vec<Vec<f64>> {
    prob.atoms
        .atoms()
        .iter()
        .zip(grad)
        .map(|(d, g)| hadamard(d, g))
        .collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
