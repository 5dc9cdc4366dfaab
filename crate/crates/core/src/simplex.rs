//! Softmax change of variables onto the probability simplex.

use crate::error::{check_finite, check_len, Result};

/// Unconstrained logits whose softmax is a point of the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexParam {
    logits: Vec<f64>,
}

impl SimplexParam {
    pub fn new(logits: Vec<f64>) -> Result<Self> {
        check_finite("logits", &logits)?;
        Ok(Self { logits })
    }

    /// All-zero logits, i.e. the uniform point.
    pub fn zeros(n: usize) -> Self {
        Self { logits: vec![0.0; n] }
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn softmax(&self) -> Vec<f64> {
        softmax_unchecked(&self.logits)
    }
}

/// `exp(u) / sum(exp(u))`, computed with a max shift.
pub fn softmax(param: &SimplexParam) -> Result<Vec<f64>> {
    check_finite("logits", param.logits())?;
    Ok(softmax_unchecked(param.logits()))
}

pub(crate) fn softmax_unchecked(u: &[f64]) -> Vec<f64> {
    let m = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = u.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    for v in e.iter_mut() {
        *v /= z;
    }
    e
}

/// Vector-Jacobian product of the softmax: `(I - F 1^T) diag(F) c`, which
/// equals `F * (c - <F, c>)` entrywise. The Jacobian is symmetric so this is
/// also the JVP.
pub fn softmax_vjp(param: &SimplexParam, cotangent: &[f64]) -> Result<Vec<f64>> {
    check_len("softmax cotangent", cotangent.len(), param.len())?;
    let f = param.softmax();
    Ok(softmax_vjp_at(&f, cotangent))
}

/// Same as [`softmax_vjp`] given the softmax output `f` directly.
pub fn softmax_vjp_at(f: &[f64], cotangent: &[f64]) -> Vec<f64> {
    let mean: f64 = f.iter().zip(cotangent).map(|(a, b)| a * b).sum();
    f.iter().zip(cotangent).map(|(&fi, &ci)| fi * (ci - mean)).collect()
}
