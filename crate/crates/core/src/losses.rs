//! Fitting losses `L(p, q)` between a reconstruction `p` and a datapoint `q`,
//! with gradients in `p`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{check_len, Result, WdlError};
use crate::kernel::Kernel;
use crate::registry::Registry;
use crate::sinkhorn::ot_cost;

/// Inner Sinkhorn iterations of the Wasserstein loss when none are given.
pub const DEFAULT_INNER_ITERS: usize = 100;

pub trait Loss: Send + Sync {
    /// Name as accepted by [`LossKind::from_str`].
    fn name(&self) -> String;
    /// `kernel` is only read by transport-based losses.
    fn value(&self, p: &[f64], q: &[f64], kernel: &Kernel) -> Result<f64>;
    fn grad(&self, p: &[f64], q: &[f64], kernel: &Kernel) -> Result<Vec<f64>>;

    fn value_and_grad(&self, p: &[f64], q: &[f64], kernel: &Kernel) -> Result<(f64, Vec<f64>)> {
        Ok((self.value(p, q, kernel)?, self.grad(p, q, kernel)?))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TotalVariation;

#[derive(Debug, Clone, Copy, Default)]
pub struct Quadratic;

/// `sum p log(p/q) - p + q`. The gradient is `log(p/q)`; with `printed` set
/// it is shifted by `-1`, which is not the derivative of the value.
#[derive(Debug, Clone, Copy, Default)]
pub struct KullbackLeibler {
    pub printed: bool,
}

/// Entropic transport cost from `p / |p|` to `q` after a fixed number of
/// Sinkhorn iterations.
#[derive(Debug, Clone, Copy)]
pub struct Wasserstein {
    pub inner_iters: usize,
}

fn check_pair(p: &[f64], q: &[f64]) -> Result<()> {
    check_len("loss arguments", p.len(), q.len())?;
    if p.iter().chain(q).any(|x| !x.is_finite()) {
        return Err(WdlError::Validation("loss arguments must be finite".into()));
    }
    Ok(())
}

impl Loss for TotalVariation {
    fn name(&self) -> String {
        "tv".into()
    }

    fn value(&self, p: &[f64], q: &[f64], _: &Kernel) -> Result<f64> {
        check_pair(p, q)?;
        Ok(p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum())
    }

    /// `sign(p - q)` with `sign(0) = 0`.
    fn grad(&self, p: &[f64], q: &[f64], _: &Kernel) -> Result<Vec<f64>> {
        check_pair(p, q)?;
        Ok(p.iter()
            .zip(q)
            .map(|(a, b)| {
                let d = a - b;
                if d == 0.0 {
                    0.0
                } else {
                    d.signum()
                }
            })
            .collect())
    }
}

impl Loss for Quadratic {
    fn name(&self) -> String {
        "quadratic".into()
    }

    fn value(&self, p: &[f64], q: &[f64], _: &Kernel) -> Result<f64> {
        check_pair(p, q)?;
        Ok(p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum())
    }

    fn grad(&self, p: &[f64], q: &[f64], _: &Kernel) -> Result<Vec<f64>> {
        check_pair(p, q)?;
        Ok(p.iter().zip(q).map(|(a, b)| 2.0 * (a - b)).collect())
    }
}

impl KullbackLeibler {
    fn check_domain(p: &[f64], q: &[f64]) -> Result<()> {
        check_pair(p, q)?;
        for (i, (&a, &b)) in p.iter().zip(q).enumerate() {
            if a < 0.0 || b < 0.0 || ((a == 0.0) != (b == 0.0)) {
                return Err(WdlError::Domain(format!(
                    "KL undefined at bin {i} (p = {a}, q = {b}); add jitter to both histograms"
                )));
            }
        }
        Ok(())
    }
}

impl Loss for KullbackLeibler {
    fn name(&self) -> String {
        if self.printed { "kl-printed" } else { "kl" }.into()
    }

    fn value(&self, p: &[f64], q: &[f64], _: &Kernel) -> Result<f64> {
        Self::check_domain(p, q)?;
        Ok(p.iter()
            .zip(q)
            .map(|(&a, &b)| if a == 0.0 { b } else { a * (a / b).ln() - a + b })
            .sum())
    }

    fn grad(&self, p: &[f64], q: &[f64], _: &Kernel) -> Result<Vec<f64>> {
        Self::check_domain(p, q)?;
        let shift = if self.printed { -1.0 } else { 0.0 };
        Ok(p.iter()
            .zip(q)
            .map(|(&a, &b)| if a == 0.0 { 0.0 } else { (a / b).ln() + shift })
            .collect())
    }
}

impl Wasserstein {
    fn normalized(p: &[f64]) -> Result<(Vec<f64>, f64)> {
        if p.iter().any(|&x| x < 0.0) {
            return Err(WdlError::Domain("Wasserstein loss needs a nonnegative first argument".into()));
        }
        let mass: f64 = p.iter().sum();
        if !(mass > 0.0) {
            return Err(WdlError::Domain("Wasserstein loss needs positive mass".into()));
        }
        Ok((p.iter().map(|x| x / mass).collect(), mass))
    }
}

impl Loss for Wasserstein {
    fn name(&self) -> String {
        format!("wasserstein:{}", self.inner_iters)
    }

    fn value(&self, p: &[f64], q: &[f64], kernel: &Kernel) -> Result<f64> {
        self.value_and_grad(p, q, kernel).map(|(v, _)| v)
    }

    fn grad(&self, p: &[f64], q: &[f64], kernel: &Kernel) -> Result<Vec<f64>> {
        self.value_and_grad(p, q, kernel).map(|(_, g)| g)
    }

    /// The potential `gamma log b` pairs with `p / |p|`; pulling it back
    /// through the normalization centers it by its `p`-weighted mean.
    fn value_and_grad(&self, p: &[f64], q: &[f64], kernel: &Kernel) -> Result<(f64, Vec<f64>)> {
        check_pair(p, q)?;
        let (p_hat, mass) = Self::normalized(p)?;
        let cost = ot_cost(&p_hat, q, kernel, self.inner_iters)?;
        let f: Vec<f64> = cost.state.b.iter().map(|b| kernel.gamma() * b.ln()).collect();
        let mean: f64 = f
            .iter()
            .zip(&p_hat)
            .filter(|(_, &w)| w > 0.0)
            .map(|(f, w)| f * w)
            .sum();
        let grad = f
            .iter()
            .zip(&p_hat)
            .map(|(f, &w)| if w > 0.0 { (f - mean) / mass } else { 0.0 })
            .collect();
        Ok((cost.value, grad))
    }
}

/// Loss selector as written in configs and on the command line: `tv`,
/// `quadratic`, `kl`, `kl-printed`, `wasserstein` or `wasserstein:<iters>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    TotalVariation,
    Quadratic,
    KullbackLeibler,
    KullbackLeiblerPrinted,
    Wasserstein { inner_iters: usize },
}

impl LossKind {
    pub fn build(&self) -> Arc<dyn Loss> {
        match *self {
            LossKind::Wasserstein { inner_iters } => Arc::new(Wasserstein { inner_iters }),
            other => loss_registry()
                .get(&other.to_string())
                .expect("built-in loss names are registered"),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::TotalVariation => write!(f, "tv"),
            LossKind::Quadratic => write!(f, "quadratic"),
            LossKind::KullbackLeibler => write!(f, "kl"),
            LossKind::KullbackLeiblerPrinted => write!(f, "kl-printed"),
            LossKind::Wasserstein { inner_iters } => write!(f, "wasserstein:{inner_iters}"),
        }
    }
}

impl FromStr for LossKind {
    type Err = WdlError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("wasserstein") {
            let inner_iters = match rest.strip_prefix(':') {
                Some(n) => n
                    .parse()
                    .map_err(|_| WdlError::Parameter(format!("bad inner iteration count in `{s}`")))?,
                None if rest.is_empty() => DEFAULT_INNER_ITERS,
                None => return Err(unknown(s)),
            };
            if inner_iters == 0 {
                return Err(WdlError::Parameter("Wasserstein loss needs at least one inner iteration".into()));
            }
            return Ok(LossKind::Wasserstein { inner_iters });
        }
        match s {
            "tv" => Ok(LossKind::TotalVariation),
            "quadratic" => Ok(LossKind::Quadratic),
            "kl" => Ok(LossKind::KullbackLeibler),
            "kl-printed" => Ok(LossKind::KullbackLeiblerPrinted),
            _ => Err(unknown(s)),
        }
    }
}

fn unknown(s: &str) -> WdlError {
    WdlError::UnknownStrategy {
        kind: "loss",
        name: s.to_string(),
        available: loss_registry().names().join(", "),
    }
}

pub fn loss_registry() -> Registry<dyn Loss> {
    let mut r: Registry<dyn Loss> = Registry::new("loss");
    r.register("tv", Arc::new(TotalVariation))
        .register("quadratic", Arc::new(Quadratic))
        .register("kl", Arc::new(KullbackLeibler { printed: false }))
        .register("kl-printed", Arc::new(KullbackLeibler { printed: true }))
        .register(
            "wasserstein",
            Arc::new(Wasserstein {
                inner_iters: DEFAULT_INNER_ITERS,
            }),
        );
    r
}
