//! Limited-memory BFGS pieces: curvature memory with the two-loop
//! recursion, and a halving backtracking line search.

use std::collections::VecDeque;

/// Armijo constant of the sufficient-decrease test.
pub const ARMIJO_C1: f64 = 1e-4;

/// Step halvings tried before the line search gives up.
pub const MAX_LINE_SEARCH_TRIALS: usize = 30;

#[derive(Debug, Clone)]
pub struct Memory {
    capacity: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    /// `s.y / y.y` of the newest pair, kept across [`Memory::clear`].
    scale: Option<f64>,
}

impl Memory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            pairs: VecDeque::new(),
            scale: None,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Drops the curvature pairs. The initial Hessian scale survives.
    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    /// Stores `(s, y)` unless the curvature `s.y` is not safely positive.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        let yy = dot(&y, &y);
        if !(sy > 1e-12 * norm(&s) * yy.sqrt()) {
            return false;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.scale = Some(sy / yy);
        self.pairs.push_back((s, y, 1.0 / sy));
        true
    }

    /// `-H g` by the two-loop recursion. Without pairs and without a known
    /// scale this is `-g / |g|`.
    pub fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            axpy(-a, y, &mut q);
            alphas.push(a);
        }
        let h0 = match self.scale {
            Some(h) => h,
            None => 1.0 / norm(g).max(f64::MIN_POSITIVE),
        };
        q.iter_mut().for_each(|v| *v *= h0);
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            axpy(a - b, s, &mut q);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

/// Outcome of an accepted line search step.
#[derive(Debug, Clone)]
pub struct Step<T> {
    pub t: f64,
    pub x: Vec<f64>,
    pub value: f64,
    pub payload: T,
}

/// Tries `t = 1, 1/2, 1/4, ...` along `d` until
/// `f(x + t d) <= f0 + c1 t slope`. Evaluation errors count as rejected
/// trials. Returns `None` after [`MAX_LINE_SEARCH_TRIALS`] rejections.
pub fn backtrack<T, E>(
    x: &[f64],
    f0: f64,
    d: &[f64],
    slope: f64,
    mut eval: impl FnMut(&[f64]) -> Result<(f64, T), E>,
) -> Option<Step<T>> {
    let mut t = 1.0;
    for _ in 0..MAX_LINE_SEARCH_TRIALS {
        let xt: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + t * b).collect();
        if let Ok((value, payload)) = eval(&xt) {
            if value.is_finite() && value <= f0 + ARMIJO_C1 * t * slope {
                return Some(Step { t, x: xt, value, payload });
            }
        }
        t *= 0.5;
    }
    None
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}
