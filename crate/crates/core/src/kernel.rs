//! Gibbs kernels `K = exp(-C / gamma)` in dense or separable form, applied
//! either directly or in the log domain.
//!
//! The log-domain routines evaluate `log(K exp(v))` with a max-shifted
//! log-sum-exp along each axis, so they stay finite for kernels whose entries
//! underflow and for inputs spanning hundreds of orders of magnitude. The
//! signed variant carries `(log|x|, sign(x))` pairs and is what the
//! log-domain backward pass uses for quantities that change sign.

use crate::error::{check_len, Result, WdlError};
use crate::grid::{build_cost, CostSpec, Grid, MAX_DENSE_BINS};

/// Which side of the kernel multiplies the vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `K v`
    Forward,
    /// `K^T v`
    Transpose,
}

/// A square matrix stored together with its exponent `-C / gamma`.
#[derive(Debug, Clone, PartialEq)]
struct Factor {
    n: usize,
    k: Vec<f64>,
    /// `k` transposed, so both directions read rows contiguously.
    kt: Vec<f64>,
    log_k: Vec<f64>,
}

impl Factor {
    fn from_cost(cost: &[f64], n: usize, gamma: f64) -> Self {
        let log_k: Vec<f64> = cost.iter().map(|&c| -c / gamma).collect();
        let k: Vec<f64> = log_k.iter().map(|&l| l.exp()).collect();
        let kt = (0..n * n).map(|idx| k[(idx % n) * n + idx / n]).collect();
        Self { n, k, kt, log_k }
    }

    #[inline]
    fn at(&self, m: &[f64], row: usize, col: usize, dir: Direction) -> f64 {
        match dir {
            Direction::Forward => m[row * self.n + col],
            Direction::Transpose => m[col * self.n + row],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Form {
    Dense(Factor),
    Separable(Vec<Factor>),
}

/// The Gibbs kernel of a cost at a given entropic strength.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    gamma: f64,
    grid: Grid,
    form: Form,
}

/// Builds the kernel of `cost`: separable for squared-Euclidean costs on a
/// grid, dense otherwise.
pub fn build_kernel(cost: &CostSpec, gamma: f64) -> Result<Kernel> {
    check_gamma(gamma)?;
    cost.validate()?;
    match cost.axis_costs() {
        Some(axes) => {
            let factors = axes
                .iter()
                .zip(cost.grid.dims())
                .map(|(c, &n)| Factor::from_cost(c, n, gamma))
                .collect();
            Ok(Kernel {
                gamma,
                grid: cost.grid.clone(),
                form: Form::Separable(factors),
            })
        }
        None => Kernel::dense(cost, gamma),
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(WdlError::Parameter(format!(
            "gamma must be positive and finite, got {gamma}"
        )));
    }
    Ok(())
}

impl Kernel {
    /// Dense kernel regardless of separability. Limited to
    /// [`MAX_DENSE_BINS`] bins.
    pub fn dense(cost: &CostSpec, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        let n = cost.grid.len();
        if n > MAX_DENSE_BINS {
            return Err(WdlError::SizeGuard(format!(
                "dense kernel requested for {n} bins (limit {MAX_DENSE_BINS}); \
                 use a separable cost"
            )));
        }
        let c = build_cost(cost)?;
        Ok(Self {
            gamma,
            grid: cost.grid.clone(),
            form: Form::Dense(Factor::from_cost(&c, n, gamma)),
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Number of bins `N`.
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn is_separable(&self) -> bool {
        matches!(self.form, Form::Separable(_))
    }

    /// Per-axis factors of a separable kernel (row-major `n x n` each).
    pub fn axis_factors(&self) -> Option<Vec<&[f64]>> {
        match &self.form {
            Form::Separable(f) => Some(f.iter().map(|f| f.k.as_slice()).collect()),
            Form::Dense(_) => None,
        }
    }

    /// The full `N x N` matrix, row-major. Separable kernels are expanded.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.len();
        match &self.form {
            Form::Dense(f) => f.k.clone(),
            Form::Separable(_) => {
                let mut m = vec![0.0; n * n];
                let mut e = vec![0.0; n];
                for j in 0..n {
                    e[j] = 1.0;
                    let col = self.apply_unchecked(&e, Direction::Forward);
                    for i in 0..n {
                        m[i * n + j] = col[i];
                    }
                    e[j] = 0.0;
                }
                m
            }
        }
    }

    /// `K v` or `K^T v`.
    pub fn apply(&self, v: &[f64], dir: Direction) -> Result<Vec<f64>> {
        check_len("kernel input", v.len(), self.len())?;
        Ok(self.apply_unchecked(v, dir))
    }

    /// `log(K exp(v))` or its transpose counterpart.
    pub fn log_apply(&self, v: &[f64], dir: Direction) -> Result<Vec<f64>> {
        check_len("kernel input", v.len(), self.len())?;
        Ok(self.log_apply_unchecked(v, dir))
    }

    pub(crate) fn apply_unchecked(&self, v: &[f64], dir: Direction) -> Vec<f64> {
        match &self.form {
            Form::Dense(f) => {
                let n = f.n;
                let mut out = vec![0.0; n];
                match dir {
                    Direction::Forward => {
                        for (i, o) in out.iter_mut().enumerate() {
                            let row = &f.k[i * n..(i + 1) * n];
                            *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
                        }
                    }
                    Direction::Transpose => {
                        for (j, &vj) in v.iter().enumerate() {
                            let row = &f.k[j * n..(j + 1) * n];
                            for (o, &kji) in out.iter_mut().zip(row) {
                                *o += kji * vj;
                            }
                        }
                    }
                }
                out
            }
            Form::Separable(factors) => {
                let mut cur = v.to_vec();
                let mut next = vec![0.0; cur.len()];
                for (axis, f) in factors.iter().enumerate() {
                    let (outer, inner) = self.axis_layout(axis);
                    let m = match dir {
                        Direction::Forward => &f.k,
                        Direction::Transpose => &f.kt,
                    };
                    let n = f.n;
                    for o in 0..outer {
                        let base = o * n * inner;
                        for i in 0..n {
                            let row = &m[i * n..(i + 1) * n];
                            let dst = &mut next[base + i * inner..base + (i + 1) * inner];
                            if inner == 1 {
                                dst[0] = row.iter().zip(&cur[base..base + n]).map(|(a, b)| a * b).sum();
                                continue;
                            }
                            dst.iter_mut().for_each(|x| *x = 0.0);
                            for (k, &mik) in row.iter().enumerate() {
                                let src = &cur[base + k * inner..base + (k + 1) * inner];
                                dst.iter_mut().zip(src).for_each(|(d, s)| *d += mik * s);
                            }
                        }
                    }
                    std::mem::swap(&mut cur, &mut next);
                }
                cur
            }
        }
    }

    pub(crate) fn log_apply_unchecked(&self, v: &[f64], dir: Direction) -> Vec<f64> {
        let signs = vec![1.0; v.len()];
        self.signed_log_apply_unchecked(v, &signs, dir).0
    }

    /// Applies the kernel to `x = sign * exp(log_abs)` and returns the result
    /// in the same `(log|.|, sign)` representation. Zero results come back as
    /// `(-inf, 0.0)`.
    pub fn signed_log_apply(
        &self,
        log_abs: &[f64],
        sign: &[f64],
        dir: Direction,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("kernel input", log_abs.len(), self.len())?;
        check_len("kernel sign input", sign.len(), self.len())?;
        Ok(self.signed_log_apply_unchecked(log_abs, sign, dir))
    }

    pub(crate) fn signed_log_apply_unchecked(
        &self,
        log_abs: &[f64],
        sign: &[f64],
        dir: Direction,
    ) -> (Vec<f64>, Vec<f64>) {
        match &self.form {
            Form::Dense(f) => {
                let n = f.n;
                let mut out_l = vec![f64::NEG_INFINITY; n];
                let mut out_s = vec![0.0; n];
                let mut terms = vec![0.0; n];
                for i in 0..n {
                    for j in 0..n {
                        terms[j] = f.at(&f.log_k, i, j, dir) + log_abs[j];
                    }
                    let (l, s) = signed_lse(&terms, sign);
                    out_l[i] = l;
                    out_s[i] = s;
                }
                (out_l, out_s)
            }
            Form::Separable(factors) => {
                let mut cur_l = log_abs.to_vec();
                let mut cur_s = sign.to_vec();
                let mut next_l = vec![0.0; cur_l.len()];
                let mut next_s = vec![0.0; cur_l.len()];
                let max_n = factors.iter().map(|f| f.n).max().unwrap_or(0);
                let mut terms = vec![0.0; max_n];
                let mut tsign = vec![0.0; max_n];
                for (axis, f) in factors.iter().enumerate() {
                    let (outer, inner) = self.axis_layout(axis);
                    for o in 0..outer {
                        let base = o * f.n * inner;
                        for s in 0..inner {
                            for k in 0..f.n {
                                tsign[k] = cur_s[base + k * inner + s];
                            }
                            for i in 0..f.n {
                                for k in 0..f.n {
                                    terms[k] = f.at(&f.log_k, i, k, dir) + cur_l[base + k * inner + s];
                                }
                                let (l, sg) = signed_lse(&terms[..f.n], &tsign[..f.n]);
                                next_l[base + i * inner + s] = l;
                                next_s[base + i * inner + s] = sg;
                            }
                        }
                    }
                    std::mem::swap(&mut cur_l, &mut next_l);
                    std::mem::swap(&mut cur_s, &mut next_s);
                }
                (cur_l, cur_s)
            }
        }
    }

    /// (product of axis lengths before `axis`, product after `axis`).
    fn axis_layout(&self, axis: usize) -> (usize, usize) {
        let dims = self.grid.dims();
        let outer = dims[..axis].iter().product();
        let inner = dims[axis + 1..].iter().product();
        (outer, inner)
    }
}

/// `log|sum_k sign_k exp(terms_k)|` and the sign of the sum, shifted by the
/// largest exponent. Terms with zero sign or `-inf` exponent drop out.
pub fn signed_lse(terms: &[f64], sign: &[f64]) -> (f64, f64) {
    let mut m = f64::NEG_INFINITY;
    for (&t, &s) in terms.iter().zip(sign) {
        if s != 0.0 && t > m {
            m = t;
        }
    }
    if m == f64::NEG_INFINITY {
        return (f64::NEG_INFINITY, 0.0);
    }
    if m == f64::INFINITY {
        return (f64::INFINITY, 1.0);
    }
    let mut acc = 0.0;
    for (&t, &s) in terms.iter().zip(sign) {
        if s != 0.0 {
            acc += s * (t - m).exp();
        }
    }
    if acc == 0.0 {
        (f64::NEG_INFINITY, 0.0)
    } else {
        (acc.abs().ln() + m, acc.signum())
    }
}

/// Plain max-shifted log-sum-exp.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    terms.iter().map(|&t| (t - m).exp()).sum::<f64>().ln() + m
}

/// Log-domain separable kernel application on raw per-axis costs:
/// returns `log(K exp(v))` for `K = exp(-(C_1 (+) ... (+) C_d) / gamma)`.
///
/// `axis_costs[a]` is the row-major `n_a x n_a` cost of axis `a`; `v` is laid
/// out row-major over the axes.
pub fn log_separable_kernel(axis_costs: &[Vec<f64>], dims: &[usize], gamma: f64, v: &[f64]) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    if axis_costs.len() != dims.len() {
        return Err(WdlError::Validation(format!(
            "{} axis costs for {} axes",
            axis_costs.len(),
            dims.len()
        )));
    }
    for (c, &n) in axis_costs.iter().zip(dims) {
        check_len("axis cost", c.len(), n * n)?;
    }
    let grid = Grid::unit(dims)?;
    let kernel = Kernel {
        gamma,
        grid,
        form: Form::Separable(
            axis_costs
                .iter()
                .zip(dims)
                .map(|(c, &n)| Factor::from_cost(c, n, gamma))
                .collect(),
        ),
    };
    kernel.log_apply(v, Direction::Forward)
}
