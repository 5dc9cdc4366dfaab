//! Reference computations for tests: central finite differences, an
//! entropic OT solver working on the dual, and the best rank-k linear fit.
//!
//! Nothing here touches the Sinkhorn or kernel code.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Result, WdlError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdSpec {
    pub step: f64,
    /// Perturb along `e_i - 1/n` instead of `e_i`, staying on the simplex's
    /// tangent space.
    pub tangent_projection: bool,
}

impl Default for FdSpec {
    fn default() -> Self {
        Self {
            step: 1e-6,
            tangent_projection: false,
        }
    }
}

/// Central differences of `f` at `at`, one coordinate direction at a time.
pub fn fd_gradient<F>(f: F, at: &[f64], spec: FdSpec) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(spec.step > 0.0) {
        return Err(WdlError::Parameter(format!("FD step must be positive, got {}", spec.step)));
    }
    let n = at.len();
    let h = spec.step;
    let mut x = at.to_vec();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut eval = |sign: f64| -> Result<f64> {
            for j in 0..n {
                let e = if i == j { 1.0 } else { 0.0 };
                let dir = if spec.tangent_projection { e - 1.0 / n as f64 } else { e };
                x[j] = at[j] + sign * h * dir;
            }
            let v = f(&x)?;
            if !v.is_finite() {
                return Err(WdlError::Validation(format!("FD: non-finite value along coordinate {i}")));
            }
            Ok(v)
        };
        let plus = eval(1.0)?;
        let minus = eval(-1.0)?;
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// Maximizer of the entropic dual.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    /// Potential paired with `p`; `-inf` off its support.
    pub f: Vec<f64>,
    /// Potential paired with `q`; `-inf` off its support.
    pub g: Vec<f64>,
    /// `<f, p> + <g, q> - gamma * sum_ij exp((f_i + g_j - C_ij) / gamma)`.
    pub value: f64,
    pub iters: usize,
}

/// Largest `N` accepted by [`dual_ascent_ot`].
pub const DUAL_MAX_BINS: usize = 32;
const DUAL_MAX_ITERS: usize = 10_000;

/// Maximizes the entropic dual over potentials on the supports of `p` and
/// `q` by damped Newton ascent with a backtracking line search, stopping
/// once the L1 marginal violation is below `tol`. The last potential of `q`
/// is pinned to zero to remove the additive gauge.
pub fn dual_ascent_ot(p: &[f64], q: &[f64], cost: &[f64], gamma: f64, tol: f64) -> Result<DualSolution> {
    let n = p.len();
    check_len("q", q.len(), n)?;
    check_len("cost", cost.len(), n * n)?;
    if n > DUAL_MAX_BINS {
        return Err(WdlError::SizeGuard(format!("dual oracle limited to N <= {DUAL_MAX_BINS}")));
    }
    if !(gamma > 0.0) || !(tol > 0.0) {
        return Err(WdlError::Parameter("gamma and tol must be positive".into()));
    }
    let rows: Vec<usize> = (0..n).filter(|&i| p[i] > 0.0).collect();
    let cols: Vec<usize> = (0..n).filter(|&j| q[j] > 0.0).collect();
    if rows.is_empty() || cols.is_empty() {
        return Err(WdlError::Validation("p and q need nonempty supports".into()));
    }
    let (nr, nc) = (rows.len(), cols.len());
    let free = nr + nc - 1;

    let plan = |x: &DVector<f64>| -> DMatrix<f64> {
        DMatrix::from_fn(nr, nc, |a, b| {
            let g = if b + 1 == nc { 0.0 } else { x[nr + b] };
            ((x[a] + g - cost[rows[a] * n + cols[b]]) / gamma).exp()
        })
    };
    let objective = |x: &DVector<f64>, t: &DMatrix<f64>| -> f64 {
        let lin: f64 = (0..nr).map(|a| x[a] * p[rows[a]]).sum::<f64>()
            + (0..nc - 1).map(|b| x[nr + b] * q[cols[b]]).sum::<f64>();
        lin - gamma * t.sum()
    };

    let marginal_violation = |t: &DMatrix<f64>| -> f64 {
        let r = t.column_sum();
        let c = t.row_sum();
        (0..nr).map(|a| (p[rows[a]] - r[a]).abs()).sum::<f64>()
            + (0..nc).map(|b| (q[cols[b]] - c[b]).abs()).sum::<f64>()
    };

    let mut x = DVector::zeros(free);
    let mut t = plan(&x);
    let mut value = objective(&x, &t);
    let mut violation = marginal_violation(&t);
    for iter in 0..DUAL_MAX_ITERS {
        let r = t.column_sum();
        let c = t.row_sum();
        if violation <= tol {
            let f = scatter(&rows, n, |a| x[a]);
            let g = scatter(&cols, n, |b| if b + 1 == nc { 0.0 } else { x[nr + b] });
            return Ok(DualSolution { f, g, value, iters: iter });
        }
        let grad = DVector::from_fn(free, |k, _| {
            if k < nr {
                p[rows[k]] - r[k]
            } else {
                q[cols[k - nr]] - c[k - nr]
            }
        });
        // Negated Hessian, (1/gamma) [[diag r, T], [T^T, diag c]] without the pinned column.
        let mut h = DMatrix::zeros(free, free);
        for a in 0..nr {
            h[(a, a)] = r[a] / gamma;
            for b in 0..nc - 1 {
                h[(a, nr + b)] = t[(a, b)] / gamma;
                h[(nr + b, a)] = t[(a, b)] / gamma;
            }
        }
        for b in 0..nc - 1 {
            h[(nr + b, nr + b)] = c[b] / gamma;
        }
        let dir = match h.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => grad.clone(),
        };
        let slope = grad.dot(&dir);
        let mut step = 1.0;
        loop {
            let trial = &x + step * &dir;
            let tt = plan(&trial);
            let tv = objective(&trial, &tt);
            // Close to the optimum the value changes by less than its own
            // rounding, so a step that shrinks the violation is also taken.
            let tviol = marginal_violation(&tt);
            if tv.is_finite() && (tv >= value + 1e-4 * step * slope || tviol < violation) {
                x = trial;
                t = tt;
                value = tv;
                violation = tviol;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                return Err(WdlError::NoConvergence(format!(
                    "dual line search stalled at violation {violation:e}"
                )));
            }
        }
    }
    Err(WdlError::NoConvergence(format!("dual ascent did not reach tol {tol:e}")))
}

fn scatter(idx: &[usize], n: usize, val: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut out = vec![f64::NEG_INFINITY; n];
    for (k, &i) in idx.iter().enumerate() {
        out[i] = val(k);
    }
    out
}

/// Squared Frobenius error of the best rank-`k` approximation of the
/// uncentered data matrix (one datapoint per row): the sum of the trailing
/// squared singular values.
pub fn rank_k_baseline(data: &[Vec<f64>], k: usize) -> Result<f64> {
    let m = data.len();
    let Some(n) = data.first().map(Vec::len) else {
        return Err(WdlError::Validation("empty dataset".into()));
    };
    if k > m.min(n) {
        return Err(WdlError::Parameter(format!("rank {k} exceeds min(N, M) = {}", m.min(n))));
    }
    for (i, row) in data.iter().enumerate() {
        check_len(&format!("datapoint {i}"), row.len(), n)?;
    }
    let mat = DMatrix::from_fn(m, n, |i, j| data[i][j]);
    let mut sv: Vec<f64> = mat.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv.iter().skip(k).map(|s| s * s).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fd_of_simple_functions() {
        let g = fd_gradient(|x| Ok(x[0] * x[0] + x[1] * x[1]), &[1.0, 2.0], FdSpec::default()).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
        let c = [0.5, -3.0, 2.0];
        let g = fd_gradient(|x| Ok(x.iter().zip(&c).map(|(a, b)| a * b).sum()), &[0.1, 0.2, 0.3], FdSpec::default())
            .unwrap();
        assert!(g.iter().zip(&c).all(|(a, b)| (a - b).abs() < 1e-9));
        let tangent = FdSpec {
            tangent_projection: true,
            ..FdSpec::default()
        };
        let g = fd_gradient(|x| Ok(x.iter().zip(&c).map(|(a, b)| a * b).sum()), &[0.1, 0.2, 0.3], tangent).unwrap();
        let mean = c.iter().sum::<f64>() / 3.0;
        assert!(g.iter().zip(&c).all(|(a, b)| (a - (b - mean)).abs() < 1e-9));
        assert!(fd_gradient(|_| Ok(f64::NAN), &[1.0], FdSpec::default()).is_err());
        assert!(fd_gradient(|_| Ok(0.0), &[1.0], FdSpec { step: 0.0, ..FdSpec::default() }).is_err());
    }

    #[test]
    fn dual_closed_form_cases() {
        let cost = [0.0, 1.0, 4.0, 1.0, 0.0, 1.0, 4.0, 1.0, 0.0];
        for gamma in [0.3, 1.0, 5.0] {
            let sol = dual_ascent_ot(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &cost, gamma, 1e-13).unwrap();
            assert!((sol.value + gamma).abs() < 1e-12);
        }
        let sol = dual_ascent_ot(&[0.5, 0.5], &[0.5, 0.5], &[0.0; 4], 1.0, 1e-14).unwrap();
        assert!((sol.value + (2.0 * 2f64.ln() + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn dual_marginals_and_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 8;
        let p: Vec<f64> = {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let s: f64 = v.iter().sum();
            v.iter().map(|x| x / s).collect()
        };
        let cost: Vec<f64> = (0..n * n).map(|k| ((k / n) as f64 - (k % n) as f64).powi(2)).collect();
        let sol = dual_ascent_ot(&p, &p, &cost, 1.0, 1e-12).unwrap();
        // Symmetric instance: the potentials agree up to the pinned gauge.
        let shift = sol.f[0] - sol.g[0];
        assert!(sol.f.iter().zip(&sol.g).all(|(a, b)| (a - b - shift).abs() < 1e-8));
        assert!(dual_ascent_ot(&vec![0.0; 40], &vec![0.0; 40], &vec![0.0; 1600], 1.0, 1e-9).is_err());
    }

    #[test]
    fn rank_k_cases() {
        let data = vec![vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0]];
        assert!(rank_k_baseline(&data, 2).unwrap().abs() < 1e-24);
        assert!((rank_k_baseline(&data, 1).unwrap() - 1.0).abs() < 1e-12);
        assert!((rank_k_baseline(&data, 0).unwrap() - 5.0).abs() < 1e-12);
        assert!(rank_k_baseline(&data, 3).is_err());
    }
}
