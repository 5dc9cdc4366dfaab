//! Regular grids, histograms on them, and ground costs.

use crate::error::{check_finite, Result, WdlError};

/// Default additive jitter applied by [`Histogram::from_masses`].
pub const DEFAULT_JITTER: f64 = 1e-9;

/// Simplex membership tolerance on the total mass.
pub const SIMPLEX_TOL: f64 = 1e-10;

/// Largest grid for which a dense `N x N` cost or kernel is materialized.
pub const MAX_DENSE_BINS: usize = 4096;

/// A rectangular grid. Bin centers sit at integer multiples of the spacing;
/// bins are laid out row-major (last axis fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dims: Vec<usize>,
    spacing: Vec<f64>,
}

impl Grid {
    pub fn new(dims: Vec<usize>, spacing: Vec<f64>) -> Result<Self> {
        if dims.is_empty() {
            return Err(WdlError::Validation("grid needs at least one axis".into()));
        }
        if dims.iter().any(|&n| n == 0) {
            return Err(WdlError::Validation(format!(
                "every axis length must be >= 1, got {dims:?}"
            )));
        }
        if spacing.len() != dims.len() {
            return Err(WdlError::Validation(format!(
                "{} spacings for {} axes",
                spacing.len(),
                dims.len()
            )));
        }
        if spacing.iter().any(|&h| !(h.is_finite() && h > 0.0)) {
            return Err(WdlError::Validation(format!(
                "spacings must be positive and finite, got {spacing:?}"
            )));
        }
        Ok(Self { dims, spacing })
    }

    /// Unit-spaced grid with the given axis lengths.
    pub fn unit(dims: &[usize]) -> Result<Self> {
        Self::new(dims.to_vec(), vec![1.0; dims.len()])
    }

    pub fn line(n: usize) -> Result<Self> {
        Self::unit(&[n])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Total number of bins.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multi-index of a flat bin index.
    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims.len()];
        for (axis, &n) in self.dims.iter().enumerate().rev() {
            idx[axis] = flat % n;
            flat /= n;
        }
        idx
    }

    /// Squared Euclidean distance between the centers of two flat bins.
    pub fn sq_dist(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.unravel(i), self.unravel(j));
        a.iter()
            .zip(&b)
            .zip(&self.spacing)
            .map(|((&x, &y), &h)| {
                let d = (x as f64 - y as f64) * h;
                d * d
            })
            .sum()
    }
}

/// A nonnegative vector summing to one, attached to a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    values: Vec<f64>,
    grid: Grid,
}

impl Histogram {
    /// Wraps values that already lie on the simplex.
    pub fn new(values: Vec<f64>, grid: Grid) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(WdlError::Validation(format!(
                "histogram has {} bins but the grid has {}",
                values.len(),
                grid.len()
            )));
        }
        check_finite("histogram", &values)?;
        if let Some(i) = values.iter().position(|&v| v < 0.0) {
            return Err(WdlError::Validation(format!(
                "histogram entry {i} is negative ({})",
                values[i]
            )));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(WdlError::Validation(format!(
                "histogram mass is {total}, expected 1"
            )));
        }
        Ok(Self { values, grid })
    }

    /// Normalizes arbitrary nonnegative masses, optionally adding `jitter`
    /// to every bin first.
    pub fn from_masses(masses: Vec<f64>, grid: Grid, jitter: Option<f64>) -> Result<Self> {
        let values = normalize(masses, jitter)?;
        Self::new(values, grid)
    }

    /// Dirac mass at a flat bin index.
    pub fn dirac(grid: Grid, at: usize) -> Result<Self> {
        if at >= grid.len() {
            return Err(WdlError::Validation(format!(
                "dirac position {at} outside a grid of {} bins",
                grid.len()
            )));
        }
        let mut v = vec![0.0; grid.len()];
        v[at] = 1.0;
        Self::new(v, grid)
    }

    pub fn uniform(grid: Grid) -> Self {
        let n = grid.len();
        Self {
            values: vec![1.0 / n as f64; n],
            grid,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Normalizes nonnegative masses to unit total, adding `jitter` to every
/// entry beforehand when requested.
pub fn normalize(mut masses: Vec<f64>, jitter: Option<f64>) -> Result<Vec<f64>> {
    check_finite("masses", &masses)?;
    if let Some(i) = masses.iter().position(|&v| v < 0.0) {
        return Err(WdlError::Validation(format!(
            "mass at index {i} is negative ({})",
            masses[i]
        )));
    }
    let raw: f64 = masses.iter().sum();
    if raw <= 0.0 {
        return Err(WdlError::Validation("all masses are zero".into()));
    }
    // Jitter is relative to a unit-mass histogram.
    for v in masses.iter_mut() {
        *v /= raw;
    }
    if let Some(eps) = jitter {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(WdlError::Parameter(format!("jitter must be >= 0, got {eps}")));
        }
        for v in masses.iter_mut() {
            *v += eps;
        }
        let total: f64 = masses.iter().sum();
        for v in masses.iter_mut() {
            *v /= total;
        }
    }
    Ok(masses)
}

/// How the ground cost between bins is defined.
#[derive(Debug, Clone, PartialEq)]
pub enum CostKind {
    /// `C_ij = |x_i - x_j|^2` between bin centers.
    SquaredEuclidean,
    /// A user-supplied row-major `N x N` matrix.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub kind: CostKind,
    pub grid: Grid,
}

impl CostSpec {
    pub fn squared_euclidean(grid: Grid) -> Self {
        Self {
            kind: CostKind::SquaredEuclidean,
            grid,
        }
    }

    pub fn explicit(matrix: Vec<f64>, grid: Grid) -> Result<Self> {
        let spec = Self {
            kind: CostKind::Explicit(matrix),
            grid,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if let CostKind::Explicit(m) = &self.kind {
            let n = self.grid.len();
            if m.len() != n * n {
                return Err(WdlError::Validation(format!(
                    "explicit cost has {} entries, expected {n}x{n}",
                    m.len()
                )));
            }
            check_finite("cost matrix", m)?;
            if let Some(k) = m.iter().position(|&c| c < 0.0) {
                return Err(WdlError::Validation(format!(
                    "cost entry ({}, {}) is negative",
                    k / n,
                    k % n
                )));
            }
            if let Some(i) = (0..n).find(|&i| m[i * n + i] != 0.0) {
                return Err(WdlError::Validation(format!(
                    "cost diagonal entry {i} is nonzero"
                )));
            }
        }
        Ok(())
    }

    /// True when the cost splits into per-axis squared distances.
    pub fn is_separable(&self) -> bool {
        matches!(self.kind, CostKind::SquaredEuclidean)
    }

    /// Per-axis `n x n` cost matrices of a separable cost.
    pub fn axis_costs(&self) -> Option<Vec<Vec<f64>>> {
        if !self.is_separable() {
            return None;
        }
        Some(
            self.grid
                .dims()
                .iter()
                .zip(self.grid.spacing())
                .map(|(&n, &h)| {
                    let mut c = vec![0.0; n * n];
                    for i in 0..n {
                        for k in 0..n {
                            let d = (i as f64 - k as f64) * h;
                            c[i * n + k] = d * d;
                        }
                    }
                    c
                })
                .collect(),
        )
    }
}

/// Materializes the dense `N x N` cost matrix (row-major).
pub fn build_cost(spec: &CostSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let n = spec.grid.len();
    if n > MAX_DENSE_BINS {
        return Err(WdlError::SizeGuard(format!(
            "dense cost requested for {n} bins (limit {MAX_DENSE_BINS})"
        )));
    }
    match &spec.kind {
        CostKind::Explicit(m) => Ok(m.clone()),
        CostKind::SquaredEuclidean => {
            let mut c = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    c[i * n + j] = spec.grid.sq_dist(i, j);
                }
            }
            Ok(c)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_cost_is_squared_distance() {
        let c = build_cost(&CostSpec::squared_euclidean(Grid::line(3).unwrap())).unwrap();
        assert_eq!(c, vec![0.0, 1.0, 4.0, 1.0, 0.0, 1.0, 4.0, 1.0, 0.0]);
    }

    #[test]
    fn single_bin_cost() {
        let c = build_cost(&CostSpec::squared_euclidean(Grid::line(1).unwrap())).unwrap();
        assert_eq!(c, vec![0.0]);
    }

    #[test]
    fn diagonal_neighbour_on_square_grid() {
        let g = Grid::unit(&[2, 2]).unwrap();
        let c = build_cost(&CostSpec::squared_euclidean(g)).unwrap();
        // (0,0) is flat 0, (1,1) is flat 3
        assert_eq!(c[3], 2.0);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(c[i * 4 + j], c[j * 4 + i]);
            }
        }
    }

    #[test]
    fn spacing_scales_cost() {
        let g = Grid::new(vec![3], vec![0.5]).unwrap();
        let c = build_cost(&CostSpec::squared_euclidean(g)).unwrap();
        assert_eq!(c[2], 1.0);
    }

    #[test]
    fn explicit_cost_validation() {
        let g = Grid::line(2).unwrap();
        assert!(CostSpec::explicit(vec![0.0, -1.0, 1.0, 0.0], g.clone()).is_err());
        assert!(CostSpec::explicit(vec![0.0, 1.0, 1.0], g.clone()).is_err());
        assert!(CostSpec::explicit(vec![1.0, 1.0, 1.0, 0.0], g.clone()).is_err());
        let ok = CostSpec::explicit(vec![0.0, 2.0, 3.0, 0.0], g).unwrap();
        assert_eq!(build_cost(&ok).unwrap(), vec![0.0, 2.0, 3.0, 0.0]);
    }

    #[test]
    fn zero_axis_rejected() {
        assert!(Grid::unit(&[3, 0]).is_err());
    }

    #[test]
    fn histogram_checks() {
        let g = Grid::line(3).unwrap();
        assert!(Histogram::new(vec![0.5, 0.5, 0.1], g.clone()).is_err());
        assert!(Histogram::new(vec![1.5, -0.5, 0.0], g.clone()).is_err());
        let h = Histogram::from_masses(vec![1.0, 1.0, 2.0], g.clone(), None).unwrap();
        assert_eq!(h.values(), &[0.25, 0.25, 0.5]);
        assert!(Histogram::from_masses(vec![0.0; 3], g, None).is_err());
    }

    #[test]
    fn jitter_keeps_simplex_and_fills_zeros() {
        let g = Grid::line(4).unwrap();
        let h = Histogram::from_masses(vec![0.0, 3.0, 0.0, 1.0], g, Some(DEFAULT_JITTER)).unwrap();
        assert!(h.values().iter().all(|&v| v > 0.0));
        assert!((h.values().iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL);
    }
}
