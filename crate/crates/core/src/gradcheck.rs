//! Gradient checks of a backend against central finite differences of the
//! energy `E(D, lambda) = L(P^(L)(D, lambda), x)`, or against another
//! backend.
//!
//! Errors are `max |got - want| / max |want|` over each atom gradient and the
//! weight gradient, after projecting onto the simplex tangent space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::barycenter::{barycenter, BarycenterProblem, Dictionary};
use crate::error::Result;
use crate::grad::{gradients, GradientBackend, GradientPack};
use crate::grid::{normalize, CostSpec, Grid};
use crate::kernel::{build_kernel, Kernel};
use crate::losses::Loss;
use crate::oracle::{fd_gradient, FdSpec};

/// One energy: kernel, atoms, weights and the datapoint `x`.
#[derive(Debug, Clone)]
pub struct GradInstance {
    pub kernel: Kernel,
    pub dict: Dictionary,
    pub weights: Vec<f64>,
    pub x: Vec<f64>,
}

impl GradInstance {
    /// Atoms, weights and datapoint with entries drawn from `[0.1, 1)` and
    /// normalized, on a unit grid of shape `dims`.
    pub fn random(seed: u64, dims: &[usize], atoms: usize, gamma: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid::unit(dims)?;
        let n = grid.len();
        let kernel = build_kernel(&CostSpec::squared_euclidean(grid), gamma)?;
        let mut hist = |len: usize| normalize((0..len).map(|_| rng.random_range(0.1..1.0)).collect(), None);
        let dict = Dictionary::new((0..atoms).map(|_| hist(n)).collect::<Result<_>>()?)?;
        let weights = hist(atoms)?;
        let x = hist(n)?;
        Ok(Self {
            kernel,
            dict,
            weights,
            x,
        })
    }
}

/// Solver options of the checked iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variant {
    pub iters: usize,
    pub tau: f64,
    pub rho: f64,
    pub log_domain: bool,
}

impl Variant {
    pub fn plain(iters: usize) -> Self {
        Self {
            iters,
            tau: 0.0,
            rho: f64::INFINITY,
            log_domain: false,
        }
    }

    fn problem<'a>(&self, dict: &'a Dictionary, weights: &'a [f64], kernel: &'a Kernel) -> BarycenterProblem<'a> {
        BarycenterProblem::new(dict, weights, kernel, self.iters)
            .with_tau(self.tau)
            .with_rho(self.rho)
            .with_log_domain(self.log_domain)
    }
}

/// Gradients of the instance energy from `backend`.
pub fn backend_pack(backend: &dyn GradientBackend, inst: &GradInstance, v: Variant, loss: &dyn Loss) -> Result<GradientPack> {
    let prob = v.problem(&inst.dict, &inst.weights, &inst.kernel);
    gradients(backend, &prob, |p| loss.grad(p, &inst.x, &inst.kernel)).map(|(pack, _)| pack)
}

/// The energy at other atoms and weights, solved with the matching forward
/// solver.
pub fn energy(inst: &GradInstance, atoms: &[Vec<f64>], weights: &[f64], v: Variant, loss: &dyn Loss) -> Result<f64> {
    let dict = Dictionary::new(atoms.to_vec())?;
    let p = barycenter(&v.problem(&dict, weights, &inst.kernel))?.barycenter;
    loss.value(&p, &inst.x, &inst.kernel)
}

/// Tangent-projected central differences `(per-atom, weights)`.
pub fn fd_reference(inst: &GradInstance, v: Variant, loss: &dyn Loss) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let spec = FdSpec {
        tangent_projection: true,
        ..FdSpec::default()
    };
    let atoms = inst.dict.atoms();
    let grad_atoms = (0..atoms.len())
        .map(|s| {
            fd_gradient(
                |d| {
                    let mut a = atoms.to_vec();
                    a[s] = d.to_vec();
                    energy(inst, &a, &inst.weights, v, loss)
                },
                &atoms[s],
                spec,
            )
        })
        .collect::<Result<_>>()?;
    let grad_weights = fd_gradient(|w| energy(inst, atoms, w, v, loss), &inst.weights, spec)?;
    Ok((grad_atoms, grad_weights))
}

/// Worst relative error of `pack` against [`fd_reference`].
pub fn fd_error(pack: &GradientPack, inst: &GradInstance, v: Variant, loss: &dyn Loss) -> Result<f64> {
    let (fd_atoms, fd_weights) = fd_reference(inst, v, loss)?;
    let mut worst = rel_err(&project(&pack.grad_weights), &fd_weights);
    for (g, f) in pack.grad_atoms.iter().zip(&fd_atoms) {
        worst = worst.max(rel_err(&project(g), f));
    }
    Ok(worst)
}

/// Worst relative error between two packs (tangent-projected).
pub fn pack_gap(got: &GradientPack, want: &GradientPack) -> f64 {
    let mut worst = rel_err(&project(&got.grad_weights), &project(&want.grad_weights));
    for (x, y) in got.grad_atoms.iter().zip(&want.grad_atoms) {
        worst = worst.max(rel_err(&project(x), &project(y)));
    }
    worst
}

/// `g - mean(g)`.
pub fn project(g: &[f64]) -> Vec<f64> {
    let mean = g.iter().sum::<f64>() / g.len() as f64;
    g.iter().map(|x| x - mean).collect()
}

/// `max |got - want| / max |want|`.
pub fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    let diff = got.iter().zip(want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = want.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    diff / scale.max(1e-300)
}
