//! Dictionary learning: the reconstruction energy over softmax-parameterized
//! atoms and weights, and a limited-memory quasi-Newton trainer.
//!
//! Atoms are `d_s = softmax(alpha_s)` and the weights of datapoint `i` are
//! `lambda_i = softmax(beta_i)`. Atoms and weights are updated together; the
//! weight gradient is multiplied by `zeta`.

pub mod lbfgs;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::barycenter::{barycenter, BarycenterProblem, Dictionary};
use crate::error::{check_finite, check_len, Result, WdlError};
use crate::grad::{backend_for, gradients, GradientPack};
use crate::kernel::Kernel;
use crate::losses::LossKind;
use crate::simplex::{softmax_vjp_at, SimplexParam};
use lbfgs::{backtrack, dot, norm, Memory};

/// Tolerance on `|sum - 1|` for datapoints handed to the trainer.
const DATA_SIMPLEX_TOL: f64 = 1e-8;

/// Stop when the gradient norm falls below this.
const GRAD_TOL: f64 = 1e-14;

/// Atom initialization. Weight logits are always standard normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitKind {
    /// All atom logits zero, i.e. every atom is `1/N`.
    #[default]
    UniformAtoms,
    /// Standard-normal atom logits.
    RandomAtoms,
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitKind::UniformAtoms => "uniform-atoms",
            InitKind::RandomAtoms => "random-atoms",
        })
    }
}

impl FromStr for InitKind {
    type Err = WdlError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "uniform-atoms" | "uniform" => Ok(InitKind::UniformAtoms),
            "random-atoms" | "random" => Ok(InitKind::RandomAtoms),
            other => Err(WdlError::Parameter(format!(
                "unknown init `{other}` (expected uniform-atoms or random-atoms)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Number of atoms `S`.
    pub atoms: usize,
    /// Sinkhorn iterations `L` per barycenter evaluation.
    pub iters: usize,
    pub gamma: f64,
    pub loss: LossKind,
    /// Weight-gradient scale; `None` means `N / (100 M)`.
    pub zeta: Option<f64>,
    pub tau: f64,
    pub rho: f64,
    pub log_domain: bool,
    pub warm_start: bool,
    /// Clear the curvature memory every this many outer iterations; 0 never.
    pub restart_every: usize,
    pub max_outer_iters: usize,
    pub lbfgs_memory: usize,
    pub seed: u64,
    pub init: InitKind,
    /// Evaluate datapoints sequentially on the calling thread. Parallel runs
    /// reduce in index order too, so both modes give the same numbers.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            atoms: 2,
            iters: 30,
            gamma: 1.0,
            loss: LossKind::Quadratic,
            zeta: None,
            tau: 0.0,
            rho: f64::INFINITY,
            log_domain: false,
            warm_start: false,
            restart_every: 0,
            max_outer_iters: 100,
            lbfgs_memory: 10,
            seed: 0,
            init: InitKind::UniformAtoms,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.atoms < 2 {
            return Err(WdlError::Parameter(format!("need at least 2 atoms, got {}", self.atoms)));
        }
        if self.iters == 0 {
            return Err(WdlError::Parameter("at least one Sinkhorn iteration is required".into()));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(WdlError::Parameter(format!("gamma must be positive, got {}", self.gamma)));
        }
        if let Some(z) = self.zeta {
            if !(z > 0.0) || !z.is_finite() {
                return Err(WdlError::Parameter(format!("zeta must be positive, got {z}")));
            }
        }
        if !(self.tau <= 0.0) || !self.tau.is_finite() {
            return Err(WdlError::Parameter(format!("tau must be <= 0, got {}", self.tau)));
        }
        if !(self.rho > 0.0) {
            return Err(WdlError::Parameter(format!("rho must be > 0 or infinite, got {}", self.rho)));
        }
        if self.lbfgs_memory == 0 {
            return Err(WdlError::Parameter("lbfgs_memory must be at least 1".into()));
        }
        Ok(())
    }

    /// `zeta`, or its default for `n` bins and `m` datapoints.
    pub fn zeta_for(&self, n: usize, m: usize) -> f64 {
        self.zeta.unwrap_or(n as f64 / (100.0 * m as f64))
    }
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRecord {
    pub outer_iter: usize,
    pub objective: f64,
    /// Mean over datapoints of `|P_i - x_i|^2`.
    pub mean_recon_error: f64,
    pub seconds: f64,
}

/// Final scalings of the previous evaluation, `log b`, indexed
/// `[datapoint][atom][bin]`, with the settings they were computed under.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub atoms: usize,
    pub gamma: f64,
    pub iters: usize,
    pub log_b: Vec<Vec<Vec<f64>>>,
}

impl WarmStart {
    fn matches(&self, cfg: &TrainConfig, m: usize) -> bool {
        self.atoms == cfg.atoms && self.gamma == cfg.gamma && self.iters == cfg.iters && self.log_b.len() == m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Atom logits, `S` blocks of length `N`.
    pub alpha: Vec<SimplexParam>,
    /// Weight logits, `M` blocks of length `S`.
    pub beta: Vec<SimplexParam>,
    pub warm: Option<WarmStart>,
    pub history: Vec<HistoryRecord>,
}

impl TrainState {
    /// Seeded initial state for `n` bins and `m` datapoints.
    pub fn init(n: usize, m: usize, cfg: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut normal = |len: usize| -> Vec<f64> { (0..len).map(|_| StandardNormal.sample(&mut rng)).collect() };
        let alpha = (0..cfg.atoms)
            .map(|_| match cfg.init {
                InitKind::UniformAtoms => SimplexParam::zeros(n),
                InitKind::RandomAtoms => SimplexParam::new(normal(n)).expect("normal draws are finite"),
            })
            .collect();
        let beta = (0..m)
            .map(|_| SimplexParam::new(normal(cfg.atoms)).expect("normal draws are finite"))
            .collect();
        Self {
            alpha,
            beta,
            warm: None,
            history: Vec::new(),
        }
    }

    pub fn dictionary(&self) -> Dictionary {
        Dictionary::new(self.alpha.iter().map(SimplexParam::softmax).collect()).expect("softmax output is a valid atom")
    }

    pub fn weights(&self) -> Vec<Vec<f64>> {
        self.beta.iter().map(SimplexParam::softmax).collect()
    }

    /// All logits, atoms first.
    pub fn theta(&self) -> Vec<f64> {
        self.alpha.iter().chain(&self.beta).flat_map(|p| p.logits().iter().copied()).collect()
    }

    pub fn set_theta(&mut self, theta: &[f64]) {
        let mut it = theta.iter().copied();
        for p in self.alpha.iter_mut().chain(self.beta.iter_mut()) {
            p.logits_mut().iter_mut().for_each(|v| *v = it.next().expect("theta length"));
        }
    }

    fn warm_for(&self, cfg: &TrainConfig) -> Option<&[Vec<Vec<f64>>]> {
        match &self.warm {
            Some(w) if cfg.warm_start && w.matches(cfg, self.beta.len()) => Some(&w.log_b),
            _ => None,
        }
    }
}

/// Energy value and gradients at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Energy {
    pub value: f64,
    /// `S x N`, gradient in the atom logits.
    pub grad_alpha: Vec<Vec<f64>>,
    /// `M x S`, gradient in the weight logits, multiplied by `zeta`.
    pub grad_beta: Vec<Vec<f64>>,
    /// Barycenter `P^(L)` of every datapoint.
    pub reconstructions: Vec<Vec<f64>>,
    /// Final `log b` per datapoint, the next warm start.
    pub final_log_b: Vec<Vec<Vec<f64>>>,
}

impl Energy {
    fn flat_grad(&self) -> Vec<f64> {
        self.grad_alpha.iter().chain(&self.grad_beta).flatten().copied().collect()
    }

    pub fn mean_recon_error(&self, data: &[Vec<f64>]) -> f64 {
        mean_sq_error(&self.reconstructions, data)
    }
}

/// Mean over rows of `|a_i - b_i|^2`.
pub fn mean_sq_error(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let total: f64 = a
        .iter()
        .zip(b)
        .map(|(p, x)| p.iter().zip(x).map(|(u, v)| (u - v) * (u - v)).sum::<f64>())
        .sum();
    total / a.len().max(1) as f64
}

/// Checks that every datapoint is a finite nonnegative vector of length `n`
/// summing to one.
pub fn validate_data(data: &[Vec<f64>], n: usize) -> Result<()> {
    if data.is_empty() {
        return Err(WdlError::Validation("dataset is empty".into()));
    }
    for (i, x) in data.iter().enumerate() {
        let label = format!("datapoint {i}");
        check_len(&label, x.len(), n)?;
        check_finite(&label, x)?;
        if x.iter().any(|&v| v < 0.0) {
            return Err(WdlError::Validation(format!("{label} has negative mass")));
        }
        let sum: f64 = x.iter().sum();
        if (sum - 1.0).abs() > DATA_SIMPLEX_TOL {
            return Err(WdlError::Validation(format!("{label} sums to {sum}, not 1")));
        }
    }
    Ok(())
}

fn check_setup(data: &[Vec<f64>], kernel: &Kernel, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    validate_data(data, kernel.len())?;
    if (kernel.gamma() - cfg.gamma).abs() > 1e-12 * cfg.gamma {
        return Err(WdlError::Parameter(format!(
            "kernel built for gamma {} but config has {}",
            kernel.gamma(),
            cfg.gamma
        )));
    }
    Ok(())
}

fn problem<'a>(
    dict: &'a Dictionary,
    weights: &'a [f64],
    kernel: &'a Kernel,
    cfg: &TrainConfig,
    warm: Option<&'a [Vec<f64>]>,
) -> BarycenterProblem<'a> {
    BarycenterProblem::new(dict, weights, kernel, cfg.iters)
        .with_tau(cfg.tau)
        .with_rho(cfg.rho)
        .with_log_domain(cfg.log_domain)
        .with_warm_start(warm)
}

/// `sum_i L(P^(L)(D, lambda_i), x_i)` with its gradients in the logits.
///
/// The warm start in `state`, if any, is a constant of the evaluation. A
/// failing datapoint aborts the evaluation; its index is in the error.
pub fn energy_and_grads(state: &TrainState, data: &[Vec<f64>], kernel: &Kernel, cfg: &TrainConfig) -> Result<Energy> {
    check_state(state, data, kernel, cfg)?;
    evaluate(state, data, kernel, cfg)
}

fn check_state(state: &TrainState, data: &[Vec<f64>], kernel: &Kernel, cfg: &TrainConfig) -> Result<()> {
    check_setup(data, kernel, cfg)?;
    check_len("weight logits", state.beta.len(), data.len())?;
    check_len("atom logits", state.alpha.len(), cfg.atoms)?;
    for (s, a) in state.alpha.iter().enumerate() {
        check_len(&format!("atom logits {s}"), a.len(), kernel.len())?;
    }
    for (i, b) in state.beta.iter().enumerate() {
        check_len(&format!("weight logits {i}"), b.len(), cfg.atoms)?;
    }
    Ok(())
}

fn evaluate(state: &TrainState, data: &[Vec<f64>], kernel: &Kernel, cfg: &TrainConfig) -> Result<Energy> {
    for p in state.alpha.iter().chain(&state.beta) {
        check_finite("logits", p.logits())?;
    }
    let dict = state.dictionary();
    let weights = state.weights();
    debug_assert!(dict
        .atoms()
        .iter()
        .chain(&weights)
        .all(|v| (v.iter().sum::<f64>() - 1.0).abs() < 1e-12));
    let loss = cfg.loss.build();
    let warm = state.warm_for(cfg);
    let zeta = cfg.zeta_for(kernel.len(), data.len());

    let one = |i: usize| -> Result<(f64, GradientPack, Vec<Vec<f64>>)> {
        let prob = problem(&dict, &weights[i], kernel, cfg, warm.map(|w| w[i].as_slice()));
        let backend = backend_for(&prob);
        let mut value = 0.0;
        let (pack, trace) = gradients(backend.as_ref(), &prob, |p| {
            let (v, g) = loss.value_and_grad(p, &data[i], kernel)?;
            value = v;
            Ok(g)
        })
        .map_err(|e| e.context(&format!("datapoint {i}")))?;
        Ok((value, pack, trace.final_log_b()))
    };
    let per_point: Vec<_> = if cfg.deterministic {
        (0..data.len()).map(one).collect::<Result<_>>()?
    } else {
        (0..data.len()).into_par_iter().map(one).collect::<Result<_>>()?
    };

    let n = kernel.len();
    let mut value = 0.0;
    let mut grad_alpha = vec![vec![0.0; n]; cfg.atoms];
    let mut grad_beta = Vec::with_capacity(data.len());
    let mut reconstructions = Vec::with_capacity(data.len());
    let mut final_log_b = Vec::with_capacity(data.len());
    for (i, (v, pack, log_b)) in per_point.into_iter().enumerate() {
        value += v;
        // d/d alpha_s = u_s - d_s sum(u_s) with u_s = d_s . dE/dd_s.
        for (s, u) in pack.grad_log_atoms.iter().enumerate() {
            let total: f64 = u.iter().sum();
            for ((ga, &ui), &di) in grad_alpha[s].iter_mut().zip(u).zip(dict.atom(s)) {
                *ga += ui - di * total;
            }
        }
        let gb = softmax_vjp_at(&weights[i], &pack.grad_weights);
        grad_beta.push(gb.into_iter().map(|g| zeta * g).collect());
        reconstructions.push(pack.barycenter);
        final_log_b.push(log_b);
    }
    Ok(Energy {
        value,
        grad_alpha,
        grad_beta,
        reconstructions,
        final_log_b,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Atoms at the best objective seen.
    pub dictionary: Dictionary,
    /// `M x S` weights at the best objective seen.
    pub weights: Vec<Vec<f64>>,
    pub reconstructions: Vec<Vec<f64>>,
    pub objective: f64,
    pub history: Vec<HistoryRecord>,
    /// Logits at the best objective, with the last warm start and history.
    pub state: TrainState,
}

/// Trains from the seeded initial state of `cfg`.
pub fn train(data: &[Vec<f64>], kernel: &Kernel, cfg: &TrainConfig) -> Result<TrainOutcome> {
    check_setup(data, kernel, cfg)?;
    train_from(TrainState::init(kernel.len(), data.len(), cfg), data, kernel, cfg)
}

/// Trains from `state`.
///
/// Each outer iteration computes a two-loop quasi-Newton direction and
/// backtracks (halving, sufficient decrease only). With warm start on,
/// every outer iteration first re-evaluates the current point seeded with
/// the final scalings of the previous accepted point, so the line search
/// compares values of a single energy.
pub fn train_from(mut state: TrainState, data: &[Vec<f64>], kernel: &Kernel, cfg: &TrainConfig) -> Result<TrainOutcome> {
    check_state(&state, data, kernel, cfg)?;
    let clock = Instant::now();
    let mut mem = Memory::new(cfg.lbfgs_memory);
    let mut x = state.theta();
    let base_iter = state.history.last().map_or(0, |r| r.outer_iter + 1);

    let eval_at = |state: &mut TrainState, theta: &[f64]| -> Result<Energy> {
        state.set_theta(theta);
        evaluate(state, data, kernel, cfg)
    };
    let record = |state: &mut TrainState, k: usize, e: &Energy, clock: &Instant| {
        state.history.push(HistoryRecord {
            outer_iter: base_iter + k,
            objective: e.value,
            mean_recon_error: e.mean_recon_error(data),
            seconds: clock.elapsed().as_secs_f64(),
        });
    };
    let set_warm = |state: &mut TrainState, e: &Energy| {
        if cfg.warm_start {
            state.warm = Some(WarmStart {
                atoms: cfg.atoms,
                gamma: cfg.gamma,
                iters: cfg.iters,
                log_b: e.final_log_b.clone(),
            });
        }
    };

    let mut cur = eval_at(&mut state, &x)?;
    record(&mut state, 0, &cur, &clock);
    let mut best = (cur.value, x.clone(), cur.reconstructions.clone());

    for k in 1..=cfg.max_outer_iters {
        if cfg.warm_start {
            set_warm(&mut state, &cur);
            cur = eval_at(&mut state, &x)?;
        }
        if cfg.restart_every > 0 && k > 1 && (k - 1) % cfg.restart_every == 0 {
            mem.clear();
        }
        let g = cur.flat_grad();
        if norm(&g) <= GRAD_TOL {
            log::info!("gradient vanished after {} outer iterations", k - 1);
            break;
        }
        let mut step = None;
        for attempt in 0..2 {
            if attempt == 1 {
                if mem.is_empty() {
                    break;
                }
                log::debug!("line search failed at outer iteration {k}; clearing curvature memory");
                mem.clear();
            }
            let mut d = mem.direction(&g);
            let mut slope = dot(&g, &d);
            if !(slope < 0.0) || d.iter().any(|v| !v.is_finite()) {
                mem.clear();
                d = mem.direction(&g);
                slope = dot(&g, &d);
            }
            step = backtrack(&x, cur.value, &d, slope, |theta| {
                let e = eval_at(&mut state, theta)?;
                Ok::<_, WdlError>((e.value, e))
            });
            if step.is_some() {
                break;
            }
        }
        let Some(step) = step else {
            log::warn!("line search failed after a memory restart at outer iteration {k}; keeping the best iterate");
            break;
        };
        let s: Vec<f64> = step.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = step.payload.flat_grad().iter().zip(&g).map(|(a, b)| a - b).collect();
        mem.push(s, y);
        x = step.x;
        cur = step.payload;
        record(&mut state, k, &cur, &clock);
        if cur.value < best.0 {
            best = (cur.value, x.clone(), cur.reconstructions.clone());
        }
    }

    set_warm(&mut state, &cur);
    state.set_theta(&best.1);
    Ok(TrainOutcome {
        dictionary: state.dictionary(),
        weights: state.weights(),
        reconstructions: best.2,
        objective: best.0,
        history: state.history.clone(),
        state,
    })
}

/// Runs [`train`] with seeds `seed, seed + 1, ..., seed + restarts - 1` and
/// keeps the lowest objective. Seeds whose run fails are skipped; the error
/// of the last failure is returned when all fail.
pub fn train_best_of(data: &[Vec<f64>], kernel: &Kernel, cfg: &TrainConfig, restarts: usize) -> Result<TrainOutcome> {
    let mut best: Option<TrainOutcome> = None;
    let mut last_err = None;
    for r in 0..restarts.max(1) {
        let run_cfg = TrainConfig {
            seed: cfg.seed.wrapping_add(r as u64),
            ..cfg.clone()
        };
        match train(data, kernel, &run_cfg) {
            Ok(out) => {
                log::info!("seed {}: objective {:.6e}", run_cfg.seed, out.objective);
                if best.as_ref().is_none_or(|b| out.objective < b.objective) {
                    best = Some(out);
                }
            }
            Err(e) => {
                log::warn!("seed {} failed: {e}", run_cfg.seed);
                last_err = Some(e);
            }
        }
    }
    best.ok_or_else(|| last_err.expect("at least one run"))
}

/// Barycenter of `dict` with weights `lambda` under the solver options of
/// `cfg`.
pub fn reconstruct_one(dict: &Dictionary, lambda: &[f64], kernel: &Kernel, cfg: &TrainConfig) -> Result<Vec<f64>> {
    Ok(barycenter(&problem(dict, lambda, kernel, cfg, None))?.barycenter)
}

/// [`reconstruct_one`] for every row of `weights`.
pub fn reconstruct(dict: &Dictionary, weights: &[Vec<f64>], kernel: &Kernel, cfg: &TrainConfig) -> Result<Vec<Vec<f64>>> {
    weights
        .iter()
        .enumerate()
        .map(|(i, w)| reconstruct_one(dict, w, kernel, cfg).map_err(|e| e.context(&format!("weights row {i}"))))
        .collect()
}
