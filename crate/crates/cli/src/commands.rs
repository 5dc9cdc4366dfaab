//! The subcommands, as library functions returning the files they wrote.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wdl_core::barycenter::{barycenter, BarycenterProblem, Dictionary};
use wdl_core::grad::{FlippedSignGrads, GeneralizedGrads, GradientBackend, LogSinkhornGrads, JacobianGrads, SinkhornGrads};
use wdl_core::gradcheck::{backend_pack, fd_error, pack_gap, GradInstance, Variant};
use wdl_core::grid::{CostSpec, Grid};
use wdl_core::kernel::{build_kernel, Kernel};
use wdl_core::learn::{reconstruct, train_best_of};
use wdl_core::losses::LossKind;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::io::{create_dir, encode_pgm, ingest, read_csv_rows, write_file, write_histograms, write_rows, Dataset};
use crate::plot::scatter_svg;

pub fn kernel_for(grid: &Grid, gamma: f64) -> Result<Kernel, CliError> {
    Ok(build_kernel(&CostSpec::squared_euclidean(grid.clone()), gamma)?)
}

fn load(cfg: &ExperimentConfig) -> Result<Dataset, CliError> {
    let path = cfg
        .data_path
        .as_deref()
        .ok_or_else(|| CliError::Config("no data_path given (--data)".into()))?;
    ingest(path, cfg.data_format, cfg.grid.as_deref(), cfg.jitter_epsilon)
}

/// Writes `name.csv`, and `name.pgm` when the grid is two-dimensional.
fn write_histogram_files(dir: &Path, name: &str, grid: &Grid, rows: &[Vec<f64>], files: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let csv = dir.join(format!("{name}.csv"));
    write_histograms(&csv, rows)?;
    files.push(csv);
    if let [h, w] = grid.dims() {
        for (i, row) in rows.iter().enumerate() {
            let pgm = if rows.len() == 1 {
                dir.join(format!("{name}.pgm"))
            } else {
                dir.join(format!("{name}_{i}.pgm"))
            };
            write_file(&pgm, &encode_pgm(row, *h, *w))?;
            files.push(pgm);
        }
    }
    Ok(())
}

fn solve(dict: &Dictionary, lambda: &[f64], kernel: &Kernel, cfg: &ExperimentConfig) -> Result<Vec<f64>, CliError> {
    let t = &cfg.train;
    let prob = BarycenterProblem::new(dict, lambda, kernel, t.iters)
        .with_tau(t.tau)
        .with_rho(t.rho)
        .with_log_domain(t.log_domain);
    Ok(barycenter(&prob)?.barycenter)
}

/// All weight vectors `c / resolution` with `c` a composition of
/// `resolution` into `parts` nonnegative integers, in lexicographic order.
pub fn simplex_lattice(parts: usize, resolution: usize) -> Vec<Vec<usize>> {
    fn rec(parts: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for c in (0..=left).rev() {
            prefix.push(c);
            rec(parts - 1, left - c, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(parts, resolution, &mut Vec::new(), &mut out);
    out
}

/// Barycenter of the input histograms, either for one weight vector
/// (uniform by default) or for every point of a simplex lattice.
pub fn cmd_barycenter(cfg: &ExperimentConfig, weights: Option<Vec<f64>>, sweep: Option<usize>) -> Result<Vec<PathBuf>, CliError> {
    let data = load(cfg)?;
    let s = data.rows.len();
    let dict = Dictionary::new(data.rows.clone())?;
    let kernel = kernel_for(&data.grid, cfg.train.gamma)?;
    create_dir(&cfg.output_dir)?;
    let mut files = Vec::new();
    match sweep {
        Some(res) => {
            if res == 0 {
                return Err(CliError::Config("sweep resolution must be positive".into()));
            }
            let dir = cfg.output_dir.join("sweep");
            create_dir(&dir)?;
            let mut index = Vec::new();
            for counts in simplex_lattice(s, res) {
                let lambda: Vec<f64> = counts.iter().map(|&c| c as f64 / res as f64).collect();
                let p = solve(&dict, &lambda, &kernel, cfg)?;
                let tag: Vec<String> = counts.iter().map(usize::to_string).collect();
                write_histogram_files(&dir, &format!("bary_{}", tag.join("_")), &data.grid, &[p], &mut files)?;
                index.push(lambda);
            }
            let idx = dir.join("index.csv");
            write_rows(&idx, "weight", &index)?;
            files.push(idx);
        }
        None => {
            let lambda = weights.unwrap_or_else(|| vec![1.0 / s as f64; s]);
            if lambda.len() != s {
                return Err(CliError::Config(format!("{} weights given for {s} input histograms", lambda.len())));
            }
            let p = solve(&dict, &lambda, &kernel, cfg)?;
            write_histogram_files(&cfg.output_dir, "barycenter", &data.grid, &[p], &mut files)?;
        }
    }
    Ok(files)
}

/// Trains a dictionary and writes atoms, weights, reconstructions, history
/// and the weight scatter.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let data = load(cfg)?;
    let kernel = kernel_for(&data.grid, cfg.train.gamma)?;
    let out = train_best_of(&data.rows, &kernel, &cfg.train, cfg.restarts).map_err(|e| locate(e, &data))?;
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    let mut files = Vec::new();

    let atoms = out.dictionary.atoms().to_vec();
    let path = dir.join("atoms.csv");
    write_histograms(&path, &atoms)?;
    files.push(path);
    if let [h, w] = data.grid.dims() {
        for (s, a) in atoms.iter().enumerate() {
            let p = dir.join(format!("atom_{s}.pgm"));
            write_file(&p, &encode_pgm(a, *h, *w))?;
            files.push(p);
        }
    }
    let path = dir.join("weights.csv");
    write_rows(&path, "weight", &out.weights)?;
    files.push(path);
    let path = dir.join("recon.csv");
    write_histograms(&path, &out.reconstructions)?;
    files.push(path);

    let mut hist = String::from("outer_iter,objective,mean_recon_error,seconds\n");
    for r in &out.history {
        hist.push_str(&format!("{},{},{},{}\n", r.outer_iter, r.objective, r.mean_recon_error, r.seconds));
    }
    let path = dir.join("history.csv");
    write_file(&path, hist.as_bytes())?;
    files.push(path);

    if cfg.plot {
        let path = dir.join("weights_scatter.svg");
        write_file(&path, scatter_svg(&out.weights).as_bytes())?;
        files.push(path);
    }
    let path = dir.join("config.txt");
    write_file(&path, cfg.to_text().as_bytes())?;
    files.push(path);
    log::info!("final objective {:.6e}", out.objective);
    Ok(files)
}

/// Maps `datapoint i` in an error message to the row's source.
fn locate(e: wdl_core::WdlError, data: &Dataset) -> CliError {
    let msg = e.to_string();
    for (i, label) in data.labels.iter().enumerate().rev() {
        if msg.contains(&format!("datapoint {i}:")) {
            log::error!("failing datapoint {i} is {label}");
            break;
        }
    }
    CliError::Core(e)
}

/// Barycenters of a saved dictionary for each saved weight row.
pub fn cmd_reconstruct(cfg: &ExperimentConfig, atoms_path: &Path, weights_path: &Path) -> Result<Vec<PathBuf>, CliError> {
    let atoms = read_csv_rows(atoms_path)?;
    let weights = read_csv_rows(weights_path)?;
    let n = atoms[0].len();
    let dims = cfg.grid.clone().unwrap_or_else(|| vec![n]);
    let grid = Grid::unit(&dims)?;
    if grid.len() != n {
        return Err(CliError::Input(format!(
            "{}: atoms have {n} bins but the grid has {}",
            atoms_path.display(),
            grid.len()
        )));
    }
    let dict = Dictionary::new(atoms)?;
    let kernel = kernel_for(&grid, cfg.train.gamma)?;
    let train_cfg = wdl_core::learn::TrainConfig {
        atoms: dict.len(),
        ..cfg.train.clone()
    };
    let recon = reconstruct(&dict, &weights, &kernel, &train_cfg)?;
    create_dir(&cfg.output_dir)?;
    let mut files = Vec::new();
    write_histogram_files(&cfg.output_dir, "recon", &grid, &recon, &mut files)?;
    Ok(files)
}

/// Largest grid accepted by `gradcheck`.
pub const GRADCHECK_MAX_BINS: usize = 16;
/// Worst relative error tolerated by `gradcheck`.
pub const GRADCHECK_THRESHOLD: f64 = 1e-4;
/// Inner iterations of the Wasserstein loss in gradient checks; the loss
/// gradient is only exact once the inner problem has converged.
pub const GRADCHECK_INNER_ITERS: usize = 3000;

/// One line of the gradient-check report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub loss: String,
    pub variant: &'static str,
    pub reference: &'static str,
    pub iters: usize,
    pub max_rel_error: f64,
    /// Instance that produced the worst error.
    pub worst_case: String,
}

/// Desk-scale instance shapes: `(dims, atoms, iters, gamma)`.
pub fn gradcheck_instances(count: usize, seed: u64, grid: Option<&[usize]>) -> Result<Vec<(Vec<usize>, usize, usize, f64)>, CliError> {
    if let Some(g) = grid {
        let n: usize = g.iter().product();
        if n > GRADCHECK_MAX_BINS {
            return Err(CliError::Config(format!(
                "gradcheck is limited to N <= {GRADCHECK_MAX_BINS}, grid has {n} bins"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let dims = grid.map_or_else(|| vec![[4, 8, 16][rng.random_range(0..3)]], <[usize]>::to_vec);
            let s = rng.random_range(2..4);
            let iters = [1, 3, 10][rng.random_range(0..3)];
            let gamma = [0.5, 1.0, 2.0][rng.random_range(0..3)];
            (dims, s, iters, gamma)
        })
        .collect())
}

/// Checks every gradient backend on `count` random instances and the four
/// losses. `corrupt_sign` swaps the weight recursion of `sinkhorn-grads` for a sign-flipped
/// copy (negative control).
pub fn run_gradcheck(count: usize, seed: u64, grid: Option<&[usize]>, corrupt_sign: bool) -> Result<Vec<CheckRow>, CliError> {
    let losses = [
        LossKind::TotalVariation,
        LossKind::Quadratic,
        LossKind::KullbackLeibler,
        LossKind::Wasserstein {
            inner_iters: GRADCHECK_INNER_ITERS,
        },
    ];
    let main: &dyn GradientBackend = if corrupt_sign { &FlippedSignGrads } else { &SinkhornGrads };
    let mut rows: Vec<CheckRow> = Vec::new();
    let mut record = |loss: &LossKind, variant: &'static str, reference: &'static str, iters: usize, err: f64, case: String| {
        match rows
            .iter_mut()
            .find(|r| r.loss == loss.to_string() && r.variant == variant && r.iters == iters)
        {
            Some(r) if r.max_rel_error >= err => {}
            Some(r) => {
                r.max_rel_error = err;
                r.worst_case = case;
            }
            None => rows.push(CheckRow {
                loss: loss.to_string(),
                variant,
                reference,
                iters,
                max_rel_error: err,
                worst_case: case,
            }),
        }
    };
    for (k, (dims, s, iters, gamma)) in gradcheck_instances(count, seed, grid)?.into_iter().enumerate() {
        let case_seed = seed.wrapping_mul(1000).wrapping_add(k as u64);
        let case = |g: f64| format!("instance {k}: grid {dims:?}, S={s}, L={iters}, gamma={g}");
        let inst = GradInstance::random(case_seed, &dims, s, gamma)?;
        let soft = GradInstance::random(case_seed, &dims, s, 0.5)?;
        let plain = Variant::plain(iters);
        let log = Variant {
            log_domain: true,
            ..plain
        };
        let generalized = Variant {
            tau: -0.1,
            rho: 5.0,
            ..plain
        };
        for kind in &losses {
            let loss = kind.build();
            let loss = loss.as_ref();
            let a = backend_pack(main, &inst, plain, loss)?;
            record(kind, main.name(), "finite differences", iters, fd_error(&a, &inst, plain, loss)?, case(gamma));
            let b = backend_pack(&JacobianGrads, &inst, plain, loss)?;
            record(kind, "jacobian-grads", main.name(), iters, pack_gap(&b, &a), case(gamma));
            let l = backend_pack(&LogSinkhornGrads, &soft, log, loss)?;
            record(kind, "log-sinkhorn-grads", "finite differences", iters, fd_error(&l, &soft, log, loss)?, case(0.5));
            let g = backend_pack(&GeneralizedGrads, &inst, generalized, loss)?;
            record(
                kind,
                "generalized-grads",
                "finite differences",
                iters,
                fd_error(&g, &inst, generalized, loss)?,
                case(gamma) + ", tau=-0.1, rho=5",
            );
        }
    }
    rows.sort_by(|a, b| (&a.loss, a.variant, a.iters).cmp(&(&b.loss, b.variant, b.iters)));
    Ok(rows)
}

/// Runs the gradient checks, writes `gradcheck.csv` and fails if any error
/// exceeds [`GRADCHECK_THRESHOLD`].
pub fn cmd_gradcheck(cfg: &ExperimentConfig, count: usize, corrupt_sign: bool) -> Result<(Vec<CheckRow>, Vec<PathBuf>), CliError> {
    let rows = run_gradcheck(count, cfg.train.seed, cfg.grid.as_deref(), corrupt_sign)?;
    create_dir(&cfg.output_dir)?;
    let mut text = String::from("loss,variant,reference,L,max_rel_error\n");
    for r in &rows {
        text.push_str(&format!("{},{},{},{},{:e}\n", r.loss, r.variant, r.reference, r.iters, r.max_rel_error));
    }
    let path = cfg.output_dir.join("gradcheck.csv");
    write_file(&path, text.as_bytes())?;
    for r in &rows {
        println!(
            "{:<18} {:<24} L={:<3} max rel error {:.3e}",
            r.loss, r.variant, r.iters, r.max_rel_error
        );
    }
    if let Some(bad) = rows
        .iter()
        .filter(|r| !(r.max_rel_error <= GRADCHECK_THRESHOLD))
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    {
        return Err(CliError::CheckFailed(format!(
            "{} / {} vs {}: relative error {:.3e} > {GRADCHECK_THRESHOLD:e} ({})",
            bad.loss, bad.variant, bad.reference, bad.max_rel_error, bad.worst_case
        )));
    }
    Ok((rows, vec![path]))
}

