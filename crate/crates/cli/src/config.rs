//! Experiment configuration as flat `key=value` text.
//!
//! One key per line, `#` starts a comment. Floats are written in Rust's
//! shortest round-trip form, so `parse(serialize(c)) == c` holds exactly.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use wdl_core::grid::DEFAULT_JITTER;
use wdl_core::learn::{InitKind, TrainConfig};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DataFormat {
    /// One histogram per CSV row.
    #[default]
    CsvRows,
    /// A directory of PGM images, read in file-name order.
    PgmDir,
}

impl fmt::Display for DataFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataFormat::CsvRows => "csv-rows",
            DataFormat::PgmDir => "pgm-dir",
        })
    }
}

impl FromStr for DataFormat {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s.trim() {
            "csv-rows" | "csv" => Ok(DataFormat::CsvRows),
            "pgm-dir" | "pgm" => Ok(DataFormat::PgmDir),
            other => Err(CliError::Config(format!("unknown data format `{other}` (csv-rows or pgm-dir)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub data_path: Option<PathBuf>,
    pub data_format: DataFormat,
    pub output_dir: PathBuf,
    pub jitter_epsilon: f64,
    pub plot: bool,
    /// Grid shape for CSV rows, e.g. `[8, 8]`. `None` means a line of
    /// `N` bins; PGM input always uses the image shape.
    pub grid: Option<Vec<usize>>,
    /// Training runs with consecutive seeds; the best objective is kept.
    pub restarts: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            data_path: None,
            data_format: DataFormat::CsvRows,
            output_dir: PathBuf::from("out"),
            jitter_epsilon: DEFAULT_JITTER,
            plot: true,
            grid: None,
            restarts: 1,
        }
    }
}

pub const KEYS: &[&str] = &[
    "S",
    "L",
    "gamma",
    "loss",
    "zeta",
    "tau",
    "rho",
    "log_domain",
    "warm_start",
    "restart_every",
    "max_outer_iters",
    "lbfgs_memory",
    "seed",
    "init",
    "deterministic",
    "data_path",
    "data_format",
    "output_dir",
    "jitter_epsilon",
    "plot",
    "grid",
    "restarts",
];

impl ExperimentConfig {
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        put("S", t.atoms.to_string());
        put("L", t.iters.to_string());
        put("gamma", t.gamma.to_string());
        put("loss", t.loss.to_string());
        put("zeta", t.zeta.map_or("auto".into(), |z| z.to_string()));
        put("tau", t.tau.to_string());
        put("rho", t.rho.to_string());
        put("log_domain", t.log_domain.to_string());
        put("warm_start", t.warm_start.to_string());
        put("restart_every", t.restart_every.to_string());
        put("max_outer_iters", t.max_outer_iters.to_string());
        put("lbfgs_memory", t.lbfgs_memory.to_string());
        put("seed", t.seed.to_string());
        put("init", t.init.to_string());
        put("deterministic", t.deterministic.to_string());
        put(
            "data_path",
            self.data_path.as_ref().map_or(String::new(), |p| p.display().to_string()),
        );
        put("data_format", self.data_format.to_string());
        put("output_dir", self.output_dir.display().to_string());
        put("jitter_epsilon", self.jitter_epsilon.to_string());
        put("plot", self.plot.to_string());
        put("grid", self.grid.as_ref().map_or("auto".into(), |g| format_grid(g)));
        put("restarts", self.restarts.to_string());
        out
    }

    /// Parses `key=value` lines on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Config(format!("line {}: expected key=value, got `{raw}`", lineno + 1)));
            };
            cfg.set(k.trim(), v.trim())
                .map_err(|e| CliError::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let t = &mut self.train;
        match key {
            "S" => t.atoms = num(key, value)?,
            "L" => t.iters = num(key, value)?,
            "gamma" => t.gamma = num(key, value)?,
            "loss" => t.loss = value.parse().map_err(|e| CliError::Config(format!("loss: {e}")))?,
            "zeta" => t.zeta = if value == "auto" { None } else { Some(num(key, value)?) },
            "tau" => t.tau = num(key, value)?,
            "rho" => t.rho = num(key, value)?,
            "log_domain" => t.log_domain = num(key, value)?,
            "warm_start" => t.warm_start = num(key, value)?,
            "restart_every" => t.restart_every = num(key, value)?,
            "max_outer_iters" => t.max_outer_iters = num(key, value)?,
            "lbfgs_memory" => t.lbfgs_memory = num(key, value)?,
            "seed" => t.seed = num(key, value)?,
            "init" => t.init = value.parse::<InitKind>().map_err(|e| CliError::Config(e.to_string()))?,
            "deterministic" => t.deterministic = num(key, value)?,
            "data_path" => self.data_path = (!value.is_empty()).then(|| PathBuf::from(value)),
            "data_format" => self.data_format = value.parse()?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "jitter_epsilon" => self.jitter_epsilon = num(key, value)?,
            "plot" => self.plot = num(key, value)?,
            "grid" => self.grid = if value == "auto" { None } else { Some(parse_grid(value)?) },
            "restarts" => self.restarts = num(key, value)?,
            other => {
                return Err(CliError::Config(format!(
                    "unknown key `{other}` (known: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("bad value `{value}` for `{key}`")))
}

/// `8x8` style shape.
pub fn parse_grid(s: &str) -> Result<Vec<usize>, CliError> {
    let dims: Vec<usize> = s
        .split('x')
        .map(|d| d.trim().parse().map_err(|_| CliError::Config(format!("bad grid shape `{s}`"))))
        .collect::<Result<_, _>>()?;
    if dims.is_empty() || dims.contains(&0) {
        return Err(CliError::Config(format!("bad grid shape `{s}`")));
    }
    Ok(dims)
}

pub fn format_grid(dims: &[usize]) -> String {
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}
