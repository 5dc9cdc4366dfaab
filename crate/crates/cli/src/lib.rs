//! Command-line front end: argument parsing, file I/O and the subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod plot;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use wdl_core::learn::InitKind;
use wdl_core::losses::LossKind;

use crate::config::{parse_grid, DataFormat, ExperimentConfig};
pub use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "wdl", version, about = "Wasserstein barycenters and dictionary learning on histograms")]
pub struct Cli {
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Barycenter of the input histograms.
    Barycenter {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated barycentric weights (default uniform).
        #[arg(long, value_delimiter = ',', conflicts_with = "sweep")]
        weights: Option<Vec<f64>>,
        /// Compute barycenters on a simplex lattice with this many steps per edge.
        #[arg(long)]
        sweep: Option<usize>,
    },
    /// Learn a dictionary and weights from a dataset.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Rebuild histograms from a saved dictionary and weights.
    Reconstruct {
        #[command(flatten)]
        common: CommonArgs,
        /// atoms.csv written by `train`.
        #[arg(long)]
        dictionary: PathBuf,
        /// weights.csv written by `train`.
        #[arg(long = "weights-file")]
        weights_file: PathBuf,
    },
    /// Compare analytic gradients with finite differences on small instances.
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of random instances.
        #[arg(long, default_value_t = 6)]
        instances: usize,
        /// Flip the sign of the weight recursion (negative control).
        #[arg(long, hide = true)]
        corrupt_sign: bool,
    },
}

/// Flags shared by all subcommands. Each overrides the config file.
#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// Config file of key=value lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input CSV file or PGM directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_format)]
    pub format: Option<DataFormat>,
    /// Grid shape for CSV rows, e.g. 8x8.
    #[arg(long)]
    pub grid: Option<String>,
    /// Mass added to every bin before normalizing.
    #[arg(long)]
    pub jitter: Option<f64>,
    /// Entropic regularization.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Sinkhorn iterations per barycenter (L).
    #[arg(long = "n-iters")]
    pub n_iters: Option<usize>,
    /// tv, quadratic, kl, kl-printed or wasserstein[:ITERS].
    #[arg(long, value_parser = parse_loss)]
    pub loss: Option<LossKind>,
    /// Number of atoms (S).
    #[arg(long)]
    pub atoms: Option<usize>,
    /// Heavy-ball parameter in [-1, 0].
    #[arg(long, allow_hyphen_values = true)]
    pub tau: Option<f64>,
    /// Unbalanced KL penalty (inf for balanced).
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub log_domain: bool,
    #[arg(long)]
    pub warm_start: bool,
    /// Atom logit scaling.
    #[arg(long)]
    pub zeta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sequential evaluation with a fixed summation order.
    #[arg(long)]
    pub deterministic: bool,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_outer_iters: Option<usize>,
    #[arg(long)]
    pub restart_every: Option<usize>,
    #[arg(long)]
    pub lbfgs_memory: Option<usize>,
    /// uniform-atoms or random-atoms.
    #[arg(long, value_parser = parse_init)]
    pub init: Option<InitKind>,
    /// Independent training runs; the best objective is kept.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Write the weight scatter plot (true/false).
    #[arg(long)]
    pub plot: Option<bool>,
}

fn parse_format(s: &str) -> Result<DataFormat, String> {
    s.parse().map_err(|e: CliError| e.to_string())
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    s.parse().map_err(|e: wdl_core::WdlError| e.to_string())
}

fn parse_init(s: &str) -> Result<InitKind, String> {
    s.parse().map_err(|e: wdl_core::WdlError| e.to_string())
}

impl CommonArgs {
    /// Config file (or defaults) with the flags applied on top.
    pub fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                ExperimentConfig::from_text(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => ExperimentConfig::default(),
        };
        let t = &mut cfg.train;
        macro_rules! take {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value.clone() {
                    $field = v;
                }
            };
        }
        take!(t.gamma, self.gamma);
        take!(t.iters, self.n_iters);
        take!(t.loss, self.loss);
        take!(t.atoms, self.atoms);
        take!(t.tau, self.tau);
        take!(t.rho, self.rho);
        take!(t.seed, self.seed);
        take!(t.max_outer_iters, self.max_outer_iters);
        take!(t.restart_every, self.restart_every);
        take!(t.lbfgs_memory, self.lbfgs_memory);
        take!(t.init, self.init);
        if self.zeta.is_some() {
            t.zeta = self.zeta;
        }
        t.log_domain |= self.log_domain;
        t.warm_start |= self.warm_start;
        t.deterministic |= self.deterministic;
        if self.data.is_some() {
            cfg.data_path = self.data.clone();
        }
        take!(cfg.data_format, self.format);
        if let Some(g) = &self.grid {
            cfg.grid = Some(parse_grid(g)?);
        }
        take!(cfg.jitter_epsilon, self.jitter);
        take!(cfg.output_dir, self.out);
        take!(cfg.restarts, self.restarts);
        take!(cfg.plot, self.plot);
        Ok(cfg)
    }
}

/// Runs one parsed command, returning the files written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    match &cli.command {
        Command::Barycenter { common, weights, sweep } => {
            commands::cmd_barycenter(&common.resolve()?, weights.clone(), *sweep)
        }
        Command::Train { common } => commands::cmd_train(&common.resolve()?),
        Command::Reconstruct {
            common,
            dictionary,
            weights_file,
        } => commands::cmd_reconstruct(&common.resolve()?, dictionary, weights_file),
        Command::Gradcheck {
            common,
            instances,
            corrupt_sign,
        } => commands::cmd_gradcheck(&common.resolve()?, *instances, *corrupt_sign).map(|(_, files)| files),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from([
            "wdl", "train", "--data", "d.csv", "--gamma", "7", "--rho", "20", "--tau", "-0.3", "--loss", "kl",
            "--grid", "8x8", "--deterministic",
        ])
        .unwrap();
        let Command::Train { common } = &cli.command else { panic!() };
        let cfg = common.resolve().unwrap();
        assert_eq!(cfg.train.gamma, 7.0);
        assert_eq!(cfg.train.rho, 20.0);
        assert_eq!(cfg.train.tau, -0.3);
        assert_eq!(cfg.train.loss, LossKind::KullbackLeibler);
        assert_eq!(cfg.grid, Some(vec![8, 8]));
        assert!(cfg.train.deterministic);
        assert_eq!(cfg.train.iters, ExperimentConfig::default().train.iters);
    }

    #[test]
    fn bad_flags_are_rejected() {
        let cli = Cli::try_parse_from(["wdl", "train", "--grid", "8x"]).unwrap();
        let Command::Train { common } = &cli.command else { panic!() };
        assert!(common.resolve().is_err());
        assert!(Cli::try_parse_from(["wdl", "train", "--loss", "hinge"]).is_err());
        assert!(Cli::try_parse_from(["wdl", "barycenter", "--weights", "0.5,0.5", "--sweep", "4"]).is_err());
    }
}
