use std::net::IpAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pppn_core::decompose::{DecomposeConfig, RefineConfig};
use pppn_core::metrics::MetricConfig;
use pppn_core::nmf::NmfConfig;
use pppn_core::synthetic::SyntheticConfig;
use pppn_core::RefinementMode;

#[derive(Debug, Parser)]
#[command(name = "pppn", version, about = "Decompose linear classification heads into part-prototypes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decompose every class head row and write an archive.
    Decompose(DecomposeArgs),
    /// Explain one image: logits, contributions and per-prototype heatmaps.
    Explain(ExplainArgs),
    /// Score consistency and stability of an archive.
    Metrics(MetricsArgs),
    /// Serve the JSON API over an archive.
    Serve(ServeArgs),
    /// Write a synthetic dataset with planted parts.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub head: PathBuf,
    /// Prototypes per class.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    pub k: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = RefinementMode::Dynamic)]
    pub mode: RefinementMode,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    pub refine_tol: f64,
    #[arg(long, default_value_t = 100)]
    pub refine_max_iter: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub nmf_tol: f64,
    #[arg(long, default_value_t = 200)]
    pub nmf_max_iter: usize,
    /// Keep negative feature values instead of clamping them to zero.
    #[arg(long)]
    pub no_clamp: bool,
}

impl DecomposeArgs {
    pub fn config(&self) -> DecomposeConfig {
        DecomposeConfig {
            nmf: NmfConfig {
                k: self.k as usize,
                max_iter: self.nmf_max_iter,
                rel_tol: self.nmf_tol,
                seed: self.seed,
                ..NmfConfig::default()
            },
            refine: RefineConfig {
                tol: self.refine_tol,
                max_iter: self.refine_max_iter,
                ..RefineConfig::default()
            },
            mode: self.mode,
        }
    }
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub archive: PathBuf,
    #[arg(long)]
    pub image: String,
    /// Only write heatmaps for this class.
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest to read features from; defaults to the one recorded in the archive.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Side length of the PGM heatmaps when the image has no annotation.
    #[arg(long, default_value_t = 224, value_parser = clap::value_parser!(u32).range(1..))]
    pub size: u32,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub archive: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Activation region cut as a fraction of the map maximum.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Share needed for a prototype to count as consistent or stable.
    #[arg(long, default_value_t = 0.8)]
    pub tau: f64,
}

impl MetricsArgs {
    pub fn config(&self) -> MetricConfig {
        MetricConfig {
            threshold_frac: self.threshold,
            tau_share: self.tau,
            tau_match: self.tau,
        }
    }
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub archive: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 8080, value_parser = clap::value_parser!(u16).range(1..))]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Metric report whose verdicts are attached to prototype metadata.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Directory of UI assets served at `/`.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    #[arg(long, default_value_t = 50)]
    pub images: usize,
    #[arg(long, default_value_t = 24)]
    pub channels: usize,
    #[arg(long, default_value_t = 3)]
    pub parts: usize,
    /// Std-dev of the noise added to the perturbed stacks.
    #[arg(long, default_value_t = 0.0)]
    pub perturb_sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl SynthArgs {
    pub fn config(&self) -> SyntheticConfig {
        SyntheticConfig {
            classes: self.classes,
            images: self.images,
            channels: self.channels,
            parts: self.parts,
            perturb_sigma: self.perturb_sigma,
            seed: self.seed,
            ..SyntheticConfig::default()
        }
    }
}
