use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mha_tucker::RankSpec;

#[derive(Debug, Parser)]
#[command(name = "mha-tucker", version, about = "Shared-factor Tucker compression of attention weights")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print per-layer dimensions, tensor names and parameter counts.
    Inspect(InputArgs),
    /// Compress the selected layers into an artifact file.
    Compress(CompressArgs),
    /// Write a checkpoint whose selected layers are replaced by their reconstructions.
    Reconstruct(ReconstructArgs),
    /// Run the invariant checks on a checkpoint and, optionally, an artifact.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Safetensors checkpoint.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// JSON naming config mapping layers to tensor names.
    #[arg(long, value_name = "PATH")]
    pub naming: PathBuf,
    /// Layers to process: an index, a comma-separated list, or "all".
    #[arg(long, value_name = "SPEC", default_value = "all")]
    pub layers: LayerSpec,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    pub report: ReportFormat,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Target ranks R1,R2,R3 (per-layer overrides in the naming config take precedence).
    #[arg(long, value_name = "R1,R2,R3")]
    pub ranks: RankArg,
    #[arg(long, value_name = "N", default_value_t = 100)]
    pub max_iters: usize,
    /// Relative fit-change tolerance for stopping.
    #[arg(long, value_name = "X", default_value_t = 1e-8)]
    pub tol: f64,
    /// Artifact file to write.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[command(flatten)]
    pub jobs: JobsArg,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Artifact produced by `compress`.
    #[arg(long, value_name = "PATH")]
    pub artifact: PathBuf,
    /// Checkpoint file to write.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[command(flatten)]
    pub jobs: JobsArg,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Artifact produced by `compress`; enables the factor, objective and forward checks.
    #[arg(long, value_name = "PATH")]
    pub artifact: Option<PathBuf>,
    /// Largest accepted relative change of the attention output on the probe batch.
    #[arg(long, value_name = "X", default_value_t = 1e-6)]
    pub forward_tol: f64,
    #[command(flatten)]
    pub jobs: JobsArg,
}

#[derive(Debug, Args)]
pub struct JobsArg {
    /// Worker threads (defaults to the number of available cores).
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: Option<u16>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    All,
    List(Vec<usize>),
}

impl FromStr for LayerSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.trim() == "all" {
            return Ok(Self::All);
        }
        let mut out = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| format!("`{p}` is not a layer index"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.sort_unstable();
        out.dedup();
        Ok(Self::List(out))
    }
}

impl LayerSpec {
    /// Resolves against the available layer indices (sorted ascending).
    pub fn resolve(&self, available: &[usize]) -> Result<Vec<usize>, String> {
        match self {
            Self::All => Ok(available.to_vec()),
            Self::List(v) => {
                if let Some(bad) = v.iter().find(|i| !available.contains(i)) {
                    return Err(format!("layer {bad} is not available (have {available:?})"));
                }
                Ok(v.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankArg(pub RankSpec);

impl FromStr for RankArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| format!("`{p}` is not a rank")))
            .collect::<Result<Vec<_>, _>>()?;
        match parts[..] {
            [a, b, c] => Ok(Self(RankSpec::new(a, b, c))),
            _ => Err(format!("expected three ranks R1,R2,R3, got {}", parts.len())),
        }
    }
}
