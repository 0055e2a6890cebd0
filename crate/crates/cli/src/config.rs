//! Layered configuration: defaults, then a flat TOML file, then flags.

use std::path::Path;

use clap::Args;
use gridcast_core::NowcastConfig;
use serde::Deserialize;

use crate::error::{CliError, Result};

/// The config-file schema: every model/training field, each optional.
///
/// The file is a flat key-value document whose keys mirror the config
/// field names exactly; unknown keys are rejected so typos cannot
/// silently fall back to defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileOverrides {
    input_len: Option<usize>,
    horizon: Option<usize>,
    channels: Option<usize>,
    embed_dim: Option<usize>,
    top_k: Option<usize>,
    gcn_depth: Option<usize>,
    kernel_lengths: Option<Vec<usize>>,
    hidden: Option<usize>,
    learning_rate: Option<f64>,
    weight_decay: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    alpha: Option<f64>,
    seed: Option<u64>,
}

/// Per-field command-line overrides; each flag mirrors a config key and
/// wins over both the built-in default and the config file.
#[derive(Debug, Default, Args)]
pub struct HyperFlags {
    /// Input window length in frames.
    #[arg(long)]
    pub input_len: Option<usize>,
    /// Forecast horizon in frames beyond the last input.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Input channels: 1 (raw) or 5 (raw plus smoothed context).
    #[arg(long)]
    pub channels: Option<usize>,
    /// Width of each node-embedding vector.
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Neighbours kept per row of the learned adjacency.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Propagation hops per graph layer.
    #[arg(long)]
    pub gcn_depth: Option<usize>,
    /// Comma-separated temporal kernel lengths, e.g. 2,3,6,7.
    #[arg(long, value_delimiter = ',')]
    pub kernel_lengths: Option<Vec<usize>>,
    /// Channel width between the input projection and the head.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Saturation gain of the adjacency learner.
    #[arg(long)]
    pub alpha: Option<f64>,
}

/// Resolves the effective configuration: built-in defaults, overridden
/// by the config file (when given), overridden by per-field flags, with
/// `--seed` applied last. `validate` should be set by commands that
/// will actually build a model from the result.
pub fn resolve(
    config_file: Option<&Path>,
    flags: Option<HyperFlags>,
    seed: Option<u64>,
    validate: bool,
) -> Result<NowcastConfig> {
    let mut cfg = NowcastConfig::default();

    if let Some(path) = config_file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let file: FileOverrides = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        apply_file(&mut cfg, file);
    }

    if let Some(f) = flags {
        apply_flags(&mut cfg, f);
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }

    if validate {
        cfg.validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(cfg)
}

fn apply_file(cfg: &mut NowcastConfig, f: FileOverrides) {
    macro_rules! take {
        ($field:ident) => {
            if let Some(v) = f.$field {
                cfg.$field = v;
            }
        };
    }
    take!(input_len);
    take!(horizon);
    take!(channels);
    take!(embed_dim);
    take!(top_k);
    take!(gcn_depth);
    take!(kernel_lengths);
    take!(hidden);
    take!(learning_rate);
    take!(weight_decay);
    take!(batch_size);
    take!(epochs);
    take!(alpha);
    take!(seed);
}

fn apply_flags(cfg: &mut NowcastConfig, f: HyperFlags) {
    macro_rules! take {
        ($field:ident) => {
            if let Some(v) = f.$field {
                cfg.$field = v;
            }
        };
    }
    take!(input_len);
    take!(horizon);
    take!(channels);
    take!(embed_dim);
    take!(top_k);
    take!(gcn_depth);
    take!(kernel_lengths);
    take!(hidden);
    take!(learning_rate);
    take!(weight_decay);
    take!(batch_size);
    take!(epochs);
    take!(alpha);
}
