pub mod ablate;
pub mod eval;
pub mod gen_synth;
pub mod gradcheck;
pub mod infer;
pub mod train;

use std::path::Path;

use mssfc::io::{load_checkpoint, load_dataset, BiTemporalSample};
use mssfc::network::Network;
use mssfc::ParamStore;

use crate::args::Extra;
use crate::config::{RunConfig, CONFIG_FILE};
use crate::error::{CliError, CliResult};

/// Worker threads for evaluation, from `MSSFC_THREADS` (default 1).
pub fn threads() -> CliResult<usize> {
    match std::env::var("MSSFC_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Usage(format!(
                "MSSFC_THREADS must be a positive integer, got {v:?}"
            ))),
        },
    }
}

pub fn load_split(cfg: &RunConfig, split: &str) -> CliResult<Vec<BiTemporalSample<f32>>> {
    Ok(load_dataset(&cfg.data_root, split)?)
}

/// Config for a command that reads a checkpoint: an explicit config file
/// wins, then `config.json` beside the checkpoint, then the defaults.
pub fn resolve_config(extra: Extra, checkpoint: Option<&Path>) -> CliResult<RunConfig> {
    let mut extra = extra;
    let explicit = extra.config_path()?;
    let beside = checkpoint
        .and_then(Path::parent)
        .map(|d| d.join(CONFIG_FILE))
        .filter(|p| p.is_file());
    RunConfig::load(explicit.or(beside).as_deref(), &extra.into_overrides()?)
}

/// Build the network for `cfg` and fill it from `checkpoint`.
pub fn load_model(cfg: &RunConfig, checkpoint: &Path) -> CliResult<(Network, ParamStore<f32>)> {
    let (net, mut store) = Network::new::<f32>(&cfg.model)?;
    let ckpt = load_checkpoint::<f32>(checkpoint)?;
    store.load_values(&ckpt.params)?;
    Ok((net, store))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| mssfc::Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| mssfc::Error::io(path, e).into())
}
