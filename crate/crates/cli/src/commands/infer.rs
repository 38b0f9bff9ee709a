use std::path::{Path, PathBuf};

use mssfc::io::netpbm::{read_image, write_mask};
use mssfc::io::write_raster;
use mssfc::train::predict;

use crate::args::Extra;
use crate::commands::{load_model, resolve_config};
use crate::error::{CliError, CliResult};

fn required(extra: &mut Extra, key: &str) -> CliResult<PathBuf> {
    extra
        .take_path(key)
        .ok_or_else(|| CliError::Usage(format!("infer needs --{}", key.replace('_', "-"))))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn run(extra: Extra) -> CliResult<()> {
    let mut extra = extra;
    let checkpoint = required(&mut extra, "checkpoint")?;
    let t1 = required(&mut extra, "t1")?;
    let t2 = required(&mut extra, "t2")?;
    let prefix = required(&mut extra, "out")?;
    let cfg = resolve_config(extra, Some(&checkpoint))?;

    let img1 = read_image::<f32>(&t1)?;
    let img2 = read_image::<f32>(&t2)?;
    if img1.shape() != img2.shape() {
        return Err(CliError::Usage(format!(
            "{} is {} but {} is {}",
            t1.display(),
            img1.shape(),
            t2.display(),
            img2.shape()
        )));
    }
    let s = img1.shape();
    cfg.model
        .check_input_size(s.h, s.w)
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let (net, store) = load_model(&cfg, &checkpoint)?;
    let [p1, p2, pcd] = predict(&net, &store, &img1, &img2)?;
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| mssfc::Error::io(dir, e))?;
    }
    for (suffix, mask) in [("_t1.pgm", &p1), ("_t2.pgm", &p2), ("_cd.pgm", &pcd)] {
        write_mask(&with_suffix(&prefix, suffix), mask)?;
    }
    write_raster(&with_suffix(&prefix, "_cd_prob.pgm"), &pcd)?;
    println!("wrote {}_{{t1,t2,cd,cd_prob}}.pgm", prefix.display());
    Ok(())
}
