use std::path::Path;

use mssfc::io::dataset::LABEL_DIRS;
use mssfc::io::read_raster;
use mssfc::io::BiTemporalSample;
use mssfc::metrics::ConfusionCounts;
use mssfc::train::{evaluate, TaskCounts};

use crate::args::Extra;
use crate::commands::{load_model, load_split, resolve_config, threads, write_text};
use crate::error::{CliError, CliResult};
use crate::report::eval_report;

/// Score saved probability or binary masks laid out like the label
/// directories: `<dir>/{label_t1,label_t2,label_cd}/<id>.pgm`.
pub fn score_predictions(dir: &Path, data: &[BiTemporalSample<f32>]) -> CliResult<TaskCounts> {
    let mut out: TaskCounts = [None; 3];
    for sample in data {
        for (k, name) in LABEL_DIRS.iter().enumerate() {
            let Some(label) = &sample.masks[k] else { continue };
            let path = dir.join(name).join(format!("{}.pgm", sample.id));
            if !path.is_file() {
                return Err(CliError::Failed(format!(
                    "no prediction {} for labelled sample {}",
                    path.display(),
                    sample.id
                )));
            }
            let pred = read_raster::<f32>(&path)?;
            out[k].get_or_insert_with(ConfusionCounts::default).accumulate(&pred, label)?;
        }
    }
    Ok(out)
}

pub fn run(extra: Extra) -> CliResult<()> {
    let mut extra = extra;
    let checkpoint = extra.take_path("checkpoint");
    let predictions = extra.take_path("predictions");
    let split = extra.take("split");
    let report = extra.take_path("report");
    let cfg = resolve_config(extra, checkpoint.as_deref())?;
    let split = split.unwrap_or_else(|| cfg.test_split.clone());
    let data = load_split(&cfg, &split)?;

    let counts = match (&checkpoint, &predictions) {
        (Some(ckpt), None) => {
            let (net, store) = load_model(&cfg, ckpt)?;
            evaluate(&net, &store, &data, threads()?)?
        }
        (None, Some(dir)) => score_predictions(dir, &data)?,
        _ => {
            return Err(CliError::Usage(
                "eval needs exactly one of --checkpoint or --predictions".into(),
            ))
        }
    };
    if counts.iter().all(Option::is_none) {
        return Err(CliError::Failed(format!("split {split} has no labels to evaluate")));
    }
    let text = eval_report(&counts);
    if let Some(path) = report.or_else(|| cfg.report_path.clone()) {
        write_text(&path, &text)?;
    }
    print!("{text}");
    Ok(())
}
