use std::io::Write;
use std::path::{Path, PathBuf};

use mssfc::io::{load_checkpoint, save_checkpoint, BiTemporalSample};
use mssfc::network::Task;
use mssfc::train::{evaluate, TaskCounts, Trainer};
use serde_json::json;

use crate::args::Extra;
use crate::commands::{load_split, threads};
use crate::config::{RunConfig, CONFIG_FILE};
use crate::error::{CliError, CliResult};

pub const LOG_FILE: &str = "train.log";
pub const METRICS_FILE: &str = "metrics.jsonl";

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:03}.ckpt"))
}

/// `epoch=E loss=L` followed by the validation IoU of each task that has labels.
pub fn log_line(epoch: usize, loss: f64, val: &TaskCounts) -> String {
    let mut line = format!("epoch={epoch} loss={loss:.6}");
    for (task, name) in [(Task::Bx1, "bx1"), (Task::Bx2, "bx2"), (Task::Cd, "cd")] {
        if let Some(c) = val[task.index()] {
            line += &format!(" {name}_iou={:.4}", c.metrics().iou);
        }
    }
    line
}

fn metrics_record(epoch: usize, loss: f64, val: &TaskCounts) -> String {
    let tasks: serde_json::Map<String, serde_json::Value> = Task::ALL
        .iter()
        .filter_map(|&t| {
            val[t.index()].map(|c| {
                let m = c.metrics();
                (t.key().to_string(), json!({ "iou": m.iou, "f1": m.f1 }))
            })
        })
        .collect();
    json!({ "epoch": epoch, "loss": loss, "val": tasks }).to_string()
}

/// Where a training loop sends its per-epoch output.
pub struct Outputs<'a> {
    /// Checkpoint, log and metrics directory. `None` keeps everything in memory.
    pub dir: Option<&'a Path>,
    pub on_line: &'a mut dyn FnMut(&str),
}

/// Train until `cfg.model.epochs` epochs are complete, evaluating on `val`
/// after each one.
pub fn train_loop(
    cfg: &RunConfig,
    trainer: &mut Trainer,
    train: &[BiTemporalSample<f32>],
    val: Option<&[BiTemporalSample<f32>]>,
    out: Outputs<'_>,
) -> CliResult<Vec<TaskCounts>> {
    let workers = threads()?;
    let mut history = Vec::new();
    while trainer.epoch < cfg.model.epochs {
        let stats = trainer.train_epoch(train)?;
        let counts = match val {
            Some(v) => evaluate(&trainer.net, &trainer.store, v, workers)?,
            None => [None; 3],
        };
        let line = log_line(stats.epoch, stats.mean_loss, &counts);
        (out.on_line)(&line);
        if let Some(dir) = out.dir {
            save_checkpoint(&checkpoint_path(dir, stats.epoch), &trainer.store, Some(&trainer.opt))?;
            append(&dir.join(LOG_FILE), &line)?;
            append(&dir.join(METRICS_FILE), &metrics_record(stats.epoch, stats.mean_loss, &counts))?;
        }
        history.push(counts);
    }
    Ok(history)
}

fn append(path: &Path, line: &str) -> CliResult<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| mssfc::Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| mssfc::Error::io(path, e).into())
}

/// Validation split, or `None` when the split directory does not exist.
pub fn optional_split(cfg: &RunConfig, split: &str) -> CliResult<Option<Vec<BiTemporalSample<f32>>>> {
    if cfg.data_root.join(split).is_dir() {
        load_split(cfg, split).map(Some)
    } else {
        Ok(None)
    }
}

pub fn run(extra: Extra) -> CliResult<()> {
    let mut extra = extra;
    let resume = extra.take_path("resume");
    let config_path = extra.config_path()?;
    let cfg = RunConfig::load(config_path.as_deref(), &extra.into_overrides()?)?;

    let train = load_split(&cfg, &cfg.train_split)?;
    let val = optional_split(&cfg, &cfg.val_split)?;
    if val.is_none() {
        eprintln!(
            "note: no {} split under {}, training without validation",
            cfg.val_split,
            cfg.data_root.display()
        );
    }
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| mssfc::Error::io(dir, e))?;

    let mut trainer = match &resume {
        Some(path) => {
            let ckpt = load_checkpoint::<f32>(path)?;
            let opt = ckpt.optimizer.ok_or_else(|| {
                CliError::Failed(format!("{} holds no optimizer state to resume from", path.display()))
            })?;
            Trainer::resume(&cfg.model, cfg.task_filter, &ckpt.params, opt, train.len())?
        }
        None => {
            for stale in [LOG_FILE, METRICS_FILE] {
                let p = dir.join(stale);
                if p.exists() {
                    std::fs::remove_file(&p).map_err(|e| mssfc::Error::io(&p, e))?;
                }
            }
            Trainer::new(&cfg.model, cfg.task_filter)?
        }
    };
    cfg.save(&dir.join(CONFIG_FILE))?;
    if trainer.epoch >= cfg.model.epochs {
        println!("already trained for {} epochs", trainer.epoch);
        return Ok(());
    }
    let mut print = |line: &str| println!("{line}");
    train_loop(
        &cfg,
        &mut trainer,
        &train,
        val.as_deref(),
        Outputs {
            dir: Some(dir),
            on_line: &mut print,
        },
    )?;
    Ok(())
}
