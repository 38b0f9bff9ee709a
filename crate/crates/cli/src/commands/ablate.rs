use std::time::Instant;

use clap::ValueEnum;
use mssfc::io::BiTemporalSample;
use mssfc::metrics::{ConfusionCounts, Metrics};
use mssfc::network::{PoolSetting, Task};
use mssfc::train::{evaluate, TaskCounts, TaskFilter, Trainer};
use serde::Serialize;

use crate::args::Extra;
use crate::commands::train::{train_loop, Outputs};
use crate::commands::{load_split, threads, write_text};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AblationKind {
    Pooling,
    Tasks,
}

/// Query and key pooling of each pooling row.
pub const POOLING_ROWS: [(PoolSetting, PoolSetting); 5] = [
    (PoolSetting::None, PoolSetting::None),
    (PoolSetting::Avg, PoolSetting::Avg),
    (PoolSetting::Max, PoolSetting::Max),
    (PoolSetting::Max, PoolSetting::Avg),
    (PoolSetting::Avg, PoolSetting::Max),
];

/// Label and training regime of each task row; `None` is left untrained.
pub const TASK_ROWS: [(&str, Option<TaskFilter>); 4] = [
    ("none", None),
    ("BX", Some(TaskFilter::Bx)),
    ("CD", Some(TaskFilter::Cd)),
    ("BX&CD", Some(TaskFilter::Both)),
];

const TASKS_NOTE: &str = "# The pretrain-then-finetune regimes are approximated by task-filtered \
training from scratch on one synthetic dataset: \"none\" is the untrained model, \"BX\" trains \
only the extraction losses, \"CD\" only the change loss, \"BX&CD\" all three. BX metrics pool \
both extraction masks.";

const POOLING_NOTE: &str = "# Each row trains the configured model with the given query and key \
pooling of the refinement block and evaluates change detection on the test split.";

#[derive(Clone, Debug, Serialize)]
pub struct Score {
    pub iou: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
}

impl Score {
    fn new(counts: ConfusionCounts) -> Self {
        let Metrics { iou, f1, .. } = counts.metrics();
        Score { iou, f1, counts }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Row {
    pub label: String,
    /// Building extraction over both dates.
    pub bx: Option<Score>,
    pub cd: Option<Score>,
    pub seconds: f64,
}

fn bx_counts(c: &TaskCounts) -> Option<ConfusionCounts> {
    let mut out: Option<ConfusionCounts> = None;
    for t in [Task::Bx1, Task::Bx2] {
        if let Some(v) = &c[t.index()] {
            out.get_or_insert_with(ConfusionCounts::default).merge(v);
        }
    }
    out
}

fn run_row(
    label: String,
    cfg: &RunConfig,
    filter: Option<TaskFilter>,
    train: &[BiTemporalSample<f32>],
    test: &[BiTemporalSample<f32>],
) -> CliResult<Row> {
    let start = Instant::now();
    let mut trainer = Trainer::new(&cfg.model, filter.unwrap_or_default())?;
    if filter.is_some() {
        let mut progress = |line: &str| eprintln!("[{label}] {line}");
        train_loop(
            cfg,
            &mut trainer,
            train,
            None,
            Outputs {
                dir: None,
                on_line: &mut progress,
            },
        )?;
    }
    let counts = evaluate(&trainer.net, &trainer.store, test, threads()?)?;
    Ok(Row {
        label,
        bx: bx_counts(&counts).map(Score::new),
        cd: counts[Task::Cd.index()].map(Score::new),
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn pool_name(p: PoolSetting) -> &'static str {
    match p {
        PoolSetting::None => "-",
        PoolSetting::Avg => "Avg",
        PoolSetting::Max => "Max",
    }
}

/// Train and evaluate every row of `kind`, calling `on_row` as each finishes.
pub fn ablate(
    kind: AblationKind,
    cfg: &RunConfig,
    train: &[BiTemporalSample<f32>],
    test: &[BiTemporalSample<f32>],
    mut on_row: impl FnMut(&Row),
) -> CliResult<Vec<Row>> {
    let mut rows = Vec::new();
    match kind {
        AblationKind::Pooling => {
            for (q, k) in POOLING_ROWS {
                let mut c = cfg.clone();
                c.model.query_pool = q;
                c.model.key_pool = k;
                c.model.validate()?;
                let label = format!("{}/{}", pool_name(q), pool_name(k));
                rows.push(run_row(label, &c, Some(cfg.task_filter), train, test)?);
                on_row(rows.last().expect("just pushed"));
            }
        }
        AblationKind::Tasks => {
            for (label, filter) in TASK_ROWS {
                rows.push(run_row(label.to_string(), cfg, filter, train, test)?);
                on_row(rows.last().expect("just pushed"));
            }
        }
    }
    Ok(rows)
}

fn cell(s: &Option<Score>, f: impl Fn(&Score) -> f64) -> String {
    s.as_ref().map_or("-".into(), |s| format!("{:.2}", 100.0 * f(s)))
}

fn header(kind: AblationKind) -> (&'static str, String) {
    match kind {
        AblationKind::Pooling => (
            POOLING_NOTE,
            format!("{:<8} {:>7} {:>7}", "Q/K", "CD IoU", "CD F1"),
        ),
        AblationKind::Tasks => (
            TASKS_NOTE,
            format!(
                "{:<8} {:>7} {:>7} {:>7} {:>7}",
                "Data", "BX IoU", "BX F1", "CD IoU", "CD F1"
            ),
        ),
    }
}

pub fn table_row(kind: AblationKind, r: &Row) -> String {
    match kind {
        AblationKind::Pooling => format!(
            "{:<8} {:>7} {:>7}",
            r.label,
            cell(&r.cd, |s| s.iou),
            cell(&r.cd, |s| s.f1)
        ),
        AblationKind::Tasks => format!(
            "{:<8} {:>7} {:>7} {:>7} {:>7}",
            r.label,
            cell(&r.bx, |s| s.iou),
            cell(&r.bx, |s| s.f1),
            cell(&r.cd, |s| s.iou),
            cell(&r.cd, |s| s.f1)
        ),
    }
}

pub fn run(kind: AblationKind, extra: Extra) -> CliResult<()> {
    let mut extra = extra;
    let report = extra.take_path("report");
    let config_path = extra.config_path()?;
    let cfg = RunConfig::load(config_path.as_deref(), &extra.into_overrides()?)?;
    let train = load_split(&cfg, &cfg.train_split)?;
    let test = load_split(&cfg, &cfg.test_split)?;
    if test.is_empty() {
        return Err(CliError::Failed(format!("split {} is empty", cfg.test_split)));
    }

    let (note, head) = header(kind);
    println!("{note}");
    println!("{head}");
    let rows = ablate(kind, &cfg, &train, &test, |r| println!("{}", table_row(kind, r)))?;
    if let Some(path) = report.or_else(|| cfg.report_path.clone()) {
        let text = serde_json::to_string_pretty(&rows).expect("rows serialise") + "\n";
        write_text(&path, &text)?;
    }
    Ok(())
}
