//! JSON evaluation report: one object per evaluated task, keyed `bx_t1`,
//! `bx_t2` and `cd`, with percentages printed to exactly two decimals.

use std::collections::BTreeMap;

use mssfc::metrics::{ConfusionCounts, Metrics};
use mssfc::network::Task;
use mssfc::train::TaskCounts;
use serde::Serialize;
use serde_json::value::RawValue;

#[derive(Serialize)]
struct TaskReport {
    precision: Box<RawValue>,
    recall: Box<RawValue>,
    iou: Box<RawValue>,
    f1: Box<RawValue>,
    counts: ConfusionCounts,
}

fn percent(v: f64) -> Box<RawValue> {
    RawValue::from_string(format!("{:.2}", 100.0 * v)).expect("formatted float is valid JSON")
}

impl TaskReport {
    fn new(counts: ConfusionCounts) -> Self {
        let Metrics {
            precision,
            recall,
            iou,
            f1,
        } = counts.metrics();
        TaskReport {
            precision: percent(precision),
            recall: percent(recall),
            iou: percent(iou),
            f1: percent(f1),
            counts,
        }
    }
}

/// Report text for the tasks that have counts.
pub fn eval_report(counts: &TaskCounts) -> String {
    let map: BTreeMap<&str, TaskReport> = Task::ALL
        .iter()
        .filter_map(|&t| counts[t.index()].map(|c| (t.key(), TaskReport::new(c))))
        .collect();
    serde_json::to_string_pretty(&map).expect("report serialises") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn two_decimals_and_counts() {
        let c = ConfusionCounts {
            tp: 6,
            fp: 2,
            fn_: 2,
            tn: 90,
        };
        let text = eval_report(&[Some(c), None, Some(ConfusionCounts::default())]);
        assert!(text.contains("\"iou\": 60.00"), "{text}");
        assert!(text.contains("\"precision\": 75.00"), "{text}");
        assert!(text.contains("\"iou\": 0.00"), "{text}");
        let v: Value = serde_json::from_str(&text).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["bx_t1", "cd"]);
        assert_eq!(v["bx_t1"]["counts"]["fn"], 2);
        assert_eq!(v["bx_t1"]["f1"].as_f64(), Some(75.0));
    }
}
