use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{json_field, run_to_dir, ExperimentConfig, METRICS_FILE};
use crate::error::{Error, Result};
use crate::training::CSV_HEADER;

pub const SUMMARY_FILE: &str = "summary.csv";
const DONE_FILE: &str = "done";
const FAILED_FILE: &str = "failed";

/// One swept config field, addressed by a dotted path such as
/// `penalty.grad_norm`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub field: String,
    pub values: Vec<Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub base: Value,
    pub axes: Vec<Axis>,
    /// Combinations to leave out: each entry maps field paths to values,
    /// and a cell is skipped when it matches every pair of some entry.
    #[serde(default)]
    pub skip: Vec<serde_json::Map<String, Value>>,
}

impl SweepGrid {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(json_field(&e), e.to_string()))
    }
}

#[derive(Clone, Debug)]
pub struct SweepCell {
    pub index: usize,
    pub assignment: Vec<(String, Value)>,
    pub config: ExperimentConfig,
}

pub fn cell_name(index: usize) -> String {
    format!("cell_{index:03}")
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::config(path, "path runs through a non-object"))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = obj.entry((*part).to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::config("axes.field", "empty path"))
}

/// Every non-skipped combination, first axis varying slowest. Each cell's
/// config is validated.
pub fn expand_grid(grid: &SweepGrid) -> Result<Vec<SweepCell>> {
    if grid.axes.is_empty() || grid.axes.iter().any(|a| a.values.is_empty()) {
        return Err(Error::config("axes", "grid is empty"));
    }
    let base = ExperimentConfig::from_value(grid.base.clone())?;
    let base = serde_json::to_value(&base)?;
    let total: usize = grid.axes.iter().map(|a| a.values.len()).product();
    let mut cells = Vec::new();
    for flat in 0..total {
        let mut rem = flat;
        let mut assignment = vec![(String::new(), Value::Null); grid.axes.len()];
        for (k, axis) in grid.axes.iter().enumerate().rev() {
            let n = axis.values.len();
            assignment[k] = (axis.field.clone(), axis.values[rem % n].clone());
            rem /= n;
        }
        let skipped = grid.skip.iter().any(|rule| {
            rule.iter()
                .all(|(f, v)| assignment.iter().any(|(af, av)| af == f && av == v))
        });
        if skipped {
            continue;
        }
        let mut value = base.clone();
        for (f, v) in &assignment {
            set_path(&mut value, f, v.clone())?;
        }
        let config = ExperimentConfig::from_value(value).map_err(|e| match e {
            Error::InvalidConfig { field, reason } => Error::config(field, format!("in cell {flat}: {reason}")),
            other => other,
        })?;
        cells.push(SweepCell {
            index: cells.len(),
            assignment,
            config,
        });
    }
    if cells.is_empty() {
        return Err(Error::config("skip", "every cell is skipped"));
    }
    Ok(cells)
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub cells: usize,
    pub failed: Vec<(usize, String)>,
    pub summary: PathBuf,
}

fn run_cell(cell: &SweepCell, dir: &Path) -> std::result::Result<(), String> {
    if dir.join(DONE_FILE).exists() {
        return Ok(());
    }
    let _ = fs::remove_file(dir.join(FAILED_FILE));
    match run_to_dir(&cell.config, dir) {
        Ok(_) => fs::write(dir.join(DONE_FILE), "").map_err(|e| e.to_string()),
        Err(e) => {
            let msg = e.to_string();
            let _ = fs::create_dir_all(dir);
            let _ = fs::write(dir.join(FAILED_FILE), format!("{msg}\n"));
            Err(msg)
        }
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Runs every cell on at most `jobs` threads, skipping cells already
/// marked done, then writes `summary.csv` from the cell directories.
pub fn run_sweep(grid: &SweepGrid, out: &Path, jobs: usize) -> Result<SweepReport> {
    let cells = expand_grid(grid)?;
    fs::create_dir_all(out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config("jobs", e.to_string()))?;
    let results: Vec<std::result::Result<(), String>> =
        pool.install(|| cells.par_iter().map(|c| run_cell(c, &out.join(cell_name(c.index)))).collect());
    let failed: Vec<(usize, String)> = results
        .into_iter()
        .enumerate()
        .filter_map(|(i, r)| r.err().map(|m| (i, m)))
        .collect();
    let summary = out.join(SUMMARY_FILE);
    fs::write(&summary, summarize(&cells, out)?)?;
    Ok(SweepReport {
        cells: cells.len(),
        failed,
        summary,
    })
}

fn summarize(cells: &[SweepCell], out: &Path) -> Result<String> {
    let fields: Vec<&str> = cells[0].assignment.iter().map(|(f, _)| f.as_str()).collect();
    let mut text = format!("cell,status,{},{CSV_HEADER}\n", fields.join(","));
    let blank = ",".repeat(CSV_HEADER.matches(',').count());
    for cell in cells {
        let dir = out.join(cell_name(cell.index));
        let status = if dir.join(DONE_FILE).exists() {
            "ok"
        } else if dir.join(FAILED_FILE).exists() {
            "failed"
        } else {
            "missing"
        };
        let last = fs::read_to_string(dir.join(METRICS_FILE))
            .ok()
            .and_then(|m| m.lines().skip(1).last().map(str::to_string))
            .unwrap_or_else(|| blank.clone());
        let values: Vec<String> = cell.assignment.iter().map(|(_, v)| render(v)).collect();
        text.push_str(&format!("{},{status},{},{last}\n", cell_name(cell.index), values.join(",")));
    }
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn grid(axes: Value, skip: Value) -> SweepGrid {
        serde_json::from_value(json!({
            "base": {
                "mode": "mmc",
                "objective": {"loss": "hinge"},
                "penalty": {"grad_norm": "l2", "g": "hinge", "lambda": 20},
                "critic": {"kind": "linear"},
                "dataset": {"kind": "two_lines", "n_per_class": 20},
                "train": {"iterations": 10, "batch_size": 4, "metric_interval": 5}
            },
            "axes": axes,
            "skip": skip
        }))
        .unwrap()
    }

    #[test]
    fn expansion_order_and_skips() {
        let g = grid(
            json!([
                {"field": "objective.loss", "values": ["wgan", "hinge"]},
                {"field": "penalty.grad_norm", "values": ["l1", "l2", "linf"]}
            ]),
            json!([{"objective.loss": "wgan", "penalty.grad_norm": "l1"}]),
        );
        let cells = expand_grid(&g).unwrap();
        assert_eq!(cells.len(), 5);
        assert_eq!(cells[0].assignment[1].1, json!("l2"));
        assert_eq!(cells[4].config.penalty.grad_norm, crate::geometry::NormOrder::Linf);
    }

    #[test]
    fn empty_or_invalid_grids_are_rejected() {
        assert!(expand_grid(&grid(json!([]), json!([]))).is_err());
        assert!(expand_grid(&grid(json!([{"field": "penalty.g", "values": []}]), json!([]))).is_err());
        let bad = grid(json!([{"field": "penalty.lambda", "values": [1, -1]}]), json!([]));
        assert!(matches!(expand_grid(&bad), Err(Error::InvalidConfig { .. })));
        let unknown = grid(json!([{"field": "penalty.bogus", "values": [1]}]), json!([]));
        assert!(expand_grid(&unknown).is_err());
    }

    #[test]
    fn sweep_is_resumable() {
        let dir = tempfile::tempdir().unwrap();
        let g = grid(json!([{"field": "penalty.g", "values": ["ls", "hinge"]}]), json!([]));
        let report = run_sweep(&g, dir.path(), 2).unwrap();
        assert_eq!(report.cells, 2);
        assert!(report.failed.is_empty());
        let summary = fs::read_to_string(&report.summary).unwrap();
        assert_eq!(summary.lines().count(), 3);
        assert!(summary.lines().nth(1).unwrap().starts_with("cell_000,ok,ls,10,"));
        let metrics = dir.path().join("cell_000").join(METRICS_FILE);
        fs::write(&metrics, "sentinel\n").unwrap();
        run_sweep(&g, dir.path(), 1).unwrap();
        assert_eq!(fs::read_to_string(&metrics).unwrap(), "sentinel\n");
    }
}
