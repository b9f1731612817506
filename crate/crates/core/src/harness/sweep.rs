use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Objective};
use super::record::RunRecord;
use super::train::run_experiment;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grid {
    /// ctc, cr_ctc and sr_ctc side by side.
    Objectives,
    /// `cr.alpha` in {0.1, 0.2, 0.3}.
    Alpha,
    /// `augment.time_scale_ratio` in {1, 1.5, 2, 2.5, 3}.
    MaskRatio,
    /// Distance, target mode, frame filter and masking variants of cr_ctc.
    Ablation,
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grid::Objectives => "objectives",
            Grid::Alpha => "alpha",
            Grid::MaskRatio => "mask_ratio",
            Grid::Ablation => "ablation",
        })
    }
}

impl FromStr for Grid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "objectives" => Ok(Grid::Objectives),
            "alpha" => Ok(Grid::Alpha),
            "mask_ratio" => Ok(Grid::MaskRatio),
            "ablation" => Ok(Grid::Ablation),
            _ => Err(Error::invalid(format!("unknown grid {s:?} (objectives, alpha, mask_ratio, ablation)"))),
        }
    }
}

type Cell = (String, Vec<(&'static str, String)>);

fn cr(label: &str, extra: &[(&'static str, &str)]) -> Cell {
    let mut pairs = vec![("objective", "cr_ctc".to_string())];
    pairs.extend(extra.iter().map(|(k, v)| (*k, v.to_string())));
    (label.to_string(), pairs)
}

impl Grid {
    /// Cell labels with the overrides that define them.
    pub fn cells(self) -> Vec<Cell> {
        match self {
            Grid::Objectives => ["ctc", "cr_ctc", "sr_ctc"]
                .iter()
                .map(|o| (o.to_string(), vec![("objective", o.to_string())]))
                .collect(),
            Grid::Alpha => ["0.1", "0.2", "0.3"].iter().map(|a| cr(&format!("alpha={a}"), &[("cr.alpha", a)])).collect(),
            Grid::MaskRatio => ["1", "1.5", "2", "2.5", "3"]
                .iter()
                .map(|r| cr(&format!("time_scale_ratio={r}"), &[("augment.time_scale_ratio", r)]))
                .collect(),
            Grid::Ablation => vec![
                ("ctc".to_string(), vec![("objective", "ctc".to_string())]),
                cr("cr_ctc", &[]),
                cr("hard_label_ce", &[("cr.distance", "hard_label_ce")]),
                cr("flow_gradient", &[("cr.target_mode", "flow_gradient")]),
                cr("exclude_self_masked", &[("cr.frame_filter", "exclude_self_masked")]),
                cr("exclude_self_unmasked", &[("cr.frame_filter", "exclude_self_unmasked")]),
                cr("no_larger_time_masking", &[("augment.time_scale_ratio", "1")]),
                cr(
                    "larger_freq_masking",
                    &[("augment.time_scale_ratio", "1"), ("augment.freq_scale_ratio", "2.5")],
                ),
            ],
        }
    }
}

/// Column order of sweep CSV files.
pub const SWEEP_CSV_HEADER: &str = "grid,cell,objective,seed,dev_greedy_ter,test_greedy_ter,test_prefix_ter,\
mean_nonblank_duration,mean_blank_emit_prob,mean_nonblank_emit_prob,final_loss,steps,skipped,wall_clock_secs";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub grid: Grid,
    pub cell: String,
    pub record: RunRecord,
}

impl SweepRow {
    pub fn csv_row(&self) -> String {
        let r = &self.record;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{:.3}",
            self.grid,
            self.cell,
            r.objective,
            r.seed,
            r.dev.greedy_ter,
            r.test.greedy_ter,
            r.test.prefix_ter,
            r.test.peak.mean_nonblank_duration,
            r.test.peak.mean_blank_emit_prob,
            r.test.peak.mean_nonblank_emit_prob,
            r.loss_curve.last().copied().unwrap_or(f64::NAN),
            r.steps,
            r.skipped,
            r.wall_clock_secs
        )
    }
}

/// Runs every cell of `grid` for every seed. `base` overrides are applied on
/// top of each cell's objective preset, then the cell overrides, then the
/// seed (used for both the dataset and training). Rows are reported through
/// `on_row` as they finish.
pub fn sweep_grid(
    grid: Grid,
    base: &[(String, String)],
    seeds: &[u64],
    mut on_row: impl FnMut(&SweepRow),
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for seed in seeds {
        for (label, cell) in grid.cells() {
            let seed_s = seed.to_string();
            let mut pairs: Vec<(&str, &str)> = cell.iter().filter(|(k, _)| *k == "objective").map(|(k, v)| (*k, v.as_str())).collect();
            pairs.extend(base.iter().filter(|(k, _)| k != "objective").map(|(k, v)| (k.as_str(), v.as_str())));
            pairs.extend(cell.iter().filter(|(k, _)| *k != "objective").map(|(k, v)| (*k, v.as_str())));
            pairs.push(("task.seed", &seed_s));
            pairs.push(("train.seed", &seed_s));
            let cfg = ExperimentConfig::from_pairs(pairs.iter().copied())?;
            let (record, _) = run_experiment(&cfg)?;
            let row = SweepRow { grid, cell: label, record };
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Per-cell means over seeds, in first-seen cell order.
pub fn summarize(rows: &[SweepRow]) -> Vec<(String, Objective, usize, f64, f64)> {
    let mut out: Vec<(String, Objective, Vec<f64>)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|(c, _, _)| *c == r.cell) {
            Some((_, _, v)) => v.push(r.record.test.greedy_ter),
            None => out.push((r.cell.clone(), r.record.objective, vec![r.record.test.greedy_ter])),
        }
    }
    out.into_iter()
        .map(|(cell, obj, v)| {
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let sd = if n > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
            (cell, obj, n, mean, sd)
        })
        .collect()
}
