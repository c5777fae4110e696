//! Test-split scoring and the comparison report (CSV, JSON, markdown).

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use ndarray::{Array2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::SplitSpec;
use crate::metrics::ErrorAccumulator;

use super::data::PreparedSample;
use super::train::{EpochLog, TrainedModel};

/// Event days used to split the test metrics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventCalendar {
    /// Days with an event at the designated grid.
    pub grid_days: BTreeSet<NaiveDate>,
    /// Days with an event anywhere.
    pub any_days: BTreeSet<NaiveDate>,
}

/// Test-split errors on the raw count scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub mae_all: f64,
    pub rmse_all: f64,
    pub mae_grid: f64,
    pub rmse_grid: f64,
    /// Designated grid, windows anchored on its event days.
    pub mae_event_days: Option<f64>,
    pub rmse_event_days: Option<f64>,
    /// All regions, windows anchored on days without any event.
    pub mae_non_event_days: Option<f64>,
    pub rmse_non_event_days: Option<f64>,
    pub n_samples: usize,
}

/// Scores `(prediction, truth, anchor day)` triples.
pub fn score<'a, I>(pairs: I, designated_grid: usize, events: &EventCalendar) -> Result<Scores>
where
    I: IntoIterator<Item = (ArrayView3<'a, f64>, ArrayView3<'a, f64>, NaiveDate)>,
{
    let mask = [designated_grid];
    let mut all = ErrorAccumulator::default();
    let mut grid = ErrorAccumulator::default();
    let mut ev = ErrorAccumulator::default();
    let mut quiet = ErrorAccumulator::default();
    let mut count = 0;
    for (pred, truth, day) in pairs {
        all.add(truth, pred, None)?;
        grid.add(truth, pred, Some(&mask))?;
        if events.grid_days.contains(&day) {
            ev.add(truth, pred, Some(&mask))?;
        }
        if !events.any_days.contains(&day) {
            quiet.add(truth, pred, None)?;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyTestSet);
    }
    Ok(Scores {
        mae_all: all.mae().expect("non-empty"),
        rmse_all: all.rmse().expect("non-empty"),
        mae_grid: grid.mae().expect("non-empty"),
        rmse_grid: grid.rmse().expect("non-empty"),
        mae_event_days: ev.mae(),
        rmse_event_days: ev.rmse(),
        mae_non_event_days: quiet.mae(),
        rmse_non_event_days: quiet.rmse(),
        n_samples: count,
    })
}

/// Runs `model` over the test windows and scores the predictions.
pub fn evaluate(
    model: &TrainedModel,
    test: &[PreparedSample],
    adjacency: &Array2<f64>,
    designated_grid: usize,
    events: &EventCalendar,
) -> Result<Scores> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let n = test[0].x.dim().0;
    if designated_grid >= n {
        return Err(Error::OutOfRange(format!("designated grid {designated_grid} outside {n} grids")));
    }
    let preds = test.iter().map(|s| model.predict(s, adjacency)).collect::<Result<Vec<_>>>()?;
    score(
        preds.iter().zip(test).map(|(p, s)| (p.view(), s.y.view(), s.anchor.date_naive())),
        designated_grid,
        events,
    )
}

/// One CSV row: a model-variant pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub model: String,
    pub variant: String,
    pub seed: u64,
    pub mae_all: f64,
    pub rmse_all: f64,
    pub mae_grid: f64,
    pub rmse_grid: f64,
    pub mae_event_days: Option<f64>,
    pub rmse_event_days: Option<f64>,
    pub mae_non_event_days: Option<f64>,
    pub rmse_non_event_days: Option<f64>,
}

impl EvalRow {
    pub fn new(model: &str, variant: &str, seed: u64, s: &Scores) -> Self {
        EvalRow {
            model: model.to_string(),
            variant: variant.to_string(),
            seed,
            mae_all: s.mae_all,
            rmse_all: s.rmse_all,
            mae_grid: s.mae_grid,
            rmse_grid: s.rmse_grid,
            mae_event_days: s.mae_event_days,
            rmse_event_days: s.rmse_event_days,
            mae_non_event_days: s.mae_non_event_days,
            rmse_non_event_days: s.rmse_non_event_days,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub model: String,
    pub variant: String,
    pub best_epoch: usize,
    pub epochs: Vec<EpochLog>,
}

/// Which data each fitted quantity saw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub split: SplitSpec,
    pub normalization_fit_on: String,
    pub pca_fit_on: String,
    pub early_stopping_on: String,
    pub metrics_on: String,
    pub n_train_windows: usize,
    pub n_val_windows: usize,
    pub n_test_windows: usize,
    pub embedding_backend: Option<String>,
    pub city_pca_dim: Option<usize>,
    pub node_pca_dim: Option<usize>,
    pub node_targets: Vec<usize>,
    pub test_event_days: Vec<NaiveDate>,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub seed: u64,
    pub designated_grid: usize,
    pub rows: Vec<EvalRow>,
    pub curves: Vec<TrainingCurve>,
    pub provenance: Provenance,
}

pub fn rows_to_csv(rows: &[EvalRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidInput(e.to_string()))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

/// Markdown table: one row per model-variant, all-regions and designated-grid
/// errors side by side.
pub fn rows_to_markdown(rows: &[EvalRow], designated_grid: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "| Model | Variant | All MAE | All RMSE | Grid {designated_grid} MAE | Grid {designated_grid} RMSE | Event-day MAE | Event-day RMSE |"
    );
    let _ = writeln!(s, "|---|---|---:|---:|---:|---:|---:|---:|");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {:.3} | {:.3} | {:.3} | {:.3} | {} | {} |",
            r.model,
            r.variant,
            r.mae_all,
            r.rmse_all,
            r.mae_grid,
            r.rmse_grid,
            cell(r.mae_event_days),
            cell(r.rmse_event_days)
        );
    }
    s
}

impl EvalReport {
    pub fn to_csv(&self) -> Result<String> {
        rows_to_csv(&self.rows)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!(
            "# Forecast errors (seed {}, config {})\n\n",
            self.seed,
            &self.config_hash[..12.min(self.config_hash.len())]
        );
        s.push_str(&rows_to_markdown(&self.rows, self.designated_grid));
        s
    }

    /// Writes `report.csv`, `report.json` and `report.md` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("report.csv", self.to_csv()?),
            ("report.json", serde_json::to_string_pretty(self)?),
            ("report.md", self.to_markdown()),
        ];
        files
            .into_iter()
            .map(|(name, text)| {
                let p = dir.join(name);
                std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
                Ok(p)
            })
            .collect()
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
