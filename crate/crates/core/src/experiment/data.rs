//! Dataset loading and the text-context feature pipeline: compose texts per
//! window, embed them, fit PCA on the training windows, reduce everything.

use std::collections::{BTreeSet, HashMap};

use chrono::{DateTime, Duration, NaiveDate, Utc};
use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::context::{
    compose_city_text, compose_node_text, prediction_hour_suffix, read_jsonl, Calendar, ContextRecord, DayContext, Embedder, Event,
};
use crate::error::{Error, Result};
use crate::flow::{FlowSeries, GridGeometry, Sample};
use crate::reduction::{fit_pca, PcaModel};

use super::config::DataConfig;
use super::synth::SynthData;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub series: FlowSeries,
    pub adjacency: Array2<f64>,
    pub geometry: Option<GridGeometry>,
    pub days: Vec<DayContext>,
    pub events: Vec<Event>,
}

impl Dataset {
    pub fn from_synth(d: SynthData) -> Self {
        Dataset {
            series: d.series,
            adjacency: d.graph.adjacency().clone(),
            geometry: Some(d.graph.geometry),
            days: d.days,
            events: d.events,
        }
    }

    /// Reads the flow directory plus optional weather and event streams.
    pub fn load(cfg: &DataConfig) -> Result<Self> {
        let dir = cfg
            .flows_dir
            .as_ref()
            .ok_or_else(|| Error::Config("data.flows_dir is required without --synth".into()))?;
        let (series, graph) = FlowSeries::read_dir(dir)?;
        let graph = graph.ok_or_else(|| Error::InvalidInput(format!("{} has no grid adjacency", dir.display())))?;
        if graph.n_nodes() != series.n_grids() {
            return Err(Error::shape(series.n_grids(), graph.n_nodes()));
        }
        let days = match &cfg.weather {
            Some(p) => read_jsonl(p)?,
            None => Vec::new(),
        };
        let events: Vec<Event> = match &cfg.events {
            Some(p) => read_jsonl(p)?,
            None => Vec::new(),
        };
        if let Some(e) = events.iter().find(|e| e.grid >= series.n_grids()) {
            return Err(Error::OutOfRange(format!(
                "event {:?} at grid {} outside {} grids",
                e.name,
                e.grid,
                series.n_grids()
            )));
        }
        Ok(Dataset {
            series,
            adjacency: graph.adjacency().clone(),
            geometry: Some(graph.geometry),
            days,
            events,
        })
    }

    pub fn n_grids(&self) -> usize {
        self.series.n_grids()
    }

    pub fn first_day(&self) -> NaiveDate {
        self.series.start_time().date_naive()
    }

    /// Days with at least one event at `grid`.
    pub fn event_days(&self, grid: usize) -> BTreeSet<NaiveDate> {
        self.events.iter().filter(|e| e.grid == grid).map(|e| e.start_time.date()).collect()
    }

    /// Days with an event anywhere.
    pub fn any_event_days(&self) -> BTreeSet<NaiveDate> {
        self.events.iter().map(|e| e.start_time.date()).collect()
    }

    fn day_lookup(&self) -> HashMap<NaiveDate, &DayContext> {
        self.days.iter().map(|d| (d.date, d)).collect()
    }

    fn city_text_with(&self, lookup: &HashMap<NaiveDate, &DayContext>, anchor: DateTime<Utc>) -> Result<String> {
        let date = anchor.date_naive();
        let day = lookup.get(&date);
        let calendar = Calendar {
            holiday: day.and_then(|d| d.holiday.clone()),
        };
        let mut text = compose_city_text(date, day.map(|d| &d.weather), &calendar)?;
        text.push_str(&prediction_hour_suffix(anchor.naive_utc()));
        Ok(text)
    }

    /// City text for the window whose first predicted hour is `anchor`.
    pub fn city_text(&self, anchor: DateTime<Utc>) -> Result<String> {
        self.city_text_with(&self.day_lookup(), anchor)
    }

    pub fn node_text(&self, grid: usize, date: NaiveDate) -> String {
        let todays: Vec<Event> = self
            .events
            .iter()
            .filter(|e| e.grid == grid && e.start_time.date() == date)
            .cloned()
            .collect();
        compose_node_text(grid, &todays)
    }

    /// Every context record the experiment can consult: one city record per
    /// hour of the series and one node record per day and target grid.
    pub fn context_records(&self, targets: &[usize]) -> Result<Vec<ContextRecord>> {
        let lookup = self.day_lookup();
        let mut out = Vec::new();
        for h in 0..self.series.n_hours() {
            let t = self.series.time_at(h);
            out.push(ContextRecord::city(t, t + Duration::hours(1), self.city_text_with(&lookup, t)?)?);
        }
        let n_days = self.series.n_hours().div_ceil(24);
        for k in 0..n_days {
            let date = self.first_day() + Duration::days(k as i64);
            let from = crate::ingestion::day_start(date);
            for &g in targets {
                out.push(ContextRecord::node(
                    g,
                    self.n_grids(),
                    from,
                    from + Duration::days(1),
                    self.node_text(g, date),
                )?);
            }
        }
        Ok(out)
    }
}

/// Reduced context vectors for one window.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleContext {
    pub city: Option<Array1<f64>>,
    /// One vector per node target, in target order.
    pub node: Vec<Array1<f64>>,
}

/// A window plus its context vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub x: Array3<f64>,
    pub y: Array3<f64>,
    pub anchor: DateTime<Utc>,
    pub context: SampleContext,
}

/// PCA models fitted on the training windows.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContextModels {
    pub city: Option<PcaModel>,
    pub node: Option<PcaModel>,
}

impl ContextModels {
    pub fn city_dim(&self) -> Option<usize> {
        self.city.as_ref().map(PcaModel::dim)
    }

    pub fn node_dim(&self) -> Option<usize> {
        self.node.as_ref().map(PcaModel::dim)
    }
}

fn stack_rows(rows: &[&Vec<f64>]) -> Result<Array2<f64>> {
    let dim = rows.first().map_or(0, |r| r.len());
    let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Array2::from_shape_vec((rows.len(), dim), flat).map_err(|e| Error::InvalidInput(e.to_string()))
}

/// Which context streams to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextNeeds {
    pub city: bool,
    pub node: bool,
}

/// Embeds the texts of every window, fits separate city and node PCA models
/// on `splits[0]` (the training windows) only, and reduces all windows.
pub fn prepare_samples(
    ds: &Dataset,
    splits: [&[Sample]; 3],
    targets: &[usize],
    needs: ContextNeeds,
    embedder: &Embedder,
    variance_target: f64,
) -> Result<(ContextModels, [Vec<PreparedSample>; 3])> {
    let lookup = ds.day_lookup();
    let mut texts: Vec<String> = Vec::new();
    // Per split, per sample: index of the city text and of each node text.
    let mut idx: Vec<Vec<(Option<usize>, Vec<usize>)>> = Vec::new();
    for split in splits {
        let mut rows = Vec::with_capacity(split.len());
        for s in split {
            let city = if needs.city {
                texts.push(ds.city_text_with(&lookup, s.anchor_time)?);
                Some(texts.len() - 1)
            } else {
                None
            };
            let mut node = Vec::new();
            if needs.node {
                for &g in targets {
                    texts.push(ds.node_text(g, s.anchor_time.date_naive()));
                    node.push(texts.len() - 1);
                }
            }
            rows.push((city, node));
        }
        idx.push(rows);
    }
    let vectors = if texts.is_empty() {
        Vec::new()
    } else {
        embedder.embed_all(&texts)?
    };

    let mut models = ContextModels::default();
    if needs.city {
        let rows: Vec<&Vec<f64>> = idx[0].iter().filter_map(|(c, _)| c.map(|i| &vectors[i])).collect();
        if rows.is_empty() {
            return Err(Error::InvalidInput("no training windows to fit the city PCA".into()));
        }
        models.city = Some(fit_pca(stack_rows(&rows)?.view(), variance_target)?);
    }
    if needs.node {
        let rows: Vec<&Vec<f64>> = idx[0].iter().flat_map(|(_, n)| n.iter().map(|&i| &vectors[i])).collect();
        if rows.is_empty() {
            return Err(Error::InvalidInput("no training windows to fit the node PCA".into()));
        }
        models.node = Some(fit_pca(stack_rows(&rows)?.view(), variance_target)?);
    }

    let reduce = |model: &Option<PcaModel>, i: usize| -> Result<Array1<f64>> {
        model
            .as_ref()
            .expect("model fitted")
            .transform(Array1::from(vectors[i].clone()).view())
    };
    let mut out: [Vec<PreparedSample>; 3] = Default::default();
    for (k, split) in splits.iter().enumerate() {
        out[k] = split
            .iter()
            .zip(&idx[k])
            .map(|(s, (c, n))| {
                Ok(PreparedSample {
                    x: s.x.clone(),
                    y: s.y.clone(),
                    anchor: s.anchor_time,
                    context: SampleContext {
                        city: c.map(|i| reduce(&models.city, i)).transpose()?,
                        node: n.iter().map(|&i| reduce(&models.node, i)).collect::<Result<_>>()?,
                    },
                })
            })
            .collect::<Result<_>>()?;
    }
    Ok((models, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::OfflineBackend;
    use crate::experiment::synth::{synth_generate, SynthSpec};
    use crate::flow::make_windows;

    fn small() -> Dataset {
        let spec = SynthSpec {
            n_days: 10,
            events: SynthSpec::benchmark(0).events.into_iter().filter(|e| e.day < 10).collect(),
            ..SynthSpec::benchmark(0)
        };
        Dataset::from_synth(synth_generate(&spec).unwrap())
    }

    #[test]
    fn texts_follow_the_calendar() {
        let ds = small();
        let t = ds.series.time_at(24 * 3 + 20);
        let city = ds.city_text(t).unwrap();
        assert!(city.starts_with("Today is June 4, 2023."), "{city}");
        assert!(city.ends_with("The prediction is for 20:00 on a Sunday."), "{city}");
        assert!(ds
            .node_text(5, t.date_naive())
            .contains("hosts a basketball game from 19:00 to 22:00"));
        assert_eq!(ds.node_text(4, t.date_naive()), "Grid 4 has no scheduled events today.");
        assert_eq!(ds.event_days(5).len(), 2);
        assert!(ds.event_days(4).is_empty());
    }

    #[test]
    fn context_records_cover_every_hour() {
        let ds = small();
        let recs = ds.context_records(&[5]).unwrap();
        assert_eq!(recs.len(), 240 + 10);
        let t = ds.series.time_at(100);
        assert_eq!(recs.iter().filter(|r| r.covers(t)).count(), 2);
    }

    #[test]
    fn pca_sees_only_training_windows() {
        let ds = small();
        let w = make_windows(&ds.series, Default::default()).unwrap();
        let (train, rest) = w.split_at(100);
        let embedder = Embedder::new(Box::new(OfflineBackend::new(1, 32).unwrap()), None).unwrap();
        let needs = ContextNeeds { city: true, node: true };
        let (models, out) = prepare_samples(&ds, [train, &rest[..10], &rest[10..]], &[5], needs, &embedder, 0.95).unwrap();
        // The first 100 windows anchor inside days 0..4, which include one event day.
        let node = models.node.as_ref().unwrap();
        assert!(node.dim() >= 1);
        assert_eq!(out[0].len(), 100);
        assert_eq!(out[0][0].context.node.len(), 1);
        assert_eq!(out[0][0].context.city.as_ref().unwrap().len(), models.city_dim().unwrap());

        // Refitting on the training windows alone reproduces the model.
        let (again, _) = prepare_samples(&ds, [train, &[], &[]], &[5], needs, &embedder, 0.95).unwrap();
        assert_eq!(again, models);
    }
}
