//! Paired original-versus-augmented training and evaluation.

pub mod config;
pub mod data;
pub mod plot;
pub mod report;
pub mod synth;
pub mod train;

use log::info;

use crate::context::{Embedder, EmbeddingBackend, OfflineBackend, RemoteBackend};
use crate::error::{Error, Result};
use crate::flow::GraphSpec;
use crate::flow::{make_windows, FlowSeries};
use crate::ingestion::{aggregate_flows_parallel, read_trips_csv, split_series, IngestReport, Period, SplitSpec};
use crate::models::{ModelDims, NormStats};
use std::path::Path;

pub use config::{ExperimentConfig, Variant};
pub use data::{ContextModels, Dataset, PreparedSample};
pub use report::{EvalReport, EvalRow, EventCalendar, Scores};
pub use synth::{synth_generate, SynthData, SynthSpec};
pub use train::{train, TrainSetup, TrainedModel};

/// Builds the configured embedding backend behind a cache.
pub fn make_embedder(cfg: &config::EmbeddingConfig) -> Result<Embedder> {
    let backend: Box<dyn EmbeddingBackend> = match cfg.backend {
        config::BackendKind::Offline => Box::new(OfflineBackend::new(cfg.seed, cfg.dim)?),
        config::BackendKind::Remote => {
            let remote = cfg
                .remote
                .clone()
                .ok_or_else(|| Error::Config("remote backend needs an [embedding.remote] section".into()))?;
            Box::new(RemoteBackend::new(remote)?)
        }
    };
    Embedder::new(backend, cfg.cache_dir.clone())
}

/// Reads a trip CSV and aggregates it over the configured grid. Without
/// explicit bounds the period spans the first through last pickup day.
pub fn ingest_trips(path: &Path, cfg: &config::IngestConfig) -> Result<(FlowSeries, GraphSpec, IngestReport)> {
    let trips = read_trips_csv(path, cfg.utc_offset_minutes)?;
    let days = trips.iter().filter_map(|t| t.as_ref().ok()).map(|t| t.started_at.date_naive());
    let (lo, hi) = days.fold(
        (None, None),
        |(lo, hi): (Option<chrono::NaiveDate>, Option<chrono::NaiveDate>), d| {
            (Some(lo.map_or(d, |l| l.min(d))), Some(hi.map_or(d, |h| h.max(d))))
        },
    );
    let first = cfg.first_day.or(lo);
    let last = cfg.last_day.or(hi);
    let (Some(first), Some(last)) = (first, last) else {
        return Err(Error::InvalidInput(format!(
            "{}: no parseable trips to infer the period from",
            path.display()
        )));
    };
    let graph = GraphSpec::from_geometry(cfg.grid.clone(), cfg.adjacency)?;
    let (series, report) = aggregate_flows_parallel(&trips, &cfg.grid, Period::days(first, last)?)?;
    info!(
        "ingested {} of {} trips ({} out of bounds, {} out of period, {} unparseable)",
        report.kept, report.total, report.out_of_bounds, report.out_of_period, report.unparseable
    );
    Ok((series, graph, report))
}

/// Split, windowed and context-reduced data shared by every run of a comparison.
pub struct Prepared {
    pub split: SplitSpec,
    pub train_series: FlowSeries,
    pub norm: NormStats,
    pub contexts: ContextModels,
    pub train: Vec<PreparedSample>,
    pub val: Vec<PreparedSample>,
    pub test: Vec<PreparedSample>,
    pub events: EventCalendar,
    pub node_targets: Vec<usize>,
}

pub fn resolve_split(cfg: &ExperimentConfig, ds: &Dataset) -> SplitSpec {
    let s = &cfg.split;
    SplitSpec::consecutive(s.first_day.unwrap_or_else(|| ds.first_day()), s.train_days, s.val_days, s.test_days)
}

/// Splits the series, windows each split, fits normalization on train, and
/// embeds and reduces context for the variants that need it.
pub fn prepare(cfg: &ExperimentConfig, ds: &Dataset, embedder: &Embedder) -> Result<Prepared> {
    cfg.validate_static()?;
    cfg.validate_for(ds.n_grids())?;
    let split = resolve_split(cfg, ds);
    let parts = split_series(&ds.series, &split)?;
    let tw = make_windows(&parts.train, cfg.window)?;
    let vw = make_windows(&parts.val, cfg.window)?;
    let sw = make_windows(&parts.test, cfg.window)?;
    let aug = &cfg.augmentation;
    let needs = data::ContextNeeds {
        city: aug.enabled && aug.variants.iter().any(|v| v.uses_city()),
        node: aug.enabled && aug.variants.iter().any(|v| v.uses_node()),
    };
    let node_targets = cfg.node_targets();
    let (contexts, [train, val, test]) = data::prepare_samples(ds, [&tw, &vw, &sw], &node_targets, needs, embedder, aug.variance_target)?;
    let stats = embedder.stats();
    info!(
        "windows train/val/test {}/{}/{}; embedding cache {} hits, {} misses",
        train.len(),
        val.len(),
        test.len(),
        stats.hits,
        stats.misses
    );
    Ok(Prepared {
        split,
        norm: NormStats::fit(&parts.train),
        train_series: parts.train,
        contexts,
        train,
        val,
        test,
        events: EventCalendar {
            grid_days: ds.event_days(cfg.designated_grid),
            any_days: ds.any_event_days(),
        },
        node_targets,
    })
}

/// Trains one model per configured architecture and variant.
pub fn train_all(cfg: &ExperimentConfig, ds: &Dataset, p: &Prepared) -> Result<Vec<TrainedModel>> {
    let dims = ModelDims {
        d: ds.series.n_features(),
        t1: cfg.window.t1,
        t2: cfg.window.t2,
    };
    let mut out = Vec::new();
    for &arch in &cfg.model.architectures {
        for &variant in &cfg.augmentation.variants {
            let slots = train::aux_slots(variant, cfg.augmentation.enabled, &p.node_targets);
            out.push(train(TrainSetup {
                architecture: arch,
                hyperparameters: cfg.model.hyperparameters.clone(),
                dims,
                norm: p.norm.clone(),
                train_series: &p.train_series,
                train: &p.train,
                val: &p.val,
                adjacency: &ds.adjacency,
                variant,
                slots,
                context_dims: (p.contexts.city_dim(), p.contexts.node_dim()),
                activation: cfg.augmentation.activation,
                optimizer: &cfg.optimizer,
                seed: cfg.seed,
            })?);
        }
    }
    Ok(out)
}

pub struct Comparison {
    pub report: EvalReport,
    pub models: Vec<TrainedModel>,
    pub contexts: ContextModels,
}

/// Trains and tests every model-variant pair under one seed, split and
/// normalization, differing only in the attached auxiliary nodes.
pub fn run_comparison(cfg: &ExperimentConfig, ds: &Dataset, embedder: &Embedder) -> Result<Comparison> {
    let p = prepare(cfg, ds, embedder)?;
    let models = train_all(cfg, ds, &p)?;
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for m in &models {
        let scores = report::evaluate(m, &p.test, &ds.adjacency, cfg.designated_grid, &p.events)?;
        let arch = m.forecaster.architecture.id();
        rows.push(EvalRow::new(arch, m.variant.id(), cfg.seed, &scores));
        curves.push(report::TrainingCurve {
            model: arch.to_string(),
            variant: m.variant.id().to_string(),
            best_epoch: m.best_epoch,
            epochs: m.history.clone(),
        });
    }
    let needs_embedding = p.contexts.city.is_some() || p.contexts.node.is_some();
    let report = EvalReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        designated_grid: cfg.designated_grid,
        rows,
        curves,
        provenance: report::Provenance {
            split: p.split,
            normalization_fit_on: "train".into(),
            pca_fit_on: "train".into(),
            early_stopping_on: "val".into(),
            metrics_on: "test".into(),
            n_train_windows: p.train.len(),
            n_val_windows: p.val.len(),
            n_test_windows: p.test.len(),
            embedding_backend: needs_embedding.then(|| embedder.backend_identity()),
            city_pca_dim: p.contexts.city_dim(),
            node_pca_dim: p.contexts.node_dim(),
            node_targets: p.node_targets.clone(),
            test_event_days: p.events.grid_days.iter().copied().filter(|d| p.split.test.contains(*d)).collect(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        },
    };
    Ok(Comparison {
        report,
        models,
        contexts: p.contexts,
    })
}
