//! `trafficctx`: ingest trips, build text context, train and compare
//! forecasters with and without auxiliary context nodes.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{Duration, NaiveDate};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use trafficctx::context::write_jsonl;
use trafficctx::experiment::config::BackendKind;
use trafficctx::experiment::report::{rows_to_csv, rows_to_markdown};
use trafficctx::experiment::{
    ingest_trips, make_embedder, prepare, run_comparison, synth_generate, train_all, Dataset, EvalReport, ExperimentConfig, SynthSpec,
    TrainedModel,
};
use trafficctx::Error;

use manifest::{io_error, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "trafficctx", version, about = "Text-context auxiliary nodes for grid flow forecasting")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML experiment config. Unset fields take their documented defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run seed (and the synthetic dataset seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    backend: Option<Backend>,
    /// Offline embedding dimension.
    #[arg(long, global = true)]
    embed_dim: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Use the synthetic benchmark dataset instead of `data.flows_dir`.
    #[arg(long, global = true)]
    synth: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Backend {
    Offline,
    Remote,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Aggregate a trip CSV into a flow directory.
    Ingest {
        #[arg(long)]
        trips: PathBuf,
    },
    /// Embed every city and node context text through the cache.
    Embed,
    /// Fit city and node PCA on the training windows.
    Reduce,
    /// Train every configured model and variant and save checkpoints.
    Train,
    /// Train, test and report every model and variant.
    Compare,
    /// Write the synthetic dataset as flow, weather and event files.
    Synth,
    /// Plot hourly flows of selected grids and days as SVG plus CSV.
    Plot {
        #[arg(long, value_delimiter = ',', required = true)]
        grids: Vec<usize>,
        /// Days as YYYY-MM-DD. Defaults to the first three days of the series.
        #[arg(long, value_delimiter = ',')]
        days: Vec<NaiveDate>,
        #[arg(long, default_value_t = 0)]
        feature: usize,
    },
    /// Merge the report.json files of several runs into one table.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Embed => "embed",
            Command::Reduce => "reduce",
            Command::Train => "train",
            Command::Compare => "compare",
            Command::Synth => "synth",
            Command::Plot { .. } => "plot",
            Command::Report { .. } => "report",
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None if c.synth => ExperimentConfig::synthetic_benchmark(c.seed.unwrap_or(0)),
        None => ExperimentConfig::default(),
    };
    if c.synth && cfg.synth.is_none() {
        cfg.synth = Some(SynthSpec::benchmark(cfg.seed));
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
        if let Some(s) = cfg.synth.as_mut() {
            s.seed = seed;
        }
    }
    if let Some(b) = c.backend {
        cfg.embedding.backend = match b {
            Backend::Offline => BackendKind::Offline,
            Backend::Remote => BackendKind::Remote,
        };
    }
    if let Some(d) = c.embed_dim {
        if cfg.embedding.backend == BackendKind::Remote {
            return Err(Failure::Usage("--embed-dim applies to the offline backend only".into()));
        }
        cfg.embedding.dim = d;
    }
    if cfg.embedding.cache_dir.is_none() {
        cfg.embedding.cache_dir = Some(c.out_dir.join("cache"));
    }
    cfg.validate_static()?;
    Ok(cfg)
}

fn load_dataset(c: &Common, cfg: &ExperimentConfig, m: &mut RunManifest) -> Result<Dataset, Error> {
    if c.synth {
        let spec = cfg.synth.as_ref().expect("set by load_config");
        return Ok(Dataset::from_synth(synth_generate(spec)?));
    }
    let d = &cfg.data;
    for p in [&d.flows_dir, &d.weather, &d.events].into_iter().flatten() {
        m.add_input(p)?;
    }
    Dataset::load(d)
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn write_text(path: PathBuf, text: &str, m: &mut RunManifest) -> Result<(), Error> {
    std::fs::write(&path, text).map_err(|e| io_error(&path, e))?;
    m.add_artifact(path);
    Ok(())
}

fn model_stem(model: &TrainedModel) -> String {
    format!("{}_{}", model.forecaster.architecture.id(), model.variant.id().replace('+', "-"))
}

fn write_logs(out: &Path, models: &[TrainedModel], m: &mut RunManifest) -> Result<(), Error> {
    let dir = out.join("logs");
    create_dir(&dir)?;
    for model in models.iter().filter(|x| !x.history.is_empty()) {
        let path = dir.join(format!("{}.jsonl", model_stem(model)));
        write_jsonl(&path, &model.history)?;
        m.add_artifact(path);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let c = &cli.common;
    if let Command::Report { inputs } = &cli.command {
        return report(c, inputs);
    }
    let cfg = load_config(c)?;
    let out = &c.out_dir;
    create_dir(out)?;
    let mut m = RunManifest::new(cli.command.name(), &cfg);
    if let Some(p) = &c.config {
        m.add_input(p)?;
    }
    match &cli.command {
        Command::Ingest { trips } => {
            m.add_input(trips)?;
            let (series, graph, report) = ingest_trips(trips, &cfg.ingest)?;
            let flows = out.join("flows");
            series.write_dir(&flows, Some(&graph))?;
            m.add_artifact(flows);
            write_text(
                out.join("ingest_report.json"),
                &serde_json::to_string_pretty(&report).map_err(Error::from)?,
                &mut m,
            )?;
            println!(
                "ingested {} hours x {} grids: kept {} of {} trips, {} out of bounds, {} out of period, {} unparseable",
                series.n_hours(),
                series.n_grids(),
                report.kept,
                report.total,
                report.out_of_bounds,
                report.out_of_period,
                report.unparseable
            );
            if let Some(w) = &report.warning {
                println!("warning: {w}");
            }
        }
        Command::Synth => {
            let spec = cfg.synth.clone().unwrap_or_else(|| SynthSpec::benchmark(cfg.seed));
            let data = synth_generate(&spec)?;
            let flows = out.join("flows");
            data.series.write_dir(&flows, Some(&data.graph))?;
            m.add_artifact(flows);
            let weather = out.join("weather.jsonl");
            write_jsonl(&weather, &data.days)?;
            m.add_artifact(weather);
            let events = out.join("events.jsonl");
            write_jsonl(&events, &data.events)?;
            m.add_artifact(events);
            println!(
                "synthetic dataset: {} grids, {} days, {} events in {}",
                data.series.n_grids(),
                data.series.n_hours() / 24,
                data.events.len(),
                out.display()
            );
        }
        Command::Embed => {
            let ds = load_dataset(c, &cfg, &mut m)?;
            cfg.validate_for(ds.n_grids())?;
            let embedder = make_embedder(&cfg.embedding)?;
            let mut records = ds.context_records(&cfg.node_targets())?;
            let texts: Vec<String> = records.iter().map(|r| r.text.clone()).collect();
            let vectors = embedder.embed_all(&texts)?;
            for (r, v) in records.iter_mut().zip(vectors) {
                r.embedding = Some(v);
            }
            let path = out.join("context.jsonl");
            write_jsonl(&path, &records)?;
            m.add_artifact(path);
            if let Some(dir) = &cfg.embedding.cache_dir {
                m.add_artifact(dir.clone());
            }
            let s = embedder.stats();
            println!(
                "embedded {} records ({} lookups): {} cache hits, {} misses, hit rate {:.2}%",
                records.len(),
                s.hits + s.misses,
                s.hits,
                s.misses,
                100.0 * s.hit_rate()
            );
        }
        Command::Reduce => {
            let ds = load_dataset(c, &cfg, &mut m)?;
            let embedder = make_embedder(&cfg.embedding)?;
            let p = prepare(&cfg, &ds, &embedder)?;
            for (name, model) in [("city", &p.contexts.city), ("node", &p.contexts.node)] {
                if let Some(model) = model {
                    let path = out.join(format!("pca_{name}.json"));
                    model.save(&path)?;
                    m.add_artifact(path);
                    println!(
                        "{name} PCA: {} -> {} dims, retained variance {:.4}, fit on {} training windows",
                        model.input_dim(),
                        model.dim(),
                        model.explained_variance_ratio().sum(),
                        p.train.len()
                    );
                }
            }
            if p.contexts.city.is_none() && p.contexts.node.is_none() {
                println!("no augmented variant is configured; nothing to reduce");
            }
        }
        Command::Train => {
            let ds = load_dataset(c, &cfg, &mut m)?;
            let embedder = make_embedder(&cfg.embedding)?;
            let p = prepare(&cfg, &ds, &embedder)?;
            let models = train_all(&cfg, &ds, &p)?;
            let dir = out.join("checkpoints");
            create_dir(&dir)?;
            for model in &models {
                let path = dir.join(format!("{}.json", model_stem(model)));
                model.save(&path)?;
                m.add_artifact(path);
                println!(
                    "{} {}: best epoch {} of {}",
                    model.forecaster.architecture,
                    model.variant.id(),
                    model.best_epoch,
                    model.history.len().saturating_sub(1)
                );
            }
            write_logs(out, &models, &mut m)?;
        }
        Command::Compare => {
            let ds = load_dataset(c, &cfg, &mut m)?;
            let embedder = make_embedder(&cfg.embedding)?;
            let result = run_comparison(&cfg, &ds, &embedder)?;
            for path in result.report.write(out)? {
                m.add_artifact(path);
            }
            write_logs(out, &result.models, &mut m)?;
            print!("{}", result.report.to_markdown());
        }
        Command::Plot { grids, days, feature } => {
            let ds = load_dataset(c, &cfg, &mut m)?;
            let days = if days.is_empty() {
                (0..3).map(|k| ds.first_day() + Duration::days(k)).collect()
            } else {
                days.clone()
            };
            let (svg, csv) = trafficctx::experiment::plot::plot_flows(&ds.series, grids, &days, *feature, &out.join("flows"))?;
            println!("wrote {} and {}", svg.display(), csv.display());
            m.add_artifact(svg);
            m.add_artifact(csv);
        }
        Command::Report { .. } => unreachable!("handled above"),
    }
    let path = m.write(out)?;
    info!("manifest {}", path.display());
    Ok(())
}

/// Concatenates the rows of several run reports, which must share a
/// designated grid.
fn report(c: &Common, inputs: &[PathBuf]) -> Result<(), Failure> {
    let cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let mut m = RunManifest::new("report", &cfg);
    let mut rows = Vec::new();
    let mut grid = None;
    for p in inputs {
        m.add_input(p)?;
        let r = EvalReport::read_json(p)?;
        if *grid.get_or_insert(r.designated_grid) != r.designated_grid {
            return Err(Error::InvalidInput(format!(
                "{} uses designated grid {}, expected {}",
                p.display(),
                r.designated_grid,
                grid.unwrap()
            ))
            .into());
        }
        rows.extend(r.rows);
    }
    let out = &c.out_dir;
    create_dir(out)?;
    write_text(out.join("merged.csv"), &rows_to_csv(&rows)?, &mut m)?;
    let md = rows_to_markdown(&rows, grid.unwrap_or(0));
    write_text(out.join("merged.md"), &md, &mut m)?;
    print!("{md}");
    m.write(out)?;
    Ok(())
}
