//! Planted-event synthetic benchmark: a weekly-periodic flow series with
//! multiplicative surges at one grid on scheduled days, plus the matching
//! weather and event context streams.

use chrono::{Datelike, Duration, NaiveDate, NaiveTime};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::context::{DayContext, Event, Weather};
use crate::error::{Error, Result};
use crate::flow::{FlowSeries, GraphSpec, GridGeometry};
use crate::ingestion::{day_start, AdjacencyScheme};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthEvent {
    /// Day offset from `start_date`.
    pub day: usize,
    pub grid: usize,
    pub multiplier: f64,
    #[serde(default = "default_event_name")]
    pub name: String,
    #[serde(default = "default_venue")]
    pub venue: String,
    #[serde(default = "default_event_start")]
    pub start_hour: u32,
    #[serde(default = "default_event_end")]
    pub end_hour: u32,
}

fn default_event_name() -> String {
    "a basketball game".into()
}

fn default_venue() -> String {
    "The downtown arena".into()
}

fn default_event_start() -> u32 {
    19
}

fn default_event_end() -> u32 {
    22
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_rows: usize,
    pub n_cols: usize,
    pub n_days: usize,
    #[serde(default = "default_start")]
    pub start_date: NaiveDate,
    /// Mean pickups per hour of day, 24 values.
    #[serde(default = "default_profile")]
    pub base_profile: Vec<f64>,
    /// Multipliers Monday through Sunday.
    #[serde(default = "default_week")]
    pub week_factors: Vec<f64>,
    #[serde(default)]
    pub events: Vec<SynthEvent>,
    /// Noise standard deviation relative to the noiseless value.
    #[serde(default = "default_noise")]
    pub noise_level: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2023, 6, 1).expect("valid date")
}

fn default_noise() -> f64 {
    0.05
}

/// Commuter-shaped diurnal curve with morning and evening peaks.
pub fn default_profile() -> Vec<f64> {
    (0..24)
        .map(|h| {
            let h = h as f64;
            let bump = |c: f64, w: f64, a: f64| a * (-(h - c) * (h - c) / (2.0 * w * w)).exp();
            2.0 + bump(8.0, 1.5, 18.0) + bump(13.0, 2.5, 8.0) + bump(18.0, 2.0, 22.0)
        })
        .collect()
}

pub fn default_week() -> Vec<f64> {
    vec![1.0, 1.05, 1.05, 1.1, 1.15, 0.8, 0.7]
}

/// Generated dataset. `grid_scales` are the per-grid volume factors.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub series: FlowSeries,
    pub graph: GraphSpec,
    pub days: Vec<DayContext>,
    pub events: Vec<Event>,
    pub grid_scales: Vec<f64>,
}

const CONDITIONS: [&str; 4] = ["sunny", "cloudy", "partly cloudy", "light rain"];

impl SynthSpec {
    /// Spec used by the directional benchmark: 4x4 grid, 60 days, 12 event
    /// days at grid 5 (8 inside the first 42 days, 4 inside the last 12).
    pub fn benchmark(seed: u64) -> Self {
        let days = [3, 8, 12, 17, 22, 27, 33, 38, 49, 52, 55, 58];
        let events = days
            .iter()
            .enumerate()
            .map(|(i, &day)| SynthEvent {
                day,
                grid: 5,
                multiplier: 2.5,
                name: if i % 2 == 0 {
                    "a basketball game".into()
                } else {
                    "a concert".into()
                },
                venue: default_venue(),
                start_hour: default_event_start(),
                end_hour: default_event_end(),
            })
            .collect();
        SynthSpec {
            n_rows: 4,
            n_cols: 4,
            n_days: 60,
            start_date: default_start(),
            base_profile: default_profile(),
            week_factors: default_week(),
            events,
            noise_level: 0.05,
            seed,
        }
    }

    pub fn n_grids(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rows == 0 || self.n_cols == 0 || self.n_days == 0 {
            return Err(Error::InvalidInput("synthetic grid and day count must be positive".into()));
        }
        if self.base_profile.len() != 24 || self.base_profile.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("base profile needs 24 finite non-negative values".into()));
        }
        if self.week_factors.len() != 7 || self.week_factors.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("week factors need 7 finite non-negative values".into()));
        }
        if !self.noise_level.is_finite() || self.noise_level < 0.0 {
            return Err(Error::InvalidInput(format!("noise level {}", self.noise_level)));
        }
        for e in &self.events {
            if !(e.multiplier > 0.0 && e.multiplier.is_finite()) {
                return Err(Error::InvalidInput(format!("event multiplier must be > 0, got {}", e.multiplier)));
            }
            if e.day >= self.n_days || e.grid >= self.n_grids() {
                return Err(Error::OutOfRange(format!("event at day {} grid {}", e.day, e.grid)));
            }
            if e.start_hour >= e.end_hour || e.end_hour > 23 {
                return Err(Error::InvalidInput(format!("event hours {}..{}", e.start_hour, e.end_hour)));
            }
        }
        Ok(())
    }

    /// Product of the multipliers of every event at `(grid, day)`.
    pub fn event_multiplier(&self, grid: usize, day: usize) -> f64 {
        self.events
            .iter()
            .filter(|e| e.grid == grid && e.day == day)
            .map(|e| e.multiplier)
            .product()
    }

    pub fn date(&self, day: usize) -> NaiveDate {
        self.start_date + Duration::days(day as i64)
    }
}

/// `flow[g, f, h] = profile(hour) * week(weekday) * event(g, day) * scale(g)`
/// plus Gaussian noise with std `noise_level` times that value, clipped at 0.
/// Drop-offs follow the profile one hour later.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_grids();
    let grid_scales: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let hours = spec.n_days * 24;
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut values = Array3::zeros((n, 2, hours));
    for day in 0..spec.n_days {
        let week = spec.week_factors[spec.date(day).weekday().num_days_from_monday() as usize];
        for g in 0..n {
            let level = week * spec.event_multiplier(g, day) * grid_scales[g];
            for hod in 0..24 {
                let h = day * 24 + hod;
                for f in 0..2 {
                    let clean = spec.base_profile[(hod + 24 - f) % 24] * level;
                    let eps: f64 = if spec.noise_level > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    values[[g, f, h]] = (clean * (1.0 + spec.noise_level * eps)).max(0.0);
                }
            }
        }
    }
    let series = FlowSeries::new(values, day_start(spec.start_date), FlowSeries::default_feature_names())?;
    let geometry = GridGeometry {
        n_rows: spec.n_rows,
        n_cols: spec.n_cols,
        ..GridGeometry::default()
    };
    let graph = GraphSpec::from_geometry(geometry, AdjacencyScheme::Rook4)?;

    let days = (0..spec.n_days)
        .map(|day| {
            let cond = CONDITIONS[rng.random_range(0..CONDITIONS.len())];
            let precip = if cond == "light rain" {
                (rng.random_range(1.0..8.0_f64) * 10.0).round() / 10.0
            } else {
                0.0
            };
            let low = rng.random_range(16..24) as f64;
            DayContext {
                date: spec.date(day),
                weather: Weather {
                    precipitation_mm: precip,
                    aqi: rng.random_range(20..80) as f64,
                    temp_min_c: low,
                    temp_max_c: low + rng.random_range(4..10) as f64,
                    condition: cond.to_string(),
                },
                holiday: None,
            }
        })
        .collect();

    let events = spec
        .events
        .iter()
        .map(|e| {
            let date = spec.date(e.day);
            let at = |h: u32| date.and_time(NaiveTime::from_hms_opt(h, 0, 0).expect("hour < 24"));
            Event {
                grid: e.grid,
                name: e.name.clone(),
                venue: e.venue.clone(),
                start_time: at(e.start_hour),
                end_time: at(e.end_hour),
            }
        })
        .collect();

    Ok(SynthData {
        series,
        graph,
        days,
        events,
        grid_scales,
    })
}
