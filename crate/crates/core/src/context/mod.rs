//! Text context: city-level descriptions (weather, calendar) and node-level
//! descriptions (venue events), plus the embedding backends that turn them
//! into vectors.

mod embed;

use std::fs;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Timelike, Utc};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};

pub use embed::{
    cache_key, read_cache_entry, CacheEntry, CacheStats, Embedder, EmbeddingBackend, OfflineBackend, RemoteBackend, RemoteConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextScope {
    City,
    Node,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRecord {
    pub scope: ContextScope,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_grid: Option<usize>,
    pub valid_from: DateTime<Utc>,
    pub valid_to: DateTime<Utc>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl ContextRecord {
    pub fn city(valid_from: DateTime<Utc>, valid_to: DateTime<Utc>, text: String) -> Result<Self> {
        Self::build(ContextScope::City, None, valid_from, valid_to, text)
    }

    pub fn node(target_grid: usize, n_grids: usize, valid_from: DateTime<Utc>, valid_to: DateTime<Utc>, text: String) -> Result<Self> {
        if target_grid >= n_grids {
            return Err(Error::OutOfRange(format!("target grid {target_grid} outside {n_grids} grids")));
        }
        Self::build(ContextScope::Node, Some(target_grid), valid_from, valid_to, text)
    }

    fn build(
        scope: ContextScope,
        target_grid: Option<usize>,
        valid_from: DateTime<Utc>,
        valid_to: DateTime<Utc>,
        text: String,
    ) -> Result<Self> {
        if valid_from >= valid_to {
            return Err(Error::InvalidInput(format!("context validity {valid_from} .. {valid_to} is empty")));
        }
        Ok(ContextRecord {
            scope,
            target_grid,
            valid_from,
            valid_to,
            text,
            embedding: None,
        })
    }

    pub fn covers(&self, t: DateTime<Utc>) -> bool {
        self.valid_from <= t && t < self.valid_to
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weather {
    pub precipitation_mm: f64,
    pub aqi: f64,
    pub temp_min_c: f64,
    pub temp_max_c: f64,
    pub condition: String,
}

impl Weather {
    fn validate(&self) -> Result<()> {
        let nums = [self.precipitation_mm, self.aqi, self.temp_min_c, self.temp_max_c];
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite weather field in {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Calendar {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holiday: Option<String>,
}

/// One line of the daily weather/calendar JSONL input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayContext {
    pub date: NaiveDate,
    #[serde(flatten)]
    pub weather: Weather,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holiday: Option<String>,
}

/// One line of the venue-event JSONL input. Times are local wall-clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub grid: usize,
    pub name: String,
    pub venue: String,
    #[serde(with = "wall_clock")]
    pub start_time: NaiveDateTime,
    #[serde(with = "wall_clock")]
    pub end_time: NaiveDateTime,
}

mod wall_clock {
    use chrono::NaiveDateTime;
    use serde::{Deserialize, Deserializer, Serializer};

    const FMT: &str = "%Y-%m-%d %H:%M:%S";

    pub fn serialize<S: Serializer>(t: &NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.format(FMT).to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
        let s = String::deserialize(d)?;
        NaiveDateTime::parse_from_str(&s, FMT).map_err(serde::de::Error::custom)
    }
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.1}")
    }
}

/// Daily city-level description, one sentence per fact. `weather` may be
/// absent when no weather feed is configured.
pub fn compose_city_text(date: NaiveDate, weather: Option<&Weather>, calendar: &Calendar) -> Result<String> {
    let mut s = format!("Today is {}.", date.format("%B %-d, %Y"));
    if let Some(w) = weather {
        w.validate()?;
        if w.precipitation_mm == 0.0 {
            s.push_str(" There is zero precipitation.");
        } else {
            s.push_str(&format!(" There is {} mm of precipitation.", fmt_num(w.precipitation_mm)));
        }
        if w.aqi == 0.0 {
            s.push_str(" The air quality index is zero.");
        } else {
            s.push_str(&format!(" The air quality index is {}.", fmt_num(w.aqi)));
        }
        s.push_str(&format!(
            " The temperature ranges from {} to {} degrees Celsius.",
            fmt_num(w.temp_min_c),
            fmt_num(w.temp_max_c)
        ));
        if !w.condition.trim().is_empty() {
            s.push_str(&format!(" The weather is {}.", w.condition.trim()));
        }
    }
    s.push_str(&format!(" Today is {}.", date.format("%A")));
    if let Some(h) = calendar.holiday.as_deref().filter(|h| !h.trim().is_empty()) {
        s.push_str(&format!(" Today is {}, a public holiday.", h.trim()));
    }
    Ok(s)
}

/// Per-window suffix naming the predicted hour and weekday.
pub fn prediction_hour_suffix(anchor_local: NaiveDateTime) -> String {
    format!(
        " The prediction is for {:02}:00 on a {}.",
        anchor_local.hour(),
        anchor_local.format("%A")
    )
}

pub const NO_EVENT_SUFFIX: &str = "has no scheduled events today.";

/// Node-level description of a grid's events, sorted by start time.
pub fn compose_node_text(grid: usize, events: &[Event]) -> String {
    if events.is_empty() {
        return format!("Grid {grid} {NO_EVENT_SUFFIX}");
    }
    let mut sorted: Vec<&Event> = events.iter().collect();
    sorted.sort_by_key(|e| e.start_time);
    let mut s = format!(
        "Grid {grid} has {} scheduled event{} today.",
        sorted.len(),
        if sorted.len() == 1 { "" } else { "s" }
    );
    for e in sorted {
        s.push_str(&format!(
            " {} hosts {} from {} to {}.",
            e.venue.trim(),
            e.name.trim(),
            e.start_time.format("%H:%M"),
            e.end_time.format("%H:%M")
        ));
    }
    s
}

/// Reads a JSONL file, one object per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::InvalidInput(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn may13() -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 5, 13).unwrap()
    }

    fn mild() -> Weather {
        Weather {
            precipitation_mm: 0.0,
            aqi: 0.0,
            temp_min_c: 21.0,
            temp_max_c: 30.0,
            condition: "clear".into(),
        }
    }

    #[test]
    fn city_text_carries_every_fact() {
        // A Sunday, May 13.
        let day = NaiveDate::from_ymd_opt(2018, 5, 13).unwrap();
        let text = compose_city_text(day, Some(&mild()), &Calendar::default()).unwrap();
        for needle in ["May 13", "zero precipitation", "21", "30", "Sunday"] {
            assert!(text.contains(needle), "{needle:?} missing from {text:?}");
        }
        assert!(!text.contains("holiday"));
    }

    #[test]
    fn city_text_is_deterministic() {
        let a = compose_city_text(may13(), Some(&mild()), &Calendar::default()).unwrap();
        let b = compose_city_text(may13(), Some(&mild()), &Calendar::default()).unwrap();
        assert_eq!(a.as_bytes(), b.as_bytes());
    }

    #[test]
    fn holiday_named() {
        let day = NaiveDate::from_ymd_opt(2023, 7, 4).unwrap();
        let cal = Calendar {
            holiday: Some("Independence Day".into()),
        };
        let text = compose_city_text(day, Some(&mild()), &cal).unwrap();
        assert!(text.contains("Independence Day"));
        assert!(text.contains("Tuesday"));
    }

    #[test]
    fn nonzero_weather_and_missing_feed() {
        let w = Weather {
            precipitation_mm: 3.25,
            aqi: 41.0,
            temp_min_c: -2.5,
            temp_max_c: 4.0,
            condition: "rainy".into(),
        };
        let text = compose_city_text(may13(), Some(&w), &Calendar::default()).unwrap();
        assert!(text.contains("3.2 mm") || text.contains("3.3 mm"));
        assert!(text.contains("index is 41."));
        assert!(text.contains("from -2.5 to 4 degrees"));
        let bare = compose_city_text(may13(), None, &Calendar::default()).unwrap();
        assert_eq!(bare, "Today is May 13, 2024. Today is Monday.");
        let bad = Weather { aqi: f64::NAN, ..w };
        assert!(compose_city_text(may13(), Some(&bad), &Calendar::default()).is_err());
    }

    fn game(h0: u32, h1: u32, name: &str) -> Event {
        let d = NaiveDate::from_ymd_opt(2023, 6, 3).unwrap();
        Event {
            grid: 84,
            name: name.into(),
            venue: "Barclays Center".into(),
            start_time: d.and_hms_opt(h0, 0, 0).unwrap(),
            end_time: d.and_hms_opt(h1, 0, 0).unwrap(),
        }
    }

    #[test]
    fn node_text_single_event() {
        let text = compose_node_text(84, &[game(19, 22, "an NBA game")]);
        for needle in ["Barclays Center", "an NBA game", "19:00", "22:00"] {
            assert!(text.contains(needle));
        }
    }

    #[test]
    fn node_text_empty_and_ordered() {
        assert_eq!(compose_node_text(84, &[]), "Grid 84 has no scheduled events today.");
        let text = compose_node_text(84, &[game(20, 23, "a concert"), game(12, 14, "a matinee")]);
        let (a, b) = (text.find("a matinee").unwrap(), text.find("a concert").unwrap());
        assert!(a < b);
    }

    #[test]
    fn record_invariants() {
        let t = may13().and_hms_opt(0, 0, 0).unwrap().and_utc();
        let later = t + chrono::Duration::days(1);
        assert!(ContextRecord::city(later, t, "x".into()).is_err());
        assert!(ContextRecord::node(9, 9, t, later, "x".into()).is_err());
        let r = ContextRecord::node(3, 9, t, later, "x".into()).unwrap();
        assert!(r.covers(t) && !r.covers(later));
        assert_eq!(r.target_grid, Some(3));
    }

    #[test]
    fn event_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("events.jsonl");
        let events = vec![game(19, 22, "an NBA game")];
        write_jsonl(&p, &events).unwrap();
        let line = fs::read_to_string(&p).unwrap();
        assert!(line.contains("\"start_time\":\"2023-06-03 19:00:00\""));
        let back: Vec<Event> = read_jsonl(&p).unwrap();
        assert_eq!(back, events);
    }

    #[test]
    fn day_context_jsonl_schema() {
        let line = r#"{"date":"2023-07-04","precipitation_mm":0,"aqi":35,"temp_min_c":21,"temp_max_c":30,"condition":"sunny","holiday":"Independence Day"}"#;
        let d: DayContext = serde_json::from_str(line).unwrap();
        assert_eq!(d.holiday.as_deref(), Some("Independence Day"));
        assert_eq!(d.weather.aqi, 35.0);
    }
}
