//! Trip records to hourly per-grid pickup/dropoff counts, grid adjacency and
//! chronological splits.

use std::path::Path;

use chrono::{DateTime, Duration, NaiveDate, NaiveDateTime, Utc};
use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{is_hour_aligned, FlowSeries, GraphSpec, GridGeometry};

/// Mean Earth radius (IUGG), meters.
const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Above this fraction of unparseable records the ingest report carries a warning.
const UNPARSEABLE_WARN_FRACTION: f64 = 0.01;

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

#[derive(Debug, Clone, PartialEq)]
pub struct TripRecord {
    pub started_at: DateTime<Utc>,
    pub ended_at: DateTime<Utc>,
    pub start_lat: f64,
    pub start_lng: f64,
    pub end_lat: f64,
    pub end_lng: f64,
}

impl TripRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.ended_at < self.started_at {
            return Err(format!("trip ends ({}) before it starts ({})", self.ended_at, self.started_at));
        }
        let coords = [self.start_lat, self.start_lng, self.end_lat, self.end_lng];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err("non-finite coordinate".into());
        }
        Ok(())
    }
}

/// A raw trip as read from input: either a record or the reason it could not be parsed.
pub type TripInput = std::result::Result<TripRecord, String>;

impl GridGeometry {
    /// Equirectangular projection to local meters (east, north) from the origin.
    pub fn to_local(&self, lat: f64, lng: f64) -> (f64, f64) {
        let x = (lng - self.origin_lng).to_radians() * self.origin_lat.to_radians().cos() * EARTH_RADIUS_M;
        let y = (lat - self.origin_lat).to_radians() * EARTH_RADIUS_M;
        (x, y)
    }

    /// Inverse of [`GridGeometry::to_local`].
    pub fn to_latlng(&self, x: f64, y: f64) -> (f64, f64) {
        let lat = self.origin_lat + (y / EARTH_RADIUS_M).to_degrees();
        let lng = self.origin_lng + (x / (EARTH_RADIUS_M * self.origin_lat.to_radians().cos())).to_degrees();
        (lat, lng)
    }

    /// Local-meter coordinates of a cell's center.
    pub fn cell_center(&self, index: usize) -> (f64, f64) {
        let (row, col) = (index / self.n_cols, index % self.n_cols);
        ((col as f64 + 0.5) * self.cell_size_m, (row as f64 + 0.5) * self.cell_size_m)
    }
}

/// Row-major cell index of a point, or `None` outside the grid. Cells are
/// half-open: `[edge, edge + cell_size)`.
pub fn assign_grid(lat: f64, lng: f64, grid: &GridGeometry) -> Option<usize> {
    if !lat.is_finite() || !lng.is_finite() {
        return None;
    }
    let (x, y) = grid.to_local(lat, lng);
    let col = (x / grid.cell_size_m).floor();
    let row = (y / grid.cell_size_m).floor();
    if col < 0.0 || row < 0.0 || col >= grid.n_cols as f64 || row >= grid.n_rows as f64 {
        return None;
    }
    Some(row as usize * grid.n_cols + col as usize)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjacencyScheme {
    /// Lateral neighbors only.
    #[default]
    Rook4,
    /// Lateral and diagonal neighbors.
    Queen8,
}

pub fn build_adjacency(grid: &GridGeometry, scheme: AdjacencyScheme) -> Array2<f64> {
    let (rows, cols) = (grid.n_rows as isize, grid.n_cols as isize);
    let n = grid.n_cells();
    let mut a = Array2::zeros((n, n));
    let offsets: &[(isize, isize)] = match scheme {
        AdjacencyScheme::Rook4 => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        AdjacencyScheme::Queen8 => &[(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
    };
    for r in 0..rows {
        for c in 0..cols {
            let i = (r * cols + c) as usize;
            for (dr, dc) in offsets {
                let (nr, nc) = (r + dr, c + dc);
                if nr >= 0 && nr < rows && nc >= 0 && nc < cols {
                    a[[i, (nr * cols + nc) as usize]] = 1.0;
                }
            }
        }
    }
    a
}

impl GraphSpec {
    pub fn from_geometry(geometry: GridGeometry, scheme: AdjacencyScheme) -> Result<Self> {
        geometry.validate()?;
        let a = build_adjacency(&geometry, scheme);
        GraphSpec::new(geometry, a)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    /// Records seen, parseable or not.
    pub total: usize,
    /// Records with at least one counted leg.
    pub kept: usize,
    /// Legs (pickup or dropoff) inside the period but outside the grid.
    pub out_of_bounds: usize,
    /// Legs whose timestamp falls outside the period.
    pub out_of_period: usize,
    pub unparseable: usize,
    pub pickups: usize,
    pub dropoffs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl IngestReport {
    fn merge(&mut self, o: &IngestReport) {
        self.total += o.total;
        self.kept += o.kept;
        self.out_of_bounds += o.out_of_bounds;
        self.out_of_period += o.out_of_period;
        self.unparseable += o.unparseable;
        self.pickups += o.pickups;
        self.dropoffs += o.dropoffs;
    }

    fn finish(&mut self) {
        if self.total > 0 && self.unparseable as f64 > UNPARSEABLE_WARN_FRACTION * self.total as f64 {
            let msg = format!(
                "{} of {} records ({:.2}%) could not be parsed",
                self.unparseable,
                self.total,
                100.0 * self.unparseable as f64 / self.total as f64
            );
            log::warn!("{msg}");
            self.warning = Some(msg);
        }
    }
}

/// Hour-aligned half-open interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Period {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl Period {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self> {
        if !is_hour_aligned(start) || !is_hour_aligned(end) || end <= start {
            return Err(Error::InvalidInput(format!(
                "period {start}..{end} must be non-empty and hour-aligned"
            )));
        }
        Ok(Period { start, end })
    }

    /// Whole UTC days from `first` through `last` inclusive.
    pub fn days(first: NaiveDate, last: NaiveDate) -> Result<Self> {
        Self::new(day_start(first), day_start(last) + Duration::days(1))
    }

    pub fn hours(&self) -> usize {
        ((self.end - self.start).num_seconds() / 3600) as usize
    }

    fn hour_of(&self, t: DateTime<Utc>) -> Option<usize> {
        if t < self.start || t >= self.end {
            return None;
        }
        Some(((t - self.start).num_seconds() / 3600) as usize)
    }
}

pub fn day_start(day: NaiveDate) -> DateTime<Utc> {
    day.and_hms_opt(0, 0, 0).expect("midnight").and_utc()
}

/// Partial count tensor; partials over disjoint shards merge by addition.
#[derive(Debug, Clone)]
struct FlowCounter {
    counts: Array3<f64>,
    report: IngestReport,
}

impl FlowCounter {
    fn new(n: usize, hours: usize) -> Self {
        FlowCounter {
            counts: Array3::zeros((n, 2, hours)),
            report: IngestReport::default(),
        }
    }

    fn add(&mut self, trip: &TripInput, grid: &GridGeometry, period: &Period) {
        self.report.total += 1;
        let trip = match trip.as_ref().map_err(Clone::clone).and_then(|t| t.validate().map(|_| t)) {
            Ok(t) => t,
            Err(_) => {
                self.report.unparseable += 1;
                return;
            }
        };
        let legs = [
            (0, trip.started_at, trip.start_lat, trip.start_lng),
            (1, trip.ended_at, trip.end_lat, trip.end_lng),
        ];
        let mut counted = false;
        for (feature, at, lat, lng) in legs {
            let Some(h) = period.hour_of(at) else {
                self.report.out_of_period += 1;
                continue;
            };
            let Some(g) = assign_grid(lat, lng, grid) else {
                self.report.out_of_bounds += 1;
                continue;
            };
            self.counts[[g, feature, h]] += 1.0;
            if feature == 0 {
                self.report.pickups += 1;
            } else {
                self.report.dropoffs += 1;
            }
            counted = true;
        }
        if counted {
            self.report.kept += 1;
        }
    }

    fn merge(mut self, other: FlowCounter) -> FlowCounter {
        self.counts += &other.counts;
        self.report.merge(&other.report);
        self
    }

    fn finish(mut self, period: &Period) -> Result<(FlowSeries, IngestReport)> {
        self.report.finish();
        let series = FlowSeries::new(self.counts, period.start, vec!["pickup".to_string(), "dropoff".to_string()])?;
        Ok((series, self.report))
    }
}

/// Counts pickups (feature 0) and dropoffs (feature 1) per grid cell and hour.
/// Each leg is counted independently: a pickup counts even when its dropoff
/// falls outside the grid or period.
pub fn aggregate_flows<I>(trips: I, grid: &GridGeometry, period: Period) -> Result<(FlowSeries, IngestReport)>
where
    I: IntoIterator<Item = TripInput>,
{
    grid.validate()?;
    let mut counter = FlowCounter::new(grid.n_cells(), period.hours());
    for trip in trips {
        counter.add(&trip, grid, &period);
    }
    counter.finish(&period)
}

/// Sharded variant of [`aggregate_flows`]; the result is identical.
pub fn aggregate_flows_parallel(trips: &[TripInput], grid: &GridGeometry, period: Period) -> Result<(FlowSeries, IngestReport)> {
    grid.validate()?;
    let (n, hours) = (grid.n_cells(), period.hours());
    let counter = trips
        .par_chunks(4096)
        .map(|chunk| {
            let mut c = FlowCounter::new(n, hours);
            for t in chunk {
                c.add(t, grid, &period);
            }
            c
        })
        .reduce(|| FlowCounter::new(n, hours), FlowCounter::merge);
    counter.finish(&period)
}

/// Parses `YYYY-MM-DD HH:MM:SS[.fff]` in a fixed-offset local time and
/// converts to UTC.
pub fn parse_local_timestamp(s: &str, utc_offset_minutes: i32) -> std::result::Result<DateTime<Utc>, String> {
    let naive = NaiveDateTime::parse_from_str(s.trim(), "%Y-%m-%d %H:%M:%S%.f").map_err(|e| format!("bad timestamp {s:?}: {e}"))?;
    Ok((naive - Duration::minutes(utc_offset_minutes as i64)).and_utc())
}

const TRIP_COLUMNS: [&str; 6] = ["started_at", "ended_at", "start_lat", "start_lng", "end_lat", "end_lng"];

/// Reads a trip CSV (header required; extra columns ignored).
pub fn read_trips_csv(path: &Path, utc_offset_minutes: i32) -> Result<Vec<TripInput>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let headers = reader.headers()?.clone();
    let mut idx = [0usize; 6];
    for (slot, name) in idx.iter_mut().zip(TRIP_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::InvalidInput(format!("{}: missing column {name}", path.display())))?;
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let parsed = match row {
            Ok(r) => parse_trip_row(&r, &idx, utc_offset_minutes),
            Err(e) => Err(e.to_string()),
        };
        out.push(parsed);
    }
    Ok(out)
}

fn parse_trip_row(r: &csv::StringRecord, idx: &[usize; 6], offset: i32) -> TripInput {
    let field = |i: usize| r.get(idx[i]).ok_or_else(|| format!("missing field {}", TRIP_COLUMNS[i]));
    let num = |i: usize| -> std::result::Result<f64, String> {
        let s = field(i)?;
        s.trim().parse::<f64>().map_err(|e| format!("bad {} {s:?}: {e}", TRIP_COLUMNS[i]))
    };
    Ok(TripRecord {
        started_at: parse_local_timestamp(field(0)?, offset)?,
        ended_at: parse_local_timestamp(field(1)?, offset)?,
        start_lat: num(2)?,
        start_lng: num(3)?,
        end_lat: num(4)?,
        end_lng: num(5)?,
    })
}

/// Inclusive range of whole days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DayRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        DayRange { start, end }
    }

    pub fn n_days(&self) -> i64 {
        (self.end - self.start).num_days() + 1
    }

    pub fn contains(&self, day: NaiveDate) -> bool {
        self.start <= day && day <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: DayRange,
    pub val: DayRange,
    pub test: DayRange,
}

impl SplitSpec {
    /// Consecutive train/val/test blocks starting on `first`.
    pub fn consecutive(first: NaiveDate, train_days: i64, val_days: i64, test_days: i64) -> Self {
        let block = |from: NaiveDate, len: i64| DayRange::new(from, from + Duration::days(len - 1));
        let train = block(first, train_days);
        let val = block(train.end + Duration::days(1), val_days);
        let test = block(val.end + Duration::days(1), test_days);
        SplitSpec { train, val, test }
    }

    /// 14 / 2 / 4 weeks from June 1, 2023.
    pub fn nyc_2023() -> Self {
        Self::consecutive(NaiveDate::from_ymd_opt(2023, 6, 1).expect("valid date"), 98, 14, 28)
    }

    pub fn validate(&self) -> Result<()> {
        for r in [self.train, self.val, self.test] {
            if r.end < r.start {
                return Err(Error::InvalidInput(format!("day range {} .. {} is reversed", r.start, r.end)));
            }
        }
        if self.train.end >= self.val.start || self.val.end >= self.test.start {
            return Err(Error::InvalidInput("split ranges must be chronological and non-overlapping".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSeries {
    pub train: FlowSeries,
    pub val: FlowSeries,
    pub test: FlowSeries,
}

/// Cuts `series` into the three day ranges of `split`.
pub fn split_series(series: &FlowSeries, split: &SplitSpec) -> Result<SplitSeries> {
    split.validate()?;
    let cut = |r: DayRange| -> Result<FlowSeries> {
        let from = day_start(r.start);
        let to = day_start(r.end) + Duration::days(1);
        if from < series.start_time() || to > series.end_time() {
            return Err(Error::OutOfRange(format!(
                "split range {} .. {} outside series {} .. {}",
                r.start,
                r.end,
                series.start_time(),
                series.end_time()
            )));
        }
        let h0 = ((from - series.start_time()).num_seconds() / 3600) as usize;
        let h1 = ((to - series.start_time()).num_seconds() / 3600) as usize;
        series.slice_hours(h0, h1)
    };
    Ok(SplitSeries {
        train: cut(split.train)?,
        val: cut(split.val)?,
        test: cut(split.test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn geom(rows: usize, cols: usize) -> GridGeometry {
        GridGeometry {
            n_rows: rows,
            n_cols: cols,
            ..GridGeometry::default()
        }
    }

    #[test]
    fn origin_is_cell_zero() {
        let g = GridGeometry::default();
        assert_eq!(assign_grid(g.origin_lat, g.origin_lng, &g), Some(0));
    }

    #[test]
    fn row_major_indexing() {
        let g = GridGeometry::default();
        let (lat, lng) = g.to_latlng(0.5 * g.cell_size_m, 1.5 * g.cell_size_m);
        assert_eq!(assign_grid(lat, lng, &g), Some(13));
    }

    #[test]
    fn just_north_of_grid_is_out() {
        let g = GridGeometry::default();
        let north = g.n_rows as f64 * g.cell_size_m;
        let (lat, lng) = g.to_latlng(10.0, north + 1.0);
        assert_eq!(assign_grid(lat, lng, &g), None);
        let (lat, lng) = g.to_latlng(10.0, north - 1.0);
        assert_eq!(assign_grid(lat, lng, &g), Some(12 * 13));
        assert_eq!(assign_grid(f64::NAN, g.origin_lng, &g), None);
    }

    #[test]
    fn adjacency_small_cases() {
        assert_eq!(build_adjacency(&geom(1, 1), AdjacencyScheme::Rook4), Array2::<f64>::zeros((1, 1)));
        let a = build_adjacency(&geom(2, 2), AdjacencyScheme::Rook4);
        for i in 0..4 {
            assert_eq!(a.row(i).sum(), 2.0);
        }
        assert_eq!(a.sum() / 2.0, 4.0);
        let q = build_adjacency(&geom(3, 3), AdjacencyScheme::Queen8);
        assert_eq!(q.row(4).sum(), 8.0);
        assert_eq!(q.row(0).sum(), 3.0);
    }

    proptest! {
        #[test]
        fn adjacency_symmetric_zero_diagonal(rows in 1usize..12, cols in 1usize..12, queen in any::<bool>()) {
            let scheme = if queen { AdjacencyScheme::Queen8 } else { AdjacencyScheme::Rook4 };
            let a = build_adjacency(&geom(rows, cols), scheme);
            prop_assert!(crate::flow::check_adjacency(&a).is_ok());
        }

        #[test]
        fn assign_grid_in_range(x in -2000.0f64..15000.0, y in -2000.0f64..15000.0) {
            let g = GridGeometry::default();
            let (lat, lng) = g.to_latlng(x, y);
            let a = assign_grid(lat, lng, &g);
            prop_assert_eq!(a, assign_grid(lat, lng, &g));
            if let Some(i) = a {
                prop_assert!(i < g.n_cells());
            }
        }
    }

    fn t(h: i64, m: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2023, 6, 1, 0, 0, 0).unwrap() + Duration::hours(h) + Duration::minutes(m)
    }

    fn trip_between(g: &GridGeometry, from: usize, to: usize, at: DateTime<Utc>) -> TripInput {
        let (sx, sy) = g.cell_center(from);
        let (ex, ey) = g.cell_center(to);
        let (start_lat, start_lng) = g.to_latlng(sx, sy);
        let (end_lat, end_lng) = g.to_latlng(ex, ey);
        Ok(TripRecord {
            started_at: at,
            ended_at: at + Duration::minutes(12),
            start_lat,
            start_lng,
            end_lat,
            end_lng,
        })
    }

    #[test]
    fn three_trip_count() {
        let g = GridGeometry::default();
        let trips = vec![
            trip_between(&g, 5, 5, t(0, 1)),
            trip_between(&g, 5, 5, t(0, 20)),
            trip_between(&g, 5, 6, t(0, 40)),
        ];
        let period = Period::new(t(0, 0), t(24, 0)).unwrap();
        let (s, report) = aggregate_flows(trips, &g, period).unwrap();
        let v = s.values();
        assert_eq!(v[[5, 0, 0]], 3.0);
        assert_eq!(v[[5, 1, 0]], 2.0);
        assert_eq!(v[[6, 1, 0]], 1.0);
        assert_eq!(v.sum(), 6.0);
        assert_eq!(report.kept, 3);
    }

    #[test]
    fn empty_input_is_all_zero() {
        let g = GridGeometry::default();
        let (s, report) = aggregate_flows(Vec::new(), &g, Period::new(t(0, 0), t(5, 0)).unwrap()).unwrap();
        assert_eq!(s.values().dim(), (169, 2, 5));
        assert_eq!(s.values().sum(), 0.0);
        assert_eq!(report.total, 0);
    }

    #[test]
    fn legs_counted_independently() {
        let g = GridGeometry::default();
        let mut trip = trip_between(&g, 0, 1, t(2, 50)).unwrap();
        trip.end_lat += 1.0; // far north
        let late = trip_between(&g, 3, 3, t(4, 55)).unwrap(); // ends in hour 5
        let period = Period::new(t(0, 0), t(5, 0)).unwrap();
        let inputs = vec![Ok(trip), Ok(late), Err("garbage".to_string())];
        let (s, r) = aggregate_flows(inputs, &g, period).unwrap();
        assert_eq!(s.values()[[0, 0, 2]], 1.0);
        assert_eq!(s.values()[[3, 0, 4]], 1.0);
        assert_eq!((r.pickups, r.dropoffs), (2, 0));
        assert_eq!((r.out_of_bounds, r.out_of_period, r.unparseable), (1, 1, 1));
        assert!(r.warning.is_some());
    }

    #[test]
    fn reversed_trip_is_rejected() {
        let g = GridGeometry::default();
        let mut trip = trip_between(&g, 0, 1, t(1, 0)).unwrap();
        trip.ended_at = t(0, 0);
        let (_, r) = aggregate_flows(vec![Ok(trip)], &g, Period::new(t(0, 0), t(5, 0)).unwrap()).unwrap();
        assert_eq!(r.unparseable, 1);
    }

    #[test]
    fn local_time_converted_to_utc() {
        let t = parse_local_timestamp("2023-06-01 20:15:00", -240).unwrap();
        assert_eq!(t, Utc.with_ymd_and_hms(2023, 6, 2, 0, 15, 0).unwrap());
        assert!(parse_local_timestamp("2023-06-01T20:15", 0).is_err());
        assert!(parse_local_timestamp("2023-06-01 20:15:00.123", 0).is_ok());
    }

    #[test]
    fn csv_reader_tolerates_bad_rows_and_extra_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trips.csv");
        std::fs::write(
            &path,
            "ride_id,started_at,ended_at,start_lat,start_lng,end_lat,end_lng\n\
             a,2023-06-01 00:10:00,2023-06-01 00:20:00,40.64,-74.03,40.65,-74.02\n\
             b,not a time,2023-06-01 00:20:00,40.64,-74.03,40.65,-74.02\n\
             c,2023-06-01 00:10:00,2023-06-01 00:20:00,,-74.03,40.65,-74.02\n",
        )
        .unwrap();
        let rows = read_trips_csv(&path, 0).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[0].is_ok());
        assert!(rows[1].is_err() && rows[2].is_err());
        assert!(matches!(read_trips_csv(&dir.path().join("nope.csv"), 0), Err(Error::Io { .. })));
    }

    #[test]
    fn split_lengths() {
        let start = NaiveDate::from_ymd_opt(2023, 6, 1).unwrap();
        let series = FlowSeries::zeros(2, 7 * 24, day_start(start)).unwrap();
        let split = SplitSpec::consecutive(start, 5, 1, 1);
        let parts = split_series(&series, &split).unwrap();
        assert_eq!((parts.train.n_hours(), parts.val.n_hours(), parts.test.n_hours()), (120, 24, 24));
        assert_eq!(parts.val.start_time(), day_start(start) + Duration::days(5));
    }

    #[test]
    fn default_split_is_fourteen_two_four_weeks() {
        let s = SplitSpec::nyc_2023();
        assert_eq!((s.train.n_days(), s.val.n_days(), s.test.n_days()), (98, 14, 28));
        assert_eq!(s.train.start, NaiveDate::from_ymd_opt(2023, 6, 1).unwrap());
        assert!(s.validate().is_ok());
    }

    #[test]
    fn split_errors() {
        let start = NaiveDate::from_ymd_opt(2023, 6, 1).unwrap();
        let series = FlowSeries::zeros(1, 7 * 24, day_start(start)).unwrap();
        let mut overlapping = SplitSpec::consecutive(start, 5, 1, 1);
        overlapping.val.start = overlapping.train.end;
        assert!(split_series(&series, &overlapping).is_err());
        let too_long = SplitSpec::consecutive(start, 5, 1, 2);
        assert!(matches!(split_series(&series, &too_long), Err(Error::OutOfRange(_))));
    }
}
