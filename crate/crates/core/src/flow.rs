//! Hourly flow tensors, the grid graph they live on, and sliding-window samples.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Duration, Timelike, Utc};
use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VALUES_FILE: &str = "values.bin";
pub const META_FILE: &str = "meta.json";

/// Per-grid, per-feature, per-hour counts. Column `k` is the hour starting at
/// `start_time + k` hours.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSeries {
    values: Array3<f64>,
    start_time: DateTime<Utc>,
    feature_names: Vec<String>,
}

impl FlowSeries {
    pub fn new(values: Array3<f64>, start_time: DateTime<Utc>, feature_names: Vec<String>) -> Result<Self> {
        let (n, d, t) = values.dim();
        if n == 0 || d == 0 || t == 0 {
            return Err(Error::InvalidInput(format!("flow series needs n, d, T >= 1, got ({n}, {d}, {t})")));
        }
        if feature_names.len() != d {
            return Err(Error::shape(d, feature_names.len()));
        }
        if !is_hour_aligned(start_time) {
            return Err(Error::InvalidInput(format!("start_time {start_time} is not on an hour boundary")));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "flow values must be finite and non-negative, found {bad}"
            )));
        }
        Ok(FlowSeries {
            values,
            start_time,
            feature_names,
        })
    }

    /// Zero-filled series with the default pickup/dropoff features.
    pub fn zeros(n_grids: usize, hours: usize, start_time: DateTime<Utc>) -> Result<Self> {
        Self::new(Array3::zeros((n_grids, 2, hours)), start_time, Self::default_feature_names())
    }

    pub fn default_feature_names() -> Vec<String> {
        vec!["pickup".to_string(), "dropoff".to_string()]
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn start_time(&self) -> DateTime<Utc> {
        self.start_time
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_grids(&self) -> usize {
        self.values.dim().0
    }

    pub fn n_features(&self) -> usize {
        self.values.dim().1
    }

    pub fn n_hours(&self) -> usize {
        self.values.dim().2
    }

    pub fn time_at(&self, hour: usize) -> DateTime<Utc> {
        self.start_time + Duration::hours(hour as i64)
    }

    pub fn end_time(&self) -> DateTime<Utc> {
        self.time_at(self.n_hours())
    }

    /// Index of the hour containing `t`, if inside the series.
    pub fn hour_index(&self, t: DateTime<Utc>) -> Option<usize> {
        let secs = (t - self.start_time).num_seconds();
        if secs < 0 {
            return None;
        }
        let h = (secs / 3600) as usize;
        (h < self.n_hours()).then_some(h)
    }

    /// Hours `[from, to)` as a new series.
    pub fn slice_hours(&self, from: usize, to: usize) -> Result<FlowSeries> {
        if from >= to || to > self.n_hours() {
            return Err(Error::OutOfRange(format!(
                "hour range {from}..{to} outside series of {} hours",
                self.n_hours()
            )));
        }
        Ok(FlowSeries {
            values: self.values.slice(s![.., .., from..to]).to_owned(),
            start_time: self.time_at(from),
            feature_names: self.feature_names.clone(),
        })
    }

    /// Writes the directory form: a little-endian f64 tensor plus a JSON sidecar.
    pub fn write_dir(&self, dir: &Path, grid: Option<&GraphSpec>) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(VALUES_FILE);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for v in self.values.iter() {
            w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let (n, d, t) = self.values.dim();
        let meta = SeriesMeta {
            start_time: self.start_time,
            feature_names: self.feature_names.clone(),
            n,
            d,
            t,
            grid: grid.map(GridMeta::from),
        };
        let path = dir.join(META_FILE);
        let text = serde_json::to_string_pretty(&meta)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn read_dir(dir: &Path) -> Result<(FlowSeries, Option<GraphSpec>)> {
        let path = dir.join(META_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: SeriesMeta = serde_json::from_str(&text)?;
        let path = dir.join(VALUES_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let expected = meta.n * meta.d * meta.t;
        if bytes.len() != expected * 8 {
            return Err(Error::shape(expected * 8, bytes.len()));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let values = Array3::from_shape_vec((meta.n, meta.d, meta.t), data).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let series = FlowSeries::new(values, meta.start_time, meta.feature_names)?;
        let grid = meta.grid.map(GraphSpec::try_from).transpose()?;
        if let Some(g) = &grid {
            if g.n_nodes() != series.n_grids() {
                return Err(Error::shape(series.n_grids(), g.n_nodes()));
            }
        }
        Ok((series, grid))
    }
}

pub fn is_hour_aligned(t: DateTime<Utc>) -> bool {
    t.minute() == 0 && t.second() == 0 && t.nanosecond() == 0
}

#[derive(Serialize, Deserialize)]
struct SeriesMeta {
    start_time: DateTime<Utc>,
    feature_names: Vec<String>,
    n: usize,
    d: usize,
    #[serde(rename = "T")]
    t: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid: Option<GridMeta>,
}

#[derive(Serialize, Deserialize)]
struct GridMeta {
    geometry: GridGeometry,
    /// Undirected edges `(i, j)` with `i < j`.
    edges: Vec<(usize, usize)>,
}

impl From<&GraphSpec> for GridMeta {
    fn from(g: &GraphSpec) -> Self {
        GridMeta {
            geometry: g.geometry.clone(),
            edges: g.edges(),
        }
    }
}

impl TryFrom<GridMeta> for GraphSpec {
    type Error = Error;

    fn try_from(m: GridMeta) -> Result<Self> {
        let n = m.geometry.n_cells();
        let mut a = Array2::zeros((n, n));
        for (i, j) in m.edges {
            if i >= n || j >= n {
                return Err(Error::OutOfRange(format!("edge ({i}, {j}) outside {n} nodes")));
            }
            a[[i, j]] = 1.0;
            a[[j, i]] = 1.0;
        }
        GraphSpec::new(m.geometry, a)
    }
}

/// Regular lat/lng grid. Row 0 is the southern edge, column 0 the western one;
/// cells are indexed row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub origin_lat: f64,
    pub origin_lng: f64,
    pub cell_size_m: f64,
    pub n_rows: usize,
    pub n_cols: usize,
}

impl GridGeometry {
    pub fn n_cells(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(Error::InvalidInput("grid needs at least one row and column".into()));
        }
        if !(self.cell_size_m.is_finite() && self.cell_size_m > 0.0) {
            return Err(Error::InvalidInput(format!("cell size must be positive, got {}", self.cell_size_m)));
        }
        if !self.origin_lat.is_finite() || !self.origin_lng.is_finite() {
            return Err(Error::InvalidInput("grid origin must be finite".into()));
        }
        Ok(())
    }
}

impl Default for GridGeometry {
    /// 13 x 13 cells of 1 km over central New York City.
    fn default() -> Self {
        GridGeometry {
            origin_lat: 40.6306,
            origin_lng: -74.0426,
            cell_size_m: 1000.0,
            n_rows: 13,
            n_cols: 13,
        }
    }
}

/// Grid geometry plus a symmetric 0/1 adjacency with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSpec {
    pub geometry: GridGeometry,
    adjacency: Array2<f64>,
}

impl GraphSpec {
    pub fn new(geometry: GridGeometry, adjacency: Array2<f64>) -> Result<Self> {
        geometry.validate()?;
        let n = geometry.n_cells();
        if adjacency.dim() != (n, n) {
            return Err(Error::shape((n, n), adjacency.dim()));
        }
        check_adjacency(&adjacency)?;
        Ok(GraphSpec { geometry, adjacency })
    }

    pub fn adjacency(&self) -> &Array2<f64> {
        &self.adjacency
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n_nodes();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.adjacency[[i, j]] != 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Square, symmetric, entries in {0, 1}, zero diagonal.
pub fn check_adjacency(a: &Array2<f64>) -> Result<()> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::shape((r, r), (r, c)));
    }
    for i in 0..r {
        if a[[i, i]] != 0.0 {
            return Err(Error::InvalidInput(format!("adjacency has self-loop at {i}")));
        }
        for j in 0..r {
            let v = a[[i, j]];
            if v != 0.0 && v != 1.0 {
                return Err(Error::InvalidInput(format!("adjacency entry ({i}, {j}) = {v}")));
            }
            if v != a[[j, i]] {
                return Err(Error::InvalidInput(format!("adjacency asymmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    /// History length in hours.
    pub t1: usize,
    /// Horizon length in hours.
    pub t2: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_stride() -> usize {
    1
}

impl WindowSpec {
    pub fn new(t1: usize, t2: usize, stride: usize) -> Result<Self> {
        let spec = WindowSpec { t1, t2, stride };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t1 == 0 || self.t2 == 0 || self.stride == 0 {
            return Err(Error::InvalidInput(format!("window lengths and stride must be >= 1, got {self:?}")));
        }
        Ok(())
    }
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec { t1: 6, t2: 1, stride: 1 }
    }
}

/// One history/target pair. `y` starts right where `x` ends.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Array3<f64>,
    pub y: Array3<f64>,
    /// First predicted hour.
    pub anchor_time: DateTime<Utc>,
}

/// Chronological windows over `series`: `floor((T - t1 - t2) / stride) + 1` samples.
pub fn make_windows(series: &FlowSeries, spec: WindowSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let t = series.n_hours();
    let span = spec.t1 + spec.t2;
    if t < span {
        return Err(Error::InsufficientHistory {
            needed: span,
            available: t,
        });
    }
    let v = series.values();
    Ok((0..=t - span)
        .step_by(spec.stride)
        .map(|k| Sample {
            x: v.slice(s![.., .., k..k + spec.t1]).to_owned(),
            y: v.slice(s![.., .., k + spec.t1..k + span]).to_owned(),
            anchor_time: series.time_at(k + spec.t1),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use ndarray::Axis;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2023, 6, 1, 0, 0, 0).unwrap()
    }

    fn ramp(t: usize) -> FlowSeries {
        let values = Array3::from_shape_fn((1, 1, t), |(_, _, k)| k as f64);
        FlowSeries::new(values, t0(), vec!["pickup".into()]).unwrap()
    }

    #[test]
    fn single_window_at_boundary() {
        let w = make_windows(&ramp(7), WindowSpec::default()).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].y[[0, 0, 0]], 6.0);
        assert_eq!(w[0].anchor_time, t0() + Duration::hours(6));
    }

    #[test]
    fn four_windows_enumerated() {
        let w = make_windows(&ramp(10), WindowSpec::default()).unwrap();
        assert_eq!(w.len(), 4);
        for (i, s) in w.iter().enumerate() {
            assert_eq!(s.anchor_time, t0() + Duration::hours(6 + i as i64));
            let xs: Vec<f64> = s.x.iter().copied().collect();
            let expect: Vec<f64> = (i..i + 6).map(|k| k as f64).collect();
            assert_eq!(xs, expect);
            assert_eq!(s.y[[0, 0, 0]], (i + 6) as f64);
        }
    }

    #[test]
    fn too_short_is_insufficient_history() {
        let err = make_windows(&ramp(6), WindowSpec::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientHistory { needed: 7, available: 6 }));
        assert!(err.to_string().contains("insufficient history"));
    }

    #[test]
    fn stride_count() {
        let spec = WindowSpec::new(3, 2, 4).unwrap();
        // floor((20 - 5) / 4) + 1
        assert_eq!(make_windows(&ramp(20), spec).unwrap().len(), 4);
    }

    #[test]
    fn window_reconstructs_series_slice() {
        let values = Array3::from_shape_fn((3, 2, 30), |(g, f, k)| (g * 100 + f * 10 + k) as f64);
        let series = FlowSeries::new(values, t0(), vec!["a".into(), "b".into()]).unwrap();
        let spec = WindowSpec::new(5, 3, 2).unwrap();
        for (i, s) in make_windows(&series, spec).unwrap().iter().enumerate() {
            let k = i * 2;
            let joined = ndarray::concatenate(Axis(2), &[s.x.view(), s.y.view()]).unwrap();
            assert_eq!(joined, series.values().slice(s![.., .., k..k + 8]));
        }
    }

    #[test]
    fn rejects_negative_and_unaligned() {
        let mut v = Array3::zeros((1, 1, 2));
        v[[0, 0, 1]] = -1.0;
        assert!(FlowSeries::new(v, t0(), vec!["a".into()]).is_err());
        let late = t0() + Duration::minutes(30);
        assert!(FlowSeries::new(Array3::zeros((1, 1, 2)), late, vec!["a".into()]).is_err());
    }

    #[test]
    fn directory_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let values = Array3::from_shape_fn((4, 2, 9), |(g, f, k)| ((g * 31 + f * 7 + k) as f64).sqrt() / 3.0);
        let series = FlowSeries::new(values, t0(), vec!["pickup".into(), "dropoff".into()]).unwrap();
        let geometry = GridGeometry {
            n_rows: 2,
            n_cols: 2,
            ..GridGeometry::default()
        };
        let mut a = Array2::zeros((4, 4));
        a[[0, 1]] = 1.0;
        a[[1, 0]] = 1.0;
        let grid = GraphSpec::new(geometry, a).unwrap();
        series.write_dir(dir.path(), Some(&grid)).unwrap();
        let (back, g) = FlowSeries::read_dir(dir.path()).unwrap();
        assert_eq!(g.unwrap(), grid);
        assert_eq!(back.start_time(), series.start_time());
        for (a, b) in back.values().iter().zip(series.values().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let bytes = fs::read(dir.path().join(VALUES_FILE)).unwrap();
        assert_eq!(&bytes[8..16], &series.values()[[0, 0, 1]].to_le_bytes());
    }

    #[test]
    fn adjacency_validation() {
        let mut a = Array2::zeros((2, 2));
        a[[0, 1]] = 1.0;
        assert!(check_adjacency(&a).is_err());
        a[[1, 0]] = 1.0;
        assert!(check_adjacency(&a).is_ok());
        a[[0, 0]] = 1.0;
        assert!(check_adjacency(&a).is_err());
    }
}
