//! Hourly flow curves for selected grids and days, as SVG plus the CSV the
//! curves are drawn from.

use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::flow::FlowSeries;
use crate::ingestion::day_start;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// One plotted line: 24 hourly values of every feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSlice {
    pub grid: usize,
    pub day: NaiveDate,
    /// `[feature][hour]`.
    pub values: Vec<Vec<f64>>,
}

pub fn slice_days(series: &FlowSeries, grids: &[usize], days: &[NaiveDate]) -> Result<Vec<FlowSlice>> {
    if grids.is_empty() || days.is_empty() {
        return Err(Error::InvalidInput("plot needs at least one grid and one day".into()));
    }
    let v = series.values();
    let mut out = Vec::new();
    for &g in grids {
        if g >= series.n_grids() {
            return Err(Error::OutOfRange(format!("grid {g} outside {} grids", series.n_grids())));
        }
        for &day in days {
            let h0 = series
                .hour_index(day_start(day))
                .filter(|h| h + 24 <= series.n_hours())
                .ok_or_else(|| Error::OutOfRange(format!("day {day} not fully inside the series")))?;
            let values = (0..series.n_features())
                .map(|f| (0..24).map(|h| v[[g, f, h0 + h]]).collect())
                .collect();
            out.push(FlowSlice { grid: g, day, values });
        }
    }
    Ok(out)
}

/// `grid,date,hour,<feature...>` with one line per grid, day and hour.
pub fn slices_to_csv(series: &FlowSeries, slices: &[FlowSlice]) -> String {
    let mut s = format!("grid,date,hour,{}\n", series.feature_names().join(","));
    for sl in slices {
        for h in 0..24 {
            let vals: Vec<String> = sl.values.iter().map(|f| f[h].to_string()).collect();
            let _ = writeln!(s, "{},{},{},{}", sl.grid, sl.day, h, vals.join(","));
        }
    }
    s
}

/// Line chart of feature `feature` for every slice.
pub fn slices_to_svg(series: &FlowSeries, slices: &[FlowSlice], feature: usize) -> String {
    let ymax = slices
        .iter()
        .flat_map(|s| s.values[feature].iter().copied())
        .fold(0.0_f64, f64::max)
        .max(1.0);
    let pw = WIDTH - 2.0 * MARGIN;
    let ph = HEIGHT - 2.0 * MARGIN;
    let x = |h: usize| MARGIN + pw * h as f64 / 23.0;
    let y = |v: f64| HEIGHT - MARGIN - ph * v / ymax;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{b}" stroke="black"/>"#,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    for h in (0..24).step_by(3) {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{h}</text>"#,
            x(h),
            HEIGHT - MARGIN + 15.0
        );
    }
    for k in 0..=4 {
        let v = ymax * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"#,
            MARGIN - 5.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">hour of day ({})</text>"#,
        WIDTH / 2.0,
        HEIGHT - 10.0,
        series.feature_names()[feature]
    );
    for (i, sl) in slices.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = sl.values[feature]
            .iter()
            .enumerate()
            .map(|(h, &v)| format!("{:.2},{:.2}", x(h), y(v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = MARGIN + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{ly:.2}" fill="{color}">grid {} {}</text>"#,
            WIDTH - MARGIN - 120.0,
            sl.grid,
            sl.day
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `<stem>.svg` and `<stem>.csv` next to each other.
pub fn plot_flows(
    series: &FlowSeries,
    grids: &[usize],
    days: &[NaiveDate],
    feature: usize,
    out_stem: &Path,
) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    if feature >= series.n_features() {
        return Err(Error::OutOfRange(format!("feature {feature} outside {}", series.n_features())));
    }
    let slices = slice_days(series, grids, days)?;
    let svg = out_stem.with_extension("svg");
    let csv = out_stem.with_extension("csv");
    std::fs::write(&svg, slices_to_svg(series, &slices, feature)).map_err(|e| Error::io(&svg, e))?;
    std::fs::write(&csv, slices_to_csv(series, &slices)).map_err(|e| Error::io(&csv, e))?;
    Ok((svg, csv))
}
