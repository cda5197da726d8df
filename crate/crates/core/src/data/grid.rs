use std::collections::{BTreeSet, HashSet};
use std::ops::Range;
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::graph::TransitGraph;
use crate::io::{self, IoError};

/// Timestamp format used in every CSV this crate writes.
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s.trim(), f).ok())
}

pub fn format_timestamp(t: NaiveDateTime) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RidershipRecord {
    pub timestamp: NaiveDateTime,
    pub station_id: String,
    pub boardings: u32,
}

/// Daily in-service range, inclusive on both ends. Buckets whose start falls
/// outside it are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceWindow {
    pub start: NaiveTime,
    pub end: NaiveTime,
}

impl Default for ServiceWindow {
    fn default() -> Self {
        Self { start: NaiveTime::from_hms_opt(6, 0, 0).unwrap(), end: NaiveTime::from_hms_opt(23, 59, 0).unwrap() }
    }
}

impl ServiceWindow {
    pub fn contains(&self, t: NaiveTime) -> bool {
        t >= self.start && t <= self.end
    }

    pub fn validate(&self, interval_minutes: u32) -> Result<(), DataError> {
        if interval_minutes == 0 || 60 % interval_minutes != 0 {
            return Err(DataError::InvalidInterval(interval_minutes));
        }
        if self.start > self.end || self.start.minute() % interval_minutes != 0 || self.start.second() != 0 {
            return Err(DataError::InvalidServiceWindow(format!(
                "{}-{} with {interval_minutes}-minute buckets",
                self.start, self.end
            )));
        }
        Ok(())
    }

    /// Number of bucket starts inside the window.
    pub fn slots_per_day(&self, interval_minutes: u32) -> usize {
        let span = (self.end - self.start).num_minutes();
        (span / i64::from(interval_minutes)) as usize + 1
    }
}

/// Dense `rows x stations` boarding counts on the in-service grid. Rows run
/// through each day's service slots and continue with the next day; the
/// night gap is not represented.
#[derive(Debug, Clone, PartialEq)]
pub struct RidershipGrid {
    pub start_date: NaiveDate,
    pub days: usize,
    pub interval_minutes: u32,
    pub service: ServiceWindow,
    pub station_ids: Vec<String>,
    values: Vec<f64>,
}

impl RidershipGrid {
    pub fn new(
        start_date: NaiveDate,
        days: usize,
        interval_minutes: u32,
        service: ServiceWindow,
        station_ids: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self, DataError> {
        service.validate(interval_minutes)?;
        let rows = days * service.slots_per_day(interval_minutes);
        if values.len() != rows * station_ids.len() {
            return Err(DataError::Shape(format!(
                "{days} days x {} stations needs {} values, got {}",
                station_ids.len(),
                rows * station_ids.len(),
                values.len()
            )));
        }
        Ok(Self { start_date, days, interval_minutes, service, station_ids, values })
    }

    pub fn slots_per_day(&self) -> usize {
        self.service.slots_per_day(self.interval_minutes)
    }

    /// Rows spanning exactly seven days.
    pub fn week_rows(&self) -> usize {
        7 * self.slots_per_day()
    }

    pub fn rows(&self) -> usize {
        self.days * self.slots_per_day()
    }

    pub fn stations(&self) -> usize {
        self.station_ids.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let n = self.stations();
        &self.values[r * n..(r + 1) * n]
    }

    pub fn value(&self, r: usize, station: usize) -> f64 {
        self.values[r * self.stations() + station]
    }

    pub fn column(&self, station: usize) -> Vec<f64> {
        (0..self.rows()).map(|r| self.value(r, station)).collect()
    }

    pub fn time_of_row(&self, r: usize) -> NaiveDateTime {
        let spd = self.slots_per_day();
        let day = self.start_date + Duration::days((r / spd) as i64);
        let minutes = (r % spd) as i64 * i64::from(self.interval_minutes);
        day.and_time(self.service.start) + Duration::minutes(minutes)
    }

    /// Row whose bucket starts at exactly `t`, if any.
    pub fn row_of(&self, t: NaiveDateTime) -> Option<usize> {
        let day = (t.date() - self.start_date).num_days();
        if day < 0 || day as usize >= self.days || !self.service.contains(t.time()) {
            return None;
        }
        let offset = (t.time() - self.service.start).num_minutes();
        let interval = i64::from(self.interval_minutes);
        if offset % interval != 0 || t.second() != 0 {
            return None;
        }
        Some(day as usize * self.slots_per_day() + (offset / interval) as usize)
    }

    /// Rows whose date lies in `first..=last`.
    pub fn rows_for_dates(&self, first: NaiveDate, last: NaiveDate) -> Range<usize> {
        let spd = self.slots_per_day() as i64;
        let clamp = |d: i64| d.clamp(0, self.days as i64);
        let lo = clamp((first - self.start_date).num_days());
        let hi = clamp((last - self.start_date).num_days() + 1);
        if hi <= lo {
            return 0..0;
        }
        (lo * spd) as usize..(hi * spd) as usize
    }

    /// Whole-day sub-grid starting at day offset `first_day`.
    pub fn sub_days(&self, first_day: usize, days: usize) -> RidershipGrid {
        let spd = self.slots_per_day();
        let n = self.stations();
        let first_day = first_day.min(self.days);
        let days = days.min(self.days - first_day);
        let values = self.values[first_day * spd * n..(first_day + days) * spd * n].to_vec();
        RidershipGrid {
            start_date: self.start_date + Duration::days(first_day as i64),
            days,
            values,
            ..self.clone()
        }
    }

    pub fn map_station_values(&self, f: impl Fn(usize, f64) -> f64) -> RidershipGrid {
        let n = self.stations();
        let values = self.values.iter().enumerate().map(|(i, &v)| f(i % n, v)).collect();
        RidershipGrid { values, ..self.clone() }
    }
}

/// Result of [`aggregate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub grid: RidershipGrid,
    /// Distinct records whose bucket fell outside the service window.
    pub out_of_service: usize,
    /// Exact repeats removed before summation.
    pub duplicates: usize,
}

/// Sums boardings per `(bucket, station)` on the service grid. Exact
/// duplicate records count once, out-of-service buckets are dropped, and
/// empty in-service buckets are zero.
pub fn aggregate(
    records: &[RidershipRecord],
    graph: &TransitGraph,
    interval_minutes: u32,
    service: ServiceWindow,
) -> Result<Aggregation, DataError> {
    service.validate(interval_minutes)?;
    let unknown: BTreeSet<&str> =
        records.iter().filter(|r| graph.index_of(&r.station_id).is_none()).map(|r| r.station_id.as_str()).collect();
    if !unknown.is_empty() {
        return Err(DataError::UnknownStations(unknown.into_iter().map(String::from).collect()));
    }

    let distinct: HashSet<&RidershipRecord> = records.iter().collect();
    let duplicates = records.len() - distinct.len();

    let bucket = |t: NaiveDateTime| -> NaiveDateTime {
        let m = t.minute() - t.minute() % interval_minutes;
        t.date().and_hms_opt(t.hour(), m, 0).unwrap()
    };
    let in_service: Vec<(NaiveDateTime, usize, u32)> = distinct
        .iter()
        .map(|r| (bucket(r.timestamp), graph.index_of(&r.station_id).unwrap(), r.boardings))
        .filter(|(b, _, _)| service.contains(b.time()))
        .collect();
    let out_of_service = distinct.len() - in_service.len();

    let (Some(first), Some(last)) =
        (in_service.iter().map(|r| r.0.date()).min(), in_service.iter().map(|r| r.0.date()).max())
    else {
        return Err(DataError::Empty("no in-service records".into()));
    };
    let days = (last - first).num_days() as usize + 1;
    let n = graph.len();
    let spd = service.slots_per_day(interval_minutes);
    let mut counts = vec![0u64; days * spd * n];
    for (b, s, v) in in_service {
        let day = (b.date() - first).num_days() as usize;
        let slot = ((b.time() - service.start).num_minutes() / i64::from(interval_minutes)) as usize;
        counts[(day * spd + slot) * n + s] += u64::from(v);
    }
    let values = counts.into_iter().map(|c| c as f64).collect();
    let grid = RidershipGrid::new(first, days, interval_minutes, service, graph.station_ids(), values)?;
    Ok(Aggregation { grid, out_of_service, duplicates })
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordRow {
    timestamp: String,
    station_id: String,
    boardings: u32,
}

pub fn read_records(path: &Path) -> Result<Vec<RidershipRecord>, DataError> {
    let mut rdr = io::csv_reader(path)?;
    let mut out = Vec::new();
    for (line, row) in rdr.deserialize::<RecordRow>().enumerate() {
        let row = row.map_err(|e| IoError::csv(path, e))?;
        let timestamp = parse_timestamp(&row.timestamp)
            .ok_or_else(|| IoError::format(path, format!("record {}: bad timestamp `{}`", line + 1, row.timestamp)))?;
        out.push(RidershipRecord { timestamp, station_id: row.station_id, boardings: row.boardings });
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[RidershipRecord], comment: Option<&str>) -> Result<(), DataError> {
    let mut w = io::csv_writer(path, comment)?;
    for r in records {
        let row = RecordRow {
            timestamp: format_timestamp(r.timestamp),
            station_id: r.station_id.clone(),
            boardings: r.boardings,
        };
        w.serialize(row).map_err(|e| IoError::csv(path, e))?;
    }
    Ok(io::finish(path, w)?)
}

/// Wide layout: `timestamp,<station ids...>`.
pub fn write_grid(path: &Path, grid: &RidershipGrid, comment: Option<&str>) -> Result<(), DataError> {
    let mut w = io::csv_writer(path, comment)?;
    let mut header = vec!["timestamp".to_string()];
    header.extend(grid.station_ids.iter().cloned());
    w.write_record(&header).map_err(|e| IoError::csv(path, e))?;
    for r in 0..grid.rows() {
        let mut rec = vec![format_timestamp(grid.time_of_row(r))];
        rec.extend(grid.row(r).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| IoError::csv(path, e))?;
    }
    Ok(io::finish(path, w)?)
}
