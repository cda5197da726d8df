//! Deterministic synthetic networks with archetypal weekly ridership shapes.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, RidershipRecord, ServiceWindow};
use crate::graph::{GraphError, Station, TransitGraph};
use crate::io::IoError;

/// Station ridership shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Archetype {
    /// Weekday morning and evening commuter peaks.
    TwoPeak,
    /// Residential: a single weekday morning peak.
    MorningPeak,
    /// Employment/leisure destination: a single evening peak.
    EveningPeak,
    /// Commercial: broad midday hump, strong weekends.
    Midday,
    /// Nearly constant all week.
    Flat,
}

impl Archetype {
    pub const ALL: [Archetype; 5] =
        [Archetype::TwoPeak, Archetype::MorningPeak, Archetype::EveningPeak, Archetype::Midday, Archetype::Flat];

    pub fn name(self) -> &'static str {
        match self {
            Archetype::TwoPeak => "two-peak",
            Archetype::MorningPeak => "morning-peak",
            Archetype::EveningPeak => "evening-peak",
            Archetype::Midday => "midday",
            Archetype::Flat => "flat",
        }
    }

    /// Relative level at `hour` (fractional) on `weekday` (0 = Monday).
    pub fn level(self, weekday: u32, hour: f64) -> f64 {
        let g = |mu: f64, sd: f64| (-(hour - mu).powi(2) / (2.0 * sd * sd)).exp();
        let weekend = weekday >= 5;
        match (self, weekend) {
            (Archetype::TwoPeak, false) => 0.15 + 0.85 * g(8.0, 1.0) + 0.7 * g(17.75, 1.25),
            (Archetype::TwoPeak, true) => 0.25 + 0.2 * g(13.0, 3.0),
            (Archetype::MorningPeak, false) => 0.08 + 0.92 * g(7.0, 0.9),
            (Archetype::MorningPeak, true) => 0.12 + 0.15 * g(10.0, 2.5),
            (Archetype::EveningPeak, false) => 0.12 + 0.88 * g(18.5, 1.3),
            (Archetype::EveningPeak, true) => 0.3 + 0.3 * g(20.0, 2.0),
            (Archetype::Midday, false) => 0.2 + 0.75 * g(13.0, 2.2),
            (Archetype::Midday, true) => 0.35 + 0.55 * g(14.0, 2.5),
            (Archetype::Flat, false) => 0.55 + 0.08 * g(12.0, 5.0),
            (Archetype::Flat, true) => 0.5 + 0.08 * g(13.0, 5.0),
        }
    }

    /// Noise-free relative levels for each service slot of one day.
    pub fn daily_profile(self, weekday: u32, service: ServiceWindow, interval_minutes: u32) -> Vec<f64> {
        let start = f64::from(service.start.num_seconds_from_midnight()) / 3600.0;
        (0..service.slots_per_day(interval_minutes))
            .map(|k| self.level(weekday, start + k as f64 * f64::from(interval_minutes) / 60.0))
            .collect()
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Archetype {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Archetype::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| DataError::Config(format!("unknown archetype `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub stations: usize,
    pub days: usize,
    pub start_date: NaiveDate,
    pub seed: u64,
    /// Standard deviation of the multiplicative noise factor `1 + noise * N(0, 1)`.
    pub noise: f64,
    pub interval_minutes: u32,
    pub service: ServiceWindow,
    /// Assigned to stations round-robin.
    pub archetypes: Vec<Archetype>,
    /// Peak boardings per interval are drawn uniformly from this range per station.
    pub min_scale: f64,
    pub max_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            stations: 10,
            days: 28,
            start_date: NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(),
            seed: 1,
            noise: 0.1,
            interval_minutes: 15,
            service: ServiceWindow::default(),
            archetypes: Archetype::ALL.to_vec(),
            min_scale: 60.0,
            max_scale: 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestStation {
    pub id: String,
    pub archetype: Archetype,
    pub scale: f64,
    pub total_boardings: u64,
}

/// Sidecar describing how a synthetic dataset was generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub start_date: NaiveDate,
    pub days: usize,
    pub noise: f64,
    pub total_boardings: u64,
    pub stations: Vec<ManifestStation>,
}

impl Manifest {
    pub fn archetype_of(&self, id: &str) -> Option<Archetype> {
        self.stations.iter().find(|s| s.id == id).map(|s| s.archetype)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub stations: Vec<Station>,
    pub edges: Vec<(String, String)>,
    pub records: Vec<RidershipRecord>,
    pub manifest: Manifest,
}

impl SyntheticDataset {
    pub fn graph(&self, self_loops: bool) -> Result<TransitGraph, GraphError> {
        TransitGraph::build(self.stations.clone(), &self.edges, self_loops)
    }
}

pub fn station_id(i: usize) -> String {
    format!("S{i:03}")
}

/// Corridor `S000 - S001 - ...` plus a short-cut from every fourth station
/// three stops ahead.
fn corridor_edges(n: usize) -> Vec<(String, String)> {
    let mut edges: Vec<(String, String)> = (1..n).map(|i| (station_id(i - 1), station_id(i))).collect();
    edges.extend((0..n).filter(|i| i % 4 == 0 && i + 3 < n).map(|i| (station_id(i), station_id(i + 3))));
    edges
}

pub fn synth_generate(config: &SynthConfig) -> Result<SyntheticDataset, DataError> {
    if config.days < 15 {
        return Err(DataError::Config(format!("synthetic data needs at least 15 days, got {}", config.days)));
    }
    if config.stations == 0 || config.archetypes.is_empty() {
        return Err(DataError::Config("need at least one station and one archetype".into()));
    }
    if !(config.noise >= 0.0) || !(config.min_scale > 0.0 && config.max_scale >= config.min_scale) {
        return Err(DataError::Config("noise must be >= 0 and 0 < min_scale <= max_scale".into()));
    }
    config.service.validate(config.interval_minutes)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.stations;
    let stations: Vec<Station> = (0..n)
        .map(|i| Station::new(station_id(i), 4.55 + 0.004 * i as f64, -74.12 + 0.003 * (i % 5) as f64))
        .collect();
    let archetypes: Vec<Archetype> = (0..n).map(|i| config.archetypes[i % config.archetypes.len()]).collect();
    let scales: Vec<f64> = (0..n)
        .map(|_| if config.max_scale > config.min_scale { rng.gen_range(config.min_scale..config.max_scale) } else { config.min_scale })
        .collect();

    let profiles: Vec<Vec<Vec<f64>>> = archetypes
        .iter()
        .map(|a| (0..7).map(|wd| a.daily_profile(wd, config.service, config.interval_minutes)).collect())
        .collect();

    let mut totals = vec![0u64; n];
    let mut records = Vec::new();
    for day in 0..config.days {
        let date = config.start_date + Duration::days(day as i64);
        let weekday = date.weekday().num_days_from_monday();
        for slot in 0..config.service.slots_per_day(config.interval_minutes) {
            let bucket = date.and_time(config.service.start)
                + Duration::minutes(slot as i64 * i64::from(config.interval_minutes));
            for s in 0..n {
                let factor = if config.noise > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (1.0 + config.noise * z).max(0.0)
                } else {
                    1.0
                };
                let count = (profiles[s][weekday as usize][slot] * scales[s] * factor).round() as u32;
                let offset = rng.gen_range(0..config.interval_minutes);
                if count == 0 {
                    continue;
                }
                totals[s] += u64::from(count);
                records.push(RidershipRecord {
                    timestamp: bucket + Duration::minutes(i64::from(offset)),
                    station_id: stations[s].id.clone(),
                    boardings: count,
                });
            }
        }
    }

    let manifest = Manifest {
        seed: config.seed,
        start_date: config.start_date,
        days: config.days,
        noise: config.noise,
        total_boardings: totals.iter().sum(),
        stations: (0..n)
            .map(|s| ManifestStation {
                id: stations[s].id.clone(),
                archetype: archetypes[s],
                scale: scales[s],
                total_boardings: totals[s],
            })
            .collect(),
    };
    Ok(SyntheticDataset { edges: corridor_edges(n), stations, records, manifest })
}

pub fn write_manifest(path: &Path, manifest: &Manifest, comment: Option<&str>) -> Result<(), DataError> {
    let body = toml::to_string(manifest).map_err(|e| IoError::format(path, e.to_string()))?;
    let text = match comment {
        Some(c) => format!("# {c}\n{body}"),
        None => body,
    };
    std::fs::write(path, text).map_err(|e| IoError::io(path, e))?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    Ok(toml::from_str(&text).map_err(|e| IoError::format(path, e.to_string()))?)
}
