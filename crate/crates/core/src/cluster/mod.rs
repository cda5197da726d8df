//! Station grouping by weekly ridership shape.


use std::path::Path;

use chrono::{Datelike, Duration, NaiveTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::RidershipGrid;
use crate::io::{self, IoError};

#[derive(Debug, thiserror::Error)]
pub enum ClusterError {
    #[error("weekly profiles need at least 7 days of data, got {0}")]
    Coverage(usize),
    #[error("invalid clustering configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Mean ridership per weekday/time slot, max-scaled to `[0, 1]`. Slot
/// `d * slots_per_day + k` is weekday `d` (Monday = 0), service slot `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeeklyProfile {
    pub station_id: String,
    pub values: Vec<f64>,
}

pub fn weekly_profile(grid: &RidershipGrid) -> Result<Vec<WeeklyProfile>, ClusterError> {
    if grid.days < 7 {
        return Err(ClusterError::Coverage(grid.days));
    }
    let spd = grid.slots_per_day();
    let n = grid.stations();
    let mut sums = vec![vec![0.0; 7 * spd]; n];
    let mut counts = vec![0usize; 7 * spd];
    for day in 0..grid.days {
        let weekday = (grid.start_date + Duration::days(day as i64)).weekday().num_days_from_monday() as usize;
        for k in 0..spd {
            let slot = weekday * spd + k;
            counts[slot] += 1;
            for (s, &v) in grid.row(day * spd + k).iter().enumerate() {
                sums[s][slot] += v;
            }
        }
    }
    Ok(sums
        .into_iter()
        .zip(&grid.station_ids)
        .map(|(sum, id)| {
            let mean: Vec<f64> = sum.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
            let max = mean.iter().copied().fold(0.0, f64::max);
            let values = if max > 0.0 { mean.iter().map(|v| v / max).collect() } else { mean };
            WeeklyProfile { station_id: id.clone(), values }
        })
        .collect())
}

/// Column labels for profile slots, e.g. `Mon 06:00`.
pub fn slot_labels(grid: &RidershipGrid) -> Vec<String> {
    const DAYS: [&str; 7] = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];
    let step = i64::from(grid.interval_minutes);
    DAYS.iter()
        .flat_map(|d| {
            (0..grid.slots_per_day()).map(move |k| {
                let t: NaiveTime = grid.service.start + Duration::minutes(k as i64 * step);
                format!("{d} {}", t.format("%H:%M"))
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Cluster of each input profile, in input order.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after every assignment step.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Index of the nearest centroid, lowest index on ties.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Greedy k-means++ seeding: each new center is the best of `2 + ln k`
/// candidates drawn proportionally to squared distance.
fn seed_centers(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.gen_range(0..points.len())].to_vec()];
    let mut closest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    let trials = 2 + (k as f64).ln() as usize;
    while centers.len() < k {
        let total: f64 = closest.iter().sum();
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for _ in 0..trials {
            let candidate = if total > 0.0 {
                let mut target = rng.gen::<f64>() * total;
                let mut pick = points.len() - 1;
                for (i, d) in closest.iter().enumerate() {
                    if target < *d {
                        pick = i;
                        break;
                    }
                    target -= d;
                }
                pick
            } else {
                rng.gen_range(0..points.len())
            };
            let updated: Vec<f64> =
                points.iter().zip(&closest).map(|(p, &d)| d.min(sq_dist(p, points[candidate]))).collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().map_or(true, |b| potential < b.1) {
                best = Some((candidate, potential, updated));
            }
        }
        let (pick, _, updated) = best.expect("at least two trials");
        centers.push(points[pick].to_vec());
        closest = updated;
    }
    centers
}

/// Lloyd's k-means on profiles sorted by station id, so results do not
/// depend on input order.
pub fn kmeans(profiles: &[WeeklyProfile], k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult, ClusterError> {
    if k == 0 || k > profiles.len() {
        return Err(ClusterError::Config(format!("k = {k} with {} profiles", profiles.len())));
    }
    let dim = profiles[0].values.len();
    if profiles.iter().any(|p| p.values.len() != dim) {
        return Err(ClusterError::Config("profiles differ in length".into()));
    }
    let mut order: Vec<usize> = (0..profiles.len()).collect();
    order.sort_by(|&a, &b| profiles[a].station_id.cmp(&profiles[b].station_id));
    let points: Vec<&[f64]> = order.iter().map(|&i| profiles[i].values.as_slice()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centers(&points, k, &mut rng);
    let mut labels: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut iterations = 0;
    while iterations < max_iter.max(1) {
        iterations += 1;
        let mut next: Vec<usize> = Vec::with_capacity(points.len());
        let mut dists: Vec<f64> = Vec::with_capacity(points.len());
        for p in &points {
            let (c, d) = nearest(p, &centroids);
            next.push(c);
            dists.push(d);
        }
        // A cluster left empty adopts the point farthest from its centroid.
        for c in 0..k {
            if next.contains(&c) {
                continue;
            }
            let sizes = |l: &[usize], c: usize| l.iter().filter(|&&x| x == c).count();
            let far = (0..points.len())
                .filter(|&i| sizes(&next, next[i]) > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                .expect("k <= points leaves a donor cluster");
            next[far] = c;
            centroids[c] = points[far].to_vec();
            dists[far] = 0.0;
        }
        trace.push(dists.iter().sum());
        let done = next == labels;
        labels = next;
        if done {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&labels) {
            counts[c] += 1;
            for (acc, v) in sums[c].iter_mut().zip(p.iter()) {
                *acc += v;
            }
        }
        for c in 0..k {
            centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &c)| sq_dist(p, &centroids[c])).sum();
    let mut assignments = vec![0; profiles.len()];
    for (sorted, &original) in order.iter().enumerate() {
        assignments[original] = labels[sorted];
    }
    Ok(KMeansResult { assignments, centroids, inertia, inertia_trace: trace, iterations })
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let pairs = |m: u64| (m * m.saturating_sub(1) / 2) as f64;
    let index: f64 = table.iter().flatten().map(|&m| pairs(m)).sum();
    let rows: f64 = table.iter().map(|r| pairs(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| pairs(table.iter().map(|r| r[j]).sum())).sum();
    let total = pairs(n as u64);
    let expected = rows * cols / total;
    let max = (rows + cols) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// CSV `station_id,cluster`.
pub fn write_assignments(
    path: &Path,
    profiles: &[WeeklyProfile],
    assignments: &[usize],
    comment: Option<&str>,
) -> Result<(), ClusterError> {
    let mut w = io::csv_writer(path, comment)?;
    let err = |e| ClusterError::Io(IoError::csv(path, e));
    w.write_record(["station_id", "cluster"]).map_err(err)?;
    for (p, c) in profiles.iter().zip(assignments) {
        w.write_record([p.station_id.as_str(), &c.to_string()]).map_err(err)?;
    }
    Ok(io::finish(path, w)?)
}

/// CSV matrix: `cluster,<slot labels...>`, one row per centroid.
pub fn write_centroids(
    path: &Path,
    centroids: &[Vec<f64>],
    labels: &[String],
    comment: Option<&str>,
) -> Result<(), ClusterError> {
    let mut w = io::csv_writer(path, comment)?;
    let err = |e| ClusterError::Io(IoError::csv(path, e));
    let mut header = vec!["cluster".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header).map_err(err)?;
    for (c, centroid) in centroids.iter().enumerate() {
        let mut rec = vec![c.to_string()];
        rec.extend(centroid.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(err)?;
    }
    Ok(io::finish(path, w)?)
}
