use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{DataError, RidershipGrid};

/// Per-station min-max scaling fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScalerParams {
    pub fn fit(grid: &RidershipGrid, rows: Range<usize>) -> Result<Self, DataError> {
        if rows.is_empty() || rows.end > grid.rows() {
            return Err(DataError::NoTrainingRows);
        }
        let n = grid.stations();
        let mut min = vec![f64::INFINITY; n];
        let mut max = vec![f64::NEG_INFINITY; n];
        for r in rows {
            for (s, &v) in grid.row(r).iter().enumerate() {
                min[s] = min[s].min(v);
                max[s] = max[s].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn stations(&self) -> usize {
        self.min.len()
    }

    pub fn apply_value(&self, station: usize, x: f64) -> f64 {
        let (lo, hi) = (self.min[station], self.max[station]);
        if hi > lo {
            (x - lo) / (hi - lo)
        } else {
            0.0
        }
    }

    pub fn invert_value(&self, station: usize, v: f64) -> f64 {
        let (lo, hi) = (self.min[station], self.max[station]);
        if hi > lo {
            v * (hi - lo) + lo
        } else {
            lo
        }
    }

    pub fn apply(&self, grid: &RidershipGrid) -> RidershipGrid {
        grid.map_station_values(|s, v| self.apply_value(s, v))
    }

    pub fn invert(&self, grid: &RidershipGrid) -> RidershipGrid {
        grid.map_station_values(|s, v| self.invert_value(s, v))
    }
}
