use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{DataError, RidershipGrid};

/// Named inclusive date range. A range with `start > end` is empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub name: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Period {
    pub fn new(name: impl Into<String>, start: NaiveDate, end: NaiveDate) -> Self {
        Self { name: name.into(), start, end }
    }

    pub fn is_empty(&self) -> bool {
        self.start > self.end
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        d >= self.start && d <= self.end
    }

    fn overlaps(&self, other: &Period) -> bool {
        !self.is_empty() && !other.is_empty() && self.start <= other.end && other.start <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PeriodSpec {
    periods: Vec<Period>,
}

impl PeriodSpec {
    pub fn new(periods: Vec<Period>) -> Result<Self, DataError> {
        for (i, a) in periods.iter().enumerate() {
            if let Some(b) = periods[i + 1..].iter().find(|b| a.overlaps(b)) {
                return Err(DataError::OverlappingPeriods(a.name.clone(), b.name.clone()));
            }
        }
        Ok(Self { periods })
    }

    pub fn periods(&self) -> &[Period] {
        &self.periods
    }

    pub fn get(&self, name: &str) -> Option<&Period> {
        self.periods.iter().find(|p| p.name == name)
    }
}

/// Row-disjoint whole-day sub-grids, one per period, in spec order.
pub fn split_periods(grid: &RidershipGrid, spec: &PeriodSpec) -> Vec<(String, RidershipGrid)> {
    let spd = grid.slots_per_day();
    spec.periods()
        .iter()
        .map(|p| {
            let rows = if p.is_empty() { 0..0 } else { grid.rows_for_dates(p.start, p.end) };
            let first_day = if rows.is_empty() { 0 } else { rows.start / spd };
            (p.name.clone(), grid.sub_days(first_day, rows.len() / spd))
        })
        .collect()
}
