use super::{make_windows_in, DataError, PeriodSpec, RidershipGrid, SampleWindow, ScalerParams};

/// Scaled samples grouped by the period containing their target date.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub scaler: ScalerParams,
    pub scaled: RidershipGrid,
    /// One entry per period, in spec order.
    pub sets: Vec<PeriodSamples>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodSamples {
    pub name: String,
    pub samples: Vec<SampleWindow>,
    /// Target rows in the period without full window coverage.
    pub skipped: usize,
}

impl PreparedData {
    pub fn get(&self, name: &str) -> Option<&PeriodSamples> {
        self.sets.iter().find(|s| s.name == name)
    }

    pub fn samples(&self, name: &str) -> &[SampleWindow] {
        self.get(name).map_or(&[], |s| &s.samples)
    }
}

/// Fits the scaler on the rows of period `train`, scales the whole grid, and
/// builds windows for every target row of each period. Windows may reach
/// back into earlier periods for their inputs; targets never cross periods.
pub fn prepare_samples(
    grid: &RidershipGrid,
    spec: &PeriodSpec,
    train: &str,
    recent_len: usize,
    hist_len: usize,
) -> Result<PreparedData, DataError> {
    let period = spec.get(train).ok_or_else(|| DataError::Config(format!("no period named `{train}`")))?;
    let rows = if period.is_empty() { 0..0 } else { grid.rows_for_dates(period.start, period.end) };
    let scaler = ScalerParams::fit(grid, rows)?;
    let scaled = scaler.apply(grid);
    let sets = spec
        .periods()
        .iter()
        .map(|p| {
            let rows = if p.is_empty() { 0..0 } else { scaled.rows_for_dates(p.start, p.end) };
            let set = make_windows_in(&scaled, recent_len, hist_len, rows);
            PeriodSamples { name: p.name.clone(), samples: set.samples, skipped: set.skipped }
        })
        .collect();
    Ok(PreparedData { scaler, scaled, sets })
}
