use std::ops::Range;

use chrono::NaiveDateTime;

use super::RidershipGrid;
use crate::autodiff::Tensor;

/// One aligned model input/target pair.
///
/// `recent` holds the `I` rows just before the target; `historical` holds
/// the `N_h` rows ending exactly one week before the target, so its last
/// column is the target's week-ago analogue.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    /// `N_s x I`
    pub recent: Tensor,
    /// `N_s x N_h`
    pub historical: Tensor,
    pub target: Vec<f64>,
    pub target_time: NaiveDateTime,
    pub target_row: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub samples: Vec<SampleWindow>,
    /// Targets in the requested range without full recent/historical coverage.
    pub skipped: usize,
}

/// `N_s x len` block of grid rows `first..first + len`, stations as rows.
pub fn block(grid: &RidershipGrid, first: usize, len: usize) -> Tensor {
    let n = grid.stations();
    let mut out = Tensor::zeros(n, len);
    for k in 0..len {
        for (s, &v) in grid.row(first + k).iter().enumerate() {
            out.set(s, k, v);
        }
    }
    out
}

/// First target row with full coverage.
pub fn first_target_row(grid: &RidershipGrid, recent_len: usize, hist_len: usize) -> usize {
    recent_len.max(grid.week_rows() + hist_len.max(1) - 1)
}

/// Historical block for `target_row`, or `None` when it is not covered.
pub fn historical_block(grid: &RidershipGrid, target_row: usize, hist_len: usize) -> Option<Tensor> {
    let last = target_row.checked_sub(grid.week_rows())?;
    let first = (last + 1).checked_sub(hist_len)?;
    (last < grid.rows()).then(|| block(grid, first, hist_len))
}

pub fn window_at(grid: &RidershipGrid, target_row: usize, recent_len: usize, hist_len: usize) -> Option<SampleWindow> {
    if target_row >= grid.rows() || target_row < recent_len {
        return None;
    }
    let historical = historical_block(grid, target_row, hist_len)?;
    Some(SampleWindow {
        recent: block(grid, target_row - recent_len, recent_len),
        historical,
        target: grid.row(target_row).to_vec(),
        target_time: grid.time_of_row(target_row),
        target_row,
    })
}

/// Windows for every target row in `rows` that has full coverage.
pub fn make_windows_in(grid: &RidershipGrid, recent_len: usize, hist_len: usize, rows: Range<usize>) -> WindowSet {
    let rows = rows.start.min(grid.rows())..rows.end.min(grid.rows());
    let total = rows.len();
    let samples: Vec<SampleWindow> = rows.filter_map(|t| window_at(grid, t, recent_len, hist_len)).collect();
    WindowSet { skipped: total - samples.len(), samples }
}

pub fn make_windows(grid: &RidershipGrid, recent_len: usize, hist_len: usize) -> WindowSet {
    make_windows_in(grid, recent_len, hist_len, 0..grid.rows())
}
