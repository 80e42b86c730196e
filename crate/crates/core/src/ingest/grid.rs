use serde::{Deserialize, Serialize};

use super::IngestError;

/// Regular latitude/longitude grid. Cells are indexed row-major with row 0 at
/// `lat_min` and column 0 at `lon_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub rows: usize,
    pub cols: usize,
}

/// Fractional cell positions this close below an integer are treated as on
/// the boundary, so decimal inputs that lie exactly on a grid line land in
/// the cell above it despite binary rounding.
const BOUNDARY_SNAP: f64 = 1e-9;

impl GridSpec {
    /// The 40×30 New York City grid used for the published experiments.
    pub fn nyc() -> Self {
        Self {
            lat_min: 40.628,
            lat_max: 40.830,
            lon_min: -74.05,
            lon_max: -73.88,
            rows: 40,
            cols: 30,
        }
    }

    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64, rows: usize, cols: usize) -> Result<Self, IngestError> {
        let g = Self {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
            rows,
            cols,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let finite = [self.lat_min, self.lat_max, self.lon_min, self.lon_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.lat_min >= self.lat_max || self.lon_min >= self.lon_max {
            return Err(IngestError::InvalidGrid(format!(
                "bounds lat [{}, {}] lon [{}, {}] are not increasing",
                self.lat_min, self.lat_max, self.lon_min, self.lon_max
            )));
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(IngestError::InvalidGrid(format!("{}x{} grid has no cells", self.rows, self.cols)));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn lat_step(&self) -> f64 {
        (self.lat_max - self.lat_min) / self.rows as f64
    }

    pub fn lon_step(&self) -> f64 {
        (self.lon_max - self.lon_min) / self.cols as f64
    }

    fn axis_index(value: f64, min: f64, max: f64, step: f64, count: usize) -> Option<usize> {
        if !value.is_finite() || value < min || value > max {
            return None;
        }
        let pos = ((value - min) / step + BOUNDARY_SNAP).floor();
        Some((pos.max(0.0) as usize).min(count - 1))
    }

    /// Row-major cell containing `(lat, lon)`, or `None` outside the closed
    /// bounding box. Coordinates on the upper edge clamp into the last
    /// row/column.
    pub fn assign_cell(&self, lat: f64, lon: f64) -> Option<usize> {
        let row = Self::axis_index(lat, self.lat_min, self.lat_max, self.lat_step(), self.rows)?;
        let col = Self::axis_index(lon, self.lon_min, self.lon_max, self.lon_step(), self.cols)?;
        Some(row * self.cols + col)
    }

    pub fn row_col(&self, cell: usize) -> (usize, usize) {
        (cell / self.cols, cell % self.cols)
    }

    /// Geographic center `(lat, lon)` of a cell.
    pub fn cell_center(&self, cell: usize) -> (f64, f64) {
        let (r, c) = self.row_col(cell);
        (
            self.lat_min + (r as f64 + 0.5) * self.lat_step(),
            self.lon_min + (c as f64 + 0.5) * self.lon_step(),
        )
    }
}
