use super::{GridSpec, IngestError, TripRecord};
use crate::par;

/// Time-binned demand counts, `slots × units`, row-major by slot.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandTensor {
    slots: usize,
    units: usize,
    values: Vec<u64>,
    /// Slot width in seconds.
    pub bin_width: i64,
    /// Start of slot 0 (UTC seconds).
    pub t0: i64,
    /// Grid the units refer to, when they are grid cells.
    pub grid: Option<GridSpec>,
}

impl DemandTensor {
    pub fn new(slots: usize, units: usize, values: Vec<u64>, bin_width: i64, t0: i64) -> Result<Self, IngestError> {
        if slots == 0 || units == 0 || values.len() != slots * units {
            return Err(IngestError::Format(format!(
                "demand tensor {slots}x{units} with {} values",
                values.len()
            )));
        }
        if bin_width <= 0 {
            return Err(IngestError::InvalidWindow(format!("bin width {bin_width} must be positive")));
        }
        Ok(Self {
            slots,
            units,
            values,
            bin_width,
            t0,
            grid: None,
        })
    }

    pub fn with_grid(mut self, grid: GridSpec) -> Self {
        self.grid = Some(grid);
        self
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }

    pub fn get(&self, slot: usize, unit: usize) -> u64 {
        self.values[slot * self.units + unit]
    }

    pub fn total(&self) -> u64 {
        self.values.iter().sum()
    }

    /// Demand of one unit over `range` as floats.
    pub fn series(&self, unit: usize, range: std::ops::Range<usize>) -> Vec<f64> {
        range.map(|t| self.get(t, unit) as f64).collect()
    }

    /// Sums groups of units into new units (e.g. cells into virtual nodes).
    pub fn aggregate(&self, groups: &[Vec<usize>]) -> Result<Self, IngestError> {
        if let Some(bad) = groups.iter().flatten().find(|&&u| u >= self.units) {
            return Err(IngestError::Format(format!("unit {bad} out of range {}", self.units)));
        }
        let mut values = Vec::with_capacity(self.slots * groups.len());
        for t in 0..self.slots {
            for g in groups {
                values.push(g.iter().map(|&u| self.get(t, u)).sum());
            }
        }
        Self::new(self.slots, groups.len(), values, self.bin_width, self.t0)
    }
}

/// Origin–destination trip counts between units.
#[derive(Debug, Clone, PartialEq)]
pub struct OdTensor {
    units: usize,
    counts: Vec<u64>,
    /// Pickup window `[t0, t1)` the flows were accumulated over.
    pub t0: i64,
    pub t1: i64,
    pub grid: Option<GridSpec>,
}

impl OdTensor {
    pub fn new(units: usize, counts: Vec<u64>, t0: i64, t1: i64) -> Result<Self, IngestError> {
        if units == 0 || counts.len() != units * units {
            return Err(IngestError::Format(format!("OD tensor {units}x{units} with {} values", counts.len())));
        }
        Ok(Self {
            units,
            counts,
            t0,
            t1,
            grid: None,
        })
    }

    pub fn with_grid(mut self, grid: GridSpec) -> Self {
        self.grid = Some(grid);
        self
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, from: usize, to: usize) -> u64 {
        self.counts[from * self.units + to]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Demand tensor plus accounting for records that were not counted.
#[derive(Debug, Clone, PartialEq)]
pub struct Binned {
    pub demand: DemandTensor,
    pub out_of_bounds: usize,
    pub out_of_window: usize,
}

impl Binned {
    pub fn dropped(&self) -> usize {
        self.out_of_bounds + self.out_of_window
    }
}

const SHARD: usize = 1 << 16;

/// Counts pickups per `(slot, cell)` in half-open slots `[t0 + k·w, t0 + (k+1)·w)`.
///
/// A trailing partial slot before `t1` is dropped so every slot spans exactly
/// `bin_width` seconds.
pub fn bin_demand(trips: &[TripRecord], grid: &GridSpec, bin_width: i64, t0: i64, t1: i64) -> Result<Binned, IngestError> {
    grid.validate()?;
    if bin_width <= 0 || t0 >= t1 {
        return Err(IngestError::InvalidWindow(format!(
            "window [{t0}, {t1}) with bin width {bin_width}"
        )));
    }
    let slots = ((t1 - t0) / bin_width) as usize;
    if slots == 0 {
        return Err(IngestError::InvalidWindow(format!(
            "window [{t0}, {t1}) shorter than one {bin_width}s bin"
        )));
    }
    let cells = grid.cells();
    let end = t0 + slots as i64 * bin_width;

    let shards: Vec<&[TripRecord]> = trips.chunks(SHARD).collect();
    let partials = par::map(&shards, |chunk| {
        let mut counts = vec![0u64; slots * cells];
        let (mut oob, mut oow) = (0usize, 0usize);
        for t in chunk.iter() {
            if t.pickup_time < t0 || t.pickup_time >= end {
                oow += 1;
                continue;
            }
            match grid.assign_cell(t.pickup_lat, t.pickup_lon) {
                Some(c) => counts[((t.pickup_time - t0) / bin_width) as usize * cells + c] += 1,
                None => oob += 1,
            }
        }
        (counts, oob, oow)
    });

    let mut values = vec![0u64; slots * cells];
    let (mut out_of_bounds, mut out_of_window) = (0, 0);
    for (counts, oob, oow) in partials {
        values.iter_mut().zip(counts).for_each(|(v, c)| *v += c);
        out_of_bounds += oob;
        out_of_window += oow;
    }
    let demand = DemandTensor::new(slots, cells, values, bin_width, t0)?.with_grid(*grid);
    if demand.total() == 0 {
        log::warn!("no trips fell inside the grid and time window; demand tensor is all zero");
    }
    Ok(Binned {
        demand,
        out_of_bounds,
        out_of_window,
    })
}

/// Accumulates pickup→dropoff cell counts for pickups in `[t0, t1)`.
pub fn build_od(trips: &[TripRecord], grid: &GridSpec, t0: i64, t1: i64) -> Result<OdTensor, IngestError> {
    grid.validate()?;
    if t0 >= t1 {
        return Err(IngestError::InvalidWindow(format!("window [{t0}, {t1})")));
    }
    if !trips.iter().any(|t| t.dropoff.is_some()) {
        return Err(IngestError::MobilityUnavailable);
    }
    let cells = grid.cells();
    let shards: Vec<&[TripRecord]> = trips.chunks(SHARD).collect();
    let partials = par::map(&shards, |chunk| {
        let mut counts = vec![0u64; cells * cells];
        for t in chunk.iter() {
            if t.pickup_time < t0 || t.pickup_time >= t1 {
                continue;
            }
            let Some((dlat, dlon)) = t.dropoff else { continue };
            if let (Some(i), Some(j)) = (grid.assign_cell(t.pickup_lat, t.pickup_lon), grid.assign_cell(dlat, dlon)) {
                counts[i * cells + j] += 1;
            }
        }
        counts
    });
    let mut counts = vec![0u64; cells * cells];
    for p in partials {
        counts.iter_mut().zip(p).for_each(|(c, v)| *c += v);
    }
    Ok(OdTensor::new(cells, counts, t0, t1)?.with_grid(*grid))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::new(0.0, 2.0, 0.0, 2.0, 2, 2).unwrap()
    }

    fn trip(t: i64, lat: f64, lon: f64) -> TripRecord {
        TripRecord {
            pickup_time: t,
            pickup_lat: lat,
            pickup_lon: lon,
            dropoff: None,
        }
    }

    #[test]
    fn counts_same_cell_same_hour() {
        let trips = vec![trip(10, 0.5, 0.5), trip(20, 0.4, 0.1), trip(3599, 0.9, 0.9)];
        let b = bin_demand(&trips, &grid(), 3600, 0, 7200).unwrap();
        assert_eq!(b.demand.get(0, 0), 3);
        assert_eq!(b.demand.total(), 3);
    }

    #[test]
    fn boundary_goes_to_later_bin() {
        let b = bin_demand(&[trip(3600, 0.5, 0.5)], &grid(), 3600, 0, 7200).unwrap();
        assert_eq!(b.demand.get(1, 0), 1);
        assert_eq!(b.demand.get(0, 0), 0);
    }

    #[test]
    fn partial_last_bin_truncated() {
        let b = bin_demand(&[trip(7300, 0.5, 0.5)], &grid(), 3600, 0, 9000).unwrap();
        assert_eq!(b.demand.slots(), 2);
        assert_eq!(b.out_of_window, 1);
    }

    #[test]
    fn zero_trips_gives_zero_tensor() {
        let b = bin_demand(&[], &grid(), 3600, 0, 3600).unwrap();
        assert_eq!(b.demand.total(), 0);
        assert!(bin_demand(&[], &grid(), 3600, 10, 10).is_err());
    }

    #[test]
    fn od_single_and_diagonal() {
        let mut t = trip(5, 0.5, 0.5);
        t.dropoff = Some((1.5, 1.5));
        let od = build_od(&[t], &grid(), 0, 100).unwrap();
        assert_eq!(od.get(0, 3), 1);
        assert_eq!(od.total(), 1);

        let trips: Vec<TripRecord> = (0..4)
            .map(|c| {
                let lat = 0.5 + (c / 2) as f64;
                let lon = 0.5 + (c % 2) as f64;
                let mut t = trip(1, lat, lon);
                t.dropoff = Some((lat, lon));
                t
            })
            .collect();
        let od = build_od(&trips, &grid(), 0, 100).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(od.get(i, j), u64::from(i == j));
            }
        }
    }

    #[test]
    fn od_requires_dropoffs() {
        assert!(matches!(
            build_od(&[trip(1, 0.5, 0.5)], &grid(), 0, 10),
            Err(IngestError::MobilityUnavailable)
        ));
    }

    #[test]
    fn aggregate_sums_groups() {
        let d = DemandTensor::new(2, 3, vec![1, 2, 3, 4, 5, 6], 3600, 0).unwrap();
        let a = d.aggregate(&[vec![0, 2], vec![1]]).unwrap();
        assert_eq!(a.values(), &[4, 2, 10, 5]);
        assert!(d.aggregate(&[vec![3]]).is_err());
    }
}
