//! Voxel grids and the tensors defined on them.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Uniform voxel grid. Voxel `(i, j, k)` has centroid `origin + ((i, j, k) + 0.5) * delta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: [f64; 3],
    pub delta: f64,
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn new(origin: [f64; 3], delta: f64, dims: [usize; 3]) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(CoreError::Parameter(format!(
                "resolution must be positive, got {delta}"
            )));
        }
        if dims.contains(&0) {
            return Err(CoreError::Parameter(format!(
                "grid dims must be >= 1, got {dims:?}"
            )));
        }
        Ok(Self {
            origin,
            delta,
            dims,
        })
    }

    /// Axis-aligned cube `[0, side]^3` at resolution `delta`.
    pub fn cube(side: f64, delta: f64) -> Result<Self> {
        let n = integer_ratio(side, delta)?;
        Self::new([0.0; 3], delta, [n; 3])
    }

    pub fn side_lengths(&self) -> [f64; 3] {
        self.dims.map(|d| d as f64 * self.delta)
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major flat index (i outermost).
    pub fn index(&self, [i, j, k]: [usize; 3]) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn unindex(&self, flat: usize) -> [usize; 3] {
        let k = flat % self.dims[2];
        let j = (flat / self.dims[2]) % self.dims[1];
        [flat / (self.dims[1] * self.dims[2]), j, k]
    }

    pub fn centroid(&self, idx: [usize; 3]) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + (idx[a] as f64 + 0.5) * self.delta)
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let s = self.side_lengths();
        (0..3).all(|a| p[a] >= self.origin[a] && p[a] <= self.origin[a] + s[a])
    }

    /// Voxel containing `p`; points on the upper boundary belong to the last voxel.
    pub fn voxel_of(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        if !self.contains(p) {
            return None;
        }
        Some(std::array::from_fn(|a| {
            let f = ((p[a] - self.origin[a]) / self.delta).floor() as usize;
            f.min(self.dims[a] - 1)
        }))
    }

    /// Integer ratio `coarse_delta / delta`, requiring every dim to divide evenly.
    pub fn ratio_to(&self, coarse_delta: f64) -> Result<usize> {
        let r = integer_ratio(coarse_delta, self.delta)?;
        if let Some(a) = (0..3).find(|&a| !self.dims[a].is_multiple_of(r)) {
            return Err(CoreError::ResolutionMismatch(format!(
                "dim {} on axis {a} not divisible by ratio {r}",
                self.dims[a]
            )));
        }
        Ok(r)
    }

    /// The aligned grid at `coarse_delta` covering the same region.
    pub fn coarsen(&self, coarse_delta: f64) -> Result<GridSpec> {
        let r = self.ratio_to(coarse_delta)?;
        GridSpec::new(self.origin, self.delta * r as f64, self.dims.map(|d| d / r))
    }
}

/// `a / b` as an exact positive integer, or a resolution-mismatch error.
pub fn integer_ratio(a: f64, b: f64) -> Result<usize> {
    let r = (a / b).round();
    if r < 1.0 || (r * b - a).abs() > 1e-9 * a.abs().max(1.0) {
        return Err(CoreError::ResolutionMismatch(format!(
            "{a} is not a positive integer multiple of {b}"
        )));
    }
    Ok(r as usize)
}

fn check_binary(data: &[u8], what: &str) -> Result<()> {
    match data.iter().position(|&v| v > 1) {
        Some(p) => Err(CoreError::Parameter(format!(
            "{what} entry {p} is {}, expected 0 or 1",
            data[p]
        ))),
        None => Ok(()),
    }
}

fn check_len(grid: &GridSpec, len: usize, what: &str) -> Result<()> {
    if grid.len() != len {
        return Err(CoreError::ShapeMismatch(format!(
            "{what}: {len} values for grid {:?}",
            grid.dims
        )));
    }
    Ok(())
}

/// Binary building occupancy.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentTensor {
    pub grid: GridSpec,
    pub data: Vec<u8>,
}

impl EnvironmentTensor {
    pub fn new(grid: GridSpec, data: Vec<u8>) -> Result<Self> {
        check_len(&grid, data.len(), "environment")?;
        check_binary(&data, "environment")?;
        Ok(Self { grid, data })
    }

    pub fn empty(grid: GridSpec) -> Self {
        Self {
            data: vec![0; grid.len()],
            grid,
        }
    }

    pub fn occupied(&self, idx: [usize; 3]) -> bool {
        self.data[self.grid.index(idx)] == 1
    }

    pub fn occupied_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }
}

/// One-hot transmitter voxel plus the continuous location it was derived from.
#[derive(Clone, Debug, PartialEq)]
pub struct TransmitterTensor {
    pub grid: GridSpec,
    pub data: Vec<u8>,
    pub location: [f64; 3],
}

impl TransmitterTensor {
    pub fn from_location(grid: GridSpec, location: [f64; 3]) -> Result<Self> {
        let idx = grid.voxel_of(location).ok_or_else(|| {
            CoreError::Parameter(format!("transmitter {location:?} outside grid"))
        })?;
        let mut data = vec![0; grid.len()];
        data[grid.index(idx)] = 1;
        Ok(Self {
            grid,
            data,
            location,
        })
    }

    /// Validates a stored one-hot tensor against its location.
    pub fn new(grid: GridSpec, data: Vec<u8>, location: [f64; 3]) -> Result<Self> {
        check_len(&grid, data.len(), "transmitter")?;
        check_binary(&data, "transmitter")?;
        let expected = Self::from_location(grid, location)?;
        if expected.data != data {
            return Err(CoreError::Parameter(format!(
                "transmitter tensor is not one-hot at the voxel containing {location:?}"
            )));
        }
        Ok(expected)
    }

    pub fn voxel(&self) -> [usize; 3] {
        self.grid
            .voxel_of(self.location)
            .expect("location validated on construction")
    }
}

/// Binary visibility from the transmitter voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct LosTensor {
    pub grid: GridSpec,
    pub data: Vec<u8>,
}

/// Path loss per voxel, either raw dB or normalized to [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct RadioMapTensor {
    pub grid: GridSpec,
    pub data: Vec<f32>,
    pub normalized: bool,
}

impl RadioMapTensor {
    pub fn new(grid: GridSpec, data: Vec<f32>, normalized: bool) -> Result<Self> {
        check_len(&grid, data.len(), "radio map")?;
        if let Some(p) = data
            .iter()
            .position(|v| !v.is_finite() || (normalized && !(0.0..=1.0).contains(v)))
        {
            return Err(CoreError::Parameter(format!(
                "radio map entry {p} = {} out of range",
                data[p]
            )));
        }
        Ok(Self {
            grid,
            data,
            normalized,
        })
    }

    pub fn at(&self, idx: [usize; 3]) -> f32 {
        self.data[self.grid.index(idx)]
    }
}

/// Coarse voxel is occupied iff any of its fine voxels is.
pub fn downscale_occupancy(env: &EnvironmentTensor, delta_l: f64) -> Result<EnvironmentTensor> {
    let r = env.grid.ratio_to(delta_l)?;
    let coarse = env.grid.coarsen(delta_l)?;
    let mut data = vec![0u8; coarse.len()];
    for (flat, &v) in env.data.iter().enumerate() {
        if v == 1 {
            let [i, j, k] = env.grid.unindex(flat);
            data[coarse.index([i / r, j / r, k / r])] = 1;
        }
    }
    Ok(EnvironmentTensor { grid: coarse, data })
}

/// One-hot at the coarse voxel containing the transmitter location.
pub fn downscale_transmitter(tx: &TransmitterTensor, delta_l: f64) -> Result<TransmitterTensor> {
    let coarse = tx.grid.coarsen(delta_l)?;
    TransmitterTensor::from_location(coarse, tx.location)
}

/// Clip to `[lo, hi]` dB then map affinely onto [0, 1].
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn normalize_rm(rm: &RadioMapTensor, lo_db: f64, hi_db: f64) -> Result<RadioMapTensor> {
    if !(lo_db < hi_db) {
        return Err(CoreError::Parameter(format!(
            "normalization window [{lo_db}, {hi_db}] is empty"
        )));
    }
    if rm.normalized {
        return Err(CoreError::Parameter(
            "radio map is already normalized".into(),
        ));
    }
    let data = rm
        .data
        .iter()
        .map(|&x| normalize_db(x as f64, lo_db, hi_db) as f32)
        .collect();
    Ok(RadioMapTensor {
        grid: rm.grid,
        data,
        normalized: true,
    })
}

pub fn normalize_db(x: f64, lo_db: f64, hi_db: f64) -> f64 {
    (x.clamp(lo_db, hi_db) - lo_db) / (hi_db - lo_db)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(n: usize) -> GridSpec {
        GridSpec::new([0.0; 3], 1.0, [n; 3]).unwrap()
    }

    #[test]
    fn single_voxel_downscale() {
        let mut env = EnvironmentTensor::empty(g(8));
        let i = env.grid.index([3, 3, 3]);
        env.data[i] = 1;
        let c = downscale_occupancy(&env, 2.0).unwrap();
        assert_eq!(c.grid.dims, [4; 3]);
        assert_eq!(c.occupied_count(), 1);
        assert!(c.occupied([1, 1, 1]));
        assert!(downscale_occupancy(&env, 3.0).is_err());
        assert!(downscale_occupancy(&env, 2.5).is_err());
    }

    #[test]
    fn transmitter_floor_rule() {
        let tx = TransmitterTensor::from_location(g(8), [5.5, 5.5, 5.5]).unwrap();
        let c = downscale_transmitter(&tx, 4.0).unwrap();
        assert_eq!(c.voxel(), [1, 1, 1]);
        assert_eq!(c.data.iter().map(|&v| v as u32).sum::<u32>(), 1);
        assert_eq!(c.location, tx.location);
        let corner = TransmitterTensor::from_location(g(8), [0.2, 0.1, 0.9]).unwrap();
        assert_eq!(
            downscale_transmitter(&corner, 4.0).unwrap().voxel(),
            [0, 0, 0]
        );
        let top = TransmitterTensor::from_location(g(8), [8.0, 8.0, 8.0]).unwrap();
        assert_eq!(top.voxel(), [7, 7, 7]);
    }

    #[test]
    fn normalization_endpoints() {
        let rm = RadioMapTensor::new(g(1), vec![40.0], false).unwrap();
        assert_eq!(normalize_rm(&rm, 40.0, 160.0).unwrap().data, vec![0.0]);
        assert_eq!(normalize_db(160.0, 40.0, 160.0), 1.0);
        assert_eq!(normalize_db(100.0, 40.0, 160.0), 0.5);
        assert_eq!(normalize_db(10.0, 40.0, 160.0), 0.0);
        assert!(normalize_rm(&rm, 50.0, 50.0).is_err());
    }

    #[test]
    fn centroids_and_indexing() {
        let grid = GridSpec::new([1.0, 2.0, 3.0], 0.5, [2, 3, 4]).unwrap();
        assert_eq!(grid.centroid([1, 2, 3]), [1.75, 3.25, 4.75]);
        for f in 0..grid.len() {
            assert_eq!(grid.index(grid.unindex(f)), f);
        }
        assert_eq!(grid.side_lengths(), [1.0, 1.5, 2.0]);
        assert!(GridSpec::new([0.0; 3], 0.0, [1; 3]).is_err());
    }
}
