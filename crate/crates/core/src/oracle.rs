//! Procedural scenes and the analytic propagation model used as ground truth.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::{normalize_db, EnvironmentTensor, GridSpec, RadioMapTensor};

/// Closed axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Grown by `m` on every face (shrunk for negative `m`; may become empty).
    pub fn expanded(&self, m: f64) -> Aabb {
        Aabb {
            min: self.min.map(|v| v - m),
            max: self.max.map(|v| v + m),
        }
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|a| self.min[a] > self.max[a])
    }

    /// Parameter interval `[t0, t1] ⊆ [0, 1]` of segment `a + t (b - a)` inside
    /// the box, by slab clipping.
    pub fn clip_segment(&self, a: [f64; 3], b: [f64; 3]) -> Option<(f64, f64)> {
        if self.is_empty() {
            return None;
        }
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for ax in 0..3 {
            let d = b[ax] - a[ax];
            if d == 0.0 {
                if a[ax] < self.min[ax] || a[ax] > self.max[ax] {
                    return None;
                }
                continue;
            }
            let (mut lo, mut hi) = ((self.min[ax] - a[ax]) / d, (self.max[ax] - a[ax]) / d);
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            t0 = t0.max(lo);
            t1 = t1.min(hi);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub region: Aabb,
    pub boxes: Vec<Aabb>,
    pub seed: u64,
}

impl Scene {
    pub fn inside_building(&self, p: [f64; 3]) -> bool {
        self.boxes.iter().any(|b| b.contains(p))
    }

    /// Occupancy by the centroid rule: a voxel is occupied iff its centroid
    /// lies in some (closed) box.
    pub fn voxelize(&self, grid: &GridSpec) -> EnvironmentTensor {
        let data = (0..grid.len())
            .map(|f| self.inside_building(grid.centroid(grid.unindex(f))) as u8)
            .collect();
        EnvironmentTensor { grid: *grid, data }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    /// Region is the cube `[0, side]^3`.
    pub side: f64,
    pub min_boxes: usize,
    pub max_boxes: usize,
    /// Footprint edge lengths are integers in this range (meters).
    pub footprint_min: u32,
    pub footprint_max: u32,
    pub height_min: f64,
    pub height_max: f64,
    /// Minimum street width between footprints.
    pub gap: u32,
    pub attempts_per_box: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            side: 32.0,
            min_boxes: 4,
            max_boxes: 8,
            footprint_min: 3,
            footprint_max: 8,
            height_min: 10.0,
            height_max: 25.0,
            gap: 1,
            attempts_per_box: 500,
        }
    }
}

/// Random non-overlapping buildings with integer-aligned footprints.
pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<Scene> {
    if cfg.min_boxes > cfg.max_boxes
        || cfg.footprint_min == 0
        || cfg.footprint_min > cfg.footprint_max
    {
        return Err(CoreError::Parameter(format!(
            "inconsistent scene config {cfg:?}"
        )));
    }
    if cfg.height_min > cfg.height_max || cfg.height_max > cfg.side || cfg.height_min <= 0.0 {
        return Err(CoreError::Parameter(format!(
            "building heights [{}, {}] invalid",
            cfg.height_min, cfg.height_max
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(cfg.min_boxes..=cfg.max_boxes);
    let side = cfg.side.floor() as i64;
    let mut boxes: Vec<Aabb> = Vec::with_capacity(count);
    let mut attempts = 0;
    while boxes.len() < count {
        if attempts >= cfg.attempts_per_box * count {
            return Err(CoreError::Placement {
                requested: count,
                attempts,
            });
        }
        attempts += 1;
        let w = rng.gen_range(cfg.footprint_min..=cfg.footprint_max) as i64;
        let l = rng.gen_range(cfg.footprint_min..=cfg.footprint_max) as i64;
        if w > side || l > side {
            continue;
        }
        let x = rng.gen_range(0..=side - w);
        let y = rng.gen_range(0..=side - l);
        let h = rng.gen_range(cfg.height_min..=cfg.height_max);
        let cand = Aabb::new(
            [x as f64, y as f64, 0.0],
            [(x + w) as f64, (y + l) as f64, h],
        );
        let g = cfg.gap as f64;
        let clash = boxes.iter().any(|b| {
            cand.min[0] < b.max[0] + g
                && b.min[0] < cand.max[0] + g
                && cand.min[1] < b.max[1] + g
                && b.min[1] < cand.max[1] + g
        });
        if !clash {
            boxes.push(cand);
        }
    }
    Ok(Scene {
        region: Aabb::new([0.0; 3], [cfg.side; 3]),
        boxes,
        seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TxConfig {
    pub height_min: f64,
    pub height_max: f64,
    /// Transmitters are kept at least this far (per axis) from every building.
    pub clearance: f64,
    pub max_attempts: usize,
}

impl Default for TxConfig {
    fn default() -> Self {
        Self {
            height_min: 7.5,
            height_max: 20.0,
            clearance: 1.0,
            max_attempts: 10_000,
        }
    }
}

/// Uniform horizontal position, uniform height, resampled until clear of buildings.
pub fn sample_transmitter<R: Rng>(scene: &Scene, cfg: &TxConfig, rng: &mut R) -> Result<[f64; 3]> {
    let r = &scene.region;
    for _ in 0..cfg.max_attempts {
        let p = [
            rng.gen_range(r.min[0]..r.max[0]),
            rng.gen_range(r.min[1]..r.max[1]),
            rng.gen_range(cfg.height_min..=cfg.height_max),
        ];
        if !scene
            .boxes
            .iter()
            .any(|b| b.expanded(cfg.clearance).contains(p))
        {
            return Ok(p);
        }
    }
    Err(CoreError::Placement {
        requested: 1,
        attempts: cfg.max_attempts,
    })
}

/// Length of segment `ab` inside the union of the scene's boxes.
pub fn segment_obstruction_length(scene: &Scene, a: [f64; 3], b: [f64; 3]) -> f64 {
    let mut iv: Vec<(f64, f64)> = scene
        .boxes
        .iter()
        .filter_map(|bx| bx.clip_segment(a, b))
        .collect();
    if iv.is_empty() {
        return 0.0;
    }
    iv.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut total = 0.0;
    let (mut s, mut e) = iv[0];
    for &(s2, e2) in &iv[1..] {
        if s2 > e {
            total += e - s;
            s = s2;
            e = e2;
        } else {
            e = e.max(e2);
        }
    }
    total += e - s;
    total * dist(a, b)
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmpiricalPathLossParams {
    pub l_fc: f64,
    pub gamma_pl: f64,
    pub kappa: f64,
    pub d_min: f64,
}

impl Default for EmpiricalPathLossParams {
    fn default() -> Self {
        Self {
            l_fc: 43.3,
            gamma_pl: 2.0,
            kappa: 0.0,
            d_min: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OraclePropagationParams {
    pub empirical: EmpiricalPathLossParams,
    /// dB per meter of building traversed.
    pub beta: f64,
    pub tx_power_dbm: f64,
    pub frequency_ghz: f64,
    pub loss_floor: f64,
    pub loss_cap: f64,
}

impl Default for OraclePropagationParams {
    fn default() -> Self {
        Self {
            empirical: EmpiricalPathLossParams::default(),
            beta: 1.5,
            tx_power_dbm: 23.0,
            frequency_ghz: 3.5,
            loss_floor: 40.0,
            loss_cap: 160.0,
        }
    }
}

impl OraclePropagationParams {
    pub fn validate(&self) -> Result<()> {
        let e = &self.empirical;
        if !(e.gamma_pl > 0.0
            && e.d_min > 0.0
            && self.beta >= 0.0
            && self.loss_floor < self.loss_cap)
        {
            return Err(CoreError::Parameter(format!(
                "invalid propagation parameters {self:?}"
            )));
        }
        Ok(())
    }
}

/// `L_fc + 10 gamma log10(max(d, d_min)) + kappa`.
pub fn empirical_path_loss(p: &EmpiricalPathLossParams, d: f64) -> f64 {
    p.l_fc + 10.0 * p.gamma_pl * d.max(p.d_min).log10() + p.kappa
}

/// Distance law plus a linear penalty per obstructed meter, clipped to the loss window.
pub fn path_loss_at(
    scene: &Scene,
    params: &OraclePropagationParams,
    tx: [f64; 3],
    rx: [f64; 3],
) -> f64 {
    let base = empirical_path_loss(&params.empirical, dist(tx, rx));
    let obstructed = if params.beta == 0.0 {
        0.0
    } else {
        segment_obstruction_length(scene, tx, rx)
    };
    (base + params.beta * obstructed).clamp(params.loss_floor, params.loss_cap)
}

/// Raw dB path loss at every voxel centroid.
pub fn radio_map_db(
    scene: &Scene,
    params: &OraclePropagationParams,
    tx: [f64; 3],
    grid: &GridSpec,
) -> RadioMapTensor {
    let data = (0..grid.len())
        .into_par_iter()
        .map(|f| path_loss_at(scene, params, tx, grid.centroid(grid.unindex(f))) as f32)
        .collect();
    RadioMapTensor {
        grid: *grid,
        data,
        normalized: false,
    }
}

/// Normalized map over the loss window `[loss_floor, loss_cap]`.
pub fn generate_radio_map(
    scene: &Scene,
    params: &OraclePropagationParams,
    tx: [f64; 3],
    grid: &GridSpec,
) -> RadioMapTensor {
    let data = (0..grid.len())
        .into_par_iter()
        .map(|f| {
            let db = path_loss_at(scene, params, tx, grid.centroid(grid.unindex(f)));
            normalize_db(db as f32 as f64, params.loss_floor, params.loss_cap) as f32
        })
        .collect();
    RadioMapTensor {
        grid: *grid,
        data,
        normalized: true,
    }
}

/// Analytic line-of-sight reference for the voxel line between the centroids
/// of `from` and `to` on `grid`, ignoring both end voxels.
///
/// Only decides cases that are robust to discretization: `Some(true)` when the
/// interior part of the segment stays more than half a voxel away from every
/// box, `Some(false)` when it runs through a box shrunk by half a voxel for at
/// least one voxel length along the dominant axis, `None` otherwise.
pub fn robust_los_reference(
    scene: &Scene,
    grid: &GridSpec,
    from: [usize; 3],
    to: [usize; 3],
) -> Option<bool> {
    const EPS: f64 = 1e-9;
    let steps = (0..3)
        .map(|a| (to[a] as i64 - from[a] as i64).unsigned_abs())
        .max()
        .unwrap_or(0);
    if steps <= 1 {
        return Some(true);
    }
    let (a, b) = (grid.centroid(from), grid.centroid(to));
    let n = steps as f64;
    let (lo, hi) = (1.0 / n, 1.0 - 1.0 / n);
    let half = grid.delta / 2.0;
    let inner = |bx: &Aabb| {
        bx.clip_segment(a, b)
            .map(|(t0, t1)| (t0.max(lo), t1.min(hi)))
            .filter(|(t0, t1)| t0 <= t1)
    };
    if scene
        .boxes
        .iter()
        .all(|bx| inner(&bx.expanded(half + EPS * grid.delta)).is_none())
    {
        return Some(true);
    }
    let blocked = scene.boxes.iter().any(|bx| {
        inner(&bx.expanded(-half - EPS * grid.delta))
            .is_some_and(|(t0, t1)| (t1 - t0) * n >= 1.0 + 1e-9)
    });
    if blocked {
        Some(false)
    } else {
        None
    }
}
