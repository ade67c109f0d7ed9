//! Discrete line-of-sight on occupancy grids.

use crate::error::{CoreError, Result};
use crate::grid::{EnvironmentTensor, LosTensor, TransmitterTensor};

/// Calls `visit` on every voxel of the 3D Bresenham line from `a` to `b`,
/// endpoints included, stopping early when `visit` returns false.
/// Returns whether the walk completed.
pub fn walk_line(a: [i64; 3], b: [i64; 3], mut visit: impl FnMut([i64; 3]) -> bool) -> bool {
    let d = [
        (b[0] - a[0]).abs(),
        (b[1] - a[1]).abs(),
        (b[2] - a[2]).abs(),
    ];
    let s = [
        (b[0] - a[0]).signum(),
        (b[1] - a[1]).signum(),
        (b[2] - a[2]).signum(),
    ];
    let m = if d[0] >= d[1] && d[0] >= d[2] {
        0
    } else if d[1] >= d[2] {
        1
    } else {
        2
    };
    let (p, q) = ((m + 1) % 3, (m + 2) % 3);
    let mut cur = a;
    let mut ep = 2 * d[p] - d[m];
    let mut eq = 2 * d[q] - d[m];
    if !visit(cur) {
        return false;
    }
    for _ in 0..d[m] {
        cur[m] += s[m];
        if ep >= 0 {
            cur[p] += s[p];
            ep -= 2 * d[m];
        }
        if eq >= 0 {
            cur[q] += s[q];
            eq -= 2 * d[m];
        }
        ep += 2 * d[p];
        eq += 2 * d[q];
        if !visit(cur) {
            return false;
        }
    }
    true
}

/// All voxels of the line from `a` to `b`, endpoints included.
pub fn bresenham_line(a: [i64; 3], b: [i64; 3]) -> Vec<[i64; 3]> {
    let mut out = Vec::new();
    walk_line(a, b, |v| {
        out.push(v);
        true
    });
    out
}

/// 1 where no intermediate voxel on the line from the transmitter voxel is
/// occupied. The transmitter and target voxels themselves are not tested.
pub fn bresenham_los(env: &EnvironmentTensor, tx: &TransmitterTensor) -> Result<LosTensor> {
    if env.grid != tx.grid {
        return Err(CoreError::ShapeMismatch(format!(
            "environment grid {:?} differs from transmitter grid {:?}",
            env.grid, tx.grid
        )));
    }
    let grid = env.grid;
    let t = tx.voxel().map(|v| v as i64);
    let mut data = vec![0u8; grid.len()];
    for (flat, out) in data.iter_mut().enumerate() {
        let v = grid.unindex(flat).map(|x| x as i64);
        let clear = walk_line(t, v, |c| {
            c == t || c == v || !env.occupied(c.map(|x| x as usize))
        });
        *out = clear as u8;
    }
    Ok(LosTensor { grid, data })
}
