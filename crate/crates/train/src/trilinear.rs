//! Trilinear upsampling of centroid-sampled maps.

/// Interpolates `coarse` (values at coarse voxel centroids, row-major with
/// the last axis fastest) at the centroids of a grid `factor` times finer.
/// Points outside the outermost centroids are linearly extrapolated from the
/// two nearest cells, so affine fields are reproduced exactly everywhere.
pub fn trilinear_upsample(coarse: &[f32], dims: [usize; 3], factor: usize) -> Vec<f32> {
    assert_eq!(
        coarse.len(),
        dims.iter().product::<usize>(),
        "coarse data does not match dims"
    );
    assert!(factor > 0, "factor must be positive");
    let fine = dims.map(|d| d * factor);
    // Per axis and fine index: lower cell, upper cell, weight of the upper cell.
    let taps: Vec<Vec<(usize, usize, f64)>> = (0..3)
        .map(|a| {
            (0..fine[a])
                .map(|i| {
                    let n = dims[a];
                    let u = (i as f64 + 0.5) / factor as f64 - 0.5;
                    if n == 1 {
                        return (0, 0, 0.0);
                    }
                    let lo = (u.floor().max(0.0) as usize).min(n - 2);
                    (lo, lo + 1, u - lo as f64)
                })
                .collect()
        })
        .collect();
    let at = |i: usize, j: usize, k: usize| coarse[(i * dims[1] + j) * dims[2] + k] as f64;
    let mut out = Vec::with_capacity(fine.iter().product());
    for &(i0, i1, wi) in &taps[0] {
        for &(j0, j1, wj) in &taps[1] {
            for &(k0, k1, wk) in &taps[2] {
                let lerp = |a: f64, b: f64, w: f64| a + (b - a) * w;
                let c00 = lerp(at(i0, j0, k0), at(i0, j0, k1), wk);
                let c01 = lerp(at(i0, j1, k0), at(i0, j1, k1), wk);
                let c10 = lerp(at(i1, j0, k0), at(i1, j0, k1), wk);
                let c11 = lerp(at(i1, j1, k0), at(i1, j1, k1), wk);
                out.push(lerp(lerp(c00, c01, wj), lerp(c10, c11, wj), wi) as f32);
            }
        }
    }
    out
}
