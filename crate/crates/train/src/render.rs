//! Horizontal slices of radio maps as PNG images.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::error::{Result, TrainError};

/// Gap between side-by-side panels, in pixels.
const GAP: usize = 4;

/// Anchor colors of the map palette, dark (0) to bright (1).
const PALETTE: [[f32; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

pub fn colormap(v: f32) -> [u8; 3] {
    let t = if v.is_finite() {
        v.clamp(0.0, 1.0)
    } else {
        0.0
    } * (PALETTE.len() - 1) as f32;
    let i = (t.floor() as usize).min(PALETTE.len() - 2);
    let w = t - i as f32;
    let (a, b) = (PALETTE[i], PALETTE[i + 1]);
    [0, 1, 2].map(|c| (a[c] + (b[c] - a[c]) * w).round() as u8)
}

/// A map and its dims (row-major, last axis is altitude).
pub struct MapView<'a> {
    pub data: &'a [f32],
    pub dims: [usize; 3],
}

/// One PNG per altitude index with the maps side by side; each voxel
/// becomes a `scale` x `scale` block. Files are `<prefix>_k<k>.png`.
pub fn render_slices(
    maps: &[MapView<'_>],
    altitudes: &[usize],
    prefix: &Path,
    scale: usize,
) -> Result<Vec<PathBuf>> {
    let first = maps
        .first()
        .ok_or_else(|| TrainError::Render("no maps given".into()))?;
    let dims = first.dims;
    if maps
        .iter()
        .any(|m| m.dims != dims || m.data.len() != dims.iter().product::<usize>())
    {
        return Err(TrainError::Render("maps differ in shape".into()));
    }
    if let Some(&k) = altitudes.iter().find(|&&k| k >= dims[2]) {
        return Err(TrainError::Index(format!(
            "altitude {k} outside 0..{}",
            dims[2]
        )));
    }
    let scale = scale.max(1);
    let (pw, ph) = (dims[0] * scale, dims[1] * scale);
    let width = maps.len() * pw + (maps.len() - 1) * GAP;
    if let Some(parent) = prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| TrainError::io(parent, e))?;
    }
    let stem = prefix
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("slice");
    let mut written = Vec::new();
    for &k in altitudes {
        let mut pixels = vec![255u8; width * ph * 3];
        for (m, map) in maps.iter().enumerate() {
            let x0 = m * (pw + GAP);
            for py in 0..ph {
                // Image rows run from high j (top) to low j.
                let j = dims[1] - 1 - py / scale;
                for px in 0..pw {
                    let i = px / scale;
                    let v = map.data[(i * dims[1] + j) * dims[2] + k];
                    let o = (py * width + x0 + px) * 3;
                    pixels[o..o + 3].copy_from_slice(&colormap(v));
                }
            }
        }
        let path = prefix.with_file_name(format!("{stem}_k{k:03}.png"));
        let file = File::create(&path).map_err(|e| TrainError::io(&path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, ph as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc
            .write_header()
            .map_err(|e| TrainError::Render(e.to_string()))?;
        w.write_image_data(&pixels)
            .map_err(|e| TrainError::Render(e.to_string()))?;
        w.finish().map_err(|e| TrainError::Render(e.to_string()))?;
        written.push(path);
    }
    Ok(written)
}
