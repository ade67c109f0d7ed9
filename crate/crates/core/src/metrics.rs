//! NMSE, RMSE, 3D SSIM and PSNR over dense 3D volumes.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;

fn check_pair(a: usize, b: usize) -> Result<()> {
    if a != b || a == 0 {
        return Err(CoreError::ShapeMismatch(format!(
            "metric inputs have {a} and {b} values"
        )));
    }
    Ok(())
}

fn sq_err<T: Copy + Into<f64>>(pred: &[T], truth: &[T]) -> f64 {
    pred.iter()
        .zip(truth)
        .map(|(&p, &t)| (p.into() - t.into()).powi(2))
        .sum()
}

/// `||pred - truth||^2 / ||truth||^2`.
pub fn nmse<T: Copy + Into<f64>>(pred: &[T], truth: &[T]) -> Result<f64> {
    check_pair(pred.len(), truth.len())?;
    let den: f64 = truth.iter().map(|&t| t.into().powi(2)).sum();
    if den == 0.0 {
        return Err(CoreError::UndefinedMetric(
            "NMSE of an all-zero reference".into(),
        ));
    }
    Ok(sq_err(pred, truth) / den)
}

pub fn rmse<T: Copy + Into<f64>>(pred: &[T], truth: &[T]) -> Result<f64> {
    check_pair(pred.len(), truth.len())?;
    Ok((sq_err(pred, truth) / pred.len() as f64).sqrt())
}

/// `10 log10(n * max(truth)^2 / ||pred - truth||^2)`; `+inf` on exact equality.
pub fn psnr<T: Copy + Into<f64>>(pred: &[T], truth: &[T]) -> Result<f64> {
    check_pair(pred.len(), truth.len())?;
    let e = sq_err(pred, truth);
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    let pmax = truth
        .iter()
        .map(|&t| t.into())
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(10.0 * (pred.len() as f64 * pmax * pmax / e).log10())
}

/// Mean SSIM over the valid interior, using a cubic box window with
/// population statistics.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn ssim3d<T: Copy + Into<f64>>(
    pred: &[T],
    truth: &[T],
    dims: [usize; 3],
    window: usize,
    dynamic_range: f64,
) -> Result<f64> {
    check_pair(pred.len(), truth.len())?;
    if pred.len() != dims.iter().product::<usize>() {
        return Err(CoreError::ShapeMismatch(format!(
            "{} values for dims {dims:?}",
            pred.len()
        )));
    }
    if window.is_multiple_of(2) || window == 0 {
        return Err(CoreError::Parameter(format!(
            "SSIM window must be odd, got {window}"
        )));
    }
    if dims.iter().any(|&d| d < window) {
        return Err(CoreError::Parameter(format!(
            "SSIM window {window} larger than dims {dims:?}"
        )));
    }
    if !(dynamic_range > 0.0) {
        return Err(CoreError::Parameter(format!(
            "dynamic range must be positive, got {dynamic_range}"
        )));
    }
    let x: Vec<f64> = pred.iter().map(|&v| v.into()).collect();
    let y: Vec<f64> = truth.iter().map(|&v| v.into()).collect();
    let c1 = (K1 * dynamic_range).powi(2);
    let c2 = (K2 * dynamic_range).powi(2);
    let [d0, d1, d2] = dims;
    let n = (window * window * window) as f64;
    let at = |i: usize, j: usize, k: usize| (i * d1 + j) * d2 + k;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=d0 - window {
        for j in 0..=d1 - window {
            for k in 0..=d2 - window {
                let (mut sx, mut sy) = (0.0, 0.0);
                for a in i..i + window {
                    for b in j..j + window {
                        let o = at(a, b, k);
                        sx += x[o..o + window].iter().sum::<f64>();
                        sy += y[o..o + window].iter().sum::<f64>();
                    }
                }
                let (mx, my) = (sx / n, sy / n);
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for a in i..i + window {
                    for b in j..j + window {
                        let o = at(a, b, k);
                        for (&p, &q) in x[o..o + window].iter().zip(&y[o..o + window]) {
                            let (dx, dy) = (p - mx, q - my);
                            vx += dx * dx;
                            vy += dy * dy;
                            cxy += dx * dy;
                        }
                    }
                }
                let (vx, vy, cxy) = (vx / n, vy / n, cxy / n);
                total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub ssim_window: usize,
    pub dynamic_range: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            ssim_window: 7,
            dynamic_range: 1.0,
        }
    }
}

/// One sample's metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub nmse: f64,
    pub rmse: f64,
    pub ssim: f64,
    /// `None` encodes +inf (exact reconstruction) so the value survives JSON.
    pub psnr: Option<f64>,
}

pub fn sample_metrics<T: Copy + Into<f64>>(
    pred: &[T],
    truth: &[T],
    dims: [usize; 3],
    cfg: &MetricConfig,
) -> Result<SampleMetrics> {
    let p = psnr(pred, truth)?;
    Ok(SampleMetrics {
        nmse: nmse(pred, truth)?,
        rmse: rmse(pred, truth)?,
        ssim: ssim3d(pred, truth, dims, cfg.ssim_window, cfg.dynamic_range)?,
        psnr: p.is_finite().then_some(p),
    })
}

/// Per-sample arithmetic means.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub nmse: f64,
    pub rmse: f64,
    pub ssim: f64,
    pub psnr: Option<f64>,
    pub sample_count: usize,
}

impl MetricReport {
    pub fn from_samples(samples: &[SampleMetrics]) -> Result<Self> {
        if samples.is_empty() {
            return Err(CoreError::UndefinedMetric("no samples to aggregate".into()));
        }
        let n = samples.len() as f64;
        let mean = |f: fn(&SampleMetrics) -> f64| samples.iter().map(f).sum::<f64>() / n;
        let psnr = if samples.iter().any(|s| s.psnr.is_none()) {
            None
        } else {
            Some(samples.iter().map(|s| s.psnr.unwrap()).sum::<f64>() / n)
        };
        Ok(Self {
            nmse: mean(|s| s.nmse),
            rmse: mean(|s| s.rmse),
            ssim: mean(|s| s.ssim),
            psnr,
            sample_count: samples.len(),
        })
    }

    pub fn psnr_value(&self) -> f64 {
        self.psnr.unwrap_or(f64::INFINITY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_values() {
        let t = vec![1.0f64, 0.5, 0.25, 0.75];
        let p: Vec<f64> = t.iter().map(|v| 2.0 * v).collect();
        assert_eq!(nmse(&p, &t).unwrap(), 1.0);
        assert_eq!(nmse(&t, &t).unwrap(), 0.0);
        let off: Vec<f64> = t.iter().map(|v| v + 0.1).collect();
        assert!((rmse(&off, &t).unwrap() - 0.1).abs() < 1e-12);
        assert!((psnr(&off, &t).unwrap() - 20.0).abs() < 1e-9);
        let half: Vec<f64> = t.iter().map(|v| v + 0.05).collect();
        assert!(
            (psnr(&half, &t).unwrap() - psnr(&off, &t).unwrap() - 20.0 * 2f64.log10()).abs() < 1e-9
        );
        assert_eq!(psnr(&t, &t).unwrap(), f64::INFINITY);
        assert!(nmse(&t, &[0.0; 4]).is_err());
    }

    #[test]
    fn ssim_fixed_points() {
        let dims = [5, 5, 5];
        let t: Vec<f64> = (0..125).map(|i| ((i * 37) % 11) as f64 / 10.0).collect();
        assert!((ssim3d(&t, &t, dims, 3, 1.0).unwrap() - 1.0).abs() < 1e-15);
        let c = vec![0.3f64; 125];
        assert_eq!(ssim3d(&c, &c, dims, 5, 1.0).unwrap(), 1.0);
        let inv: Vec<f64> = t.iter().map(|v| 1.0 - v).collect();
        assert!(ssim3d(&inv, &t, dims, 3, 1.0).unwrap() < 1.0);
        assert!(ssim3d(&t, &t, dims, 7, 1.0).is_err());
        assert!(ssim3d(&t, &t, dims, 2, 1.0).is_err());
    }
}
