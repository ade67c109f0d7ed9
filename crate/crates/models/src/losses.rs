//! Training objective: MSE + lambda * L1 + gamma * altitude-averaged
//! perceptual loss.

use df3d_nn::{Array, Float, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda: f64,
    pub gamma_loss: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            gamma_loss: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.gamma_loss >= 0.0) {
            return Err(ModelError::Config(format!(
                "loss weights must be non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

fn check_shapes<T: Float>(pred: Var<'_, T>, truth: Var<'_, T>) -> Result<()> {
    if pred.shape() != truth.shape() {
        return Err(ModelError::Shape(format!(
            "prediction {:?} vs truth {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    Ok(())
}

pub fn mse_loss<'t, T: Float>(pred: Var<'t, T>, truth: Var<'t, T>) -> Result<Var<'t, T>> {
    check_shapes(pred, truth)?;
    Ok(pred.sub(truth).square().mean())
}

pub fn l1_loss<'t, T: Float>(pred: Var<'t, T>, truth: Var<'t, T>) -> Result<Var<'t, T>> {
    check_shapes(pred, truth)?;
    Ok(pred.sub(truth).abs().mean())
}

#[derive(Clone, Debug)]
struct Stage {
    weight: Array<f64>,
    bias: Option<Array<f64>>,
    pad: [usize; 3],
    pool_before: bool,
    relu: bool,
    tap: bool,
}

/// Frozen 2D feature extractor applied to horizontal slices. Weights live
/// outside any parameter store and enter the tape as constants.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub tag: String,
    in_channels: usize,
    stages: Vec<Stage>,
}

impl FeatureExtractor {
    /// Three conv + ReLU layers (3 -> 8 -> 16 -> 16) with 2x2 average pooling
    /// between them, random weights fixed by `seed`, every layer tapped.
    pub fn random_conv(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = [3, 8, 16, 16];
        let stages = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let fan_in = (w[0] * 9) as f64;
                let bound = (6.0 / fan_in).sqrt();
                let shape = [w[1], w[0], 1, 3, 3];
                let weight = Array::from_fn(&shape, |_| rng.gen_range(-bound..bound));
                Stage {
                    weight,
                    bias: None,
                    pad: [0, 1, 1],
                    pool_before: i > 0,
                    relu: true,
                    tap: true,
                }
            })
            .collect();
        Self {
            tag: format!("random-conv-v1-seed{seed}"),
            in_channels: 3,
            stages,
        }
    }

    /// Features equal the slices themselves.
    pub fn identity() -> Self {
        Self {
            tag: "identity".into(),
            in_channels: 1,
            stages: Vec::new(),
        }
    }

    /// One fixed linear layer; `kernel` has shape `[cout, cin, 1, kh, kw]`.
    pub fn linear(kernel: Array<f64>, pad: [usize; 2]) -> Self {
        let s = kernel.shape();
        assert!(
            s.len() == 5 && s[2] == 1,
            "linear extractor kernel must be [cout, cin, 1, kh, kw]"
        );
        let in_channels = s[1];
        let stage = Stage {
            weight: kernel,
            bias: None,
            pad: [0, pad[0], pad[1]],
            pool_before: false,
            relu: false,
            tap: true,
        };
        Self {
            tag: "linear".into(),
            in_channels,
            stages: vec![stage],
        }
    }

    pub fn taps(&self) -> usize {
        self.stages.iter().filter(|s| s.tap).count().max(1)
    }

    /// Rejects slice sizes the pooling stages cannot divide.
    pub fn check_slice(&self, dims: [usize; 2]) -> Result<()> {
        let pools = self.stages.iter().filter(|s| s.pool_before).count() as u32;
        let f = 2usize.pow(pools);
        if dims.iter().any(|&d| d == 0 || d % f != 0) {
            return Err(ModelError::Shape(format!(
                "slice {dims:?} not divisible by {f} for extractor {}",
                self.tag
            )));
        }
        Ok(())
    }

    /// `x`: `[S, 1, 1, I, J]` slices. Returns the tapped feature maps.
    fn features<'t, T: Float>(&self, x: Var<'t, T>) -> Vec<Var<'t, T>> {
        let tape = x.tape();
        let mut h = if self.in_channels > 1 {
            Var::concat(&vec![x; self.in_channels], 1)
        } else {
            x
        };
        if self.stages.is_empty() {
            return vec![h];
        }
        let mut taps = Vec::new();
        for st in &self.stages {
            if st.pool_before {
                h = h.avg_pool3d([1, 2, 2]);
            }
            let w = tape.constant(st.weight.cast());
            let b = st.bias.as_ref().map(|b| tape.constant(b.cast()));
            h = h.conv3d(w, b, st.pad);
            if st.relu {
                h = h.relu();
            }
            if st.tap {
                taps.push(h);
            }
        }
        taps
    }
}

/// Splits `[N, 1, I, J, K]` into `N*K` horizontal slices `[N*K, 1, 1, I, J]`
/// (the last axis is altitude).
pub fn altitude_slices<'t, T: Float>(x: Var<'t, T>) -> Var<'t, T> {
    let s = x.shape();
    let (n, i, j, k) = (s[0], s[2], s[3], s[4]);
    x.permute(&[0, 4, 1, 2, 3]).reshape(&[n * k, 1, 1, i, j])
}

pub fn perceptual_loss<'t, T: Float>(
    pred: Var<'t, T>,
    truth: Var<'t, T>,
    fx: &FeatureExtractor,
) -> Result<Var<'t, T>> {
    check_shapes(pred, truth)?;
    let s = pred.shape();
    if s.len() != 5 || s[1] != 1 || s[4] == 0 {
        return Err(ModelError::Shape(format!(
            "perceptual loss expects [N, 1, I, J, K], got {s:?}"
        )));
    }
    fx.check_slice([s[2], s[3]])?;
    let fp = fx.features(altitude_slices(pred));
    let ft = fx.features(altitude_slices(truth));
    let n = fp.len();
    let mut total = fp[0].sub(ft[0]).square().mean();
    for (a, b) in fp.iter().zip(&ft).skip(1) {
        total = total.add(a.sub(*b).square().mean());
    }
    Ok(total.scale(T::from_f64c(1.0 / n as f64)))
}

/// Scalar values of each term, for logging.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub mse: f64,
    pub l1: f64,
    pub perceptual: f64,
    pub total: f64,
}

pub struct LossBreakdown<'t, T> {
    pub mse: Var<'t, T>,
    pub l1: Var<'t, T>,
    pub perceptual: Var<'t, T>,
    pub total: Var<'t, T>,
}

impl<T: Float> LossBreakdown<'_, T> {
    pub fn values(&self) -> LossValues {
        let f = |v: &Var<'_, T>| v.item().to_f64().unwrap_or(f64::NAN);
        LossValues {
            mse: f(&self.mse),
            l1: f(&self.l1),
            perceptual: f(&self.perceptual),
            total: f(&self.total),
        }
    }
}

pub fn combined_loss<'t, T: Float>(
    pred: Var<'t, T>,
    truth: Var<'t, T>,
    w: &LossWeights,
    fx: &FeatureExtractor,
) -> Result<LossBreakdown<'t, T>> {
    w.validate()?;
    let mse = mse_loss(pred, truth)?;
    let l1 = l1_loss(pred, truth)?;
    let perceptual = perceptual_loss(pred, truth, fx)?;
    let mut total = mse.add(l1.scale(T::from_f64c(w.lambda)));
    if w.gamma_loss != 0.0 {
        total = total.add(perceptual.scale(T::from_f64c(w.gamma_loss)));
    }
    Ok(LossBreakdown {
        mse,
        l1,
        perceptual,
        total,
    })
}

/// The weighted sum used by [`combined_loss`], on plain numbers.
pub fn combine_values(mse: f64, l1: f64, perceptual: f64, w: &LossWeights) -> f64 {
    mse + w.lambda * l1 + w.gamma_loss * perceptual
}
