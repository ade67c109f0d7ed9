//! End-to-end evaluation of the four two-stage methods on the test split.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use df3d_core::metrics::{sample_metrics, MetricConfig, MetricReport, SampleMetrics};
use df3d_models::{LrNet, SrNet};
use df3d_nn::{Ctx, ParamStore, Tape};
use serde::{Deserialize, Serialize};

use crate::data::{stack, Prepared};
use crate::error::Result;
use crate::phases::{load_sr, load_stage1, predict_stage1};
use crate::trilinear::trilinear_upsample;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "RadioUNet3D-Trilinear")]
    RadioUNet3DTrilinear,
    #[serde(rename = "RadioUNet3D-SR")]
    RadioUNet3DSr,
    #[serde(rename = "LRNet-Trilinear")]
    LrNetTrilinear,
    Proposed,
    /// Ground truth scored against itself; validates the harness.
    Truth,
}

impl Method {
    pub const TABLE: [Method; 4] = [
        Method::RadioUNet3DTrilinear,
        Method::RadioUNet3DSr,
        Method::LrNetTrilinear,
        Method::Proposed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::RadioUNet3DTrilinear => "RadioUNet3D-Trilinear",
            Method::RadioUNet3DSr => "RadioUNet3D-SR",
            Method::LrNetTrilinear => "LRNet-Trilinear",
            Method::Proposed => "Proposed",
            Method::Truth => "Truth (self)",
        }
    }
}

/// Checkpoints needed by the methods being evaluated.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SuiteCheckpoints {
    pub lrnet: Option<PathBuf>,
    pub radiounet3d: Option<PathBuf>,
    /// SR-Net fine-tuned on LR-Net predictions.
    pub sr_proposed: Option<PathBuf>,
    /// SR-Net fine-tuned on RadioUNet3D predictions.
    pub sr_radiounet3d: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub env_id: usize,
    pub tx_id: usize,
    pub metrics: SampleMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub report: MetricReport,
    pub samples: Vec<SampleRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub rows: Vec<MethodResult>,
}

impl SuiteReport {
    pub fn get(&self, m: Method) -> Option<&MethodResult> {
        self.rows.iter().find(|r| r.method == m)
    }

    pub fn nmse(&self, m: Method) -> Option<f64> {
        self.get(m).map(|r| r.report.nmse)
    }

    /// Aligned text table; arrows give the better direction.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<24}{:>12}{:>12}{:>12}{:>12}\n",
            "Method", "NMSE ↓", "RMSE ↓", "SSIM ↑", "PSNR ↑"
        );
        for r in &self.rows {
            let psnr = match r.report.psnr {
                Some(p) => format!("{p:.3}"),
                None => "inf".to_string(),
            };
            let _ = writeln!(
                s,
                "{:<24}{:>12.5}{:>12.5}{:>12.5}{:>12}",
                r.method.name(),
                r.report.nmse,
                r.report.rmse,
                r.report.ssim,
                psnr
            );
        }
        s
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| crate::TrainError::io(dir, e))?;
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, serde_json::to_vec_pretty(self)?)
            .map_err(|e| crate::TrainError::io(&json, e))?;
        let txt = dir.join(format!("{stem}.txt"));
        std::fs::write(&txt, self.table()).map_err(|e| crate::TrainError::io(&txt, e))
    }
}

/// SR-Net predictions from `sr_input`, one fine map per sample.
pub fn predict_sr(
    net: &SrNet,
    store: &ParamStore<f32>,
    samples: &[Prepared],
    batch: usize,
) -> Vec<Vec<f32>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let tape = Tape::inference();
        let ctx = Ctx::eval(&tape, store);
        let env = ctx.input(stack(chunk.iter().map(|p| &p.fine()[0])));
        let tx = ctx.input(stack(chunk.iter().map(|p| &p.fine()[1])));
        let lr = ctx.input(stack(chunk.iter().map(|p| &p.sr_input)));
        let y = net.forward(&ctx, env, tx, lr).value();
        let per = y.len() / chunk.len();
        out.extend(y.data().chunks(per).map(|c| c.to_vec()));
    }
    out
}

/// Trilinear upsampling of `sr_input`, clamped to the normalized range.
pub fn predict_trilinear(samples: &[Prepared]) -> Vec<Vec<f32>> {
    samples
        .iter()
        .map(|p| {
            let f = p.fine_dims[0] / p.coarse_dims[0];
            trilinear_upsample(p.sr_input.data(), p.coarse_dims, f)
                .into_iter()
                .map(|v| v.clamp(0.0, 1.0))
                .collect()
        })
        .collect()
}

fn score(
    method: Method,
    samples: &[Prepared],
    preds: &[Vec<f32>],
    cfg: &MetricConfig,
) -> Result<MethodResult> {
    let rows = samples
        .iter()
        .zip(preds)
        .map(|(p, pred)| {
            Ok(SampleRow {
                env_id: p.env_id,
                tx_id: p.tx_id,
                metrics: sample_metrics(pred, p.hr().data(), p.fine_dims, cfg)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = MetricReport::from_samples(&rows.iter().map(|r| r.metrics).collect::<Vec<_>>())?;
    Ok(MethodResult {
        method,
        report,
        samples: rows,
    })
}

fn stage1_inputs(net: &LrNet, store: &ParamStore<f32>, test: &[Prepared]) -> Vec<Prepared> {
    let mut s = test.to_vec();
    predict_stage1(net, store, &mut s, 16);
    s
}

/// Scores each method on `test` (which must carry fine labels).
pub fn evaluate_suite(
    ck: &SuiteCheckpoints,
    test: &[Prepared],
    methods: &[Method],
    cfg: &MetricConfig,
) -> Result<SuiteReport> {
    let need = |p: &Option<PathBuf>, what: &str| {
        p.clone()
            .ok_or_else(|| crate::TrainError::Missing(format!("{what} checkpoint not given")))
    };
    let mut rows = Vec::new();
    let mut lr_fed: Option<Vec<Prepared>> = None;
    let mut r3d_fed: Option<Vec<Prepared>> = None;
    for &m in methods {
        let uses_lr = matches!(m, Method::LrNetTrilinear | Method::Proposed);
        let uses_r3d = matches!(m, Method::RadioUNet3DTrilinear | Method::RadioUNet3DSr);
        if uses_lr && lr_fed.is_none() {
            let (net, store) = load_stage1(&need(&ck.lrnet, "LR-Net")?)?;
            lr_fed = Some(stage1_inputs(&net, &store, test));
        }
        if uses_r3d && r3d_fed.is_none() {
            let (net, store) = load_stage1(&need(&ck.radiounet3d, "RadioUNet3D")?)?;
            r3d_fed = Some(stage1_inputs(&net, &store, test));
        }
        let result = match m {
            Method::Truth => {
                let preds: Vec<Vec<f32>> = test.iter().map(|p| p.hr().data().to_vec()).collect();
                score(m, test, &preds, cfg)?
            }
            Method::LrNetTrilinear | Method::RadioUNet3DTrilinear => {
                let fed = if uses_lr {
                    lr_fed.as_ref()
                } else {
                    r3d_fed.as_ref()
                }
                .unwrap();
                score(m, fed, &predict_trilinear(fed), cfg)?
            }
            Method::Proposed | Method::RadioUNet3DSr => {
                let (fed, path) = if uses_lr {
                    (
                        lr_fed.as_ref().unwrap(),
                        need(&ck.sr_proposed, "SR-Net (proposed)")?,
                    )
                } else {
                    (
                        r3d_fed.as_ref().unwrap(),
                        need(&ck.sr_radiounet3d, "SR-Net (RadioUNet3D)")?,
                    )
                };
                let (net, store) = load_sr(&path)?;
                score(m, fed, &predict_sr(&net, &store, fed, 4), cfg)?
            }
        };
        log::info!("{}: NMSE {:.5}", m.name(), result.report.nmse);
        rows.push(result);
    }
    Ok(SuiteReport { rows })
}
