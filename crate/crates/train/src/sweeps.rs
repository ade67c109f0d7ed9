//! NMSE against the number of fine-labelled training environments and
//! against the coarse resolution.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use df3d_core::dataset::{
    batch_indices, build_hybrid_dataset, derive_seed, HybridDatasetManifest, Resolution, Split,
};
use df3d_core::metrics::MetricReport;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{load, load_envs, PhaseData, Prepared};
use crate::error::{Result, TrainError};
use crate::evaluate::{evaluate_suite, Method, SuiteCheckpoints};
use crate::phases::{train_phase1, train_phase2, train_phase3};
use crate::plot::{line_plot, Series};

const STREAM_SWEEP: u64 = 201;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub label: String,
    pub x: f64,
    pub nmse: f64,
    pub train_samples: usize,
    pub report: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub name: String,
    pub x_label: String,
    pub points: Vec<SweepPoint>,
    /// Upper-bound run drawn as a reference line.
    pub reference: Option<SweepPoint>,
}

impl SweepReport {
    pub fn point(&self, x: f64) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.x == x)
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<12}{:>10}{:>14}{:>12}\n",
            self.x_label, "samples", "NMSE", "SSIM"
        );
        for p in self.points.iter().chain(&self.reference) {
            let _ = writeln!(
                s,
                "{:<12}{:>10}{:>14.6}{:>12.5}",
                p.label, p.train_samples, p.nmse, p.report.ssim
            );
        }
        s
    }

    /// JSON, aligned text and an SVG plot under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
        let json = dir.join(format!("{}.json", self.name));
        std::fs::write(&json, serde_json::to_vec_pretty(self)?)
            .map_err(|e| TrainError::io(&json, e))?;
        let txt = dir.join(format!("{}.txt", self.name));
        std::fs::write(&txt, self.table()).map_err(|e| TrainError::io(&txt, e))?;
        let mut series = vec![Series {
            name: "Proposed".into(),
            points: self.points.iter().map(|p| (p.x, p.nmse)).collect(),
            reference: false,
        }];
        if let Some(r) = &self.reference {
            series.push(Series {
                name: r.label.clone(),
                points: vec![(r.x, r.nmse)],
                reference: true,
            });
        }
        line_plot(
            &dir.join(format!("{}.svg", self.name)),
            &format!("NMSE vs {}", self.x_label),
            &self.x_label,
            "NMSE",
            &series,
        )
    }
}

fn proposed_on_test(
    stage1: &Path,
    sr: &Path,
    test: &[Prepared],
    cfg: &ExperimentConfig,
) -> Result<MetricReport> {
    let ck = SuiteCheckpoints {
        lrnet: Some(stage1.into()),
        sr_proposed: Some(sr.into()),
        ..Default::default()
    };
    Ok(evaluate_suite(&ck, test, &[Method::Proposed], &cfg.metrics)?.rows[0].report)
}

/// Fixed split of a fully fine-labelled manifest's pool training
/// environments: a validation set of `hr_val` environments and an ordered
/// candidate list whose prefixes are the nested training sets.
pub fn m_sweep_split(
    manifest: &HybridDatasetManifest,
    hr_val: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let pool = manifest.envs_in(Split::Train);
    if manifest
        .records
        .iter()
        .filter(|r| pool.contains(&r.env_id))
        .any(|r| r.hr_map.is_none())
    {
        return Err(TrainError::Config(
            "M sweep needs fine labels for every pool training environment".into(),
        ));
    }
    if pool.len() <= hr_val {
        return Err(TrainError::Config(
            "not enough pool environments for the M sweep".into(),
        ));
    }
    let order: Vec<usize> =
        batch_indices(pool.len(), pool.len(), derive_seed(seed, STREAM_SWEEP, 0))
            .into_iter()
            .flatten()
            .map(|i| pool[i])
            .collect();
    Ok((order[..hr_val].to_vec(), order[hr_val..].to_vec()))
}

/// Retrains phases 2 and 3 for each `M` (and for all candidates, the
/// upper bound) with the stage-1 checkpoint shared, then scores the proposed
/// pipeline on the test split.
pub fn sweep_m(
    cfg: &ExperimentConfig,
    manifest: &HybridDatasetManifest,
    root: &Path,
    stage1: &Path,
    m_values: &[usize],
    hr_val: usize,
    out: &Path,
) -> Result<SweepReport> {
    let (val_envs, cand) = m_sweep_split(manifest, hr_val, cfg.seed)?;
    if let Some(&m) = m_values.iter().find(|&&m| m == 0 || m > cand.len()) {
        return Err(TrainError::Config(format!(
            "M = {m} outside 1..={}",
            cand.len()
        )));
    }
    let mut by_env: BTreeMap<usize, Vec<Prepared>> = BTreeMap::new();
    for p in load_envs(manifest, root, &cand, true)? {
        by_env.entry(p.env_id).or_default().push(p);
    }
    let val = load_envs(manifest, root, &val_envs, true)?;
    let test = load(manifest, root, Split::Test, Resolution::High)?;
    let run = |m: usize, label: String| -> Result<SweepPoint> {
        let dir = out.join(format!("m{m:03}"));
        let train: Vec<Prepared> = cand[..m]
            .iter()
            .flat_map(|e| by_env[e].iter().cloned())
            .collect();
        let data = PhaseData {
            train,
            val: val.clone(),
        };
        let p2 = train_phase2(cfg, &data, &dir)?;
        let p3 = train_phase3(cfg, stage1, &p2.checkpoint, &data, &dir)?;
        let report = proposed_on_test(stage1, &p3.checkpoint, &test, cfg)?;
        log::info!("M sweep {label}: NMSE {:.5}", report.nmse);
        Ok(SweepPoint {
            label,
            x: m as f64,
            nmse: report.nmse,
            train_samples: data.train.len(),
            report,
        })
    };
    let mut points = Vec::new();
    for &m in m_values {
        points.push(run(m, format!("M={m}"))?);
    }
    let reference = Some(run(cand.len(), "FullSR".into())?);
    Ok(SweepReport {
        name: "sweep_m".into(),
        x_label: "M".into(),
        points,
        reference,
    })
}

/// One complete experiment per coarse resolution: dataset, all three
/// phases, and the proposed pipeline scored on the test split.
pub fn sweep_delta(cfg: &ExperimentConfig, delta_ls: &[f64], out: &Path) -> Result<SweepReport> {
    let mut points = Vec::new();
    for &dl in delta_ls {
        let mut c = cfg.clone();
        c.dataset.delta_l = dl;
        c.sync();
        c.validate()?;
        let dir = out.join(format!("delta_l_{dl}"));
        let root = dir.join("data");
        let manifest = if root.join("manifest.json").is_file() {
            HybridDatasetManifest::read(&root)?
        } else {
            build_hybrid_dataset(&c.dataset, &root)?
        };
        if manifest.config != c.dataset {
            return Err(TrainError::Config(format!(
                "{} holds a dataset with a different configuration",
                root.display()
            )));
        }
        let low = PhaseData::load(&manifest, &root, Resolution::Low)?;
        let p1 = train_phase1(&c, &low, &dir)?;
        drop(low);
        let high = PhaseData::load(&manifest, &root, Resolution::High)?;
        let p2 = train_phase2(&c, &high, &dir)?;
        let p3 = train_phase3(&c, &p1.checkpoint, &p2.checkpoint, &high, &dir)?;
        let test = load(&manifest, &root, Split::Test, Resolution::High)?;
        let report = proposed_on_test(&p1.checkpoint, &p3.checkpoint, &test, &c)?;
        log::info!("delta_L = {dl}: NMSE {:.5}", report.nmse);
        points.push(SweepPoint {
            label: format!("{dl}"),
            x: dl,
            nmse: report.nmse,
            train_samples: high.train.len(),
            report,
        });
    }
    Ok(SweepReport {
        name: "sweep_delta".into(),
        x_label: "Delta_L".into(),
        points,
        reference: None,
    })
}
