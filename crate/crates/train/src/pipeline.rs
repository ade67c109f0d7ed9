//! The whole experiment: dataset, stage-1 networks, SR-Net phases and the
//! test-split comparison.

use std::path::{Path, PathBuf};

use df3d_core::dataset::{
    build_hybrid_dataset, DatasetConfig, HybridDatasetManifest, Resolution, Split,
};

use crate::config::ExperimentConfig;
use crate::data::{load, PhaseData};
use crate::error::{Result, TrainError};
use crate::evaluate::{evaluate_suite, Method, SuiteCheckpoints, SuiteReport};
use crate::phases::{train_phase1, train_phase2, train_phase3, PhaseOutcome};

/// Reads the dataset under `root` when it matches `cfg`, builds it otherwise.
pub fn ensure_dataset(cfg: &DatasetConfig, root: &Path) -> Result<HybridDatasetManifest> {
    if root.join("manifest.json").is_file() {
        let m = HybridDatasetManifest::read(root)?;
        if &m.config == cfg {
            return Ok(m);
        }
        return Err(TrainError::Config(format!(
            "{} holds a dataset built with a different configuration",
            root.display()
        )));
    }
    Ok(build_hybrid_dataset(cfg, root)?)
}

/// Directory layout under one output root.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
        }
    }
    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn lrnet(&self) -> PathBuf {
        self.root.join("lrnet")
    }
    pub fn radiounet3d(&self) -> PathBuf {
        self.root.join("radiounet3d")
    }
    pub fn sr(&self) -> PathBuf {
        self.root.join("sr")
    }
    pub fn sr_lrnet(&self) -> PathBuf {
        self.root.join("sr_lrnet")
    }
    pub fn sr_radiounet3d(&self) -> PathBuf {
        self.root.join("sr_radiounet3d")
    }
    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }
}

pub struct PipelineResult {
    pub phase1: PhaseOutcome,
    pub phase2: PhaseOutcome,
    pub phase3: PhaseOutcome,
    pub baseline_phase1: Option<PhaseOutcome>,
    pub baseline_phase3: Option<PhaseOutcome>,
    pub suite: SuiteReport,
}

/// Algorithm order: phase 1, phase 2, phase 3; with `baseline`, the
/// RadioUNet3D stage-1 network and its own phase-3 SR-Net as well.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path, baseline: bool) -> Result<PipelineResult> {
    cfg.validate()?;
    let l = Layout::new(out);
    let manifest = ensure_dataset(&cfg.dataset, &l.data())?;
    let low = PhaseData::load(&manifest, &l.data(), Resolution::Low)?;
    let phase1 = train_phase1(cfg, &low, &l.lrnet())?;
    let baseline_phase1 = if baseline {
        Some(train_phase1(
            &cfg.with_radiounet3d(),
            &low,
            &l.radiounet3d(),
        )?)
    } else {
        None
    };
    drop(low);
    let high = PhaseData::load(&manifest, &l.data(), Resolution::High)?;
    let phase2 = train_phase2(cfg, &high, &l.sr())?;
    let phase3 = train_phase3(
        cfg,
        &phase1.checkpoint,
        &phase2.checkpoint,
        &high,
        &l.sr_lrnet(),
    )?;
    let baseline_phase3 = match &baseline_phase1 {
        Some(b) => Some(train_phase3(
            cfg,
            &b.checkpoint,
            &phase2.checkpoint,
            &high,
            &l.sr_radiounet3d(),
        )?),
        None => None,
    };
    let test = load(&manifest, &l.data(), Split::Test, Resolution::High)?;
    let ck = SuiteCheckpoints {
        lrnet: Some(phase1.checkpoint.clone()),
        radiounet3d: baseline_phase1.as_ref().map(|p| p.checkpoint.clone()),
        sr_proposed: Some(phase3.checkpoint.clone()),
        sr_radiounet3d: baseline_phase3.as_ref().map(|p| p.checkpoint.clone()),
    };
    let mut methods = Vec::new();
    if baseline {
        methods.extend([Method::RadioUNet3DTrilinear, Method::RadioUNet3DSr]);
    }
    methods.extend([Method::LrNetTrilinear, Method::Proposed, Method::Truth]);
    let suite = evaluate_suite(&ck, &test, &methods, &cfg.metrics)?;
    suite.write(&l.eval(), "table")?;
    Ok(PipelineResult {
        phase1,
        phase2,
        phase3,
        baseline_phase1,
        baseline_phase3,
        suite,
    })
}
