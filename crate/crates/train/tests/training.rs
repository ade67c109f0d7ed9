use std::path::Path;

use df3d_core::dataset::HybridDatasetManifest;
use df3d_core::dataset::{build_hybrid_dataset, DatasetConfig, Resolution, Split};
use df3d_core::oracle::{SceneConfig, TxConfig};
use df3d_models::{LRNetConfig, SRNetConfig, SrNet};
use df3d_nn::{Ctx, ParamStore, Var};
use df3d_train::data::{load, PhaseData, Prepared};
use df3d_train::evaluate::{evaluate_suite, Method, SuiteCheckpoints};
use df3d_train::phases::{
    load_sr, load_stage1, run_phase, validation_loss, LossSetup, Objective, PhaseRun, SrObjective,
    Stage1Objective,
};
use df3d_train::pipeline::run_pipeline;
use df3d_train::sweeps::m_sweep_split;
use df3d_train::{
    train_phase1, train_phase2, train_phase3, ExperimentConfig, PhaseSchedule, TrainError,
};

fn dataset(seed: u64) -> DatasetConfig {
    DatasetConfig {
        n_envs: 6,
        n_test_envs: 2,
        tx_per_env: 2,
        m_hr: 3,
        scene: SceneConfig {
            side: 16.0,
            min_boxes: 2,
            max_boxes: 3,
            height_max: 14.0,
            ..Default::default()
        },
        tx: TxConfig {
            height_min: 4.0,
            height_max: 10.0,
            ..Default::default()
        },
        seed,
        ..Default::default()
    }
}

fn tiny() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        dataset: dataset(5),
        lr_net: LRNetConfig {
            base_channels: 4,
            ..Default::default()
        },
        sr_net: SRNetConfig::with_channels(4, 1, 2),
        schedule: PhaseSchedule {
            epochs: [8, 4, 2],
            learning_rates: [2e-3, 1e-3, 1e-4],
            batch_sizes: [4, 2, 2],
            ..Default::default()
        },
        ..Default::default()
    };
    cfg.sync();
    cfg
}

fn low_data(cfg: &ExperimentConfig, root: &Path) -> (HybridDatasetManifest, PhaseData) {
    let m = build_hybrid_dataset(&cfg.dataset, root).unwrap();
    let d = PhaseData::load(&m, root, Resolution::Low).unwrap();
    (m, d)
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let r = run_pipeline(&cfg, dir.path(), false).unwrap();

    let e = &r.phase1.log.epochs;
    assert_eq!(e.len(), 8);
    assert!(e.last().unwrap().train_loss < e[0].train_loss, "{e:?}");
    for p in [&r.phase1, &r.phase2, &r.phase3] {
        assert!(p.log.best_val <= p.log.initial_val);
        assert!(p.checkpoint.is_file());
        for f in ["steps.jsonl", "epochs.jsonl", "val.jsonl", "summary.json"] {
            assert!(p
                .checkpoint
                .with_file_name(format!("phase{}_{f}", p.log.phase))
                .is_file());
        }
    }
    let (before, after) = r.phase3.frozen.clone().unwrap();
    assert_eq!(before, after);

    // The saved checkpoints reproduce their recorded validation loss.
    let root = dir.path().join("data");
    let manifest = HybridDatasetManifest::read(&root).unwrap();
    let low = PhaseData::load(&manifest, &root, Resolution::Low).unwrap();
    let (net, store) = load_stage1(&r.phase1.checkpoint).unwrap();
    let loss = LossSetup::new(&cfg);
    let v = validation_loss(&Stage1Objective(&net), &store, &low.val, 4, &loss).unwrap();
    assert_eq!(v, r.phase1.log.best_val);
    let high = PhaseData::load(&manifest, &root, Resolution::High).unwrap();
    let (sr, sr_store) = load_sr(&r.phase2.checkpoint).unwrap();
    let v = validation_loss(
        &SrObjective {
            net: &sr,
            use_label: true,
        },
        &sr_store,
        &high.val,
        2,
        &loss,
    )
    .unwrap();
    assert_eq!(v, r.phase2.log.best_val);

    let truth = r.suite.get(Method::Truth).unwrap();
    assert_eq!(truth.report.nmse, 0.0);
    assert!((truth.report.ssim - 1.0).abs() < 1e-12);
    assert_eq!(truth.report.psnr, None);
    for row in &r.suite.rows {
        let n = row.samples.len() as f64;
        assert_eq!(row.samples.len(), 4);
        let mean = row.samples.iter().map(|s| s.metrics.nmse).sum::<f64>() / n;
        assert!((mean - row.report.nmse).abs() < 1e-12);
        let mean = row.samples.iter().map(|s| s.metrics.ssim).sum::<f64>() / n;
        assert!((mean - row.report.ssim).abs() < 1e-12);
    }
    assert!(r.suite.nmse(Method::Proposed).unwrap().is_finite());
    assert!(dir.path().join("eval/table.txt").is_file());
}

#[test]
fn phase1_is_seed_deterministic() {
    let cfg = ExperimentConfig {
        schedule: PhaseSchedule {
            epochs: [2, 1, 1],
            ..tiny().schedule
        },
        ..tiny()
    };
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = low_data(&cfg, &dir.path().join("data"));
    let a = train_phase1(&cfg, &data, &dir.path().join("a")).unwrap();
    let b = train_phase1(&cfg, &data, &dir.path().join("b")).unwrap();
    assert_eq!(
        std::fs::read(&a.checkpoint).unwrap(),
        std::fs::read(&b.checkpoint).unwrap()
    );
    assert_eq!(
        std::fs::read(dir.path().join("a/phase1_steps.jsonl")).unwrap(),
        std::fs::read(dir.path().join("b/phase1_steps.jsonl")).unwrap()
    );
    let other = ExperimentConfig {
        seed: cfg.seed + 1,
        ..cfg.clone()
    };
    let c = train_phase1(&other, &data, &dir.path().join("c")).unwrap();
    assert_ne!(
        std::fs::read(&a.checkpoint).unwrap(),
        std::fs::read(&c.checkpoint).unwrap()
    );
}

#[test]
fn phase3_requires_checkpoints() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let data = PhaseData {
        train: Vec::new(),
        val: Vec::new(),
    };
    let missing = dir.path().join("nope.ckpt");
    let err = train_phase3(&cfg, &missing, &missing, &data, dir.path()).unwrap_err();
    assert!(matches!(err, TrainError::Missing(_)), "{err}");
}

#[test]
fn phase3_rejects_swapped_checkpoints() {
    let cfg = ExperimentConfig {
        schedule: PhaseSchedule {
            epochs: [1, 1, 1],
            ..tiny().schedule
        },
        ..tiny()
    };
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let m = build_hybrid_dataset(&cfg.dataset, &root).unwrap();
    let low = PhaseData::load(&m, &root, Resolution::Low).unwrap();
    let high = PhaseData::load(&m, &root, Resolution::High).unwrap();
    let p1 = train_phase1(&cfg, &low, &dir.path().join("p1")).unwrap();
    let p2 = train_phase2(&cfg, &high, &dir.path().join("p2")).unwrap();
    let err = train_phase3(
        &cfg,
        &p2.checkpoint,
        &p1.checkpoint,
        &high,
        &dir.path().join("p3"),
    )
    .unwrap_err();
    assert!(matches!(err, TrainError::Config(_)), "{err}");
}

struct Poisoned<'a>(Stage1Objective<'a>);

impl Objective for Poisoned<'_> {
    fn forward<'t>(&self, ctx: &Ctx<'t, f32>, batch: &[&Prepared]) -> (Var<'t, f32>, Var<'t, f32>) {
        let (p, t) = self.0.forward(ctx, batch);
        (p.scale(f32::NAN), t)
    }
}

#[test]
fn divergence_aborts_with_dump() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = low_data(&cfg, &dir.path().join("data"));
    let mut store = ParamStore::new();
    let net = df3d_models::LrNet::build(&cfg.lr_net, &mut store, 1).unwrap();
    let run = PhaseRun::from_config(
        &cfg,
        1,
        &dir.path().join("run"),
        serde_json::json!({ "network": "stage1" }),
    );
    let train_only = PhaseData {
        train: data.train.clone(),
        val: data.val.clone(),
    };
    // Validation runs first and is NaN too; training must still stop at step 0.
    let err = run_phase(
        &Poisoned(Stage1Objective(&net)),
        &mut store,
        &train_only,
        &run,
        &LossSetup::new(&cfg),
        0.0,
        None,
        0.0,
        (0.5, 3),
    )
    .unwrap_err();
    match err {
        TrainError::Diverged { phase, step, dump } => {
            assert_eq!((phase, step), (1, 0));
            assert!(dump.is_file());
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn m_sweep_split_is_nested_and_disjoint() {
    let mut cfg = tiny();
    cfg.dataset.m_hr = cfg.dataset.n_envs;
    let dir = tempfile::tempdir().unwrap();
    let m = build_hybrid_dataset(&cfg.dataset, dir.path()).unwrap();
    let (val, cand) = m_sweep_split(&m, 2, 9).unwrap();
    let pool = m.envs_in(Split::Train);
    assert_eq!(val.len(), 2);
    assert_eq!(val.len() + cand.len(), pool.len());
    assert!(val.iter().all(|v| !cand.contains(v)));
    assert_eq!(m_sweep_split(&m, 2, 9).unwrap(), (val, cand));
    assert!(m_sweep_split(&m, pool.len(), 9).is_err());

    let partial = build_hybrid_dataset(&tiny().dataset, &dir.path().join("partial")).unwrap();
    assert!(m_sweep_split(&partial, 1, 9).is_err());
}

#[test]
fn suite_reports_missing_checkpoints() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let m = build_hybrid_dataset(&cfg.dataset, dir.path()).unwrap();
    let test = load(&m, dir.path(), Split::Test, Resolution::High).unwrap();
    let only_truth = evaluate_suite(
        &SuiteCheckpoints::default(),
        &test,
        &[Method::Truth],
        &cfg.metrics,
    )
    .unwrap();
    assert_eq!(only_truth.rows.len(), 1);
    let err = evaluate_suite(
        &SuiteCheckpoints::default(),
        &test,
        &[Method::Proposed],
        &cfg.metrics,
    )
    .unwrap_err();
    assert!(matches!(err, TrainError::Missing(_)));
    let _ = SrNet::build(&cfg.sr_net, &mut ParamStore::<f32>::new(), 0).unwrap();
}
