//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! `DF3D_ACCEPTANCE=1,2,5` restricts the run to the listed criteria.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use df3d_core::dataset::Resolution;
use df3d_core::dataset::{build_hybrid_dataset, read_scene, DatasetConfig, HybridDatasetManifest};
use df3d_core::grid::normalize_db;
use df3d_core::los::bresenham_los;
use df3d_core::metrics::{nmse, psnr, rmse, ssim3d};
use df3d_core::oracle::{generate_radio_map, path_loss_at, robust_los_reference, Aabb, Scene};
use df3d_core::{container, GridSpec, TransmitterTensor};
use df3d_models::blocks::zero_params;
use df3d_models::{combined_loss, FeatureExtractor, LossWeights, SRNetConfig, SrNet};
use df3d_nn::layers::Conv3d;
use df3d_nn::ops::{voxel_shuffle_array, voxel_unshuffle_array};
use df3d_nn::{Array, Ctx, ParamBuilder, ParamStore, Tape};
use df3d_train::data::PhaseData;
use df3d_train::evaluate::Method;
use df3d_train::pipeline::{ensure_dataset, run_pipeline, Layout, PipelineResult};
use df3d_train::sweeps::{sweep_delta, sweep_m, SweepReport};
use df3d_train::{
    train_phase1, train_phase2, train_phase3, ExperimentConfig, PhaseLog, PhaseSchedule,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

fn within(t: Instant, limit: Duration, detail: String) -> Verdict {
    let e = t.elapsed();
    check(
        e < limit,
        format!(
            "{detail}; {:.1}s (limit {}s)",
            e.as_secs_f64(),
            limit.as_secs()
        ),
    )
}

// Brute-force metric references.

fn ref_nmse(p: &[f64], t: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..p.len() {
        num += (p[i] - t[i]) * (p[i] - t[i]);
        den += t[i] * t[i];
    }
    num / den
}

fn ref_rmse(p: &[f64], t: &[f64]) -> f64 {
    let mse: f64 = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
    mse.sqrt()
}

fn ref_psnr(p: &[f64], t: &[f64]) -> f64 {
    let mse: f64 = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
    let peak = t.iter().cloned().fold(f64::MIN, f64::max);
    10.0 * (peak * peak / mse).log10()
}

fn ref_ssim(p: &[f64], t: &[f64], d: [usize; 3], w: usize) -> f64 {
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut scores = Vec::new();
    for i in 0..=d[0] - w {
        for j in 0..=d[1] - w {
            for k in 0..=d[2] - w {
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for a in 0..w {
                    for b in 0..w {
                        for c in 0..w {
                            let o = ((i + a) * d[1] + j + b) * d[2] + k + c;
                            xs.push(p[o]);
                            ys.push(t[o]);
                        }
                    }
                }
                let n = xs.len() as f64;
                let mx = xs.iter().sum::<f64>() / n;
                let my = ys.iter().sum::<f64>() / n;
                let vx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n;
                let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n;
                let cxy = xs
                    .iter()
                    .zip(&ys)
                    .map(|(x, y)| (x - mx) * (y - my))
                    .sum::<f64>()
                    / n;
                scores.push(
                    (2.0 * mx * my + c1) * (2.0 * cxy + c2)
                        / ((mx * mx + my * my + c1) * (vx + vy + c2)),
                );
            }
        }
    }
    scores.iter().sum::<f64>() / scores.len() as f64
}

fn criterion1() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let d = [
            rng.gen_range(3..=5),
            rng.gen_range(3..=5),
            rng.gen_range(3..=5),
        ];
        let n = d.iter().product();
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        worst = worst
            .max(rel(nmse(&p, &t).unwrap(), ref_nmse(&p, &t)))
            .max(rel(rmse(&p, &t).unwrap(), ref_rmse(&p, &t)))
            .max(rel(psnr(&p, &t).unwrap(), ref_psnr(&p, &t)))
            .max(rel(
                ssim3d(&p, &t, d, 3, 1.0).unwrap(),
                ref_ssim(&p, &t, d, 3),
            ));
        let fixed = nmse(&t, &t).unwrap() == 0.0
            && rmse(&t, &t).unwrap() == 0.0
            && ssim3d(&t, &t, d, 3, 1.0).unwrap() == 1.0
            && psnr(&t, &t).unwrap() == f64::INFINITY;
        if !fixed {
            return Err(format!("truth-vs-truth not exact for dims {d:?}"));
        }
    }
    if worst > 1e-10 {
        return Err(format!("max relative error {worst:.3e} > 1e-10"));
    }
    within(
        t0,
        Duration::from_secs(10),
        format!("200 pairs, max relative error {worst:.2e}, fixed points exact"),
    )
}

fn criterion2() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = GridSpec::new([0.0; 3], 1.0, [8; 3]).unwrap();
    let (mut decided, mut bad) = (0usize, 0usize);
    for s in 0..100 {
        let boxes = (0..rng.gen_range(1..=4))
            .map(|_| {
                let lo = [rng.gen_range(0.0..7.0), rng.gen_range(0.0..7.0), 0.0];
                let size = [
                    rng.gen_range(0.5..4.0),
                    rng.gen_range(0.5..4.0),
                    rng.gen_range(1.0..8.0),
                ];
                Aabb::new(lo, [0, 1, 2].map(|a| (lo[a] + size[a]).min(8.0)))
            })
            .collect();
        let scene = Scene {
            region: Aabb::new([0.0; 3], [8.0; 3]),
            boxes,
            seed: s,
        };
        let env = scene.voxelize(&g);
        let q = [
            rng.gen_range(0.0..8.0),
            rng.gen_range(0.0..8.0),
            rng.gen_range(0.0..8.0),
        ];
        let tx = TransmitterTensor::from_location(g, q).unwrap();
        let los = bresenham_los(&env, &tx).unwrap();
        for f in 0..g.len() {
            if let Some(vis) = robust_los_reference(&scene, &g, tx.voxel(), g.unindex(f)) {
                decided += 1;
                if (los.data[f] == 1) != vis {
                    bad += 1;
                }
            }
        }
    }
    if bad > 0 {
        return Err(format!("{bad} disagreements on {decided} robust voxels"));
    }
    within(
        t0,
        Duration::from_secs(30),
        format!("100 scenes, 0 disagreements on {decided} robust voxels"),
    )
}

fn criterion3() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = SRNetConfig::with_channels(8, 2, 1);
    let mut store = ParamStore::<f32>::new();
    let net = SrNet::build(&cfg, &mut store, 3).unwrap();
    let inner: Vec<_> = store
        .ids()
        .filter(|&id| store.name(id).starts_with("dfr.rrdb"))
        .collect();
    zero_params(&mut store, inner);
    let f = Array::<f32>::from_fn(&[2, 8, 4, 3, 5], |_| rng.gen_range(-2.0..2.0));
    let tape = Tape::inference();
    let ctx = Ctx::eval(&tape, &store);
    let x = ctx.input(f.clone());
    for r in &net.rrdbs {
        if r.forward(&ctx, x).value().data() != f.data() {
            return Err("zeroed RRDB does not pass features through".into());
        }
    }
    for b in 0..50 {
        let shape = [
            rng.gen_range(1..=2),
            8 * rng.gen_range(1..=3),
            rng.gen_range(1..=4),
            rng.gen_range(1..=4),
            rng.gen_range(1..=4),
        ];
        let x = Array::<f32>::from_fn(&shape, |_| rng.gen_range(-1.0..1.0));
        let y = voxel_shuffle_array(&x);
        let bits = |a: &Array<f32>| a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        if bits(&voxel_unshuffle_array(&y)) != bits(&x)
            || bits(&voxel_shuffle_array(&voxel_unshuffle_array(&y))) != bits(&y)
        {
            return Err(format!("shuffle round trip failed on block {b} {shape:?}"));
        }
    }
    within(
        t0,
        Duration::from_secs(5),
        format!(
            "{} RRDBs pass through, 50 shuffle round trips bit-exact",
            net.rrdbs.len()
        ),
    )
}

fn criterion4() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::<f64>::new();
    let layers = {
        let mut prng = ChaCha8Rng::seed_from_u64(40);
        let mut pb = ParamBuilder::new(&mut store, &mut prng);
        [
            Conv3d::new(&mut pb, "l1", 1, 4, 3),
            Conv3d::new(&mut pb, "l2", 4, 4, 3),
            Conv3d::new(&mut pb, "l3", 4, 1, 3),
        ]
    };
    let shape = [2, 1, 6, 6, 3];
    let x = Array::<f64>::from_fn(&shape, |_| rng.gen_range(0.0..1.0));
    let y = Array::<f64>::from_fn(&shape, |_| rng.gen_range(0.0..1.0));
    let kernel = Array::<f64>::from_fn(&[2, 1, 1, 3, 3], |_| rng.gen_range(-1.0..1.0));
    let fx = FeatureExtractor::linear(kernel, [1, 1]);
    let w = LossWeights {
        lambda: 1.0,
        gamma_loss: 0.2,
    };
    let ids: Vec<_> = store.ids().collect();

    let loss = |s: &ParamStore<f64>, grads: bool| -> (f64, Vec<Array<f64>>) {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, s, false, 0);
        let h = layers[0].forward(&ctx, ctx.input(x.clone())).tanh();
        let h = layers[1].forward(&ctx, h).tanh();
        let pred = layers[2].forward(&ctx, h).sigmoid();
        let l = combined_loss(pred, ctx.input(y.clone()), &w, &fx)
            .unwrap()
            .total;
        let g = if grads {
            let g = tape.backward(l);
            ids.iter().map(|&id| g.param(id).unwrap().clone()).collect()
        } else {
            Vec::new()
        };
        (l.item(), g)
    };
    let (_, g) = loss(&store, true);
    let eps = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let dir: Vec<Array<f64>> = ids
            .iter()
            .map(|&id| Array::from_fn(store.get(id).shape(), |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let norm = dir
            .iter()
            .flat_map(|a| a.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        let analytic: f64 = g
            .iter()
            .zip(&dir)
            .map(|(a, d)| {
                a.data()
                    .iter()
                    .zip(d.data())
                    .map(|(p, q)| p * q)
                    .sum::<f64>()
            })
            .sum::<f64>()
            / norm;
        let shifted = |sign: f64| {
            let mut s = store.clone();
            for (&id, d) in ids.iter().zip(&dir) {
                let v = s.get_mut(id);
                for (p, q) in v.data_mut().iter_mut().zip(d.data()) {
                    *p += sign * eps * q / norm;
                }
            }
            loss(&s, false).0
        };
        let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * eps);
        worst = worst.max(rel(analytic, fd));
    }
    if worst > 1e-3 {
        return Err(format!("max relative directional error {worst:.3e} > 1e-3"));
    }
    within(
        t0,
        Duration::from_secs(60),
        format!("20 directions, max relative error {worst:.2e}"),
    )
}

fn criterion5(root: &Path) -> Verdict {
    let t0 = Instant::now();
    let cfg = DatasetConfig::default();
    let m = build_hybrid_dataset(&cfg, root).map_err(|e| e.to_string())?;
    let fine = cfg.fine_grid().unwrap();
    let coarse = cfg.coarse_grid().unwrap();
    // Odd-ratio grid whose centroids sit on fine centroids 3i + 1.
    let aligned = GridSpec::new([0.0; 3], 3.0, [10; 3]).unwrap();
    let p = &cfg.oracle;
    let label = |scene: &Scene, tx: [f64; 3], c: [f64; 3]| {
        normalize_db(
            path_loss_at(scene, p, tx, c) as f32 as f64,
            p.loss_floor,
            p.loss_cap,
        ) as f32
    };
    let (mut records, mut checked) = (0usize, 0usize);
    for r in m.records.iter().filter(|r| r.hr_map.is_some()) {
        let scene = read_scene(&root.join(&m.env(r.env_id).scene)).map_err(|e| e.to_string())?;
        let lr = container::read_map(&root.join(&r.lr_map), true).map_err(|e| e.to_string())?;
        let hr = container::read_map(&root.join(r.hr_map.as_ref().unwrap()), true)
            .map_err(|e| e.to_string())?;
        for f in 0..coarse.len() {
            let idx = coarse.unindex(f);
            if lr.data[f].to_bits() != label(&scene, r.tx_location, coarse.centroid(idx)).to_bits()
            {
                return Err(format!(
                    "env {} tx {}: LR voxel {idx:?} differs from the oracle",
                    r.env_id, r.tx_id
                ));
            }
        }
        for f in 0..fine.len() {
            let idx = fine.unindex(f);
            if hr.data[f].to_bits() != label(&scene, r.tx_location, fine.centroid(idx)).to_bits() {
                return Err(format!(
                    "env {} tx {}: HR voxel {idx:?} differs from the oracle",
                    r.env_id, r.tx_id
                ));
            }
        }
        let odd = generate_radio_map(&scene, p, r.tx_location, &aligned);
        for f in 0..aligned.len() {
            let [i, j, k] = aligned.unindex(f);
            let fi = [3 * i + 1, 3 * j + 1, 3 * k + 1];
            assert_eq!(aligned.centroid([i, j, k]), fine.centroid(fi));
            if odd.data[f].to_bits() != hr.at(fi).to_bits() {
                return Err(format!(
                    "env {} tx {}: co-located voxel {fi:?} differs",
                    r.env_id, r.tx_id
                ));
            }
            checked += 1;
        }
        records += 1;
    }
    if records != cfg.m_hr * cfg.tx_per_env + cfg.n_test_envs * cfg.tx_per_env {
        return Err(format!("{records} HR records"));
    }
    within(
        t0,
        Duration::from_secs(120),
        format!("{records} HR records exact to f32, {checked} co-located voxels"),
    )
}

fn main_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.sync();
    cfg
}

fn reduction(log: &PhaseLog) -> f64 {
    let first = log.epochs.first().unwrap().train_loss;
    let last = log.epochs.last().unwrap().train_loss;
    1.0 - last / first
}

fn criterion6(r: &PipelineResult, elapsed: Duration) -> Verdict {
    let (a, b, c) = (
        reduction(&r.phase1.log),
        reduction(&r.phase2.log),
        reduction(&r.phase3.log),
    );
    let (before, after) = r.phase3.frozen.clone().unwrap();
    let detail = format!(
        "reductions: phase 1 {:.1}% over {} epochs, phase 2 {:.1}%, phase 3 {:.1}%; stage-1 hash {}; {:.0}s",
        100.0 * a,
        r.phase1.log.epochs.len(),
        100.0 * b,
        100.0 * c,
        if before == after { "unchanged" } else { "CHANGED" },
        elapsed.as_secs_f64()
    );
    check(
        a >= 0.5
            && b >= 0.3
            && c >= 0.3
            && before == after
            && r.phase1.log.epochs.len() == 40
            && elapsed.as_secs() < 3 * 3600,
        detail,
    )
}

fn criterion7(r: &PipelineResult) -> Verdict {
    let n = |m| r.suite.nmse(m).unwrap();
    let (p, lt) = (n(Method::Proposed), n(Method::LrNetTrilinear));
    let (rs, rt) = (n(Method::RadioUNet3DSr), n(Method::RadioUNet3DTrilinear));
    let (g1, g2) = (1.0 - p / lt, 1.0 - rs / rt);
    check(
        g1 >= 0.2 && g2 >= 0.2,
        format!("Proposed {p:.5} vs LRNet-Trilinear {lt:.5} ({:.1}%), RadioUNet3D-SR {rs:.5} vs RadioUNet3D-Trilinear {rt:.5} ({:.1}%)", 100.0 * g1, 100.0 * g2),
    )
}

fn sweep_config(base: &ExperimentConfig) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.sr_net = SRNetConfig::with_channels(8, 2, cfg.sr_net.upsample_blocks);
    cfg.schedule = PhaseSchedule {
        step_budgets: [Some(150), Some(240), Some(60)],
        eval_intervals: [None, Some(20), Some(20)],
        ..PhaseSchedule::default()
    };
    cfg
}

fn criterion8(stage1: &Path, out: &Path) -> Verdict {
    let cfg = sweep_config(&main_config());
    let mut dcfg = cfg.dataset.clone();
    dcfg.m_hr = dcfg.n_envs;
    let root = out.join("data");
    let manifest = ensure_dataset(&dcfg, &root).map_err(|e| e.to_string())?;
    let rep =
        sweep_m(&cfg, &manifest, &root, stage1, &[2, 4, 8], 3, out).map_err(|e| e.to_string())?;
    rep.write(out).map_err(|e| e.to_string())?;
    println!("{}", rep.table());
    let (m2, m8) = (rep.point(2.0).unwrap().nmse, rep.point(8.0).unwrap().nmse);
    let full = rep.reference.as_ref().unwrap().nmse;
    check(
        m8 <= m2 && rel(m8, full) <= 0.25,
        format!(
            "NMSE M=2 {m2:.5}, M=8 {m8:.5}, FullSR {full:.5} ({:.1}% gap)",
            100.0 * rel(m8, full)
        ),
    )
}

fn criterion9(out: &Path) -> Verdict {
    let mut cfg = sweep_config(&main_config());
    cfg.lr_net.base_channels = 8;
    let rep: SweepReport = sweep_delta(&cfg, &[2.0, 4.0, 8.0], out).map_err(|e| e.to_string())?;
    rep.write(out).map_err(|e| e.to_string())?;
    println!("{}", rep.table());
    let v: Vec<f64> = rep.points.iter().map(|p| p.nmse).collect();
    let ok = v.windows(2).all(|w| w[1] >= w[0] * (1.0 - 0.05));
    check(
        ok,
        format!(
            "NMSE over Delta_L 2, 4, 8: {:.5}, {:.5}, {:.5}",
            v[0], v[1], v[2]
        ),
    )
}

fn criterion10(first: &PipelineResult, main_dir: &Path, desk_data: &Path, out: &Path) -> Verdict {
    let cfg = main_config();
    let l = Layout::new(main_dir);
    let manifest = HybridDatasetManifest::read(&l.data()).map_err(|e| e.to_string())?;
    let low = PhaseData::load(&manifest, &l.data(), Resolution::Low).map_err(|e| e.to_string())?;
    let p1 = train_phase1(&cfg, &low, &out.join("lrnet")).map_err(|e| e.to_string())?;
    drop(low);
    let high =
        PhaseData::load(&manifest, &l.data(), Resolution::High).map_err(|e| e.to_string())?;
    let p2 = train_phase2(&cfg, &high, &out.join("sr")).map_err(|e| e.to_string())?;
    let p3 = train_phase3(
        &cfg,
        &p1.checkpoint,
        &p2.checkpoint,
        &high,
        &out.join("sr_lrnet"),
    )
    .map_err(|e| e.to_string())?;
    let pairs = [
        (&first.phase1, &p1),
        (&first.phase2, &p2),
        (&first.phase3, &p3),
    ];
    let mut diffs = Vec::new();
    for (i, (a, b)) in pairs.iter().enumerate() {
        if a.log.final_step_loss.to_bits() != b.log.final_step_loss.to_bits()
            || a.log.epochs != b.log.epochs
        {
            diffs.push(format!("phase {} losses", i + 1));
        }
        if std::fs::read(&a.checkpoint).ok() != std::fs::read(&b.checkpoint).ok() {
            diffs.push(format!("phase {} checkpoint", i + 1));
        }
    }
    let read = |p: &Path| std::fs::read(p.join("manifest.json")).unwrap_or_default();
    let ma = read(desk_data);
    if ma.is_empty() || ma != read(&l.data()) {
        diffs.push("dataset manifest".into());
    }
    let finals: Vec<String> = pairs
        .iter()
        .map(|(a, _)| format!("{:.6}", a.log.final_step_loss))
        .collect();
    check(
        diffs.is_empty(),
        if diffs.is_empty() {
            format!(
                "final losses {} reproduced bit-exactly; manifests byte-identical",
                finals.join(", ")
            )
        } else {
            format!("mismatch: {}", diffs.join(", "))
        },
    )
}

struct Suite {
    only: Option<Vec<u32>>,
    failures: Vec<u32>,
}

impl Suite {
    fn wants(&self, n: u32) -> bool {
        self.only.as_ref().is_none_or(|v| v.contains(&n))
    }

    fn report(&mut self, n: u32, name: &str, v: Verdict) {
        match v {
            Ok(d) => println!("criterion {n:>2} PASS {name}: {d}"),
            Err(d) => {
                println!("criterion {n:>2} FAIL {name}: {d}");
                self.failures.push(n);
            }
        }
    }

    fn run(&mut self, n: u32, name: &str, f: impl FnOnce() -> Verdict) {
        if !self.wants(n) {
            return;
        }
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or("panic".into()))
        });
        self.report(n, name, v);
    }
}

fn main() {
    let _ = env_logger::builder().is_test(true).try_init();
    let only = std::env::var("DF3D_ACCEPTANCE").ok().map(|s| {
        s.split(',')
            .filter_map(|t| t.trim().parse().ok())
            .collect::<Vec<u32>>()
    });
    let mut suite = Suite {
        only,
        failures: Vec::new(),
    };
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&out);
    std::fs::create_dir_all(&out).unwrap();

    suite.run(1, "metric oracle equivalence", criterion1);
    suite.run(2, "line-of-sight correctness", criterion2);
    suite.run(3, "RRDB passthrough and voxel shuffle", criterion3);
    suite.run(4, "gradient fidelity", criterion4);
    let desk = out.join("desk_data");
    suite.run(5, "cross-resolution label consistency", || {
        criterion5(&desk)
    });

    let main_dir = out.join("main");
    let needs_main = [6, 7, 8, 10].iter().any(|&n| suite.wants(n));
    let main = if needs_main {
        let t0 = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(|| {
            run_pipeline(&main_config(), &main_dir, true)
        }));
        match r {
            Ok(Ok(r)) => Some((r, t0.elapsed())),
            Ok(Err(e)) => {
                println!("main pipeline failed: {e}");
                None
            }
            Err(_) => {
                println!("main pipeline panicked");
                None
            }
        }
    } else {
        None
    };
    if let Some((r, _)) = &main {
        println!("{}", r.suite.table());
    }
    let missing = || Err::<String, String>("main pipeline did not complete".into());
    suite.run(6, "three-phase training", || {
        main.as_ref()
            .map_or_else(missing, |(r, t)| criterion6(r, *t))
    });
    suite.run(7, "method ordering", || {
        main.as_ref().map_or_else(missing, |(r, _)| criterion7(r))
    });
    suite.run(8, "high-resolution subset size trend", || {
        main.as_ref().map_or_else(missing, |(r, _)| {
            criterion8(&r.phase1.checkpoint, &out.join("sweep_m"))
        })
    });
    suite.run(9, "coarse resolution trend", || {
        criterion9(&out.join("sweep_delta"))
    });
    suite.run(10, "determinism", || {
        main.as_ref().map_or_else(missing, |(r, _)| {
            criterion10(r, &main_dir, &desk, &out.join("rerun"))
        })
    });

    if suite.failures.is_empty() {
        println!("acceptance: all selected criteria passed");
    } else {
        println!("acceptance: failed criteria {:?}", suite.failures);
        std::process::exit(1);
    }
}
