//! The three training phases: stage-1 pretraining, SR-Net training on
//! ground-truth coarse maps, and SR-Net fine-tuning on frozen stage-1
//! predictions.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use df3d_core::dataset::{batch_indices, derive_seed};
use df3d_models::{
    combined_loss, FeatureExtractor, LRNetConfig, LossValues, LossWeights, LrNet, SRNetConfig,
    SrNet,
};
use df3d_nn::{checkpoint, AdamW, AdamWConfig, Ctx, LrSchedule, ParamStore, Tape, Var};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::data::{stack, PhaseData, Prepared};
use crate::error::{Result, TrainError};

const STREAM_INIT: u64 = 101;
const STREAM_ORDER: u64 = 102;
const STREAM_DROPOUT: u64 = 103;

/// Loss weights plus the frozen perceptual feature extractor.
#[derive(Clone, Debug)]
pub struct LossSetup {
    pub weights: LossWeights,
    pub extractor: FeatureExtractor,
}

impl LossSetup {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            weights: cfg.loss,
            extractor: FeatureExtractor::random_conv(cfg.extractor_seed),
        }
    }
}

/// Maps a batch to `(prediction, target)`.
pub trait Objective {
    fn forward<'t>(&self, ctx: &Ctx<'t, f32>, batch: &[&Prepared]) -> (Var<'t, f32>, Var<'t, f32>);
}

pub struct Stage1Objective<'a>(pub &'a LrNet);

impl Objective for Stage1Objective<'_> {
    fn forward<'t>(&self, ctx: &Ctx<'t, f32>, batch: &[&Prepared]) -> (Var<'t, f32>, Var<'t, f32>) {
        let inputs: Vec<_> = (0..self.0.cfg.input_count())
            .map(|i| ctx.input(stack(batch.iter().map(|p| &p.stage1[i]))))
            .collect();
        (
            self.0.forward(ctx, &inputs),
            ctx.input(stack(batch.iter().map(|p| &p.lr))),
        )
    }
}

/// SR-Net fed either the coarse label (`use_label`) or `Prepared::sr_input`.
pub struct SrObjective<'a> {
    pub net: &'a SrNet,
    pub use_label: bool,
}

impl Objective for SrObjective<'_> {
    fn forward<'t>(&self, ctx: &Ctx<'t, f32>, batch: &[&Prepared]) -> (Var<'t, f32>, Var<'t, f32>) {
        let env = ctx.input(stack(batch.iter().map(|p| &p.fine()[0])));
        let tx = ctx.input(stack(batch.iter().map(|p| &p.fine()[1])));
        let lr = ctx.input(stack(batch.iter().map(|p| {
            if self.use_label {
                &p.lr
            } else {
                &p.sr_input
            }
        })));
        (
            self.net.forward(ctx, env, tx, lr),
            ctx.input(stack(batch.iter().map(|p| p.hr()))),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub mse: f64,
    pub l1: f64,
    pub perceptual: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Mean step loss over the epoch.
    pub train_loss: f64,
    pub learning_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValRecord {
    pub step: usize,
    pub val_loss: f64,
    pub learning_rate: f64,
    pub improved: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseLog {
    pub phase: u8,
    pub steps: usize,
    pub epochs: Vec<EpochRecord>,
    pub validations: Vec<ValRecord>,
    /// Validation loss of the starting parameters.
    pub initial_val: f64,
    pub best_val: f64,
    pub best_step: usize,
    pub final_step_loss: f64,
    pub checkpoint: PathBuf,
}

/// Settings of one optimization run.
#[derive(Clone, Debug)]
pub struct PhaseRun {
    pub phase: u8,
    pub epochs: usize,
    pub step_budget: Option<usize>,
    pub eval_interval: Option<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub meta: serde_json::Value,
}

impl PhaseRun {
    pub fn from_config(
        cfg: &ExperimentConfig,
        phase: u8,
        out_dir: &Path,
        meta: serde_json::Value,
    ) -> Self {
        let i = phase as usize - 1;
        let s = &cfg.schedule;
        Self {
            phase,
            epochs: s.epochs[i],
            step_budget: s.step_budgets[i],
            eval_interval: s.eval_intervals[i],
            learning_rate: s.learning_rates[i],
            batch_size: s.batch_sizes[i],
            seed: derive_seed(cfg.seed, STREAM_ORDER, phase as u64),
            out_dir: out_dir.to_path_buf(),
            meta,
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out_dir.join(format!("phase{}_best.ckpt", self.phase))
    }
}

fn writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| TrainError::io(path, e))?,
    ))
}

fn write_line<W: Write, S: Serialize>(w: &mut W, path: &Path, v: &S) -> Result<()> {
    serde_json::to_writer(&mut *w, v)?;
    w.write_all(b"\n").map_err(|e| TrainError::io(path, e))
}

/// Mean combined loss over `data` in evaluation mode, batch-size weighted.
pub fn validation_loss<O: Objective>(
    obj: &O,
    store: &ParamStore<f32>,
    data: &[Prepared],
    batch: usize,
    loss: &LossSetup,
) -> Result<f64> {
    let mut total = 0.0;
    for chunk in data.chunks(batch.max(1)) {
        let refs: Vec<&Prepared> = chunk.iter().collect();
        let tape = Tape::inference();
        let ctx = Ctx::eval(&tape, store);
        let (pred, truth) = obj.forward(&ctx, &refs);
        let v = combined_loss(pred, truth, &loss.weights, &loss.extractor)?.values();
        total += v.total * chunk.len() as f64;
    }
    Ok(total / data.len().max(1) as f64)
}

fn save_checkpoint(
    store: &ParamStore<f32>,
    run: &PhaseRun,
    step: usize,
    val: f64,
    path: &Path,
) -> Result<()> {
    let mut meta = run.meta.clone();
    meta["phase"] = json!(run.phase);
    meta["step"] = json!(step);
    meta["val_loss"] = json!(val);
    meta["fingerprint"] = json!(store.fingerprint());
    checkpoint::save(store, meta, path)?;
    Ok(())
}

/// Optimizes `store` through `obj`, keeping the best-validation parameters
/// on disk. The starting parameters count as the first candidate, so the
/// saved checkpoint never validates worse than the input.
#[allow(clippy::too_many_arguments)]
pub fn run_phase<O: Objective>(
    obj: &O,
    store: &mut ParamStore<f32>,
    data: &PhaseData,
    run: &PhaseRun,
    loss: &LossSetup,
    weight_decay: f64,
    clip_norm: Option<f64>,
    warmup_fraction: f64,
    plateau: (f64, u32),
) -> Result<PhaseLog> {
    if data.train.is_empty() {
        return Err(TrainError::Missing(format!(
            "phase {} has no training samples",
            run.phase
        )));
    }
    if data.val.is_empty() {
        return Err(TrainError::Missing(format!(
            "phase {} has no validation samples",
            run.phase
        )));
    }
    std::fs::create_dir_all(&run.out_dir).map_err(|e| TrainError::io(&run.out_dir, e))?;
    let p = run.phase;
    let steps_path = run.out_dir.join(format!("phase{p}_steps.jsonl"));
    let epochs_path = run.out_dir.join(format!("phase{p}_epochs.jsonl"));
    let val_path = run.out_dir.join(format!("phase{p}_val.jsonl"));
    let (mut steps_w, mut epochs_w, mut val_w) = (
        writer(&steps_path)?,
        writer(&epochs_path)?,
        writer(&val_path)?,
    );

    let n = data.train.len();
    let per_epoch = n.div_ceil(run.batch_size);
    let total_steps = run.step_budget.unwrap_or(run.epochs * per_epoch);
    let warmup = (warmup_fraction * total_steps as f64).ceil() as u64;
    let mut sched = LrSchedule::new(run.learning_rate, warmup, plateau.0, plateau.1);
    let mut opt = AdamW::new(AdamWConfig {
        weight_decay,
        clip_norm,
        ..AdamWConfig::default()
    });
    let ckpt = run.checkpoint_path();

    let initial_val = validation_loss(obj, store, &data.val, run.batch_size, loss)?;
    sched.observe(initial_val);
    save_checkpoint(store, run, 0, initial_val, &ckpt)?;
    let mut log = PhaseLog {
        phase: p,
        steps: 0,
        epochs: Vec::new(),
        validations: Vec::new(),
        initial_val,
        best_val: initial_val,
        best_step: 0,
        final_step_loss: f64::NAN,
        checkpoint: ckpt.clone(),
    };

    let mut step = 0usize;
    let mut epoch = 0usize;
    while step < total_steps {
        let order = batch_indices(
            n,
            run.batch_size,
            derive_seed(run.seed, p as u64, epoch as u64),
        );
        let (mut sum, mut count) = (0.0, 0usize);
        for idx in order {
            if step == total_steps {
                break;
            }
            let batch: Vec<&Prepared> = idx.iter().map(|&i| &data.train[i]).collect();
            let (values, grads) = {
                let tape = Tape::new();
                let ctx = Ctx::new(
                    &tape,
                    store,
                    true,
                    derive_seed(run.seed, STREAM_DROPOUT, step as u64),
                );
                let (pred, truth) = obj.forward(&ctx, &batch);
                let l = combined_loss(pred, truth, &loss.weights, &loss.extractor)?;
                let v: LossValues = l.values();
                if !v.total.is_finite() {
                    let dump = run.out_dir.join(format!("phase{p}_diverged.ckpt"));
                    save_checkpoint(store, run, step, f64::NAN, &dump)?;
                    return Err(TrainError::Diverged {
                        phase: p,
                        step,
                        dump,
                    });
                }
                (v, tape.backward(l.total))
            };
            let rate = sched.lr(step as u64);
            opt.step(store, &grads, rate);
            let rec = StepRecord {
                step,
                mse: values.mse,
                l1: values.l1,
                perceptual: values.perceptual,
                total: values.total,
            };
            write_line(&mut steps_w, &steps_path, &rec)?;
            log.final_step_loss = values.total;
            sum += values.total;
            count += 1;
            step += 1;
            let due = match run.eval_interval {
                Some(k) => step.is_multiple_of(k) || step == total_steps,
                None => false,
            };
            if due {
                validate_and_keep(
                    obj, store, data, run, loss, &mut sched, &mut log, step, &ckpt, &mut val_w,
                    &val_path,
                )?;
            }
        }
        let rec = EpochRecord {
            epoch,
            steps: count,
            train_loss: sum / count.max(1) as f64,
            learning_rate: sched.lr(step as u64),
        };
        write_line(&mut epochs_w, &epochs_path, &rec)?;
        log::info!(
            "phase {p} epoch {epoch}: train loss {:.5} at step {step}",
            rec.train_loss
        );
        log.epochs.push(rec);
        if run.eval_interval.is_none() {
            validate_and_keep(
                obj, store, data, run, loss, &mut sched, &mut log, step, &ckpt, &mut val_w,
                &val_path,
            )?;
        }
        epoch += 1;
    }
    log.steps = step;
    for (w, path) in [
        (&mut steps_w, &steps_path),
        (&mut epochs_w, &epochs_path),
        (&mut val_w, &val_path),
    ] {
        w.flush().map_err(|e| TrainError::io(path, e))?;
    }
    let summary = run.out_dir.join(format!("phase{p}_summary.json"));
    std::fs::write(&summary, serde_json::to_vec_pretty(&log)?)
        .map_err(|e| TrainError::io(&summary, e))?;
    Ok(log)
}

#[allow(clippy::too_many_arguments)]
fn validate_and_keep<O: Objective>(
    obj: &O,
    store: &ParamStore<f32>,
    data: &PhaseData,
    run: &PhaseRun,
    loss: &LossSetup,
    sched: &mut LrSchedule,
    log: &mut PhaseLog,
    step: usize,
    ckpt: &Path,
    w: &mut BufWriter<File>,
    path: &Path,
) -> Result<()> {
    let v = validation_loss(obj, store, &data.val, run.batch_size, loss)?;
    let improved = v < log.best_val;
    if improved {
        log.best_val = v;
        log.best_step = step;
        save_checkpoint(store, run, step, v, ckpt)?;
    }
    sched.observe(v);
    let rec = ValRecord {
        step,
        val_loss: v,
        learning_rate: sched.lr(step as u64),
        improved,
    };
    write_line(w, path, &rec)?;
    log.validations.push(rec);
    Ok(())
}

fn run_from_config<O: Objective>(
    cfg: &ExperimentConfig,
    obj: &O,
    store: &mut ParamStore<f32>,
    data: &PhaseData,
    run: &PhaseRun,
) -> Result<PhaseLog> {
    let s = &cfg.schedule;
    run_phase(
        obj,
        store,
        data,
        run,
        &LossSetup::new(cfg),
        s.weight_decay,
        s.clip_norm,
        s.warmup_fraction,
        (s.plateau_factor, s.plateau_patience),
    )
}

/// Result of one phase.
#[derive(Clone, Debug)]
pub struct PhaseOutcome {
    pub log: PhaseLog,
    pub checkpoint: PathBuf,
    /// Stage-1 fingerprints before and after phase 3.
    pub frozen: Option<(String, String)>,
}

/// Phase 1: the stage-1 network on coarse labels.
pub fn train_phase1(cfg: &ExperimentConfig, data: &PhaseData, out: &Path) -> Result<PhaseOutcome> {
    cfg.validate()?;
    let mut store = ParamStore::<f32>::new();
    let net = LrNet::build(
        &cfg.lr_net,
        &mut store,
        derive_seed(cfg.seed, STREAM_INIT, 1),
    )?;
    let run = PhaseRun::from_config(
        cfg,
        1,
        out,
        json!({ "network": "stage1", "config": cfg.lr_net }),
    );
    let log = run_from_config(cfg, &Stage1Objective(&net), &mut store, data, &run)?;
    Ok(PhaseOutcome {
        checkpoint: log.checkpoint.clone(),
        log,
        frozen: None,
    })
}

/// Phase 2: SR-Net on ground-truth coarse maps.
pub fn train_phase2(cfg: &ExperimentConfig, data: &PhaseData, out: &Path) -> Result<PhaseOutcome> {
    cfg.validate()?;
    let mut store = ParamStore::<f32>::new();
    let net = SrNet::build(
        &cfg.sr_net,
        &mut store,
        derive_seed(cfg.seed, STREAM_INIT, 2),
    )?;
    let run = PhaseRun::from_config(
        cfg,
        2,
        out,
        json!({ "network": "sr", "config": cfg.sr_net }),
    );
    let log = run_from_config(
        cfg,
        &SrObjective {
            net: &net,
            use_label: true,
        },
        &mut store,
        data,
        &run,
    )?;
    Ok(PhaseOutcome {
        checkpoint: log.checkpoint.clone(),
        log,
        frozen: None,
    })
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(TrainError::Missing(format!(
            "{what} checkpoint {} does not exist",
            path.display()
        )));
    }
    Ok(())
}

fn meta_config<C: serde::de::DeserializeOwned>(path: &Path, network: &str) -> Result<C> {
    let (_, meta) = checkpoint::read::<f32>(path)?;
    if meta["network"] != network {
        return Err(TrainError::Config(format!(
            "{} holds a {} network, expected {network}",
            path.display(),
            meta["network"]
        )));
    }
    Ok(serde_json::from_value(meta["config"].clone())?)
}

/// Rebuilds a stage-1 network from its checkpoint, with every parameter frozen.
pub fn load_stage1(path: &Path) -> Result<(LrNet, ParamStore<f32>)> {
    require(path, "stage-1")?;
    let cfg: LRNetConfig = meta_config(path, "stage1")?;
    let mut store = ParamStore::new();
    let net = LrNet::build(&cfg, &mut store, 0)?;
    checkpoint::load_into(&mut store, path)?;
    store.freeze_all();
    Ok((net, store))
}

pub fn load_sr(path: &Path) -> Result<(SrNet, ParamStore<f32>)> {
    require(path, "SR-Net")?;
    let cfg: SRNetConfig = meta_config(path, "sr")?;
    let mut store = ParamStore::new();
    let net = SrNet::build(&cfg, &mut store, 0)?;
    checkpoint::load_into(&mut store, path)?;
    Ok((net, store))
}

/// Stage-1 predictions in evaluation mode, written to `sr_input`.
pub fn predict_stage1(
    net: &LrNet,
    store: &ParamStore<f32>,
    samples: &mut [Prepared],
    batch: usize,
) {
    for chunk in samples.chunks_mut(batch.max(1)) {
        let pred = {
            let refs: Vec<&Prepared> = chunk.iter().collect();
            let tape = Tape::inference();
            let ctx = Ctx::eval(&tape, store);
            let (pred, _) = Stage1Objective(net).forward(&ctx, &refs);
            pred.value()
        };
        for (i, p) in chunk.iter_mut().enumerate() {
            p.sr_input = pred.index_axis0(i);
        }
    }
}

/// Phase 3: SR-Net fine-tuned on the predictions of a frozen stage-1 network.
pub fn train_phase3(
    cfg: &ExperimentConfig,
    stage1: &Path,
    phase2: &Path,
    data: &PhaseData,
    out: &Path,
) -> Result<PhaseOutcome> {
    cfg.validate()?;
    require(stage1, "stage-1")?;
    require(phase2, "phase-2 SR-Net")?;
    let (lr_net, lr_store) = load_stage1(stage1)?;
    let before = lr_store.fingerprint();
    let (net, mut store) = load_sr(phase2)?;
    let mut fed = PhaseData {
        train: data.train.clone(),
        val: data.val.clone(),
    };
    let bs = cfg.schedule.batch_sizes[0];
    predict_stage1(&lr_net, &lr_store, &mut fed.train, bs);
    predict_stage1(&lr_net, &lr_store, &mut fed.val, bs);
    let meta = json!({ "network": "sr", "config": net.cfg, "stage1_fingerprint": before });
    let run = PhaseRun::from_config(cfg, 3, out, meta);
    let log = run_from_config(
        cfg,
        &SrObjective {
            net: &net,
            use_label: false,
        },
        &mut store,
        &fed,
        &run,
    )?;
    let after = lr_store.fingerprint();
    if before != after {
        return Err(TrainError::FrozenChanged { before, after });
    }
    Ok(PhaseOutcome {
        checkpoint: log.checkpoint.clone(),
        log,
        frozen: Some((before, after)),
    })
}
