use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use df3d_core::container::{read_map, write_env, write_map, write_tx};
use df3d_core::dataset::{scene_for, transmitters_for, HybridDatasetManifest, Resolution};
use df3d_core::oracle::generate_radio_map;
use df3d_core::TransmitterTensor;
use df3d_train::complexity::complexity_report;
use df3d_train::data::PhaseData;
use df3d_train::pipeline::{ensure_dataset, run_pipeline};
use df3d_train::render::{render_slices, MapView};
use df3d_train::sweeps::{sweep_delta, sweep_m};
use df3d_train::{evaluate_suite, ExperimentConfig, Method, Result, SuiteCheckpoints, TrainError};

#[derive(Parser)]
#[command(name = "df3d", version, about = "Two-stage 3D radio map estimation")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment configuration; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the dataset seed.
    #[arg(long)]
    data_seed: Option<u64>,
    /// Overrides the number of pool environments.
    #[arg(long)]
    n_envs: Option<usize>,
    /// Overrides the number of fine-labelled environments.
    #[arg(long)]
    m_hr: Option<usize>,
    /// Overrides the coarse voxel size.
    #[arg(long)]
    delta_l: Option<f64>,
    /// Overrides the epoch count of every phase.
    #[arg(long)]
    epochs: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.data_seed {
            cfg.dataset.seed = s;
        }
        if let Some(n) = self.n_envs {
            cfg.dataset.n_envs = n;
        }
        if let Some(m) = self.m_hr {
            cfg.dataset.m_hr = m;
        }
        if let Some(d) = self.delta_l {
            cfg.dataset.delta_l = d;
        }
        if let Some(e) = self.epochs {
            cfg.schedule.epochs = [e; 3];
        }
        cfg.sync();
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage1 {
    Lrnet,
    Radiounet3d,
}

#[derive(Subcommand)]
enum Command {
    /// Writes scenes, tensors and fine radio maps without splits.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        envs: usize,
    },
    /// Builds the hybrid dataset and its manifest.
    BuildDataset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Runs one training phase.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        phase: u8,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Stage-1 network for phase 1.
        #[arg(long, value_enum, default_value = "lrnet")]
        stage1: Stage1,
        /// Stage-1 checkpoint (phase 3).
        #[arg(long)]
        stage1_ckpt: Option<PathBuf>,
        /// Phase-2 SR-Net checkpoint (phase 3).
        #[arg(long)]
        phase2_ckpt: Option<PathBuf>,
    },
    /// Runs the full pipeline and the test-split comparison.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Also trains the RadioUNet3D baseline.
        #[arg(long)]
        baseline: bool,
    },
    /// Scores checkpoints on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        lrnet: Option<PathBuf>,
        #[arg(long)]
        radiounet3d: Option<PathBuf>,
        #[arg(long)]
        sr_proposed: Option<PathBuf>,
        #[arg(long)]
        sr_radiounet3d: Option<PathBuf>,
    },
    /// NMSE against the number of fine-labelled training environments.
    SweepM {
        #[command(flatten)]
        common: Common,
        /// Dataset with fine labels on every pool environment.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        stage1_ckpt: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        m: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        hr_val: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// NMSE against the coarse voxel size.
    SweepDelta {
        #[command(flatten)]
        common: Common,
        /// Coarse voxel sizes to sweep.
        #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
        values: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter and multiply-accumulate counts per method.
    Complexity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Horizontal slices of one map, or of several side by side.
    RenderSlices {
        /// Normalized map containers.
        #[arg(long = "map", required = true)]
        maps: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        altitudes: Vec<usize>,
        /// Output path prefix; files are `<prefix>_k<k>.png`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        scale: usize,
    },
}

fn write_json<S: serde::Serialize>(path: &Path, v: &S) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(|e| TrainError::io(p, e))?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(v)?).map_err(|e| TrainError::io(path, e))
}

fn generate(cfg: &ExperimentConfig, out: &Path, envs: usize) -> Result<()> {
    let d = &cfg.dataset;
    let grid = d.fine_grid()?;
    std::fs::create_dir_all(out).map_err(|e| TrainError::io(out, e))?;
    for id in 0..envs {
        let scene = scene_for(d, id)?;
        write_json(&out.join(format!("scene_{id:04}.json")), &scene)?;
        write_env(
            &scene.voxelize(&grid),
            &out.join(format!("env_{id:04}.df3d")),
        )?;
        for (t, loc) in transmitters_for(d, &scene, id)?.into_iter().enumerate() {
            write_tx(
                &TransmitterTensor::from_location(grid, loc)?,
                &out.join(format!("tx_{id:04}_{t:03}.df3d")),
            )?;
            let map = generate_radio_map(&scene, &d.oracle, loc, &grid);
            write_map(&map, &out.join(format!("map_{id:04}_{t:03}.df3d")))?;
        }
        println!("scene {id}: {} boxes", scene.boxes.len());
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Generate { common, out, envs } => generate(&common.load()?, &out, envs),
        Command::BuildDataset { common, out } => {
            let m = ensure_dataset(&common.load()?.dataset, &out)?;
            println!(
                "{} environments, {} records written to {}",
                m.envs.len(),
                m.records.len(),
                out.display()
            );
            Ok(())
        }
        Command::Train {
            common,
            phase,
            data,
            out,
            stage1,
            stage1_ckpt,
            phase2_ckpt,
        } => {
            let mut cfg = common.load()?;
            if matches!(stage1, Stage1::Radiounet3d) {
                cfg = cfg.with_radiounet3d();
            }
            let manifest = HybridDatasetManifest::read(&data)?;
            let outcome = match phase {
                1 => df3d_train::train_phase1(
                    &cfg,
                    &PhaseData::load(&manifest, &data, Resolution::Low)?,
                    &out,
                )?,
                2 => df3d_train::train_phase2(
                    &cfg,
                    &PhaseData::load(&manifest, &data, Resolution::High)?,
                    &out,
                )?,
                _ => {
                    let s1 = stage1_ckpt.ok_or_else(|| {
                        TrainError::Missing("--stage1-ckpt is required for phase 3".into())
                    })?;
                    let s2 = phase2_ckpt.ok_or_else(|| {
                        TrainError::Missing("--phase2-ckpt is required for phase 3".into())
                    })?;
                    df3d_train::train_phase3(
                        &cfg,
                        &s1,
                        &s2,
                        &PhaseData::load(&manifest, &data, Resolution::High)?,
                        &out,
                    )?
                }
            };
            println!(
                "phase {phase}: {} steps, best validation loss {:.6} at step {}, checkpoint {}",
                outcome.log.steps,
                outcome.log.best_val,
                outcome.log.best_step,
                outcome.checkpoint.display()
            );
            Ok(())
        }
        Command::Run {
            common,
            out,
            baseline,
        } => {
            let r = run_pipeline(&common.load()?, &out, baseline)?;
            print!("{}", r.suite.table());
            Ok(())
        }
        Command::Evaluate {
            common,
            data,
            out,
            lrnet,
            radiounet3d,
            sr_proposed,
            sr_radiounet3d,
        } => {
            let cfg = common.load()?;
            let manifest = HybridDatasetManifest::read(&data)?;
            let test = df3d_train::data::load(
                &manifest,
                &data,
                df3d_core::dataset::Split::Test,
                Resolution::High,
            )?;
            let mut methods = Vec::new();
            if radiounet3d.is_some() {
                methods.push(Method::RadioUNet3DTrilinear);
                if sr_radiounet3d.is_some() {
                    methods.push(Method::RadioUNet3DSr);
                }
            }
            if lrnet.is_some() {
                methods.push(Method::LrNetTrilinear);
                if sr_proposed.is_some() {
                    methods.push(Method::Proposed);
                }
            }
            methods.push(Method::Truth);
            let ck = SuiteCheckpoints {
                lrnet,
                radiounet3d,
                sr_proposed,
                sr_radiounet3d,
            };
            let report = evaluate_suite(&ck, &test, &methods, &cfg.metrics)?;
            report.write(&out, "table")?;
            print!("{}", report.table());
            Ok(())
        }
        Command::SweepM {
            common,
            data,
            stage1_ckpt,
            m,
            hr_val,
            out,
        } => {
            let cfg = common.load()?;
            let manifest = HybridDatasetManifest::read(&data)?;
            let r = sweep_m(&cfg, &manifest, &data, &stage1_ckpt, &m, hr_val, &out)?;
            r.write(&out)?;
            print!("{}", r.table());
            Ok(())
        }
        Command::SweepDelta {
            common,
            values,
            out,
        } => {
            let r = sweep_delta(&common.load()?, &values, &out)?;
            r.write(&out)?;
            print!("{}", r.table());
            Ok(())
        }
        Command::Complexity { common, out } => {
            let cfg = common.load()?;
            let r = complexity_report(&cfg.lr_net, &cfg.sr_net, &cfg.dataset)?;
            if let Some(dir) = out {
                write_json(&dir.join("complexity.json"), &r)?;
                std::fs::write(dir.join("complexity.txt"), r.table())
                    .map_err(|e| TrainError::io(&dir, e))?;
            }
            print!("{}", r.table());
            Ok(())
        }
        Command::RenderSlices {
            maps,
            altitudes,
            out,
            scale,
        } => {
            let loaded = maps
                .iter()
                .map(|p| read_map(p, true))
                .collect::<df3d_core::Result<Vec<_>>>()?;
            let views: Vec<MapView<'_>> = loaded
                .iter()
                .map(|m| MapView {
                    data: &m.data,
                    dims: m.grid.dims,
                })
                .collect();
            for p in render_slices(&views, &altitudes, &out, scale)? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        super::Cli::command().debug_assert();
    }
}
