//! Hybrid dataset: low-resolution labels for every environment, high-resolution
//! labels for a seed-chosen subset, environment-level splits.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{self, write_atomic};
use crate::error::{CoreError, Result};
use crate::grid::{integer_ratio, EnvironmentTensor, GridSpec, RadioMapTensor, TransmitterTensor};
use crate::oracle::{
    generate_radio_map, generate_scene, sample_transmitter, OraclePropagationParams, Scene,
    SceneConfig, TxConfig,
};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Environments in the train/val pool.
    pub n_envs: usize,
    /// Additional held-out environments labelled at both resolutions.
    pub n_test_envs: usize,
    pub tx_per_env: usize,
    /// Pool environments that also get high-resolution labels.
    pub m_hr: usize,
    pub delta: f64,
    pub delta_l: f64,
    pub val_fraction: f64,
    pub hr_val_fraction: f64,
    pub scene: SceneConfig,
    pub tx: TxConfig,
    pub oracle: OraclePropagationParams,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_envs: 64,
            n_test_envs: 8,
            tx_per_env: 4,
            m_hr: 8,
            delta: 1.0,
            delta_l: 4.0,
            val_fraction: 80.0 / 517.0,
            hr_val_fraction: 20.0 / 60.0,
            scene: SceneConfig::default(),
            tx: TxConfig::default(),
            oracle: OraclePropagationParams::default(),
            seed: 2024,
        }
    }
}

impl DatasetConfig {
    pub fn fine_grid(&self) -> Result<GridSpec> {
        GridSpec::cube(self.scene.side, self.delta)
    }

    pub fn coarse_grid(&self) -> Result<GridSpec> {
        self.fine_grid()?.coarsen(self.delta_l)
    }

    /// log2 of the resolution ratio, i.e. the number of SR upsampling blocks.
    pub fn upsample_blocks(&self) -> Result<u32> {
        let r = integer_ratio(self.delta_l, self.delta)?;
        if !r.is_power_of_two() {
            return Err(CoreError::ResolutionMismatch(format!(
                "ratio {r} is not a power of two"
            )));
        }
        Ok(r.trailing_zeros())
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_hr > self.n_envs {
            return Err(CoreError::Parameter(format!(
                "M = {} exceeds N = {}",
                self.m_hr, self.n_envs
            )));
        }
        if self.tx_per_env == 0 || self.n_envs == 0 {
            return Err(CoreError::Parameter(
                "need at least one environment and transmitter".into(),
            ));
        }
        for f in [self.val_fraction, self.hr_val_fraction] {
            if !(0.0..1.0).contains(&f) {
                return Err(CoreError::Parameter(format!(
                    "split fraction {f} outside [0, 1)"
                )));
            }
        }
        if !(self.tx.height_min <= self.tx.height_max
            && self.tx.height_max < self.scene.side
            && self.tx.height_min >= 0.0)
        {
            return Err(CoreError::Parameter(format!(
                "transmitter heights [{}, {}] must lie inside the region",
                self.tx.height_min, self.tx.height_max
            )));
        }
        self.oracle.validate()?;
        self.coarse_grid()?;
        self.upsample_blocks()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    Low,
    High,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvEntry {
    pub env_id: usize,
    pub split: Split,
    /// Split within the high-resolution subset, if this environment has HR labels.
    pub hr_split: Option<Split>,
    pub scene: String,
    pub env: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub env_id: usize,
    pub tx_id: usize,
    pub tx_location: [f64; 3],
    pub tx: String,
    pub lr_map: String,
    pub hr_map: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridDatasetManifest {
    pub version: u32,
    pub n: usize,
    pub t: usize,
    pub m: usize,
    pub delta: f64,
    pub delta_l: f64,
    pub seed: u64,
    pub config: DatasetConfig,
    pub envs: Vec<EnvEntry>,
    pub records: Vec<SampleRecord>,
}

impl HybridDatasetManifest {
    pub fn env(&self, env_id: usize) -> &EnvEntry {
        &self.envs[env_id]
    }

    pub fn envs_in(&self, split: Split) -> Vec<usize> {
        self.envs
            .iter()
            .filter(|e| e.split == split)
            .map(|e| e.env_id)
            .collect()
    }

    pub fn hr_envs_in(&self, split: Split) -> Vec<usize> {
        self.envs
            .iter()
            .filter(|e| e.hr_split == Some(split))
            .map(|e| e.env_id)
            .collect()
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        write_atomic(&root.join("manifest.json"), &self.to_json()?)
    }

    pub fn read(root: &Path) -> Result<Self> {
        let p = root.join("manifest.json");
        let bytes = fs::read(&p).map_err(|e| CoreError::io(&p, e))?;
        let m: Self =
            serde_json::from_slice(&bytes).map_err(|e| CoreError::format(&p, e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(CoreError::format(
                &p,
                format!("manifest version {} unsupported", m.version),
            ));
        }
        Ok(m)
    }
}

/// SplitMix64 step, used to derive independent per-item seeds.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_SCENE: u64 = 1;
const STREAM_TX: u64 = 2;
const STREAM_HR: u64 = 3;
const STREAM_SPLIT: u64 = 4;
const STREAM_HR_SPLIT: u64 = 5;

/// `(train, val)` counts: val is rounded to nearest, the remainder goes to train.
pub fn split_counts(n: usize, val_fraction: f64) -> (usize, usize) {
    let val = ((n as f64 * val_fraction).round() as usize).min(n);
    (n - val, val)
}

/// Assigns environment-level splits. Pool environments are split train/val;
/// the HR subset is split independently; test environments are untouched.
pub fn split_dataset(
    manifest: &mut HybridDatasetManifest,
    val_fraction: f64,
    hr_val_fraction: f64,
    seed: u64,
) {
    let pool: Vec<usize> = manifest
        .envs
        .iter()
        .filter(|e| e.split != Split::Test)
        .map(|e| e.env_id)
        .collect();
    let hr: Vec<usize> = manifest
        .envs
        .iter()
        .filter(|e| e.split != Split::Test && e.hr_split.is_some())
        .map(|e| e.env_id)
        .collect();

    let mut order = pool.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        seed,
        STREAM_SPLIT,
        0,
    )));
    let (_, nval) = split_counts(order.len(), val_fraction);
    for (rank, &id) in order.iter().enumerate() {
        manifest.envs[id].split = if rank < nval {
            Split::Val
        } else {
            Split::Train
        };
    }

    let mut hr_order = hr;
    hr_order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        seed,
        STREAM_HR_SPLIT,
        0,
    )));
    let (_, nval) = split_counts(hr_order.len(), hr_val_fraction);
    for (rank, &id) in hr_order.iter().enumerate() {
        manifest.envs[id].hr_split = Some(if rank < nval {
            Split::Val
        } else {
            Split::Train
        });
    }
}

/// Seed-chosen subset of `0..n` of size `m`, sorted.
pub fn choose_hr_envs(n: usize, m: usize, seed: u64) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        seed, STREAM_HR, 0,
    )));
    let mut out = ids[..m].to_vec();
    out.sort_unstable();
    out
}

pub fn scene_for(cfg: &DatasetConfig, env_id: usize) -> Result<Scene> {
    generate_scene(
        &cfg.scene,
        derive_seed(cfg.seed, STREAM_SCENE, env_id as u64),
    )
}

pub fn transmitters_for(
    cfg: &DatasetConfig,
    scene: &Scene,
    env_id: usize,
) -> Result<Vec<[f64; 3]>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_TX, env_id as u64));
    (0..cfg.tx_per_env)
        .map(|_| sample_transmitter(scene, &cfg.tx, &mut rng))
        .collect()
}

fn env_name(id: usize) -> String {
    format!("env_{id:04}")
}

fn sample_name(env: usize, tx: usize) -> String {
    format!("env_{env:04}_tx_{tx:03}.df3d")
}

/// Generates every scene, tensor and label under `root` and writes the manifest.
pub fn build_hybrid_dataset(cfg: &DatasetConfig, root: &Path) -> Result<HybridDatasetManifest> {
    cfg.validate()?;
    let fine = cfg.fine_grid()?;
    let coarse = cfg.coarse_grid()?;
    for sub in ["scenes", "env", "tx", "lr", "hr"] {
        let d = root.join(sub);
        fs::create_dir_all(&d).map_err(|e| CoreError::io(&d, e))?;
    }
    let total_envs = cfg.n_envs + cfg.n_test_envs;
    let hr_set = choose_hr_envs(cfg.n_envs, cfg.m_hr, cfg.seed);

    let per_env: Vec<(EnvEntry, Vec<SampleRecord>)> = (0..total_envs)
        .into_par_iter()
        .map(|env_id| -> Result<(EnvEntry, Vec<SampleRecord>)> {
            let is_test = env_id >= cfg.n_envs;
            let has_hr = is_test || hr_set.binary_search(&env_id).is_ok();
            let scene = scene_for(cfg, env_id)?;
            let name = env_name(env_id);
            let scene_rel = format!("scenes/{name}.json");
            let scene_json = serde_json::to_vec_pretty(&SceneFile {
                scene: &scene,
                oracle: &cfg.oracle,
            })?;
            write_atomic(&root.join(&scene_rel), &scene_json)?;
            let env_rel = format!("env/{name}.df3d");
            container::write_env(&scene.voxelize(&fine), &root.join(&env_rel))?;
            let mut records = Vec::with_capacity(cfg.tx_per_env);
            for (tx_id, q) in transmitters_for(cfg, &scene, env_id)?
                .into_iter()
                .enumerate()
            {
                let file = sample_name(env_id, tx_id);
                let tx_rel = format!("tx/{file}");
                container::write_tx(
                    &TransmitterTensor::from_location(fine, q)?,
                    &root.join(&tx_rel),
                )?;
                let lr_rel = format!("lr/{file}");
                container::write_map(
                    &generate_radio_map(&scene, &cfg.oracle, q, &coarse),
                    &root.join(&lr_rel),
                )?;
                let hr_map = if has_hr {
                    let hr_rel = format!("hr/{file}");
                    container::write_map(
                        &generate_radio_map(&scene, &cfg.oracle, q, &fine),
                        &root.join(&hr_rel),
                    )?;
                    Some(hr_rel)
                } else {
                    None
                };
                records.push(SampleRecord {
                    env_id,
                    tx_id,
                    tx_location: q,
                    tx: tx_rel,
                    lr_map: lr_rel,
                    hr_map,
                });
            }
            let split = if is_test { Split::Test } else { Split::Train };
            let hr_split = has_hr.then_some(split);
            Ok((
                EnvEntry {
                    env_id,
                    split,
                    hr_split,
                    scene: scene_rel,
                    env: env_rel,
                },
                records,
            ))
        })
        .collect::<Result<_>>()?;

    let mut envs = Vec::with_capacity(total_envs);
    let mut records = Vec::new();
    for (e, r) in per_env {
        envs.push(e);
        records.extend(r);
    }
    let mut manifest = HybridDatasetManifest {
        version: MANIFEST_VERSION,
        n: cfg.n_envs,
        t: cfg.tx_per_env,
        m: cfg.m_hr,
        delta: cfg.delta,
        delta_l: cfg.delta_l,
        seed: cfg.seed,
        config: cfg.clone(),
        envs,
        records,
    };
    split_dataset(
        &mut manifest,
        cfg.val_fraction,
        cfg.hr_val_fraction,
        cfg.seed,
    );
    manifest.write(root)?;
    log::info!(
        "built dataset at {}: {} envs, {} records, {} with HR labels",
        root.display(),
        manifest.envs.len(),
        manifest.records.len(),
        manifest
            .records
            .iter()
            .filter(|r| r.hr_map.is_some())
            .count()
    );
    Ok(manifest)
}

#[derive(Serialize)]
struct SceneFile<'a> {
    scene: &'a Scene,
    oracle: &'a OraclePropagationParams,
}

#[derive(Deserialize)]
struct SceneFileOwned {
    scene: Scene,
}

pub fn read_scene(path: &Path) -> Result<Scene> {
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    let f: SceneFileOwned =
        serde_json::from_slice(&bytes).map_err(|e| CoreError::format(path, e.to_string()))?;
    Ok(f.scene)
}

/// One loaded record. `hr` is present when requested and available.
#[derive(Clone, Debug)]
pub struct Sample {
    pub env_id: usize,
    pub tx_id: usize,
    pub env: EnvironmentTensor,
    pub tx: TransmitterTensor,
    pub lr: RadioMapTensor,
    pub hr: Option<RadioMapTensor>,
}

/// Records whose environment belongs to `split` at the given resolution.
/// `High` selects by the HR split and requires HR labels.
pub fn select_records(
    manifest: &HybridDatasetManifest,
    split: Split,
    res: Resolution,
) -> Vec<&SampleRecord> {
    manifest
        .records
        .iter()
        .filter(|r| {
            let e = manifest.env(r.env_id);
            match res {
                Resolution::Low => e.split == split,
                Resolution::High => e.hr_split == Some(split) && r.hr_map.is_some(),
            }
        })
        .collect()
}

pub fn load_sample(
    manifest: &HybridDatasetManifest,
    root: &Path,
    rec: &SampleRecord,
    with_hr: bool,
) -> Result<Sample> {
    let e = manifest.env(rec.env_id);
    let env = container::read_env(&root.join(&e.env))?;
    let tx = container::read_tx(&root.join(&rec.tx), rec.tx_location)?;
    let lr = container::read_map(&root.join(&rec.lr_map), true)?;
    let hr = match (&rec.hr_map, with_hr) {
        (Some(p), true) => Some(container::read_map(&root.join(p), true)?),
        (None, true) => {
            return Err(CoreError::format(
                root.join(&rec.lr_map),
                "record has no high-resolution label",
            ));
        }
        _ => None,
    };
    let coarse = env.grid.coarsen(manifest.delta_l)?;
    if tx.grid != env.grid || lr.grid != coarse || hr.as_ref().is_some_and(|h| h.grid != env.grid) {
        return Err(CoreError::format(
            root.join(&rec.lr_map),
            "record grids are inconsistent",
        ));
    }
    Ok(Sample {
        env_id: rec.env_id,
        tx_id: rec.tx_id,
        env,
        tx,
        lr,
        hr,
    })
}

pub fn load_split(
    manifest: &HybridDatasetManifest,
    root: &Path,
    split: Split,
    res: Resolution,
) -> Result<Vec<Sample>> {
    select_records(manifest, split, res)
        .into_iter()
        .map(|r| load_sample(manifest, root, r, res == Resolution::High))
        .collect()
}

/// Deterministic shuffled batching of `n` items; the last batch may be short.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// One epoch of batches for a split, in seeded order.
pub fn load_batch(
    manifest: &HybridDatasetManifest,
    root: &Path,
    split: Split,
    res: Resolution,
    batch_size: usize,
    shuffle_seed: u64,
) -> Result<Vec<Vec<Sample>>> {
    let samples = load_split(manifest, root, split, res)?;
    Ok(batch_indices(samples.len(), batch_size, shuffle_seed)
        .into_iter()
        .map(|b| b.into_iter().map(|i| samples[i].clone()).collect())
        .collect())
}

pub fn resolve(root: &Path, rel: &str) -> PathBuf {
    root.join(rel)
}
