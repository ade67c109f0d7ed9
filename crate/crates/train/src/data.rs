//! Loaded samples as network-ready arrays.

use std::collections::BTreeSet;
use std::path::Path;

use df3d_core::dataset::{load_sample, HybridDatasetManifest, Resolution, Sample, Split};
use df3d_models::preprocess;
use df3d_nn::Array;

use crate::error::Result;

/// One record with everything either stage needs. Volumes are `[1, D, H, W]`.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub env_id: usize,
    pub tx_id: usize,
    pub coarse_dims: [usize; 3],
    pub fine_dims: [usize; 3],
    /// Coarse environment, transmitter and LoS.
    pub stage1: [Array<f32>; 3],
    /// Ground-truth coarse map.
    pub lr: Array<f32>,
    /// Coarse map fed to SR-Net: the label in phase 2, a stage-1 prediction
    /// in phase 3 and at evaluation time.
    pub sr_input: Array<f32>,
    /// Fine environment and transmitter.
    pub fine: Option<[Array<f32>; 2]>,
    pub hr: Option<Array<f32>>,
}

fn volume<T: Copy + Into<f64>>(dims: [usize; 3], data: &[T]) -> Array<f32> {
    Array::from_vec(
        &[1, dims[0], dims[1], dims[2]],
        data.iter().map(|&v| v.into() as f32).collect(),
    )
}

impl Prepared {
    pub fn from_sample(s: &Sample, delta_l: f64) -> Result<Self> {
        let (env_l, tx_l, los) = preprocess(&s.env, &s.tx, delta_l)?;
        let cd = env_l.grid.dims;
        let fd = s.env.grid.dims;
        let lr = volume(cd, &s.lr.data);
        let fine =
            s.hr.as_ref()
                .map(|_| [volume(fd, &s.env.data), volume(fd, &s.tx.data)]);
        Ok(Self {
            env_id: s.env_id,
            tx_id: s.tx_id,
            coarse_dims: cd,
            fine_dims: fd,
            stage1: [
                volume(cd, &env_l.data),
                volume(cd, &tx_l.data),
                volume(cd, &los.data),
            ],
            sr_input: lr.clone(),
            lr,
            fine,
            hr: s.hr.as_ref().map(|h| volume(fd, &h.data)),
        })
    }

    pub fn fine(&self) -> &[Array<f32>; 2] {
        self.fine
            .as_ref()
            .expect("sample loaded without fine tensors")
    }

    pub fn hr(&self) -> &Array<f32> {
        self.hr
            .as_ref()
            .expect("sample loaded without a high-resolution label")
    }
}

/// Stacks per-sample `[1, D, H, W]` volumes into `[B, 1, D, H, W]`.
pub fn stack<'a>(items: impl IntoIterator<Item = &'a Array<f32>>) -> Array<f32> {
    let v: Vec<&Array<f32>> = items.into_iter().collect();
    Array::stack(&v)
}

/// Loads every record of the listed environments, in manifest order.
pub fn load_envs(
    manifest: &HybridDatasetManifest,
    root: &Path,
    envs: &[usize],
    with_hr: bool,
) -> Result<Vec<Prepared>> {
    let set: BTreeSet<usize> = envs.iter().copied().collect();
    manifest
        .records
        .iter()
        .filter(|r| set.contains(&r.env_id))
        .map(|r| Prepared::from_sample(&load_sample(manifest, root, r, with_hr)?, manifest.delta_l))
        .collect()
}

/// Environments of a split at a resolution: the pool split for `Low`, the
/// HR split for `High`.
pub fn split_envs(manifest: &HybridDatasetManifest, split: Split, res: Resolution) -> Vec<usize> {
    match res {
        Resolution::Low => manifest.envs_in(split),
        Resolution::High if split == Split::Test => manifest.envs_in(Split::Test),
        Resolution::High => manifest.hr_envs_in(split),
    }
}

pub fn load(
    manifest: &HybridDatasetManifest,
    root: &Path,
    split: Split,
    res: Resolution,
) -> Result<Vec<Prepared>> {
    load_envs(
        manifest,
        root,
        &split_envs(manifest, split, res),
        res == Resolution::High,
    )
}

/// Train and validation sets of one phase.
pub struct PhaseData {
    pub train: Vec<Prepared>,
    pub val: Vec<Prepared>,
}

impl PhaseData {
    pub fn load(manifest: &HybridDatasetManifest, root: &Path, res: Resolution) -> Result<Self> {
        Ok(Self {
            train: load(manifest, root, Split::Train, res)?,
            val: load(manifest, root, Split::Val, res)?,
        })
    }
}
