//! Parameter, multiply-accumulate and activation counts per method, for one
//! sample at the configured grid sizes.

use std::fmt::Write as _;

use df3d_core::dataset::DatasetConfig;
use df3d_models::report::{lr_cost, sr_cost, trilinear_cost, Cost};
use df3d_models::{LRNetConfig, SRNetConfig};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityRow {
    pub method: String,
    pub params: usize,
    pub macs: u64,
    pub activation_elements: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub coarse_dims: [usize; 3],
    pub fine_dims: [usize; 3],
    pub rows: Vec<ComplexityRow>,
}

impl ComplexityReport {
    pub fn row(&self, method: &str) -> Option<&ComplexityRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<24}{:>14}{:>16}{:>20}\n",
            "Method", "Params", "MACs (G)", "Activations (M)"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<24}{:>14}{:>16.4}{:>20.3}",
                r.method,
                r.params,
                r.macs as f64 / 1e9,
                r.activation_elements as f64 / 1e6
            );
        }
        s
    }
}

fn row(method: &str, c: Cost) -> ComplexityRow {
    ComplexityRow {
        method: method.into(),
        params: c.params,
        macs: c.macs,
        activation_elements: c.activation_elements,
    }
}

/// The four two-stage methods, SR-Net alone, and a single-stage network:
/// the LR-Net architecture applied directly at the fine resolution.
pub fn complexity_report(
    lr: &LRNetConfig,
    sr: &SRNetConfig,
    dataset: &DatasetConfig,
) -> Result<ComplexityReport> {
    let coarse = dataset.coarse_grid()?.dims;
    let fine = dataset.fine_grid()?.dims;
    let lr_c = lr_cost(lr, coarse)?;
    let r3d_c = lr_cost(&lr.radiounet3d(), coarse)?;
    let sr_c = sr_cost(sr, coarse)?;
    let tri = trilinear_cost(coarse, fine);
    let single = LRNetConfig {
        delta_l: dataset.delta,
        ..lr.clone()
    };
    let single_c = lr_cost(&single, fine)?;
    Ok(ComplexityReport {
        coarse_dims: coarse,
        fine_dims: fine,
        rows: vec![
            row("RadioUNet3D-Trilinear", r3d_c.plus(tri)),
            row("RadioUNet3D-SR", r3d_c.plus(sr_c)),
            row("LRNet-Trilinear", lr_c.plus(tri)),
            row("Proposed", lr_c.plus(sr_c)),
            row("Trilinear only", tri),
            row("SR-Net only", sr_c),
            row("Single-Stage", single_c),
        ],
    })
}
