//! Parameter counts and analytic cost estimates.

use std::collections::BTreeMap;

use df3d_nn::{Array, Ctx, Float, ParamStore, Tape};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lr_net::{LRNetConfig, LrNet};
use crate::sr_net::{SRNetConfig, SrNet};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamReport {
    pub total: usize,
    /// Scalars per top-level module (first component of the parameter name).
    pub modules: BTreeMap<String, usize>,
}

pub fn param_report<T: Float>(store: &ParamStore<T>) -> ParamReport {
    let mut modules = BTreeMap::new();
    for (_, p) in store.iter() {
        let top = p.name.split('.').next().unwrap_or("").to_string();
        *modules.entry(top).or_insert(0) += p.value.len();
    }
    ParamReport {
        total: store.num_scalars(),
        modules,
    }
}

pub fn lr_param_report(cfg: &LRNetConfig) -> Result<ParamReport> {
    let mut store = ParamStore::<f32>::new();
    LrNet::build(cfg, &mut store, 0)?;
    Ok(param_report(&store))
}

pub fn sr_param_report(cfg: &SRNetConfig) -> Result<ParamReport> {
    let mut store = ParamStore::<f32>::new();
    SrNet::build(cfg, &mut store, 0)?;
    Ok(param_report(&store))
}

/// Cost of one forward pass on a single sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cost {
    pub params: usize,
    pub macs: u64,
    pub activation_elements: usize,
}

impl Cost {
    pub fn plus(self, o: Cost) -> Cost {
        Cost {
            params: self.params + o.params,
            macs: self.macs + o.macs,
            activation_elements: self.activation_elements.max(o.activation_elements),
        }
    }
}

fn zeros_input<'t>(ctx: &Ctx<'t, f32>, dims: [usize; 3]) -> df3d_nn::Var<'t, f32> {
    ctx.input(Array::zeros(&[1, 1, dims[0], dims[1], dims[2]]))
}

/// Runs the stage-1 network once on zeros of `dims`.
pub fn lr_cost(cfg: &LRNetConfig, dims: [usize; 3]) -> Result<Cost> {
    cfg.check_dims(dims)?;
    let mut store = ParamStore::<f32>::new();
    let net = LrNet::build(cfg, &mut store, 0)?;
    let tape = Tape::inference();
    let ctx = Ctx::eval(&tape, &store);
    let inputs: Vec<_> = (0..cfg.input_count())
        .map(|_| zeros_input(&ctx, dims))
        .collect();
    net.forward(&ctx, &inputs);
    Ok(Cost {
        params: store.num_scalars(),
        macs: ctx.macs(),
        activation_elements: tape.activation_elements(),
    })
}

/// Runs SR-Net once with a coarse input of `coarse` dims.
pub fn sr_cost(cfg: &SRNetConfig, coarse: [usize; 3]) -> Result<Cost> {
    let mut store = ParamStore::<f32>::new();
    let net = SrNet::build(cfg, &mut store, 0)?;
    let fine = coarse.map(|d| d * cfg.factor());
    let tape = Tape::inference();
    let ctx = Ctx::eval(&tape, &store);
    let (env, tx, lr) = (
        zeros_input(&ctx, fine),
        zeros_input(&ctx, fine),
        zeros_input(&ctx, coarse),
    );
    net.forward(&ctx, env, tx, lr);
    Ok(Cost {
        params: store.num_scalars(),
        macs: ctx.macs(),
        activation_elements: tape.activation_elements(),
    })
}

/// Eight weighted taps per output voxel.
pub fn trilinear_cost(coarse: [usize; 3], fine: [usize; 3]) -> Cost {
    let n: usize = fine.iter().product();
    Cost {
        params: 0,
        macs: 8 * n as u64,
        activation_elements: n + coarse.iter().product::<usize>(),
    }
}
