//! Parameterized building blocks and the per-forward context.

use std::cell::{Cell, RefCell};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::array::Array;
use crate::float::Float;
use crate::ops::Conv3dGeometry;
use crate::params::{ParamBuilder, ParamId, ParamStore};
use crate::tape::{Tape, Var};

/// Everything a forward pass needs: tape, parameters, mode and dropout RNG.
/// Also tallies multiply-accumulates for complexity reports.
pub struct Ctx<'t, T> {
    pub tape: &'t Tape<T>,
    pub store: &'t ParamStore<T>,
    pub train: bool,
    rng: RefCell<ChaCha8Rng>,
    macs: Cell<u64>,
}

impl<'t, T: Float> Ctx<'t, T> {
    pub fn new(tape: &'t Tape<T>, store: &'t ParamStore<T>, train: bool, seed: u64) -> Self {
        Self {
            tape,
            store,
            train,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
            macs: Cell::new(0),
        }
    }

    /// Evaluation-mode context on a fresh inference tape is the common case.
    pub fn eval(tape: &'t Tape<T>, store: &'t ParamStore<T>) -> Self {
        Self::new(tape, store, false, 0)
    }

    pub fn p(&self, id: ParamId) -> Var<'t, T> {
        self.tape
            .param(id, self.store.rc(id), self.store.is_trainable(id))
    }

    pub fn input(&self, a: Array<T>) -> Var<'t, T> {
        self.tape.constant(a)
    }

    pub fn add_macs(&self, n: u64) {
        self.macs.set(self.macs.get() + n);
    }

    pub fn macs(&self) -> u64 {
        self.macs.get()
    }

    /// Inverted dropout; identity outside training.
    pub fn dropout(&self, x: Var<'t, T>, p: f64) -> Var<'t, T> {
        if !self.train || p <= 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let scale = T::from_f64c(1.0 / keep);
        let mut rng = self.rng.borrow_mut();
        let mask = Array::from_fn(&x.shape(), |_| {
            if rng.gen::<f64>() < keep {
                scale
            } else {
                T::zero()
            }
        });
        x.mul_const(mask)
    }
}

/// 3D convolution with stride 1 and "same"-style symmetric padding.
#[derive(Clone, Debug)]
pub struct Conv3d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
    pub kernel: [usize; 3],
    pub pad: [usize; 3],
}

impl Conv3d {
    /// Cubic kernel `k` (odd) with padding `k / 2`.
    pub fn new<T: Float, R: Rng>(
        pb: &mut ParamBuilder<T, R>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
    ) -> Self {
        Self::with_kernel(pb, name, cin, cout, [k; 3], [k / 2; 3], true)
    }

    pub fn with_kernel<T: Float, R: Rng>(
        pb: &mut ParamBuilder<T, R>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: [usize; 3],
        pad: [usize; 3],
        bias: bool,
    ) -> Self {
        let fan_in = (cin * kernel.iter().product::<usize>()) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let mut sub = pb.sub(name);
        let weight = sub.uniform(
            "weight",
            &[cout, cin, kernel[0], kernel[1], kernel[2]],
            bound,
        );
        let bias = bias.then(|| sub.uniform("bias", &[cout], bound));
        Self {
            weight,
            bias,
            cin,
            cout,
            kernel,
            pad,
        }
    }

    pub fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        let s = x.shape();
        let g = Conv3dGeometry {
            cin: self.cin,
            cout: self.cout,
            input: [s[2], s[3], s[4]],
            kernel: self.kernel,
            pad: self.pad,
        };
        ctx.add_macs(g.macs() * s[0] as u64);
        x.conv3d(ctx.p(self.weight), self.bias.map(|b| ctx.p(b)), self.pad)
    }
}

/// Group normalization with up to 8 groups.
#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

/// Largest divisor of `c` not exceeding `max_groups`.
pub fn group_count(c: usize, max_groups: usize) -> usize {
    (1..=max_groups.min(c))
        .rev()
        .find(|g| c.is_multiple_of(*g))
        .unwrap_or(1)
}

impl GroupNorm {
    pub fn new<T: Float, R: Rng>(pb: &mut ParamBuilder<T, R>, name: &str, c: usize) -> Self {
        let mut sub = pb.sub(name);
        let gamma = sub.full("gamma", &[c], 1.0);
        let beta = sub.zeros("beta", &[c]);
        Self {
            gamma,
            beta,
            groups: group_count(c, 8),
        }
    }

    pub fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        x.group_norm(ctx.p(self.gamma), ctx.p(self.beta), self.groups, 1e-5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_counts() {
        assert_eq!(group_count(16, 8), 8);
        assert_eq!(group_count(12, 8), 6);
        assert_eq!(group_count(3, 8), 3);
        assert_eq!(group_count(7, 8), 7);
        assert_eq!(group_count(1, 8), 1);
    }

    #[test]
    fn dropout_only_in_training() {
        let tape = Tape::<f32>::new();
        let store = ParamStore::new();
        let x = tape.constant(Array::full(&[1000], 1.0));
        let ev = Ctx::new(&tape, &store, false, 3);
        assert_eq!(ev.dropout(x, 0.5).id(), x.id());
        let tr = Ctx::new(&tape, &store, true, 3);
        let y = tr.dropout(x, 0.25).value();
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count();
        assert!((150..350).contains(&zeros), "{zeros}");
        assert!(y
            .data()
            .iter()
            .all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-6));
    }
}
