//! Building blocks shared by both stages.

use df3d_nn::{Conv3d, Ctx, Float, GroupNorm, ParamBuilder, ParamId, Var};
use rand::Rng;

pub const LEAK: f64 = 0.2;

pub fn lrelu<'t, T: Float>(x: Var<'t, T>) -> Var<'t, T> {
    x.leaky_relu(T::from_f64c(LEAK))
}

/// Channel attention followed by spatial attention.
#[derive(Clone, Debug)]
pub struct Cbam {
    pub fc1: Conv3d,
    pub fc2: Conv3d,
    pub spatial: Conv3d,
}

impl Cbam {
    pub const REDUCTION: usize = 4;
    pub const SPATIAL_KERNEL: usize = 7;

    pub fn new<T: Float, R: Rng>(pb: &mut ParamBuilder<T, R>, name: &str, c: usize) -> Self {
        let mut b = pb.sub(name);
        let hidden = (c / Self::REDUCTION).max(1);
        Self {
            fc1: Conv3d::new(&mut b, "fc1", c, hidden, 1),
            fc2: Conv3d::new(&mut b, "fc2", hidden, c, 1),
            spatial: Conv3d::new(&mut b, "spatial", 2, 1, Self::SPATIAL_KERNEL),
        }
    }

    pub fn channel_gate<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        let mlp = |v: Var<'t, T>| self.fc2.forward(ctx, self.fc1.forward(ctx, v).relu());
        mlp(x.global_avg_pool())
            .add(mlp(x.global_max_pool()))
            .sigmoid()
    }

    pub fn spatial_gate<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        let pooled = Var::concat(&[x.channel_mean(), x.channel_max()], 1);
        self.spatial.forward(ctx, pooled).sigmoid()
    }

    pub fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        let x = x.mul_bcast(self.channel_gate(ctx, x));
        x.mul_bcast(self.spatial_gate(ctx, x))
    }
}

/// `x + [conv-GN-act-conv-GN-(CBAM)](x)`, with a 1x1 projection on the skip
/// path when the channel count changes. No activation after the sum, so a
/// zeroed second norm makes the block an identity.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: Conv3d,
    pub norm1: GroupNorm,
    pub conv2: Conv3d,
    pub norm2: GroupNorm,
    pub cbam: Option<Cbam>,
    pub shortcut: Option<Conv3d>,
}

impl ResBlock {
    pub fn new<T: Float, R: Rng>(
        pb: &mut ParamBuilder<T, R>,
        name: &str,
        cin: usize,
        cout: usize,
        attention: bool,
    ) -> Self {
        let mut b = pb.sub(name);
        Self {
            conv1: Conv3d::new(&mut b, "conv1", cin, cout, 3),
            norm1: GroupNorm::new(&mut b, "norm1", cout),
            conv2: Conv3d::new(&mut b, "conv2", cout, cout, 3),
            norm2: GroupNorm::new(&mut b, "norm2", cout),
            cbam: attention.then(|| Cbam::new(&mut b, "cbam", cout)),
            shortcut: (cin != cout).then(|| Conv3d::new(&mut b, "shortcut", cin, cout, 1)),
        }
    }

    pub fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        let h = lrelu(self.norm1.forward(ctx, self.conv1.forward(ctx, x)));
        let mut h = self.norm2.forward(ctx, self.conv2.forward(ctx, h));
        if let Some(c) = &self.cbam {
            h = c.forward(ctx, h);
        }
        let skip = match &self.shortcut {
            Some(s) => s.forward(ctx, x),
            None => x,
        };
        skip.add(h)
    }
}

/// Plain `(conv-GN-act) x 2`.
#[derive(Clone, Debug)]
pub struct DoubleConv {
    pub conv1: Conv3d,
    pub norm1: GroupNorm,
    pub conv2: Conv3d,
    pub norm2: GroupNorm,
}

impl DoubleConv {
    pub fn new<T: Float, R: Rng>(
        pb: &mut ParamBuilder<T, R>,
        name: &str,
        cin: usize,
        cout: usize,
    ) -> Self {
        let mut b = pb.sub(name);
        Self {
            conv1: Conv3d::new(&mut b, "conv1", cin, cout, 3),
            norm1: GroupNorm::new(&mut b, "norm1", cout),
            conv2: Conv3d::new(&mut b, "conv2", cout, cout, 3),
            norm2: GroupNorm::new(&mut b, "norm2", cout),
        }
    }

    pub fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        let h = lrelu(self.norm1.forward(ctx, self.conv1.forward(ctx, x)));
        lrelu(self.norm2.forward(ctx, self.conv2.forward(ctx, h)))
    }
}

/// Conv + GN + activation.
#[derive(Clone, Debug)]
pub struct ConvNormAct {
    pub conv: Conv3d,
    pub norm: GroupNorm,
}

impl ConvNormAct {
    pub fn new<T: Float, R: Rng>(
        pb: &mut ParamBuilder<T, R>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
    ) -> Self {
        let mut b = pb.sub(name);
        Self {
            conv: Conv3d::new(&mut b, "conv", cin, cout, k),
            norm: GroupNorm::new(&mut b, "norm", cout),
        }
    }

    pub fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        lrelu(self.norm.forward(ctx, self.conv.forward(ctx, x)))
    }
}

/// Stride-2, kernel-2 transposed convolution written as a pointwise conv to
/// `8 * cout` channels followed by a voxel shuffle.
#[derive(Clone, Debug)]
pub struct UpConv {
    pub conv: Conv3d,
}

impl UpConv {
    pub fn new<T: Float, R: Rng>(
        pb: &mut ParamBuilder<T, R>,
        name: &str,
        cin: usize,
        cout: usize,
    ) -> Self {
        Self {
            conv: Conv3d::new(pb, name, cin, 8 * cout, 1),
        }
    }

    pub fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        self.conv.forward(ctx, x).voxel_shuffle()
    }
}

/// Single-head dot-product self-attention over all spatial positions, added
/// back to the input.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub q: Conv3d,
    pub k: Conv3d,
    pub v: Conv3d,
    pub out: Conv3d,
}

impl SelfAttention {
    pub fn new<T: Float, R: Rng>(pb: &mut ParamBuilder<T, R>, name: &str, c: usize) -> Self {
        let mut b = pb.sub(name);
        Self {
            q: Conv3d::new(&mut b, "q", c, c, 1),
            k: Conv3d::new(&mut b, "k", c, c, 1),
            v: Conv3d::new(&mut b, "v", c, c, 1),
            out: Conv3d::new(&mut b, "out", c, c, 1),
        }
    }

    pub fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        let s = x.shape();
        let (n, c) = (s[0], s[1]);
        let l: usize = s[2..].iter().product();
        let q = self
            .q
            .forward(ctx, x)
            .reshape(&[n, c, l])
            .permute(&[0, 2, 1]);
        let k = self.k.forward(ctx, x).reshape(&[n, c, l]);
        let v = self
            .v
            .forward(ctx, x)
            .reshape(&[n, c, l])
            .permute(&[0, 2, 1]);
        ctx.add_macs((2 * n * l * l * c) as u64);
        let attn = q
            .bmm(k)
            .scale(T::from_f64c(1.0 / (c as f64).sqrt()))
            .softmax_last();
        let h = attn.bmm(v).permute(&[0, 2, 1]).reshape(&s);
        x.add(self.out.forward(ctx, h))
    }
}

/// Sets every parameter id to zero.
pub fn zero_params<T: Float>(
    store: &mut df3d_nn::ParamStore<T>,
    ids: impl IntoIterator<Item = ParamId>,
) {
    for id in ids {
        store
            .get_mut(id)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = T::zero());
    }
}
