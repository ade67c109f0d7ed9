//! Stage 2: super-resolution of the coarse map guided by the fine
//! environment and transmitter tensors.

use df3d_nn::{Conv3d, Ctx, Float, ParamBuilder, ParamId, ParamStore, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::{lrelu, Cbam, LEAK};
use crate::error::{ModelError, Result};

/// Initial bias of the last refinement conv. Keeps the pre-clamp output
/// inside (0, 1) at initialization so the clamp passes gradient.
pub const OUTPUT_BIAS_INIT: f64 = 0.5;

/// Initial weights inside residual dense blocks are shrunk by this factor.
pub const RDB_INIT_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SRNetConfig {
    pub base_channels: usize,
    pub rrdb_count: usize,
    pub upsample_blocks: usize,
    pub growth_channels: usize,
    pub residual_scale: f64,
    pub alpha_init: f64,
    pub refine_layers: usize,
    pub dense_layers: usize,
}

impl Default for SRNetConfig {
    fn default() -> Self {
        Self::with_channels(16, 3, 2)
    }
}

impl SRNetConfig {
    pub fn with_channels(c: usize, g: usize, u: usize) -> Self {
        Self {
            base_channels: c,
            rrdb_count: g,
            upsample_blocks: u,
            growth_channels: (c / 2).max(1),
            residual_scale: 0.2,
            alpha_init: 1.0,
            refine_layers: 2,
            dense_layers: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.rrdb_count == 0 || self.growth_channels == 0 {
            return Err(ModelError::Config(
                "SR-Net channel and block counts must be positive".into(),
            ));
        }
        if self.refine_layers == 0 || self.dense_layers == 0 {
            return Err(ModelError::Config(
                "refine_layers and dense_layers must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `2^U` must equal `delta_l / delta`.
    pub fn check_ratio(&self, delta: f64, delta_l: f64) -> Result<()> {
        let want = (1u64 << self.upsample_blocks) as f64;
        if ((delta_l / delta) - want).abs() > 1e-9 {
            return Err(ModelError::Config(format!(
                "upsample_blocks {} gives factor {want} but delta_l/delta = {}",
                self.upsample_blocks,
                delta_l / delta
            )));
        }
        Ok(())
    }

    pub fn factor(&self) -> usize {
        1 << self.upsample_blocks
    }
}

fn scale_params<T: Float>(store: &mut ParamStore<T>, ids: &[ParamId], s: f64) {
    for &id in ids {
        store.get_mut(id).scale(T::from_f64c(s));
    }
}

/// Factor taking the default `1/sqrt(fan_in)` uniform bound to the He
/// bound for leaky ReLU.
fn he_scale() -> f64 {
    (6.0 / (1.0 + LEAK * LEAK)).sqrt()
}

/// Copies sub-voxel 0 of every output channel to the other seven, so the
/// voxel shuffle starts out as nearest-neighbour upsampling.
fn icnr<T: Float>(store: &mut ParamStore<T>, conv: &Conv3d) {
    let w = store.get_mut(conv.weight);
    let per = w.len() / w.shape()[0];
    let d = w.data_mut();
    for c in 0..d.len() / (8 * per) {
        let base = 8 * c * per;
        for sub in 1..8 {
            d.copy_within(base..base + per, base + sub * per);
        }
    }
    if let Some(b) = conv.bias {
        let d = store.get_mut(b).data_mut();
        for c in 0..d.len() / 8 {
            let v = d[8 * c];
            d[8 * c..8 * c + 8].fill(v);
        }
    }
}

/// Dense layers each see the concatenation of the block input and every
/// earlier layer output, then a 1x1 fusion with a local residual.
#[derive(Clone, Debug)]
pub struct Rdb {
    pub layers: Vec<Conv3d>,
    pub fusion: Conv3d,
}

impl Rdb {
    fn new<T: Float>(
        pb: &mut ParamBuilder<T, ChaCha8Rng>,
        name: &str,
        c: usize,
        g: usize,
        n: usize,
    ) -> Self {
        let mut b = pb.sub(name);
        let layers = (0..n)
            .map(|i| Conv3d::new(&mut b, &format!("dense{i}"), c + i * g, g, 3))
            .collect();
        let fusion = Conv3d::new(&mut b, "fusion", c + n * g, c, 1);
        Self { layers, fusion }
    }

    fn params(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .chain([&self.fusion])
            .flat_map(|c| std::iter::once(c.weight).chain(c.bias))
            .collect()
    }

    pub fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        let mut feats = vec![x];
        for l in &self.layers {
            let h = lrelu(l.forward(ctx, Var::concat(&feats, 1)));
            feats.push(h);
        }
        x.add(self.fusion.forward(ctx, Var::concat(&feats, 1)))
    }
}

/// `F + s * aggregate(RDB3(RDB2(RDB1(F))))`.
#[derive(Clone, Debug)]
pub struct Rrdb {
    pub rdbs: [Rdb; 3],
    pub aggregate: Conv3d,
    pub scale: f64,
}

impl Rrdb {
    pub fn inner<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        let h = self.rdbs.iter().fold(x, |h, r| r.forward(ctx, h));
        self.aggregate.forward(ctx, h)
    }

    pub fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        x.add(self.inner(ctx, x).scale(T::from_f64c(self.scale)))
    }

    pub fn aggregate_params(&self) -> [ParamId; 2] {
        [
            self.aggregate.weight,
            self.aggregate.bias.expect("aggregate bias"),
        ]
    }
}

#[derive(Clone, Debug)]
struct HrBlock {
    expand: Conv3d,
    fuse: Conv3d,
    cbam: Cbam,
}

/// Intermediate tensors of one SR-Net pass.
pub struct SrTrace<'t, T> {
    pub f0: Var<'t, T>,
    pub m: Var<'t, T>,
    pub e_bar: Var<'t, T>,
    pub refined: Var<'t, T>,
    pub p_tilde: Var<'t, T>,
    pub output: Var<'t, T>,
}

#[derive(Clone, Debug)]
pub struct SrNet {
    pub cfg: SRNetConfig,
    env_convs: [Conv3d; 2],
    rm_conv: Conv3d,
    fuse: Conv3d,
    fuse_cbam: Cbam,
    pub rrdbs: Vec<Rrdb>,
    pub dfr_conv: Conv3d,
    hr: Vec<HrBlock>,
    refine: Vec<Conv3d>,
    pub alpha: ParamId,
}

impl SrNet {
    pub fn build<T: Float>(
        cfg: &SRNetConfig,
        store: &mut ParamStore<T>,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(store, &mut rng);
        let c = cfg.base_channels;
        let mut dp = pb.sub("dpfe");
        let env_convs = [
            Conv3d::new(&mut dp, "env0", 2, c, 3),
            Conv3d::new(&mut dp, "env1", c, c, 3),
        ];
        let rm_conv = Conv3d::new(&mut dp, "rm", 1, c, 3);
        let fuse = Conv3d::new(&mut dp, "fuse", 2 * c, c, 3);
        let fuse_cbam = Cbam::new(&mut dp, "cbam", c);
        let mut df = pb.sub("dfr");
        let rrdbs: Vec<Rrdb> = (0..cfg.rrdb_count)
            .map(|g| {
                let mut rb = df.sub(&format!("rrdb{g}"));
                let rdbs = [0, 1, 2].map(|i| {
                    Rdb::new(
                        &mut rb,
                        &format!("rdb{i}"),
                        c,
                        cfg.growth_channels,
                        cfg.dense_layers,
                    )
                });
                let aggregate = Conv3d::new(&mut rb, "aggregate", c, c, 3);
                Rrdb {
                    rdbs,
                    aggregate,
                    scale: cfg.residual_scale,
                }
            })
            .collect();
        let dfr_conv = Conv3d::new(&mut df, "conv", c, c, 3);
        let mut hp = pb.sub("hr");
        let hr: Vec<HrBlock> = (0..cfg.upsample_blocks)
            .map(|u| {
                let mut b = hp.sub(&format!("block{u}"));
                HrBlock {
                    expand: Conv3d::new(&mut b, "expand", c, 8 * c, 3),
                    fuse: Conv3d::new(&mut b, "fuse", 2 * c, c, 3),
                    cbam: Cbam::new(&mut b, "cbam", c),
                }
            })
            .collect();
        let refine: Vec<Conv3d> = (0..cfg.refine_layers)
            .map(|i| {
                let cout = if i + 1 == cfg.refine_layers { 1 } else { c };
                Conv3d::new(&mut hp, &format!("refine{i}"), c, cout, 3)
            })
            .collect();
        let alpha = hp.full("alpha", &[1, 1, 1, 1, 1], cfg.alpha_init);
        drop(pb);
        let last = refine.last().expect("refine layers");
        *store.get_mut(last.bias.expect("refine bias")) =
            df3d_nn::Array::full(&[1], T::from_f64c(OUTPUT_BIAS_INIT));
        let he = he_scale();
        let mut trunk: Vec<&Conv3d> = env_convs
            .iter()
            .chain([&rm_conv, &fuse, &dfr_conv])
            .collect();
        trunk.extend(hr.iter().flat_map(|b| [&b.expand, &b.fuse]));
        trunk.extend(&refine[..refine.len() - 1]);
        scale_params(
            store,
            &trunk.iter().map(|c| c.weight).collect::<Vec<_>>(),
            he,
        );
        for r in &rrdbs {
            for rdb in &r.rdbs {
                scale_params(store, &rdb.params(), he * RDB_INIT_SCALE);
            }
            scale_params(store, &r.aggregate_params(), he * RDB_INIT_SCALE);
        }
        for b in &hr {
            icnr(store, &b.expand);
        }
        Ok(Self {
            cfg: cfg.clone(),
            env_convs,
            rm_conv,
            fuse,
            fuse_cbam,
            rrdbs,
            dfr_conv,
            hr,
            refine,
            alpha,
        })
    }

    /// Returns `(F0, M, Ē)`.
    pub fn dpfe<'t, T: Float>(
        &self,
        ctx: &Ctx<'t, T>,
        env: Var<'t, T>,
        tx: Var<'t, T>,
        lr: Var<'t, T>,
    ) -> (Var<'t, T>, Var<'t, T>, Var<'t, T>) {
        let (es, ls) = (env.shape(), lr.shape());
        let f = self.cfg.factor();
        assert!(
            es[2..].iter().zip(&ls[2..]).all(|(&e, &l)| e == l * f),
            "environment dims {:?} are not {f}x the coarse dims {:?}",
            &es[2..],
            &ls[2..]
        );
        let e = Var::concat(&[env, tx], 1);
        let e_bar = lrelu(self.env_convs[1].forward(ctx, lrelu(self.env_convs[0].forward(ctx, e))));
        let m = lrelu(self.rm_conv.forward(ctx, lr));
        let pooled = e_bar.adaptive_avg_pool3d([ls[2], ls[3], ls[4]]);
        let f0 = lrelu(self.fuse.forward(ctx, Var::concat(&[pooled, m], 1)));
        (self.fuse_cbam.forward(ctx, f0), m, e_bar)
    }

    pub fn dfr<'t, T: Float>(&self, ctx: &Ctx<'t, T>, f0: Var<'t, T>, m: Var<'t, T>) -> Var<'t, T> {
        let fg = self.rrdbs.iter().fold(f0, |f, r| r.forward(ctx, f));
        self.dfr_conv.forward(ctx, fg).add(m)
    }

    /// Returns `(P̃, clamp(α P̃, 0, 1))`.
    pub fn hr_generate<'t, T: Float>(
        &self,
        ctx: &Ctx<'t, T>,
        refined: Var<'t, T>,
        e_bar: Var<'t, T>,
    ) -> (Var<'t, T>, Var<'t, T>) {
        let mut x = refined;
        for b in &self.hr {
            x = b.expand.forward(ctx, x).voxel_shuffle();
            let s = x.shape();
            let pooled = e_bar.adaptive_avg_pool3d([s[2], s[3], s[4]]);
            x = b.cbam.forward(
                ctx,
                lrelu(b.fuse.forward(ctx, Var::concat(&[x, pooled], 1))),
            );
        }
        let n = self.refine.len();
        for (i, conv) in self.refine.iter().enumerate() {
            x = conv.forward(ctx, x);
            if i + 1 < n {
                x = lrelu(x);
            }
        }
        let out = x.mul_bcast(ctx.p(self.alpha)).clamp(T::zero(), T::one());
        (x, out)
    }

    pub fn trace<'t, T: Float>(
        &self,
        ctx: &Ctx<'t, T>,
        env: Var<'t, T>,
        tx: Var<'t, T>,
        lr: Var<'t, T>,
    ) -> SrTrace<'t, T> {
        let (f0, m, e_bar) = self.dpfe(ctx, env, tx, lr);
        let refined = self.dfr(ctx, f0, m);
        let (p_tilde, output) = self.hr_generate(ctx, refined, e_bar);
        SrTrace {
            f0,
            m,
            e_bar,
            refined,
            p_tilde,
            output,
        }
    }

    /// `env`, `tx`: `[N, 1, fine dims]`; `lr`: `[N, 1, coarse dims]`.
    pub fn forward<'t, T: Float>(
        &self,
        ctx: &Ctx<'t, T>,
        env: Var<'t, T>,
        tx: Var<'t, T>,
        lr: Var<'t, T>,
    ) -> Var<'t, T> {
        self.trace(ctx, env, tx, lr).output
    }

    pub fn dfr_conv_params(&self) -> [ParamId; 2] {
        [self.dfr_conv.weight, self.dfr_conv.bias.expect("dfr bias")]
    }
}
