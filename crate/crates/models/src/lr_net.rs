//! Stage 1: coarse radio-map prediction with a 3D attention U-Net, plus the
//! plain RadioUNet3D baseline.

use df3d_core::{
    bresenham_los, downscale_occupancy, downscale_transmitter, EnvironmentTensor, LosTensor,
    TransmitterTensor,
};
use df3d_nn::{Conv3d, Ctx, Float, ParamBuilder, ParamStore, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::{Cbam, ConvNormAct, DoubleConv, ResBlock, SelfAttention, UpConv};
use crate::error::{ModelError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage1Kind {
    LrNet,
    RadioUNet3D,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LRNetConfig {
    pub kind: Stage1Kind,
    pub depth: usize,
    pub base_channels: usize,
    pub bottleneck_blocks: usize,
    pub dropout_rate: f64,
    pub attention_enabled: bool,
    pub delta: f64,
    pub delta_l: f64,
}

impl Default for LRNetConfig {
    fn default() -> Self {
        Self {
            kind: Stage1Kind::LrNet,
            depth: 2,
            base_channels: 16,
            bottleneck_blocks: 2,
            dropout_rate: 0.1,
            attention_enabled: true,
            delta: 1.0,
            delta_l: 4.0,
        }
    }
}

impl LRNetConfig {
    /// Same depth and width without attention, CBAM or the LoS input.
    pub fn radiounet3d(&self) -> Self {
        Self {
            kind: Stage1Kind::RadioUNet3D,
            attention_enabled: false,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(ModelError::Config("LR-Net depth must be at least 1".into()));
        }
        if self.base_channels == 0 {
            return Err(ModelError::Config("base_channels must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Input dims must survive `depth` halvings.
    pub fn check_dims(&self, dims: [usize; 3]) -> Result<()> {
        let f = 1 << self.depth;
        if dims.iter().any(|&d| d == 0 || d % f != 0) {
            return Err(ModelError::Shape(format!(
                "dims {dims:?} not divisible by 2^{}",
                self.depth
            )));
        }
        Ok(())
    }

    pub fn input_count(&self) -> usize {
        match self.kind {
            Stage1Kind::LrNet => 3,
            Stage1Kind::RadioUNet3D => 2,
        }
    }
}

/// Coarse occupancy, coarse transmitter and coarse LoS, in that order.
pub fn preprocess(
    env: &EnvironmentTensor,
    tx: &TransmitterTensor,
    delta_l: f64,
) -> df3d_core::Result<(EnvironmentTensor, TransmitterTensor, LosTensor)> {
    let env_l = downscale_occupancy(env, delta_l)?;
    let tx_l = downscale_transmitter(tx, delta_l)?;
    let los = bresenham_los(&env_l, &tx_l)?;
    Ok((env_l, tx_l, los))
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
enum Block {
    Res(ResBlock),
    Plain(DoubleConv),
}

impl Block {
    fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        match self {
            Block::Res(b) => b.forward(ctx, x),
            Block::Plain(b) => b.forward(ctx, x),
        }
    }
}

fn make_block<T: Float>(
    res: bool,
    att: bool,
    pb: &mut ParamBuilder<T, ChaCha8Rng>,
    name: &str,
    cin: usize,
    cout: usize,
) -> Block {
    if res {
        Block::Res(ResBlock::new(pb, name, cin, cout, att))
    } else {
        Block::Plain(DoubleConv::new(pb, name, cin, cout))
    }
}

#[derive(Clone, Debug)]
pub struct LrNet {
    pub cfg: LRNetConfig,
    branches: Vec<ConvNormAct>,
    fuse: Conv3d,
    encoder: Vec<Block>,
    bottleneck_in: Block,
    bottleneck: Vec<Block>,
    attention: Option<SelfAttention>,
    bottleneck_out: ConvNormAct,
    ups: Vec<UpConv>,
    decoder: Vec<Block>,
    head: ConvNormAct,
    head_cbam: Option<Cbam>,
    out: Conv3d,
}

impl LrNet {
    pub fn build<T: Float>(
        cfg: &LRNetConfig,
        store: &mut ParamStore<T>,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(store, &mut rng);
        let b = cfg.base_channels;
        let res = cfg.kind == Stage1Kind::LrNet;
        let att = res && cfg.attention_enabled;
        let names = ["env", "tx", "los"];
        let branches = (0..cfg.input_count())
            .map(|i| ConvNormAct::new(&mut pb.sub("input"), names[i], 1, b, 3))
            .collect();
        let fuse = Conv3d::new(&mut pb.sub("input"), "fuse", cfg.input_count() * b, b, 1);
        let mut enc = pb.sub("encoder");
        let encoder = (0..cfg.depth)
            .map(|d| {
                make_block(
                    res,
                    att,
                    &mut enc,
                    &format!("block{d}"),
                    if d == 0 { b } else { cfg.channels(d - 1) },
                    cfg.channels(d),
                )
            })
            .collect();
        let top = cfg.channels(cfg.depth);
        let mut bot = pb.sub("bottleneck");
        let bottleneck_in = make_block(
            res,
            att,
            &mut bot,
            "entry",
            cfg.channels(cfg.depth - 1),
            top,
        );
        let bottleneck = (0..cfg.bottleneck_blocks)
            .map(|i| make_block(res, att, &mut bot, &format!("res{i}"), top, top))
            .collect();
        let attention = att.then(|| SelfAttention::new(&mut bot, "attention", top));
        let bottleneck_out = ConvNormAct::new(&mut bot, "exit", top, top, 3);
        let mut dec = pb.sub("decoder");
        let ups = (0..cfg.depth)
            .map(|d| {
                UpConv::new(
                    &mut dec,
                    &format!("up{d}"),
                    cfg.channels(d + 1),
                    cfg.channels(d),
                )
            })
            .collect();
        let decoder = (0..cfg.depth)
            .map(|d| {
                make_block(
                    res,
                    att,
                    &mut dec,
                    &format!("block{d}"),
                    2 * cfg.channels(d),
                    cfg.channels(d),
                )
            })
            .collect();
        let mut hd = pb.sub("head");
        let head = ConvNormAct::new(&mut hd, "conv", b, b, 3);
        let head_cbam = att.then(|| Cbam::new(&mut hd, "cbam", b));
        let out = Conv3d::new(&mut hd, "out", b, 1, 1);
        Ok(Self {
            cfg: cfg.clone(),
            branches,
            fuse,
            encoder,
            bottleneck_in,
            bottleneck,
            attention,
            bottleneck_out,
            ups,
            decoder,
            head,
            head_cbam,
            out,
        })
    }

    /// `inputs` are `[N, 1, D, H, W]` volumes: environment, transmitter and
    /// (LR-Net only) LoS. Returns `[N, 1, D, H, W]` in (0, 1).
    pub fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, inputs: &[Var<'t, T>]) -> Var<'t, T> {
        assert_eq!(inputs.len(), self.cfg.input_count(), "stage-1 input count");
        let s = inputs[0].shape();
        self.cfg
            .check_dims([s[2], s[3], s[4]])
            .expect("stage-1 input dims");
        let feats: Vec<_> = self
            .branches
            .iter()
            .zip(inputs)
            .map(|(br, &x)| br.forward(ctx, x))
            .collect();
        let mut x = self.fuse.forward(ctx, Var::concat(&feats, 1));
        let mut skips = Vec::with_capacity(self.cfg.depth);
        for blk in &self.encoder {
            x = blk.forward(ctx, x);
            skips.push(x);
            x = x.max_pool3d(2);
        }
        x = self.bottleneck_in.forward(ctx, x);
        for blk in &self.bottleneck {
            x = blk.forward(ctx, x);
        }
        if let Some(a) = &self.attention {
            x = a.forward(ctx, x);
        }
        x = ctx.dropout(x, self.cfg.dropout_rate);
        x = self.bottleneck_out.forward(ctx, x);
        for d in (0..self.cfg.depth).rev() {
            let up = self.ups[d].forward(ctx, x);
            let skip = skips[d];
            assert_eq!(
                up.shape()[2..],
                skip.shape()[2..],
                "skip {d} does not match decoder stage"
            );
            x = self.decoder[d].forward(ctx, Var::concat(&[up, skip], 1));
        }
        x = self.head.forward(ctx, x);
        if let Some(c) = &self.head_cbam {
            x = c.forward(ctx, x);
        }
        self.out.forward(ctx, x).sigmoid()
    }

    /// Spatial dims of each skip tensor for an input of `dims`.
    pub fn skip_dims(&self, dims: [usize; 3]) -> Vec<[usize; 3]> {
        (0..self.cfg.depth).map(|d| dims.map(|v| v >> d)).collect()
    }

    /// Parameter ids of the last normalization of every residual branch.
    pub fn residual_tail_params(&self) -> Vec<df3d_nn::ParamId> {
        self.encoder
            .iter()
            .chain(std::iter::once(&self.bottleneck_in))
            .chain(&self.bottleneck)
            .chain(&self.decoder)
            .filter_map(|b| match b {
                Block::Res(r) => Some([r.norm2.gamma, r.norm2.beta]),
                Block::Plain(_) => None,
            })
            .flatten()
            .collect()
    }
}
