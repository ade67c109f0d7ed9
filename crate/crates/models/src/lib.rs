//! Networks and losses for two-stage 3D radio map estimation: a coarse
//! stage-1 predictor (LR-Net or the RadioUNet3D baseline) and a guided
//! super-resolution stage (SR-Net).

pub mod blocks;
pub mod error;
pub mod losses;
pub mod lr_net;
pub mod report;
pub mod sr_net;

pub use error::{ModelError, Result};
pub use losses::{
    combined_loss, l1_loss, mse_loss, perceptual_loss, FeatureExtractor, LossValues, LossWeights,
};
pub use lr_net::{preprocess, LRNetConfig, LrNet, Stage1Kind};
pub use report::{lr_param_report, param_report, sr_param_report, Cost, ParamReport};
pub use sr_net::{SRNetConfig, SrNet};
