//! Sub-network construction (feature extractors, SISR / MISR / residual /
//! decoder paths, reconstruction), parameter and FLOP accounting, and the
//! weight archive format.

pub mod archive;
mod layers;
mod subnets;

pub use layers::{
    BackProjectionStages, ConvKind, ConvLayer, DownProjection, LayerCost, ParamInit, ResidualBlock, UpProjection, PRELU_INIT,
};
pub use subnets::{
    build_decoder, build_feature_extractor, build_feature_extractors, build_misr, build_reconstruction,
    build_reconstruction_from, build_res, build_sisr, neighbor_input_channels, reconstruction_channels, Block, Spatial,
    Subnet,
};
