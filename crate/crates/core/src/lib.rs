//! Texture filtering driven by a Gaussian-pyramid reward.
//!
//! The crate provides the reward itself ([`reward`]), a filter that maximizes
//! it directly over output pixels ([`optimize`]), flow-matching and
//! reward-weighted policy kernels on toy models ([`fm`]), synthetic paired
//! data ([`dataset`]) and a PSNR/SSIM benchmark harness ([`eval`]).

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fm;
pub mod image;
pub mod metrics;
pub mod optimize;
pub mod pyramid;
pub mod reward;
pub(crate) mod sampling;
pub mod upsample;

// Large image buffers are allocated and freed on every iteration; the system
// allocator hands them back to the OS each time.
#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

pub use error::{Error, ErrorClass, Result};
pub use image::{load_image, save_image, to_luma, Grid, Image, PixelRegion};
pub use pyramid::{build_pyramid, reduce, reduce_adjoint, GaussianPyramid, PyramidConfig};
pub use reward::{
    normalize_group, reward_fidelity, reward_structure, reward_texture, reward_total,
    PolicyGroup, RewardBreakdown, RewardWeights,
};
pub use upsample::{upsample, upsample_to, ExternalCommand, UpsamplerKind};
