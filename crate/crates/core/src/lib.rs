//! Toolkit for degradation-aware multimodal reasoning: seeded image
//! degradation, the structured reasoning-chain format, rewards and
//! group-relative advantages, dataset construction, and robustness
//! evaluation.

pub mod chain;
pub mod config;
pub mod dataset;
pub mod degradation;
pub mod error;
pub mod eval;
pub mod http;
pub mod raster;
pub mod reward;
pub mod rng;

pub use chain::{chain_length, parse_chain, serialize_chain, ChainErrorKind, ChainParseError, ReasoningChain};
pub use degradation::{
    apply_recipe, apply_spec, sample_recipe, DegradationRecipe, DegradationSpec, DegradationType,
    SamplingConfig, Stage,
};
pub use error::{DegradationError, RewardError};
pub use raster::{distortion_score, RasterImage};
pub use reward::{
    composite_reward, group_advantages, reward_deg, reward_len, AdvantageGroup, DegMode,
    RewardBreakdown,
};
pub use rng::RngState;
