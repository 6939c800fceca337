use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DegradationError {
    #[error("image {width}x{height} is below the 8x8 minimum")]
    UnsupportedImageSize { width: u32, height: u32 },
    #[error("sample buffer has {actual} bytes, expected {expected}")]
    BadBuffer { expected: usize, actual: usize },
    #[error("image dimensions differ: {left:?} vs {right:?}")]
    DimensionMismatch { left: (u32, u32), right: (u32, u32) },
    #[error("intensity {0} is outside [0, 1]")]
    IntensityOutOfRange(f64),
    #[error("unknown degradation type `{0}`")]
    UnknownType(String),
    #[error("degradation type `{0}` appears more than once")]
    DuplicateType(&'static str),
    #[error("recipe must hold between 1 and {max} specs, got {actual}")]
    RecipeLength { max: usize, actual: usize },
    #[error("invalid sampling config: {0}")]
    InvalidConfig(String),
    #[error("image decode failed: {0}")]
    ImageDecode(String),
    #[error("recipe JSON: {0}")]
    RecipeJson(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("matched mode supports at most {max} entries per side, got {actual}")]
    TooManyEntries { max: usize, actual: usize },
    #[error("ground-truth length is zero")]
    ZeroTruthLength,
    #[error("advantage group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("ground-truth chain has no degradations")]
    EmptyTruth,
    #[error("reward is not finite")]
    NonFinite,
}
