//! Seeded synthesis of real-world image degradations.
//!
//! A [`DegradationRecipe`] lists up to four `(type, intensity)` pairs in stage
//! order (acquisition, transmission, environment, postprocessing).
//! [`apply_recipe`] applies them left to right; spec `k` draws its randomness
//! from sub-stream `k` of the recipe seed.

mod ops;
mod types;

pub use ops::jpeg_quality;
pub use types::{
    round2, sample_recipe, DegradationRecipe, DegradationSpec, DegradationType, SamplingConfig,
    Stage, DEFAULT_MAX_SPECS,
};

use crate::error::DegradationError;
use crate::raster::{RasterImage, MIN_EXTENT};
use crate::rng::RngState;

/// Applies one degradation. Intensity zero returns an exact copy without
/// touching `rng`.
pub fn apply_spec(
    image: &RasterImage,
    spec: &DegradationSpec,
    rng: &mut RngState,
) -> Result<RasterImage, DegradationError> {
    if image.width() < MIN_EXTENT || image.height() < MIN_EXTENT {
        return Err(DegradationError::UnsupportedImageSize {
            width: image.width(),
            height: image.height(),
        });
    }
    if spec.intensity() == 0.0 {
        return Ok(image.clone());
    }
    Ok(ops::apply(spec.kind(), image, spec.intensity(), rng))
}

pub fn apply_recipe(
    image: &RasterImage,
    recipe: &DegradationRecipe,
) -> Result<RasterImage, DegradationError> {
    let mut current = image.clone();
    for (k, spec) in recipe.specs().iter().enumerate() {
        let mut rng = RngState::stream(recipe.seed(), k as u64);
        current = apply_spec(&current, spec, &mut rng)?;
    }
    Ok(current)
}
