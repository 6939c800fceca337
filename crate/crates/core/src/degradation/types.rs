use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::DegradationError;
use crate::rng::RngState;

/// Default upper bound on the number of specs in one recipe.
pub const DEFAULT_MAX_SPECS: usize = 4;

/// Processing stage in which a degradation arises. Ordered as images flow
/// through them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Acquisition,
    Transmission,
    Environment,
    Postprocessing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationType {
    LensBlur,
    LensFlare,
    MotionBlur,
    DirtyLens,
    Saturation,
    Compression,
    BlockChange,
    Shifting,
    ScanLines,
    Darkness,
    AtmosphericTurbulence,
    Noise,
    ColorDiffusion,
    SharpnessChange,
    Graffiti,
    WatermarkDamage,
}

impl DegradationType {
    /// All sixteen types in enumeration order (which is also stage order).
    pub const ALL: [DegradationType; 16] = [
        Self::LensBlur,
        Self::LensFlare,
        Self::MotionBlur,
        Self::DirtyLens,
        Self::Saturation,
        Self::Compression,
        Self::BlockChange,
        Self::Shifting,
        Self::ScanLines,
        Self::Darkness,
        Self::AtmosphericTurbulence,
        Self::Noise,
        Self::ColorDiffusion,
        Self::SharpnessChange,
        Self::Graffiti,
        Self::WatermarkDamage,
    ];

    pub fn stage(self) -> Stage {
        use DegradationType::*;
        match self {
            LensBlur | LensFlare | MotionBlur | DirtyLens | Saturation => Stage::Acquisition,
            Compression | BlockChange | Shifting | ScanLines => Stage::Transmission,
            Darkness | AtmosphericTurbulence | Noise | ColorDiffusion => Stage::Environment,
            SharpnessChange | Graffiti | WatermarkDamage => Stage::Postprocessing,
        }
    }

    /// Canonical snake-case name used on the wire.
    pub fn name(self) -> &'static str {
        use DegradationType::*;
        match self {
            LensBlur => "lens_blur",
            LensFlare => "lens_flare",
            MotionBlur => "motion_blur",
            DirtyLens => "dirty_lens",
            Saturation => "saturation",
            Compression => "compression",
            BlockChange => "block_change",
            Shifting => "shifting",
            ScanLines => "scan_lines",
            Darkness => "darkness",
            AtmosphericTurbulence => "atmospheric_turbulence",
            Noise => "noise",
            ColorDiffusion => "color_diffusion",
            SharpnessChange => "sharpness_change",
            Graffiti => "graffiti",
            WatermarkDamage => "watermark_damage",
        }
    }

    /// Lenient lookup: case-insensitive, spaces and hyphens count as underscores.
    pub fn from_loose_name(raw: &str) -> Option<Self> {
        let norm: String = raw
            .trim()
            .chars()
            .map(|c| match c {
                ' ' | '-' => '_',
                c => c.to_ascii_lowercase(),
            })
            .collect();
        Self::ALL.into_iter().find(|t| t.name() == norm)
    }

    fn order_key(self) -> (Stage, usize) {
        let idx = Self::ALL.iter().position(|&t| t == self).unwrap_or(0);
        (self.stage(), idx)
    }
}

impl fmt::Display for DegradationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DegradationType {
    type Err = DegradationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| DegradationError::UnknownType(s.to_owned()))
    }
}

/// One degradation: a type and an intensity in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct DegradationSpec {
    #[serde(rename = "type")]
    kind: DegradationType,
    intensity: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    #[serde(rename = "type")]
    kind: DegradationType,
    intensity: f64,
}

impl TryFrom<RawSpec> for DegradationSpec {
    type Error = DegradationError;

    fn try_from(raw: RawSpec) -> Result<Self, Self::Error> {
        Self::new(raw.kind, raw.intensity)
    }
}

impl DegradationSpec {
    pub fn new(kind: DegradationType, intensity: f64) -> Result<Self, DegradationError> {
        if !(0.0..=1.0).contains(&intensity) {
            return Err(DegradationError::IntensityOutOfRange(intensity));
        }
        Ok(Self { kind, intensity })
    }

    pub fn kind(&self) -> DegradationType {
        self.kind
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    /// Same type with intensity rounded half-up to two decimals.
    pub fn rounded(&self) -> Self {
        Self {
            kind: self.kind,
            intensity: round2(self.intensity),
        }
    }
}

/// Round half up to two decimal places.
pub fn round2(v: f64) -> f64 {
    libm::floor(v * 100.0 + 0.5) / 100.0
}

/// Ordered multi-stage composition of degradations plus the seed driving
/// every stochastic operator in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRecipe")]
pub struct DegradationRecipe {
    seed: u64,
    specs: Vec<DegradationSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecipe {
    seed: u64,
    specs: Vec<DegradationSpec>,
}

impl TryFrom<RawRecipe> for DegradationRecipe {
    type Error = DegradationError;

    fn try_from(raw: RawRecipe) -> Result<Self, Self::Error> {
        Self::new(raw.specs, raw.seed)
    }
}

impl DegradationRecipe {
    pub fn new(specs: Vec<DegradationSpec>, seed: u64) -> Result<Self, DegradationError> {
        Self::with_max_len(specs, seed, DEFAULT_MAX_SPECS)
    }

    /// Validates and sorts `specs` into stage order.
    pub fn with_max_len(
        mut specs: Vec<DegradationSpec>,
        seed: u64,
        max_len: usize,
    ) -> Result<Self, DegradationError> {
        if specs.is_empty() || specs.len() > max_len {
            return Err(DegradationError::RecipeLength {
                max: max_len,
                actual: specs.len(),
            });
        }
        specs.sort_by_key(|s| s.kind.order_key());
        if let Some(w) = specs.windows(2).find(|w| w[0].kind == w[1].kind) {
            return Err(DegradationError::DuplicateType(w[0].kind.name()));
        }
        Ok(Self { seed, specs })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn specs(&self) -> &[DegradationSpec] {
        &self.specs
    }

    pub fn total_intensity(&self) -> f64 {
        self.specs.iter().map(|s| s.intensity).sum()
    }

    /// Every intensity multiplied by `factor` (clamped to `[0, 1]`); same seed.
    pub fn scaled(&self, factor: f64) -> Self {
        let specs = self
            .specs
            .iter()
            .map(|s| DegradationSpec {
                kind: s.kind,
                intensity: (s.intensity * factor).clamp(0.0, 1.0),
            })
            .collect();
        Self {
            seed: self.seed,
            specs,
        }
    }

    /// Rescales intensities so they sum to `total`.
    pub fn normalized_to(&self, total: f64) -> Result<Self, DegradationError> {
        let current = self.total_intensity();
        if current <= 0.0 {
            return Err(DegradationError::InvalidConfig(
                "cannot normalize a recipe with zero total intensity".into(),
            ));
        }
        let specs = self
            .specs
            .iter()
            .map(|s| DegradationSpec::new(s.kind, s.intensity * total / current))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            seed: self.seed,
            specs,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("recipe serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DegradationError> {
        serde_json::from_str(text).map_err(|e| DegradationError::RecipeJson(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub min_count: usize,
    pub max_count: usize,
    pub allowed_types: Vec<DegradationType>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            min_count: 1,
            max_count: DEFAULT_MAX_SPECS,
            allowed_types: DegradationType::ALL.to_vec(),
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), DegradationError> {
        let mut distinct = self.allowed_types.clone();
        distinct.sort();
        distinct.dedup();
        if self.min_count < 1
            || self.min_count > self.max_count
            || self.max_count > distinct.len()
        {
            return Err(DegradationError::InvalidConfig(format!(
                "need 1 <= min_count ({}) <= max_count ({}) <= allowed types ({})",
                self.min_count,
                self.max_count,
                distinct.len()
            )));
        }
        Ok(())
    }
}

/// Draws a recipe: count uniform in `[min_count, max_count]`, types without
/// replacement, intensities i.i.d. uniform on `[0, 1]`, seed from `rng`.
pub fn sample_recipe(
    rng: &mut RngState,
    config: &SamplingConfig,
) -> Result<DegradationRecipe, DegradationError> {
    config.validate()?;
    let mut pool = config.allowed_types.clone();
    pool.sort();
    pool.dedup();
    let count = rng.range_inclusive(config.min_count, config.max_count);
    let mut specs = Vec::with_capacity(count);
    for _ in 0..count {
        let pick = rng.below(pool.len() as u64) as usize;
        let kind = pool.swap_remove(pick);
        // next_f64 is in [0, 1), always a valid intensity.
        specs.push(DegradationSpec {
            kind,
            intensity: rng.next_f64(),
        });
    }
    let seed = rng.next_u64();
    DegradationRecipe::with_max_len(specs, seed, config.max_count)
}
