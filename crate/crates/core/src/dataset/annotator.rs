//! Text-generation backends for the annotation pipeline.

use base64::Engine;
use serde_json::json;

use super::templates::TemplateName;
use crate::chain::{contains_token, word_count};
use crate::degradation::{DegradationRecipe, DegradationType};
use crate::http::{response_text, EndpointConfig, JsonEndpoint};
use crate::rng::{hash_str, RngState};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnnotatorError {
    #[error("annotator unavailable: {0}")]
    Unavailable(String),
    #[error("annotator returned unusable text: {0}")]
    Invalid(String),
}

/// Structured facts behind a prompt. Remote clients only send the rendered
/// prompt and images; the offline mock writes its text from these.
#[derive(Debug, Clone)]
pub struct AnnotationContext {
    pub recipe: DegradationRecipe,
    pub question: String,
    pub answer: String,
    /// Segment being rewritten (length-scaling steps only).
    pub segment: Option<String>,
    /// Text being rewritten (length-scaling steps only).
    pub text: Option<String>,
    pub target_words: Option<usize>,
    /// Zero-based retry counter for the step.
    pub attempt: u32,
}

#[derive(Debug, Clone)]
pub struct AnnotationRequest {
    pub template: TemplateName,
    pub prompt: String,
    /// PNG-encoded images referenced by `[image N]` markers in the prompt.
    pub images: Vec<Vec<u8>>,
    pub context: AnnotationContext,
}

pub trait AnnotatorClient: Send + Sync {
    fn generate(&self, request: &AnnotationRequest) -> Result<String, AnnotatorError>;
}

/// Checks that an annotator response is usable as a plain-text segment body.
pub fn validate_segment_text(text: &str) -> Result<String, AnnotatorError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(AnnotatorError::Invalid("empty response".into()));
    }
    if contains_token(trimmed) {
        return Err(AnnotatorError::Invalid(
            "response contains segment tokens".into(),
        ));
    }
    Ok(trimmed.to_owned())
}

/// HTTP annotator: POST `{model, prompt, images: [base64 PNG]}`, reply `{text}`.
#[derive(Debug)]
pub struct RemoteAnnotator {
    model: String,
    endpoint: JsonEndpoint,
}

impl RemoteAnnotator {
    pub fn new(model: impl Into<String>, endpoint: &EndpointConfig) -> Result<Self, String> {
        Ok(Self {
            model: model.into(),
            endpoint: JsonEndpoint::new(endpoint)?,
        })
    }
}

impl AnnotatorClient for RemoteAnnotator {
    fn generate(&self, request: &AnnotationRequest) -> Result<String, AnnotatorError> {
        let b64 = base64::engine::general_purpose::STANDARD;
        let images: Vec<String> = request.images.iter().map(|png| b64.encode(png)).collect();
        let body = json!({
            "model": self.model,
            "prompt": request.prompt,
            "images": images,
        });
        let reply = self.endpoint.post(&body).map_err(AnnotatorError::Unavailable)?;
        response_text(&reply).map_err(AnnotatorError::Invalid)
    }
}

/// Offline annotator that fills phrase templates from the recipe. Output is a
/// pure function of `(seed, prompt, context)`, independent of call order.
/// Length-scaling responses hit the requested word count exactly.
#[derive(Debug, Clone)]
pub struct MockAnnotator {
    seed: u64,
}

impl MockAnnotator {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn rng_for(&self, request: &AnnotationRequest) -> RngState {
        let key = format!("{:?}|{}|{}", request.template, request.context.attempt, request.prompt);
        RngState::new(hash_str(self.seed, &key))
    }
}

fn effect(kind: DegradationType) -> &'static str {
    use DegradationType::*;
    match kind {
        LensBlur => "softens edges so fine outlines and small text merge together",
        LensFlare => "washes out part of the frame with a bright glare",
        MotionBlur => "smears objects along one direction and doubles thin shapes",
        DirtyLens => "lays hazy smudges over regions of the scene",
        Saturation => "distorts the colours so hues no longer match the real objects",
        Compression => "introduces blocky artifacts that erase texture",
        BlockChange => "replaces patches with content copied from elsewhere",
        Shifting => "displaces a horizontal band so shapes no longer line up",
        ScanLines => "darkens regular rows and interrupts vertical structure",
        Darkness => "lowers the brightness so shadowed details disappear",
        AtmosphericTurbulence => "warps straight lines into wavy ones",
        Noise => "covers the image with grain that hides fine detail",
        ColorDiffusion => "misaligns the colour channels and creates coloured fringes",
        SharpnessChange => "alters edge contrast, either halo-sharpening or softening it",
        Graffiti => "paints opaque strokes over parts of the content",
        WatermarkDamage => "overlays a repeated translucent text pattern",
    }
}

fn severity(s: f64) -> &'static str {
    match s {
        s if s < 0.25 => "slight",
        s if s < 0.5 => "moderate",
        s if s < 0.75 => "strong",
        _ => "severe",
    }
}

const FILLER: [&str; 6] = [
    "the remaining visible cues still agree with this reading",
    "shape and layout stay consistent once the corruption is discounted",
    "nothing in the undamaged regions contradicts this interpretation",
    "context from the surrounding scene supports the same conclusion",
    "the overall composition remains recognisable despite the damage",
    "careful comparison of the clearer areas confirms this step",
];

fn pick<'a>(rng: &mut RngState, options: &[&'a str]) -> &'a str {
    options[rng.below(options.len() as u64) as usize]
}

impl AnnotatorClient for MockAnnotator {
    fn generate(&self, request: &AnnotationRequest) -> Result<String, AnnotatorError> {
        let mut rng = self.rng_for(request);
        let ctx = &request.context;
        let text = match request.template {
            TemplateName::Influence => ctx
                .recipe
                .specs()
                .iter()
                .map(|s| {
                    let lead = pick(&mut rng, &["The", "A", "Here the"]);
                    format!(
                        "{lead} {} {} {}.",
                        severity(s.intensity()),
                        s.kind().name().replace('_', " "),
                        effect(s.kind())
                    )
                })
                .collect::<Vec<_>>()
                .join(" "),
            TemplateName::Reasoning => {
                let names: Vec<String> = ctx
                    .recipe
                    .specs()
                    .iter()
                    .map(|s| s.kind().name().replace('_', " "))
                    .collect();
                let opener = pick(
                    &mut rng,
                    &["Looking past the", "Setting aside the", "Compensating for the"],
                );
                format!(
                    "{opener} {}, the question asks: {} The undistorted structure of the scene points to {}.",
                    names.join(" and "),
                    ctx.question.trim(),
                    ctx.answer.trim()
                )
            }
            TemplateName::Conclusion => {
                let lead = pick(&mut rng, &["Therefore the answer is", "So the answer is", "Hence it is"]);
                format!("{lead} {}.", ctx.answer.trim())
            }
            TemplateName::LenShort | TemplateName::LenMedium | TemplateName::LenLong => {
                let target = ctx.target_words.unwrap_or(1).max(1);
                let source = ctx.text.as_deref().unwrap_or_default();
                let mut words: Vec<String> = source.split_whitespace().map(str::to_owned).collect();
                while words.len() < target {
                    let phrase = FILLER[rng.below(FILLER.len() as u64) as usize];
                    words.extend(phrase.split_whitespace().map(str::to_owned));
                }
                words.truncate(target);
                let mut out = words.join(" ");
                if !out.ends_with('.') {
                    out.push('.');
                }
                debug_assert_eq!(word_count(&out), target);
                out
            }
        };
        Ok(text)
    }
}
