use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{BenchmarkItem, Task};
use crate::chain::{serialize_chain, ReasoningChain};
use crate::degradation::{round2, DegradationRecipe, DegradationSpec};
use crate::http::{response_text, EndpointConfig, JsonEndpoint};
use crate::raster::RasterImage;
use crate::rng::{hash_str, RngState};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("model client unavailable: {0}")]
pub struct ClientUnavailable(pub String);

/// One query to the model under test.
///
/// `applied` is the degradation actually applied to `image`. Real clients
/// must ignore it; scripted mocks use it to produce controlled behaviour.
#[derive(Debug, Clone, Copy)]
pub struct ModelRequest<'a> {
    pub item: &'a BenchmarkItem,
    pub prompt: &'a str,
    pub image: &'a RasterImage,
    pub applied: &'a DegradationRecipe,
}

pub trait ModelClient: Send + Sync {
    fn answer(&self, request: &ModelRequest<'_>) -> Result<String, ClientUnavailable>;
}

/// HTTP client: POST `{prompt, image: base64 PNG}`, reply `{text}`.
#[derive(Debug)]
pub struct RemoteModelClient {
    endpoint: JsonEndpoint,
}

impl RemoteModelClient {
    pub fn new(config: &EndpointConfig) -> Result<Self, String> {
        Ok(Self {
            endpoint: JsonEndpoint::new(config)?,
        })
    }
}

impl ModelClient for RemoteModelClient {
    fn answer(&self, request: &ModelRequest<'_>) -> Result<String, ClientUnavailable> {
        let image = base64::engine::general_purpose::STANDARD.encode(request.image.to_png());
        let body = json!({ "prompt": request.prompt, "image": image });
        let reply = self.endpoint.post(&body).map_err(ClientUnavailable)?;
        response_text(&reply).map_err(ClientUnavailable)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdMockConfig {
    /// Answers correctly iff the applied total intensity is below this.
    pub threshold: f64,
    /// Max absolute error added to reported intensities (deterministic).
    pub perception_noise: f64,
}

impl Default for ThresholdMockConfig {
    fn default() -> Self {
        Self {
            threshold: 0.6,
            perception_noise: 0.0,
        }
    }
}

/// Scripted model whose output depends only on the item and the applied
/// total intensity: correct below the threshold, wrong at or above it. It
/// always emits a well-formed chain naming the applied degradation types,
/// with reasoning length growing with total intensity.
#[derive(Debug, Clone)]
pub struct ThresholdMockClient {
    config: ThresholdMockConfig,
    seed: u64,
}

impl ThresholdMockClient {
    pub fn new(config: ThresholdMockConfig, seed: u64) -> Self {
        Self { config, seed }
    }
}

fn wrong_answer(item: &BenchmarkItem) -> String {
    match &item.choices {
        Some(choices) => choices
            .iter()
            .find(|c| c.trim() != item.answer.trim())
            .cloned()
            .unwrap_or_else(|| "none of these".into()),
        None => "it cannot be determined".into(),
    }
}

impl ModelClient for ThresholdMockClient {
    fn answer(&self, request: &ModelRequest<'_>) -> Result<String, ClientUnavailable> {
        let item = request.item;
        let total = request.applied.total_intensity();
        let key = format!("{}|{:016x}", item.id, total.to_bits());
        let mut rng = RngState::new(hash_str(self.seed, &key));
        let correct = total < self.config.threshold;
        let answer = if correct {
            item.answer.trim().to_owned()
        } else {
            wrong_answer(item)
        };
        let degradations = request
            .applied
            .specs()
            .iter()
            .map(|s| {
                let jitter = rng.uniform(-1.0, 1.0) * self.config.perception_noise;
                DegradationSpec::new(s.kind(), round2((s.intensity() + jitter).clamp(0.0, 1.0)))
                    .expect("clamped into range")
            })
            .collect();
        let words = 8 + (total * 40.0) as usize;
        let reasoning = std::iter::repeat("detail")
            .take(words)
            .collect::<Vec<_>>()
            .join(" ");
        let conclusion = match item.task {
            Task::Mcq => format!("The best option is {answer}."),
            Task::Vqa | Task::Cap => format!("The image shows {answer}."),
        };
        let chain = ReasoningChain {
            degradations,
            influence: "the degradations obscure parts of the scene".into(),
            reasoning,
            conclusion,
            answer: Some(answer),
        };
        Ok(serialize_chain(&chain))
    }
}
