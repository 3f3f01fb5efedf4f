//! Client for the external text-guided image-to-image editing service.
//!
//! The generator itself stays external (it is consumed pre-trained, never
//! touched); this module owns the wire protocol, prompt construction, retry
//! behavior, and a deterministic [`mock`] service used by tests and offline
//! runs.
//!
//! Wire protocol: `POST /generate` with JSON `{request_id, prompt, image_b64,
//! guidance}`; response JSON `{request_id, image_b64, latency_ms}`. Images are
//! base64-encoded PNG. Guidance is an opaque JSON object passed through
//! untouched so a real backend can consume its own knobs.

pub mod mock;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgcore::ImageBuffer;

/// Environment variable that overrides the configured service endpoint.
pub const SERVICE_URL_ENV: &str = "DEFECTFORGE_SERVICE_URL";

#[derive(Debug, Error)]
pub enum GenError {
    #[error("defect type {0:?} is not in the configured vocabulary")]
    UnknownDefectType(String),
    #[error("service unavailable after {attempts} attempts: {detail}")]
    ServiceUnavailable { attempts: u32, detail: String },
    #[error("malformed service response: {0}")]
    MalformedResponse(String),
    #[error("candidate dimensions {got:?} do not match input {expected:?}")]
    DimensionMismatch { expected: (u32, u32), got: (u32, u32) },
    #[error("png payload of {size} bytes exceeds the {limit}-byte limit")]
    PayloadTooLarge { size: usize, limit: usize },
    #[error("port {0} already in use")]
    PortInUse(u16),
    #[error("image encode failure: {0}")]
    EncodeFailure(String),
}

/// A rendered instruction for the editing service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub category: String,
    pub defect_type: String,
    pub template_id: String,
    pub rendered: String,
}

impl Prompt {
    /// Stable identifier used in provenance records.
    pub fn id(&self) -> String {
        format!("{}/{}", self.template_id, self.defect_type)
    }
}

/// Prompt templates plus the defect-type vocabulary.
///
/// Templates substitute `{category}` and `{defect_type}` tokens. A category
/// without its own template falls back to the default. A `None` vocabulary
/// accepts any defect type.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateRegistry {
    pub templates: BTreeMap<String, String>,
    pub category_templates: BTreeMap<String, String>,
    pub default_template_id: String,
    pub vocabulary: Option<BTreeSet<String>>,
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        let mut templates = BTreeMap::new();
        templates.insert(
            "default".to_string(),
            "add a {defect_type} defect to the {category}".to_string(),
        );
        Self {
            templates,
            category_templates: BTreeMap::new(),
            default_template_id: "default".to_string(),
            vocabulary: Some(
                ["scratch", "dent", "stain"].iter().map(|s| s.to_string()).collect(),
            ),
        }
    }
}

/// Renders the prompt for a (category, defect type) pair.
pub fn build_prompt(
    category: &str,
    defect_type: &str,
    registry: &TemplateRegistry,
) -> Result<Prompt, GenError> {
    if let Some(vocabulary) = &registry.vocabulary {
        if !vocabulary.contains(defect_type) {
            return Err(GenError::UnknownDefectType(defect_type.to_string()));
        }
    }
    let template_id = registry
        .category_templates
        .get(category)
        .unwrap_or(&registry.default_template_id)
        .clone();
    let template = registry
        .templates
        .get(&template_id)
        .or_else(|| registry.templates.get(&registry.default_template_id))
        .cloned()
        .unwrap_or_else(|| "add a {defect_type} defect to the {category}".to_string());
    let rendered = template
        .replace("{category}", category)
        .replace("{defect_type}", defect_type);
    Ok(Prompt {
        category: category.to_string(),
        defect_type: defect_type.to_string(),
        template_id,
        rendered,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub request_id: String,
    pub prompt: String,
    pub image_b64: String,
    #[serde(default)]
    pub guidance: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub request_id: String,
    pub image_b64: String,
    #[serde(default)]
    pub latency_ms: u64,
}

/// Retry behavior for transient failures (connection errors and 5xx).
/// Requests are idempotent by `request_id`, so replays are safe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 2, base_backoff_ms: 50, max_backoff_ms: 2000 }
    }
}

/// A successful generation: the decoded candidate, the raw response, and the
/// number of HTTP attempts spent.
#[derive(Debug, Clone)]
pub struct GenerationOutcome {
    pub candidate: ImageBuffer,
    pub response: GenerationResponse,
    pub attempts: u32,
}

pub fn encode_png_base64(img: &ImageBuffer, limit: usize) -> Result<String, GenError> {
    let color = match img.channels() {
        1 => image::ExtendedColorType::L8,
        _ => image::ExtendedColorType::Rgb8,
    };
    let mut bytes = Vec::new();
    image::write_buffer_with_format(
        &mut std::io::Cursor::new(&mut bytes),
        img.data(),
        img.width(),
        img.height(),
        color,
        image::ImageFormat::Png,
    )
    .map_err(|e| GenError::EncodeFailure(e.to_string()))?;
    if bytes.len() > limit {
        return Err(GenError::PayloadTooLarge { size: bytes.len(), limit });
    }
    Ok(BASE64.encode(&bytes))
}

pub fn decode_png_base64(data: &str) -> Result<ImageBuffer, GenError> {
    let bytes = BASE64
        .decode(data)
        .map_err(|e| GenError::MalformedResponse(format!("bad base64: {e}")))?;
    let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| GenError::MalformedResponse(format!("bad png: {e}")))?;
    let buffer = match decoded {
        image::DynamicImage::ImageLuma8(img) => {
            let (w, h) = img.dimensions();
            ImageBuffer::new(w, h, 1, img.into_raw())
        }
        image::DynamicImage::ImageRgb8(img) => {
            let (w, h) = img.dimensions();
            ImageBuffer::new(w, h, 3, img.into_raw())
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            ImageBuffer::new(w, h, 3, rgb.into_raw())
        }
    };
    Ok(buffer)
}

/// HTTP client for the generation service.
#[derive(Debug, Clone)]
pub struct GenClient {
    endpoint: String,
    policy: RetryPolicy,
    max_payload_bytes: usize,
    timeout: Duration,
}

impl GenClient {
    pub fn new(endpoint: &str, policy: RetryPolicy) -> Self {
        Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            policy,
            max_payload_bytes: 4 * 1024 * 1024,
            timeout: Duration::from_secs(30),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Sends one generation request, retrying transient failures with
    /// exponential backoff. The decoded candidate must match the input
    /// dimensions.
    pub fn request_generation(
        &self,
        request_id: &str,
        prompt: &Prompt,
        normal: &ImageBuffer,
        guidance: &serde_json::Value,
    ) -> Result<GenerationOutcome, GenError> {
        let request = GenerationRequest {
            request_id: request_id.to_string(),
            prompt: prompt.rendered.clone(),
            image_b64: encode_png_base64(normal, self.max_payload_bytes)?,
            guidance: guidance.clone(),
        };
        let url = format!("{}/generate", self.endpoint);
        let agent = ureq::AgentBuilder::new()
            .timeout(self.timeout)
            .build();

        let mut attempts = 0u32;
        let mut last_detail = String::new();
        while attempts <= self.policy.max_retries {
            if attempts > 0 {
                let exp = (self.policy.base_backoff_ms << (attempts - 1).min(16))
                    .min(self.policy.max_backoff_ms);
                std::thread::sleep(Duration::from_millis(exp));
            }
            attempts += 1;
            match agent.post(&url).send_json(&request) {
                Ok(response) => {
                    let body: GenerationResponse = response
                        .into_json()
                        .map_err(|e| GenError::MalformedResponse(e.to_string()))?;
                    if body.request_id != request.request_id {
                        return Err(GenError::MalformedResponse(format!(
                            "request_id mismatch: sent {}, got {}",
                            request.request_id, body.request_id
                        )));
                    }
                    let candidate = decode_png_base64(&body.image_b64)?;
                    if candidate.width() != normal.width()
                        || candidate.height() != normal.height()
                    {
                        return Err(GenError::DimensionMismatch {
                            expected: (normal.width(), normal.height()),
                            got: (candidate.width(), candidate.height()),
                        });
                    }
                    return Ok(GenerationOutcome { candidate, response: body, attempts });
                }
                Err(ureq::Error::Status(code, response)) if (500..600).contains(&code) => {
                    last_detail = format!(
                        "http {code}: {}",
                        response.into_string().unwrap_or_default()
                    );
                }
                Err(ureq::Error::Status(code, response)) => {
                    return Err(GenError::MalformedResponse(format!(
                        "http {code}: {}",
                        response.into_string().unwrap_or_default()
                    )));
                }
                Err(ureq::Error::Transport(transport)) => {
                    last_detail = transport.to_string();
                }
            }
        }
        Err(GenError::ServiceUnavailable { attempts, detail: last_detail })
    }
}
