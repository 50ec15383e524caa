use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ureq::Agent;

use super::wire::{
    decode_image, encode_image, encode_mask, DetectBody, DetectReply, HealthReply, InpaintBody,
    InpaintReply, LpipsBody, LpipsReply,
};
use super::{hash_image, short_hex, BackendError, Detection, Detector, InpaintRequest, Inpainter};
use crate::imaging::ImageBuffer;

pub const ENV_BACKEND_URL: &str = "ROAR_BACKEND_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendEndpoint {
    pub base_url: String,
    #[serde(with = "secs")]
    pub timeout: Duration,
    pub retries: u32,
    /// Delay before the first retry; doubles on each further attempt.
    #[serde(with = "secs")]
    pub backoff: Duration,
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }
    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}

impl BackendEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            timeout: Duration::from_secs(120),
            retries: 3,
            backoff: Duration::from_millis(250),
        }
    }

    /// Endpoint named by `ROAR_BACKEND_URL`, if set.
    pub fn from_env() -> Option<Self> {
        std::env::var(ENV_BACKEND_URL).ok().filter(|s| !s.is_empty()).map(Self::new)
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url, path)
    }
}

/// Blocking client for the sidecar. Safe to share across worker threads.
pub struct RemoteBackend {
    endpoint: BackendEndpoint,
    agent: Agent,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

impl RemoteBackend {
    pub fn new(endpoint: BackendEndpoint) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(endpoint.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { endpoint, agent }
    }

    pub fn endpoint(&self) -> &BackendEndpoint {
        &self.endpoint
    }

    pub fn health(&self) -> Result<HealthReply, BackendError> {
        let url = self.endpoint.url("/v1/health");
        let text = self.with_retries("health", || {
            let resp = self.agent.get(&url).call();
            Self::classify(resp)
        })?;
        let reply: HealthReply = parse_reply(&text)?;
        if reply.status != "ok" {
            return Err(BackendError::Remote {
                request_id: "health".into(),
                message: format!("backend reports status {:?}", reply.status),
            });
        }
        Ok(reply)
    }

    pub fn lpips(&self, a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, BackendError> {
        if !a.same_shape(b) {
            return Err(BackendError::InvalidRequest("lpips inputs differ in shape".into()));
        }
        let mut h = Sha256::new();
        h.update(b"lpips");
        hash_image(&mut h, a);
        hash_image(&mut h, b);
        let body = LpipsBody {
            image_a_png_b64: encode_image(a)?,
            image_b_png_b64: encode_image(b)?,
            request_id: short_hex(h),
        };
        let reply: LpipsReply = self.post("/v1/lpips", &body.request_id, &body)?;
        if !reply.lpips.is_finite() || reply.lpips < 0.0 {
            return Err(BackendError::Protocol(format!("lpips value {} is not a non-negative number", reply.lpips)));
        }
        Ok(reply.lpips)
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, request_id: &str, body: &B) -> Result<R, BackendError> {
        let url = self.endpoint.url(path);
        let text = self.with_retries(request_id, || {
            let resp = self.agent.post(&url).send_json(body);
            Self::classify(resp)
        })?;
        parse_reply(&text)
    }

    fn classify(resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<String, Attempt> {
        match resp {
            Err(e) => Err(Attempt::Retry(e.to_string())),
            Ok(mut r) => {
                let status = r.status().as_u16();
                let text = r.body_mut().read_to_string().map_err(|e| Attempt::Retry(e.to_string()))?;
                match status {
                    200..=299 => Ok(text),
                    408 | 429 | 500..=599 => Err(Attempt::Retry(format!("HTTP {status}: {text}"))),
                    _ => Err(Attempt::Fatal(format!("HTTP {status}: {text}"))),
                }
            }
        }
    }

    /// Runs `call` up to `1 + retries` times. Requests carry a content-derived
    /// id and fixed seed, so repeating one is harmless.
    fn with_retries(&self, request_id: &str, mut call: impl FnMut() -> Result<String, Attempt>) -> Result<String, BackendError> {
        let mut delay = self.endpoint.backoff;
        let mut last = String::new();
        for attempt in 0..=self.endpoint.retries {
            if attempt > 0 {
                log::warn!("request {request_id}: retry {attempt} after: {last}");
                thread::sleep(delay);
                delay = delay.saturating_mul(2);
            }
            match call() {
                Ok(text) => return Ok(text),
                Err(Attempt::Retry(msg)) => last = msg,
                Err(Attempt::Fatal(msg)) => {
                    return Err(BackendError::Remote { request_id: request_id.to_string(), message: msg })
                }
            }
        }
        Err(BackendError::Remote {
            request_id: request_id.to_string(),
            message: format!("gave up after {} attempts: {last}", self.endpoint.retries + 1),
        })
    }
}

fn parse_reply<R: DeserializeOwned>(text: &str) -> Result<R, BackendError> {
    serde_json::from_str(text).map_err(|e| BackendError::Protocol(format!("bad response body: {e}")))
}

impl Inpainter for RemoteBackend {
    fn name(&self) -> String {
        format!("remote:{}", self.endpoint.base_url)
    }

    fn uses_prompt(&self) -> bool {
        true
    }

    fn inpaint(&self, req: &InpaintRequest) -> Result<ImageBuffer, BackendError> {
        let body = InpaintBody {
            image_png_b64: encode_image(&req.image)?,
            mask_png_b64: encode_mask(&req.mask)?,
            prompt: req.prompt.clone(),
            seed: req.seed,
            request_id: req.request_id(),
        };
        let reply: InpaintReply = self.post("/v1/inpaint", &body.request_id, &body)?;
        decode_image(&reply.image_png_b64)
    }
}

impl Detector for RemoteBackend {
    fn name(&self) -> String {
        format!("remote:{}", self.endpoint.base_url)
    }

    fn detect_raw(&self, _image_id: u64, image: &ImageBuffer, score_threshold: f64) -> Result<Vec<Detection>, BackendError> {
        let mut h = Sha256::new();
        h.update(b"detect");
        h.update(score_threshold.to_le_bytes());
        hash_image(&mut h, image);
        let body = DetectBody {
            image_png_b64: encode_image(image)?,
            score_threshold,
            request_id: short_hex(h),
        };
        let reply: DetectReply = self.post("/v1/detect", &body.request_id, &body)?;
        Ok(reply.detections.into_iter().map(Detection::from).collect())
    }
}

/// LPIPS only exists behind a remote endpoint.
pub fn lpips(backend: Option<&RemoteBackend>, a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, BackendError> {
    match backend {
        None => Err(BackendError::UnsupportedMetric("lpips needs a remote endpoint".into())),
        Some(r) => r.lpips(a, b),
    }
}
