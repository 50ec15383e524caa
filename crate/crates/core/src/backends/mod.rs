//! Inpainter and detector interfaces.
//!
//! Three deterministic reference inpainters and a replay detector ship with the
//! crate so that every stage can run without a model. [`RemoteBackend`] speaks
//! the JSON-over-HTTP protocol served by the model sidecar.
//!
//! Backends are not trusted to respect the mask: [`inpaint`] only checks the
//! output shape, and callers composite the result with
//! [`crate::imaging::composite`] before using it.

mod reference;
mod remote;
pub mod wire;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::imaging::{BBox, BinaryMask, ImageBuffer, ImagingError};

pub use reference::{BorderMean, ConstantFill, LaplacianFill, ReplayDetector, MID_GRAY};
pub use remote::{lpips, BackendEndpoint, RemoteBackend, ENV_BACKEND_URL};

pub const DEFAULT_PROMPT: &str = "generic background";
pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend request {request_id} failed: {message}")]
    Remote { request_id: String, message: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("unsupported metric: {0}")]
    UnsupportedMetric(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("replay source: {0}")]
    Replay(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

#[derive(Debug, Clone)]
pub struct InpaintRequest {
    pub image: ImageBuffer,
    pub mask: BinaryMask,
    pub prompt: String,
    /// Handle for the generator's latent noise.
    pub seed: u64,
}

impl InpaintRequest {
    pub fn new(image: ImageBuffer, mask: BinaryMask, seed: u64) -> Result<Self, BackendError> {
        if !mask.matches(&image) {
            return Err(BackendError::InvalidRequest(format!(
                "mask {}x{} does not match image {}x{}",
                mask.width(),
                mask.height(),
                image.width(),
                image.height()
            )));
        }
        Ok(Self { image, mask, prompt: DEFAULT_PROMPT.to_string(), seed })
    }

    pub fn with_prompt(mut self, prompt: impl Into<String>) -> Self {
        self.prompt = prompt.into();
        self
    }

    /// Content-derived id: repeating an identical request yields the same id.
    pub fn request_id(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"inpaint");
        h.update(self.seed.to_le_bytes());
        h.update(self.prompt.as_bytes());
        h.update([0u8]);
        hash_image(&mut h, &self.image);
        h.update(self.mask.width().to_le_bytes());
        h.update(self.mask.height().to_le_bytes());
        for chunk in self.mask.bits().chunks(8) {
            h.update([chunk.iter().enumerate().fold(0u8, |b, (i, v)| b | ((*v as u8) << i))]);
        }
        short_hex(h)
    }
}

pub(crate) fn hash_image(h: &mut Sha256, img: &ImageBuffer) {
    h.update(img.width().to_le_bytes());
    h.update(img.height().to_le_bytes());
    h.update([img.channels()]);
    h.update(img.data());
}

pub(crate) fn short_hex(h: Sha256) -> String {
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub category_id: u64,
    pub score: f64,
}

pub trait Inpainter: Send + Sync {
    fn name(&self) -> String;
    /// Whether the text prompt influences the output.
    fn uses_prompt(&self) -> bool {
        false
    }
    fn inpaint(&self, req: &InpaintRequest) -> Result<ImageBuffer, BackendError>;
}

pub trait Detector: Send + Sync {
    fn name(&self) -> String;
    /// Raw detections for one image. `image_id` lets replay sources look up
    /// recorded output; live detectors ignore it.
    fn detect_raw(
        &self,
        image_id: u64,
        image: &ImageBuffer,
        score_threshold: f64,
    ) -> Result<Vec<Detection>, BackendError>;
}

/// Runs the inpainter and rejects outputs whose shape differs from the input.
pub fn inpaint(backend: &dyn Inpainter, req: &InpaintRequest) -> Result<ImageBuffer, BackendError> {
    let out = backend.inpaint(req)?;
    if !out.same_shape(&req.image) {
        return Err(BackendError::Protocol(format!(
            "{} returned {}x{}x{} for a {}x{}x{} request",
            backend.name(),
            out.width(),
            out.height(),
            out.channels(),
            req.image.width(),
            req.image.height(),
            req.image.channels()
        )));
    }
    Ok(out)
}

/// Detections scoring at least `score_threshold`, highest score first. Equal
/// scores keep the backend's order.
pub fn detect(
    backend: &dyn Detector,
    image_id: u64,
    image: &ImageBuffer,
    score_threshold: f64,
) -> Result<Vec<Detection>, BackendError> {
    if !(0.0..=1.0).contains(&score_threshold) {
        return Err(BackendError::InvalidRequest(format!(
            "score threshold {score_threshold} outside [0, 1]"
        )));
    }
    let mut dets: Vec<Detection> = backend
        .detect_raw(image_id, image, score_threshold)?
        .into_iter()
        .filter(|d| d.score >= score_threshold)
        .collect();
    for d in &dets {
        if !(0.0..=1.0).contains(&d.score) {
            return Err(BackendError::Protocol(format!("detection score {} outside [0, 1]", d.score)));
        }
    }
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(dets)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Shrinker;
    impl Inpainter for Shrinker {
        fn name(&self) -> String {
            "shrinker".into()
        }
        fn inpaint(&self, req: &InpaintRequest) -> Result<ImageBuffer, BackendError> {
            Ok(ImageBuffer::filled(req.image.width() - 1, req.image.height(), req.image.channels(), 0))
        }
    }

    #[test]
    fn dimension_change_is_a_protocol_violation() {
        let req = InpaintRequest::new(ImageBuffer::filled(4, 4, 3, 9), BinaryMask::full(4, 4), 1).unwrap();
        assert!(matches!(inpaint(&Shrinker, &req), Err(BackendError::Protocol(_))));
    }

    #[test]
    fn request_validation_and_ids() {
        assert!(InpaintRequest::new(ImageBuffer::filled(4, 4, 3, 9), BinaryMask::full(3, 4), 1).is_err());
        let a = InpaintRequest::new(ImageBuffer::filled(4, 4, 3, 9), BinaryMask::full(4, 4), 1).unwrap();
        assert_eq!(a.prompt, "generic background");
        assert_eq!(a.request_id(), a.clone().request_id());
        let b = InpaintRequest::new(ImageBuffer::filled(4, 4, 3, 9), BinaryMask::full(4, 4), 2).unwrap();
        assert_ne!(a.request_id(), b.request_id());
        assert_eq!(a.request_id().len(), 16);
    }
}
