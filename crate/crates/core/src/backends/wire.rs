//! Request and response bodies of the sidecar protocol. Images travel as
//! base64-encoded PNG; masks as Gray8 PNG with 0 = keep and 255 = scrub.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{BackendError, Detection};
use crate::imaging::{BBox, BinaryMask, ImageBuffer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintBody {
    pub image_png_b64: String,
    pub mask_png_b64: String,
    pub prompt: String,
    pub seed: u64,
    pub request_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintReply {
    pub image_png_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectBody {
    pub image_png_b64: String,
    pub score_threshold: f64,
    pub request_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectReply {
    pub detections: Vec<WireDetection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub bbox: [f64; 4],
    pub category_id: u64,
    pub score: f64,
}

impl From<WireDetection> for Detection {
    fn from(d: WireDetection) -> Self {
        Detection { bbox: BBox::from(d.bbox), category_id: d.category_id, score: d.score }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpipsBody {
    pub image_a_png_b64: String,
    pub image_b_png_b64: String,
    pub request_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpipsReply {
    pub lpips: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthReply {
    pub status: String,
    #[serde(default)]
    pub model_info: serde_json::Value,
}

/// One entry of a COCO results file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: [f64; 4],
    pub score: f64,
}

impl DetectionRecord {
    pub fn detection(&self) -> Detection {
        Detection { bbox: BBox::from(self.bbox), category_id: self.category_id, score: self.score }
    }
}

pub fn encode_image(img: &ImageBuffer) -> Result<String, BackendError> {
    Ok(STANDARD.encode(img.encode_png()?))
}

pub fn encode_mask(mask: &BinaryMask) -> Result<String, BackendError> {
    Ok(STANDARD.encode(mask.encode_png()?))
}

pub fn decode_image(b64: &str) -> Result<ImageBuffer, BackendError> {
    let bytes = STANDARD
        .decode(b64)
        .map_err(|e| BackendError::Protocol(format!("invalid base64 image: {e}")))?;
    ImageBuffer::decode(&bytes).map_err(|e| BackendError::Protocol(format!("invalid PNG payload: {e}")))
}

pub fn decode_mask(b64: &str) -> Result<BinaryMask, BackendError> {
    Ok(BinaryMask::from_image(&decode_image(b64)?))
}
