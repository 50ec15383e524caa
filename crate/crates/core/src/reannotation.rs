//! Annotation repair after obfuscation.
//!
//! Annotations whose box overlaps the scrub mask ("collided") are kept only if
//! the oracle still detects a matching object on the obfuscated image.
//! Annotations away from the mask are retained without verification, and the
//! scrub targets themselves are always deleted.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::Detection;
use crate::dataset::AnnotationRecord;
use crate::imaging::{bbox_iou, bbox_mask_iou, BBox, BinaryMask};

#[derive(Debug, Error)]
pub enum ReannotationError {
    #[error("scrub target {0} is not an annotation of this image")]
    UnknownTarget(u64),
    #[error("invalid thresholds: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReannotationConfig {
    /// Collision threshold on box-vs-mask IoU (strict `>`).
    pub zeta: f64,
    /// Verification threshold on box-vs-detection IoU (strict `>`).
    pub tau: f64,
    /// Also require the detection's category to equal the annotation's.
    pub require_same_category: bool,
}

impl Default for ReannotationConfig {
    fn default() -> Self {
        Self { zeta: 0.0, tau: 0.3, require_same_category: true }
    }
}

impl ReannotationConfig {
    pub fn validate(&self) -> Result<(), ReannotationError> {
        if !(0.0..1.0).contains(&self.zeta) {
            return Err(ReannotationError::Config(format!("zeta {} outside [0, 1)", self.zeta)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(ReannotationError::Config(format!("tau {} outside (0, 1]", self.tau)));
        }
        Ok(())
    }
}

/// Partition of one image's annotation ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationUpdate {
    pub retained_untouched: Vec<u64>,
    pub verified: Vec<u64>,
    pub removed: Vec<u64>,
    pub scrub_targets_removed: Vec<u64>,
}

impl AnnotationUpdate {
    pub fn kept(&self) -> BTreeSet<u64> {
        self.retained_untouched.iter().chain(&self.verified).copied().collect()
    }
}

fn bbox_of(a: &AnnotationRecord) -> BBox {
    BBox::from(a.bbox)
}

/// Annotations whose box-vs-mask IoU exceeds `zeta`. Crowd regions are never
/// collided: they pass through unmodified.
pub fn collided<'a>(annotations: &[&'a AnnotationRecord], mask: &BinaryMask, zeta: f64) -> Vec<&'a AnnotationRecord> {
    annotations
        .iter()
        .filter(|a| !a.is_crowd() && bbox_mask_iou(&bbox_of(a), mask) > zeta)
        .copied()
        .collect()
}

/// Collided annotations that some oracle detection still supports. One
/// detection may verify several annotations.
pub fn verify<'a>(
    collided: &[&'a AnnotationRecord],
    oracle: &[Detection],
    cfg: &ReannotationConfig,
) -> Vec<&'a AnnotationRecord> {
    collided
        .iter()
        .filter(|a| {
            let b = bbox_of(a);
            oracle.iter().any(|d| {
                (!cfg.require_same_category || d.category_id == a.category_id) && bbox_iou(&b, &d.bbox) > cfg.tau
            })
        })
        .copied()
        .collect()
}

/// Applies the repair rule to one image. Returns the surviving annotations
/// in input order together with the id partition.
pub fn update(
    annotations: &[&AnnotationRecord],
    scrub_targets: &BTreeSet<u64>,
    mask: &BinaryMask,
    oracle: &[Detection],
    cfg: &ReannotationConfig,
) -> Result<(Vec<AnnotationRecord>, AnnotationUpdate), ReannotationError> {
    for t in scrub_targets {
        if !annotations.iter().any(|a| a.id == *t) {
            return Err(ReannotationError::UnknownTarget(*t));
        }
    }
    let others: Vec<&AnnotationRecord> =
        annotations.iter().filter(|a| !scrub_targets.contains(&a.id)).copied().collect();
    let hit: BTreeSet<u64> = collided(&others, mask, cfg.zeta).iter().map(|a| a.id).collect();
    let hit_records: Vec<&AnnotationRecord> = others.iter().filter(|a| hit.contains(&a.id)).copied().collect();
    let ok: BTreeSet<u64> = verify(&hit_records, oracle, cfg).iter().map(|a| a.id).collect();

    let mut upd = AnnotationUpdate::default();
    let mut kept = Vec::new();
    for a in annotations {
        if scrub_targets.contains(&a.id) {
            upd.scrub_targets_removed.push(a.id);
        } else if !hit.contains(&a.id) {
            upd.retained_untouched.push(a.id);
            kept.push((*a).clone());
        } else if ok.contains(&a.id) {
            upd.verified.push(a.id);
            kept.push((*a).clone());
        } else {
            upd.removed.push(a.id);
        }
    }
    Ok((kept, upd))
}
