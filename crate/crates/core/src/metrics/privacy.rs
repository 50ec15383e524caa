//! Removal-efficiency metrics and dataset-loss accounting.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetDescriptor;

#[derive(Debug, Error, PartialEq)]
pub enum PrivacyError {
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
    #[error("image efficiency is not applicable to selective scrubbing")]
    NotApplicable,
}

/// Whether every sensitive instance was targeted (full) or one per image in
/// a seeded half of the sensitive images (selective).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrivacyMode {
    Full,
    Selective,
}

/// Sensitive-object counts for one image: ground truth versus what the
/// oracle still finds after obfuscation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonCounts {
    pub image_id: u64,
    pub gt_persons: u32,
    pub scrubbed_persons: u32,
}

/// Person-level efficiency for full scrubbing: fraction of ground-truth
/// persons no longer found. Per-image terms where the oracle finds more
/// persons than the ground truth holds are clamped at zero.
pub fn pe_fp(per_image: &[(u32, u32)]) -> Result<f64, PrivacyError> {
    let total: u64 = per_image.iter().map(|(gt, _)| *gt as u64).sum();
    if total == 0 {
        return Err(PrivacyError::Undefined("no ground-truth persons"));
    }
    let mut removed = 0u64;
    for (gt, scrubbed) in per_image {
        if scrubbed > gt {
            log::warn!("oracle count {scrubbed} exceeds ground truth {gt}; clamping");
        }
        removed += gt.saturating_sub(*scrubbed) as u64;
    }
    Ok(100.0 * removed as f64 / total as f64)
}

/// Person-level efficiency for selective scrubbing: share of images whose
/// person count went down.
pub fn pe_sp(per_image: &[(u32, u32)]) -> Result<f64, PrivacyError> {
    if per_image.is_empty() {
        return Err(PrivacyError::Undefined("empty image set"));
    }
    let reduced = per_image.iter().filter(|(gt, s)| s < gt).count();
    Ok(100.0 * reduced as f64 / per_image.len() as f64)
}

/// Image-level efficiency: share of images cleared of every person.
pub fn ie(scrubbed: &[u32], mode: PrivacyMode) -> Result<f64, PrivacyError> {
    if mode == PrivacyMode::Selective {
        return Err(PrivacyError::NotApplicable);
    }
    if scrubbed.is_empty() {
        return Err(PrivacyError::Undefined("empty image set"));
    }
    let cleared = scrubbed.iter().filter(|s| **s == 0).count();
    Ok(100.0 * cleared as f64 / scrubbed.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountPercent {
    pub count: usize,
    pub percent: f64,
}

impl CountPercent {
    fn of(count: usize, total: usize) -> Self {
        let percent = if total == 0 { 0.0 } else { 100.0 * count as f64 / total as f64 };
        Self { count, percent }
    }
}

/// Images removed (as a share of all input images) and non-excluded
/// annotations removed (as a share of the non-excluded input annotations).
pub fn reduction_stats(
    before: &DatasetDescriptor,
    after: &DatasetDescriptor,
    excluded: &BTreeSet<u64>,
) -> (CountPercent, CountPercent) {
    let kept_images: HashSet<u64> = after.images.iter().map(|i| i.id).collect();
    let lost = before.images.iter().filter(|i| !kept_images.contains(&i.id)).count();
    let kept_anns: HashSet<u64> = after.annotations.iter().map(|a| a.id).collect();
    let counted: Vec<u64> = before
        .annotations
        .iter()
        .filter(|a| !excluded.contains(&a.category_id))
        .map(|a| a.id)
        .collect();
    let removed = counted.iter().filter(|id| !kept_anns.contains(id)).count();
    (CountPercent::of(lost, before.images.len()), CountPercent::of(removed, counted.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub mode: PrivacyMode,
    /// `None` when undefined (no ground-truth persons in the evaluated set).
    pub pe_percent: Option<f64>,
    /// Absent for selective scrubbing.
    pub ie_percent: Option<f64>,
    pub images_lost: CountPercent,
    pub annotation_reduction: CountPercent,
    pub per_image_counts: Vec<PersonCounts>,
    /// Evaluated images for which no scrub mask could be built; they count as
    /// not reduced.
    pub images_without_mask: usize,
    /// Estimated false-negative rate of the sensitive-object detector.
    pub detector_fnr_estimate: Option<f64>,
}

impl PrivacyReport {
    pub fn build(
        mode: PrivacyMode,
        per_image: Vec<PersonCounts>,
        images_lost: CountPercent,
        annotation_reduction: CountPercent,
    ) -> Self {
        let pairs: Vec<(u32, u32)> = per_image.iter().map(|c| (c.gt_persons, c.scrubbed_persons)).collect();
        let pe = match mode {
            PrivacyMode::Full => pe_fp(&pairs),
            PrivacyMode::Selective => pe_sp(&pairs),
        };
        let pe_percent = match pe {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("person efficiency skipped: {e}");
                None
            }
        };
        let ie_percent = match mode {
            PrivacyMode::Full => {
                let scrubbed: Vec<u32> = per_image.iter().map(|c| c.scrubbed_persons).collect();
                ie(&scrubbed, mode).ok()
            }
            PrivacyMode::Selective => None,
        };
        Self {
            mode,
            pe_percent,
            ie_percent,
            images_lost,
            annotation_reduction,
            per_image_counts: per_image,
            images_without_mask: 0,
            detector_fnr_estimate: None,
        }
    }

    pub fn with_images_without_mask(mut self, n: usize) -> Self {
        self.images_without_mask = n;
        self
    }

    pub fn with_detector_fnr(mut self, rho: f64) -> Self {
        self.detector_fnr_estimate = Some(rho);
        self
    }

    pub fn by_image(&self) -> HashMap<u64, PersonCounts> {
        self.per_image_counts.iter().map(|c| (c.image_id, *c)).collect()
    }
}
