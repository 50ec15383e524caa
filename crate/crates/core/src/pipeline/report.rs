use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ImageStatus, PipelineError, RunManifest};
use crate::backends::Detection;
use crate::dataset::DatasetDescriptor;
use crate::metrics::image::{ImageQualityReport, QualitySummary};
use crate::metrics::privacy::{reduction_stats, CountPercent, PersonCounts, PrivacyReport};
use crate::metrics::utility::{evaluate, EvalConfig, UtilityReport};

/// Optional inputs beyond the run itself.
#[derive(Debug, Clone, Default)]
pub struct EvalInputs {
    /// Ground truth plus detections of a model trained on the processed data.
    pub detections: Option<(DatasetDescriptor, HashMap<u64, Vec<Detection>>)>,
    pub baseline_ap: Option<f64>,
    pub quality: Vec<ImageQualityReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub privacy: PrivacyReport,
    pub utility: Option<UtilityReport>,
    pub quality: Option<QualitySummary>,
}

/// Scores a finished run. Privacy comes from the oracle counts recorded in
/// the manifest; failed images are left out.
pub fn report(
    original: &DatasetDescriptor,
    processed: &DatasetDescriptor,
    manifest: &RunManifest,
    inputs: &EvalInputs,
) -> Result<RunReport, PipelineError> {
    let policy = &manifest.config.policy;
    let counts: Vec<PersonCounts> = manifest
        .records
        .iter()
        .filter(|r| !matches!(r.status, ImageStatus::Failed { .. }))
        .filter_map(|r| r.person_counts)
        .collect();
    if counts.is_empty() {
        log::warn!("manifest holds no oracle counts; privacy efficiency skipped");
    }
    let (lost, reduced) = reduction_stats(original, processed, &policy.sensitive_categories);
    let no_mask = manifest.records.iter().filter(|r| r.mask_pixels == Some(0)).count();
    let privacy = PrivacyReport::build(policy.mode.privacy_mode(), counts, lost, reduced).with_images_without_mask(no_mask);

    let utility = match &inputs.detections {
        Some((gt, dets)) => {
            let r = evaluate(gt, dets, &EvalConfig::default()).map_err(|e| PipelineError::Config(e.to_string()))?;
            Some(match inputs.baseline_ap {
                Some(b) => r.with_baseline(b),
                None => r,
            })
        }
        None => None,
    };
    let quality = (!inputs.quality.is_empty()).then(|| QualitySummary::from_pairs(inputs.quality.clone()));
    Ok(RunReport { method: method_label(manifest), privacy, utility, quality })
}

fn method_label(m: &RunManifest) -> String {
    let p = &m.config.policy;
    let mut s = p.mode.to_string().to_uppercase().replace('-', ".");
    if !p.mode.is_drop() {
        s.push('.');
        s.push_str(&m.config.inpainter);
        if p.dilate_px > 0 {
            s.push_str(".BD");
        }
    }
    s
}

fn count_percent(c: &CountPercent) -> String {
    format!("{} ({:.2}%)", c.count, c.percent)
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_else(|| "-".into())
}

impl RunReport {
    /// One-row table: AP, PE, IE, images lost, annotation reduction.
    pub fn table(&self) -> String {
        let ap = self.utility.as_ref().map(|u| u.mean_ap);
        let rel = self
            .utility
            .as_ref()
            .and_then(|u| u.relative_to_baseline)
            .map(crate::metrics::utility::format_percent)
            .unwrap_or_else(|| "-".into());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<18} {:>7} {:>9} {:>8} {:>8} {:>18} {:>20}",
            "Method", "AP", "vs. base", "PE (%)", "IE (%)", "Img. Lost", "Annot. Red."
        );
        let _ = writeln!(
            out,
            "{:<18} {:>7} {:>9} {:>8} {:>8} {:>18} {:>20}",
            self.method,
            opt(ap, 3),
            rel,
            opt(self.privacy.pe_percent, 2),
            opt(self.privacy.ie_percent, 2),
            count_percent(&self.privacy.images_lost),
            count_percent(&self.privacy.annotation_reduction),
        );
        if let Some(q) = &self.quality {
            out.push_str(&q.table(&self.method));
        }
        out
    }
}
