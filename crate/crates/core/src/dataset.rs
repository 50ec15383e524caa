//! COCO-style annotation documents: parsing, validation, canonical serialization
//! and dataset statistics.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("malformed annotation document at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("annotation {annotation_id} references missing image id {image_id}")]
    DanglingImage { annotation_id: u64, image_id: u64 },
    #[error("annotation {annotation_id} references missing category id {category_id}")]
    DanglingCategory { annotation_id: u64, category_id: u64 },
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: u64 },
    #[error("image {id} has non-positive extent {width}x{height}")]
    EmptyImage { id: u64, width: u32, height: u32 },
    #[error("annotation {id} has invalid geometry: {reason}")]
    InvalidGeometry { id: u64, reason: String },
    #[error("unknown category id {0}")]
    UnknownCategory(u64),
    #[error("sensitive category set is empty")]
    NoSensitiveCategories,
    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRecord {
    pub id: u64,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supercategory: Option<String>,
}

/// Uncompressed COCO run-length encoding. `size` is `[height, width]` and the
/// counts alternate background/foreground runs in column-major order, starting
/// with background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rle {
    pub size: [u32; 2],
    pub counts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Segmentation {
    /// Flat `[x0, y0, x1, y1, ...]` rings, pixel units.
    Polygons(Vec<Vec<f64>>),
    Rle(Rle),
}

impl Segmentation {
    pub fn is_empty(&self) -> bool {
        match self {
            Segmentation::Polygons(p) => p.iter().all(|ring| ring.len() < 6),
            Segmentation::Rle(r) => r.counts.is_empty(),
        }
    }
}

fn is_zero(v: &u8) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    /// `[x, y, w, h]`, top-left origin.
    pub bbox: [f64; 4],
    #[serde(default)]
    pub area: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Segmentation>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub iscrowd: u8,
}

impl AnnotationRecord {
    pub fn is_crowd(&self) -> bool {
        self.iscrowd != 0
    }
}

/// A whole annotation document. `info` and `licenses` are carried through
/// untouched so that rewriting a dataset does not lose them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub info: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub licenses: Option<serde_json::Value>,
    #[serde(default)]
    pub images: Vec<ImageRecord>,
    #[serde(default)]
    pub annotations: Vec<AnnotationRecord>,
    #[serde(default)]
    pub categories: Vec<CategoryRecord>,
}

impl DatasetDescriptor {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut image_ids = HashSet::with_capacity(self.images.len());
        for img in &self.images {
            if !image_ids.insert(img.id) {
                return Err(DatasetError::DuplicateId { kind: "image", id: img.id });
            }
            if img.width == 0 || img.height == 0 {
                return Err(DatasetError::EmptyImage {
                    id: img.id,
                    width: img.width,
                    height: img.height,
                });
            }
        }
        let mut category_ids = HashSet::with_capacity(self.categories.len());
        for cat in &self.categories {
            if !category_ids.insert(cat.id) {
                return Err(DatasetError::DuplicateId { kind: "category", id: cat.id });
            }
        }
        let mut ann_ids = HashSet::with_capacity(self.annotations.len());
        for ann in &self.annotations {
            if !ann_ids.insert(ann.id) {
                return Err(DatasetError::DuplicateId { kind: "annotation", id: ann.id });
            }
            if !image_ids.contains(&ann.image_id) {
                return Err(DatasetError::DanglingImage {
                    annotation_id: ann.id,
                    image_id: ann.image_id,
                });
            }
            if !category_ids.contains(&ann.category_id) {
                return Err(DatasetError::DanglingCategory {
                    annotation_id: ann.id,
                    category_id: ann.category_id,
                });
            }
            let [x, y, w, h] = ann.bbox;
            if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
                return Err(DatasetError::InvalidGeometry {
                    id: ann.id,
                    reason: "non-finite bbox".into(),
                });
            }
            if w < 0.0 || h < 0.0 {
                return Err(DatasetError::InvalidGeometry {
                    id: ann.id,
                    reason: format!("negative bbox extent {w}x{h}"),
                });
            }
            if ann.area.is_nan() || ann.area < 0.0 {
                return Err(DatasetError::InvalidGeometry {
                    id: ann.id,
                    reason: format!("area {} is negative", ann.area),
                });
            }
        }
        Ok(())
    }

    pub fn image(&self, id: u64) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.id == id)
    }

    /// Annotations grouped by image id, in document order.
    pub fn annotations_by_image(&self) -> HashMap<u64, Vec<&AnnotationRecord>> {
        let mut out: HashMap<u64, Vec<&AnnotationRecord>> = HashMap::new();
        for ann in &self.annotations {
            out.entry(ann.image_id).or_default().push(ann);
        }
        out
    }

    pub fn category_by_name(&self, name: &str) -> Option<&CategoryRecord> {
        self.categories.iter().find(|c| c.name == name)
    }
}

/// Parses and validates a COCO annotation document.
pub fn parse_dataset(bytes: &[u8]) -> Result<DatasetDescriptor, DatasetError> {
    let d: DatasetDescriptor = serde_json::from_slice(bytes).map_err(|e| DatasetError::Parse {
        offset: byte_offset(bytes, e.line(), e.column()),
        message: e.to_string(),
    })?;
    d.validate()?;
    Ok(d)
}

/// serde_json reports 1-based line and column; convert to a byte offset.
fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut current = 1;
    let mut line_start = 0;
    for (i, b) in bytes.iter().enumerate() {
        if current == line {
            break;
        }
        if *b == b'\n' {
            current += 1;
            line_start = i + 1;
        }
    }
    (line_start + column.saturating_sub(1)).min(bytes.len())
}

/// Canonical serialization: fixed key order, two-space indentation, trailing
/// newline. Equal descriptors always produce identical bytes.
pub fn serialize_dataset(d: &DatasetDescriptor) -> Result<Vec<u8>, DatasetError> {
    let mut out = serde_json::to_vec_pretty(d)?;
    out.push(b'\n');
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total_images: usize,
    pub total_annotations: usize,
    pub sensitive_annotations: usize,
    pub images_with_sensitive: usize,
    /// Fraction of images holding at least one sensitive annotation.
    pub gamma: f64,
    /// Mean and median count over the images that hold sensitive annotations.
    pub mean_sensitive_per_image: f64,
    pub median_sensitive_per_image: f64,
}

pub fn compute_stats(
    d: &DatasetDescriptor,
    sensitive: &BTreeSet<u64>,
) -> Result<DatasetStats, DatasetError> {
    if sensitive.is_empty() {
        return Err(DatasetError::NoSensitiveCategories);
    }
    for id in sensitive {
        if !d.categories.iter().any(|c| c.id == *id) {
            return Err(DatasetError::UnknownCategory(*id));
        }
    }
    let mut per_image: HashMap<u64, usize> = HashMap::new();
    let mut sensitive_annotations = 0;
    for ann in &d.annotations {
        if sensitive.contains(&ann.category_id) {
            sensitive_annotations += 1;
            *per_image.entry(ann.image_id).or_default() += 1;
        }
    }
    let mut counts: Vec<usize> = per_image.into_values().collect();
    counts.sort_unstable();
    let images_with_sensitive = counts.len();
    let gamma = if d.images.is_empty() {
        0.0
    } else {
        images_with_sensitive as f64 / d.images.len() as f64
    };
    let (mean, median) = if counts.is_empty() {
        (0.0, 0.0)
    } else {
        let mean = sensitive_annotations as f64 / counts.len() as f64;
        let mid = counts.len() / 2;
        let median = if counts.len().is_multiple_of(2) {
            (counts[mid - 1] + counts[mid]) as f64 / 2.0
        } else {
            counts[mid] as f64
        };
        (mean, median)
    };
    Ok(DatasetStats {
        total_images: d.images.len(),
        total_annotations: d.annotations.len(),
        sensitive_annotations,
        images_with_sensitive,
        gamma,
        mean_sensitive_per_image: mean,
        median_sensitive_per_image: median,
    })
}

/// Resolves category names (or numeric ids) to ids.
pub fn resolve_categories(
    d: &DatasetDescriptor,
    names: &[String],
) -> Result<BTreeSet<u64>, DatasetError> {
    let mut out = BTreeSet::new();
    for name in names {
        if let Some(c) = d.category_by_name(name) {
            out.insert(c.id);
        } else if let Ok(id) = name.parse::<u64>() {
            if !d.categories.iter().any(|c| c.id == id) {
                return Err(DatasetError::UnknownCategory(id));
            }
            out.insert(id);
        } else {
            return Err(DatasetError::Parse {
                offset: 0,
                message: format!("unknown category name {name:?}"),
            });
        }
    }
    Ok(out)
}
