//! End-to-end scrubbing: choose what to remove, remove it, repair the
//! annotations and account for the result.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    BackendEndpoint, BackendError, BorderMean, ConstantFill, Detector, Inpainter, LaplacianFill, RemoteBackend,
    ReplayDetector,
};
use crate::dataset::{DatasetDescriptor, DatasetError};
use crate::imaging::ImagingError;
use crate::metrics::privacy::PrivacyMode;

mod execute;
mod report;

pub use execute::{
    execute, run_scrub, scrub_image, ExecuteOptions, Execution, ImageRunRecord, ImageStatus, RunConfig,
    RunManifest, RunSummary, Runtime, ScrubJob, ScrubbedImage,
};
pub use report::{report, EvalInputs, RunReport};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("no sensitive categories given")]
    NoSensitiveCategories,
    #[error("sensitive category {0} is not in the dataset")]
    UnknownCategory(u64),
    #[error("image {image_id}: {message}")]
    Image { image_id: u64, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest: {0}")]
    Manifest(String),
}

impl PipelineError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScrubMode {
    Fp,
    Sp,
    FpDrop,
    SpDrop,
}

impl ScrubMode {
    pub fn privacy_mode(self) -> PrivacyMode {
        match self {
            ScrubMode::Fp | ScrubMode::FpDrop => PrivacyMode::Full,
            ScrubMode::Sp | ScrubMode::SpDrop => PrivacyMode::Selective,
        }
    }

    pub fn is_drop(self) -> bool {
        matches!(self, ScrubMode::FpDrop | ScrubMode::SpDrop)
    }

    fn is_selective(self) -> bool {
        self.privacy_mode() == PrivacyMode::Selective
    }
}

impl FromStr for ScrubMode {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "fp" => Ok(Self::Fp),
            "sp" => Ok(Self::Sp),
            "fp-drop" => Ok(Self::FpDrop),
            "sp-drop" => Ok(Self::SpDrop),
            other => Err(PipelineError::Config(format!("unknown mode {other:?} (fp, sp, fp-drop, sp-drop)"))),
        }
    }
}

impl fmt::Display for ScrubMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScrubMode::Fp => "fp",
            ScrubMode::Sp => "sp",
            ScrubMode::FpDrop => "fp-drop",
            ScrubMode::SpDrop => "sp-drop",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScrubPolicy {
    pub mode: ScrubMode,
    pub sensitive_categories: BTreeSet<u64>,
    /// Mask growth in pixels, applied after the per-image union.
    pub dilate_px: u32,
    /// Seeds the choice of which sensitive images a selective run touches.
    pub selection_seed: u64,
    /// Root of every per-image seed.
    pub global_seed: u64,
}

impl ScrubPolicy {
    pub fn new(mode: ScrubMode, sensitive_categories: BTreeSet<u64>) -> Self {
        Self { mode, sensitive_categories, dilate_px: 0, selection_seed: 42, global_seed: 3407 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum Action {
    Scrub { targets: Vec<u64> },
    Drop,
    Keep,
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Scrub { .. } => "scrub",
            Action::Drop => "drop",
            Action::Keep => "keep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedImage {
    pub image_id: u64,
    #[serde(flatten)]
    pub action: Action,
}

/// One entry per dataset image, ordered by image id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScrubPlan {
    pub entries: Vec<PlannedImage>,
}

impl ScrubPlan {
    /// True when every image is kept as is.
    pub fn is_noop(&self) -> bool {
        self.entries.iter().all(|e| e.action == Action::Keep)
    }

    pub fn count(&self, name: &str) -> usize {
        self.entries.iter().filter(|e| e.action.name() == name).count()
    }

    pub fn action(&self, image_id: u64) -> Option<&Action> {
        self.entries
            .binary_search_by_key(&image_id, |e| e.image_id)
            .ok()
            .map(|i| &self.entries[i].action)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d1_049b_b133_111b);
    z ^ (z >> 31)
}

/// Seed for everything random about one image. Depends only on the two
/// inputs, so processing order cannot change it.
pub fn image_seed(global_seed: u64, image_id: u64) -> u64 {
    splitmix64(global_seed ^ splitmix64(image_id))
}

/// Non-crowd sensitive annotation ids per image, for images that have any.
pub fn sensitive_annotations(d: &DatasetDescriptor, categories: &BTreeSet<u64>) -> BTreeMap<u64, Vec<u64>> {
    let mut out: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for a in &d.annotations {
        if categories.contains(&a.category_id) && !a.is_crowd() {
            out.entry(a.image_id).or_default().push(a.id);
        }
    }
    for ids in out.values_mut() {
        ids.sort_unstable();
    }
    out
}

/// The seeded half (rounded down) of `image_ids`.
fn selected_half(image_ids: &[u64], seed: u64) -> BTreeSet<u64> {
    let mut ids = image_ids.to_vec();
    ids.sort_unstable();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ids.truncate(ids.len() / 2);
    ids.into_iter().collect()
}

pub fn plan(d: &DatasetDescriptor, policy: &ScrubPolicy) -> Result<ScrubPlan, PipelineError> {
    if policy.sensitive_categories.is_empty() {
        return Err(PipelineError::NoSensitiveCategories);
    }
    for c in &policy.sensitive_categories {
        if !d.categories.iter().any(|k| k.id == *c) {
            return Err(PipelineError::UnknownCategory(*c));
        }
    }
    let sensitive = sensitive_annotations(d, &policy.sensitive_categories);
    if sensitive.is_empty() {
        log::warn!("no image holds a sensitive annotation; nothing to do");
    }
    let chosen: BTreeSet<u64> = if policy.mode.is_selective() {
        let ids: Vec<u64> = sensitive.keys().copied().collect();
        selected_half(&ids, policy.selection_seed)
    } else {
        sensitive.keys().copied().collect()
    };

    let mut image_ids: Vec<u64> = d.images.iter().map(|i| i.id).collect();
    image_ids.sort_unstable();
    let entries = image_ids
        .into_iter()
        .map(|image_id| {
            let action = match sensitive.get(&image_id) {
                Some(anns) if chosen.contains(&image_id) => match policy.mode {
                    ScrubMode::Fp => Action::Scrub { targets: anns.clone() },
                    ScrubMode::Sp => {
                        let mut rng = ChaCha8Rng::seed_from_u64(image_seed(policy.global_seed, image_id));
                        Action::Scrub { targets: vec![anns[rng.random_range(0..anns.len())]] }
                    }
                    ScrubMode::FpDrop | ScrubMode::SpDrop => Action::Drop,
                },
                _ => Action::Keep,
            };
            PlannedImage { image_id, action }
        })
        .collect();
    Ok(ScrubPlan { entries })
}

/// Inpainting backend selected by name: `constant`, `border-mean`,
/// `laplacian`, or `remote[=URL]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InpainterChoice {
    Constant,
    BorderMean,
    Laplacian,
    Remote(Option<String>),
}

/// Oracle detector: `replay=FILE` (a COCO results file) or `remote[=URL]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleChoice {
    Replay(PathBuf),
    Remote(Option<String>),
}

fn remote_url(s: &str) -> Option<Option<String>> {
    if s == "remote" {
        Some(None)
    } else {
        s.strip_prefix("remote=").map(|u| Some(u.to_string()))
    }
}

impl FromStr for InpainterChoice {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constant" => Ok(Self::Constant),
            "border-mean" => Ok(Self::BorderMean),
            "laplacian" => Ok(Self::Laplacian),
            _ => remote_url(s).map(Self::Remote).ok_or_else(|| {
                PipelineError::Config(format!("unknown inpainter {s:?} (constant, border-mean, laplacian, remote=URL)"))
            }),
        }
    }
}

impl FromStr for OracleChoice {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(path) = s.strip_prefix("replay=") {
            return Ok(Self::Replay(PathBuf::from(path)));
        }
        remote_url(s)
            .map(Self::Remote)
            .ok_or_else(|| PipelineError::Config(format!("unknown oracle {s:?} (replay=FILE, remote=URL)")))
    }
}

fn connect(url: &Option<String>) -> Result<RemoteBackend, PipelineError> {
    let endpoint = match url {
        Some(u) => BackendEndpoint::new(u.clone()),
        None => BackendEndpoint::from_env().ok_or_else(|| {
            PipelineError::Config(format!("no backend URL given and {} is unset", crate::backends::ENV_BACKEND_URL))
        })?,
    };
    let backend = RemoteBackend::new(endpoint);
    let health = backend.health()?;
    log::info!("backend {} healthy: {}", backend.endpoint().base_url, health.model_info);
    Ok(backend)
}

impl InpainterChoice {
    pub fn build(&self) -> Result<Box<dyn Inpainter>, PipelineError> {
        Ok(match self {
            Self::Constant => Box::new(ConstantFill),
            Self::BorderMean => Box::new(BorderMean),
            Self::Laplacian => Box::new(LaplacianFill::default()),
            Self::Remote(url) => Box::new(connect(url)?),
        })
    }
}

impl OracleChoice {
    pub fn build(&self) -> Result<Box<dyn Detector>, PipelineError> {
        Ok(match self {
            Self::Replay(path) => Box::new(ReplayDetector::from_file(path)?),
            Self::Remote(url) => Box::new(connect(url)?),
        })
    }
}
