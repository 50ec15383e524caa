use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{image_seed, Action, PipelineError, ScrubPlan, ScrubPolicy};
use crate::backends::{self, Detection, Detector, InpaintRequest, Inpainter, DEFAULT_PROMPT, DEFAULT_SCORE_THRESHOLD};
use crate::dataset::{parse_dataset, serialize_dataset, AnnotationRecord, DatasetDescriptor, ImageRecord};
use crate::imaging::{
    bbox_mask, composite, dilate, rasterize_annotation, union, BBox, BinaryMask, ImageBuffer, ImagingError,
};
use crate::metrics::privacy::PersonCounts;
use crate::reannotation::{self, AnnotationUpdate, ReannotationConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecuteOptions {
    /// Worker threads; 0 lets the pool pick.
    pub workers: usize,
    /// Cap on concurrent backend calls; defaults to the worker count.
    pub max_in_flight: Option<usize>,
    pub score_threshold: f64,
    pub prompt: String,
    pub reannotation: ReannotationConfig,
}

impl Default for ExecuteOptions {
    fn default() -> Self {
        Self {
            workers: 0,
            max_in_flight: None,
            score_threshold: DEFAULT_SCORE_THRESHOLD,
            prompt: DEFAULT_PROMPT.into(),
            reannotation: ReannotationConfig::default(),
        }
    }
}

impl ExecuteOptions {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.reannotation.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(PipelineError::Config(format!("score threshold {} outside [0, 1]", self.score_threshold)));
        }
        if self.max_in_flight == Some(0) {
            return Err(PipelineError::Config("max in-flight requests must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum ImageStatus {
    Ok,
    Dropped { cause: String },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRunRecord {
    pub image_id: u64,
    pub action: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub targets: Vec<u64>,
    #[serde(flatten)]
    pub status: ImageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_pixels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inpaint_request_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation_update: Option<AnnotationUpdate>,
    /// Sensitive-object counts before and after, for privacy scoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub person_counts: Option<PersonCounts>,
}

impl ImageRunRecord {
    fn new(image_id: u64, action: &Action) -> Self {
        Self {
            image_id,
            action: action.name().into(),
            targets: match action {
                Action::Scrub { targets } => targets.clone(),
                _ => Vec::new(),
            },
            status: ImageStatus::Ok,
            output_file: None,
            seed: None,
            mask_pixels: None,
            inpaint_request_id: None,
            annotation_update: None,
            person_counts: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub annotations: String,
    pub images: String,
    pub policy: ScrubPolicy,
    pub reannotation: ReannotationConfig,
    pub inpainter: String,
    pub oracle: String,
    pub score_threshold: f64,
    pub prompt: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub images_in: usize,
    pub images_out: usize,
    pub scrubbed: usize,
    pub kept: usize,
    pub dropped_by_policy: usize,
    pub dropped_empty: usize,
    pub failed: usize,
    pub annotations_in: usize,
    pub annotations_out: usize,
}

/// Everything that legitimately differs between otherwise identical runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Runtime {
    pub workers: usize,
    pub max_in_flight: usize,
    pub wall_seconds: f64,
    pub image_seconds: BTreeMap<u64, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub summary: RunSummary,
    pub records: Vec<ImageRunRecord>,
    pub runtime: Runtime,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| PipelineError::Manifest(e.to_string()))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, PipelineError> {
        let mut out = serde_json::to_vec_pretty(self).map_err(|e| PipelineError::Manifest(e.to_string()))?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn failed(&self) -> usize {
        self.records.iter().filter(|r| matches!(r.status, ImageStatus::Failed { .. })).count()
    }
}

/// Counting semaphore bounding concurrent backend calls.
pub(crate) struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

pub(crate) struct GatePass<'a>(&'a Gate);

impl Gate {
    pub(crate) fn new(cap: usize) -> Self {
        Self { free: Mutex::new(cap.max(1)), cv: Condvar::new() }
    }

    fn enter(&self) -> GatePass<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        GatePass(self)
    }
}

impl Drop for GatePass<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone)]
pub struct ScrubbedImage {
    pub image: ImageBuffer,
    pub mask: BinaryMask,
    pub annotations: Vec<AnnotationRecord>,
    pub update: AnnotationUpdate,
    /// `None` when the mask came out empty and no backend call was made.
    pub request_id: Option<String>,
    pub oracle: Vec<Detection>,
}

/// Union of the targets' masks, grown by `dilate_px`. Targets without a usable
/// segmentation contribute their box instead.
fn scrub_mask(
    annotations: &[&AnnotationRecord],
    targets: &BTreeSet<u64>,
    width: u32,
    height: u32,
    dilate_px: u32,
) -> Result<BinaryMask, ImagingError> {
    let mut parts = vec![BinaryMask::new(width, height)];
    for a in annotations.iter().filter(|a| targets.contains(&a.id)) {
        let m = match rasterize_annotation(a, width, height) {
            Ok(m) if !m.is_empty() => m,
            Ok(_) | Err(ImagingError::MissingSegmentation(_)) => bbox_mask(&BBox::from(a.bbox), width, height),
            Err(e) => return Err(e),
        };
        parts.push(m);
    }
    Ok(dilate(&union(&parts)?, dilate_px))
}

/// Scrubs one decoded image: mask, inpaint, composite, run the oracle and
/// repair the annotations.
#[allow(clippy::too_many_arguments)]
pub fn scrub_image(
    image_id: u64,
    image: &ImageBuffer,
    annotations: &[&AnnotationRecord],
    targets: &BTreeSet<u64>,
    policy: &ScrubPolicy,
    inpainter: &dyn Inpainter,
    oracle: &dyn Detector,
    opts: &ExecuteOptions,
) -> Result<ScrubbedImage, PipelineError> {
    scrub_image_gated(image_id, image, annotations, targets, policy, inpainter, oracle, opts, &Gate::new(1))
}

#[allow(clippy::too_many_arguments)]
fn scrub_image_gated(
    image_id: u64,
    image: &ImageBuffer,
    annotations: &[&AnnotationRecord],
    targets: &BTreeSet<u64>,
    policy: &ScrubPolicy,
    inpainter: &dyn Inpainter,
    oracle: &dyn Detector,
    opts: &ExecuteOptions,
    gate: &Gate,
) -> Result<ScrubbedImage, PipelineError> {
    let mask = scrub_mask(annotations, targets, image.width(), image.height(), policy.dilate_px)?;
    let (scrubbed, request_id) = if mask.is_empty() {
        log::warn!("image {image_id}: scrub mask is empty; image left unchanged");
        (image.clone(), None)
    } else {
        let req = InpaintRequest::new(image.clone(), mask.clone(), image_seed(policy.global_seed, image_id))?
            .with_prompt(opts.prompt.clone());
        let raw = {
            let _pass = gate.enter();
            backends::inpaint(inpainter, &req)?
        };
        (composite(image, &mask, &raw)?, Some(req.request_id()))
    };
    let found = {
        let _pass = gate.enter();
        backends::detect(oracle, image_id, &scrubbed, opts.score_threshold)?
    };
    let (kept, update) = reannotation::update(annotations, targets, &mask, &found, &opts.reannotation)
        .map_err(|e| PipelineError::Image { image_id, message: e.to_string() })?;
    Ok(ScrubbedImage { image: scrubbed, mask, annotations: kept, update, request_id, oracle: found })
}

/// Output file name: scrubbed images are always written as PNG so the
/// untouched pixels survive bit for bit.
fn png_name(file_name: &str) -> String {
    Path::new(file_name).with_extension("png").to_string_lossy().replace('\\', "/")
}

struct Outcome {
    record: ImageRunRecord,
    kept: Option<(ImageRecord, Vec<u64>)>,
    seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Execution {
    pub dataset: DatasetDescriptor,
    pub records: Vec<ImageRunRecord>,
    pub runtime: Runtime,
}

impl Execution {
    pub fn failed(&self) -> usize {
        self.records.iter().filter(|r| matches!(r.status, ImageStatus::Failed { .. })).count()
    }
}

fn gt_sensitive(anns: &[&AnnotationRecord], policy: &ScrubPolicy) -> u32 {
    anns.iter().filter(|a| policy.sensitive_categories.contains(&a.category_id) && !a.is_crowd()).count() as u32
}

/// Output image record plus the ids of its surviving annotations.
type Emitted = (ImageRecord, Vec<u64>);

#[allow(clippy::too_many_arguments)]
fn process_one(
    record: &ImageRecord,
    action: &Action,
    anns: &[&AnnotationRecord],
    policy: &ScrubPolicy,
    image_root: &Path,
    out_images: &Path,
    inpainter: &dyn Inpainter,
    oracle: &dyn Detector,
    opts: &ExecuteOptions,
    gate: &Gate,
) -> Result<(ImageRunRecord, Option<Emitted>), PipelineError> {
    let id = record.id;
    let mut rec = ImageRunRecord::new(id, action);
    let src = image_root.join(&record.file_name);
    match action {
        Action::Keep => {
            let dst = out_images.join(&record.file_name);
            if let Some(parent) = dst.parent() {
                std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
            }
            std::fs::copy(&src, &dst).map_err(|e| PipelineError::io(&src, e))?;
            rec.output_file = Some(record.file_name.clone());
            Ok((rec, Some((record.clone(), anns.iter().map(|a| a.id).collect()))))
        }
        Action::Drop => {
            let gt = gt_sensitive(anns, policy);
            rec.person_counts = Some(PersonCounts { image_id: id, gt_persons: gt, scrubbed_persons: 0 });
            rec.status = ImageStatus::Dropped { cause: "policy".into() };
            Ok((rec, None))
        }
        Action::Scrub { targets } => {
            let image = ImageBuffer::load(&src)?;
            if image.width() != record.width || image.height() != record.height {
                return Err(PipelineError::Image {
                    image_id: id,
                    message: format!(
                        "file is {}x{} but the record says {}x{}",
                        image.width(),
                        image.height(),
                        record.width,
                        record.height
                    ),
                });
            }
            let targets: BTreeSet<u64> = targets.iter().copied().collect();
            let out = scrub_image_gated(id, &image, anns, &targets, policy, inpainter, oracle, opts, gate)?;
            rec.seed = Some(image_seed(policy.global_seed, id));
            rec.mask_pixels = Some(out.mask.count());
            rec.inpaint_request_id = out.request_id.clone();
            let remaining = out.oracle.iter().filter(|d| policy.sensitive_categories.contains(&d.category_id)).count();
            rec.person_counts = Some(PersonCounts {
                image_id: id,
                gt_persons: gt_sensitive(anns, policy),
                scrubbed_persons: remaining as u32,
            });
            rec.annotation_update = Some(out.update.clone());
            if out.annotations.is_empty() {
                rec.status = ImageStatus::Dropped { cause: "no annotations left".into() };
                return Ok((rec, None));
            }
            let name = png_name(&record.file_name);
            let dst = out_images.join(&name);
            if let Some(parent) = dst.parent() {
                std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
            }
            out.image.save_png(&dst)?;
            rec.output_file = Some(name.clone());
            let kept_record = ImageRecord { file_name: name, ..record.clone() };
            Ok((rec, Some((kept_record, out.annotations.iter().map(|a| a.id).collect()))))
        }
    }
}

/// Carries out `plan`, writing output images under `out_images`. Per-image
/// failures are recorded and the image left out; the run continues.
#[allow(clippy::too_many_arguments)]
pub fn execute(
    plan: &ScrubPlan,
    dataset: &DatasetDescriptor,
    policy: &ScrubPolicy,
    image_root: &Path,
    out_images: &Path,
    inpainter: &dyn Inpainter,
    oracle: &dyn Detector,
    opts: &ExecuteOptions,
) -> Result<Execution, PipelineError> {
    opts.validate()?;
    let by_image = dataset.annotations_by_image();
    let records: HashMap<u64, &ImageRecord> = dataset.images.iter().map(|i| (i.id, i)).collect();
    if plan.entries.len() != records.len() || plan.entries.iter().any(|e| !records.contains_key(&e.image_id)) {
        return Err(PipelineError::Config("plan does not cover exactly the dataset's images".into()));
    }
    let mut names = HashSet::new();
    for e in &plan.entries {
        let file = &records[&e.image_id].file_name;
        let name = match e.action {
            Action::Scrub { .. } => png_name(file),
            Action::Keep => file.clone(),
            Action::Drop => continue,
        };
        if !names.insert(name.clone()) {
            return Err(PipelineError::Config(format!("two output images would be named {name}")));
        }
    }
    std::fs::create_dir_all(out_images).map_err(|e| PipelineError::io(out_images, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let workers = pool.current_num_threads();
    let cap = opts.max_in_flight.unwrap_or(workers);
    let gate = Gate::new(cap);
    let empty = Vec::new();
    let started = Instant::now();
    let outcomes: Vec<Outcome> = pool.install(|| {
        plan.entries
            .par_iter()
            .map(|e| {
                let t = Instant::now();
                let record = records[&e.image_id];
                let anns = by_image.get(&e.image_id).unwrap_or(&empty);
                let (record, kept) = match process_one(
                    record, &e.action, anns, policy, image_root, out_images, inpainter, oracle, opts, &gate,
                ) {
                    Ok(v) => v,
                    Err(err) => {
                        log::error!("image {}: {err}", e.image_id);
                        let mut rec = ImageRunRecord::new(e.image_id, &e.action);
                        rec.status = ImageStatus::Failed { error: err.to_string() };
                        (rec, None)
                    }
                };
                Outcome { record, kept, seconds: t.elapsed().as_secs_f64() }
            })
            .collect()
    });

    let mut kept_images: HashMap<u64, ImageRecord> = HashMap::new();
    let mut kept_anns: HashSet<u64> = HashSet::new();
    let mut runtime = Runtime { workers, max_in_flight: cap, ..Default::default() };
    let mut out_records = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        runtime.image_seconds.insert(o.record.image_id, o.seconds);
        if let Some((img, ids)) = o.kept {
            kept_anns.extend(ids);
            kept_images.insert(img.id, img);
        }
        out_records.push(o.record);
    }
    runtime.wall_seconds = started.elapsed().as_secs_f64();

    let processed = DatasetDescriptor {
        info: dataset.info.clone(),
        licenses: dataset.licenses.clone(),
        images: dataset.images.iter().filter_map(|i| kept_images.get(&i.id).cloned()).collect(),
        annotations: dataset.annotations.iter().filter(|a| kept_anns.contains(&a.id)).cloned().collect(),
        categories: dataset.categories.clone(),
    };
    processed.validate()?;
    Ok(Execution { dataset: processed, records: out_records, runtime })
}

/// Inputs and settings for a complete `scrub` run.
#[derive(Debug, Clone)]
pub struct ScrubJob {
    pub annotations: PathBuf,
    pub images: PathBuf,
    pub out: PathBuf,
    pub policy: ScrubPolicy,
    pub options: ExecuteOptions,
}

/// Plans and executes a job, then writes `annotations.json`, `images/` and
/// `manifest.json` under the output directory. When the plan changes
/// nothing, the annotation file is copied verbatim.
pub fn run_scrub(job: &ScrubJob, inpainter: &dyn Inpainter, oracle: &dyn Detector) -> Result<RunManifest, PipelineError> {
    let bytes = std::fs::read(&job.annotations).map_err(|e| PipelineError::io(&job.annotations, e))?;
    let dataset = parse_dataset(&bytes)?;
    let plan = super::plan(&dataset, &job.policy)?;
    log::info!(
        "plan: {} scrub, {} drop, {} keep",
        plan.count("scrub"),
        plan.count("drop"),
        plan.count("keep")
    );
    std::fs::create_dir_all(&job.out).map_err(|e| PipelineError::io(&job.out, e))?;
    let exec = execute(
        &plan,
        &dataset,
        &job.policy,
        &job.images,
        &job.out.join("images"),
        inpainter,
        oracle,
        &job.options,
    )?;

    let ann_out = job.out.join("annotations.json");
    let out_bytes = if plan.is_noop() && exec.failed() == 0 { bytes } else { serialize_dataset(&exec.dataset)? };
    std::fs::write(&ann_out, out_bytes).map_err(|e| PipelineError::io(&ann_out, e))?;

    let count = |f: &dyn Fn(&ImageRunRecord) -> bool| exec.records.iter().filter(|r| f(r)).count();
    let summary = RunSummary {
        images_in: dataset.images.len(),
        images_out: exec.dataset.images.len(),
        scrubbed: count(&|r| r.action == "scrub" && r.status == ImageStatus::Ok),
        kept: count(&|r| r.action == "keep" && r.status == ImageStatus::Ok),
        dropped_by_policy: count(&|r| r.action == "drop"),
        dropped_empty: count(&|r| r.action == "scrub" && matches!(r.status, ImageStatus::Dropped { .. })),
        failed: exec.failed(),
        annotations_in: dataset.annotations.len(),
        annotations_out: exec.dataset.annotations.len(),
    };
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: RunConfig {
            annotations: job.annotations.display().to_string(),
            images: job.images.display().to_string(),
            policy: job.policy.clone(),
            reannotation: job.options.reannotation,
            inpainter: inpainter.name(),
            oracle: oracle.name(),
            score_threshold: job.options.score_threshold,
            prompt: job.options.prompt.clone(),
        },
        summary,
        records: exec.records,
        runtime: exec.runtime,
    };
    let path = job.out.join("manifest.json");
    std::fs::write(&path, manifest.to_bytes()?).map_err(|e| PipelineError::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{ConstantFill, ReplayDetector};
    use crate::dataset::{CategoryRecord, Segmentation};
    use crate::pipeline::{plan, ScrubMode};

    fn ann(id: u64, cat: u64, bbox: [f64; 4], seg: Option<Segmentation>) -> AnnotationRecord {
        AnnotationRecord { id, image_id: 1, category_id: cat, bbox, area: bbox[2] * bbox[3], segmentation: seg, iscrowd: 0 }
    }

    #[test]
    fn mask_falls_back_to_box_and_dilates_after_union() {
        let poly = ann(1, 1, [2.0, 2.0, 4.0, 4.0], Some(Segmentation::Polygons(vec![vec![2.0, 2.0, 6.0, 2.0, 6.0, 6.0, 2.0, 6.0]])));
        let boxed = ann(2, 1, [10.0, 10.0, 3.0, 3.0], None);
        let targets = BTreeSet::from([1, 2]);
        let m = scrub_mask(&[&poly, &boxed], &targets, 20, 20, 0).unwrap();
        assert_eq!(m.count(), 16 + 9);
        let grown = scrub_mask(&[&poly, &boxed], &targets, 20, 20, 2).unwrap();
        let parts = union(&[
            rasterize_annotation(&poly, 20, 20).unwrap(),
            bbox_mask(&BBox::from(boxed.bbox), 20, 20),
        ])
        .unwrap();
        assert_eq!(grown, dilate(&parts, 2));
        assert!(scrub_mask(&[&poly], &BTreeSet::new(), 20, 20, 3).unwrap().is_empty());
    }

    #[test]
    fn single_image_person_removed_chair_kept() {
        let person = ann(1, 1, [2.0, 2.0, 6.0, 6.0], None);
        let chair = ann(2, 2, [20.0, 20.0, 6.0, 6.0], None);
        let img = ImageBuffer::from_fn(32, 32, 3, |x, y, c| (x * 7 + y * 3 + c as u32) as u8);
        let policy = ScrubPolicy::new(ScrubMode::Fp, BTreeSet::from([1]));
        let out = scrub_image(
            1,
            &img,
            &[&person, &chair],
            &BTreeSet::from([1]),
            &policy,
            &ConstantFill,
            &ReplayDetector::default(),
            &ExecuteOptions::default(),
        )
        .unwrap();
        assert_eq!(out.annotations, vec![chair.clone()]);
        assert_eq!(out.update.scrub_targets_removed, vec![1]);
        assert_eq!(out.update.retained_untouched, vec![2]);
        for y in 0..32 {
            for x in 0..32 {
                let inside = (2..8).contains(&x) && (2..8).contains(&y);
                let want: &[u8] = if inside { &[127, 127, 127] } else { img.pixel(x, y) };
                assert_eq!(out.image.pixel(x, y), want);
            }
        }
    }

    #[test]
    fn gate_bounds_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let gate = Gate::new(2);
        let live = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        (0..64).into_par_iter().for_each(|_| {
            let _p = gate.enter();
            let now = live.fetch_add(1, Ordering::SeqCst) + 1;
            peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(std::time::Duration::from_micros(200));
            live.fetch_sub(1, Ordering::SeqCst);
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn execute_writes_and_drops() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("in");
        std::fs::create_dir_all(&root).unwrap();
        let mut d = DatasetDescriptor {
            categories: vec![
                CategoryRecord { id: 1, name: "person".into(), supercategory: None },
                CategoryRecord { id: 2, name: "chair".into(), supercategory: None },
            ],
            ..Default::default()
        };
        for id in 1..=3u64 {
            d.images.push(ImageRecord { id, file_name: format!("{id}.png"), width: 16, height: 16 });
            ImageBuffer::filled(16, 16, 3, 40 + id as u8).save_png(&root.join(format!("{id}.png"))).unwrap();
        }
        let mut a = |id, image_id, cat| {
            let mut r = ann(id, cat, [1.0, 1.0, 4.0, 4.0], None);
            r.image_id = image_id;
            d.annotations.push(r);
        };
        a(1, 1, 1); // person only: becomes empty after scrubbing
        a(2, 2, 1);
        a(3, 2, 2); // chair collides with the person mask, oracle silent
        a(4, 3, 2);
        let policy = ScrubPolicy::new(ScrubMode::Fp, BTreeSet::from([1]));
        let p = plan(&d, &policy).unwrap();
        let out = dir.path().join("out");
        let exec = execute(&p, &d, &policy, &root, &out, &ConstantFill, &ReplayDetector::default(), &ExecuteOptions::default())
            .unwrap();
        assert_eq!(exec.dataset.images.iter().map(|i| i.id).collect::<Vec<_>>(), vec![3]);
        assert_eq!(exec.records[0].status, ImageStatus::Dropped { cause: "no annotations left".into() });
        assert_eq!(exec.records[1].annotation_update.as_ref().unwrap().removed, vec![3]);
        assert!(out.join("3.png").exists());
        assert!(!out.join("1.png").exists());
        let counts = exec.records[1].person_counts.unwrap();
        assert_eq!((counts.gt_persons, counts.scrubbed_persons), (1, 0));
    }

    #[test]
    fn missing_image_fails_only_that_image() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = crate::pipeline::tests::people(2, 1);
        d.annotations.push(AnnotationRecord { id: 99, image_id: 2, category_id: 2, bbox: [10.0, 10.0, 3.0, 3.0], ..d.annotations[0].clone() });
        ImageBuffer::filled(16, 16, 3, 9).save_png(&dir.path().join("2.png")).unwrap();
        let policy = ScrubPolicy::new(ScrubMode::Fp, BTreeSet::from([1]));
        let p = plan(&d, &policy).unwrap();
        let exec = execute(
            &p,
            &d,
            &policy,
            dir.path(),
            &dir.path().join("out"),
            &ConstantFill,
            &ReplayDetector::default(),
            &ExecuteOptions { workers: 2, ..Default::default() },
        )
        .unwrap();
        assert_eq!(exec.failed(), 1);
        assert!(matches!(exec.records[0].status, ImageStatus::Failed { .. }));
        assert_eq!(exec.dataset.images.len(), 1);
    }
}
