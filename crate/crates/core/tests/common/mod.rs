//! Shared oracles and fixture builders for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roar::backends::Detection;
use roar::dataset::{AnnotationRecord, CategoryRecord, DatasetDescriptor, ImageRecord, Segmentation};
use roar::imaging::{BBox, BinaryMask, ImageBuffer};
use roar::reannotation::ReannotationConfig;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Prints straight to stdout so the line shows up even under the test
/// harness's output capture.
pub fn report_line(passed: bool, name: &str, detail: &str) {
    use std::io::Write;
    let line = format!("{} {name}: {detail}\n", if passed { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

// ---------------------------------------------------------------------------
// Re-annotation oracle

pub struct ReannInstance {
    pub width: u32,
    pub height: u32,
    pub annotations: Vec<AnnotationRecord>,
    pub targets: BTreeSet<u64>,
    pub mask: BinaryMask,
    pub detections: Vec<Detection>,
    pub cfg: ReannotationConfig,
}

fn half_steps(r: &mut ChaCha8Rng, lo: u32, hi: u32) -> f64 {
    r.random_range(lo * 2..hi * 2) as f64 / 2.0
}

pub fn random_reann_instance(r: &mut ChaCha8Rng) -> ReannInstance {
    let (width, height) = (24u32, 24u32);
    let n = r.random_range(1..=10);
    let annotations: Vec<AnnotationRecord> = (0..n)
        .map(|i| {
            let bbox = [half_steps(r, 0, 20), half_steps(r, 0, 20), half_steps(r, 1, 12), half_steps(r, 1, 12)];
            AnnotationRecord {
                id: 100 + i as u64,
                image_id: 1,
                category_id: r.random_range(1..=3),
                bbox,
                area: bbox[2] * bbox[3],
                segmentation: None,
                iscrowd: u8::from(r.random_bool(0.1)),
            }
        })
        .collect();
    let targets: BTreeSet<u64> = annotations.iter().filter(|_| r.random_bool(0.3)).map(|a| a.id).collect();
    let mut mask = BinaryMask::new(width, height);
    let paint = |b: [f64; 4], mask: &mut BinaryMask| {
        for y in 0..height {
            for x in 0..width {
                if centre_in(&b, x, y) {
                    mask.set(x, y, true);
                }
            }
        }
    };
    for a in annotations.iter().filter(|a| targets.contains(&a.id)) {
        paint(a.bbox, &mut mask);
    }
    if r.random_bool(0.5) {
        let extra = [half_steps(r, 0, 20), half_steps(r, 0, 20), half_steps(r, 1, 10), half_steps(r, 1, 10)];
        paint(extra, &mut mask);
    }
    let m = r.random_range(0..=10);
    let detections = (0..m)
        .map(|_| {
            let (bbox, cat) = if r.random_bool(0.6) {
                let a = &annotations[r.random_range(0..annotations.len())];
                let j = |r: &mut ChaCha8Rng| r.random_range(-4..=4) as f64 / 2.0;
                let b = [a.bbox[0] + j(r), a.bbox[1] + j(r), (a.bbox[2] + j(r)).max(0.5), (a.bbox[3] + j(r)).max(0.5)];
                let cat = if r.random_bool(0.8) { a.category_id } else { r.random_range(1..=3) };
                (b, cat)
            } else {
                ([half_steps(r, 0, 20), half_steps(r, 0, 20), half_steps(r, 1, 12), half_steps(r, 1, 12)], r.random_range(1..=3))
            };
            Detection { bbox: BBox::from(bbox), category_id: cat, score: 0.9 }
        })
        .collect();
    let cfg = ReannotationConfig {
        zeta: if r.random_bool(0.5) { 0.0 } else { 0.1 },
        tau: if r.random_bool(0.5) { 0.3 } else { 0.5 },
        require_same_category: r.random_bool(0.8),
    };
    ReannInstance { width, height, annotations, targets, mask, detections, cfg }
}

fn centre_in(b: &[f64; 4], x: u32, y: u32) -> bool {
    let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
    cx >= b[0] && cx < b[0] + b[2] && cy >= b[1] && cy < b[1] + b[3]
}

fn pixel_iou(b: &[f64; 4], m: &BinaryMask) -> f64 {
    let (mut inter, mut uni) = (0usize, 0usize);
    for y in 0..m.height() {
        for x in 0..m.width() {
            let (p, q) = (centre_in(b, x, y), m.get(x, y));
            inter += usize::from(p && q);
            uni += usize::from(p || q);
        }
    }
    if uni == 0 {
        0.0
    } else {
        inter as f64 / uni as f64
    }
}

fn box_iou(a: &[f64; 4], b: &BBox) -> f64 {
    let w = (a[0] + a[2]).min(b.x + b.w) - a[0].max(b.x);
    let h = (a[1] + a[3]).min(b.y + b.h) - a[1].max(b.y);
    let inter = w.max(0.0) * h.max(0.0);
    let uni = a[2] * a[3] + b.w * b.h - inter;
    if uni <= 0.0 {
        0.0
    } else {
        inter / uni
    }
}

/// Expected outcome `(kept, verified, removed)`, found by trying every subset
/// of the non-target annotations and keeping the unique one consistent with
/// the retention rule.
pub fn brute_force_reannotation(inst: &ReannInstance) -> (BTreeSet<u64>, BTreeSet<u64>, BTreeSet<u64>) {
    let others: Vec<&AnnotationRecord> = inst.annotations.iter().filter(|a| !inst.targets.contains(&a.id)).collect();
    let collided = |a: &AnnotationRecord| !a.is_crowd() && pixel_iou(&a.bbox, &inst.mask) > inst.cfg.zeta;
    let supported = |a: &AnnotationRecord| {
        inst.detections.iter().any(|d| {
            (!inst.cfg.require_same_category || d.category_id == a.category_id) && box_iou(&a.bbox, &d.bbox) > inst.cfg.tau
        })
    };
    let mut solutions = Vec::new();
    for subset in 0u32..(1 << others.len()) {
        let consistent = others.iter().enumerate().all(|(i, a)| {
            let kept = subset & (1 << i) != 0;
            kept == (!collided(a) || supported(a))
        });
        if consistent {
            solutions.push(subset);
        }
    }
    assert_eq!(solutions.len(), 1, "retention rule must pick exactly one subset");
    let s = solutions[0];
    let mut kept = BTreeSet::new();
    let mut verified = BTreeSet::new();
    let mut removed = BTreeSet::new();
    for (i, a) in others.iter().enumerate() {
        if s & (1 << i) != 0 {
            kept.insert(a.id);
            if collided(a) {
                verified.insert(a.id);
            }
        } else {
            removed.insert(a.id);
        }
    }
    (kept, verified, removed)
}

// ---------------------------------------------------------------------------
// Scrub pipeline fixture

pub const PERSON: u64 = 1;
pub const CHAIR: u64 = 2;
pub const DOG: u64 = 3;
/// Declared but never annotated.
pub const BICYCLE: u64 = 4;

fn rect_polygon(x: f64, y: f64, w: f64, h: f64) -> Segmentation {
    Segmentation::Polygons(vec![vec![x, y, x + w, y, x + w, y + h, x, y + h]])
}

/// Writes `n` textured images plus a COCO file under `dir` and returns the
/// dataset. Images mix persons (some with polygons, some box-only), chairs
/// and dogs; a few hold persons only.
pub fn write_scene_dataset(dir: &Path, n: u64, seed: u64) -> DatasetDescriptor {
    let (w, h) = (48u32, 40u32);
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir).unwrap();
    let mut r = rng(seed);
    let mut d = DatasetDescriptor {
        categories: vec![
            CategoryRecord { id: PERSON, name: "person".into(), supercategory: Some("person".into()) },
            CategoryRecord { id: CHAIR, name: "chair".into(), supercategory: Some("furniture".into()) },
            CategoryRecord { id: DOG, name: "dog".into(), supercategory: Some("animal".into()) },
            CategoryRecord { id: BICYCLE, name: "bicycle".into(), supercategory: Some("vehicle".into()) },
        ],
        ..Default::default()
    };
    let mut next = 1;
    for id in 1..=n {
        let phase = r.random_range(0..255u32);
        let img = ImageBuffer::from_fn(w, h, 3, |x, y, c| ((x * 5 + y * 3 + c as u32 * 40 + phase) % 256) as u8);
        img.save_png(&images_dir.join(format!("img_{id:03}.png"))).unwrap();
        d.images.push(ImageRecord { id, file_name: format!("img_{id:03}.png"), width: w, height: h });
        let persons = if id % 4 == 0 { 0 } else { r.random_range(1..=3) };
        let others = if id % 5 == 1 { 0 } else { r.random_range(1..=3) };
        for k in 0..persons + others {
            let (bw, bh) = (r.random_range(6..16) as f64, r.random_range(6..16) as f64);
            let (x, y) = (r.random_range(0..(w - bw as u32)) as f64, r.random_range(0..(h - bh as u32)) as f64);
            let cat = if k < persons { PERSON } else if r.random_bool(0.5) { CHAIR } else { DOG };
            let segmentation = if r.random_bool(0.75) { Some(rect_polygon(x, y, bw, bh)) } else { None };
            d.annotations.push(AnnotationRecord {
                id: next,
                image_id: id,
                category_id: cat,
                bbox: [x, y, bw, bh],
                area: bw * bh,
                segmentation,
                iscrowd: 0,
            });
            next += 1;
        }
    }
    std::fs::write(dir.join("annotations.json"), roar::dataset::serialize_dataset(&d).unwrap()).unwrap();
    d
}

/// Oracle replay file that sees every non-sensitive ground-truth object and
/// `leak` of the persons.
pub fn write_replay(path: &Path, d: &DatasetDescriptor, leak: f64, seed: u64) {
    let mut r = rng(seed);
    let records: Vec<serde_json::Value> = d
        .annotations
        .iter()
        .filter(|a| a.category_id != PERSON || r.random_bool(leak))
        .map(|a| {
            serde_json::json!({
                "image_id": a.image_id,
                "category_id": a.category_id,
                "bbox": [a.bbox[0] + 0.5, a.bbox[1], a.bbox[2], a.bbox[3]],
                "score": 0.9
            })
        })
        .collect();
    std::fs::write(path, serde_json::to_vec_pretty(&records).unwrap()).unwrap();
}

// ---------------------------------------------------------------------------
// Multi-view scene fixture

/// Views of a smooth scene with a drifting square "object", plus masks.
pub fn synthetic_views(n: usize, width: u32, height: u32) -> Vec<(ImageBuffer, BinaryMask)> {
    (0..n)
        .map(|i| {
            let shift = (i as u32 * 7) % 40;
            let (ox, oy, size) = (width / 3 + shift, height / 3 + shift / 2, 60 + (i as u32 % 5) * 6);
            let inside = |x: u32, y: u32| x >= ox && x < ox + size && y >= oy && y < oy + size;
            let img = ImageBuffer::from_fn(width, height, 3, |x, y, c| {
                if inside(x, y) {
                    [230u8, 40, 40][c as usize]
                } else {
                    ((x / 2 + y / 3 + c as u32 * 30 + shift) % 200) as u8 + 20
                }
            });
            (img, BinaryMask::from_fn(width, height, inside))
        })
        .collect()
}
