//! End-to-end scrub of a small synthetic dataset with a replayed oracle,
//! followed by the privacy report.
//!
//! `cargo run --example scrub_pipeline -- [fp|sp|fp-drop|sp-drop]`

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roar::backends::wire::DetectionRecord;
use roar::backends::{LaplacianFill, ReplayDetector};
use roar::dataset::{parse_dataset, serialize_dataset, AnnotationRecord, CategoryRecord, DatasetDescriptor, ImageRecord};
use roar::imaging::ImageBuffer;
use roar::pipeline::{report, run_scrub, EvalInputs, ExecuteOptions, ScrubJob, ScrubMode, ScrubPolicy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mode: ScrubMode = std::env::args().nth(1).unwrap_or_else(|| "fp".into()).parse()?;
    let dir = tempfile::tempdir()?;
    std::fs::create_dir_all(dir.path().join("images"))?;
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let mut d = DatasetDescriptor {
        categories: vec![
            CategoryRecord { id: 1, name: "person".into(), supercategory: None },
            CategoryRecord { id: 2, name: "chair".into(), supercategory: None },
        ],
        ..Default::default()
    };
    let mut oracle = Vec::new();
    for id in 1..=12u64 {
        let img = ImageBuffer::from_fn(64, 48, 3, |x, y, c| ((x * 4 + y * 3 + c as u32 * 60 + id as u32 * 9) % 256) as u8);
        let file_name = format!("{id:03}.png");
        img.save_png(&dir.path().join("images").join(&file_name))?;
        d.images.push(ImageRecord { id, file_name, width: 64, height: 48 });
        for k in 0..r.random_range(1..=4) {
            let cat = if k % 2 == 0 { 1 } else { 2 };
            let bbox = [r.random_range(0..44) as f64, r.random_range(0..28) as f64, 16.0, 18.0];
            let ann_id = d.annotations.len() as u64 + 1;
            d.annotations.push(AnnotationRecord { id: ann_id, image_id: id, category_id: cat, bbox, area: 288.0, segmentation: None, iscrowd: 0 });
            // The replayed oracle sees every chair and misses one person in ten.
            if cat == 2 || r.random_bool(0.1) {
                oracle.push(DetectionRecord { image_id: id, category_id: cat, bbox, score: 0.9 });
            }
        }
    }
    std::fs::write(dir.path().join("annotations.json"), serialize_dataset(&d)?)?;

    let mut policy = ScrubPolicy::new(mode, BTreeSet::from([1]));
    policy.dilate_px = 2;
    let job = ScrubJob {
        annotations: dir.path().join("annotations.json"),
        images: dir.path().join("images"),
        out: dir.path().join("out"),
        policy,
        options: ExecuteOptions::default(),
    };
    let manifest = run_scrub(&job, &LaplacianFill::default(), &ReplayDetector::from_records(oracle))?;
    let s = &manifest.summary;
    println!(
        "{} images in, {} out: {} scrubbed, {} kept, {} dropped by policy, {} emptied",
        s.images_in, s.images_out, s.scrubbed, s.kept, s.dropped_by_policy, s.dropped_empty
    );
    let processed = parse_dataset(&std::fs::read(dir.path().join("out/annotations.json"))?)?;
    print!("{}", report(&d, &processed, &manifest, &EvalInputs::default())?.table());
    Ok(())
}
