//! Annotation repair after scrubbing: objects hit by the mask survive only
//! if the oracle still detects them.

use std::collections::BTreeSet;

use roar::backends::Detection;
use roar::dataset::AnnotationRecord;
use roar::imaging::{bbox_mask, union, BBox};
use roar::reannotation::{update, ReannotationConfig};

fn ann(id: u64, category_id: u64, bbox: [f64; 4]) -> AnnotationRecord {
    AnnotationRecord { id, image_id: 1, category_id, bbox, area: bbox[2] * bbox[3], segmentation: None, iscrowd: 0 }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (w, h) = (64, 48);
    let annotations = [
        ann(1, 1, [10.0, 8.0, 12.0, 30.0]),  // person, scrubbed
        ann(2, 2, [18.0, 20.0, 14.0, 14.0]), // chair overlapping the person
        ann(3, 3, [16.0, 30.0, 10.0, 8.0]),  // dog overlapping the person
        ann(4, 2, [44.0, 10.0, 12.0, 12.0]), // chair far away
    ];
    let targets = BTreeSet::from([1]);
    let mask = union(&[bbox_mask(&BBox::from(annotations[0].bbox), w, h)])?;
    // The oracle still finds the chair on the scrubbed image but not the dog.
    let oracle = [Detection { bbox: BBox::new(18.5, 20.0, 13.0, 14.0), category_id: 2, score: 0.8 }];
    let refs: Vec<&AnnotationRecord> = annotations.iter().collect();
    let (kept, upd) = update(&refs, &targets, &mask, &oracle, &ReannotationConfig::default())?;
    println!("scrubbed targets   {:?}", upd.scrub_targets_removed);
    println!("untouched          {:?}", upd.retained_untouched);
    println!("verified by oracle {:?}", upd.verified);
    println!("removed            {:?}", upd.removed);
    println!("kept records       {:?}", kept.iter().map(|a| a.id).collect::<Vec<_>>());
    Ok(())
}
