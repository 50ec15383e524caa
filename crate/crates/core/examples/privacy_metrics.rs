//! Privacy efficiency, image efficiency and dataset reduction.

use std::collections::BTreeSet;

use roar::dataset::{parse_dataset, AnnotationRecord};
use roar::metrics::privacy::{ie, pe_fp, pe_sp, reduction_stats, PrivacyMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // (persons before scrubbing, persons the oracle still finds)
    let full = [(2, 0), (3, 1), (1, 0)];
    println!("full scrub       PE {:.2}%", pe_fp(&full)?);
    let left: Vec<u32> = full.iter().map(|(_, s)| *s).collect();
    println!("                 IE {:.2}%", ie(&left, PrivacyMode::Full)?);
    // Selective: one target per image, the rest should remain visible.
    let selective = [(2, 1), (1, 1), (3, 3)];
    println!("selective scrub  PE {:.2}%", pe_sp(&selective)?);

    let original = parse_dataset(br#"{
      "images": [{"id": 1, "file_name": "a", "width": 8, "height": 8},
                 {"id": 2, "file_name": "b", "width": 8, "height": 8}],
      "annotations": [
        {"id": 1, "image_id": 1, "category_id": 1, "bbox": [0, 0, 2, 2], "area": 4},
        {"id": 2, "image_id": 1, "category_id": 2, "bbox": [4, 4, 2, 2], "area": 4},
        {"id": 3, "image_id": 2, "category_id": 1, "bbox": [0, 0, 2, 2], "area": 4},
        {"id": 4, "image_id": 2, "category_id": 2, "bbox": [1, 1, 2, 2], "area": 4}],
      "categories": [{"id": 1, "name": "person"}, {"id": 2, "name": "chair"}]}"#)?;
    // Image 2 lost its chair to re-annotation and then had nothing left.
    let mut processed = original.clone();
    processed.images.retain(|i| i.id == 1);
    processed.annotations.retain(|a: &AnnotationRecord| a.id == 2);
    let (lost, reduced) = reduction_stats(&original, &processed, &BTreeSet::from([1]));
    println!("images lost      {} ({:.2}%)", lost.count, lost.percent);
    println!("annot. reduction {} ({:.2}%)", reduced.count, reduced.percent);
    Ok(())
}
