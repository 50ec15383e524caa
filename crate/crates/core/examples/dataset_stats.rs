//! Sensitive-object statistics for a COCO file.
//!
//! `cargo run --example dataset_stats -- annotations.json person`
//! Without arguments a small built-in dataset is used.

use roar::dataset::{compute_stats, parse_dataset, resolve_categories};

const BUILTIN: &str = r#"{
  "images": [
    {"id": 1, "file_name": "a.jpg", "width": 64, "height": 48},
    {"id": 2, "file_name": "b.jpg", "width": 64, "height": 48},
    {"id": 3, "file_name": "c.jpg", "width": 64, "height": 48},
    {"id": 4, "file_name": "d.jpg", "width": 64, "height": 48}
  ],
  "annotations": [
    {"id": 1, "image_id": 1, "category_id": 1, "bbox": [2, 2, 10, 20], "area": 200, "iscrowd": 0},
    {"id": 2, "image_id": 1, "category_id": 1, "bbox": [30, 4, 8, 18], "area": 144, "iscrowd": 0},
    {"id": 3, "image_id": 1, "category_id": 2, "bbox": [12, 30, 10, 10], "area": 100, "iscrowd": 0},
    {"id": 4, "image_id": 2, "category_id": 1, "bbox": [5, 5, 9, 22], "area": 198, "iscrowd": 0},
    {"id": 5, "image_id": 3, "category_id": 2, "bbox": [40, 20, 12, 12], "area": 144, "iscrowd": 0}
  ],
  "categories": [{"id": 1, "name": "person"}, {"id": 2, "name": "chair"}]
}"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let bytes = match args.first() {
        Some(path) => std::fs::read(path)?,
        None => BUILTIN.as_bytes().to_vec(),
    };
    let names = if args.len() > 1 { args[1..].to_vec() } else { vec!["person".to_string()] };
    let d = parse_dataset(&bytes)?;
    let sensitive = resolve_categories(&d, &names)?;
    let s = compute_stats(&d, &sensitive)?;
    println!("images              {}", s.total_images);
    println!("annotations         {}", s.total_annotations);
    println!("sensitive objects   {}", s.sensitive_annotations);
    println!("images with them    {} (gamma = {:.3})", s.images_with_sensitive, s.gamma);
    println!("per affected image  mean {:.2}, median {:.1}", s.mean_sensitive_per_image, s.median_sensitive_per_image);
    Ok(())
}
