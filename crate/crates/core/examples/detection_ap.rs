//! COCO-style AP for a detection results file.
//!
//! `cargo run --example detection_ap -- gt.json dets.json` or, without
//! arguments, the bundled three-image fixture.

use roar::backends::wire::DetectionRecord;
use roar::dataset::parse_dataset;
use roar::metrics::utility::{evaluate, group_results, EvalConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (gt, dets) = match args.as_slice() {
        [g, d] => (std::fs::read(g)?, std::fs::read(d)?),
        _ => (
            include_bytes!("../tests/fixtures/coco_gt.json").to_vec(),
            include_bytes!("../tests/fixtures/coco_dets.json").to_vec(),
        ),
    };
    let gt = parse_dataset(&gt)?;
    let dets: Vec<DetectionRecord> = serde_json::from_slice(&dets)?;
    let r = evaluate(&gt, &group_results(&dets), &EvalConfig::default())?.with_baseline(0.70);
    let o = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
    println!("AP {:.3}  AP50 {}  AP75 {}", r.mean_ap, o(r.ap50), o(r.ap75));
    println!("small {}  medium {}  large {}", o(r.ap_small), o(r.ap_medium), o(r.ap_large));
    print!("{}", r.category_table(None));
    if let Some(rel) = r.relative_to_baseline {
        println!("relative to a 0.70 baseline: {}", roar::metrics::utility::format_percent(rel));
    }
    Ok(())
}
