//! Polygon and RLE rasterisation, union and dilation, drawn as ASCII.

use roar::dataset::{AnnotationRecord, Rle, Segmentation};
use roar::imaging::{bbox_mask, dilate, rasterize_annotation, union, BBox, BinaryMask};

fn show(title: &str, m: &BinaryMask) {
    println!("{title} ({} px)", m.count());
    for y in 0..m.height() {
        let row: String = (0..m.width()).map(|x| if m.get(x, y) { '#' } else { '.' }).collect();
        println!("  {row}");
    }
}

fn ann(id: u64, segmentation: Option<Segmentation>, bbox: [f64; 4]) -> AnnotationRecord {
    AnnotationRecord { id, image_id: 1, category_id: 1, bbox, area: bbox[2] * bbox[3], segmentation, iscrowd: 0 }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (w, h) = (24, 12);
    let triangle = ann(1, Some(Segmentation::Polygons(vec![vec![2.0, 10.0, 9.0, 1.0, 14.0, 10.0]])), [2.0, 1.0, 12.0, 9.0]);
    // Column-major runs: columns 18..22 hold rows 3..7.
    let rle_counts = vec![18 * h + 3, 4, 8, 4, 8, 4, 8, 4, 5 + 2 * h];
    let blob = ann(2, Some(Segmentation::Rle(Rle { counts: rle_counts, size: [h, w] })), [18.0, 3.0, 4.0, 4.0]);
    let boxed = ann(3, None, [16.0, 9.0, 5.5, 2.5]);

    let a = rasterize_annotation(&triangle, w, h)?;
    let b = rasterize_annotation(&blob, w, h)?;
    let c = bbox_mask(&BBox::from(boxed.bbox), w, h);
    show("polygon", &a);
    show("run-length", &b);
    show("box fallback", &c);
    let all = union(&[a, b, c])?;
    show("union", &all);
    show("dilated by 1", &dilate(&all, 1));
    Ok(())
}
