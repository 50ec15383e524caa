use super::{BBox, BinaryMask, ImagingError};
use crate::dataset::{AnnotationRecord, Rle, Segmentation};

/// Even-odd fill of each ring, sampled at pixel centres. Rings of the same
/// annotation are OR-ed together, as COCO tooling does. Rings with fewer than
/// three vertices contribute nothing.
pub fn rasterize_polygons(rings: &[Vec<f64>], width: u32, height: u32) -> BinaryMask {
    let mut mask = BinaryMask::new(width, height);
    let mut crossings = Vec::new();
    for ring in rings {
        let pts: Vec<(f64, f64)> = ring.chunks_exact(2).map(|p| (p[0], p[1])).collect();
        if pts.len() < 3 {
            continue;
        }
        let (ymin, ymax) = pts
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
        let row_lo = ((ymin - 0.5).ceil().max(0.0) as u32).min(height);
        let row_hi = ((ymax - 0.5).ceil().max(0.0) as u32).min(height);
        for row in row_lo..row_hi {
            let cy = row as f64 + 0.5;
            crossings.clear();
            for i in 0..pts.len() {
                let (x1, y1) = pts[i];
                let (x2, y2) = pts[(i + 1) % pts.len()];
                if (y1 <= cy && cy < y2) || (y2 <= cy && cy < y1) {
                    crossings.push(x1 + (cy - y1) * (x2 - x1) / (y2 - y1));
                }
            }
            crossings.sort_by(f64::total_cmp);
            for pair in crossings.chunks_exact(2) {
                let x0 = ((pair[0] - 0.5).ceil().max(0.0) as u32).min(width);
                let x1 = ((pair[1] - 0.5).ceil().max(0.0) as u32).min(width);
                for x in x0..x1 {
                    mask.set(x, row, true);
                }
            }
        }
    }
    mask
}

/// Decodes uncompressed COCO RLE (column-major, background run first).
pub fn decode_rle(rle: &Rle, width: u32, height: u32) -> Result<BinaryMask, ImagingError> {
    let [h, w] = rle.size;
    if w != width || h != height {
        return Err(ImagingError::DimensionMismatch(format!(
            "RLE size {w}x{h} vs image {width}x{height}"
        )));
    }
    let total = width as usize * height as usize;
    let mut mask = BinaryMask::new(width, height);
    let mut pos = 0usize;
    for (i, run) in rle.counts.iter().enumerate() {
        let end = pos + *run as usize;
        if end > total {
            return Err(ImagingError::DimensionMismatch(format!(
                "RLE counts cover {end} pixels, image has {total}"
            )));
        }
        if i % 2 == 1 {
            for idx in pos..end {
                let x = (idx / height as usize) as u32;
                let y = (idx % height as usize) as u32;
                mask.set(x, y, true);
            }
        }
        pos = end;
    }
    Ok(mask)
}

/// Pixels whose centres lie inside the box.
pub fn bbox_mask(b: &BBox, width: u32, height: u32) -> BinaryMask {
    let (x0, y0, x1, y1) = b.pixel_span(width, height);
    BinaryMask::from_fn(width, height, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1)
}

pub fn rasterize_annotation(
    a: &AnnotationRecord,
    width: u32,
    height: u32,
) -> Result<BinaryMask, ImagingError> {
    match &a.segmentation {
        None => Err(ImagingError::MissingSegmentation(a.id)),
        Some(Segmentation::Polygons(rings)) => Ok(rasterize_polygons(rings, width, height)),
        Some(Segmentation::Rle(rle)) => decode_rle(rle, width, height),
    }
}
