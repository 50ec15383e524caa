use std::collections::HashMap;
use std::path::Path;

use super::wire::DetectionRecord;
use super::{BackendError, Detection, Detector, InpaintRequest, Inpainter};
use crate::imaging::{BinaryMask, ImageBuffer};

pub const MID_GRAY: u8 = 127;

/// Fills every masked pixel with mid-gray.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantFill;

impl Inpainter for ConstantFill {
    fn name(&self) -> String {
        "constant_fill".into()
    }

    fn inpaint(&self, req: &InpaintRequest) -> Result<ImageBuffer, BackendError> {
        let mut out = req.image.clone();
        fill_masked(&mut out, &req.mask, &vec![MID_GRAY; req.image.channels() as usize]);
        Ok(out)
    }
}

/// Fills masked pixels with the per-channel mean of the one-pixel ring of
/// unmasked 4-neighbours around the mask.
#[derive(Debug, Clone, Copy, Default)]
pub struct BorderMean;

impl Inpainter for BorderMean {
    fn name(&self) -> String {
        "border_mean".into()
    }

    fn inpaint(&self, req: &InpaintRequest) -> Result<ImageBuffer, BackendError> {
        let mut out = req.image.clone();
        let fill = border_mean(&req.image, &req.mask);
        fill_masked(&mut out, &req.mask, &fill);
        Ok(out)
    }
}

/// Harmonic fill: masked pixels are repeatedly replaced by the mean of their
/// 4-neighbours (Gauss-Seidel order), with unmasked pixels held fixed, until
/// the largest per-sweep change drops below `tolerance` or `max_sweeps` runs
/// out.
#[derive(Debug, Clone, Copy)]
pub struct LaplacianFill {
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for LaplacianFill {
    fn default() -> Self {
        Self { tolerance: 0.5, max_sweeps: 10_000 }
    }
}

impl Inpainter for LaplacianFill {
    fn name(&self) -> String {
        "laplacian_fill".into()
    }

    fn inpaint(&self, req: &InpaintRequest) -> Result<ImageBuffer, BackendError> {
        let img = &req.image;
        let mask = &req.mask;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let channels = img.channels() as usize;
        let masked: Vec<usize> = (0..w * h).filter(|i| mask.bits()[*i]).collect();
        let mut out = img.clone();
        if masked.is_empty() {
            return Ok(out);
        }
        if masked.len() == w * h {
            fill_masked(&mut out, mask, &vec![MID_GRAY; channels]);
            return Ok(out);
        }
        // Neighbour lists are shared by all channels.
        let neighbours: Vec<Vec<usize>> = masked
            .iter()
            .map(|&i| {
                let (x, y) = (i % w, i / w);
                let mut n = Vec::with_capacity(4);
                if x > 0 {
                    n.push(i - 1);
                }
                if x + 1 < w {
                    n.push(i + 1);
                }
                if y > 0 {
                    n.push(i - w);
                }
                if y + 1 < h {
                    n.push(i + w);
                }
                n
            })
            .collect();
        let start = border_mean(img, mask);
        for c in 0..channels {
            let mut field: Vec<f64> = img.data().iter().skip(c).step_by(channels).map(|v| *v as f64).collect();
            for &i in &masked {
                field[i] = start[c] as f64;
            }
            for _ in 0..self.max_sweeps {
                let mut max_change = 0.0f64;
                for (k, &i) in masked.iter().enumerate() {
                    let n = &neighbours[k];
                    let v = n.iter().map(|j| field[*j]).sum::<f64>() / n.len() as f64;
                    max_change = max_change.max((v - field[i]).abs());
                    field[i] = v;
                }
                if max_change < self.tolerance {
                    break;
                }
            }
            let data = out.data_mut();
            for &i in &masked {
                data[i * channels + c] = field[i].round().clamp(0.0, 255.0) as u8;
            }
        }
        Ok(out)
    }
}

fn fill_masked(img: &mut ImageBuffer, mask: &BinaryMask, value: &[u8]) {
    let c = img.channels() as usize;
    let data = img.data_mut();
    for (i, on) in mask.bits().iter().enumerate() {
        if *on {
            data[i * c..(i + 1) * c].copy_from_slice(value);
        }
    }
}

/// Unmasked pixels sharing an edge with a masked pixel.
pub(crate) fn boundary_ring(mask: &BinaryMask) -> Vec<(u32, u32)> {
    let (w, h) = (mask.width(), mask.height());
    let mut ring = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                continue;
            }
            let touches = (x > 0 && mask.get(x - 1, y))
                || (x + 1 < w && mask.get(x + 1, y))
                || (y > 0 && mask.get(x, y - 1))
                || (y + 1 < h && mask.get(x, y + 1));
            if touches {
                ring.push((x, y));
            }
        }
    }
    ring
}

/// Rounded per-channel mean over the boundary ring; mid-gray when the ring is
/// empty.
fn border_mean(img: &ImageBuffer, mask: &BinaryMask) -> Vec<u8> {
    let channels = img.channels() as usize;
    let ring = boundary_ring(mask);
    if ring.is_empty() {
        return vec![MID_GRAY; channels];
    }
    let mut sums = vec![0u64; channels];
    for (x, y) in &ring {
        for (s, v) in sums.iter_mut().zip(img.pixel(*x, *y)) {
            *s += *v as u64;
        }
    }
    sums.iter().map(|s| (*s as f64 / ring.len() as f64).round() as u8).collect()
}

/// Replays recorded detections keyed by image id.
#[derive(Debug, Clone, Default)]
pub struct ReplayDetector {
    by_image: HashMap<u64, Vec<Detection>>,
}

impl ReplayDetector {
    pub fn new(by_image: HashMap<u64, Vec<Detection>>) -> Self {
        Self { by_image }
    }

    pub fn from_records(records: impl IntoIterator<Item = DetectionRecord>) -> Self {
        let mut by_image: HashMap<u64, Vec<Detection>> = HashMap::new();
        for r in records {
            by_image.entry(r.image_id).or_default().push(r.detection());
        }
        Self { by_image }
    }

    /// Reads a COCO results file (`[{image_id, category_id, bbox, score}]`).
    pub fn from_results_json(bytes: &[u8]) -> Result<Self, BackendError> {
        let records: Vec<DetectionRecord> =
            serde_json::from_slice(bytes).map_err(|e| BackendError::Replay(e.to_string()))?;
        Ok(Self::from_records(records))
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let bytes = std::fs::read(path).map_err(|e| BackendError::Replay(format!("{}: {e}", path.display())))?;
        Self::from_results_json(&bytes)
    }
}

impl Detector for ReplayDetector {
    fn name(&self) -> String {
        "replay".into()
    }

    fn detect_raw(&self, image_id: u64, _image: &ImageBuffer, _thr: f64) -> Result<Vec<Detection>, BackendError> {
        Ok(self.by_image.get(&image_id).cloned().unwrap_or_default())
    }
}

#[cfg(test)]
mod tests {
    use super::super::{detect, inpaint};
    use super::*;
    use crate::imaging::BBox;
    use proptest::prelude::*;

    fn req(img: ImageBuffer, mask: BinaryMask) -> InpaintRequest {
        InpaintRequest::new(img, mask, 3407).unwrap()
    }

    fn disc(w: u32, h: u32, cx: f64, cy: f64, r: f64) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r)
    }

    #[test]
    fn constant_fill_is_mid_gray() {
        let img = ImageBuffer::from_fn(6, 6, 3, |x, y, _| (x * 40 + y) as u8);
        let mask = disc(6, 6, 3.0, 3.0, 1.5);
        let out = inpaint(&ConstantFill, &req(img.clone(), mask.clone())).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                let want: &[u8] = if mask.get(x, y) { &[127, 127, 127] } else { img.pixel(x, y) };
                assert_eq!(out.pixel(x, y), want);
            }
        }
    }

    #[test]
    fn constant_images_stay_constant() {
        let img = ImageBuffer::filled(12, 9, 3, 201);
        let mask = disc(12, 9, 5.0, 4.0, 3.0);
        for backend in [&BorderMean as &dyn Inpainter, &LaplacianFill::default()] {
            assert_eq!(inpaint(backend, &req(img.clone(), mask.clone())).unwrap(), img);
        }
    }

    #[test]
    fn border_mean_uses_the_ring() {
        // Left half 0, right half 200; a centred 2x2 hole sees 4 ring pixels
        // on each side.
        let img = ImageBuffer::from_fn(6, 6, 1, |x, _, _| if x < 3 { 0 } else { 200 });
        let mask = BinaryMask::from_fn(6, 6, |x, y| (2..4).contains(&x) && (2..4).contains(&y));
        let out = inpaint(&BorderMean, &req(img, mask)).unwrap();
        assert_eq!(out.pixel(2, 2), &[100]);
    }

    #[test]
    fn laplacian_linear_ramp_is_reproduced() {
        // A horizontal ramp is harmonic, so filling a hole in it recovers it
        // up to the stopping tolerance.
        let img = ImageBuffer::from_fn(20, 10, 1, |x, _, _| (x * 10) as u8);
        let mask = BinaryMask::from_fn(20, 10, |x, y| (5..15).contains(&x) && (3..7).contains(&y));
        let tight = LaplacianFill { tolerance: 1e-6, max_sweeps: 10_000 };
        let out = inpaint(&tight, &req(img.clone(), mask)).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((*a as i32 - *b as i32).abs() <= 1);
        }
    }

    #[test]
    fn fully_masked_falls_back_to_gray() {
        let img = ImageBuffer::filled(3, 3, 3, 10);
        for backend in [&BorderMean as &dyn Inpainter, &LaplacianFill::default()] {
            let out = inpaint(backend, &req(img.clone(), BinaryMask::full(3, 3))).unwrap();
            assert!(out.data().iter().all(|v| *v == MID_GRAY));
        }
    }

    #[test]
    fn replay_filters_and_sorts() {
        let d = |s: f64| Detection { bbox: BBox::new(0.0, 0.0, 1.0, 1.0), category_id: 1, score: s };
        let replay = ReplayDetector::new(HashMap::from([(5, vec![d(0.3), d(0.9), d(0.6)])]));
        let img = ImageBuffer::filled(2, 2, 3, 0);
        let all = detect(&replay, 5, &img, 0.0).unwrap();
        assert_eq!(all.iter().map(|d| d.score).collect::<Vec<_>>(), vec![0.9, 0.6, 0.3]);
        assert!(detect(&replay, 5, &img, 1.0).unwrap().is_empty());
        assert_eq!(detect(&replay, 5, &img, 0.5).unwrap().len(), 2);
        assert!(detect(&replay, 6, &img, 0.0).unwrap().is_empty());
        assert!(detect(&replay, 5, &img, 1.5).is_err());
    }

    #[test]
    fn replay_reads_results_format() {
        let json = br#"[{"image_id": 3, "category_id": 1, "bbox": [1, 2, 3, 4], "score": 0.75}]"#;
        let replay = ReplayDetector::from_results_json(json).unwrap();
        let got = replay.detect_raw(3, &ImageBuffer::filled(1, 1, 1, 0), 0.0).unwrap();
        assert_eq!(got, vec![Detection { bbox: BBox::new(1.0, 2.0, 3.0, 4.0), category_id: 1, score: 0.75 }]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn laplacian_respects_ring_bounds(seed in any::<u64>(), cx in 3.0..13.0f64, cy in 3.0..9.0f64, r in 1.0..4.0f64) {
            let img = ImageBuffer::from_fn(16, 12, 3, |x, y, c| {
                let v = seed.wrapping_mul(6364136223846793005).wrapping_add((x * 131 + y * 17 + c as u32) as u64);
                (v >> 33) as u8
            });
            let mask = disc(16, 12, cx, cy, r);
            let out = inpaint(&LaplacianFill::default(), &req(img.clone(), mask.clone())).unwrap();
            let ring = boundary_ring(&mask);
            for c in 0..3usize {
                let lo = ring.iter().map(|(x, y)| img.pixel(*x, *y)[c]).min().unwrap();
                let hi = ring.iter().map(|(x, y)| img.pixel(*x, *y)[c]).max().unwrap();
                for y in 0..12 {
                    for x in 0..16 {
                        if mask.get(x, y) {
                            let v = out.pixel(x, y)[c];
                            prop_assert!(v >= lo && v <= hi);
                        } else {
                            prop_assert_eq!(out.pixel(x, y)[c], img.pixel(x, y)[c]);
                        }
                    }
                }
            }
        }

        #[test]
        fn reference_inpainters_are_deterministic(seed in any::<u32>()) {
            let img = ImageBuffer::from_fn(10, 8, 3, |x, y, c| seed.wrapping_add(x * 7 + y * 13 + c as u32) as u8);
            let mask = disc(10, 8, 4.0, 4.0, 2.5);
            let r = req(img, mask);
            for backend in [&ConstantFill as &dyn Inpainter, &BorderMean, &LaplacianFill::default()] {
                prop_assert_eq!(backend.inpaint(&r).unwrap(), backend.inpaint(&r.clone()).unwrap());
            }
        }
    }
}
