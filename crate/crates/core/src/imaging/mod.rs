//! Raster primitives shared by every stage: 8-bit images, binary masks,
//! boxes, and the masked compositing operator.

mod raster;

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use raster::{bbox_mask, decode_rle, rasterize_annotation, rasterize_polygons};

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("annotation {0} has no segmentation")]
    MissingSegmentation(u64),
    #[error("unsupported channel count {0}")]
    Channels(u8),
    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Row-major interleaved 8-bit raster with 1 (gray) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self, ImagingError> {
        if channels != 1 && channels != 3 {
            return Err(ImagingError::Channels(channels));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(ImagingError::DimensionMismatch(format!(
                "{width}x{height}x{channels} needs {expected} samples, got {}",
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Self {
        let n = width as usize * height as usize * channels as usize;
        Self::new(width, height, channels, vec![value; n]).expect("valid channel count")
    }

    pub fn from_fn(width: u32, height: u32, channels: u8, mut f: impl FnMut(u32, u32, u8) -> u8) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * channels as usize);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data).expect("valid channel count")
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn channels(&self) -> u8 {
        self.channels
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let c = self.channels as usize;
        let i = (y as usize * self.width as usize + x as usize) * c;
        &self.data[i..i + c]
    }

    pub fn pixel_mut(&mut self, x: u32, y: u32) -> &mut [u8] {
        let c = self.channels as usize;
        let i = (y as usize * self.width as usize + x as usize) * c;
        &mut self.data[i..i + c]
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Copies the `[x0, x0+w) x [y0, y0+h)` window; the window must lie inside.
    pub fn crop(&self, x0: u32, y0: u32, w: u32, h: u32) -> ImageBuffer {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop outside image");
        ImageBuffer::from_fn(w, h, self.channels, |x, y, c| self.pixel(x0 + x, y0 + y)[c as usize])
    }

    pub fn to_dynamic(&self) -> DynamicImage {
        match self.channels {
            1 => DynamicImage::ImageLuma8(
                GrayImage::from_raw(self.width, self.height, self.data.clone()).expect("sized"),
            ),
            _ => DynamicImage::ImageRgb8(
                RgbImage::from_raw(self.width, self.height, self.data.clone()).expect("sized"),
            ),
        }
    }

    /// Gray images stay gray; everything else is converted to RGB8.
    pub fn from_dynamic(img: DynamicImage) -> Self {
        match img {
            DynamicImage::ImageLuma8(g) => {
                let (w, h) = g.dimensions();
                Self { width: w, height: h, channels: 1, data: g.into_raw() }
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = rgb.dimensions();
                Self { width: w, height: h, channels: 3, data: rgb.into_raw() }
            }
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ImagingError> {
        Ok(Self::from_dynamic(image::load_from_memory(bytes)?))
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, ImagingError> {
        let mut out = Cursor::new(Vec::new());
        self.to_dynamic().write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn load(path: &Path) -> Result<Self, ImagingError> {
        Self::decode(&std::fs::read(path)?)
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImagingError> {
        std::fs::write(path, self.encode_png()?)?;
        Ok(())
    }
}

/// Row-major boolean raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![false; width as usize * height as usize] }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![true; width as usize * height as usize] }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, ImagingError> {
        if bits.len() != width as usize * height as usize {
            return Err(ImagingError::DimensionMismatch(format!(
                "{width}x{height} mask needs {} bits, got {}",
                width as usize * height as usize,
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn matches(&self, img: &ImageBuffer) -> bool {
        self.width == img.width && self.height == img.height
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    /// Tight pixel bounding box of the true pixels as `(x0, y0, x1, y1)`,
    /// exclusive upper corner.
    pub fn bounds(&self) -> Option<(u32, u32, u32, u32)> {
        let mut b: Option<(u32, u32, u32, u32)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    b = Some(match b {
                        None => (x, y, x + 1, y + 1),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
                    });
                }
            }
        }
        b
    }

    /// Gray8 encoding, 0 = keep, 255 = scrub.
    pub fn to_gray(&self) -> ImageBuffer {
        let data = self.bits.iter().map(|b| if *b { 255 } else { 0 }).collect();
        ImageBuffer::new(self.width, self.height, 1, data).expect("sized")
    }

    /// Any nonzero sample (first channel) marks a scrub pixel.
    pub fn from_image(img: &ImageBuffer) -> Self {
        let c = img.channels as usize;
        let bits = img.data.chunks_exact(c).map(|px| px[0] != 0).collect();
        Self { width: img.width, height: img.height, bits }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, ImagingError> {
        self.to_gray().encode_png()
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, ImagingError> {
        Ok(Self::from_image(&ImageBuffer::decode(bytes)?))
    }
}

/// Axis-aligned box, `[x, y, w, h]` with top-left origin in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        Self { x, y, w, h }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    /// Pixels whose centres fall inside `[x, x+w) x [y, y+h)`, clipped to
    /// `width x height`, as a half-open range `(x0, y0, x1, y1)`.
    pub fn pixel_span(&self, width: u32, height: u32) -> (u32, u32, u32, u32) {
        let lo = |v: f64, max: u32| ((v - 0.5).ceil().max(0.0) as u64).min(max as u64) as u32;
        let x0 = lo(self.x, width);
        let y0 = lo(self.y, height);
        let x1 = lo(self.x + self.w.max(0.0), width);
        let y1 = lo(self.y + self.h.max(0.0), height);
        (x0, y0, x1.max(x0), y1.max(y0))
    }
}

pub fn bbox_iou(a: &BBox, b: &BBox) -> f64 {
    // Areas are taken from corner differences so identical boxes give
    // exactly 1.
    let (ax1, ay1) = (a.x + a.w.max(0.0), a.y + a.h.max(0.0));
    let (bx1, by1) = (b.x + b.w.max(0.0), b.y + b.h.max(0.0));
    let ix = (ax1.min(bx1) - a.x.max(b.x)).max(0.0);
    let iy = (ay1.min(by1) - a.y.max(b.y)).max(0.0);
    let inter = ix * iy;
    let area_a = (ax1 - a.x) * (ay1 - a.y);
    let area_b = (bx1 - b.x) * (by1 - b.y);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Pixel-set IoU between the pixels covered by `b` and the true pixels of
/// `m`. Any true pixel inside `b` makes the result strictly positive.
pub fn bbox_mask_iou(b: &BBox, m: &BinaryMask) -> f64 {
    let (x0, y0, x1, y1) = b.pixel_span(m.width, m.height);
    let box_pixels = (x1 - x0) as usize * (y1 - y0) as usize;
    let mut inter = 0usize;
    for y in y0..y1 {
        let row = y as usize * m.width as usize;
        inter += m.bits[row + x0 as usize..row + x1 as usize].iter().filter(|v| **v).count();
    }
    let union = box_pixels + m.count() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// True where some true input pixel lies within Euclidean distance `radius`.
pub fn dilate(m: &BinaryMask, radius: u32) -> BinaryMask {
    if radius == 0 {
        return m.clone();
    }
    let r = radius as i64;
    let r2 = r * r;
    let offsets: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r2)
        .collect();
    let (w, h) = (m.width as i64, m.height as i64);
    let mut out = m.clone();
    // The nearest true pixel to any false pixel is a boundary pixel, so only
    // those need to stamp the disc.
    for y in 0..h {
        for x in 0..w {
            if !m.get(x as u32, y as u32) {
                continue;
            }
            let interior = [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().all(|(dx, dy)| {
                let (nx, ny) = (x + dx, y + dy);
                nx < 0 || ny < 0 || nx >= w || ny >= h || m.get(nx as u32, ny as u32)
            });
            if interior {
                continue;
            }
            for (dx, dy) in &offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx >= 0 && ny >= 0 && nx < w && ny < h {
                    out.set(nx as u32, ny as u32, true);
                }
            }
        }
    }
    out
}

/// Pixelwise OR. An empty list is an error since the output size is unknown.
pub fn union(masks: &[BinaryMask]) -> Result<BinaryMask, ImagingError> {
    let first = masks
        .first()
        .ok_or_else(|| ImagingError::DimensionMismatch("union of zero masks".into()))?;
    let mut out = first.clone();
    for m in &masks[1..] {
        if m.width != out.width || m.height != out.height {
            return Err(ImagingError::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                out.width, out.height, m.width, m.height
            )));
        }
        for (o, b) in out.bits.iter_mut().zip(&m.bits) {
            *o |= *b;
        }
    }
    Ok(out)
}

/// `I * (1 - M) + G * M`: a straight pixel select, never a blend.
pub fn composite(
    input: &ImageBuffer,
    mask: &BinaryMask,
    generated: &ImageBuffer,
) -> Result<ImageBuffer, ImagingError> {
    if !input.same_shape(generated) {
        return Err(ImagingError::DimensionMismatch(format!(
            "input {}x{}x{} vs generated {}x{}x{}",
            input.width, input.height, input.channels, generated.width, generated.height, generated.channels
        )));
    }
    if !mask.matches(input) {
        return Err(ImagingError::DimensionMismatch(format!(
            "mask {}x{} vs image {}x{}",
            mask.width, mask.height, input.width, input.height
        )));
    }
    let c = input.channels as usize;
    let mut out = input.clone();
    for (i, keep) in mask.bits.iter().enumerate() {
        if *keep {
            out.data[i * c..(i + 1) * c].copy_from_slice(&generated.data[i * c..(i + 1) * c]);
        }
    }
    Ok(out)
}
