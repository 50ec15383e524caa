//! Stitching-based object removal for multi-view scenes.
//!
//! The view with the largest mask is inpainted once; its filled region is then
//! resized into every other view's mask box, tone-matched on a band along the
//! box edge, and feathered in with a Gaussian-blurred alpha. Every view thus
//! receives the same fill, which keeps the views consistent for later 3D
//! reconstruction.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{self, BackendError, InpaintRequest, Inpainter, DEFAULT_PROMPT};
use crate::imaging::{composite, BBox, BinaryMask, ImageBuffer, ImagingError};

#[derive(Debug, Error)]
pub enum MultiviewError {
    #[error("every view mask is empty")]
    NoMaskedView,
    #[error("degenerate box {0:?}")]
    DegenerateBox([f64; 4]),
    #[error("channel counts differ: {0} vs {1}")]
    Channels(u8, u8),
    #[error("empty reference image")]
    EmptyReference,
    #[error("scene needs at least two views, got {0}")]
    TooFewViews(usize),
    #[error("view {view}: {message}")]
    View { view: usize, message: String },
    #[error("inpainting view {view} failed: {source}")]
    Backend { view: usize, source: BackendError },
    #[error("invalid scene manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ResizeFilter {
    Nearest,
    #[default]
    Bilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StitchConfig {
    /// Width of the band along the box edge used to fit the tone mapping.
    pub ring_width: u32,
    /// Feather width; 0 pastes a hard-edged rectangle.
    pub blur_sigma: f64,
    pub resize_filter: ResizeFilter,
}

impl Default for StitchConfig {
    fn default() -> Self {
        Self { ring_width: 8, blur_sigma: 3.0, resize_filter: ResizeFilter::Bilinear }
    }
}

/// Index of the largest mask; ties go to the lowest index.
pub fn select_template(masks: &[BinaryMask]) -> Result<usize, MultiviewError> {
    let mut best: Option<(usize, usize)> = None;
    for (i, m) in masks.iter().enumerate() {
        let area = m.count();
        if area > 0 && best.is_none_or(|(_, a)| area > a) {
            best = Some((i, area));
        }
    }
    best.map(|(i, _)| i).ok_or(MultiviewError::NoMaskedView)
}

/// Per-channel 256-entry lookup table.
#[derive(Debug, Clone, PartialEq)]
pub struct ToneMap {
    luts: Vec<[u8; 256]>,
}

impl ToneMap {
    /// Fits a monotone remap taking the empirical distribution of `source`
    /// onto that of `reference` (both interleaved with `channels` samples per
    /// pixel). Levels seen in `source` map to the smallest reference level
    /// whose CDF reaches theirs; unseen levels are interpolated between the
    /// neighbouring seen ones, so equal distributions give the identity.
    pub fn fit(source: &[u8], reference: &[u8], channels: usize) -> Result<Self, MultiviewError> {
        if reference.is_empty() {
            return Err(MultiviewError::EmptyReference);
        }
        let luts = (0..channels)
            .map(|c| {
                let hs = histogram(source.iter().skip(c).step_by(channels));
                let hr = histogram(reference.iter().skip(c).step_by(channels));
                fit_channel(&hs, &hr)
            })
            .collect();
        Ok(Self { luts })
    }

    pub fn apply(&self, img: &ImageBuffer) -> ImageBuffer {
        let c = img.channels() as usize;
        let mut out = img.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = self.luts[i % c][*v as usize];
        }
        out
    }
}

fn histogram<'a>(samples: impl Iterator<Item = &'a u8>) -> [u64; 256] {
    let mut h = [0u64; 256];
    for s in samples {
        h[*s as usize] += 1;
    }
    h
}

fn cumulative(h: &[u64; 256]) -> [u64; 256] {
    let mut c = [0u64; 256];
    let mut acc = 0;
    for (i, v) in h.iter().enumerate() {
        acc += v;
        c[i] = acc;
    }
    c
}

fn fit_channel(hs: &[u64; 256], hr: &[u64; 256]) -> [u8; 256] {
    let cs = cumulative(hs);
    let cr = cumulative(hr);
    let (ns, nr) = (cs[255], cr[255]);
    let mut lut = [0u8; 256];
    if ns == 0 {
        for (v, slot) in lut.iter_mut().enumerate() {
            *slot = v as u8;
        }
        return lut;
    }
    // Exact comparison of cr[u]/nr >= cs[v]/ns.
    let anchors: Vec<(usize, usize)> = (0..256)
        .filter(|v| hs[*v] > 0)
        .map(|v| {
            let u = (0..256).find(|u| cr[*u] * ns >= cs[v] * nr).unwrap_or(255);
            (v, u)
        })
        .collect();
    let (first, last) = (anchors[0], anchors[anchors.len() - 1]);
    for (v, slot) in lut.iter_mut().enumerate() {
        let mapped = if v <= first.0 {
            v as f64 + first.1 as f64 - first.0 as f64
        } else if v >= last.0 {
            v as f64 + last.1 as f64 - last.0 as f64
        } else {
            let k = anchors.partition_point(|a| a.0 <= v);
            let (lo, hi) = (anchors[k - 1], anchors[k]);
            if lo.0 == v {
                lo.1 as f64
            } else {
                let t = (v - lo.0) as f64 / (hi.0 - lo.0) as f64;
                lo.1 as f64 + t * (hi.1 as f64 - lo.1 as f64)
            }
        };
        *slot = mapped.round().clamp(0.0, 255.0) as u8;
    }
    lut
}

/// Remaps each channel of `patch` so its empirical CDF follows `reference`.
pub fn histogram_match(patch: &ImageBuffer, reference: &ImageBuffer) -> Result<ImageBuffer, MultiviewError> {
    if patch.channels() != reference.channels() {
        return Err(MultiviewError::Channels(patch.channels(), reference.channels()));
    }
    let map = ToneMap::fit(patch.data(), reference.data(), patch.channels() as usize)?;
    Ok(map.apply(patch))
}

pub fn resize(img: &ImageBuffer, width: u32, height: u32, filter: ResizeFilter) -> ImageBuffer {
    if img.width() == width && img.height() == height {
        return img.clone();
    }
    let sx = img.width() as f64 / width as f64;
    let sy = img.height() as f64 / height as f64;
    let (mw, mh) = (img.width() - 1, img.height() - 1);
    match filter {
        ResizeFilter::Nearest => ImageBuffer::from_fn(width, height, img.channels(), |x, y, c| {
            let src_x = (((x as f64 + 0.5) * sx) as u32).min(mw);
            let src_y = (((y as f64 + 0.5) * sy) as u32).min(mh);
            img.pixel(src_x, src_y)[c as usize]
        }),
        ResizeFilter::Bilinear => ImageBuffer::from_fn(width, height, img.channels(), |x, y, c| {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, mw as f64);
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, mh as f64);
            let (x0, y0) = (fx.floor() as u32, fy.floor() as u32);
            let (x1, y1) = ((x0 + 1).min(mw), (y0 + 1).min(mh));
            let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
            let p = |px: u32, py: u32| img.pixel(px, py)[c as usize] as f64;
            let top = p(x0, y0) * (1.0 - tx) + p(x1, y0) * tx;
            let bottom = p(x0, y1) * (1.0 - tx) + p(x1, y1) * tx;
            (top * (1.0 - ty) + bottom * ty).round().clamp(0.0, 255.0) as u8
        }),
    }
}

/// Pixel rectangle `(x0, y0, x1, y1)` covering `b`, clipped to the image.
fn pixel_rect(b: &BBox, width: u32, height: u32) -> Result<(u32, u32, u32, u32), MultiviewError> {
    let raw = [b.x, b.y, b.w, b.h];
    if !raw.iter().all(|v| v.is_finite()) || b.w <= 0.0 || b.h <= 0.0 {
        return Err(MultiviewError::DegenerateBox(raw));
    }
    let clip = |v: f64, max: u32| v.clamp(0.0, max as f64) as u32;
    let x0 = clip(b.x.floor(), width);
    let y0 = clip(b.y.floor(), height);
    let x1 = clip((b.x + b.w).ceil(), width);
    let y1 = clip((b.y + b.h).ceil(), height);
    if x1 <= x0 || y1 <= y0 {
        return Err(MultiviewError::DegenerateBox(raw));
    }
    Ok((x0, y0, x1, y1))
}

/// Feather mask over a `w x h` box: 1 on the box shrunk by `ceil(2 sigma)` on
/// each side, falling off outside that core as the core's Gaussian blur
/// (width `sigma`, truncated at the same radius). Row-major, values in
/// [0, 1].
pub fn alpha_map(w: u32, h: u32, sigma: f64) -> Vec<f64> {
    let (w, h) = (w as usize, h as usize);
    if sigma <= 0.0 {
        return vec![1.0; w * h];
    }
    let radius = (2.0 * sigma).ceil() as usize;
    let erode = radius.min((w.min(h).saturating_sub(1)) / 2);
    let binary: Vec<f64> = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let inside = x >= erode && x + erode < w && y >= erode && y + erode < h;
            if inside {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let kernel: Vec<f64> = {
        let raw: Vec<f64> = (0..=2 * radius)
            .map(|i| {
                let d = i as f64 - radius as f64;
                (-d * d / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    };
    let blur_1d = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, wt) in kernel.iter().enumerate() {
                    let off = k as isize - radius as isize;
                    let (sx, sy) = if horizontal { (x as isize + off, y as isize) } else { (x as isize, y as isize + off) };
                    if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
                        acc += wt * src[sy as usize * w + sx as usize];
                    }
                }
                out[y * w + x] = acc;
            }
        }
        out
    };
    let blurred = blur_1d(&blur_1d(&binary, true), false);
    blurred
        .into_iter()
        .zip(&binary)
        .map(|(a, core)| if *core == 1.0 || a > 1.0 - 1e-12 { 1.0 } else { a.max(0.0) })
        .collect()
}

/// Pastes `patch` into `target` over `target_bbox`.
///
/// The patch is resized to the box, tone-mapped onto the histogram of the
/// target's ring of `ring_width` pixels just outside the box, and
/// alpha-blended with [`alpha_map`]. Pixels outside the box are never touched.
pub fn stitch(
    target: &ImageBuffer,
    target_bbox: &BBox,
    template_patch: &ImageBuffer,
    cfg: &StitchConfig,
) -> Result<ImageBuffer, MultiviewError> {
    if target.channels() != template_patch.channels() {
        return Err(MultiviewError::Channels(target.channels(), template_patch.channels()));
    }
    if template_patch.pixel_count() == 0 {
        return Err(MultiviewError::EmptyReference);
    }
    let (x0, y0, x1, y1) = pixel_rect(target_bbox, target.width(), target.height())?;
    let (rw, rh) = (x1 - x0, y1 - y0);
    let resized = resize(template_patch, rw, rh, cfg.resize_filter);

    let ring_ref = surrounding_ring(target, (x0, y0, x1, y1), cfg.ring_width.max(1));
    let matched = if ring_ref.is_empty() {
        log::debug!("box covers the whole image; no ring to match against");
        resized
    } else {
        ToneMap::fit(resized.data(), &ring_ref, target.channels() as usize)?.apply(&resized)
    };
    let c = target.channels() as usize;

    let alpha = alpha_map(rw, rh, cfg.blur_sigma);
    let mut out = target.clone();
    for y in 0..rh {
        for x in 0..rw {
            let a = alpha[(y * rw + x) as usize];
            if a == 0.0 {
                continue;
            }
            let src = matched.pixel(x, y);
            let dst = out.pixel_mut(x0 + x, y0 + y);
            for k in 0..c {
                dst[k] = if a == 1.0 {
                    src[k]
                } else {
                    (a * src[k] as f64 + (1.0 - a) * dst[k] as f64).round() as u8
                };
            }
        }
    }
    Ok(out)
}

/// Samples of `img` within `ring` pixels outside the half-open rect.
fn surrounding_ring(img: &ImageBuffer, rect: (u32, u32, u32, u32), ring: u32) -> Vec<u8> {
    let (x0, y0, x1, y1) = rect;
    let (ox0, oy0) = (x0.saturating_sub(ring), y0.saturating_sub(ring));
    let (ox1, oy1) = ((x1 + ring).min(img.width()), (y1 + ring).min(img.height()));
    let mut out = Vec::new();
    for y in oy0..oy1 {
        for x in ox0..ox1 {
            if !(x >= x0 && x < x1 && y >= y0 && y < y1) {
                out.extend_from_slice(img.pixel(x, y));
            }
        }
    }
    out
}

/// Deterministic train/test partition of `n` views. The test share is
/// `floor((1 - train_fraction) * n)`; both lists come back sorted.
pub fn split_views(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // The epsilon absorbs representation error in 1 - fraction (0.1 * 10 is
    // 0.9999999999999998 otherwise).
    let n_test = (((1.0 - train_fraction) * n as f64) + 1e-9).floor() as usize;
    let mut test: Vec<usize> = idx[..n_test.min(n)].to_vec();
    let mut train: Vec<usize> = idx[n_test.min(n)..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

#[derive(Debug, Clone)]
pub struct SceneOutput {
    pub images: Vec<ImageBuffer>,
    pub template: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub request_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub train_fraction: f64,
    pub split_seed: u64,
    pub inpaint_seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self { train_fraction: 0.9, split_seed: 42, inpaint_seed: 3407 }
    }
}

/// Inpaints the template view through `inpainter` (composited so only masked
/// pixels change) and stitches its fill into every other masked view. Views
/// with empty masks pass through unchanged.
pub fn scrub_scene(
    views: &[(ImageBuffer, BinaryMask)],
    inpainter: &dyn Inpainter,
    cfg: &StitchConfig,
    params: &SceneParams,
) -> Result<SceneOutput, MultiviewError> {
    if views.len() < 2 {
        return Err(MultiviewError::TooFewViews(views.len()));
    }
    for (i, (img, mask)) in views.iter().enumerate() {
        if !mask.matches(img) {
            return Err(MultiviewError::View { view: i, message: "mask and image sizes differ".into() });
        }
    }
    let masks: Vec<BinaryMask> = views.iter().map(|(_, m)| m.clone()).collect();
    let template = select_template(&masks)?;
    let (timg, tmask) = &views[template];
    let req = InpaintRequest::new(timg.clone(), tmask.clone(), params.inpaint_seed)
        .map_err(|source| MultiviewError::Backend { view: template, source })?
        .with_prompt(DEFAULT_PROMPT);
    let raw = backends::inpaint(inpainter, &req).map_err(|source| MultiviewError::Backend { view: template, source })?;
    let filled = composite(timg, tmask, &raw)?;
    let (px0, py0, px1, py1) = tmask.bounds().expect("template mask is nonempty");
    let patch = filled.crop(px0, py0, px1 - px0, py1 - py0);

    let images = views
        .par_iter()
        .enumerate()
        .map(|(i, (img, mask))| {
            if i == template {
                return Ok(filled.clone());
            }
            match mask.bounds() {
                None => Ok(img.clone()),
                Some((x0, y0, x1, y1)) => {
                    let b = BBox::new(x0 as f64, y0 as f64, (x1 - x0) as f64, (y1 - y0) as f64);
                    stitch(img, &b, &patch, cfg).map_err(|e| MultiviewError::View { view: i, message: e.to_string() })
                }
            }
        })
        .collect::<Result<Vec<_>, MultiviewError>>()?;
    let (train, test) = split_views(views.len(), params.train_fraction, params.split_seed);
    Ok(SceneOutput { images, template, train, test, request_id: req.request_id() })
}

/// Scene manifest file. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub name: String,
    pub views: Vec<PathBuf>,
    pub masks: Vec<PathBuf>,
    #[serde(default = "default_fraction")]
    pub train_test_split: f64,
    #[serde(default = "default_split_seed")]
    pub seed: u64,
    #[serde(default = "default_inpaint_seed")]
    pub inpaint_seed: u64,
    #[serde(default)]
    pub stitch: Option<StitchConfig>,
}

fn default_fraction() -> f64 {
    0.9
}
fn default_split_seed() -> u64 {
    42
}
fn default_inpaint_seed() -> u64 {
    3407
}

impl SceneManifest {
    pub fn validate(&self) -> Result<(), MultiviewError> {
        if self.views.len() < 2 {
            return Err(MultiviewError::TooFewViews(self.views.len()));
        }
        if self.views.len() != self.masks.len() {
            return Err(MultiviewError::Manifest(format!(
                "{} views but {} masks",
                self.views.len(),
                self.masks.len()
            )));
        }
        if !(self.train_test_split > 0.0 && self.train_test_split <= 1.0) {
            return Err(MultiviewError::Manifest(format!("split fraction {} outside (0, 1]", self.train_test_split)));
        }
        Ok(())
    }

    pub fn params(&self) -> SceneParams {
        SceneParams { train_fraction: self.train_test_split, split_seed: self.seed, inpaint_seed: self.inpaint_seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub name: String,
    pub template: usize,
    pub request_id: String,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Reads a manifest, scrubs the scene and writes `train/` and `test/` PNGs
/// plus `scene.json` under `out_dir`.
pub fn run_scene_manifest(
    manifest_path: &Path,
    inpainter: &dyn Inpainter,
    cfg_override: Option<StitchConfig>,
    out_dir: &Path,
) -> Result<SceneSummary, MultiviewError> {
    let text = std::fs::read(manifest_path)?;
    let manifest: SceneManifest = serde_json::from_slice(&text).map_err(|e| MultiviewError::Manifest(e.to_string()))?;
    manifest.validate()?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut views = Vec::with_capacity(manifest.views.len());
    for (i, (v, m)) in manifest.views.iter().zip(&manifest.masks).enumerate() {
        let img = ImageBuffer::load(&base.join(v)).map_err(|e| MultiviewError::View { view: i, message: e.to_string() })?;
        let mask = BinaryMask::from_image(
            &ImageBuffer::load(&base.join(m)).map_err(|e| MultiviewError::View { view: i, message: e.to_string() })?,
        );
        views.push((img, mask));
    }
    let cfg = cfg_override.or(manifest.stitch).unwrap_or_default();
    let out = scrub_scene(&views, inpainter, &cfg, &manifest.params())?;
    let name_of = |i: usize| -> String {
        let stem = manifest.views[i].file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| format!("view{i}"));
        format!("{stem}.png")
    };
    for (sub, list) in [("train", &out.train), ("test", &out.test)] {
        let dir = out_dir.join(sub);
        std::fs::create_dir_all(&dir)?;
        for i in list {
            out.images[*i].save_png(&dir.join(name_of(*i)))?;
        }
    }
    let summary = SceneSummary {
        name: manifest.name.clone(),
        template: out.template,
        request_id: out.request_id.clone(),
        train: out.train.iter().map(|i| name_of(*i)).collect(),
        test: out.test.iter().map(|i| name_of(*i)).collect(),
    };
    let mut bytes = serde_json::to_vec_pretty(&summary).map_err(|e| MultiviewError::Manifest(e.to_string()))?;
    bytes.push(b'\n');
    std::fs::write(out_dir.join("scene.json"), bytes)?;
    Ok(summary)
}
