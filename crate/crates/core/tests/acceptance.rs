//! One PASS/FAIL line per acceptance criterion. Criteria run one after
//! another so timings are not skewed by sibling checks.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use roar::backends::{self, InpaintRequest, LaplacianFill, ReplayDetector};
use roar::dataset::parse_dataset;
use roar::imaging::{composite, BinaryMask, ImageBuffer};
use roar::metrics::image::{psnr, ssim};
use roar::metrics::privacy::{ie, pe_fp, pe_sp, PrivacyMode};
use roar::metrics::utility::{average_precision, evaluate, format_percent, group_results, EvalConfig, MatchLabel};
use roar::multiview::{histogram_match, resize, run_scene_manifest, select_template, ResizeFilter};
use roar::pipeline::{report, run_scrub, EvalInputs, ExecuteOptions, ScrubJob, ScrubMode, ScrubPolicy};
use roar::reannotation::update;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, format!("took {elapsed:.2?}, limit {limit:.0?}"))
}

fn run_criterion(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    match outcome {
        Ok(detail) => {
            common::report_line(true, name, &detail);
            true
        }
        Err(detail) => {
            common::report_line(false, name, &detail);
            false
        }
    }
}

fn random_image(r: &mut impl Rng, w: u32, h: u32, c: u8) -> ImageBuffer {
    ImageBuffer::from_fn(w, h, c, |_, _, _| r.random())
}

fn mask_preserving_composite() -> Outcome {
    let start = Instant::now();
    let mut r = common::rng(8);
    let mut masked = 0usize;
    for case in 0..100 {
        let (w, h) = (r.random_range(1..=64), r.random_range(1..=64));
        let c = if r.random_bool(0.5) { 1u8 } else { 3 };
        let input = random_image(&mut r, w, h, c);
        let density = r.random_range(0.0..1.0);
        let mask = BinaryMask::from_fn(w, h, |_, _| r.random_bool(density));
        // Half the cases use an arbitrary backend output, half a reference inpainter.
        let generated = if case % 2 == 0 || mask.is_empty() {
            random_image(&mut r, w, h, c)
        } else {
            backends::inpaint(&LaplacianFill::default(), &InpaintRequest::new(input.clone(), mask.clone(), case).unwrap())
                .map_err(|e| e.to_string())?
        };
        let out = composite(&input, &mask, &generated).map_err(|e| e.to_string())?;
        for y in 0..h {
            for x in 0..w {
                let want = if mask.get(x, y) { generated.pixel(x, y) } else { input.pixel(x, y) };
                ensure(out.pixel(x, y) == want, format!("case {case}: pixel ({x}, {y}) differs"))?;
            }
        }
        masked += mask.count();
    }
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("100 triples exact ({masked} masked pixels) in {:.2?}", start.elapsed()))
}

fn reannotation_matches_enumeration() -> Outcome {
    let start = Instant::now();
    let mut r = common::rng(20240611);
    for case in 0..1000 {
        let inst = common::random_reann_instance(&mut r);
        let refs: Vec<_> = inst.annotations.iter().collect();
        let (kept, upd) =
            update(&refs, &inst.targets, &inst.mask, &inst.detections, &inst.cfg).map_err(|e| e.to_string())?;
        let (want_kept, want_verified, want_removed) = common::brute_force_reannotation(&inst);
        let got_kept: BTreeSet<u64> = kept.iter().map(|a| a.id).collect();
        let got_verified: BTreeSet<u64> = upd.verified.iter().copied().collect();
        let got_removed: BTreeSet<u64> = upd.removed.iter().copied().collect();
        ensure(
            got_kept == want_kept && got_verified == want_verified && got_removed == want_removed,
            format!("case {case}: kept {got_kept:?} vs {want_kept:?}"),
        )?;
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("1000 instances equal to subset enumeration in {:.2?}", start.elapsed()))
}

fn privacy_metrics() -> Outcome {
    let fp = pe_fp(&[(2, 0), (3, 1)]).map_err(|e| e.to_string())?;
    let i = ie(&[0, 0, 2], PrivacyMode::Full).map_err(|e| e.to_string())?;
    let sp = pe_sp(&[(2, 1), (1, 1), (3, 3)]).map_err(|e| e.to_string())?;
    ensure((fp - 80.0).abs() <= 1e-9, format!("pe_fp = {fp}"))?;
    ensure((i - 200.0 / 3.0).abs() <= 1e-6, format!("ie = {i}"))?;
    ensure((sp - 100.0 / 3.0).abs() <= 1e-6, format!("pe_sp = {sp}"))?;

    let dir = tempfile::tempdir().unwrap();
    let d = common::write_scene_dataset(dir.path(), 20, 11);
    common::write_replay(&dir.path().join("oracle.json"), &d, 0.0, 11);
    let oracle = ReplayDetector::from_file(&dir.path().join("oracle.json")).map_err(|e| e.to_string())?;
    let job = ScrubJob {
        annotations: dir.path().join("annotations.json"),
        images: dir.path().join("images"),
        out: dir.path().join("out"),
        policy: ScrubPolicy::new(ScrubMode::Fp, BTreeSet::from([common::PERSON])),
        options: ExecuteOptions::default(),
    };
    let m = run_scrub(&job, &LaplacianFill::default(), &oracle).map_err(|e| e.to_string())?;
    let processed = parse_dataset(&std::fs::read(dir.path().join("out/annotations.json")).unwrap()).unwrap();
    let rep = report(&d, &processed, &m, &EvalInputs::default()).map_err(|e| e.to_string())?;
    ensure(
        rep.privacy.pe_percent == Some(100.0) && rep.privacy.ie_percent == Some(100.0),
        format!("fixture PE {:?}, IE {:?}", rep.privacy.pe_percent, rep.privacy.ie_percent),
    )?;
    Ok(format!(
        "pe_fp {fp}, ie {i:.6}, pe_sp {sp:.6}; fixture ({} scrubbed images) PE 100, IE 100",
        m.summary.scrubbed
    ))
}

fn ap_evaluator() -> Outcome {
    let start = Instant::now();
    let ap = average_precision(&[MatchLabel::Tp, MatchLabel::Fp], 2, 101).unwrap();
    ensure((ap - 51.0 / 101.0).abs() <= 1e-9, format!("two-truth case {ap}"))?;

    let gt = parse_dataset(include_bytes!("fixtures/coco_gt.json")).unwrap();
    let dets: Vec<roar::backends::wire::DetectionRecord> =
        serde_json::from_slice(include_bytes!("fixtures/coco_dets.json")).unwrap();
    let r = evaluate(&gt, &group_results(&dets), &EvalConfig::default()).map_err(|e| e.to_string())?;
    // Frozen output of pycocotools COCOeval on the same files.
    let reference = [0.6180693069306931, 0.9092409240924093, 0.7112211221122112];
    let got = [r.mean_ap, r.ap50.unwrap_or(f64::NAN), r.ap75.unwrap_or(f64::NAN)];
    let worst = got.iter().zip(reference).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);
    ensure(worst <= 1e-6, format!("mixed fixture off by {worst:e}"))?;

    let mut perfect: std::collections::HashMap<u64, Vec<roar::backends::Detection>> = Default::default();
    for (k, a) in gt.annotations.iter().filter(|a| !a.is_crowd()).enumerate() {
        perfect.entry(a.image_id).or_default().push(roar::backends::Detection {
            bbox: a.bbox.into(),
            category_id: a.category_id,
            score: 1.0 - k as f64 * 0.01,
        });
    }
    let p = evaluate(&gt, &perfect, &EvalConfig::default()).map_err(|e| e.to_string())?;
    ensure(p.mean_ap == 1.0, format!("perfect detections gave {}", p.mean_ap))?;
    within(start.elapsed(), Duration::from_secs(5))?;
    Ok(format!("51/101 exact, mixed fixture within {worst:.1e}, perfect 1.0, {:.2?}", start.elapsed()))
}

fn three_sig(x: f64) -> String {
    let digits = 2 - x.abs().log10().floor() as i32;
    format!("{:.*}", digits.max(0) as usize, x)
}

fn report_ratios() -> Outcome {
    let a = 0.420 / 0.480;
    let b = 0.356 / 0.480;
    let (fa, fb) = (format_percent(a), format_percent(b));
    ensure(fa == "87.50%" && fb == "74.17%", format!("rendered {fa}, {fb}"))?;
    ensure(three_sig(a * 100.0) == "87.5" && three_sig(b * 100.0) == "74.2", "3 significant figures differ")?;
    Ok(format!("{fa}, {fb}"))
}

fn image_quality() -> Outcome {
    let a = ImageBuffer::from_fn(64, 48, 3, |x, y, c| (x + y * 2 + c as u32 * 30) as u8 % 200);
    let shifted = ImageBuffer::new(64, 48, 3, a.data().iter().map(|v| v + 16).collect()).unwrap();
    let p = psnr(&a, &shifted).map_err(|e| e.to_string())?;
    ensure((p - 24.0486).abs() <= 1e-3, format!("psnr {p}"))?;
    let same = psnr(&a, &a).map_err(|e| e.to_string())?;
    ensure(same.is_infinite() && same > 0.0, format!("identical psnr {same}"))?;
    let s1 = ssim(&a, &a).map_err(|e| e.to_string())?;
    ensure((s1 - 1.0).abs() <= 1e-9, format!("identical ssim {s1}"))?;
    let c1 = (0.01f64 * 255.0).powi(2);
    let s0 =
        ssim(&ImageBuffer::filled(32, 32, 3, 0), &ImageBuffer::filled(32, 32, 3, 255)).map_err(|e| e.to_string())?;
    let want = c1 / (255.0 * 255.0 + c1);
    ensure((s0 - want).abs() <= 1e-9, format!("constant ssim {s0} vs {want}"))?;
    Ok(format!("psnr {p:.4} dB, identical inf / ssim 1, constant ssim {s0:.3e}"))
}

fn stitching() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let views = common::synthetic_views(34, 512, 384);
    let (mut names, mut masks) = (Vec::new(), Vec::new());
    std::fs::create_dir_all(dir.path().join("views")).unwrap();
    for (i, (img, mask)) in views.iter().enumerate() {
        let (v, m) = (format!("views/v{i:02}.png"), format!("views/m{i:02}.png"));
        img.save_png(&dir.path().join(&v)).unwrap();
        mask.to_gray().save_png(&dir.path().join(&m)).unwrap();
        names.push(v);
        masks.push(m);
    }
    let manifest = serde_json::json!({ "name": "synthetic", "views": names, "masks": masks });
    std::fs::write(dir.path().join("scene.json"), manifest.to_string()).unwrap();
    let out = dir.path().join("out");
    let summary = run_scene_manifest(&dir.path().join("scene.json"), &LaplacianFill::default(), None, &out)
        .map_err(|e| e.to_string())?;
    ensure(
        summary.train.len() == 31 && summary.test.len() == 3,
        format!("split {}/{}", summary.train.len(), summary.test.len()),
    )?;

    let mut checked = 0usize;
    let core = (2.0 * roar::multiview::StitchConfig::default().blur_sigma).ceil() as u32;
    for (sub, list) in [("train", &summary.train), ("test", &summary.test)] {
        for file in list {
            let i: usize = file.trim_start_matches('v').trim_end_matches(".png").parse().unwrap();
            let got = ImageBuffer::load(&out.join(sub).join(file)).map_err(|e| e.to_string())?;
            let (img, mask) = &views[i];
            let (x0, y0, x1, y1) = mask.bounds().unwrap();
            for y in 0..img.height() {
                for x in 0..img.width() {
                    let inside = if i == summary.template { mask.get(x, y) } else { x >= x0 && x < x1 && y >= y0 && y < y1 };
                    if !inside {
                        ensure(got.pixel(x, y) == img.pixel(x, y), format!("view {i}: ({x}, {y}) changed outside support"))?;
                        checked += 1;
                    }
                    // The object itself must be gone from the fully covered core.
                    let in_core = x >= x0 + core && x + core < x1 && y >= y0 + core && y + core < y1;
                    if in_core && mask.get(x, y) {
                        ensure(got.pixel(x, y) != [230, 40, 40], format!("view {i}: object still visible at ({x}, {y})"))?;
                    }
                }
            }
        }
    }

    // Matching an already matched patch must not move it by more than a level.
    let all_masks: Vec<BinaryMask> = views.iter().map(|(_, m)| m.clone()).collect();
    let t = select_template(&all_masks).map_err(|e| e.to_string())?;
    let (px0, py0, px1, py1) = all_masks[t].bounds().unwrap();
    let patch = views[t].0.crop(px0, py0, px1 - px0, py1 - py0);
    let mut worst = 0u8;
    for (i, (img, mask)) in views.iter().enumerate().filter(|(i, _)| *i != t) {
        let (x0, y0, x1, y1) = mask.bounds().unwrap();
        let reference = img.crop(x0, y0, x1 - x0, y1 - y0);
        let p = resize(&patch, x1 - x0, y1 - y0, ResizeFilter::Bilinear);
        let once = histogram_match(&p, &reference).map_err(|e| e.to_string())?;
        let twice = histogram_match(&once, &reference).map_err(|e| e.to_string())?;
        let d = once.data().iter().zip(twice.data()).map(|(a, b)| a.abs_diff(*b)).max().unwrap_or(0);
        ensure(d <= 1, format!("view {i}: re-matching moved a level by {d}"))?;
        worst = worst.max(d);
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!(
        "34 views -> 31/3, {checked} outside pixels identical, idempotence max diff {worst}, {:.2?}",
        start.elapsed()
    ))
}

/// Every file under `root`, keyed by relative path.
fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                let mut bytes = std::fs::read(&p).unwrap();
                if rel == "manifest.json" {
                    let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                    v.as_object_mut().unwrap().remove("runtime");
                    bytes = serde_json::to_vec(&v).unwrap();
                }
                out.insert(rel, bytes);
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = common::write_scene_dataset(dir.path(), 24, 21);
    common::write_replay(&dir.path().join("oracle.json"), &d, 0.25, 21);
    let run = |workers: u32, out: &str| -> Result<BTreeMap<String, Vec<u8>>, String> {
        let o = Command::new(env!("CARGO_BIN_EXE_roar"))
            .args(["scrub", "--mode", "fp", "--categories", "person", "--dilate-px", "2", "--inpainter", "laplacian"])
            .arg("--workers")
            .arg(workers.to_string())
            .arg("--annotations")
            .arg(dir.path().join("annotations.json"))
            .arg("--images")
            .arg(dir.path().join("images"))
            .arg("--out")
            .arg(dir.path().join(out))
            .arg("--oracle")
            .arg(format!("replay={}", dir.path().join("oracle.json").display()))
            .output()
            .map_err(|e| e.to_string())?;
        ensure(o.status.success(), format!("exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)))?;
        Ok(tree(&dir.path().join(out)))
    };
    let mut first: Option<BTreeMap<String, Vec<u8>>> = None;
    for workers in [1, 4, 8] {
        let a = run(workers, &format!("w{workers}a"))?;
        let b = run(workers, &format!("w{workers}b"))?;
        ensure(a == b, format!("two runs at {workers} workers differ"))?;
        if let Some(f) = &first {
            ensure(*f == a, format!("{workers} workers differ from 1 worker"))?;
        }
        first.get_or_insert(a);
    }
    Ok(format!("{} output files identical across 6 runs at 1/4/8 workers", first.map_or(0, |f| f.len())))
}

#[test]
fn acceptance_criteria() {
    {
        use std::io::Write;
        let _ = std::io::stdout().lock().write_all(b"\n");
    }
    let results = [
        run_criterion("mask-preserving composite", mask_preserving_composite),
        run_criterion("re-annotation algebra", reannotation_matches_enumeration),
        run_criterion("privacy metrics", privacy_metrics),
        run_criterion("AP evaluator", ap_evaluator),
        run_criterion("report ratios", report_ratios),
        run_criterion("PSNR/SSIM", image_quality),
        run_criterion("multi-view stitching", stitching),
        run_criterion("determinism", determinism),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
