//! The `roar` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::backends::{self, BackendEndpoint, RemoteBackend, ENV_BACKEND_URL};
use crate::dataset::{parse_dataset, resolve_categories, DatasetDescriptor};
use crate::imaging::ImageBuffer;
use crate::metrics::image::{ImageQualityReport, QualitySummary};
use crate::metrics::utility::{evaluate, group_results, EvalConfig};
use crate::multiview::{run_scene_manifest, ResizeFilter, StitchConfig};
use crate::pipeline::{
    report, run_scrub, EvalInputs, ExecuteOptions, InpainterChoice, OracleChoice, RunManifest, ScrubJob,
    ScrubMode, ScrubPolicy,
};
use crate::reannotation::ReannotationConfig;

#[derive(Debug, Parser)]
#[command(name = "roar", version, about = "Scrub sensitive objects from annotated image datasets")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scrub a COCO dataset and write images, annotations and a run manifest.
    Scrub(ScrubArgs),
    /// COCO box AP of a results file against ground truth.
    EvalAp(EvalApArgs),
    /// Privacy efficiency and dataset loss of a finished run.
    EvalPrivacy(EvalPrivacyArgs),
    /// PSNR / SSIM (and LPIPS through a backend) between two image folders.
    EvalImage(EvalImageArgs),
    /// Stitching-based removal across the views of one scene.
    StitchScene(StitchArgs),
}

#[derive(Debug, Args)]
struct ScrubArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "fp", value_parser = parse_from_str::<ScrubMode>)]
    mode: ScrubMode,
    /// Sensitive category names or ids.
    #[arg(long, value_delimiter = ',', default_value = "person")]
    categories: Vec<String>,
    #[arg(long, default_value_t = 0)]
    dilate_px: u32,
    /// constant | border-mean | laplacian | remote[=URL]
    #[arg(long, default_value = "laplacian", value_parser = parse_from_str::<InpainterChoice>)]
    inpainter: InpainterChoice,
    /// replay=FILE | remote[=URL]
    #[arg(long, value_parser = parse_from_str::<OracleChoice>)]
    oracle: OracleChoice,
    #[arg(long, default_value_t = 0.0)]
    zeta: f64,
    #[arg(long, default_value_t = 0.3)]
    tau: f64,
    /// Let an oracle detection of any category verify an annotation.
    #[arg(long)]
    any_category: bool,
    #[arg(long, default_value_t = 3407)]
    seed: u64,
    #[arg(long, default_value_t = 42)]
    selection_seed: u64,
    #[arg(long, default_value_t = backends::DEFAULT_SCORE_THRESHOLD)]
    score_threshold: f64,
    #[arg(long, default_value = backends::DEFAULT_PROMPT)]
    prompt: String,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Concurrent backend calls (defaults to the worker count).
    #[arg(long)]
    max_in_flight: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalApArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    dets: PathBuf,
    /// AP of the baseline model, for the relative column.
    #[arg(long)]
    baseline_ap: Option<f64>,
    /// Write the JSON report here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalPrivacyArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Input annotations; defaults to the path recorded in the manifest.
    #[arg(long)]
    original: Option<PathBuf>,
    /// Output annotations; defaults to annotations.json beside the manifest.
    #[arg(long)]
    processed: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalImageArgs {
    #[arg(long)]
    dir_a: PathBuf,
    #[arg(long)]
    dir_b: PathBuf,
    /// remote[=URL]
    #[arg(long)]
    lpips: Option<String>,
    #[arg(long, default_value = "scene")]
    name: String,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StitchArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "laplacian", value_parser = parse_from_str::<InpainterChoice>)]
    inpainter: InpainterChoice,
    #[arg(long)]
    ring_width: Option<u32>,
    #[arg(long)]
    blur_sigma: Option<f64>,
    #[arg(long)]
    nearest: bool,
}

fn parse_from_str<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| e.to_string())
}

#[derive(Debug)]
enum Failure {
    /// Finished, but some images failed.
    Partial(String),
    Fatal(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Fatal(e.to_string())
    }
}

/// Parses `args` and runs the command. Exit code 0 on success, 2 when some
/// images failed, 1 on any fatal error.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let result = match cli.command {
        Command::Scrub(a) => scrub(a),
        Command::EvalAp(a) => eval_ap(a),
        Command::EvalPrivacy(a) => eval_privacy(a),
        Command::EvalImage(a) => eval_image(a),
        Command::StitchScene(a) => stitch_scene(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Partial(msg)) => {
            eprintln!("roar: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Fatal(msg)) => {
            eprintln!("roar: error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn read_dataset(path: &Path) -> Result<DatasetDescriptor, Failure> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(parse_dataset(&bytes).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn write_json<T: serde::Serialize>(path: &Option<PathBuf>, value: &T) -> Result<(), Failure> {
    if let Some(p) = path {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        std::fs::write(p, bytes).map_err(|e| format!("{}: {e}", p.display()))?;
    }
    Ok(())
}

fn scrub(a: ScrubArgs) -> Result<(), Failure> {
    let dataset = read_dataset(&a.annotations)?;
    let categories = resolve_categories(&dataset, &a.categories)?;
    let policy = ScrubPolicy {
        mode: a.mode,
        sensitive_categories: categories,
        dilate_px: a.dilate_px,
        selection_seed: a.selection_seed,
        global_seed: a.seed,
    };
    let options = ExecuteOptions {
        workers: a.workers,
        max_in_flight: a.max_in_flight,
        score_threshold: a.score_threshold,
        prompt: a.prompt,
        reannotation: ReannotationConfig { zeta: a.zeta, tau: a.tau, require_same_category: !a.any_category },
    };
    options.validate()?;
    let inpainter = a.inpainter.build()?;
    let oracle = a.oracle.build()?;
    let job = ScrubJob { annotations: a.annotations, images: a.images, out: a.out.clone(), policy, options };
    let manifest = run_scrub(&job, inpainter.as_ref(), oracle.as_ref())?;
    let s = &manifest.summary;
    println!(
        "{} images in, {} out ({} scrubbed, {} kept, {} dropped by policy, {} emptied, {} failed); {} -> {} annotations",
        s.images_in,
        s.images_out,
        s.scrubbed,
        s.kept,
        s.dropped_by_policy,
        s.dropped_empty,
        s.failed,
        s.annotations_in,
        s.annotations_out
    );
    if s.failed > 0 {
        return Err(Failure::Partial(format!(
            "{} image(s) failed; see {}",
            s.failed,
            a.out.join("manifest.json").display()
        )));
    }
    Ok(())
}

fn eval_ap(a: EvalApArgs) -> Result<(), Failure> {
    let gt = read_dataset(&a.gt)?;
    let bytes = std::fs::read(&a.dets).map_err(|e| format!("{}: {e}", a.dets.display()))?;
    let records: Vec<backends::wire::DetectionRecord> = serde_json::from_slice(&bytes)?;
    let mut r = evaluate(&gt, &group_results(&records), &EvalConfig::default())?;
    r.category_names = gt.categories.iter().map(|c| (c.id, c.name.clone())).collect();
    if let Some(b) = a.baseline_ap {
        r = r.with_baseline(b);
    }
    let o = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
    println!("AP {:.3}  AP50 {}  AP75 {}  APs {}  APm {}  APl {}", r.mean_ap, o(r.ap50), o(r.ap75), o(r.ap_small), o(r.ap_medium), o(r.ap_large));
    print!("{}", r.category_table(None));
    if let Some(rel) = r.relative_to_baseline {
        println!("relative to baseline: {}", crate::metrics::utility::format_percent(rel));
    }
    write_json(&a.json, &r)
}

fn eval_privacy(a: EvalPrivacyArgs) -> Result<(), Failure> {
    let manifest = RunManifest::load(&a.manifest)?;
    let original = a.original.unwrap_or_else(|| PathBuf::from(&manifest.config.annotations));
    let processed = a
        .processed
        .unwrap_or_else(|| a.manifest.parent().unwrap_or(Path::new(".")).join("annotations.json"));
    let r = report(&read_dataset(&original)?, &read_dataset(&processed)?, &manifest, &EvalInputs::default())?;
    print!("{}", r.table());
    write_json(&a.json, &r)
}

fn list_images(dir: &Path) -> Result<Vec<String>, Failure> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let lower = name.to_ascii_lowercase();
        if entry.file_type()?.is_file() && [".png", ".jpg", ".jpeg"].iter().any(|e| lower.ends_with(e)) {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn eval_image(a: EvalImageArgs) -> Result<(), Failure> {
    let remote = match a.lpips.as_deref() {
        None => None,
        Some(value) => {
            let url = if value == "remote" {
                std::env::var(ENV_BACKEND_URL).map_err(|_| format!("--lpips remote needs {ENV_BACKEND_URL}"))?
            } else {
                value.strip_prefix("remote=").ok_or_else(|| format!("bad --lpips value {value:?}"))?.to_string()
            };
            let b = RemoteBackend::new(BackendEndpoint::new(url));
            b.health()?;
            Some(b)
        }
    };
    let names = list_images(&a.dir_a)?;
    if names.is_empty() {
        return Err(Failure::Fatal(format!("no images in {}", a.dir_a.display())));
    }
    let mut pairs = Vec::with_capacity(names.len());
    for name in &names {
        let x = ImageBuffer::load(&a.dir_a.join(name))?;
        let y = ImageBuffer::load(&a.dir_b.join(name)).map_err(|e| format!("{name}: {e}"))?;
        let mut r = ImageQualityReport::compute(name.clone(), &x, &y).map_err(|e| format!("{name}: {e}"))?;
        if let Some(b) = &remote {
            r.lpips = Some(b.lpips(&x, &y)?);
        }
        pairs.push(r);
    }
    let summary = QualitySummary::from_pairs(pairs);
    print!("{}", summary.table(&a.name));
    write_json(&a.json, &summary)
}

fn stitch_scene(a: StitchArgs) -> Result<(), Failure> {
    let inpainter = a.inpainter.build()?;
    let overrides = a.ring_width.is_some() || a.blur_sigma.is_some() || a.nearest;
    let cfg = overrides.then(|| {
        let d = StitchConfig::default();
        StitchConfig {
            ring_width: a.ring_width.unwrap_or(d.ring_width),
            blur_sigma: a.blur_sigma.unwrap_or(d.blur_sigma),
            resize_filter: if a.nearest { ResizeFilter::Nearest } else { d.resize_filter },
        }
    });
    if let Some(c) = &cfg {
        if c.ring_width == 0 || c.blur_sigma.is_nan() || c.blur_sigma < 0.0 {
            return Err(Failure::Fatal("ring width must be >= 1 and blur sigma >= 0".into()));
        }
    }
    let s = run_scene_manifest(&a.manifest, inpainter.as_ref(), cfg, &a.out)?;
    println!("{}: template view {}, {} train / {} test", s.name, s.template, s.train.len(), s.test.len());
    Ok(())
}
