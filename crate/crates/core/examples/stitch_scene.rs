//! Multi-view scrubbing: inpaint the view with the largest mask once and
//! stitch that fill into every other view.
//!
//! `cargo run --example stitch_scene -- out_dir` writes the scrubbed views.

use roar::backends::LaplacianFill;
use roar::imaging::{BinaryMask, ImageBuffer};
use roar::multiview::{scrub_scene, SceneParams, StitchConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::env::args().nth(1).map(std::path::PathBuf::from);
    let (w, h) = (200, 150);
    let views: Vec<(ImageBuffer, BinaryMask)> = (0..12u32)
        .map(|i| {
            let (ox, oy, size) = (60 + i * 4, 50 + i * 2, 36 + (i % 4) * 4);
            let inside = move |x: u32, y: u32| x >= ox && x < ox + size && y >= oy && y < oy + size;
            // Lighting drifts between views; the tone mapping absorbs it.
            let img = ImageBuffer::from_fn(w, h, 3, |x, y, c| {
                if inside(x, y) {
                    [220u8, 30, 30][c as usize]
                } else {
                    ((x / 2 + y + c as u32 * 40) % 160) as u8 + 40 + i as u8 * 3
                }
            });
            (img, BinaryMask::from_fn(w, h, inside))
        })
        .collect();
    let out = scrub_scene(&views, &LaplacianFill::default(), &StitchConfig::default(), &SceneParams::default())?;
    println!("template view {} (largest mask)", out.template);
    println!("train {:?}", out.train);
    println!("test  {:?}", out.test);
    for (i, ((img, _), scrubbed)) in views.iter().zip(&out.images).enumerate() {
        let changed = img.data().chunks(3).zip(scrubbed.data().chunks(3)).filter(|(a, b)| a != b).count();
        println!("view {i:2}: {changed} pixels changed");
        if let Some(dir) = &out_dir {
            std::fs::create_dir_all(dir)?;
            scrubbed.save_png(&dir.join(format!("view_{i:02}.png")))?;
        }
    }
    Ok(())
}
