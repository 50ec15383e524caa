//! The three built-in inpainters on one image. Pixels outside the mask are
//! checked to be untouched after compositing.
//!
//! `cargo run --example reference_inpainters -- out_dir` also writes PNGs.

use roar::backends::{self, BorderMean, ConstantFill, InpaintRequest, Inpainter, LaplacianFill};
use roar::imaging::{composite, BinaryMask, ImageBuffer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::env::args().nth(1).map(std::path::PathBuf::from);
    let (w, h) = (96, 64);
    let img = ImageBuffer::from_fn(w, h, 3, |x, y, c| match c {
        0 => (x * 255 / w) as u8,
        1 => (y * 255 / h) as u8,
        _ => 128,
    });
    let mask = BinaryMask::from_fn(w, h, |x, y| {
        let (dx, dy) = (x as f64 - 48.0, y as f64 - 32.0);
        dx * dx / 400.0 + dy * dy / 144.0 <= 1.0
    });
    let req = InpaintRequest::new(img.clone(), mask.clone(), 3407)?;
    let fills: [&dyn Inpainter; 3] = [&ConstantFill, &BorderMean, &LaplacianFill::default()];
    for fill in fills {
        let out = composite(&img, &mask, &backends::inpaint(fill, &req)?)?;
        let (mut inside, mut outside_changed) = (0u64, 0usize);
        for y in 0..h {
            for x in 0..w {
                let d: u64 = out.pixel(x, y).iter().zip(img.pixel(x, y)).map(|(a, b)| a.abs_diff(*b) as u64).sum();
                if mask.get(x, y) {
                    inside += d;
                } else if d != 0 {
                    outside_changed += 1;
                }
            }
        }
        println!(
            "{:<12} mean abs error in mask {:6.2}, changed pixels outside mask {}",
            fill.name(),
            inside as f64 / (mask.count() * 3) as f64,
            outside_changed
        );
        if let Some(dir) = &out_dir {
            std::fs::create_dir_all(dir)?;
            out.save_png(&dir.join(format!("{}.png", fill.name())))?;
        }
    }
    println!("request id {}", req.request_id());
    Ok(())
}
