//! PSNR and SSIM between an image and degraded copies of it.

use roar::imaging::ImageBuffer;
use roar::metrics::image::{ImageQualityReport, QualitySummary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = ImageBuffer::from_fn(128, 96, 3, |x, y, c| ((x * 3 + y * 2 + c as u32 * 50) % 200) as u8 + 20);
    let shift = ImageBuffer::new(128, 96, 3, base.data().iter().map(|v| v + 16).collect())?;
    let noisy = ImageBuffer::from_fn(128, 96, 3, |x, y, c| {
        let n = ((x * 7919 + y * 104729 + c as u32 * 31) % 21) as i32 - 10;
        (base.pixel(x, y)[c as usize] as i32 + n).clamp(0, 255) as u8
    });
    let mut blocky = base.clone();
    for y in 0..96 {
        for x in 0..128 {
            let src = base.pixel(x & !7, y & !7).to_vec();
            blocky.pixel_mut(x, y).copy_from_slice(&src);
        }
    }
    let pairs = vec![
        ImageQualityReport::compute("identical", &base, &base)?,
        ImageQualityReport::compute("shift +16", &base, &shift)?,
        ImageQualityReport::compute("noise +-10", &base, &noisy)?,
        ImageQualityReport::compute("8x8 blocks", &base, &blocky)?,
    ];
    for p in &pairs {
        println!("{:<12} PSNR {:>7.3} dB  SSIM {:.4}", p.name, p.psnr_db, p.ssim);
    }
    print!("{}", QualitySummary::from_pairs(pairs).table("synthetic"));
    Ok(())
}
