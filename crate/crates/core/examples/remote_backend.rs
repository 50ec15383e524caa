//! Talks to a model service over the JSON wire protocol.
//!
//! `ROAR_BACKEND_URL=http://host:port cargo run --example remote_backend`

use roar::backends::{self, BackendEndpoint, InpaintRequest, RemoteBackend, ENV_BACKEND_URL};
use roar::imaging::{composite, BinaryMask, ImageBuffer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let Some(endpoint) = BackendEndpoint::from_env() else {
        println!("{ENV_BACKEND_URL} is not set; nothing to talk to.");
        return Ok(());
    };
    let client = RemoteBackend::new(endpoint);
    let health = client.health()?;
    println!("service healthy, models: {:?}", health.model_info);

    let img = ImageBuffer::from_fn(128, 96, 3, |x, y, c| ((x + y + c as u32 * 70) % 256) as u8);
    let mask = BinaryMask::from_fn(128, 96, |x, y| (40..88).contains(&x) && (20..76).contains(&y));
    let req = InpaintRequest::new(img.clone(), mask.clone(), 3407)?.with_prompt("generic background");
    let filled = composite(&img, &mask, &backends::inpaint(&client, &req)?)?;
    println!("inpainted request {}", req.request_id());

    for d in backends::detect(&client, 0, &filled, 0.5)? {
        println!("  category {} score {:.2} at {:?}", d.category_id, d.score, d.bbox);
    }
    match client.lpips(&img, &filled) {
        Ok(v) => println!("LPIPS {v:.4}"),
        Err(e) => println!("LPIPS unavailable: {e}"),
    }
    Ok(())
}
