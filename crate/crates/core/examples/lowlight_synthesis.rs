//! Synthesizes a low-light RAW pair from a rendered shape image at several
//! darkening factors and prints the noise it adds.
//!
//! ```text
//! cargo run --example lowlight_synthesis -- [out_dir]
//! ```

use lowlight::dsl::render_shape;
use lowlight::isp::{self, IspParams};
use lowlight::noise::{self, NoiseParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lowlight::Result<()> {
    let out_dir = std::env::args().nth(1);
    let isp_params = IspParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let srgb = render_shape(0, 64, &mut rng)?;

    println!("factor  raw_psnr_db  rendered_psnr_db");
    for factor in [1.0, 10.0, 50.0, 100.0, 200.0] {
        let params = NoiseParams {
            low_light_factor: factor,
            ..NoiseParams::default()
        };
        let pair = noise::synthesize_lowlight(&srgb, &isp_params, &params)?;
        let clean = isp::process(&pair.clean, &isp_params)?;
        let noisy = isp::process(&pair.noisy, &isp_params)?;
        println!(
            "{factor:>6}  {:>11.2}  {:>16.2}",
            isp::psnr(pair.clean.pixels(), pair.noisy.pixels())?,
            isp::psnr(clean.pixels(), noisy.pixels())?
        );
        if let Some(dir) = &out_dir {
            let path = std::path::Path::new(dir).join(format!("lowlight_x{factor}.png"));
            isp::save_rgb_png(&path, noisy.pixels())?;
        }
    }
    Ok(())
}
