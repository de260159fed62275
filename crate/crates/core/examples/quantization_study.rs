//! PSNR of RAW quantization at each supported bit depth, against the
//! uniform-quantization prediction `10·log10(12·(2^b − 1)²)`.
//!
//! ```text
//! cargo run --example quantization_study
//! ```

use lowlight::isp::{self, RawRgbImage, SUPPORTED_BIT_DEPTHS};
use lowlight::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> lowlight::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let px = Tensor::from_fn(&[3, 256, 256], |_| rng.gen_range(0.0..1.0));
    let raw = RawRgbImage::new(px.clone(), 14)?;
    println!("bits  psnr_db  predicted_db");
    for bits in SUPPORTED_BIT_DEPTHS {
        let q = isp::quantize(&raw, bits)?;
        let levels = ((1u64 << bits) - 1) as f64;
        println!(
            "{bits:>4}  {:>7.2}  {:>12.2}",
            isp::psnr(&px, q.pixels())?,
            10.0 * (12.0 * levels * levels).log10()
        );
    }
    Ok(())
}
