//! Builds random smooth-oriented blocks and checks that the folded single
//! 3×3 convolution reproduces the training-time block.
//!
//! ```text
//! cargo run --example scb_fold -- [instances]
//! ```

use lowlight::scb::{self, ScbParams, SmoothInit};
use lowlight::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> lowlight::Result<()> {
    let n: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    println!("c1 c2  h  w  max_abs_diff");
    let mut worst = 0.0_f64;
    for seed in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c1, c2) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let (h, w) = (rng.gen_range(3..=16), rng.gen_range(3..=16));
        let mut params = ScbParams::init(c1, c2, SmoothInit::Gaussian, &mut rng);
        for v in params.sconv_logits.data_mut() {
            *v += rng.gen_range(-2.0..2.0);
        }
        let x = Tensor::from_fn(&[c1, h, w], |_| rng.gen_range(-1.0..1.0));
        let (train, _) = scb::scb_forward_train(&x, &params)?;
        let folded = scb::fold(&params)?;
        let infer = scb::scb_forward_infer(&x, &folded)?;
        let diff = train.max_abs_diff(&infer);
        worst = worst.max(diff);
        println!("{c1:>2} {c2:>2} {h:>2} {w:>2}  {diff:.2e}");
    }
    println!("worst {worst:.2e}");
    Ok(())
}
