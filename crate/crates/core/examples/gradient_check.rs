//! Compares the AWD and SCB backward passes with central finite differences
//! on one small random instance.
//!
//! ```text
//! cargo run --example gradient_check -- [seed]
//! ```

use lowlight::awd::{self, AwdParams};
use lowlight::gradcheck::{finite_diff_grad, relative_error};
use lowlight::scb::{self, ScbParams, SmoothInit};
use lowlight::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> lowlight::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = 1e-5;

    let awd_params = AwdParams::random(4, 3, 2, 0.5, &mut rng)?;
    let x = Tensor::from_fn(&[4, 7, 6], |_| rng.gen_range(-1.0..1.0));
    let (y, _, cache) = awd::awd_forward(&x, &awd_params)?;
    let probe = Tensor::from_fn(y.dims(), |_| rng.gen_range(-1.0..1.0));
    let (dx, _) = awd::awd_backward(&awd_params, &cache, &probe)?;
    let numeric = finite_diff_grad(
        |t| {
            let y = awd::awd_forward(t, &awd_params).unwrap().0;
            y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        },
        &x,
        eps,
    )?;
    println!("awd input gradient relative error: {:.2e}", relative_error(dx.data(), numeric.data()));

    let scb_params = ScbParams::init(3, 5, SmoothInit::Mean, &mut rng);
    let x = Tensor::from_fn(&[3, 6, 6], |_| rng.gen_range(-1.0..1.0));
    let (y, cache) = scb::scb_forward_train(&x, &scb_params)?;
    let probe = Tensor::from_fn(y.dims(), |_| rng.gen_range(-1.0..1.0));
    let (_, grads) = scb::scb_backward(&scb_params, &cache, &probe)?;
    let numeric = finite_diff_grad(
        |t| {
            let mut p = scb_params.clone();
            p.sconv_logits = t.clone();
            let y = scb::scb_forward_train(&x, &p).unwrap().0;
            y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        },
        &scb_params.sconv_logits,
        eps,
    )?;
    println!(
        "scb smoothing-logit gradient relative error: {:.2e}",
        relative_error(grads.sconv_logits.data(), numeric.data())
    );
    Ok(())
}
