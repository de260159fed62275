//! Downsamples a noisy feature map with every compared filter and prints the
//! residual against the clean downsample, plus AWD's weight statistics.
//!
//! ```text
//! cargo run --release --example awd_downsample -- [kernel_size]
//! ```

use lowlight::awd::{self, AwdParams, SweepFilters};
use lowlight::noise::add_gaussian;
use lowlight::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lowlight::Result<()> {
    let k: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (c, h, w) = (8, 64, 64);
    let clean = Tensor::from_fn(&[c, h, w], |i| {
        let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
        0.5 + 0.3 * ((x as f64) * 0.2 + ch as f64).sin() * ((y as f64) * 0.15).cos()
    });
    let sigma = 60.0 / 255.0;
    let noisy = add_gaussian(&clean, sigma, &mut rng);

    println!("kernel {k}, noise sigma {sigma:.4}");
    println!("{:<16} residual_mse", "filter");
    for d in awd::filter_sweep(c, k, &SweepFilters::default(), &mut rng)? {
        let residual = d.apply(&noisy)?.sub(&d.apply(&clean)?)?;
        println!("{:<16} {:.6}", d.name(), residual.sq_norm() / residual.len() as f64);
    }

    let params = AwdParams::random(c, k, 4, 1.0, &mut rng)?;
    let (y, weights, _) = awd::awd_forward(&noisy, &params)?;
    let (sum_err, min_w) = weights.normalization_report();
    let std_map = awd::weight_std_map(&weights);
    println!(
        "awd output {:?}; weights max |sum - 1| {sum_err:.1e}, min {min_w:.3e}; mean weight std {:.4} (one-hot {:.4})",
        y.dims(),
        std_map.data().iter().sum::<f64>() / std_map.len() as f64,
        awd::one_hot_std(k * k)
    );
    Ok(())
}
