//! Trains the toy network with and without the disturbance term and compares
//! held-out feature disturbance.
//!
//! ```text
//! cargo run --release --example dsl_toy_training -- [seeds] [epochs] [learning_rate]
//! ```

use std::time::Instant;

use lowlight::dsl::{self, DslConfig, ShapesConfig, SHAPE_CLASSES};

fn main() -> lowlight::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(DslConfig::default().epochs);
    let learning_rate: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(DslConfig::default().learning_rate);

    let data_cfg = ShapesConfig::default();
    let (train, heldout) = dsl::shapes_dataset(&data_cfg)?;
    println!("train pairs {}, held-out pairs {}", train.len(), heldout.len());

    for seed in 0..seeds {
        let mut row = Vec::new();
        for beta in [0.0, 0.01] {
            let cfg = DslConfig {
                beta,
                epochs,
                learning_rate,
                seed,
                ..DslConfig::default()
            };
            let start = Instant::now();
            let (_, metrics) = dsl::train_toy(&train, &heldout, SHAPE_CLASSES.len(), &cfg)?;
            let last = metrics.last().copied();
            if let Some(m) = last {
                println!(
                    "seed {seed} beta {beta:<5} clean {:.3} noisy {:.3} disturbance {:.4} loss {:.4} ({:.1}s)",
                    m.clean_acc,
                    m.noisy_acc,
                    m.mean_disturbance,
                    m.loss,
                    start.elapsed().as_secs_f64()
                );
            }
            row.push(last);
        }
        if let [Some(a), Some(b)] = row[..] {
            println!(
                "seed {seed}: disturbance ratio {:.3}, noisy accuracy change {:+.3}",
                b.mean_disturbance / a.mean_disturbance,
                b.noisy_acc - a.noisy_acc
            );
        }
    }
    Ok(())
}
