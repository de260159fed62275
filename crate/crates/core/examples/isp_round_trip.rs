//! Unprocesses a synthetic sRGB image to linear RAW, mosaics and demosaics it,
//! and renders it back, reporting PSNR at each step.
//!
//! ```text
//! cargo run --example isp_round_trip -- [tone_curve: none|smoothstep]
//! ```

use lowlight::isp::{self, IspParams, SrgbImage, ToneCurve};
use lowlight::Tensor;

fn main() -> lowlight::Result<()> {
    let tone_curve = match std::env::args().nth(1).as_deref() {
        Some("smoothstep") => ToneCurve::Smoothstep,
        _ => ToneCurve::None,
    };
    let params = IspParams {
        tone_curve,
        ..IspParams::default()
    };
    let (h, w) = (48, 64);
    let px = Tensor::from_fn(&[3, h, w], |i| {
        let (c, y, x) = (i / (h * w), (i / w) % h, i % w);
        0.1 + 0.8 * (0.5 + 0.5 * ((x as f64) * 0.11 + (y as f64) * 0.07 + c as f64).sin())
    });
    let srgb = SrgbImage::new(px, 8)?;

    let raw = isp::unprocess(&srgb, &params)?;
    let back = isp::process(&raw, &params)?;
    println!("tone curve {tone_curve:?}");
    println!("process(unprocess(x)) PSNR: {:.2} dB", isp::psnr(srgb.pixels(), back.pixels())?);

    let bayer = isp::mosaic(&raw)?;
    let demosaiced = isp::demosaic_avg(&bayer)?;
    let (dh, dw) = (demosaiced.height(), demosaiced.width());
    let sites = Tensor::from_fn(&[3, dh, dw], |i| {
        let (c, y, x) = (i / (dh * dw), (i / dw) % dh, i % dw);
        match c {
            0 => raw.pixels().at3(0, 2 * y, 2 * x),
            2 => raw.pixels().at3(2, 2 * y + 1, 2 * x + 1),
            _ => 0.5 * (raw.pixels().at3(1, 2 * y, 2 * x + 1) + raw.pixels().at3(1, 2 * y + 1, 2 * x)),
        }
    });
    println!(
        "RGGB mosaic {:?} -> half-resolution demosaic {:?}, PSNR vs RAW sites: {:.2} dB",
        bayer.plane().dims(),
        demosaiced.pixels().dims(),
        isp::psnr(&sites, demosaiced.pixels())?
    );

    let g = isp::gamma_correct(&isp::gamma_correct(srgb.pixels(), 1.0 / 2.2)?, 2.2)?;
    println!("gamma 1/2.2 then 2.2 max error: {:.2e}", g.max_abs_diff(srgb.pixels()));
    Ok(())
}
