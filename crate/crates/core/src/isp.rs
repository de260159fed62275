//! Invertible camera ISP: white balance, color correction, gamma and tone
//! curve, plus RGGB mosaic / green-averaging demosaic and bit-depth quantization.
//!
//! Forward processing (RAW-RGB → sRGB) runs
//! `white balance → CCM → gamma → tone curve`; unprocessing runs the exact
//! inverse in reverse order. Every stage clips to `[0, 1]` and the fraction of
//! clipped values is reported on the resulting [`RawRgbImage`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_GAMMA: f64 = 1.0 / 2.2;
pub const DEFAULT_WB_GAINS: [f64; 3] = [2.0, 1.0, 1.6];
pub const SUPPORTED_BIT_DEPTHS: [u32; 4] = [8, 10, 12, 14];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ToneCurve {
    #[default]
    None,
    /// `s(x) = 3x² − 2x³`, inverted by bisection.
    Smoothstep,
}

impl ToneCurve {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ToneCurve::None => x,
            ToneCurve::Smoothstep => x * x * (3.0 - 2.0 * x),
        }
    }

    pub fn invert(self, y: f64) -> f64 {
        match self {
            ToneCurve::None => y,
            ToneCurve::Smoothstep => {
                let (mut lo, mut hi) = (0.0f64, 1.0f64);
                while hi - lo > 1e-13 {
                    let mid = 0.5 * (lo + hi);
                    if ToneCurve::Smoothstep.apply(mid) < y {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }
}

/// Parameters of the invertible ISP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IspParams {
    pub wb_gains: [f64; 3],
    /// Row `r` maps the white-balanced RGB vector to output channel `r`.
    pub ccm: [[f64; 3]; 3],
    pub gamma: f64,
    pub tone_curve: ToneCurve,
}

impl Default for IspParams {
    fn default() -> Self {
        Self {
            wb_gains: DEFAULT_WB_GAINS,
            ccm: IDENTITY3,
            gamma: DEFAULT_GAMMA,
            tone_curve: ToneCurve::None,
        }
    }
}

const IDENTITY3: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl IspParams {
    /// Unit gains, identity CCM, `γ = 1`, no tone curve.
    pub fn identity() -> Self {
        Self {
            wb_gains: [1.0; 3],
            ccm: IDENTITY3,
            gamma: 1.0,
            tone_curve: ToneCurve::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.wb_gains.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::Parameter(format!("wb_gains must be positive, got {:?}", self.wb_gains)));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::Parameter(format!("gamma must be positive, got {}", self.gamma)));
        }
        for (r, row) in self.ccm.iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parameter(format!("ccm row {r} is not finite")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::Parameter(format!("ccm row {r} sums to {s}, expected 1")));
            }
        }
        self.ccm_inverse().map(|_| ())
    }

    pub fn ccm_inverse(&self) -> Result<[[f64; 3]; 3]> {
        invert3(&self.ccm).ok_or_else(|| Error::Parameter("ccm is singular".into()))
    }
}

fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let c = |r0: usize, c0: usize, r1: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let cof = [
        [c(1, 1, 2, 2), -c(1, 0, 2, 2), c(1, 0, 2, 1)],
        [-c(0, 1, 2, 2), c(0, 0, 2, 2), -c(0, 0, 2, 1)],
        [c(0, 1, 1, 2), -c(0, 0, 1, 2), c(0, 0, 1, 1)],
    ];
    let det = m[0][0] * cof[0][0] + m[0][1] * cof[0][1] + m[0][2] * cof[0][2];
    let norm: f64 = m.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    if !det.is_finite() || det.abs() <= 1e-12 * norm.powi(3).max(1e-300) {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for (r, row) in inv.iter_mut().enumerate() {
        for (col, v) in row.iter_mut().enumerate() {
            // adjugate is the transposed cofactor matrix
            *v = cof[col][r] / det;
        }
    }
    Some(inv)
}

fn check_unit_range(t: &Tensor, what: &str) -> Result<()> {
    if let Some(v) = t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("{what} value {v} outside [0, 1]")));
    }
    Ok(())
}

fn check_rgb(t: &Tensor) -> Result<()> {
    let (c, _, _) = t.chw()?;
    if c != 3 {
        return Err(Error::dim("channels", 3, c));
    }
    Ok(())
}

/// Display-referred image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SrgbImage {
    pixels: Tensor,
    pub source_bit_depth: u32,
}

impl SrgbImage {
    pub fn new(pixels: Tensor, source_bit_depth: u32) -> Result<Self> {
        check_rgb(&pixels)?;
        check_unit_range(&pixels, "sRGB")?;
        Ok(Self {
            pixels,
            source_bit_depth,
        })
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn into_pixels(self) -> Tensor {
        self.pixels
    }
}

/// Linear demosaicked RAW-RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRgbImage {
    pixels: Tensor,
    pub bit_depth: u32,
    /// Fraction of values clipped to `[0, 1]` while producing this image.
    pub clip_fraction: f64,
}

impl RawRgbImage {
    pub fn new(pixels: Tensor, bit_depth: u32) -> Result<Self> {
        check_rgb(&pixels)?;
        check_unit_range(&pixels, "RAW")?;
        Ok(Self {
            pixels,
            bit_depth,
            clip_fraction: 0.0,
        })
    }

    /// Clamps `pixels` into `[0, 1]`, recording the clipped fraction.
    pub fn from_clipped(mut pixels: Tensor, bit_depth: u32) -> Result<Self> {
        check_rgb(&pixels)?;
        let mut mask = vec![false; pixels.len()];
        clip_into(pixels.data_mut(), &mut mask);
        Ok(Self {
            pixels,
            bit_depth,
            clip_fraction: fraction(&mask),
        })
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn into_pixels(self) -> Tensor {
        self.pixels
    }

    pub fn height(&self) -> usize {
        self.pixels.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.dims()[2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CfaPattern {
    #[default]
    Rggb,
}

/// Single-plane Bayer mosaic with even height and width.
#[derive(Debug, Clone, PartialEq)]
pub struct BayerImage {
    plane: Tensor,
    pub cfa: CfaPattern,
}

impl BayerImage {
    pub fn new(plane: Tensor) -> Result<Self> {
        let [h, w] = plane.dims()[..] else {
            return Err(Error::dim("ndim", 2, plane.ndim()));
        };
        if h % 2 != 0 {
            return Err(Error::dim("height", "even", h));
        }
        if w % 2 != 0 {
            return Err(Error::dim("width", "even", w));
        }
        Ok(Self {
            plane,
            cfa: CfaPattern::Rggb,
        })
    }

    pub fn plane(&self) -> &Tensor {
        &self.plane
    }
}

fn clip_into(values: &mut [f64], mask: &mut [bool]) {
    for (v, m) in values.iter_mut().zip(mask.iter_mut()) {
        if *v < 0.0 || *v > 1.0 || v.is_nan() {
            *m = true;
            *v = if *v > 1.0 { 1.0 } else { 0.0 };
        }
    }
}

fn fraction(mask: &[bool]) -> f64 {
    mask.iter().filter(|&&m| m).count() as f64 / mask.len().max(1) as f64
}

/// Elementwise `x^γ` on values in `[0, 1]`.
pub fn gamma_correct(img: &Tensor, gamma: f64) -> Result<Tensor> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::Parameter(format!("gamma must be positive, got {gamma}")));
    }
    check_unit_range(img, "gamma input")?;
    Ok(img.map(|v| v.powf(gamma)))
}

fn apply_matrix(px: &mut Tensor, m: &[[f64; 3]; 3]) {
    let plane = px.dims()[1] * px.dims()[2];
    let data = px.data_mut();
    for k in 0..plane {
        let rgb = [data[k], data[plane + k], data[2 * plane + k]];
        for (r, row) in m.iter().enumerate() {
            data[r * plane + k] = row[0] * rgb[0] + row[1] * rgb[1] + row[2] * rgb[2];
        }
    }
}

fn scale_channels(px: &mut Tensor, gains: [f64; 3], invert: bool) {
    for (c, g) in gains.into_iter().enumerate() {
        let k = if invert { 1.0 / g } else { g };
        for v in px.channel_mut(c) {
            *v *= k;
        }
    }
}

/// Inverts the ISP: sRGB → linear RAW-RGB.
pub fn unprocess(img: &SrgbImage, isp: &IspParams) -> Result<RawRgbImage> {
    isp.validate()?;
    let inv_ccm = isp.ccm_inverse()?;
    let mut px = img.pixels.clone();
    let mut mask = vec![false; px.len()];
    for v in px.data_mut() {
        *v = isp.tone_curve.invert(*v);
    }
    clip_into(px.data_mut(), &mut mask);
    let inv_gamma = 1.0 / isp.gamma;
    for v in px.data_mut() {
        *v = v.powf(inv_gamma);
    }
    apply_matrix(&mut px, &inv_ccm);
    clip_into(px.data_mut(), &mut mask);
    scale_channels(&mut px, isp.wb_gains, true);
    clip_into(px.data_mut(), &mut mask);
    Ok(RawRgbImage {
        pixels: px,
        bit_depth: 14,
        clip_fraction: fraction(&mask),
    })
}

/// Runs the ISP: linear RAW-RGB → sRGB.
pub fn process(raw: &RawRgbImage, isp: &IspParams) -> Result<SrgbImage> {
    isp.validate()?;
    let mut px = raw.pixels.clone();
    let mut mask = vec![false; px.len()];
    scale_channels(&mut px, isp.wb_gains, false);
    clip_into(px.data_mut(), &mut mask);
    apply_matrix(&mut px, &isp.ccm);
    clip_into(px.data_mut(), &mut mask);
    for v in px.data_mut() {
        *v = isp.tone_curve.apply(v.powf(isp.gamma));
    }
    clip_into(px.data_mut(), &mut mask);
    Ok(SrgbImage {
        pixels: px,
        source_bit_depth: 8,
    })
}

/// RGGB sampling of a 3-channel image.
pub fn mosaic(raw: &RawRgbImage) -> Result<BayerImage> {
    let (_, h, w) = raw.pixels.chw()?;
    if h % 2 != 0 {
        return Err(Error::dim("height", "even", h));
    }
    if w % 2 != 0 {
        return Err(Error::dim("width", "even", w));
    }
    let plane = Tensor::from_fn(&[h, w], |k| {
        let (y, x) = (k / w, k % w);
        let c = match (y % 2, x % 2) {
            (0, 0) => 0,
            (1, 1) => 2,
            _ => 1,
        };
        raw.pixels.at3(c, y, x)
    });
    BayerImage::new(plane)
}

/// Half-resolution demosaic: R and B from their sites, G as the mean of the two green sites.
pub fn demosaic_avg(bayer: &BayerImage) -> Result<RawRgbImage> {
    let [h, w] = bayer.plane.dims()[..] else {
        return Err(Error::dim("ndim", 2, bayer.plane.ndim()));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim("spatial", "even extents", format!("{h}×{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let p = bayer.plane.data();
    let mut out = Tensor::zeros(&[3, oh, ow]);
    let plane = oh * ow;
    let data = out.data_mut();
    for y in 0..oh {
        for x in 0..ow {
            let tl = p[2 * y * w + 2 * x];
            let tr = p[2 * y * w + 2 * x + 1];
            let bl = p[(2 * y + 1) * w + 2 * x];
            let br = p[(2 * y + 1) * w + 2 * x + 1];
            let k = y * ow + x;
            data[k] = tl;
            data[plane + k] = 0.5 * (tr + bl);
            data[2 * plane + k] = br;
        }
    }
    Ok(RawRgbImage {
        pixels: out,
        bit_depth: 14,
        clip_fraction: 0.0,
    })
}

/// Rounds `v` to the `2^bits − 1` level grid, ties to even.
pub fn quantize_value(v: f64, bits: u32) -> f64 {
    let levels = ((1u64 << bits) - 1) as f64;
    (v * levels).round_ties_even() / levels
}

pub fn quantize(raw: &RawRgbImage, bits: u32) -> Result<RawRgbImage> {
    if !SUPPORTED_BIT_DEPTHS.contains(&bits) {
        return Err(Error::Parameter(format!(
            "unsupported bit depth {bits}, expected one of {SUPPORTED_BIT_DEPTHS:?}"
        )));
    }
    Ok(RawRgbImage {
        pixels: raw.pixels.map(|v| quantize_value(v, bits)),
        bit_depth: bits,
        clip_fraction: raw.clip_fraction,
    })
}

/// Peak signal-to-noise ratio for unit peak; `+∞` for identical inputs.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    let mse = a.sub(b)?.sq_norm() / a.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

/// Loads an 8-bit RGB PNG (other color types are converted).
pub fn load_srgb_png(path: impl AsRef<Path>) -> Result<SrgbImage> {
    let img = image::open(path.as_ref())
        .map_err(|e| image_err(path.as_ref(), e))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut px = Tensor::zeros(&[3, h, w]);
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            px.data_mut()[(c * h + y as usize) * w + x as usize] = f64::from(p[c]) / 255.0;
        }
    }
    SrgbImage::new(px, 8)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a `3×H×W` tensor in `[0, 1]` as an 8-bit RGB PNG.
pub fn save_rgb_png(path: impl AsRef<Path>, px: &Tensor) -> Result<()> {
    let (c, h, w) = px.chw()?;
    if c != 3 {
        return Err(Error::dim("channels", 3, c));
    }
    let img = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        image::Rgb([0, 1, 2].map(|c| to_u8(px.at3(c, y, x))))
    });
    img.save_with_format(path.as_ref(), image::ImageFormat::Png)
        .map_err(|e| image_err(path.as_ref(), e))
}

/// Writes an `H×W` tensor as an 8-bit grayscale PNG, linearly mapping `[0, max]` to `[0, 255]`.
pub fn save_gray_png(path: impl AsRef<Path>, map: &Tensor, max: f64) -> Result<()> {
    let [h, w] = map.dims()[..] else {
        return Err(Error::dim("ndim", 2, map.ndim()));
    };
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    let img = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([to_u8(map.data()[y as usize * w + x as usize] * scale)])
    });
    img.save_with_format(path.as_ref(), image::ImageFormat::Png)
        .map_err(|e| image_err(path.as_ref(), e))
}

fn image_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// JSON sidecar stored next to a RAW `TNSR` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSidecar {
    pub bit_depth: u32,
    pub wb_gains: [f64; 3],
    pub ccm: [[f64; 3]; 3],
    pub gamma: f64,
    pub tone_curve: ToneCurve,
    pub clip_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl RawSidecar {
    pub fn new(raw: &RawRgbImage, isp: &IspParams, seed: Option<u64>) -> Self {
        Self {
            bit_depth: raw.bit_depth,
            wb_gains: isp.wb_gains,
            ccm: isp.ccm,
            gamma: isp.gamma,
            tone_curve: isp.tone_curve,
            clip_fraction: raw.clip_fraction,
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rgb(h: usize, w: usize, f: impl Fn(usize) -> f64) -> Tensor {
        Tensor::from_fn(&[3, h, w], f)
    }

    #[test]
    fn gamma_fixed_points_and_value() {
        let t = Tensor::new(&[3], vec![0.0, 1.0, 0.25]).unwrap();
        let g = gamma_correct(&t, DEFAULT_GAMMA).unwrap();
        assert_eq!(g.data()[0], 0.0);
        assert_eq!(g.data()[1], 1.0);
        // 0.25^(1/2.2) = 0.5325205447199813 (30-digit reference)
        assert!((g.data()[2] - 0.532_520_544_72).abs() < 1e-6);
    }

    #[test]
    fn gamma_inverse_pair() {
        let t = Tensor::from_fn(&[101], |i| i as f64 / 100.0);
        let back = gamma_correct(&gamma_correct(&t, 1.0 / 2.2).unwrap(), 2.2).unwrap();
        assert!(back.max_abs_diff(&t) < 1e-12);
    }

    #[test]
    fn gamma_domain_errors() {
        let t = Tensor::new(&[2], vec![0.5, 1.5]).unwrap();
        assert!(matches!(gamma_correct(&t, 0.5), Err(Error::Domain(_))));
        let ok = Tensor::new(&[1], vec![0.5]).unwrap();
        assert!(matches!(gamma_correct(&ok, 0.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn identity_isp_is_identity() {
        let px = rgb(4, 6, |i| (i as f64 * 0.013) % 1.0);
        let img = SrgbImage::new(px.clone(), 8).unwrap();
        let raw = unprocess(&img, &IspParams::identity()).unwrap();
        assert_eq!(raw.pixels(), &px);
        assert_eq!(raw.clip_fraction, 0.0);
        let back = process(&raw, &IspParams::identity()).unwrap();
        assert_eq!(back.pixels(), &px);
    }

    #[test]
    fn white_balance_division() {
        let isp = IspParams {
            wb_gains: [2.0, 1.0, 1.5],
            ..IspParams::identity()
        };
        let px = Tensor::new(&[3, 1, 1], vec![0.2, 0.2, 0.3]).unwrap();
        let raw = unprocess(&SrgbImage::new(px, 8).unwrap(), &isp).unwrap();
        let d = raw.pixels().data();
        assert!((d[0] - 0.1).abs() < 1e-15 && (d[1] - 0.2).abs() < 1e-15 && (d[2] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn process_gray_gamma() {
        let isp = IspParams {
            gamma: DEFAULT_GAMMA,
            ..IspParams::identity()
        };
        let raw = RawRgbImage::new(Tensor::full(&[3, 2, 2], 0.25), 14).unwrap();
        let s = process(&raw, &isp).unwrap();
        assert!(s.pixels().data().iter().all(|v| (v - 0.532_520_544_72).abs() < 1e-6));
    }

    #[test]
    fn singular_ccm_rejected() {
        let isp = IspParams {
            ccm: [[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0.0, 0.0, 1.0]],
            ..IspParams::default()
        };
        let img = SrgbImage::new(Tensor::full(&[3, 1, 1], 0.5), 8).unwrap();
        assert!(matches!(unprocess(&img, &isp), Err(Error::Parameter(_))));
    }

    #[test]
    fn ccm_inverse_round_trip() {
        let isp = IspParams {
            ccm: [[1.6, -0.4, -0.2], [-0.3, 1.5, -0.2], [0.1, -0.6, 1.5]],
            ..IspParams::default()
        };
        let inv = isp.ccm_inverse().unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let v: f64 = (0..3).map(|k| isp.ccm[r][k] * inv[k][c]).sum();
                assert!((v - if r == c { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clipping_is_reported() {
        let img = SrgbImage::new(Tensor::full(&[3, 2, 2], 1.0), 8).unwrap();
        let raw = unprocess(&img, &IspParams::default()).unwrap();
        assert_eq!(raw.clip_fraction, 0.0);
        let isp = IspParams {
            ccm: [[1.0, 0.0, 0.0], [0.5, 0.5, 0.0], [0.0, 0.0, 1.0]],
            ..IspParams::identity()
        };
        let px = Tensor::new(&[3, 1, 1], vec![1.0, 0.0, 0.5]).unwrap();
        let raw = unprocess(&SrgbImage::new(px, 8).unwrap(), &isp).unwrap();
        assert!(raw.clip_fraction > 0.0);
        assert!(raw.pixels().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn smoothstep_inverse() {
        for i in 0..=100 {
            let y = i as f64 / 100.0;
            let x = ToneCurve::Smoothstep.invert(y);
            assert!((ToneCurve::Smoothstep.apply(x) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn mosaic_examples() {
        let raw = RawRgbImage::new(Tensor::full(&[3, 4, 4], 0.3), 14).unwrap();
        assert!(mosaic(&raw).unwrap().plane().data().iter().all(|&v| v == 0.3));
        let px = Tensor::new(&[3, 2, 2], vec![0.1, 0.1, 0.1, 0.1, 0.2, 0.2, 0.2, 0.2, 0.3, 0.3, 0.3, 0.3]).unwrap();
        let b = mosaic(&RawRgbImage::new(px, 14).unwrap()).unwrap();
        assert_eq!(b.plane().data(), &[0.1, 0.2, 0.2, 0.3]);
        let odd = RawRgbImage::new(Tensor::zeros(&[3, 3, 4]), 14).unwrap();
        assert!(matches!(mosaic(&odd), Err(Error::Dimension { .. })));
    }

    #[test]
    fn demosaic_block() {
        let b = BayerImage::new(Tensor::new(&[2, 2], vec![1.0, 2.0, 4.0, 3.0]).unwrap()).unwrap();
        let rgb = demosaic_avg(&b).unwrap();
        assert_eq!(rgb.pixels().data(), &[1.0, 3.0, 3.0]);
        let c = BayerImage::new(Tensor::full(&[4, 6], 0.7)).unwrap();
        assert!(demosaic_avg(&c).unwrap().pixels().data().iter().all(|&v| v == 0.7));
        assert!(BayerImage::new(Tensor::zeros(&[3, 2])).is_err());
    }

    #[test]
    fn demosaic_matches_block_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (h, w) = (6, 8);
        let plane = Tensor::from_fn(&[h, w], |_| rng.gen());
        let out = demosaic_avg(&BayerImage::new(plane.clone()).unwrap()).unwrap();
        for by in 0..h / 2 {
            for bx in 0..w / 2 {
                let at = |y: usize, x: usize| plane.data()[y * w + x];
                let (y, x) = (2 * by, 2 * bx);
                assert_eq!(out.pixels().at3(0, by, bx), at(y, x));
                assert_eq!(out.pixels().at3(1, by, bx), (at(y, x + 1) + at(y + 1, x)) / 2.0);
                assert_eq!(out.pixels().at3(2, by, bx), at(y + 1, x + 1));
            }
        }
    }

    #[test]
    fn mosaic_demosaic_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (h, w) = (4, 6);
        let mut px = Tensor::from_fn(&[3, h, w], |_| rng.gen());
        // make G locally constant within each 2×2 block
        for y in 0..h {
            for x in 0..w {
                let v = px.at3(1, y - y % 2, x - x % 2);
                px.data_mut()[(h + y) * w + x] = v;
            }
        }
        let raw = RawRgbImage::new(px.clone(), 14).unwrap();
        let back = demosaic_avg(&mosaic(&raw).unwrap()).unwrap();
        for y in 0..h / 2 {
            for x in 0..w / 2 {
                assert_eq!(back.pixels().at3(0, y, x), px.at3(0, 2 * y, 2 * x));
                assert_eq!(back.pixels().at3(1, y, x), px.at3(1, 2 * y, 2 * x));
                assert_eq!(back.pixels().at3(2, y, x), px.at3(2, 2 * y + 1, 2 * x + 1));
            }
        }
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_value(1.0, 8), 1.0);
        assert_eq!(quantize_value(0.5, 1), 0.0);
        assert_eq!(quantize_value(1.5 / 3.0, 2), 2.0 / 3.0);
        let raw = RawRgbImage::new(Tensor::full(&[3, 1, 1], 0.5), 14).unwrap();
        assert!(matches!(quantize(&raw, 9), Err(Error::Parameter(_))));
        assert_eq!(quantize(&raw, 12).unwrap().bit_depth, 12);
    }

    #[test]
    fn quantize_error_bound_and_idempotence() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for bits in SUPPORTED_BIT_DEPTHS {
            let half_lsb = 0.5 / ((1u64 << bits) - 1) as f64;
            for _ in 0..250_000 {
                let v: f64 = rng.gen();
                let q = quantize_value(v, bits);
                assert!((q - v).abs() <= half_lsb * (1.0 + 1e-12));
                assert_eq!(quantize_value(q, bits), q);
            }
        }
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let t = Tensor::full(&[3, 2, 2], 0.4);
        assert_eq!(psnr(&t, &t).unwrap(), f64::INFINITY);
    }

    #[test]
    fn strict_config_parsing() {
        let err = serde_json::from_str::<IspParams>(r#"{"gamma": 0.5, "bogus": 1}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"));
        let p: IspParams = serde_json::from_str(r#"{"tone_curve": "smoothstep"}"#).unwrap();
        assert_eq!(p.tone_curve, ToneCurve::Smoothstep);
        assert_eq!(p.wb_gains, DEFAULT_WB_GAINS);
    }
}
