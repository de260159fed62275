//! Seeded physics-based low-light noise: exposure darkening, shot / read /
//! row / quantization noise, and digital gain.
//!
//! Noise levels are configured in digital numbers (DN) of an ADC with
//! `adc_bits` of precision and normalized to the `[0, 1]` scale by the white
//! level `2^adc_bits − 1`. For a clean normalized value `v`:
//!
//! ```text
//! v' = K'·Poisson(v / K') + N(0, σ_read'²) + R_row + U(−q/2, q/2)
//! ```
//!
//! where `K'` is the normalized system gain, `R_row ~ N(0, σ_row'²)` is drawn
//! once per row and channel, and `q = 1 / (2^adc_bits − 1)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::isp::{self, IspParams, RawRgbImage, SrgbImage};
use crate::tensor::Tensor;

/// Means below this are sampled by sequential inverse-transform search.
pub const INVERSE_TRANSFORM_MAX_MEAN: f64 = 30.0;
/// Means at or above this use the rounded normal approximation.
pub const NORMAL_APPROX_MIN_MEAN: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadNoiseKind {
    #[default]
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseParams {
    /// DN per photoelectron. Zero disables shot noise.
    pub system_gain_k: f64,
    /// Read noise standard deviation in DN.
    pub read_sigma: f64,
    /// Per-row banding standard deviation in DN.
    pub row_sigma: f64,
    /// ADC precision. Zero disables quantization noise (and DN normalization
    /// then falls back to 14 bits).
    pub adc_bits: u32,
    pub low_light_factor: f64,
    pub seed: u64,
    pub read_noise: ReadNoiseKind,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            system_gain_k: 4.0,
            read_sigma: 6.0,
            row_sigma: 2.0,
            adc_bits: 14,
            low_light_factor: 50.0,
            seed: 0,
            read_noise: ReadNoiseKind::Gaussian,
        }
    }
}

impl NoiseParams {
    /// All noise sources disabled, unit low-light factor.
    pub fn noiseless() -> Self {
        Self {
            system_gain_k: 0.0,
            read_sigma: 0.0,
            row_sigma: 0.0,
            adc_bits: 0,
            low_light_factor: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Parameter(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        finite_nonneg("system_gain_k", self.system_gain_k)?;
        finite_nonneg("read_sigma", self.read_sigma)?;
        finite_nonneg("row_sigma", self.row_sigma)?;
        if self.adc_bits > 52 {
            return Err(Error::Parameter(format!("adc_bits must be <= 52, got {}", self.adc_bits)));
        }
        if !(self.low_light_factor.is_finite() && self.low_light_factor >= 1.0) {
            return Err(Error::Parameter(format!(
                "low_light_factor must be >= 1, got {}",
                self.low_light_factor
            )));
        }
        Ok(())
    }

    /// DN value of a normalized 1.0.
    pub fn white_level(&self) -> f64 {
        let bits = if self.adc_bits == 0 { 14 } else { self.adc_bits };
        2f64.powi(bits as i32) - 1.0
    }

    /// System gain on the normalized scale (variance/mean ratio of shot noise).
    pub fn normalized_gain(&self) -> f64 {
        self.system_gain_k / self.white_level()
    }

    pub fn normalized_read_sigma(&self) -> f64 {
        self.read_sigma / self.white_level()
    }

    pub fn normalized_row_sigma(&self) -> f64 {
        self.row_sigma / self.white_level()
    }

    /// Quantization step, or zero when quantization noise is disabled.
    pub fn quantization_step(&self) -> f64 {
        if self.adc_bits == 0 {
            0.0
        } else {
            1.0 / self.white_level()
        }
    }
}

/// Generator for image `image_id` under `seed`; distinct ids get independent streams.
pub fn noise_rng(seed: u64, image_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(image_id);
    rng
}

/// Draws a Poisson variate with the given mean.
///
/// Inverse-transform search below [`INVERSE_TRANSFORM_MAX_MEAN`], the
/// `rand_distr` sampler up to [`NORMAL_APPROX_MIN_MEAN`], and a rounded
/// normal approximation above.
pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    if mean < INVERSE_TRANSFORM_MAX_MEAN {
        let u: f64 = rng.gen();
        let mut p = (-mean).exp();
        let mut cdf = p;
        let mut k = 0u32;
        while u > cdf && k < 1000 {
            k += 1;
            p *= mean / f64::from(k);
            cdf += p;
        }
        f64::from(k)
    } else if mean < NORMAL_APPROX_MIN_MEAN {
        Poisson::new(mean).expect("positive finite mean").sample(rng)
    } else {
        let z: f64 = StandardNormal.sample(rng);
        (mean + mean.sqrt() * z).round().max(0.0)
    }
}

/// Divides by the low-light factor to simulate a shorter exposure.
pub fn darken(raw: &RawRgbImage, factor: f64) -> Result<RawRgbImage> {
    if !(factor.is_finite() && factor >= 1.0) {
        return Err(Error::Parameter(format!("darken factor must be >= 1, got {factor}")));
    }
    let mut out = RawRgbImage::new(raw.pixels().map(|v| v / factor), raw.bit_depth)?;
    out.clip_fraction = raw.clip_fraction;
    Ok(out)
}

/// Digital gain, clipped to `[0, 1]`.
pub fn amplify(raw: &RawRgbImage, factor: f64) -> Result<RawRgbImage> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::Parameter(format!("amplify factor must be positive, got {factor}")));
    }
    RawRgbImage::from_clipped(raw.pixels().map(|v| v * factor), raw.bit_depth)
}

/// Noisy values before clipping. Exposed for noise-statistics measurements.
pub fn noisy_values_unclipped(clean: &Tensor, params: &NoiseParams, image_id: u64) -> Result<Tensor> {
    params.validate()?;
    let (c, h, w) = clean.chw()?;
    let gain = params.normalized_gain();
    let read = params.normalized_read_sigma();
    let row = params.normalized_row_sigma();
    let q = params.quantization_step();
    let mut rng = noise_rng(params.seed, image_id);
    let mut out = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        let src = clean.channel(ch);
        let dst = out.channel_mut(ch);
        for y in 0..h {
            let row_offset = if row > 0.0 {
                row * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            for x in 0..w {
                let v = src[y * w + x];
                let mut n = if gain > 0.0 {
                    gain * sample_poisson(&mut rng, v.max(0.0) / gain)
                } else {
                    v
                };
                if read > 0.0 {
                    n += read * rng.sample::<f64, _>(StandardNormal);
                }
                n += row_offset;
                if q > 0.0 {
                    n += q * (rng.gen::<f64>() - 0.5);
                }
                dst[y * w + x] = n;
            }
        }
    }
    Ok(out)
}

pub fn inject_noise(clean: &RawRgbImage, params: &NoiseParams) -> Result<RawRgbImage> {
    inject_noise_for(clean, params, 0)
}

/// [`inject_noise`] on the independent noise stream of `image_id`.
pub fn inject_noise_for(clean: &RawRgbImage, params: &NoiseParams, image_id: u64) -> Result<RawRgbImage> {
    let noisy = noisy_values_unclipped(clean.pixels(), params, image_id)?;
    RawRgbImage::from_clipped(noisy, clean.bit_depth)
}

/// Clean/noisy RAW pair for paired training.
#[derive(Debug, Clone)]
pub struct LowLightPair {
    pub clean: RawRgbImage,
    pub noisy: RawRgbImage,
}

/// `x = unprocess(srgb)`, `x' = amplify(inject_noise(darken(x, f)), f)`.
pub fn synthesize_lowlight(srgb: &SrgbImage, isp: &IspParams, noise: &NoiseParams) -> Result<LowLightPair> {
    synthesize_lowlight_for(srgb, isp, noise, 0)
}

pub fn synthesize_lowlight_for(
    srgb: &SrgbImage,
    isp: &IspParams,
    noise: &NoiseParams,
    image_id: u64,
) -> Result<LowLightPair> {
    noise.validate()?;
    let clean = isp::unprocess(srgb, isp)?;
    let factor = noise.low_light_factor;
    let dark = darken(&clean, factor)?;
    let noisy = inject_noise_for(&dark, noise, image_id)?;
    let noisy = amplify(&noisy, factor)?;
    Ok(LowLightPair { clean, noisy })
}

/// Adds iid `N(0, σ²)` noise, without clipping.
pub fn add_gaussian<R: Rng + ?Sized>(t: &Tensor, sigma: f64, rng: &mut R) -> Tensor {
    let mut out = t.clone();
    for v in out.data_mut() {
        *v += sigma * rng.sample::<f64, _>(StandardNormal);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(px: Tensor) -> RawRgbImage {
        RawRgbImage::new(px, 14).unwrap()
    }

    #[test]
    fn darken_and_amplify() {
        let x = raw(Tensor::full(&[3, 2, 2], 0.5));
        assert_eq!(darken(&x, 1.0).unwrap().pixels(), x.pixels());
        let d = darken(&x, 50.0).unwrap();
        assert!(d.pixels().data().iter().all(|v| (v - 0.01).abs() < 1e-15));
        let a = amplify(&raw(Tensor::full(&[3, 1, 1], 0.01)), 50.0).unwrap();
        assert!(a.pixels().data().iter().all(|v| (v - 0.5).abs() < 1e-15));
        assert_eq!(amplify(&x, 1.0).unwrap().pixels(), x.pixels());
        assert!(matches!(darken(&x, 0.5), Err(Error::Parameter(_))));
        assert!(matches!(amplify(&x, 0.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn darken_amplify_inverse_pair() {
        let x = raw(Tensor::from_fn(&[3, 4, 4], |i| i as f64 / 48.0));
        let back = amplify(&darken(&x, 37.0).unwrap(), 37.0).unwrap();
        assert!(back.pixels().max_abs_diff(x.pixels()) < 1e-12);
    }

    #[test]
    fn vanishing_gain_preserves_signal() {
        let x = raw(Tensor::from_fn(&[3, 8, 8], |i| (i as f64 * 0.37) % 1.0));
        let p = NoiseParams {
            system_gain_k: 1e-9,
            read_sigma: 0.0,
            row_sigma: 0.0,
            adc_bits: 40,
            ..NoiseParams::default()
        };
        let y = inject_noise(&x, &p).unwrap();
        assert!(y.pixels().max_abs_diff(x.pixels()) < 1e-5);
    }

    #[test]
    fn degenerate_pipeline_is_identity() {
        let s = SrgbImage::new(Tensor::from_fn(&[3, 4, 6], |i| (i as f64 * 0.11) % 1.0), 8).unwrap();
        let pair = synthesize_lowlight(&s, &IspParams::default(), &NoiseParams::noiseless()).unwrap();
        assert_eq!(pair.clean.pixels(), pair.noisy.pixels());
    }

    #[test]
    fn deterministic_under_seed() {
        let s = SrgbImage::new(Tensor::full(&[3, 8, 8], 0.6), 8).unwrap();
        let p = NoiseParams::default();
        let a = synthesize_lowlight(&s, &IspParams::default(), &p).unwrap();
        let b = synthesize_lowlight(&s, &IspParams::default(), &p).unwrap();
        assert_eq!(a.noisy.pixels(), b.noisy.pixels());
        let c = synthesize_lowlight_for(&s, &IspParams::default(), &p, 1).unwrap();
        assert_ne!(a.noisy.pixels(), c.noisy.pixels());
    }

    #[test]
    fn invalid_params() {
        let x = raw(Tensor::zeros(&[3, 1, 1]));
        for p in [
            NoiseParams { system_gain_k: f64::NAN, ..NoiseParams::default() },
            NoiseParams { read_sigma: -1.0, ..NoiseParams::default() },
            NoiseParams { low_light_factor: 0.5, ..NoiseParams::default() },
            NoiseParams { adc_bits: 60, ..NoiseParams::default() },
        ] {
            assert!(matches!(inject_noise(&x, &p), Err(Error::Parameter(_))));
        }
    }

    fn moments(samples: impl Iterator<Item = f64>) -> (f64, f64) {
        let v: Vec<f64> = samples.collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn poisson_moments_across_crossovers() {
        let mut rng = noise_rng(5, 0);
        for mean in [0.5, 29.9, 30.0, 500.0, 9_999.0, 10_000.0, 50_000.0] {
            let (m, v) = moments((0..40_000).map(|_| sample_poisson(&mut rng, mean)));
            let se_mean = (mean / 40_000.0).sqrt();
            assert!((m - mean).abs() < 5.0 * se_mean, "mean {mean}: got {m}");
            assert!((v / mean - 1.0).abs() < 0.05, "mean {mean}: var {v}");
        }
        assert_eq!(sample_poisson(&mut rng, 0.0), 0.0);
    }

    #[test]
    fn noise_grows_with_factor() {
        let s = SrgbImage::new(Tensor::from_fn(&[3, 32, 32], |i| 0.2 + 0.6 * ((i * 7919) % 101) as f64 / 100.0), 8).unwrap();
        let mut last = 0.0;
        for f in [10.0, 20.0, 50.0, 100.0] {
            let p = NoiseParams {
                low_light_factor: f,
                ..NoiseParams::default()
            };
            let pair = synthesize_lowlight(&s, &IspParams::default(), &p).unwrap();
            let mad = pair.noisy.pixels().sub(pair.clean.pixels()).unwrap().map(f64::abs).mean();
            assert!(mad > last, "factor {f}: {mad} <= {last}");
            last = mad;
        }
    }
}
