//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 invariant violation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::awd::{self, SweepFilters};
use crate::dsl::{self, DisturbanceConfig, DslConfig, ShapesConfig, SHAPE_CLASSES};
use crate::error::Error;
use crate::isp::{self, IspParams, RawRgbImage, RawSidecar};
use crate::noise::{self, NoiseParams};
use crate::scb::{self, ScbParams, SmoothInit};
use crate::tensor::Tensor;
use crate::tnsr;

/// Largest train/infer divergence `fold-check` accepts.
pub const FOLD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(name = "lowlight", version, about = "Low-light RAW synthesis and noise-robust layer tools")]
pub struct Cli {
    /// Overrides the seed in any config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Unprocess an sRGB PNG to RAW and synthesize its low-light noisy twin.
    Synth {
        /// Input 8-bit sRGB PNG.
        #[arg(long)]
        input: PathBuf,
        /// ISP parameters (JSON); defaults when omitted.
        #[arg(long)]
        isp: Option<PathBuf>,
        /// Noise parameters (JSON); defaults when omitted.
        #[arg(long)]
        noise: Option<PathBuf>,
        /// Writes <prefix>_clean.{tnsr,json,png} and <prefix>_noisy.{tnsr,json,png}.
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// PSNR of a RAW tensor after quantization to each bit depth.
    Quantize {
        /// RAW TNSR file, 3×H×W in [0, 1].
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated bit depths.
        #[arg(long, value_delimiter = ',', default_value = "8,10,12,14")]
        bits: Vec<u32>,
        /// Writes <prefix>.csv and <prefix>_<bits>bit.tnsr.
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// Feature disturbance of every downsampling filter at every kernel size.
    AwdDemo {
        /// Clean feature map: TNSR (C×H×W) or PNG.
        #[arg(long)]
        input: PathBuf,
        /// Noisy counterpart; Gaussian noise is added to the input when omitted.
        #[arg(long)]
        noisy: Option<PathBuf>,
        /// Demo settings (JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Writes <prefix>.csv, <prefix>_awd_k<k>.tnsr and <prefix>_awd_k<k>_std.png.
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// Checks that folded SCB inference matches the training-time block.
    FoldCheck {
        /// Number of random instances.
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Per-instance CSV: instance, c1, c2, h, w, max_abs_diff.
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains the toy network on the synthetic shapes task.
    TrainToy {
        /// Training config (JSON) with optional "dsl" and "data" sections.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Per-epoch metrics CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Disturbance of fixed and learned downsamplers inside a random two-layer conv net.
    Disturbance {
        /// Sweep config (JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV: trial, filter, kernel, disturbance.
        #[arg(long)]
        out: PathBuf,
    },
}

/// A failure mapped to a process exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Invariant(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Invariant(m) => write!(f, "invariant violation: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Format(_) => CliError::Io(e.to_string()),
            Error::Numeric(_) => CliError::Invariant(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

/// Reads a JSON config, rejecting unknown keys; `None` yields the defaults.
pub fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| io_err(path, e))
}

fn csv_row<I, S>(w: &mut csv::Writer<fs::File>, row: I) -> CliResult
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| CliError::Io(e.to_string()))
}

fn csv_finish(mut w: csv::Writer<fs::File>) -> CliResult {
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

/// Parses arguments, runs the command, reports errors on stderr.
pub fn main_from_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lowlight: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Synth {
            input,
            isp,
            noise,
            out_prefix,
        } => cmd_synth(input, isp.as_deref(), noise.as_deref(), out_prefix, cli.seed),
        Command::Quantize {
            input,
            bits,
            out_prefix,
        } => cmd_quantize(input, bits, out_prefix),
        Command::AwdDemo {
            input,
            noisy,
            config,
            out_prefix,
        } => cmd_awd_demo(input, noisy.as_deref(), config.as_deref(), out_prefix, cli.seed),
        Command::FoldCheck { n, out } => cmd_fold_check(*n, out, cli.seed.unwrap_or(0)),
        Command::TrainToy { config, out } => cmd_train_toy(config.as_deref(), out, cli.seed),
        Command::Disturbance { config, out } => cmd_disturbance(config.as_deref(), out, cli.seed),
    }
}

fn save_raw(prefix: &Path, suffix: &str, raw: &RawRgbImage, isp_params: &IspParams, seed: Option<u64>) -> CliResult {
    tnsr::save(with_suffix(prefix, &format!("{suffix}.tnsr")), raw.pixels())?;
    write_json(
        &with_suffix(prefix, &format!("{suffix}.json")),
        &RawSidecar::new(raw, isp_params, seed),
    )?;
    let preview = isp::process(raw, isp_params)?;
    isp::save_rgb_png(with_suffix(prefix, &format!("{suffix}.png")), preview.pixels())?;
    Ok(())
}

pub fn cmd_synth(
    input: &Path,
    isp_path: Option<&Path>,
    noise_path: Option<&Path>,
    out_prefix: &Path,
    seed: Option<u64>,
) -> CliResult {
    let isp_params: IspParams = read_config(isp_path)?;
    let mut noise_params: NoiseParams = read_config(noise_path)?;
    if let Some(s) = seed {
        noise_params.seed = s;
    }
    isp_params.validate()?;
    noise_params.validate()?;
    let srgb = isp::load_srgb_png(input)?;
    let pair = noise::synthesize_lowlight(&srgb, &isp_params, &noise_params)?;
    save_raw(out_prefix, "_clean", &pair.clean, &isp_params, None)?;
    save_raw(out_prefix, "_noisy", &pair.noisy, &isp_params, Some(noise_params.seed))?;
    Ok(())
}

/// `"inf"` for lossless quantization, otherwise the PSNR in dB.
pub fn format_psnr(p: f64) -> String {
    if p.is_infinite() {
        "inf".to_string()
    } else {
        p.to_string()
    }
}

pub fn cmd_quantize(input: &Path, bits: &[u32], out_prefix: &Path) -> CliResult {
    if bits.is_empty() {
        return Err(CliError::Config("no bit depths given".into()));
    }
    if let Some(b) = bits.iter().find(|b| !isp::SUPPORTED_BIT_DEPTHS.contains(b)) {
        return Err(CliError::Config(format!(
            "bit depth {b} not in {:?}",
            isp::SUPPORTED_BIT_DEPTHS
        )));
    }
    let raw = RawRgbImage::new(tnsr::load(input)?, 14)?;
    let mut w = csv_writer(&with_suffix(out_prefix, ".csv"))?;
    csv_row(&mut w, ["bits", "psnr_db"])?;
    for &b in bits {
        let q = isp::quantize(&raw, b)?;
        let p = isp::psnr(q.pixels(), raw.pixels())?;
        tnsr::save(with_suffix(out_prefix, &format!("_{b}bit.tnsr")), q.pixels())?;
        csv_row(&mut w, [b.to_string(), format_psnr(p)])?;
    }
    csv_finish(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AwdDemoConfig {
    pub kernel_sizes: Vec<usize>,
    /// Gaussian noise standard deviation used when no noisy input is given.
    pub noise_sigma: f64,
    pub filters: SweepFilters,
    pub seed: u64,
}

impl Default for AwdDemoConfig {
    fn default() -> Self {
        Self {
            kernel_sizes: awd::SUPPORTED_KERNEL_SIZES.to_vec(),
            noise_sigma: 60.0 / 255.0,
            filters: SweepFilters::default(),
            seed: 0,
        }
    }
}

fn load_feature_map(path: &Path) -> CliResult<Tensor> {
    let is_png = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let t = if is_png {
        isp::load_srgb_png(path)?.into_pixels()
    } else {
        tnsr::load(path)?
    };
    t.chw()?;
    Ok(t)
}

pub fn cmd_awd_demo(
    input: &Path,
    noisy: Option<&Path>,
    config: Option<&Path>,
    out_prefix: &Path,
    seed: Option<u64>,
) -> CliResult {
    let mut cfg: AwdDemoConfig = read_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(k) = cfg.kernel_sizes.iter().find(|k| !awd::SUPPORTED_KERNEL_SIZES.contains(k)) {
        return Err(CliError::Config(format!(
            "kernel size {k} not in {:?}",
            awd::SUPPORTED_KERNEL_SIZES
        )));
    }
    if !(cfg.noise_sigma >= 0.0 && cfg.noise_sigma.is_finite()) {
        return Err(CliError::Config(format!("invalid noise_sigma {}", cfg.noise_sigma)));
    }
    let clean = load_feature_map(input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noisy = match noisy {
        Some(p) => {
            let n = load_feature_map(p)?;
            n.expect_dims("noisy", clean.dims())?;
            n
        }
        None => noise::add_gaussian(&clean, cfg.noise_sigma, &mut rng),
    };
    let channels = clean.dims()[0];
    let mut w = csv_writer(&with_suffix(out_prefix, ".csv"))?;
    csv_row(&mut w, ["filter", "kernel", "disturbance"])?;
    for &k in &cfg.kernel_sizes {
        for down in awd::filter_sweep(channels, k, &cfg.filters, &mut rng)? {
            let a = down.apply(&clean)?;
            let b = down.apply(&noisy)?;
            let d = dsl::disturbance(std::slice::from_ref(&a), std::slice::from_ref(&b))?;
            if !d.is_finite() {
                return Err(CliError::Invariant(format!("non-finite disturbance for {} k={k}", down.name())));
            }
            csv_row(&mut w, [down.name().to_string(), k.to_string(), d.to_string()])?;
            if let awd::Downsampler::Awd(params) = &down {
                let (y, weights, _) = awd::awd_forward(&clean, params)?;
                let (max_sum_err, min_w) = weights.normalization_report();
                if max_sum_err > 1e-9 || min_w <= 0.0 {
                    return Err(CliError::Invariant(format!(
                        "AWD kernels not normalized (sum error {max_sum_err:e}, min weight {min_w:e})"
                    )));
                }
                tnsr::save(with_suffix(out_prefix, &format!("_awd_k{k}.tnsr")), &y)?;
                isp::save_gray_png(
                    with_suffix(out_prefix, &format!("_awd_k{k}_std.png")),
                    &awd::weight_std_map(&weights),
                    awd::one_hot_std(weights.taps()),
                )?;
            }
        }
    }
    csv_finish(w)
}

pub fn cmd_fold_check(n: usize, out: &Path, seed: u64) -> CliResult {
    if n == 0 {
        return Err(CliError::Config("n must be positive".into()));
    }
    let mut w = csv_writer(out)?;
    csv_row(&mut w, ["instance", "c1", "c2", "h", "w", "max_abs_diff"])?;
    let mut worst = 0.0_f64;
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let (c1, c2) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let (h, wd) = (rng.gen_range(3..=16), rng.gen_range(3..=16));
        let init = if rng.gen_bool(0.5) { SmoothInit::Mean } else { SmoothInit::Gaussian };
        let mut params = ScbParams::init(c1, c2, init, &mut rng);
        for v in params.sconv_logits.data_mut() {
            *v += rng.gen_range(-2.0..2.0);
        }
        let x = Tensor::from_fn(&[c1, h, wd], |_| rng.gen_range(-1.0..1.0));
        let (train, _) = scb::scb_forward_train(&x, &params)?;
        let infer = scb::scb_forward_infer(&x, &scb::fold(&params)?)?;
        let diff = train.max_abs_diff(&infer);
        worst = worst.max(diff);
        csv_row(
            &mut w,
            [
                i.to_string(),
                c1.to_string(),
                c2.to_string(),
                h.to_string(),
                wd.to_string(),
                format!("{diff:e}"),
            ],
        )?;
    }
    csv_finish(w)?;
    println!("max_abs_diff {worst:e} over {n} instances");
    if worst > FOLD_TOLERANCE || worst.is_nan() {
        return Err(CliError::Invariant(format!(
            "fold divergence {worst:e} exceeds {FOLD_TOLERANCE:e}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainToyConfig {
    pub dsl: DslConfig,
    pub data: ShapesConfig,
}

pub fn cmd_train_toy(config: Option<&Path>, out: &Path, seed: Option<u64>) -> CliResult {
    let mut cfg: TrainToyConfig = read_config(config)?;
    if let Some(s) = seed {
        cfg.dsl.seed = s;
        cfg.data.seed = s;
    }
    cfg.dsl.validate()?;
    let (train, heldout) = dsl::shapes_dataset(&cfg.data)?;
    let (_, metrics) = dsl::train_toy(&train, &heldout, SHAPE_CLASSES.len(), &cfg.dsl)?;
    let mut buf = Vec::new();
    dsl::write_metrics_csv(&mut buf, &metrics)?;
    fs::write(out, buf).map_err(|e| io_err(out, e))
}

pub fn cmd_disturbance(config: Option<&Path>, out: &Path, seed: Option<u64>) -> CliResult {
    let mut cfg: DisturbanceConfig = read_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let rows = dsl::disturbance_sweep(&cfg)?;
    let mut w = csv_writer(out)?;
    csv_row(&mut w, ["trial", "filter", "kernel", "disturbance"])?;
    for r in &rows {
        if !r.disturbance.is_finite() {
            return Err(CliError::Invariant(format!("non-finite disturbance in trial {}", r.trial)));
        }
        csv_row(
            &mut w,
            [r.trial.to_string(), r.filter.to_string(), r.kernel.to_string(), r.disturbance.to_string()],
        )?;
    }
    csv_finish(w)?;
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    for name in ["strided", "mean"] {
        let v: Vec<f64> = rows.iter().filter(|r| r.filter == name).map(|r| r.disturbance).collect();
        if !v.is_empty() {
            let _ = writeln!(lock, "{name}: mean disturbance {:.6}", v.iter().sum::<f64>() / v.len() as f64);
        }
    }
    Ok(())
}
