//! Subcommands of the `ycda` binary.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;
use ycda::autograd::{
    clear_relu_kink, grad_check, train_toy, GradReport, GroupAlpha, Saliency, TrainConfig,
};
use ycda::colorspace::{ColorStandard, ImageRgb};
use ycda::ica::{AttentionVariant, IcaConfig};
use ycda::model::{
    cost_report, load_block, save_block, save_tensors, ConvStem, CostReport, FormatError,
    NextLayer, MLP_B2, MLP_W2,
};
use ycda::stem::{Activation, StemConfig};
use ycda::{init_block, BlockConfig, Tensor, YcdaBlock};

use crate::ppm::{load_ppm, save_ppm, PpmError};
use crate::stats::{pair_contrast, to_csv, PairContrast, StatsRow, CHANNELS};
use crate::synth::{synth_pair, toy_dataset, ObjectShape, SynthError, SynthSpec};

pub const GRADCHECK_THRESHOLD: f64 = 1e-6;
const KINK_MARGIN: f64 = 1e-2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Model(#[from] ycda::Error),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Ppm(#[from] PpmError),

    #[error(transparent)]
    Synth(#[from] SynthError),

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("gradient check failed: max relative error {0:e} is not below {GRADCHECK_THRESHOLD:e}")]
    Breach(f64),
}

impl CliError {
    /// 2 for usage and configuration errors, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report types serialize") + "\n"
}

#[derive(Debug, Parser)]
#[command(name = "ycda", version, about = "YCbCr decoupled attention stem tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-image Y/Cb/Cr mean and variance as CSV
    Stats(StatsArgs),
    /// Write salient/camouflaged PPM pairs
    Synth(SynthArgs),
    /// Run the block on a PPM image
    Forward(ForwardArgs),
    /// Compare analytic gradients with central differences
    Gradcheck(GradcheckArgs),
    /// Train the block and a linear head on synthetic pairs
    TrainToy(TrainToyArgs),
    /// Parameter and MAC accounting against a strided-conv stem
    Cost(CostArgs),
    /// Write a freshly initialized weight file
    InitWeights(InitArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ColorArg {
    Bt601,
    Bt709,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ActivationArg {
    Silu,
    Identity,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Ica,
    GapOnly,
    VarOnly,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ShapeArg {
    Disk,
    Patch,
}

impl From<ShapeArg> for ObjectShape {
    fn from(s: ShapeArg) -> Self {
        match s {
            ShapeArg::Disk => ObjectShape::Disk,
            ShapeArg::Patch => ObjectShape::Patch,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct BlockArgs {
    #[arg(long, value_enum, default_value = "bt601")]
    pub color: ColorArg,
    #[arg(long, default_value_t = 2)]
    pub unshuffle: usize,
    /// Stem activation [default: silu, identity for gradcheck]
    #[arg(long, value_enum)]
    pub activation: Option<ActivationArg>,
    #[arg(long, default_value_t = 2)]
    pub multiplier: usize,
    #[arg(long, default_value_t = 3)]
    pub kernel: usize,
    #[arg(long, default_value_t = 4)]
    pub reduction: usize,
    #[arg(long, value_enum, default_value = "ica")]
    pub variant: VariantArg,
    /// Drop the bottleneck MLP biases
    #[arg(long)]
    pub no_mlp_bias: bool,
}

impl BlockArgs {
    pub fn config(&self) -> CliResult<BlockConfig> {
        self.config_or(Activation::Silu)
    }

    fn config_or(&self, activation: Activation) -> CliResult<BlockConfig> {
        let cfg = BlockConfig {
            color: match self.color {
                ColorArg::Bt601 => ColorStandard::Bt601Full,
                ColorArg::Bt709 => ColorStandard::Bt709Full,
            },
            stem: StemConfig {
                unshuffle_factor: self.unshuffle,
                activation: match self.activation {
                    Some(ActivationArg::Silu) => Activation::Silu,
                    Some(ActivationArg::Identity) => Activation::Identity,
                    None => activation,
                },
                multiplier: self.multiplier,
                kernel_size: self.kernel,
            },
            ica: IcaConfig {
                reduction: self.reduction,
                variant: match self.variant {
                    VariantArg::Ica => AttentionVariant::Ica,
                    VariantArg::GapOnly => AttentionVariant::GapOnly,
                    VariantArg::VarOnly => AttentionVariant::VarOnly,
                },
                mlp_bias: !self.no_mlp_bias,
            },
        };
        cfg.validate()
            .map_err(|e| CliError::Usage(format!("invalid block config: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthSpecArgs {
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, value_enum, default_value = "disk")]
    pub shape: ShapeArg,
    #[arg(long, default_value_t = 8)]
    pub radius: usize,
    #[arg(long, default_value_t = 0.15)]
    pub contrast: f64,
    #[arg(long, default_value_t = 0.12)]
    pub delta_chroma: f64,
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
}

impl SynthSpecArgs {
    fn spec(&self, seed: u64) -> SynthSpec {
        SynthSpec {
            size: self.size,
            shape: self.shape.into(),
            object_radius: self.radius,
            texture_contrast: self.contrast,
            delta_chroma: self.delta_chroma,
            noise: self.noise,
            seed,
        }
    }
}

/// Seed of pair `i` in a run seeded with `seed`.
pub fn pair_seeds(seed: u64, pairs: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pairs).map(|_| rng.gen()).collect()
}

// ---- stats ----

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    /// PPM images to measure
    pub images: Vec<PathBuf>,
    /// Comma-separated labels (salient, camouflaged or none), one per image
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
    /// Also measure this many seeded synthetic pairs
    #[arg(long, default_value_t = 0)]
    pub synth_pairs: usize,
    #[command(flatten)]
    pub synth: SynthSpecArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV destination; standard output when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_label(s: &str) -> CliResult<Option<Saliency>> {
    match s {
        "salient" => Ok(Some(Saliency::Salient)),
        "camouflaged" => Ok(Some(Saliency::Camouflaged)),
        "none" | "" => Ok(None),
        other => Err(CliError::Usage(format!("unknown label {other:?}"))),
    }
}

/// Rows for `pairs` seeded synthetic pairs, salient then camouflaged for each pair.
pub fn synth_rows(template: &SynthSpec, seed: u64, pairs: usize) -> CliResult<Vec<StatsRow>> {
    let mut rows = Vec::with_capacity(2 * pairs);
    for (i, s) in pair_seeds(seed, pairs).into_iter().enumerate() {
        let (salient, camo) = synth_pair(&SynthSpec { seed: s, ..*template })?;
        rows.push(StatsRow::of(
            format!("synth{i:03}_salient"),
            Some(Saliency::Salient),
            &salient,
        ));
        rows.push(StatsRow::of(
            format!("synth{i:03}_camouflaged"),
            Some(Saliency::Camouflaged),
            &camo,
        ));
    }
    Ok(rows)
}

/// Contrast of every consecutive salient/camouflaged pair in `rows`.
pub fn synth_contrasts(rows: &[StatsRow]) -> Vec<PairContrast> {
    rows.chunks_exact(2)
        .filter(|p| {
            p[0].label == Some(Saliency::Salient) && p[1].label == Some(Saliency::Camouflaged)
        })
        .map(|p| pair_contrast(&p[0], &p[1]))
        .collect()
}

pub fn run_stats(args: &StatsArgs) -> CliResult<String> {
    if args.images.is_empty() && args.synth_pairs == 0 {
        return Err(CliError::Usage(
            "give at least one image or --synth-pairs".into(),
        ));
    }
    if !args.labels.is_empty() && args.labels.len() != args.images.len() {
        return Err(CliError::Usage(format!(
            "{} labels for {} images",
            args.labels.len(),
            args.images.len()
        )));
    }
    let mut rows = Vec::new();
    for (i, path) in args.images.iter().enumerate() {
        let label = match args.labels.get(i) {
            Some(l) => parse_label(l)?,
            None => None,
        };
        let id = path
            .file_stem()
            .map_or_else(|| format!("image{i}"), |s| s.to_string_lossy().into_owned());
        rows.push(StatsRow::of(id, label, &load_ppm(path)?));
    }
    let synth = synth_rows(&args.synth.spec(0), args.seed, args.synth_pairs)?;
    let contrasts = synth_contrasts(&synth);
    rows.extend(synth);
    let csv = to_csv(&rows);

    let mut summary = String::new();
    for (i, c) in contrasts.iter().enumerate() {
        write!(summary, "pair {i:03}:").unwrap();
        for ch in 0..3 {
            write!(
                summary,
                " {} gap diff {:.2e} var drop {:+.1}%;",
                CHANNELS[ch],
                c.gap_diff[ch],
                100.0 * c.var_drop[ch]
            )
            .unwrap();
        }
        writeln!(summary, " pattern {}", if c.shows_pattern() { "yes" } else { "no" }).unwrap();
    }
    match &args.out {
        Some(path) => {
            write_file(path, &csv)?;
            Ok(summary)
        }
        None => Ok(csv + &summary),
    }
}

// ---- synth ----

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub synth: SynthSpecArgs,
    #[arg(long, default_value_t = 1)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_synth(args: &SynthArgs) -> CliResult<String> {
    create_dir(&args.out)?;
    let template = args.synth.spec(0);
    let mut listing = String::new();
    for (i, s) in pair_seeds(args.seed, args.pairs).into_iter().enumerate() {
        let (salient, camo) = synth_pair(&SynthSpec { seed: s, ..template })?;
        for (img, label) in [(&salient, "salient"), (&camo, "camouflaged")] {
            let path = args.out.join(format!("{i:03}_{label}.ppm"));
            save_ppm(img, &path).map_err(|source| CliError::Write {
                path: path.clone(),
                source,
            })?;
            writeln!(listing, "{}", path.display()).unwrap();
        }
    }
    Ok(listing)
}

// ---- forward ----

#[derive(Debug, Clone, Args)]
pub struct ForwardArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    /// Output directory for features.ycda and alpha.txt
    #[arg(long)]
    pub out: PathBuf,
}

fn reflect(i: usize, n: usize) -> usize {
    if i < n {
        i
    } else if n == 1 {
        0
    } else {
        2 * (n - 1) - i
    }
}

/// Mirrors the trailing rows and columns so both extents become multiples of `factor`.
pub fn reflect_pad(img: &ImageRgb, factor: usize) -> ImageRgb {
    let (h, w) = (img.height(), img.width());
    let (ph, pw) = (h.div_ceil(factor) * factor, w.div_ceil(factor) * factor);
    if (ph, pw) == (h, w) {
        return img.clone();
    }
    let src = img.pixels();
    let mut out = Tensor::zeros(&[3, ph, pw]).expect("non-empty");
    for c in 0..3 {
        for y in 0..ph {
            for x in 0..pw {
                out.set(&[c, y, x], src.get(&[c, reflect(y, h), reflect(x, w)]));
            }
        }
    }
    ImageRgb::new(out).expect("values copied from a valid image")
}

pub const FEATURES: &str = "features";
pub const ALPHA: &str = "alpha";
pub const INPUT_EXTENT: &str = "input_extent";

pub fn alpha_listing(block: &YcdaBlock, alpha: &Tensor, extent: [usize; 4]) -> String {
    let [h, w, ph, pw] = extent;
    let mut out = if (h, w) == (ph, pw) {
        format!("# input {h}x{w}\n")
    } else {
        format!("# input {h}x{w}, reflect-padded to {ph}x{pw}\n")
    };
    for (g, name) in CHANNELS.iter().enumerate() {
        writeln!(out, "[{name}]").unwrap();
        for (j, a) in alpha.data().iter().enumerate() {
            if block.channel_group(j) == g {
                writeln!(out, "{j} {a:.12}").unwrap();
            }
        }
    }
    out
}

pub fn run_forward(args: &ForwardArgs) -> CliResult<String> {
    let img = load_ppm(&args.image)?;
    let block = load_block(&args.weights)?;
    let padded = reflect_pad(&img, block.config.stem.unshuffle_factor);
    let extent = [img.height(), img.width(), padded.height(), padded.width()];
    let (features, weights) = block.forward(&padded)?;
    let extent_t = Tensor::from_vec(&[4], extent.iter().map(|&v| v as f64).collect())?;

    create_dir(&args.out)?;
    let feature_path = args.out.join("features.ycda");
    save_tensors(
        &feature_path,
        &[
            (FEATURES, &features),
            (ALPHA, &weights.alpha),
            (INPUT_EXTENT, &extent_t),
        ],
    )?;
    write_file(
        &args.out.join("alpha.txt"),
        alpha_listing(&block, &weights.alpha, extent),
    )?;
    Ok(format!(
        "features {:?} written to {}\n",
        features.shape(),
        feature_path.display()
    ))
}

// ---- gradcheck ----

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub block: BlockArgs,
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    /// Side of the square random input image
    #[arg(long, default_value_t = 8)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON report destination
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Seeded block and `[3, size, size]` image in `[0.05, 0.95]`, ReLU inputs cleared of the kink.
pub fn gradcheck_fixture(
    cfg: BlockConfig,
    seed: u64,
    size: usize,
) -> CliResult<(YcdaBlock, ImageRgb)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let data = (0..3 * size * size)
        .map(|_| rng.gen_range(0.05..0.95))
        .collect();
    let img = ImageRgb::new(Tensor::from_vec(&[3, size, size], data)?)?;
    let mut block = init_block(cfg, seed)?;
    clear_relu_kink(&mut block, &img, KINK_MARGIN)?;
    Ok((block, img))
}

pub fn gradcheck_report(cfg: BlockConfig, seed: u64, eps: f64, size: usize) -> CliResult<GradReport> {
    if !(eps > 0.0) {
        return Err(CliError::Usage(format!("eps must be positive, got {eps}")));
    }
    let (block, img) = gradcheck_fixture(cfg, seed, size)?;
    Ok(grad_check(&block, &img, eps, seed)?)
}

pub fn format_grad_report(report: &GradReport) -> String {
    let mut out = String::new();
    for (name, err) in &report.per_param {
        writeln!(out, "{name:<16} {err:.3e}").unwrap();
    }
    writeln!(
        out,
        "overall max {:.3e} over {} coordinates at eps {:e}",
        report.overall_max, report.coordinates, report.eps
    )
    .unwrap();
    out
}

pub fn run_gradcheck(args: &GradcheckArgs) -> CliResult<String> {
    let cfg = args.block.config_or(Activation::Identity)?;
    if args.size == 0 || args.size % cfg.stem.unshuffle_factor != 0 {
        return Err(CliError::Usage(format!(
            "size {} must be a positive multiple of {}",
            args.size, cfg.stem.unshuffle_factor
        )));
    }
    let report = gradcheck_report(cfg, args.seed, args.eps, args.size)?;
    if let Some(path) = &args.out {
        write_file(path, to_json(&report))?;
    }
    let text = format_grad_report(&report);
    if report.passes(GRADCHECK_THRESHOLD) {
        Ok(text + "PASS\n")
    } else {
        print!("{text}");
        Err(CliError::Breach(report.overall_max))
    }
}

// ---- train-toy ----

#[derive(Debug, Clone, Args)]
pub struct TrainToyArgs {
    #[command(flatten)]
    pub block: BlockArgs,
    #[arg(long, default_value_t = 256)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0.75)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.01)]
    pub step_size: f64,
    #[arg(long, default_value_t = 0.937)]
    pub momentum: f64,
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, value_enum, default_value = "patch")]
    pub shape: ShapeArg,
    #[arg(long, default_value_t = 6)]
    pub radius: usize,
    #[arg(long, default_value_t = 0.06)]
    pub contrast: f64,
    #[arg(long, default_value_t = 0.26)]
    pub delta_chroma: f64,
    #[arg(long, default_value_t = 0.005)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON report destination
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also save the trained block here
    #[arg(long)]
    pub weights_out: Option<PathBuf>,
}

impl Default for TrainToyArgs {
    fn default() -> Self {
        let cli = Cli::parse_from(["ycda", "train-toy"]);
        match cli.command {
            Command::TrainToy(a) => a,
            _ => unreachable!(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyReport {
    pub config: BlockConfig,
    pub dataset: SynthSpec,
    pub pairs: usize,
    pub train_images: usize,
    pub test_images: usize,
    pub train: TrainConfig,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub loss_ratio: f64,
    pub halved: bool,
    pub test_accuracy: f64,
    pub camouflaged_alpha: GroupAlpha,
    pub salient_alpha: GroupAlpha,
    pub camouflaged_ordering: Vec<&'static str>,
    pub luma_dominant: bool,
    pub summary: String,
    pub loss_trace: Vec<f64>,
}

pub fn toy_report(args: &TrainToyArgs) -> CliResult<(ToyReport, YcdaBlock)> {
    let config = args.block.config()?;
    let train = TrainConfig {
        step_size: args.step_size,
        momentum: args.momentum,
        steps: args.steps,
        seed: args.seed,
    };
    train
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let spec = SynthSpec {
        size: args.size,
        shape: args.shape.into(),
        object_radius: args.radius,
        texture_contrast: args.contrast,
        delta_chroma: args.delta_chroma,
        noise: args.noise,
        seed: args.seed,
    };
    let dataset = toy_dataset(&spec, args.pairs, args.train_fraction)?;
    let block = init_block(config, args.seed)?;
    let outcome = train_toy(&block, &dataset, &train)?;

    let initial = outcome.loss_trace[0];
    let last = *outcome.loss_trace.last().expect("trace is never empty");
    let a = outcome.camouflaged_alpha;
    let ordering = a.ordering();
    let summary = if a.luma_dominant() {
        format!(
            "on camouflaged test images alpha(Y) = {:.6} exceeds alpha(Cb) = {:.6} and alpha(Cr) = {:.6}",
            a.y, a.cb, a.cr
        )
    } else {
        format!(
            "on camouflaged test images alpha(Y) does not exceed both chroma groups; measured ordering {} (Y {:.6}, Cb {:.6}, Cr {:.6})",
            ordering.join(" > "),
            a.y,
            a.cb,
            a.cr
        )
    };
    let report = ToyReport {
        config,
        dataset: spec,
        pairs: args.pairs,
        train_images: dataset.train.len(),
        test_images: dataset.test.len(),
        train,
        initial_loss: initial,
        final_loss: last,
        loss_ratio: last / initial,
        halved: last <= 0.5 * initial,
        test_accuracy: outcome.test_accuracy,
        camouflaged_alpha: a,
        salient_alpha: outcome.salient_alpha,
        camouflaged_ordering: ordering,
        luma_dominant: a.luma_dominant(),
        summary,
        loss_trace: outcome.loss_trace,
    };
    Ok((report, outcome.block))
}

pub fn run_train_toy(args: &TrainToyArgs) -> CliResult<String> {
    let (report, block) = toy_report(args)?;
    if let Some(path) = &args.out {
        write_file(path, to_json(&report))?;
    }
    if let Some(path) = &args.weights_out {
        save_block(&block, path)?;
    }
    Ok(format!(
        "loss {:.6} -> {:.6} ({:.1}% of initial) after {} steps\ntest accuracy {:.4}\n{}\n",
        report.initial_loss,
        report.final_loss,
        100.0 * report.loss_ratio,
        report.train.steps,
        report.test_accuracy,
        report.summary
    ))
}

// ---- cost ----

#[derive(Debug, Clone, Args)]
pub struct CostArgs {
    #[command(flatten)]
    pub block: BlockArgs,
    #[arg(long, default_value_t = 640)]
    pub height: usize,
    #[arg(long, default_value_t = 640)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub baseline_channels: usize,
    #[arg(long, default_value_t = 3)]
    pub baseline_kernel: usize,
    #[arg(long, default_value_t = 2)]
    pub baseline_stride: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON report destination
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostComparison {
    pub height: usize,
    pub width: usize,
    pub ycda: CostReport,
    pub baseline: CostReport,
}

pub fn cost_comparison(args: &CostArgs) -> CliResult<CostComparison> {
    let cfg = args.block.config()?;
    let r = cfg.stem.unshuffle_factor;
    if args.height % r != 0 || args.width % r != 0 || args.height == 0 || args.width == 0 {
        return Err(CliError::Usage(format!(
            "input {}x{} must be a positive multiple of {r}",
            args.height, args.width
        )));
    }
    if args.baseline_channels == 0 || args.baseline_kernel == 0 || args.baseline_stride == 0 {
        return Err(CliError::Usage("baseline dimensions must be positive".into()));
    }
    let block = init_block(cfg, args.seed)?;
    let baseline = ConvStem {
        out_channels: args.baseline_channels,
        kernel: args.baseline_kernel,
        stride: args.baseline_stride,
    };
    let (ycda, baseline) = cost_report(
        &block,
        &baseline,
        &NextLayer::default(),
        args.height,
        args.width,
    );
    Ok(CostComparison {
        height: args.height,
        width: args.width,
        ycda,
        baseline,
    })
}

pub fn run_cost(args: &CostArgs) -> CliResult<String> {
    let cmp = cost_comparison(args)?;
    if let Some(path) = &args.out {
        write_file(path, to_json(&cmp))?;
    }
    let mut out = format!("input {}x{}\n", cmp.height, cmp.width);
    for r in [&cmp.ycda, &cmp.baseline] {
        writeln!(
            out,
            "{:<10} params {:>6}  MACs/px {:>9.3}  output [{}, {}, {}]  next-layer MACs/px {:.1}",
            r.name,
            r.params,
            r.macs_per_pixel,
            r.output_channels,
            r.output_height,
            r.output_width,
            r.next_layer_macs_per_pixel
        )
        .unwrap();
        for s in &r.stages {
            writeln!(
                out,
                "  {:<16} params {:>6}  MACs/px {:>9.3}",
                s.stage, s.params, s.macs_per_pixel
            )
            .unwrap();
        }
    }
    writeln!(out, "note: {}", cmp.ycda.note).unwrap();
    Ok(out)
}

// ---- init-weights ----

#[derive(Debug, Clone, Args)]
pub struct InitArgs {
    #[command(flatten)]
    pub block: BlockArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Zero the second bottleneck layer so every attention weight is 0.5
    #[arg(long)]
    pub zero_mlp: bool,
    /// Weight file destination; the manifest is written next to it
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_init(args: &InitArgs) -> CliResult<String> {
    let mut block = init_block(args.block.config()?, args.seed)?;
    if args.zero_mlp {
        for name in [MLP_W2, MLP_B2] {
            if let Some(t) = block.parameter_mut(name) {
                t.data_mut().fill(0.0);
            }
        }
    }
    save_block(&block, &args.out)?;
    Ok(format!(
        "{} parameters written to {}\n",
        block.param_count(),
        args.out.display()
    ))
}

pub fn run(cli: &Cli) -> CliResult<String> {
    match &cli.command {
        Command::Stats(a) => run_stats(a),
        Command::Synth(a) => run_synth(a),
        Command::Forward(a) => run_forward(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::TrainToy(a) => run_train_toy(a),
        Command::Cost(a) => run_cost(a),
        Command::InitWeights(a) => run_init(a),
    }
}

/// Parses `args`, runs the command, prints its output and returns the exit code.
pub fn main_with<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
