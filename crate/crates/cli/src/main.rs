use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use convdesc_core::binfmt::{read_file, write_atomic};
use convdesc_core::bow::{DEFAULT_CODEBOOK_SIZE, DEFAULT_KMEANS_ITERS};
use convdesc_core::dataset::{compare_reports, scan_dataset, EvalReport, Layout, SplitSpec, TrainCounts};
use convdesc_core::pipeline::{
    decode_image, DescriptorKind, Pipeline, PipelineConfig, DEFAULT_CODEBOOK_SAMPLE_CAP,
};
use convdesc_core::sift::DenseGridParams;
use convdesc_core::svm::SvmParams;
use convdesc_core::synthetic::{generate_stripes, StripeParams};
use convdesc_core::vgg::{ChannelOrder, PreprocessConfig, SourceKind, DEFAULT_GRAYSCALE_SIZE};
use convdesc_core::Error;

const CACHE_ENV: &str = "CONVDESC_CACHE_DIR";

#[derive(Parser)]
#[command(name = "convdesc", version, about = "SIFT/HLAC descriptors on VGG-16 convolutional maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute and cache the map set of every image in a dataset.
    ExtractMaps(ExtractArgs),
    /// Train a bag-of-words codebook on the training split.
    TrainCodebook(CodebookArgs),
    /// Train and evaluate one (descriptor, source) configuration.
    Run(RunArgs),
    /// Print a two-row accuracy table with the percentage-point delta.
    Compare(CompareArgs),
    /// Write the map set of a single image as a CDMD dump.
    DumpMaps(DumpArgs),
    /// Generate a seeded two-class stripe texture dataset.
    SynthStripes(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Multiclass,
    Posneg,
}

#[derive(Clone, Copy, ValueEnum)]
enum DescriptorArg {
    SiftBow,
    Hlac,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Convmap,
    Grayscale,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    Rgb,
    Bgr,
}

#[derive(Args)]
struct DatasetArgs {
    /// Dataset root directory.
    #[arg(long)]
    dataset: PathBuf,
    /// Directory layout: one folder per class, or pos/ and neg/.
    #[arg(long, value_enum, default_value = "multiclass")]
    layout: LayoutArg,
}

#[derive(Args)]
struct MapArgs {
    /// Maps to describe: VGG-16 pool2 output or the grayscale image.
    #[arg(long, value_enum, default_value = "convmap")]
    source: SourceArg,
    /// CDWT weight file (required for --source convmap).
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Channel order fed to the backbone.
    #[arg(long, value_enum, default_value = "bgr")]
    channel_order: OrderArg,
    /// Per-channel means subtracted before the backbone, in channel order.
    #[arg(long, num_args = 3, value_names = ["M0", "M1", "M2"])]
    means: Option<Vec<f32>>,
    /// Side length of the grayscale baseline image.
    #[arg(long, default_value_t = DEFAULT_GRAYSCALE_SIZE)]
    grayscale_size: usize,
    /// Worker threads (default: available cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct SplitArgs {
    /// Training images per class: N, or label=N pairs like pos=500,neg=500.
    #[arg(long)]
    train_per_class: String,
    /// Seed for the train/test split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SiftArgs {
    /// Dense SIFT patch side in pixels.
    #[arg(long, default_value_t = 16)]
    patch_size: usize,
    /// Dense SIFT grid step in pixels.
    #[arg(long, default_value_t = 8)]
    step: usize,
    /// Codebook size k.
    #[arg(long, default_value_t = DEFAULT_CODEBOOK_SIZE)]
    codebook_size: usize,
    /// Maximum k-means iterations.
    #[arg(long, default_value_t = DEFAULT_KMEANS_ITERS)]
    kmeans_iters: usize,
    /// Maximum number of descriptors sampled for k-means.
    #[arg(long, default_value_t = DEFAULT_CODEBOOK_SAMPLE_CAP)]
    sample_cap: usize,
    /// Seed for descriptor sampling and k-means.
    #[arg(long, default_value_t = 0)]
    codebook_seed: u64,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    maps: MapArgs,
    /// Output directory; the cache lives in <out>/cache unless CONVDESC_CACHE_DIR is set.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CodebookArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    maps: MapArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    sift: SiftArgs,
    /// Codebook file to write.
    #[arg(long)]
    out: PathBuf,
    /// Map cache directory (default: no cache unless CONVDESC_CACHE_DIR is set).
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Descriptor computed on the maps.
    #[arg(long, value_enum)]
    descriptor: DescriptorArg,
    #[command(flatten)]
    maps: MapArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    sift: SiftArgs,
    /// Pre-trained codebook file (sift-bow only); trained on the split otherwise.
    #[arg(long)]
    codebook: Option<PathBuf>,
    /// SVM regularization constant C.
    #[arg(long, default_value_t = 1.0)]
    svm_c: f64,
    /// Maximum SVM training epochs.
    #[arg(long, default_value_t = 1000)]
    svm_epochs: usize,
    /// SVM stopping tolerance on the projected gradient.
    #[arg(long, default_value_t = 1e-4)]
    svm_tol: f64,
    /// Output directory for report.json, report.txt, confusion.csv and model.cdsv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Baseline report (first row).
    report_a: PathBuf,
    /// Report to compare against the baseline (second row).
    report_b: PathBuf,
}

#[derive(Args)]
struct DumpArgs {
    /// Input image.
    #[arg(long)]
    image: PathBuf,
    #[command(flatten)]
    maps: MapArgs,
    /// CDMD file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory to create the class folders in.
    #[arg(long)]
    out: PathBuf,
    /// Images per class.
    #[arg(long, default_value_t = 20)]
    per_class: usize,
    /// Image side length.
    #[arg(long, default_value_t = 64)]
    size: u32,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl MapArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        cfg.source = match self.source {
            SourceArg::Convmap => SourceKind::Convmap,
            SourceArg::Grayscale => SourceKind::Grayscale,
        };
        cfg.weights = self.weights.clone();
        let order = match self.channel_order {
            OrderArg::Rgb => ChannelOrder::Rgb,
            OrderArg::Bgr => ChannelOrder::Bgr,
        };
        cfg.preprocess = match &self.means {
            Some(m) => PreprocessConfig { order, means: [m[0], m[1], m[2]] },
            None => PreprocessConfig { order, ..PreprocessConfig::default() },
        };
        if self.means.is_none() && order == ChannelOrder::Rgb {
            let [b, g, r] = PreprocessConfig::default().means;
            cfg.preprocess.means = [r, g, b];
        }
        cfg.grayscale_size = self.grayscale_size;
        cfg.workers = self.workers;
    }
}

impl SiftArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        cfg.grid = DenseGridParams { patch_size: self.patch_size, step: self.step };
        cfg.codebook_size = self.codebook_size;
        cfg.kmeans_iters = self.kmeans_iters;
        cfg.codebook_sample_cap = self.sample_cap;
        cfg.codebook_seed = self.codebook_seed;
    }
}

impl DatasetArgs {
    fn layout(&self) -> Layout {
        match self.layout {
            LayoutArg::Multiclass => Layout::Multiclass,
            LayoutArg::Posneg => Layout::Posneg,
        }
    }
}

impl SplitArgs {
    fn spec(&self) -> Result<SplitSpec, Error> {
        Ok(SplitSpec { train: TrainCounts::parse(&self.train_per_class)?, seed: self.seed })
    }
}

fn cache_dir(default: Option<PathBuf>) -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .or(default)
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

fn pct(x: f64) -> String {
    format!("{:.2}%", x * 100.0)
}

fn extract_maps(args: ExtractArgs) -> Result<(), Error> {
    let mut cfg = PipelineConfig::default();
    args.maps.apply(&mut cfg);
    cfg.cache_dir = cache_dir(Some(args.out.join("cache")));
    let pipeline = Pipeline::new(cfg)?;
    let manifest = scan_dataset(&args.data.dataset, args.data.layout())?;
    let total = manifest.entries.len();
    let mut extracted = 0;
    let mut cached = 0;
    pipeline.install(|| -> Result<(), Error> {
        for (i, e) in manifest.entries.iter().enumerate() {
            let s = pipeline.extract_maps(&[manifest.path_of(e)])?;
            let state = if s.cached > 0 { "cached" } else { "extracted" };
            println!("[{}/{total}] {} {state}", i + 1, e.path);
            extracted += s.extracted;
            cached += s.cached;
        }
        Ok(())
    })??;
    println!("{extracted} extracted, {cached} cached");
    Ok(())
}

fn train_codebook(args: CodebookArgs) -> Result<(), Error> {
    let mut cfg = PipelineConfig { descriptor: DescriptorKind::SiftBow, ..Default::default() };
    args.maps.apply(&mut cfg);
    args.sift.apply(&mut cfg);
    cfg.cache_dir = cache_dir(args.cache_dir.clone());
    let pipeline = Pipeline::new(cfg)?;
    let manifest = scan_dataset(&args.data.dataset, args.data.layout())?;
    let codebook = pipeline.train_split_codebook(&manifest, &args.split.spec()?)?;
    codebook.save(&args.out)?;
    let meta = codebook.meta().expect("freshly trained");
    println!(
        "k={} iterations={} distortion={:.6} converged={}",
        codebook.k(),
        meta.iterations,
        meta.distortion,
        meta.converged
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn run(args: RunArgs) -> Result<(), Error> {
    let mut cfg = PipelineConfig {
        descriptor: match args.descriptor {
            DescriptorArg::SiftBow => DescriptorKind::SiftBow,
            DescriptorArg::Hlac => DescriptorKind::Hlac,
        },
        codebook_path: args.codebook.clone(),
        svm: SvmParams { c: args.svm_c, max_epochs: args.svm_epochs, tolerance: args.svm_tol, seed: args.split.seed },
        ..Default::default()
    };
    args.maps.apply(&mut cfg);
    args.sift.apply(&mut cfg);
    cfg.cache_dir = cache_dir(Some(args.out.join("cache")));
    if !(cfg.svm.c > 0.0 && cfg.svm.c.is_finite()) {
        return Err(Error::InvalidArgument(format!("--svm-c must be positive, got {}", args.svm_c)));
    }
    let pipeline = Pipeline::new(cfg)?;
    let manifest = scan_dataset(&args.data.dataset, args.data.layout())?;
    let (report, model) = pipeline.run(&manifest, &args.split.spec()?)?;

    ensure_dir(&args.out)?;
    write_atomic(&args.out.join("report.json"), report.to_json().as_bytes())?;
    write_atomic(&args.out.join("report.txt"), report.to_table().as_bytes())?;
    write_atomic(&args.out.join("confusion.csv"), report.confusion_csv().as_bytes())?;
    model.save(&args.out.join("model.cdsv"))?;
    println!(
        "{}: accuracy {} (mean recall {}) on {} test images",
        report.approach(),
        pct(report.accuracy),
        pct(report.mean_recall),
        report.test_count
    );
    Ok(())
}

fn compare(args: CompareArgs) -> Result<(), Error> {
    let a = EvalReport::load(&args.report_a)?;
    let b = EvalReport::load(&args.report_b)?;
    print!("{}", compare_reports(&a, &b)?.to_table());
    Ok(())
}

fn dump_maps(args: DumpArgs) -> Result<(), Error> {
    let mut cfg = PipelineConfig::default();
    args.maps.apply(&mut cfg);
    let pipeline = Pipeline::new(cfg)?;
    let bytes = read_file(&args.image)?;
    let raster = decode_image(&args.image, &bytes)?;
    let maps = pipeline.install(|| pipeline.extractor().extract(&raster))??;
    write_atomic(&args.out, &maps.to_dump_bytes()?)?;
    let (h, w, c) = maps.maps().shape();
    println!("wrote {h}x{w}x{c} maps to {}", args.out.display());
    Ok(())
}

fn synth(args: SynthArgs) -> Result<(), Error> {
    let params = StripeParams {
        per_class: args.per_class,
        size: args.size,
        seed: args.seed,
        ..Default::default()
    };
    generate_stripes(&args.out, &params)?;
    println!("wrote {} images to {}", 2 * args.per_class, args.out.display());
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Integrity(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::ExtractMaps(a) => extract_maps(a),
        Command::TrainCodebook(a) => train_codebook(a),
        Command::Run(a) => run(a),
        Command::Compare(a) => compare(a),
        Command::DumpMaps(a) => dump_maps(a),
        Command::SynthStripes(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
