//! Argument parsing and command dispatch for the `gradpath` binary.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error,
//! 3 divergence or failed gradient check.

use std::ffi::OsString;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use gradpath::data::{load_split, Dataset, Split, DATA_DIR_ENV};
use gradpath::gradinput::gradient_transform;
use gradpath::layers::LayerKind;
use gradpath::models::build_model;
use gradpath::train::{
    gradcheck_suite, metrics_csv, run_arm, run_experiment, GradcheckConfig, MetricsRow, Precision,
    TrainConfig,
};
use gradpath::{DatasetKind, Error, Tensor, Topology};
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat, ImageReader};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "gradpath", version, about = "Train and compare image-gradient dual-input CNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one architecture and write per-epoch metrics
    Train(TrainArgs),
    /// Train baseline and dual-path from identical weights and data order
    Compare(CompareArgs),
    /// Finite-difference check of every backward pass (64-bit)
    Gradcheck(GradcheckArgs),
    /// Write the gradient image (dx + dy) of a binary PGM
    Transform(TransformArgs),
    /// Print the layer table and parameter count of a model
    Info(InfoArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// mnist, cifar10, cifar100 or toy (generated, no files needed)
    #[arg(long, default_value = "mnist")]
    dataset: DatasetKind,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Seeds weight init, dropout masks and shuffling
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Train on the first N training samples only [default: all]
    #[arg(long)]
    subset: Option<usize>,
    /// Floating-point precision: 32 or 64
    #[arg(long, default_value_t = 32, value_parser = parse_precision)]
    precision: u8,
    /// Dataset root; searched directly and in mnist/, cifar-10-batches-bin/, cifar-100-binary/
    #[arg(long, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
    /// Metrics CSV path [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write 0 in wall_time_s so the CSV is byte-reproducible
    #[arg(long)]
    no_wall_time: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// baseline or dualpath
    #[arg(long, default_value = "dualpath")]
    arch: Topology,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Seeds the random shapes, inputs and weights
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum allowed relative error
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Negate the analytic gradients of one layer kind (to see a failure)
    #[arg(long)]
    corrupt: Option<String>,
}

#[derive(Debug, Args)]
struct TransformArgs {
    /// Input binary PGM (P5), 8 or 16 bit
    #[arg(long = "in")]
    input: PathBuf,
    /// Output binary PGM, rescaled to 0-255; bounds go to <out>.txt
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InfoArgs {
    #[arg(long, default_value = "mnist")]
    dataset: DatasetKind,
    /// baseline or dualpath
    #[arg(long, default_value = "dualpath")]
    arch: Topology,
}

/// Failure of a command, already mapped to an exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Parameter(_) => EXIT_USAGE,
            Error::Divergence { .. } | Error::Check(_) => EXIT_FAILED,
            _ => EXIT_DATA,
        };
        Failure { code, message: e.to_string() }
    }
}

fn parse_precision(s: &str) -> Result<u8, String> {
    match s {
        "32" => Ok(32),
        "64" => Ok(64),
        _ => Err(format!("expected 32 or 64, got {s:?}")),
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, message: message.into() }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure { code: EXIT_DATA, message: format!("{}: {e}", path.display()) }
}

type CmdResult = Result<(), Failure>;

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Compare(a) => compare(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Transform(a) => transform(a),
        Command::Info(a) => info(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

impl CommonArgs {
    fn config(&self, topology: Topology) -> Result<TrainConfig, Failure> {
        let config = TrainConfig {
            dataset: self.dataset,
            topology,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            momentum: self.momentum,
            seed: self.seed,
            subset: self.subset,
            precision: if self.precision == 64 { Precision::F64 } else { Precision::F32 },
            record_wall_time: !self.no_wall_time,
        };
        config.validate()?;
        Ok(config)
    }

    fn load(&self) -> Result<(Dataset, Dataset), Failure> {
        let root = match (&self.data_dir, self.dataset) {
            (Some(dir), _) => dir.clone(),
            (None, DatasetKind::Toy) => PathBuf::new(),
            (None, kind) => {
                return Err(usage(format!("{kind} needs --data-dir or {DATA_DIR_ENV}")));
            }
        };
        let load = |split| {
            load_split(self.dataset, &root, split).map_err(|e| {
                let missing = matches!(e, Error::Data(_));
                let mut f = Failure::from(e);
                if missing {
                    f.message.push('\n');
                    f.message.push_str(fetch_hint(self.dataset));
                }
                f
            })
        };
        Ok((load(Split::Train)?, load(Split::Test)?))
    }

    fn emit(&self, rows: &[MetricsRow]) -> CmdResult {
        let csv = metrics_csv(rows);
        match &self.out {
            Some(path) => std::fs::write(path, csv).map_err(|e| io_failure(path, e)),
            None => {
                print!("{csv}");
                Ok(())
            }
        }
    }
}

fn fetch_hint(kind: DatasetKind) -> &'static str {
    match kind {
        DatasetKind::Mnist => {
            "fetch the four *-ubyte files from http://yann.lecun.com/exdb/mnist/ (gunzip them) into <data-dir>/mnist/"
        }
        DatasetKind::Cifar10 => {
            "fetch cifar-10-binary.tar.gz from https://www.cs.toronto.edu/~kriz/cifar.html and untar it in <data-dir>"
        }
        DatasetKind::Cifar100 => {
            "fetch cifar-100-binary.tar.gz from https://www.cs.toronto.edu/~kriz/cifar.html and untar it in <data-dir>"
        }
        DatasetKind::Toy => "",
    }
}

fn train(args: TrainArgs) -> CmdResult {
    let config = args.common.config(args.arch)?;
    let (train, test) = args.common.load()?;
    let rows = run_arm(&config, &train, &test)?;
    args.common.emit(&rows)
}

fn compare(args: CompareArgs) -> CmdResult {
    let config = args.common.config(Topology::Dual)?;
    let (train, test) = args.common.load()?;
    let exp = run_experiment(&config, &train, &test)?;
    args.common.emit(&exp.rows)?;
    eprintln!(
        "final test accuracy: baseline {:.4}, dualpath {:.4}, delta {:+.4}",
        exp.final_baseline_acc(),
        exp.final_dualpath_acc(),
        exp.accuracy_delta()
    );
    Ok(())
}

fn parse_layer_kind(name: &str) -> Result<LayerKind, Failure> {
    use LayerKind::*;
    [Conv2d, Relu, MaxPool2x2, Dropout, BatchNorm, Flatten, Dense]
        .into_iter()
        .find(|k| k.name() == name.to_ascii_lowercase())
        .ok_or_else(|| usage(format!("unknown layer kind {name:?}")))
}

fn gradcheck(args: GradcheckArgs) -> CmdResult {
    if args.tolerance.is_nan() || args.tolerance <= 0.0 {
        return Err(usage("tolerance must be positive"));
    }
    let cfg = GradcheckConfig {
        seed: args.seed,
        tolerance: args.tolerance,
        corrupt: args.corrupt.as_deref().map(parse_layer_kind).transpose()?,
        ..GradcheckConfig::default()
    };
    let report = gradcheck_suite(&cfg)?;
    print!("{report}");
    report.into_result()?;
    Ok(())
}

fn transform(args: TransformArgs) -> CmdResult {
    let file = std::fs::File::open(&args.input).map_err(|e| io_failure(&args.input, e))?;
    let mut reader = ImageReader::new(BufReader::new(file));
    reader.set_format(ImageFormat::Pnm);
    let img = reader.decode().map_err(|e| io_failure(&args.input, e))?;
    if img.color().has_color() || img.color().has_alpha() {
        return Err(io_failure(&args.input, "expected a grayscale PGM"));
    }
    // raw sample values keep integer differences exact in f32
    let gray = img.to_luma16();
    let scale = if img.color().bytes_per_pixel() == 1 { 257.0 } else { 1.0 };
    let (w, h) = gray.dimensions();
    let (w, h) = (w as usize, h as usize);
    let x = Tensor::new([1, 1, h, w], gray.into_raw().into_iter().map(|v| v as f32 / scale).collect::<Vec<_>>())?;
    let g = gradient_transform(&x)?;

    let (lo, hi) = g
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let bytes: Vec<u8> = g
        .data()
        .iter()
        .map(|&v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 })
        .collect();

    let mut out = std::fs::File::create(&args.out).map_err(|e| io_failure(&args.out, e))?;
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&bytes, w as u32, h as u32, ExtendedColorType::L8)
        .map_err(|e| io_failure(&args.out, e))?;
    out.flush().map_err(|e| io_failure(&args.out, e))?;

    let mut sidecar = args.out.clone().into_os_string();
    sidecar.push(".txt");
    let sidecar = PathBuf::from(sidecar);
    let line = format!("min {lo} max {hi} (input sample units)\n");
    std::fs::write(&sidecar, &line).map_err(|e| io_failure(&sidecar, e))?;
    print!("{}: {line}", args.out.display());
    Ok(())
}

fn info(args: InfoArgs) -> CmdResult {
    let net = build_model::<f32>(args.dataset, args.arch, 0)?;
    println!("{} {} (input {:?})", args.dataset, args.arch.arch_tag(), args.dataset.image_dims());
    println!("{:<14} {:<52} {:<14} {:>8}", "layer", "detail", "output", "params");
    for row in net.layer_table()? {
        println!(
            "{:<14} {:<52} {:<14} {:>8}",
            row.name,
            row.detail,
            format!("{:?}", row.output),
            row.params
        );
    }
    println!("param_count: {}", net.param_count());
    Ok(())
}
