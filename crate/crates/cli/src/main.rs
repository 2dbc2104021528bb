//! `prnet` command-line entry point.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 verification failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use prnet::commands::{self, ConvertArgs, EvalArgs, GradcheckArgs, PredictArgs, SynthArgs, TrainArgs};
use prnet::data::{LabelPolicy, Split};
use prnet::metrics::Aggregation;
use prnet::Error;

#[derive(Parser)]
#[command(
    name = "prnet",
    version,
    about = "Multi-class radiograph segmentation: data, training, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic segmentation dataset.
    Synth(SynthCmd),
    /// Convert polygon annotations (LabelMe JSON) into a dataset.
    Convert(ConvertCmd),
    /// Train a model on the train split of a dataset.
    Train(TrainCmd),
    /// Report per-class Dice scores of a checkpoint on a dataset.
    Eval(EvalCmd),
    /// Segment one image, writing an index mask and a colour overlay.
    Predict(PredictCmd),
    /// Check analytic gradients of every layer and the full model against finite differences.
    Gradcheck(GradcheckCmd),
}

#[derive(Args)]
struct SynthCmd {
    #[arg(long)]
    count: usize,
    /// Square image extent in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Share of samples tagged as test.
    #[arg(long, default_value_t = 0.0)]
    test_fraction: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Error,
    Skip,
}

#[derive(Args)]
struct ConvertCmd {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    images: PathBuf,
    /// One class name per line, background first. Defaults to the built-in ten classes.
    #[arg(long)]
    labelmap: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// What to do with labels missing from the label map.
    #[arg(long, value_enum, default_value = "error")]
    policy: PolicyArg,
    /// Seed of the train/test split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Resize every pair to this square extent.
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args)]
struct TrainCmd {
    #[arg(long)]
    data: Option<PathBuf>,
    /// key=value settings file (a previous run's run_manifest.txt works too).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train once per seed, into <out>/seed_<s>/.
    #[arg(long, value_delimiter = ',', conflicts_with = "seed")]
    seeds: Vec<u64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Stem width; stage widths follow as 1, 2, 4 and 8 times it.
    #[arg(long)]
    base_width: Option<usize>,
    /// Square model input extent (default: the dataset's extent).
    #[arg(long)]
    input_size: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Plain skip connections instead of channel fusion attention.
    #[arg(long)]
    no_cfa: bool,
    /// Drop the gated frequency weighting inside the wavelet blocks.
    #[arg(long)]
    no_gfwm: bool,
    /// Wavelet-block kernel sizes: 3, 5 or 3,5.
    #[arg(long)]
    kernels: Option<String>,
    /// Plain double-conv encoder blocks instead of wavelet blocks.
    #[arg(long)]
    plain_unet: bool,
    /// Any other setting, as key=value (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    Dataset,
    PerImage,
}

#[derive(Args)]
struct EvalCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    split: SplitArg,
    #[arg(long, value_enum, default_value = "dataset")]
    aggregation: AggregationArg,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    /// Directory for report.txt and report.kv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckCmd {
    /// Spatial extent of the layer checks (even).
    #[arg(long, default_value_t = 8)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Extent of the end-to-end model check.
    #[arg(long, default_value_t = 32)]
    model_size: usize,
    /// Only run checks whose name contains this.
    #[arg(long)]
    only: Option<String>,
}

impl TrainCmd {
    fn overrides(&self) -> Result<Vec<(String, String)>, Error> {
        let mut kv: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| kv.push((k.to_string(), v));
        // base_width resets the stage widths, so it goes before --set.
        if let Some(v) = self.base_width {
            put("base_width", v.to_string());
        }
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("--set expects KEY=VALUE, got {s:?}")))?;
            put(k.trim(), v.trim().to_string());
        }
        let optional = [
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("batch_size", self.batch.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("lr0", self.lr.map(|v| v.to_string())),
            ("input_size", self.input_size.map(|v| v.to_string())),
            ("checkpoint_every", self.checkpoint_every.map(|v| v.to_string())),
            ("kernel_set", self.kernels.clone()),
        ];
        for (k, v) in optional {
            if let Some(v) = v {
                put(k, v);
            }
        }
        if self.no_cfa {
            put("use_cfa", "false".into());
        }
        if self.no_gfwm || self.plain_unet {
            put("use_gfwm", "false".into());
        }
        if self.plain_unet {
            put("use_mwcn", "false".into());
        }
        Ok(kv)
    }
}

fn run(cmd: Command) -> Result<(), Error> {
    commands::configure_threads()?;
    match cmd {
        Command::Synth(c) => {
            let args = SynthArgs {
                count: c.count,
                size: c.size,
                seed: c.seed,
                classes: c.classes,
                test_fraction: c.test_fraction,
                out: c.out,
            };
            let samples = commands::synth(&args)?;
            println!("wrote {} samples to {}", samples.len(), args.out.display());
        }
        Command::Convert(c) => {
            let args = ConvertArgs {
                annotations: c.annotations,
                images: c.images,
                labelmap: c.labelmap,
                out: c.out,
                policy: match c.policy {
                    PolicyArg::Error => LabelPolicy::Error,
                    PolicyArg::Skip => LabelPolicy::Skip,
                },
                seed: c.seed,
                test_fraction: c.test_fraction,
                size: c.size,
            };
            let s = commands::convert(&args)?;
            println!(
                "converted {} files ({} train, {} test) into {}",
                s.converted.len(),
                s.train,
                s.test,
                args.out.display()
            );
        }
        Command::Train(c) => {
            let args = TrainArgs {
                overrides: c.overrides()?,
                data: c.data,
                config: c.config,
                seeds: c.seeds,
                out: c.out,
            };
            for s in commands::train(&args)? {
                println!(
                    "seed {}: {} parameters, {} iterations, final loss {}, checkpoint {}",
                    s.seed,
                    s.parameters,
                    s.iterations,
                    s.final_loss.map_or_else(|| "n/a".into(), |l| format!("{l:.6}")),
                    s.checkpoint.display()
                );
            }
        }
        Command::Eval(c) => {
            let args = EvalArgs {
                checkpoint: c.checkpoint,
                data: c.data,
                split: match c.split {
                    SplitArg::Train => Some(Split::Train),
                    SplitArg::Test => Some(Split::Test),
                    SplitArg::All => None,
                },
                aggregation: match c.aggregation {
                    AggregationArg::Dataset => Aggregation::Dataset,
                    AggregationArg::PerImage => Aggregation::PerImage,
                },
                batch_size: c.batch,
                out: c.out,
            };
            print!("{}", commands::eval(&args)?);
        }
        Command::Predict(c) => {
            let s = commands::predict(&PredictArgs {
                checkpoint: c.checkpoint,
                image: c.image,
                out: c.out,
            })?;
            println!(
                "{}x{} mask written to {}, overlay to {}",
                s.height,
                s.width,
                s.mask.display(),
                s.overlay.display()
            );
        }
        Command::Gradcheck(c) => {
            let report = commands::gradcheck(&GradcheckArgs {
                size: c.size,
                seed: c.seed,
                model_size: c.model_size,
                only: c.only,
            })?;
            println!("{report}");
            if !report.passed() {
                let failed: Vec<String> = report
                    .fp32
                    .failures()
                    .into_iter()
                    .chain(report.fp64.failures())
                    .map(|r| r.layer.clone())
                    .collect();
                return Err(Error::Verification(format!(
                    "gradient check failed for {}",
                    failed.join(", ")
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
