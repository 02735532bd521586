//! Command-line interface: `synth`, `train`, `eval`, `bench`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or model
//! error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::classifier::{self, EvalReport, MIN_TIMING_REPS};
use crate::dataset::{self, DataSet};
use crate::graph::{KernelWidth, LaplacianMode};
use crate::model_file;
use crate::trainer::{self, Preset, SkladlModel, TrainConfig};
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "skladl",
    version,
    about = "Locality-constrained analysis dictionary learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic Gaussian-cluster dataset as CSV.
    Synth {
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 20)]
        per_class: usize,
        #[arg(long, default_value_t = 10)]
        dim: usize,
        #[arg(long, default_value_t = 8.0)]
        separation: f64,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a labeled CSV file.
    Train(TrainArgs),
    /// Evaluate a model and write a text report.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Leave the timing line out of the report (makes reports reproducible).
        #[arg(long)]
        no_timing: bool,
    },
    /// Median per-sample classification time.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = MIN_TIMING_REPS)]
        reps: usize,
    },
}

#[derive(Debug, clap::Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Tuned alpha/beta pair; explicit --alpha/--beta override it.
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    ridge_delta: Option<f64>,
    #[arg(long)]
    knn: Option<usize>,
    /// Heat-kernel width; median neighbor distance when omitted.
    #[arg(long)]
    kernel_width: Option<f64>,
    #[arg(long)]
    t0: Option<usize>,
    #[arg(long)]
    dict_size: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    laplacian: Option<LaplacianArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetArg {
    Eyaleb,
    Ar,
    Scene15,
    Ucf50,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LaplacianArg {
    Unnorm,
    Symnorm,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

/// Run the CLI with `args` (including the program name).
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Data(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_DATA
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::Synth {
            classes,
            per_class,
            dim,
            separation,
            noise,
            seed,
            out: path,
        } => {
            if classes < 2 || dim < 2 {
                return Err(Failure::Usage(format!(
                    "--classes ({classes}) and --dim ({dim}) must both be at least 2"
                )));
            }
            let data = dataset::synth_dataset(classes, per_class, dim, separation, noise, seed);
            dataset::save_csv(&data, &path)?;
            writeln!(
                out,
                "wrote {} samples ({} features) to {}",
                data.len(),
                dim,
                path.display()
            )?;
        }
        Command::Train(args) => {
            let config = train_config(&args)?;
            let data = dataset::load_csv(&args.data)?;
            let model = trainer::train(&data, &config)?;
            model_file::save_model(&model, &args.out)?;
            let last = model.history.last().expect("at least one iteration");
            writeln!(
                out,
                "trained {} atoms over {} samples in {} iterations (objective {}, convergence {})",
                model.dict_size(),
                data.len(),
                model.history.len(),
                last.objective.total,
                last.convergence
            )?;
        }
        Command::Eval {
            model,
            data,
            report,
            no_timing,
        } => {
            let model = model_file::load_model(&model)?;
            let data = load_for_model(&data, &model)?;
            let result = if no_timing {
                classifier::evaluate_accuracy(&model, &data.features, &data.labels)?
            } else {
                classifier::evaluate(&model, &data.features, &data.labels)?
            };
            let text = format_report(&result, &model, !no_timing);
            std::fs::write(&report, &text)?;
            writeln!(out, "accuracy: {}", result.accuracy)?;
        }
        Command::Bench { model, data, reps } => {
            if reps == 0 {
                return Err(Failure::Usage("--reps must be positive".into()));
            }
            let model = model_file::load_model(&model)?;
            let data = load_for_model(&data, &model)?;
            let median = classifier::time_classification(&model, &data.features, reps)?;
            writeln!(out, "median_classify_time_ms: {}", median * 1e3)?;
            writeln!(out, "reps: {reps}")?;
        }
    }
    Ok(())
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut config = TrainConfig::default();
    if let Some(p) = args.preset {
        config = config.with_preset(match p {
            PresetArg::Eyaleb => Preset::ExtendedYaleB,
            PresetArg::Ar => Preset::Ar,
            PresetArg::Scene15 => Preset::Scene15,
            PresetArg::Ucf50 => Preset::Ucf50,
        });
    }
    macro_rules! apply {
        ($($field:ident),*) => { $( if let Some(v) = args.$field { config.$field = v; } )* };
    }
    apply!(
        alpha,
        beta,
        ridge_delta,
        t0,
        dict_size,
        epsilon,
        max_iter,
        seed
    );
    if let Some(k) = args.knn {
        config.k_nn = k;
    }
    if let Some(w) = args.kernel_width {
        config.kernel_width = KernelWidth::Fixed(w);
    }
    if let Some(l) = args.laplacian {
        config.laplacian_mode = match l {
            LaplacianArg::Unnorm => LaplacianMode::Unnormalized,
            LaplacianArg::Symnorm => LaplacianMode::SymmetricNormalized,
        };
    }
    if config.t0 > config.dict_size {
        return Err(Failure::Usage(format!(
            "--t0 ({}) must not exceed --dict-size ({})",
            config.t0, config.dict_size
        )));
    }
    config
        .validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(config)
}

fn load_for_model(path: &std::path::Path, model: &SkladlModel) -> Result<DataSet, Failure> {
    let data = dataset::load_csv(path)?;
    if data.feature_dim() != model.feature_dim() {
        return Err(Failure::Data(format!(
            "feature dimension mismatch: model expects m = {}, data has m = {}",
            model.feature_dim(),
            data.feature_dim()
        )));
    }
    Ok(data.align_classes(&model.class_names)?)
}

/// Plain-text evaluation report: `key: value` lines, then confusion rows.
pub fn format_report(report: &EvalReport, model: &SkladlModel, timing: bool) -> String {
    let c = report.confusion.nrows();
    let samples: usize = report.counts.iter().sum();
    let correct: usize = (0..c).map(|i| report.counts[(i, i)]).sum();
    let mut s = String::new();
    let _ = writeln!(s, "accuracy: {}", report.accuracy);
    let _ = writeln!(s, "correct: {correct}");
    let _ = writeln!(s, "samples: {samples}");
    let _ = writeln!(s, "classes: {c}");
    let _ = writeln!(s, "dict_size: {}", model.dict_size());
    let _ = writeln!(s, "t0: {}", model.config.t0);
    if timing {
        let _ = writeln!(
            s,
            "mean_classify_time_ms: {}",
            report.mean_classify_time * 1e3
        );
    }
    let _ = writeln!(
        s,
        "confusion (rows: true class, columns: predicted class, row-normalized):"
    );
    for i in 0..c {
        let name = model
            .class_names
            .get(i)
            .cloned()
            .unwrap_or_else(|| i.to_string());
        let n: usize = report.counts.row(i).iter().sum();
        let row: Vec<String> = report
            .confusion
            .row(i)
            .iter()
            .map(|v| v.to_string())
            .collect();
        let _ = writeln!(s, "{name} (n={n}): {}", row.join(" "));
    }
    s
}
