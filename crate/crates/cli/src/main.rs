use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use stwa_core::bench::{self, BenchSpec};
use stwa_core::checkpoint::{self, CheckpointError};
use stwa_core::data::{self, DataError, Dataset};
use stwa_core::model::{Model, ModelConfig, Variant};
use stwa_core::rng::seeded;
use stwa_core::training::{self, FitOptions};

#[derive(Parser)]
#[command(name = "stwa", version, about = "Spatio-temporal window attention forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, report and loss curve.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        variant: Option<String>,
    },
    /// Print test-split metrics of a checkpoint as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Time forward passes over a sweep of history lengths.
    Bench {
        /// Comma-separated history lengths.
        #[arg(long = "H", value_delimiter = ',', default_values_t = [12, 24, 48, 96])]
        h: Vec<usize>,
        /// Comma-separated variant names.
        #[arg(long, value_delimiter = ',', default_values_t = ["SA".to_string(), "WA".to_string(), "ST-WA".to_string()])]
        variant: Vec<String>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long = "N", default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 16)]
        d: usize,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic traffic CSV.
    Synth {
        #[arg(long = "N")]
        n: usize,
        #[arg(long = "T")]
        t: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2.0)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// An error with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type Outcome = Result<(), Failure>;

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, error: error.into() }
}

fn io(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, error: error.into() }
}

fn from_data(error: DataError) -> Failure {
    match error {
        DataError::Io(_) => io(error),
        _ => usage(error),
    }
}

fn from_checkpoint(error: CheckpointError) -> Failure {
    match error {
        CheckpointError::Io(_) => io(error),
        _ => usage(error),
    }
}

fn read_config(path: Option<&Path>) -> Result<ModelConfig, Failure> {
    let Some(path) = path else {
        return Ok(ModelConfig::default());
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(io)?;
    ModelConfig::from_json(&text).map_err(|e| usage(anyhow!("config {}: {e}", path.display())))
}

fn load_dataset(path: &Path, config: &ModelConfig) -> Result<Dataset, Failure> {
    let store = data::load_csv(path).map_err(from_data)?;
    Dataset::prepare(&store, config.history, config.horizon).map_err(from_data)
}

fn write_file(path: &Path, write: impl FnOnce(&mut fs::File) -> std::io::Result<()>) -> Outcome {
    let mut file = fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(io)?;
    write(&mut file).with_context(|| format!("writing {}", path.display())).map_err(io)
}

fn train(config: Option<&Path>, data_path: &Path, out: &Path, seed: Option<u64>, variant: Option<&str>) -> Outcome {
    let mut config = read_config(config)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(name) = variant {
        config.variant = name.parse::<Variant>().map_err(usage)?;
    }
    config.validate().map_err(usage)?;
    let data = load_dataset(data_path, &config)?;
    let config = config.with_dims(data.n_sensors(), data.features()).map_err(usage)?;

    let mut rng = seeded(config.seed);
    let mut model = Model::new(&config, &mut rng).map_err(usage)?;
    let options = FitOptions::from_model(&model);
    let report = training::fit(&mut model, &data, &options, &mut rng).map_err(usage)?;

    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(io)?;
    checkpoint::save(&model, Some(&data.normalizer), out.join("checkpoint.bin")).map_err(from_checkpoint)?;
    write_file(&out.join("report.json"), |f| writeln!(f, "{}", report.to_json()))?;
    write_file(&out.join("loss_curve.csv"), |f| report.write_loss_curve(f))?;
    write_file(&out.join("timings.csv"), |f| report.write_timings(f))?;
    eprintln!(
        "{}: {} epochs, best val MAE {:.4} at epoch {}, test MAE {:.4}",
        report.variant,
        report.epochs.len(),
        report.best_val_mae,
        report.best_epoch,
        report.test.mae
    );
    Ok(())
}

fn eval(checkpoint_path: &Path, data_path: &Path) -> Outcome {
    let ckpt = checkpoint::load(checkpoint_path).map_err(from_checkpoint)?;
    let config = ckpt.model.config().clone();
    let data = load_dataset(data_path, &config)?;
    config
        .clone()
        .with_dims(data.n_sensors(), data.features())
        .map_err(usage)?;
    let normalizer = ckpt.normalizer.unwrap_or(data.normalizer);
    let metrics = training::evaluate(&ckpt.model, &data.test, &normalizer, config.batch).map_err(usage)?;
    println!("{}", serde_json::to_string_pretty(&metrics).expect("metrics serialize"));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_bench(h: Vec<usize>, variants: &[String], repeats: usize, n: usize, d: usize, batch: usize, seed: u64, out: Option<&Path>) -> Outcome {
    let variants = variants
        .iter()
        .map(|v| v.parse::<Variant>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(usage)?;
    if repeats == 0 || n == 0 || d == 0 || batch == 0 {
        return Err(usage(anyhow!("repeats, N, d and batch must be positive")));
    }
    let spec = BenchSpec {
        variants,
        histories: h,
        n_sensors: n,
        d,
        batch,
        repeats,
        seed,
        ..BenchSpec::default()
    };
    let rows = bench::run(&spec);
    match out {
        Some(path) => {
            let file = fs::File::create(path)
                .with_context(|| format!("creating {}", path.display()))
                .map_err(io)?;
            bench::write_csv(&rows, file).map_err(io)
        }
        None => bench::write_csv(&rows, std::io::stdout().lock()).map_err(io),
    }
}

fn synth(n: usize, t: usize, seed: u64, noise: f64, out: &Path) -> Outcome {
    if !(noise >= 0.0) {
        return Err(usage(anyhow!("noise must be non-negative")));
    }
    let store = data::synth_traffic(n, t, seed, noise).map_err(from_data)?;
    data::save_csv(&store, out).map_err(from_data)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train {
            config,
            data,
            out,
            seed,
            variant,
        } => train(config.as_deref(), &data, &out, seed, variant.as_deref()),
        Command::Eval { checkpoint, data } => eval(&checkpoint, &data),
        Command::Bench {
            h,
            variant,
            repeats,
            n,
            d,
            batch,
            seed,
            out,
        } => run_bench(h, &variant, repeats, n, d, batch, seed, out.as_deref()),
        Command::Synth { n, t, seed, noise, out } => synth(n, t, seed, noise, &out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
