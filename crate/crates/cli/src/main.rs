use std::path::PathBuf;
use std::process::ExitCode;

use acvae_core::{AdamConfig, Censor, ConditioningMode, ModelConfig, TrainingConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

mod failure;
mod generate;
mod run;
mod sweep;
mod verify;

use failure::{CliResult, Failure};
use run::{Data, DataSpec, RunSpec};

#[derive(Parser)]
#[command(name = "acvae", version = run::VERSION, about = "Censored conditional VAEs on MNIST")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model.
    Train(TrainArgs),
    /// Train a grid of censoring strengths and collect final metrics.
    Sweep(sweep::SweepArgs),
    /// Render style-transfer or prior-sample grids from a checkpoint.
    Generate(generate::GenerateArgs),
    /// Parse the MNIST files and report counts.
    VerifyData(verify::VerifyArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Full,
    Partial,
    Basic,
}

impl From<Mode> for ConditioningMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Full => ConditioningMode::Full,
            Mode::Partial => ConditioningMode::Partial,
            Mode::Basic => ConditioningMode::Basic,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CensorKind {
    None,
    Adv,
    Kl,
}

/// Model and censoring choice for one run.
#[derive(Args, Clone, Debug)]
pub struct CellArgs {
    #[arg(long, value_enum, default_value = "full")]
    pub mode: Mode,
    #[arg(long, value_enum, default_value = "none")]
    pub censor: CensorKind,
    /// Adversarial weight; requires `--censor adv`.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// KL weight; requires `--censor kl`.
    #[arg(long)]
    pub gamma: Option<f64>,
}

impl CellArgs {
    pub fn censor(&self) -> CliResult<Censor> {
        let censor = match (self.censor, self.lambda, self.gamma) {
            (_, Some(_), Some(_)) => return Err(Failure::usage("--lambda and --gamma are mutually exclusive")),
            (CensorKind::Adv, lambda, None) => Censor::Adversarial {
                lambda: lambda.ok_or_else(|| Failure::usage("--censor adv requires --lambda"))?,
            },
            (CensorKind::Kl, None, gamma) => Censor::Kl {
                gamma: gamma.ok_or_else(|| Failure::usage("--censor kl requires --gamma"))?,
            },
            (CensorKind::None, None, None) => Censor::None,
            (_, Some(_), _) => return Err(Failure::usage("--lambda requires --censor adv")),
            (_, _, Some(_)) => return Err(Failure::usage("--gamma requires --censor kl")),
        };
        censor.validate().map_err(|e| Failure::usage(e.to_string()))?;
        Ok(censor)
    }
}

/// Settings shared by every run of a command.
#[derive(Args, Clone, Debug)]
pub struct CommonArgs {
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory holding the four MNIST IDX files (optionally gzipped).
    #[arg(long, default_value = "data/mnist")]
    pub data: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub hidden: usize,
    #[arg(long, default_value_t = 20)]
    pub latent: usize,
    /// Latent draws per item in the training objective.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Train on the first N training images only.
    #[arg(long)]
    pub train_subset: Option<usize>,
    /// Evaluate on the first N test images only.
    #[arg(long)]
    pub test_subset: Option<usize>,
}

impl CommonArgs {
    pub fn spec(&self, cell: &CellArgs) -> CliResult<RunSpec> {
        let model = ModelConfig {
            d_z: self.latent,
            hidden: self.hidden,
            k: self.k,
            ..ModelConfig::mnist(cell.mode.into(), cell.censor()?)
        };
        let training = TrainingConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            seed: self.seed,
        };
        model.validate().map_err(|e| Failure::usage(e.to_string()))?;
        training.validate().map_err(|e| Failure::usage(e.to_string()))?;
        for (flag, v) in [
            ("--train-subset", self.train_subset),
            ("--test-subset", self.test_subset),
        ] {
            if v == Some(0) {
                return Err(Failure::usage(format!("{flag} must be >= 1")));
            }
        }
        Ok(RunSpec {
            model,
            training,
            data: DataSpec {
                dir: self.data.clone(),
                train_subset: self.train_subset,
                test_subset: self.test_subset,
            },
        })
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cell: CellArgs,
    #[command(flatten)]
    common: CommonArgs,
    /// Output directory for checkpoint, metrics and manifest.
    #[arg(long)]
    out: PathBuf,
}

fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let spec = args.common.spec(&args.cell)?;
    let data = Data::load(&spec.data)?;
    let label = format!("{}-{}", spec.model.mode, spec.model.censor);
    let last = run::run_training(&spec, &data, &args.out, &label)?;
    println!(
        "{label}: elbo {:.3}  adv_acc {:.4}  adv_ce {:.4}  mi {:.4}",
        last.elbo, last.adv_acc, last.adv_ce, last.mi_estimate
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            // keep diagnostics to a single line
            let text = e.to_string();
            eprintln!("{}", text.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(failure::code::USAGE);
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => sweep::cmd_sweep(a),
        Command::Generate(a) => generate::cmd_generate(a),
        Command::VerifyData(a) => verify::cmd_verify_data(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
