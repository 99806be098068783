use std::fs;
use std::path::PathBuf;

use acvae_core::checkpoint::read_checkpoint;
use acvae_core::eval::{sampling_grid, style_transfer_grid, write_pgm, GridManifest};
use acvae_core::{Dataset, SeedTree, Split, Stream};
use clap::{Args, ValueEnum};

use crate::failure::{CliResult, Failure};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Task {
    /// Re-decode test images under every digit class.
    Transfer,
    /// Decode prior samples, one digit class per column.
    Sample,
}

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    task: Task,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Defaults to the checkpoint's directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// MNIST directory; the transfer task uses the first test images.
    #[arg(long, default_value = "data/mnist")]
    data: PathBuf,
    /// Number of test images (transfer).
    #[arg(long, default_value_t = 10)]
    examples: usize,
    /// Grid rows (sample).
    #[arg(long, default_value_t = 10)]
    rows: usize,
    /// Grid columns (sample); column j uses digit class j mod 10.
    #[arg(long, default_value_t = 10)]
    cols: usize,
}

pub fn cmd_generate(args: &GenerateArgs) -> CliResult<()> {
    let (model, _) = read_checkpoint(&args.checkpoint)?;
    let cfg = model.config;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.checkpoint.parent().map(PathBuf::from).unwrap_or_default());
    let grids = out.join("grids");
    fs::create_dir_all(&grids).map_err(|e| Failure::other(format!("{}: {e}", grids.display())))?;

    let tree = SeedTree::new(args.seed);
    let (name, grid, classes) = match args.task {
        Task::Transfer => {
            if args.examples == 0 {
                return Err(Failure::usage("--examples must be >= 1"));
            }
            let test = Dataset::load(&args.data, Split::Test)
                .map_err(Failure::data)?
                .head(args.examples);
            let grid = style_transfer_grid(&model, &test, &mut tree.stream(Stream::StyleTransfer, 0))?;
            ("transfer", grid, (0..cfg.d_s).collect())
        }
        Task::Sample => {
            if args.rows == 0 || args.cols == 0 {
                return Err(Failure::usage("--rows and --cols must be >= 1"));
            }
            let mut rng = tree.stream(Stream::Sampling, 0);
            let grid = sampling_grid(&model.decoder, cfg.d_z, cfg.d_s, args.rows, args.cols, &mut rng)?;
            ("sample", grid, (0..args.cols).map(|c| c % cfg.d_s).collect())
        }
    };

    let image = grids.join(format!("{name}.pgm"));
    write_pgm(&grid, &image)?;
    let sidecar = GridManifest {
        task: name.into(),
        checkpoint: args.checkpoint.display().to_string(),
        seed: args.seed,
        rows: grid.rows,
        cols: grid.cols,
        classes,
        mode: cfg.mode,
    };
    let json = grids.join(format!("{name}.json"));
    fs::write(&json, sidecar.to_json()).map_err(|e| Failure::other(format!("{}: {e}", json.display())))?;
    println!("{}", image.display());
    Ok(())
}
