//! Grid orchestration. Each cell trains in its own directory under `--out`;
//! cells whose manifest is already finalized are read back instead of rerun.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use acvae_core::eval::{default_cells, parse_metrics_csv, sweep_csv, EvalSummary, SweepRow};
use acvae_core::{Censor, ConditioningMode};
use clap::{Args, Parser};

use crate::failure::{code, CliResult, Failure};
use crate::run::{self, Data, RunManifest, RunSpec, Status, METRICS_FILE};
use crate::{CellArgs, CensorKind, CommonArgs, Mode};

pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Args)]
pub struct SweepArgs {
    /// One cell per line as `--mode M --censor C [--lambda L | --gamma G]`;
    /// `#` starts a comment. Without it the built-in grids are used.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Modes for the built-in grids.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "full,partial,basic")]
    modes: Vec<Mode>,
    /// Cells trained concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Parser)]
#[command(no_binary_name = true)]
struct GridLine {
    #[command(flatten)]
    cell: CellArgs,
}

fn parse_grid(text: &str) -> CliResult<Vec<CellArgs>> {
    let mut cells = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parsed = GridLine::try_parse_from(line.split_whitespace()).map_err(|e| {
            Failure::usage(format!(
                "grid line {}: {}",
                n + 1,
                e.to_string().lines().next().unwrap_or("")
            ))
        })?;
        parsed
            .cell
            .censor()
            .map_err(|f| Failure::usage(format!("grid line {}: {f}", n + 1)))?;
        cells.push(parsed.cell);
    }
    if cells.is_empty() {
        return Err(Failure::usage("grid file has no cells"));
    }
    Ok(cells)
}

fn cell_args(mode: Mode, censor: Censor) -> CellArgs {
    let (kind, lambda, gamma) = match censor {
        Censor::None => (CensorKind::None, None, None),
        Censor::Adversarial { lambda } => (CensorKind::Adv, Some(lambda), None),
        Censor::Kl { gamma } => (CensorKind::Kl, None, Some(gamma)),
    };
    CellArgs {
        mode,
        censor: kind,
        lambda,
        gamma,
    }
}

fn default_grid(modes: &[Mode]) -> Vec<CellArgs> {
    modes
        .iter()
        .flat_map(|&m| {
            default_cells(ConditioningMode::from(m))
                .into_iter()
                .map(move |c| cell_args(m, c))
        })
        .collect()
}

pub fn cell_dir_name(spec: &RunSpec) -> String {
    format!("{}-{}", spec.model.mode, spec.model.censor)
}

fn finished_summary(dir: &Path, spec: &RunSpec) -> Option<EvalSummary> {
    let manifest = RunManifest::read(dir)?;
    if manifest.status != Status::Finished || manifest.spec != *spec {
        return None;
    }
    let text = fs::read_to_string(dir.join(METRICS_FILE)).ok()?;
    let records = parse_metrics_csv(&text).ok()?;
    records
        .last()
        .filter(|r| r.epoch == spec.training.epochs)
        .map(EvalSummary::from)
}

pub fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    let cells = match &args.grid {
        Some(path) => {
            parse_grid(&fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?)?
        }
        None => default_grid(&args.modes),
    };
    let specs: Vec<RunSpec> = cells.iter().map(|c| args.common.spec(c)).collect::<CliResult<_>>()?;
    if args.jobs == 0 {
        return Err(Failure::usage("--jobs must be >= 1"));
    }
    let data = Data::load(&specs[0].data)?;
    fs::create_dir_all(&args.out).map_err(|e| Failure::other(format!("{}: {e}", args.out.display())))?;

    let rows: Vec<Mutex<Option<SweepRow>>> = specs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(spec) = specs.get(i) else { break };
        let name = cell_dir_name(spec);
        let dir = args.out.join(&name);
        let outcome = match finished_summary(&dir, spec) {
            Some(s) => {
                eprintln!("[{name}] already finished; skipping");
                Ok(s)
            }
            None => run::run_training(spec, &data, &dir, &name)
                .map(|r| EvalSummary::from(&r))
                .map_err(|f| {
                    eprintln!("[{name}] failed: {f}");
                    f.message
                }),
        };
        *rows[i].lock().expect("row lock") = Some(SweepRow {
            mode: spec.model.mode,
            censor: spec.model.censor,
            seed: spec.training.seed,
            epochs: spec.training.epochs,
            outcome,
        });
    };
    thread::scope(|s| {
        for _ in 0..args.jobs.min(specs.len()) {
            s.spawn(worker);
        }
    });

    let rows: Vec<SweepRow> = rows
        .into_iter()
        .map(|m| m.into_inner().expect("row lock").expect("every cell ran"))
        .collect();
    let csv_path = args.out.join(SWEEP_FILE);
    fs::write(&csv_path, sweep_csv(&rows)).map_err(|e| Failure::other(format!("{}: {e}", csv_path.display())))?;
    let ok = rows.iter().filter(|r| r.outcome.is_ok()).count();
    println!("{ok}/{} cells finished; wrote {}", rows.len(), csv_path.display());
    if ok == 0 {
        return Err(Failure {
            code: code::OTHER,
            message: "no sweep cell succeeded".into(),
        });
    }
    Ok(())
}
