//! One training run and the files it leaves behind.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use acvae_core::checkpoint::write_checkpoint;
use acvae_core::eval::{MetricsRecord, METRICS_HEADER};
use acvae_core::mnist::Split;
use acvae_core::training::train;
use acvae_core::{Dataset, ModelConfig, TrainingConfig};
use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::failure::{CliResult, Failure};

pub const CHECKPOINT_FILE: &str = "checkpoint.acvae";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub const VERSION: &str = env!("ACVAE_VERSION");

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub data: DataSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub dir: PathBuf,
    /// Use only the first N training images.
    pub train_subset: Option<usize>,
    /// Evaluate on only the first N test images.
    pub test_subset: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Running,
    Finished,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub status: Status,
    pub spec: RunSpec,
    pub started: String,
    pub finished: Option<String>,
    pub outputs: Vec<String>,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Option<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
        serde_json::from_str(&text).ok()
    }

    /// Write-then-rename so readers never see a partial file.
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let tmp = dir.join(format!(".{MANIFEST_FILE}.tmp"));
        let mut text = serde_json::to_string_pretty(self).map_err(Failure::other)?;
        text.push('\n');
        fs::write(&tmp, text).map_err(|e| Failure::other(format!("{}: {e}", tmp.display())))?;
        fs::rename(&tmp, dir.join(MANIFEST_FILE)).map_err(Failure::other)
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub struct Data {
    pub train: Dataset,
    pub test: Dataset,
}

impl Data {
    pub fn load(spec: &DataSpec) -> CliResult<Self> {
        let load = |split| Dataset::load(&spec.dir, split).map_err(Failure::data);
        let mut train = load(Split::Train)?;
        let mut test = load(Split::Test)?;
        if let Some(n) = spec.train_subset {
            train = train.head(n);
        }
        if let Some(n) = spec.test_subset {
            test = test.head(n);
        }
        Ok(Self { train, test })
    }
}

/// Trains `spec` into `out`, streaming metrics and finalizing the manifest.
/// Returns the final-epoch record.
pub fn run_training(spec: &RunSpec, data: &Data, out: &Path, label: &str) -> CliResult<MetricsRecord> {
    fs::create_dir_all(out).map_err(|e| Failure::other(format!("{}: {e}", out.display())))?;
    let mut manifest = RunManifest {
        version: VERSION.to_string(),
        status: Status::Running,
        spec: spec.clone(),
        started: now(),
        finished: None,
        outputs: vec![METRICS_FILE.into(), CHECKPOINT_FILE.into()],
        error: None,
    };
    manifest.write(out)?;

    let result = train_into(spec, data, out, label);
    manifest.finished = Some(now());
    match &result {
        Ok(_) => manifest.status = Status::Finished,
        Err(f) => {
            manifest.status = Status::Failed;
            manifest.error = Some(f.message.clone());
        }
    }
    manifest.write(out)?;
    result
}

fn train_into(spec: &RunSpec, data: &Data, out: &Path, label: &str) -> CliResult<MetricsRecord> {
    let metrics_path = out.join(METRICS_FILE);
    let mut csv = BufWriter::new(File::create(&metrics_path).map_err(Failure::other)?);
    writeln!(csv, "{METRICS_HEADER}")?;
    csv.flush()?;

    let epochs = spec.training.epochs;
    let mut io_error = None;
    let mut clock = Instant::now();
    let outcome = train(spec.model, &spec.training, &data.train, &data.test, |r| {
        let written = writeln!(csv, "{}", r.csv_row()).and_then(|_| csv.flush());
        if let Err(e) = written {
            io_error.get_or_insert(e);
        }
        eprintln!(
            "[{label}] epoch {}/{epochs}  train {:.2}  test elbo {:.2}  adv acc {:.4}  mi {:.3}  ({:.1}s)",
            r.epoch,
            r.train_elbo.unwrap_or(f64::NAN),
            r.elbo,
            r.adv_acc,
            r.mi_estimate,
            clock.elapsed().as_secs_f64()
        );
        clock = Instant::now();
    })?;
    if let Some(e) = io_error {
        return Err(Failure::other(format!("{}: {e}", metrics_path.display())));
    }
    write_checkpoint(&out.join(CHECKPOINT_FILE), &outcome.model, spec.training.seed, epochs)?;
    Ok(*outcome.metrics.last().expect("at least one epoch"))
}
