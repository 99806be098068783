//! Test-set metrics, tradeoff sweeps and image grids.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::mnist::Dataset;
use crate::models::{one_hot, AdversaryNet, Censor, CensoredVae, ConditioningMode, DecoderNet, EncoderNet};
use crate::rng::{standard_normal, StreamRng};
use crate::stochastic::{
    argmax_rows, bernoulli_loglik, kl_standard_normal, mi_estimate, reparameterize, softmax_cross_entropy,
};
use crate::tensor::Tensor;

/// Items per forward pass during evaluation.
const EVAL_CHUNK: usize = 500;

/// Test-set summary with one sampled `z` per item, shared by the ELBO and the adversary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub elbo: f64,
    pub recon: f64,
    pub kl: f64,
    pub adv_ce: f64,
    pub adv_acc: f64,
    pub mi_estimate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversaryEval {
    pub accuracy: f64,
    pub cross_entropy: f64,
    pub mi_estimate: f64,
}

#[derive(Default)]
struct Sums {
    recon: f64,
    kl: f64,
    ce: f64,
    hits: usize,
}

fn accumulate(
    enc: &EncoderNet,
    dec: Option<&DecoderNet>,
    adv: Option<&AdversaryNet>,
    ds: &Dataset,
    rng: &mut StreamRng,
) -> Result<(Sums, usize)> {
    let mut sums = Sums::default();
    let order: Vec<usize> = (0..ds.len()).collect();
    for chunk in order.chunks(EVAL_CHUNK) {
        let sub = ds.select(chunk);
        let s = one_hot(&sub.labels, enc.d_s())?;
        let post = enc.encode(&sub.images, &s)?;
        let sample = reparameterize(&post, 1, rng);
        if let Some(dec) = dec {
            let y = dec.decode(&sample.z, &s)?;
            sums.recon += bernoulli_loglik(&sub.images, &y)?.iter().sum::<f64>();
            sums.kl += kl_standard_normal(&post).iter().sum::<f64>();
        }
        if let Some(adv) = adv {
            let logits = adv.logits(&sample.z)?;
            sums.ce += softmax_cross_entropy(&logits, &sub.labels)?.losses.iter().sum::<f64>();
            sums.hits += argmax_rows(&logits)
                .iter()
                .zip(&sub.labels)
                .filter(|(p, l)| p == l)
                .count();
        }
    }
    Ok((sums, ds.len()))
}

/// ELBO (γ = 1, one draw), adversary accuracy, cross-entropy and MI estimate.
pub fn evaluate(model: &CensoredVae, ds: &Dataset, rng: &mut StreamRng) -> Result<EvalReport> {
    let (s, n) = accumulate(&model.encoder, Some(&model.decoder), Some(&model.adversary), ds, rng)?;
    let n = n as f64;
    let (recon, kl, adv_ce) = (s.recon / n, s.kl / n, s.ce / n);
    Ok(EvalReport {
        elbo: recon - kl,
        recon,
        kl,
        adv_ce,
        adv_acc: s.hits as f64 / n,
        mi_estimate: mi_estimate(adv_ce, model.config.d_s),
    })
}

/// Mean single-sample ELBO with γ = 1 over `ds`.
pub fn eval_elbo(enc: &EncoderNet, dec: &DecoderNet, ds: &Dataset, rng: &mut StreamRng) -> Result<f64> {
    let (s, n) = accumulate(enc, Some(dec), None, ds, rng)?;
    Ok((s.recon - s.kl) / n as f64)
}

/// Adversary metrics on one sampled `z` per item.
pub fn eval_adversary(
    adv: &AdversaryNet,
    enc: &EncoderNet,
    ds: &Dataset,
    rng: &mut StreamRng,
) -> Result<AdversaryEval> {
    let (s, n) = accumulate(enc, None, Some(adv), ds, rng)?;
    let ce = s.ce / n as f64;
    Ok(AdversaryEval {
        accuracy: s.hits as f64 / n as f64,
        cross_entropy: ce,
        mi_estimate: mi_estimate(ce, adv.net.output_dim()),
    })
}

pub const METRICS_HEADER: &str = "epoch,elbo,recon,kl,adv_ce,adv_acc,mi_estimate";

/// One line of the per-epoch metrics stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub elbo: f64,
    pub recon: f64,
    pub kl: f64,
    pub adv_ce: f64,
    pub adv_acc: f64,
    pub mi_estimate: f64,
    /// Epoch mean of the training objective; not part of the CSV.
    pub train_elbo: Option<f64>,
}

impl MetricsRecord {
    pub fn new(epoch: usize, ev: &EvalReport, train_elbo: f64) -> Self {
        Self {
            epoch,
            elbo: ev.elbo,
            recon: ev.recon,
            kl: ev.kl,
            adv_ce: ev.adv_ce,
            adv_acc: ev.adv_acc,
            mi_estimate: ev.mi_estimate,
            train_elbo: Some(train_elbo),
        }
    }

    /// Floats use shortest round-trip formatting, so parsing is exact.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch, self.elbo, self.recon, self.kl, self.adv_ce, self.adv_acc, self.mi_estimate
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return Err(Error::InvalidConfig(format!("metrics row needs 7 fields: {line:?}")));
        }
        let num = |i: usize| parse_field::<f64>(f[i], line);
        Ok(Self {
            epoch: parse_field(f[0], line)?,
            elbo: num(1)?,
            recon: num(2)?,
            kl: num(3)?,
            adv_ce: num(4)?,
            adv_acc: num(5)?,
            mi_estimate: num(6)?,
            train_elbo: None,
        })
    }
}

fn parse_field<T: FromStr>(s: &str, line: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::InvalidConfig(format!("bad field {s:?} in {line:?}")))
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == METRICS_HEADER => {}
        other => return Err(Error::InvalidConfig(format!("unexpected metrics header {other:?}"))),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(MetricsRecord::parse_csv_row)
        .collect()
}

// ---------------------------------------------------------------------------
// Sweeps

pub const SWEEP_HEADER: &str = "mode,censor,param,elbo,adv_acc,adv_ce,mi_estimate,seed,epochs";
const ERROR_MARKER: &str = "ERR";

/// Final-epoch metrics of one sweep cell, or the reason it failed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub mode: ConditioningMode,
    pub censor: Censor,
    pub seed: u64,
    pub epochs: usize,
    pub outcome: std::result::Result<EvalSummary, String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub elbo: f64,
    pub adv_acc: f64,
    pub adv_ce: f64,
    pub mi_estimate: f64,
}

impl From<&MetricsRecord> for EvalSummary {
    fn from(r: &MetricsRecord) -> Self {
        Self {
            elbo: r.elbo,
            adv_acc: r.adv_acc,
            adv_ce: r.adv_ce,
            mi_estimate: r.mi_estimate,
        }
    }
}

impl SweepRow {
    pub fn csv_row(&self) -> String {
        let param = match self.censor {
            Censor::None => String::new(),
            c => c.param().map(|p| p.to_string()).unwrap_or_default(),
        };
        let metrics = match &self.outcome {
            Ok(m) => format!("{},{},{},{}", m.elbo, m.adv_acc, m.adv_ce, m.mi_estimate),
            Err(_) => [ERROR_MARKER; 4].join(","),
        };
        format!(
            "{},{},{},{},{},{}",
            self.mode,
            self.censor.kind(),
            param,
            metrics,
            self.seed,
            self.epochs
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 9 {
            return Err(Error::InvalidConfig(format!("sweep row needs 9 fields: {line:?}")));
        }
        let mode: ConditioningMode = f[0].parse()?;
        let censor = parse_censor(f[1], f[2])?;
        let outcome = if f[3] == ERROR_MARKER {
            Err(ERROR_MARKER.to_string())
        } else {
            Ok(EvalSummary {
                elbo: parse_field(f[3], line)?,
                adv_acc: parse_field(f[4], line)?,
                adv_ce: parse_field(f[5], line)?,
                mi_estimate: parse_field(f[6], line)?,
            })
        };
        Ok(Self {
            mode,
            censor,
            seed: parse_field(f[7], line)?,
            epochs: parse_field(f[8], line)?,
            outcome,
        })
    }
}

/// Inverse of [`Censor::kind`] and [`Censor::param`].
pub fn parse_censor(kind: &str, param: &str) -> Result<Censor> {
    let value = || parse_field::<f64>(param, kind);
    let c = match kind {
        "none" => Censor::None,
        "adv" => Censor::Adversarial { lambda: value()? },
        "kl" => Censor::Kl { gamma: value()? },
        other => return Err(Error::InvalidConfig(format!("unknown censor {other:?}"))),
    };
    c.validate()?;
    Ok(c)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == SWEEP_HEADER => {}
        other => return Err(Error::InvalidConfig(format!("unexpected sweep header {other:?}"))),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(SweepRow::parse_csv_row)
        .collect()
}

/// λ and γ grids for a mode; both include their no-op value.
pub fn default_grids(mode: ConditioningMode) -> (&'static [f64], &'static [f64]) {
    match mode {
        ConditioningMode::Basic => (&[0.0, 10.0, 20.0, 50.0, 100.0], &[1.0, 10.0, 20.0, 50.0]),
        _ => (&[0.0, 1.0, 2.0, 5.0, 10.0, 20.0], &[1.0, 2.0, 4.0, 8.0]),
    }
}

/// Sweep cells for one mode. λ = 0 and γ = 1 collapse into a single baseline.
pub fn default_cells(mode: ConditioningMode) -> Vec<Censor> {
    let (lambdas, gammas) = default_grids(mode);
    let mut cells = vec![Censor::None];
    cells.extend(
        lambdas
            .iter()
            .filter(|&&l| l != 0.0)
            .map(|&lambda| Censor::Adversarial { lambda }),
    );
    cells.extend(gammas.iter().filter(|&&g| g != 1.0).map(|&gamma| Censor::Kl { gamma }));
    cells
}

/// Trains every `(mode, censor)` cell in turn and records final-epoch metrics.
/// A failing cell becomes an error row; the sweep carries on.
pub fn tradeoff_sweep(
    cells: &[(ConditioningMode, Censor)],
    base: &crate::models::ModelConfig,
    training: &crate::training::TrainingConfig,
    data: &Dataset,
    test: &Dataset,
) -> Vec<SweepRow> {
    cells
        .iter()
        .map(|&(mode, censor)| {
            let config = crate::models::ModelConfig { mode, censor, ..*base };
            let outcome = crate::training::train(config, training, data, test, |_| {})
                .map_err(|e| e.to_string())
                .and_then(|o| {
                    o.metrics
                        .last()
                        .map(EvalSummary::from)
                        .ok_or_else(|| "no epochs".to_string())
                });
            SweepRow {
                mode,
                censor,
                seed: training.seed,
                epochs: training.epochs,
                outcome,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Image grids

/// 8-bit grayscale montage of square cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageGrid {
    pub rows: usize,
    pub cols: usize,
    pub side: usize,
    /// Row-major, `height() × width()`.
    pub pixels: Vec<u8>,
}

impl ImageGrid {
    pub fn new(rows: usize, cols: usize, side: usize) -> Self {
        Self {
            rows,
            cols,
            side,
            pixels: vec![0; rows * cols * side * side],
        }
    }

    pub fn width(&self) -> usize {
        self.cols * self.side
    }

    pub fn height(&self) -> usize {
        self.rows * self.side
    }

    /// Writes one cell from intensities in `[0, 1]`.
    pub fn set_cell(&mut self, row: usize, col: usize, values: &[f64]) {
        assert_eq!(values.len(), self.side * self.side, "cell size");
        let w = self.width();
        for (i, &v) in values.iter().enumerate() {
            let (r, c) = (i / self.side, i % self.side);
            self.pixels[(row * self.side + r) * w + col * self.side + c] = quantize(v);
        }
    }

    pub fn cell(&self, row: usize, col: usize) -> Vec<u8> {
        let w = self.width();
        (0..self.side * self.side)
            .map(|i| self.pixels[(row * self.side + i / self.side) * w + col * self.side + i % self.side])
            .collect()
    }

    /// Binary PGM (P5) encoding.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width(), self.height()).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// `round(v·255)` with halves rounded up, saturating at 0 and 255.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn write_pgm(grid: &ImageGrid, path: &Path) -> Result<()> {
    fs::write(path, grid.to_pgm()).map_err(io_err(path))
}

fn cell_side(d_x: usize) -> Result<usize> {
    let side = (d_x as f64).sqrt().round() as usize;
    if side * side == d_x {
        Ok(side)
    } else {
        Err(Error::InvalidConfig(format!("{d_x} pixels do not form a square image")))
    }
}

/// Row 0 holds the originals; row `c + 1` re-decodes each example's sampled
/// `z` under class `c`. One column per example.
pub fn style_transfer_grid(model: &CensoredVae, examples: &Dataset, rng: &mut StreamRng) -> Result<ImageGrid> {
    let cfg = &model.config;
    if !cfg.mode.decoder_conditioned() {
        return Err(Error::UnsupportedMode {
            task: "style transfer",
            mode: cfg.mode.to_string(),
        });
    }
    let side = cell_side(cfg.d_x)?;
    let n = examples.len();
    let mut grid = ImageGrid::new(cfg.d_s + 1, n, side);
    for i in 0..n {
        grid.set_cell(0, i, examples.images.row(i));
    }
    let s = one_hot(&examples.labels, cfg.d_s)?;
    let post = model.encoder.encode(&examples.images, &s)?;
    let z = reparameterize(&post, 1, rng).z;
    for class in 0..cfg.d_s {
        let target = one_hot(&vec![class; n], cfg.d_s)?;
        let y = model.decoder.decode(&z, &target)?;
        for i in 0..n {
            grid.set_cell(class + 1, i, y.row(i));
        }
    }
    Ok(grid)
}

/// Prior samples: cell `(r, c)` decodes a fresh `z ~ N(0, I)` under class `c mod d_s`.
pub fn sampling_grid(
    dec: &DecoderNet,
    d_z: usize,
    d_s: usize,
    rows: usize,
    cols: usize,
    rng: &mut StreamRng,
) -> Result<ImageGrid> {
    let z = standard_normal(rows * cols, d_z, rng);
    sampling_grid_from(dec, &z, d_s, rows, cols)
}

/// [`sampling_grid`] with explicit latents, one row of `z` per cell in row-major order.
pub fn sampling_grid_from(dec: &DecoderNet, z: &Tensor, d_s: usize, rows: usize, cols: usize) -> Result<ImageGrid> {
    if z.rows() != rows * cols {
        return Err(Error::ShapeMismatch {
            op: "sampling_grid",
            left: z.shape(),
            right: (rows * cols, z.cols()),
        });
    }
    let classes: Vec<usize> = (0..rows * cols).map(|i| (i % cols) % d_s).collect();
    let y = dec.decode(z, &one_hot(&classes, d_s)?)?;
    let mut grid = ImageGrid::new(rows, cols, cell_side(y.cols())?);
    for i in 0..rows * cols {
        grid.set_cell(i / cols, i % cols, y.row(i));
    }
    Ok(grid)
}

/// Sidecar written next to every grid image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridManifest {
    pub task: String,
    pub checkpoint: String,
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    /// Digit class per column (sampling) or per re-decoded row (transfer).
    pub classes: Vec<usize>,
    pub mode: ConditioningMode,
}

impl GridManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        let _ = writeln!(s);
        s
    }
}
