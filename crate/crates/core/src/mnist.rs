//! MNIST in its IDX container format.
//!
//! Layout (all integers big-endian u32):
//!
//! ```text
//! images: 0x00000803  n  rows  cols  then n·rows·cols unsigned bytes
//! labels: 0x00000801  n                then n unsigned bytes
//! ```
//!
//! Files may be gzip-compressed; a leading `1f 8b` selects decompression.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{io_err, Error, IdxError, Result};
use crate::models::one_hot;
use crate::rng::StreamRng;
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;
pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

/// Raw 8-bit images, one row of `rows·cols` pixels per image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl RawImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(IdxError::TruncatedFile {
            expected: at + 4,
            got: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), IdxError> {
    let found = be_u32(bytes, 0)?;
    if found != expected {
        return Err(IdxError::BadMagic { found, expected });
    }
    Ok(())
}

fn check_length(bytes: &[u8], expected: usize) -> Result<(), IdxError> {
    match bytes.len() {
        n if n < expected => Err(IdxError::TruncatedFile { expected, got: n }),
        n if n > expected => Err(IdxError::TrailingBytes { count: n - expected }),
        _ => Ok(()),
    }
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<RawImages, IdxError> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let payload = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .and_then(|v| v.checked_add(16))
        .ok_or(IdxError::TruncatedFile {
            expected: usize::MAX,
            got: bytes.len(),
        })?;
    check_length(bytes, payload)?;
    Ok(RawImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    check_length(bytes, count + 8)?;
    let labels = bytes[8..].to_vec();
    if let Some((index, &value)) = labels.iter().enumerate().find(|(_, &v)| v as usize >= NUM_CLASSES) {
        return Err(IdxError::LabelOutOfRange { value, index });
    }
    Ok(labels)
}

pub fn write_idx_images(images: &RawImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGE_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Returns the bytes, gunzipped if they start with the gzip signature.
pub fn maybe_gunzip(bytes: Vec<u8>) -> std::io::Result<Vec<u8>> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

/// Pixel bytes divided by 255.
pub fn normalize(raw: &RawImages) -> Tensor {
    let data = raw.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    Tensor::from_vec(raw.count, raw.rows * raw.cols, data).expect("pixel count matches header")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn file_stems(self) -> (&'static str, &'static str) {
        match self {
            Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        }
    }
}

/// Images in `[0, 1]` with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>) -> Result<Self> {
        if images.rows() != labels.len() {
            return Err(IdxError::CountMismatch {
                images: images.rows(),
                labels: labels.len(),
            }
            .into());
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= NUM_CLASSES) {
            return Err(Error::LabelOutOfRange {
                label,
                index,
                classes: NUM_CLASSES,
            });
        }
        Ok(Self { images, labels })
    }

    pub fn from_idx_bytes(images: &[u8], labels: &[u8]) -> Result<Self> {
        let raw = parse_idx_images(images)?;
        let labels = parse_idx_labels(labels)?;
        if raw.count != labels.len() {
            return Err(IdxError::CountMismatch {
                images: raw.count,
                labels: labels.len(),
            }
            .into());
        }
        Self::new(normalize(&raw), labels.into_iter().map(usize::from).collect())
    }

    /// Loads one split from `dir`, accepting each file plain or with a `.gz` suffix.
    pub fn load(dir: &Path, split: Split) -> Result<Self> {
        let (img, lbl) = split.file_stems();
        let images = read_maybe_gz(&locate(dir, img))?;
        let labels = read_maybe_gz(&locate(dir, lbl))?;
        Self::from_idx_bytes(&images, &labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The first `n` items (or all of them).
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        self.select(&idx)
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn class_histogram(&self) -> [usize; NUM_CLASSES] {
        let mut h = [0; NUM_CLASSES];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

fn locate(dir: &Path, stem: &str) -> PathBuf {
    let plain = dir.join(stem);
    if plain.exists() {
        return plain;
    }
    let gz = dir.join(format!("{stem}.gz"));
    if gz.exists() {
        gz
    } else {
        plain
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    maybe_gunzip(bytes).map_err(io_err(path))
}

/// One minibatch: images, label indices, and their one-hot encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Position of this batch within its epoch.
    pub index: usize,
    pub x: Tensor,
    pub s: Vec<usize>,
    pub s_onehot: Tensor,
}

impl Batch {
    pub fn from_dataset(ds: &Dataset, indices: &[usize], index: usize) -> Self {
        let s: Vec<usize> = indices.iter().map(|&i| ds.labels[i]).collect();
        Self {
            index,
            x: ds.images.select_rows(indices),
            s_onehot: one_hot(&s, NUM_CLASSES).expect("dataset labels validated"),
            s,
        }
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }
}

/// A seeded Fisher–Yates permutation of `0..n`.
pub fn shuffled_indices(n: usize, rng: &mut StreamRng) -> Vec<usize> {
    use rand::Rng;
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// One epoch of batches over a fresh permutation; the last batch may be short.
pub fn batches(ds: &Dataset, batch_size: usize, rng: &mut StreamRng) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch size must be >= 1");
    shuffled_indices(ds.len(), rng)
        .chunks(batch_size)
        .enumerate()
        .map(|(i, chunk)| Batch::from_dataset(ds, chunk, i))
        .collect()
}
