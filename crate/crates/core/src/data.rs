//! Labeled datasets: synthetic Gaussian blobs plus CSV and binary storage.
//!
//! Binary layout (little-endian): `b"KDA1"`, `u32 n`, `u32 d`, `n·d` `f32`
//! features in example-major order, then `n` `u32` labels.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{KdaError, Result};
use crate::gram::FeatureBlock;
use crate::landmarks::num_classes;
use crate::matrix::Matrix;

const MAGIC: &[u8; 4] = b"KDA1";
const SPLIT_STREAM: u64 = 0x5eed_5011_7000_0001;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    /// `d × n`, one column per example.
    pub x: Matrix,
    pub labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(x: Matrix, labels: Vec<usize>) -> Result<Self> {
        if x.cols() != labels.len() {
            return Err(KdaError::dim(
                "LabeledDataset",
                format!("{} examples but {} labels", x.cols(), labels.len()),
            ));
        }
        if !x.is_finite() {
            return Err(KdaError::NonFinite("dataset features".into()));
        }
        Ok(Self { x, labels })
    }

    pub fn dim(&self) -> usize {
        self.x.rows()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        num_classes(&self.labels)
    }

    pub fn features(&self, tag: &str) -> FeatureBlock {
        FeatureBlock {
            features: self.x.clone(),
            layer_tag: tag.to_string(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Result<LabeledDataset> {
        Ok(LabeledDataset {
            x: self.x.select_columns(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobParams {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub separation: f64,
    pub sigma: f64,
    pub seed: u64,
}

/// Gaussian blobs around class means placed on a sphere of radius
/// `separation`, split 80/20 per class.
pub fn generate_blobs(p: &BlobParams) -> Result<SplitDataset> {
    if p.classes < 2 || p.dim < 2 || p.per_class < 2 {
        return Err(KdaError::Argument(format!(
            "blobs need ≥ 2 classes, dims and examples per class: {p:?}"
        )));
    }
    if !(p.separation > 0.0 && p.sigma > 0.0 && p.separation.is_finite() && p.sigma.is_finite()) {
        return Err(KdaError::Argument(format!(
            "blob separation and sigma must be positive: {p:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut gauss = move || -> f64 { StandardNormal.sample(&mut rng) };

    let mut train_cols = Vec::new();
    let mut train_labels = Vec::new();
    let mut test_cols = Vec::new();
    let mut test_labels = Vec::new();
    let n_train = ((0.8 * p.per_class as f64).round() as usize).clamp(1, p.per_class - 1);

    let mut class_points = Vec::with_capacity(p.classes);
    for _ in 0..p.classes {
        let dir: Vec<f64> = (0..p.dim).map(|_| gauss()).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mean: Vec<f64> = dir.iter().map(|v| p.separation * v / norm).collect();
        let pts: Vec<Vec<f64>> = (0..p.per_class)
            .map(|_| mean.iter().map(|m| m + p.sigma * gauss()).collect())
            .collect();
        class_points.push(pts);
    }

    let mut split_rng = ChaCha8Rng::seed_from_u64(p.seed ^ SPLIT_STREAM);
    for (label, pts) in class_points.into_iter().enumerate() {
        let mut order: Vec<usize> = (0..pts.len()).collect();
        order.shuffle(&mut split_rng);
        for (rank, &i) in order.iter().enumerate() {
            if rank < n_train {
                train_cols.push(pts[i].clone());
                train_labels.push(label);
            } else {
                test_cols.push(pts[i].clone());
                test_labels.push(label);
            }
        }
    }
    Ok(SplitDataset {
        train: LabeledDataset::new(Matrix::from_columns(&train_cols)?, train_labels)?,
        test: LabeledDataset::new(Matrix::from_columns(&test_cols)?, test_labels)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    Csv,
    Binary,
}

impl DatasetFormat {
    /// `.csv` → CSV, `.bin` → binary.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(DatasetFormat::Csv),
            Some("bin") => Ok(DatasetFormat::Binary),
            _ => Err(KdaError::Argument(format!(
                "cannot infer dataset format from {}",
                path.display()
            ))),
        }
    }
}

fn validate_labels(labels: &[usize], location: impl Fn(usize) -> String) -> Result<()> {
    let n_classes = num_classes(labels);
    let mut first_row = vec![None; n_classes];
    for (i, &y) in labels.iter().enumerate() {
        first_row[y].get_or_insert(i);
    }
    if let Some(gap) = first_row.iter().position(Option::is_none) {
        return Err(KdaError::format(
            location(labels.len()),
            format!("label {gap} never occurs but labels go up to {}", n_classes - 1),
        ));
    }
    Ok(())
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<LabeledDataset> {
    match format {
        DatasetFormat::Csv => load_csv(path),
        DatasetFormat::Binary => decode_binary(&fs::read(path)?),
    }
}

pub fn save_dataset(data: &LabeledDataset, path: &Path, format: DatasetFormat) -> Result<()> {
    match format {
        DatasetFormat::Csv => save_csv(data, path),
        DatasetFormat::Binary => Ok(fs::write(path, encode_binary(data)?)?),
    }
}

fn csv_err(e: csv::Error) -> KdaError {
    let location = e
        .position()
        .map_or_else(|| "csv".to_string(), |p| format!("csv row {}", p.line()));
    KdaError::format(location, e.to_string())
}

fn load_csv(path: &Path) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(csv_err)?;
    let header = reader.headers().map_err(csv_err)?.clone();
    let d = header.len().saturating_sub(1);
    let header_ok = d >= 1
        && header.get(d) == Some("label")
        && header.iter().take(d).enumerate().all(|(j, h)| h == format!("f{j}"));
    if !header_ok {
        return Err(KdaError::format(
            "csv header",
            format!("expected f0,...,f{{d-1}},label, got {:?}", header.iter().collect::<Vec<_>>()),
        ));
    }

    let mut columns = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        // line 1 is the header
        let line = row + 2;
        let mut feats = Vec::with_capacity(d);
        for (j, cell) in record.iter().take(d).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                KdaError::format(format!("csv row {line}"), format!("feature f{j} = {cell:?} is not a number"))
            })?;
            if !v.is_finite() {
                return Err(KdaError::format(
                    format!("csv row {line}"),
                    format!("feature f{j} is not finite"),
                ));
            }
            feats.push(v);
        }
        let label = record[d].trim().parse::<usize>().map_err(|_| {
            KdaError::format(format!("csv row {line}"), format!("label {:?} is not a class index", &record[d]))
        })?;
        columns.push(feats);
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(KdaError::format("csv", "no examples"));
    }
    validate_labels(&labels, |_| format!("csv {}", path.display()))?;
    LabeledDataset::new(Matrix::from_columns(&columns)?, labels)
}

fn save_csv(data: &LabeledDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = (0..data.dim()).map(|r| data.x[(r, i)].to_string()).collect();
        rec.push(data.labels[i].to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn encode_binary(data: &LabeledDataset) -> Result<Vec<u8>> {
    let n = u32::try_from(data.len()).map_err(|_| KdaError::Argument("too many examples".into()))?;
    let d = u32::try_from(data.dim()).map_err(|_| KdaError::Argument("dimension too large".into()))?;
    let mut out = Vec::with_capacity(12 + 4 * data.len() * (data.dim() + 1));
    out.write_all(MAGIC)?;
    out.write_all(&n.to_le_bytes())?;
    out.write_all(&d.to_le_bytes())?;
    for i in 0..data.len() {
        for r in 0..data.dim() {
            out.write_all(&(data.x[(r, i)] as f32).to_le_bytes())?;
        }
    }
    for &y in &data.labels {
        let y = u32::try_from(y).map_err(|_| KdaError::Argument("label too large".into()))?;
        out.write_all(&y.to_le_bytes())?;
    }
    Ok(out)
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl ByteCursor<'_> {
    fn take4(&mut self, what: &str) -> Result<[u8; 4]> {
        let chunk = self.bytes.get(self.offset..self.offset + 4).ok_or_else(|| {
            KdaError::format(
                format!("byte offset {}", self.offset),
                format!("truncated while reading {what} ({} bytes total)", self.bytes.len()),
            )
        })?;
        self.offset += 4;
        Ok(chunk.try_into().unwrap())
    }
}

pub fn decode_binary(bytes: &[u8]) -> Result<LabeledDataset> {
    let mut cur = ByteCursor { bytes, offset: 0 };
    if &cur.take4("magic")? != MAGIC {
        return Err(KdaError::format("byte offset 0", "bad magic, expected KDA1"));
    }
    let n = u32::from_le_bytes(cur.take4("example count")?) as usize;
    let d = u32::from_le_bytes(cur.take4("feature dimension")?) as usize;
    if n == 0 || d == 0 {
        return Err(KdaError::format("byte offset 4", format!("empty dataset {n}x{d}")));
    }
    let expected = 12 + 4 * n * (d + 1);
    if bytes.len() > expected {
        return Err(KdaError::format(
            format!("byte offset {expected}"),
            format!("{} trailing bytes", bytes.len() - expected),
        ));
    }
    let mut x = Matrix::zeros(d, n);
    for i in 0..n {
        for r in 0..d {
            let at = cur.offset;
            let v = f32::from_le_bytes(cur.take4("features")?);
            if !v.is_finite() {
                return Err(KdaError::format(
                    format!("byte offset {at}"),
                    format!("example {i} feature {r} is not finite"),
                ));
            }
            x[(r, i)] = f64::from(v);
        }
    }
    let labels_at = cur.offset;
    let labels = (0..n)
        .map(|_| cur.take4("labels").map(|b| u32::from_le_bytes(b) as usize))
        .collect::<Result<Vec<_>>>()?;
    validate_labels(&labels, |_| format!("byte offset {labels_at}"))?;
    LabeledDataset::new(x, labels)
}
