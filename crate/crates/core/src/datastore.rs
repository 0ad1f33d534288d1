//! Embedding datasets: CSV ingestion, per-class statistics, the between/within
//! class moment summary, and the variance-ratio and intrinsic-dimension
//! diagnostics.
//!
//! CSV format: one record per line, `label,v0,v1,...,v{E-1}`, UTF-8, no
//! header, labels without commas.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::numerics::{self, sym_eigendecompose, DenseMatrix};
use crate::{Error, Result};

/// Default explained-variance threshold for the intrinsic dimension.
pub const DEFAULT_ID_THRESHOLD: f64 = 0.9;

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const SPECTRUM_NOISE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct EmbeddingDataset {
    dim: usize,
    labels: Vec<String>,
    vectors: Vec<Vec<f64>>,
    // sorted unique labels and the record indices of each
    classes: Vec<String>,
    members: Vec<Vec<usize>>,
}

impl EmbeddingDataset {
    pub fn new(records: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let dim = records.first().ok_or(Error::EmptyInput)?.1.len();
        let mut labels = Vec::with_capacity(records.len());
        let mut vectors = Vec::with_capacity(records.len());
        let mut index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, (label, v)) in records.into_iter().enumerate() {
            if v.len() != dim {
                return Err(Error::RaggedRows {
                    row: i + 1,
                    expected: dim,
                    found: v.len(),
                });
            }
            if let Some(col) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFiniteValue {
                    row: i + 1,
                    column: col + 2,
                });
            }
            index.entry(label.clone()).or_default().push(i);
            labels.push(label);
            vectors.push(v);
        }
        let (classes, members) = index.into_iter().unzip();
        Ok(Self {
            dim,
            labels,
            vectors,
            classes,
            members,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    /// Record indices of class `c` (position in [`Self::classes`]).
    pub fn members(&self, c: usize) -> &[usize] {
        &self.members[c]
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i]
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (label, v) in self.labels.iter().zip(&self.vectors) {
            write_csv_row(&mut out, label, v);
        }
        out
    }
}

pub fn write_csv_row(out: &mut String, label: &str, v: &[f64]) {
    use std::fmt::Write;
    out.push_str(label);
    for x in v {
        write!(out, ",{x}").expect("string write");
    }
    out.push('\n');
}

pub fn parse_embeddings(text: &str) -> Result<EmbeddingDataset> {
    let mut records = Vec::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label = fields.next().unwrap_or_default().trim();
        if label.is_empty() {
            return Err(Error::Parse {
                row,
                column: 1,
                message: "empty label".into(),
            });
        }
        let mut v = Vec::new();
        for (j, field) in fields.enumerate() {
            let column = j + 2;
            let x: f64 = field.trim().parse().map_err(|_| Error::Parse {
                row,
                column,
                message: format!("not a number: {field:?}"),
            })?;
            if !x.is_finite() {
                return Err(Error::NonFiniteValue { row, column });
            }
            v.push(x);
        }
        if v.is_empty() {
            return Err(Error::Parse {
                row,
                column: 2,
                message: "record has no vector components".into(),
            });
        }
        match dim {
            None => dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(Error::RaggedRows {
                    row,
                    expected: d,
                    found: v.len(),
                })
            }
            _ => {}
        }
        records.push((label.to_string(), v));
    }
    if records.is_empty() {
        return Err(Error::Parse {
            row: 0,
            column: 0,
            message: "no records".into(),
        });
    }
    EmbeddingDataset::new(records)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingDataset> {
    parse_embeddings(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone)]
pub struct ClassSummary {
    pub label: String,
    pub count: usize,
    pub mean: Vec<f64>,
    pub cov: DenseMatrix,
}

/// Per-class means and biased covariances, plus the pooled mean and total
/// covariance computed directly from all records.
#[derive(Debug, Clone)]
pub struct ClassStats {
    pub classes: Vec<ClassSummary>,
    pub grand_mean: Vec<f64>,
    pub total_cov: DenseMatrix,
    pub sample_count: usize,
}

pub fn class_stats(dataset: &EmbeddingDataset) -> ClassStats {
    let classes = (0..dataset.classes().len())
        .into_par_iter()
        .map(|c| {
            let pts: Vec<&[f64]> = dataset.members(c).iter().map(|&i| dataset.vector(i)).collect();
            let (mean, cov) =
                numerics::weighted_mean_and_covariance(&pts, None).expect("validated dataset");
            ClassSummary {
                label: dataset.classes()[c].clone(),
                count: pts.len(),
                mean,
                cov,
            }
        })
        .collect();
    let (grand_mean, total_cov) =
        numerics::weighted_mean_and_covariance(dataset.vectors(), None).expect("validated dataset");
    ClassStats {
        classes,
        grand_mean,
        total_cov,
        sample_count: dataset.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// Every class counts once: `Σ_μ = (1/N) Σ (μ_n − μ_T)(μ_n − μ_T)ᵀ`,
    /// `Σ̄_s = (1/N) Σ Σ_n`, with `μ_T` the mean over all samples.
    #[default]
    EqualClass,
    /// Classes weighted by `L_n / M`; the total-variance identity is exact.
    ClassSize,
}

impl std::str::FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal-class" => Ok(Self::EqualClass),
            "class-size" => Ok(Self::ClassSize),
            _ => Err(Error::InvalidParameter(format!("unknown weighting {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MomentSummary {
    pub grand_mean: Vec<f64>,
    /// Covariance of class means, `Σ_μ`.
    pub between_cov: DenseMatrix,
    /// Mean of class covariances, `Σ̄_s`.
    pub within_cov: DenseMatrix,
    pub total_cov: DenseMatrix,
    pub class_count: usize,
    pub weighting: Weighting,
}

pub fn moment_summary(stats: &ClassStats, weighting: Weighting) -> Result<MomentSummary> {
    let n = stats.classes.len();
    if n < 2 {
        return Err(Error::SingleClass);
    }
    let dim = stats.grand_mean.len();
    let weights: Vec<f64> = match weighting {
        Weighting::EqualClass => vec![1.0 / n as f64; n],
        Weighting::ClassSize => stats
            .classes
            .iter()
            .map(|c| c.count as f64 / stats.sample_count as f64)
            .collect(),
    };
    let mut between = DenseMatrix::zeros(dim, dim);
    let mut within = DenseMatrix::zeros(dim, dim);
    for (class, &w) in stats.classes.iter().zip(&weights) {
        let gap: Vec<f64> = class
            .mean
            .iter()
            .zip(&stats.grand_mean)
            .map(|(a, b)| a - b)
            .collect();
        for i in 0..dim {
            for j in 0..dim {
                between[(i, j)] += w * gap[i] * gap[j];
                within[(i, j)] += w * class.cov[(i, j)];
            }
        }
    }
    Ok(MomentSummary {
        grand_mean: stats.grand_mean.clone(),
        between_cov: between,
        within_cov: within,
        total_cov: stats.total_cov.clone(),
        class_count: n,
        weighting,
    })
}

/// `Tr(Σ_μ) / Tr(Σ̄_s)`.
pub fn variance_ratio(summary: &MomentSummary) -> Result<f64> {
    let between = numerics::trace(&summary.between_cov)?;
    let within = numerics::trace(&summary.within_cov)?;
    if !(within > 1e-12 * between) || within <= 0.0 {
        return Err(Error::DegenerateIntraClassVariance);
    }
    Ok(between / within)
}

/// Like [`variance_ratio`] but maps zero intra-class variance to `+inf`.
pub fn variance_ratio_or_infinite(summary: &MomentSummary) -> Result<f64> {
    match variance_ratio(summary) {
        Err(Error::DegenerateIntraClassVariance) => Ok(f64::INFINITY),
        other => other,
    }
}

/// Eigenvalues clamped for explained-variance ratios: negatives and values
/// under [`SPECTRUM_NOISE_FLOOR`] of the largest become zero.
pub fn clamped_spectrum(cov: &DenseMatrix) -> Result<Vec<f64>> {
    let eig = sym_eigendecompose(cov)?;
    let top = eig.eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    Ok(eig
        .eigenvalues
        .into_iter()
        .map(|l| if l <= SPECTRUM_NOISE_FLOOR * top { 0.0 } else { l })
        .collect())
}

/// Smallest `d` whose leading eigenvalues explain at least `threshold` of the
/// total variance.
pub fn intrinsic_dimension(cov: &DenseMatrix, threshold: f64) -> Result<usize> {
    intrinsic_dimension_of_spectrum(&clamped_spectrum(cov)?, threshold)
}

pub fn intrinsic_dimension_of_spectrum(spectrum: &[f64], threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold must lie in (0, 1], got {threshold}"
        )));
    }
    let total: f64 = spectrum.iter().map(|l| l.max(0.0)).sum();
    if !(total > 0.0) {
        return Err(Error::ZeroTotalVariance);
    }
    let mut acc = 0.0;
    for (i, l) in spectrum.iter().enumerate() {
        acc += l.max(0.0);
        if acc / total >= threshold - 1e-12 {
            return Ok(i + 1);
        }
    }
    Ok(spectrum.len())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticReport {
    /// `null` when the intra-class variance vanishes.
    pub variance_ratio: Option<f64>,
    pub intrinsic_dimension: usize,
    pub threshold: f64,
    /// Total-covariance eigenvalues, descending, unclamped.
    pub eigenvalues: Vec<f64>,
    pub class_count: usize,
    pub sample_count: usize,
    pub weighting: Weighting,
    pub conventions: String,
}

pub fn diagnose(dataset: &EmbeddingDataset, threshold: f64, weighting: Weighting) -> Result<DiagnosticReport> {
    let stats = class_stats(dataset);
    let summary = moment_summary(&stats, weighting)?;
    let ratio = variance_ratio_or_infinite(&summary)?;
    let eigenvalues = sym_eigendecompose(&stats.total_cov)?.eigenvalues;
    Ok(DiagnosticReport {
        variance_ratio: ratio.is_finite().then_some(ratio),
        intrinsic_dimension: intrinsic_dimension(&stats.total_cov, threshold)?,
        threshold,
        eigenvalues,
        class_count: summary.class_count,
        sample_count: stats.sample_count,
        weighting,
        conventions: "biased (1/n) covariances; total covariance about the pooled mean; \
                      eigenvalues below 1e-12 of the largest (and negatives) clamped to 0 for r_d"
            .into(),
    })
}
