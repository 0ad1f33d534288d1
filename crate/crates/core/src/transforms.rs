//! Post-hoc linear transforms of the embedding space.
//!
//! EST projects onto the leading eigenvectors of `Σ_μ − ρ Σ̄_s`, the
//! between-class covariance penalized by the mean within-class covariance.
//! The PCA baseline projects onto the leading eigenvectors of the total
//! covariance. Both are fit once on training statistics and applied as
//! `projectionᵀ · z`, so the output lives in `R^d`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datastore::{MomentSummary, Weighting};
use crate::numerics::{sym_eigendecompose, DenseMatrix};
use crate::{Error, Result};

pub const DEFAULT_RHO: f64 = 0.001;
pub const DEFAULT_DIM: usize = 60;

/// Orthonormality tolerance on `max |VᵀV − I|`.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Est,
    Pca,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "est" => Ok(Self::Est),
            "pca" => Ok(Self::Pca),
            _ => Err(Error::InvalidParameter(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearTransform {
    projection: DenseMatrix,
    method: Method,
    rho: Option<f64>,
    selected_eigenvalues: Vec<f64>,
    negative_selected_count: usize,
    explained_variance: Option<f64>,
    weighting: Option<Weighting>,
    source_dataset_digest: Option<String>,
}

/// JSON layout of a transform file. `projection` is `dim_in` rows of `d`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformFile {
    pub method: Method,
    pub rho: Option<f64>,
    pub d: usize,
    pub dim_in: usize,
    pub eigenvalues: Vec<f64>,
    pub projection: Vec<Vec<f64>>,
    pub source_dataset_digest: Option<String>,
    #[serde(default)]
    pub negative_selected_count: usize,
    #[serde(default)]
    pub explained_variance: Option<f64>,
    #[serde(default)]
    pub weighting: Option<Weighting>,
}

fn check_dim(requested: usize, available: usize) -> Result<()> {
    if requested == 0 {
        return Err(Error::InvalidParameter("output dimension must be at least 1".into()));
    }
    if requested > available {
        return Err(Error::DimensionTooLarge {
            requested,
            available,
        });
    }
    Ok(())
}

fn leading(matrix: &DenseMatrix, d: usize) -> Result<(DenseMatrix, Vec<f64>, Vec<f64>)> {
    let eig = sym_eigendecompose(matrix)?;
    let columns: Vec<Vec<f64>> = (0..d).map(|j| eig.eigenvectors.column(j)).collect();
    let selected = eig.eigenvalues[..d].to_vec();
    Ok((DenseMatrix::from_columns(&columns)?, selected, eig.eigenvalues))
}

/// Embedding space transformation: top-`d` eigenvectors (by signed
/// eigenvalue) of `Σ_μ − ρ Σ̄_s`.
pub fn fit_est(summary: &MomentSummary, rho: f64, d: usize) -> Result<LinearTransform> {
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::InvalidParameter(format!("rho must be finite and >= 0, got {rho}")));
    }
    if summary.class_count < 2 {
        return Err(Error::SingleClass);
    }
    check_dim(d, summary.between_cov.rows())?;
    let target = summary.between_cov.add_scaled(&summary.within_cov, -rho)?;
    let (projection, selected, _) = leading(&target, d)?;
    Ok(LinearTransform {
        projection,
        method: Method::Est,
        rho: Some(rho),
        negative_selected_count: selected.iter().filter(|&&l| l < 0.0).count(),
        selected_eigenvalues: selected,
        explained_variance: None,
        weighting: Some(summary.weighting),
        source_dataset_digest: None,
    })
}

/// PCA baseline: top-`d` eigenvectors of the total covariance.
pub fn fit_pca(total_cov: &DenseMatrix, d: usize) -> Result<LinearTransform> {
    check_dim(d, total_cov.rows())?;
    let (projection, selected, all) = leading(total_cov, d)?;
    let total: f64 = all.iter().map(|l| l.max(0.0)).sum();
    let kept: f64 = selected.iter().map(|l| l.max(0.0)).sum();
    Ok(LinearTransform {
        projection,
        method: Method::Pca,
        rho: None,
        negative_selected_count: selected.iter().filter(|&&l| l < 0.0).count(),
        selected_eigenvalues: selected,
        explained_variance: (total > 0.0).then(|| kept / total),
        weighting: None,
        source_dataset_digest: None,
    })
}

impl LinearTransform {
    /// Wraps an explicit `E×d` projection; columns must be orthonormal.
    pub fn from_projection(projection: DenseMatrix, method: Method) -> Result<Self> {
        let t = Self {
            selected_eigenvalues: vec![0.0; projection.cols()],
            projection,
            method,
            rho: None,
            negative_selected_count: 0,
            explained_variance: None,
            weighting: None,
            source_dataset_digest: None,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn dim_in(&self) -> usize {
        self.projection.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.projection.cols()
    }

    pub fn projection(&self) -> &DenseMatrix {
        &self.projection
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn rho(&self) -> Option<f64> {
        self.rho
    }

    pub fn selected_eigenvalues(&self) -> &[f64] {
        &self.selected_eigenvalues
    }

    pub fn negative_selected_count(&self) -> usize {
        self.negative_selected_count
    }

    pub fn explained_variance(&self) -> Option<f64> {
        self.explained_variance
    }

    pub fn weighting(&self) -> Option<Weighting> {
        self.weighting
    }

    pub fn source_dataset_digest(&self) -> Option<&str> {
        self.source_dataset_digest.as_deref()
    }

    pub fn with_source_digest(mut self, digest: impl Into<String>) -> Self {
        self.source_dataset_digest = Some(digest.into());
        self
    }

    /// Coordinates of `v` in the selected basis.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.projection.tr_mul_vec(v)
    }

    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.projection.transpose().matmul(&self.projection).expect("shapes agree");
        gram.add_scaled(&DenseMatrix::identity(self.out_dim()), -1.0)
            .expect("shapes agree")
            .max_abs()
    }

    fn validate(&self) -> Result<()> {
        check_dim(self.out_dim(), self.dim_in())?;
        if self.selected_eigenvalues.len() != self.out_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.out_dim(),
                found: self.selected_eigenvalues.len(),
            });
        }
        let deviation = self.orthonormality_error();
        if deviation > ORTHONORMAL_TOLERANCE {
            return Err(Error::NotOrthonormal { deviation });
        }
        Ok(())
    }

    pub fn to_file(&self) -> TransformFile {
        TransformFile {
            method: self.method,
            rho: self.rho,
            d: self.out_dim(),
            dim_in: self.dim_in(),
            eigenvalues: self.selected_eigenvalues.clone(),
            projection: self.projection.to_rows(),
            source_dataset_digest: self.source_dataset_digest.clone(),
            negative_selected_count: self.negative_selected_count,
            explained_variance: self.explained_variance,
            weighting: self.weighting,
        }
    }

    pub fn from_file(file: TransformFile) -> Result<Self> {
        let projection = DenseMatrix::from_rows(&file.projection)?;
        if projection.rows() != file.dim_in || projection.cols() != file.d {
            return Err(Error::DimensionMismatch {
                expected: file.dim_in * file.d,
                found: projection.rows() * projection.cols(),
            });
        }
        let t = Self {
            projection,
            method: file.method,
            rho: file.rho,
            selected_eigenvalues: file.eigenvalues,
            negative_selected_count: file.negative_selected_count,
            explained_variance: file.explained_variance,
            weighting: file.weighting,
            source_dataset_digest: file.source_dataset_digest,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: TransformFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_file(file)
    }
}
