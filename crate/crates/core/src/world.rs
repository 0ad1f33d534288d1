//! Gaussian generative world.
//!
//! Class means are drawn from `N(μ, Σ)` and points of a class from
//! `N(μ_c, Σ_c)` with one `Σ_c` shared by every class. Under this model the
//! closed forms in [`crate::theory`] hold exactly, which makes it the test bed
//! for every bound in the crate.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::numerics::{self, psd_sqrt, sym_eigendecompose, DenseMatrix};
use crate::rng::SeedStream;
use crate::{Error, Result};

/// Eigenvalues down to `-PSD_TOLERANCE * max(1, λ_max)` count as zero.
pub const PSD_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct GaussianWorld {
    mu: Vec<f64>,
    sigma: DenseMatrix,
    sigma_c: DenseMatrix,
    sigma_root: DenseMatrix,
    sigma_c_root: DenseMatrix,
}

/// On-disk form of a world: `{dim, mu, sigma, sigma_c}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WorldConfig {
    pub dim: usize,
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub sigma_c: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledClass {
    pub id: u64,
    pub mean: Vec<f64>,
}

/// Moment bundle feeding the accuracy lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryInputs {
    /// `Tr(Σ)`
    pub tr_sigma: f64,
    /// `Tr(Σ_c²)`
    pub tr_sigma_c_sq: f64,
    /// `Tr(Σ Σ_c)`
    pub tr_sigma_sigma_c: f64,
    /// `E[((μ_a − μ_b)ᵀ(μ_a − μ_b))²]` over independent class pairs.
    pub fourth_moment: f64,
}

impl TheoryInputs {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.tr_sigma,
            self.tr_sigma_c_sq,
            self.tr_sigma_sigma_c,
            self.fourth_moment,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if all.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidParameter(
                "theory inputs must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

fn check_psd(name: &str, m: &DenseMatrix) -> Result<()> {
    let eig = sym_eigendecompose(m)?;
    let top = eig.eigenvalues.first().copied().unwrap_or(0.0);
    let floor = -PSD_TOLERANCE * top.abs().max(1.0);
    match eig.eigenvalues.last() {
        Some(&min) if min < floor => Err(Error::DegenerateWorld(format!(
            "{name} is not positive semidefinite (min eigenvalue {min:e})"
        ))),
        _ => Ok(()),
    }
}

impl GaussianWorld {
    pub fn new(mu: Vec<f64>, sigma: DenseMatrix, sigma_c: DenseMatrix) -> Result<Self> {
        let dim = mu.len();
        for m in [&sigma, &sigma_c] {
            if m.rows() != dim || m.cols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: m.rows().max(m.cols()),
                });
            }
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        check_psd("sigma", &sigma)?;
        check_psd("sigma_c", &sigma_c)?;
        let sigma_root = psd_sqrt(&sigma, PSD_TOLERANCE)?;
        let sigma_c_root = psd_sqrt(&sigma_c, PSD_TOLERANCE)?;
        Ok(Self {
            mu,
            sigma,
            sigma_c,
            sigma_root,
            sigma_c_root,
        })
    }

    /// World centered at the origin.
    pub fn centered(sigma: DenseMatrix, sigma_c: DenseMatrix) -> Result<Self> {
        Self::new(vec![0.0; sigma.rows()], sigma, sigma_c)
    }

    /// Random world with `Σ = AAᵀ/E` and `Σ_c = noise·BBᵀ/E` for standard
    /// normal `A`, `B`, and a standard normal center.
    pub fn random_psd(dim: usize, noise: f64, stream: &SeedStream) -> Result<Self> {
        let mut rng = stream.named("random-world").rng();
        let mut gram = |scale: f64| {
            let a = DenseMatrix::from_row_major(
                dim,
                dim,
                (0..dim * dim).map(|_| rng.sample(StandardNormal)).collect(),
            )?;
            Ok::<_, Error>(a.matmul(&a.transpose())?.scaled(scale / dim as f64))
        };
        let sigma = gram(1.0)?;
        let sigma_c = gram(noise)?;
        let mu = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        Self::new(mu, sigma, sigma_c)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &DenseMatrix {
        &self.sigma
    }

    pub fn sigma_c(&self) -> &DenseMatrix {
        &self.sigma_c
    }

    pub fn to_config(&self) -> WorldConfig {
        WorldConfig {
            dim: self.dim(),
            mu: self.mu.clone(),
            sigma: self.sigma.to_rows(),
            sigma_c: self.sigma_c.to_rows(),
        }
    }

    pub fn from_config(config: &WorldConfig) -> Result<Self> {
        if config.mu.len() != config.dim {
            return Err(Error::DimensionMismatch {
                expected: config.dim,
                found: config.mu.len(),
            });
        }
        let sigma = DenseMatrix::from_rows(&config.sigma)?;
        let sigma_c = DenseMatrix::from_rows(&config.sigma_c)?;
        Self::new(config.mu.clone(), sigma, sigma_c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: WorldConfig = serde_json::from_str(&text)?;
        Self::from_config(&config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_config())?)
    }

    fn gaussian(&self, center: &[f64], root: &DenseMatrix, stream: &SeedStream) -> Vec<f64> {
        let mut rng = stream.rng();
        let z: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let mut x = root.mul_vec(&z).expect("root is dim x dim");
        for (xi, ci) in x.iter_mut().zip(center) {
            *xi += ci;
        }
        x
    }

    /// Class `i` of the result uses stream `stream.child(i)`.
    pub fn sample_class(&self, index: u64, stream: &SeedStream) -> SampledClass {
        SampledClass {
            id: index,
            mean: self.gaussian(&self.mu, &self.sigma_root, &stream.child(index)),
        }
    }

    pub fn sample_point(&self, class: &SampledClass, index: u64, stream: &SeedStream) -> Vec<f64> {
        self.gaussian(&class.mean, &self.sigma_c_root, &stream.child(index))
    }

    /// Points `range` of a class; disjoint ranges compose into the full sequence.
    pub fn sample_point_range(
        &self,
        class: &SampledClass,
        range: std::ops::Range<u64>,
        stream: &SeedStream,
    ) -> Vec<Vec<f64>> {
        range.map(|j| self.sample_point(class, j, stream)).collect()
    }
}

/// `count` independent class means `μ_c ~ N(μ, Σ)`.
pub fn sample_classes(world: &GaussianWorld, count: usize, stream: &SeedStream) -> Vec<SampledClass> {
    (0..count as u64).map(|i| world.sample_class(i, stream)).collect()
}

/// `count` i.i.d. draws from `N(class.mean, Σ_c)`.
pub fn sample_points(
    class: &SampledClass,
    world: &GaussianWorld,
    count: usize,
    stream: &SeedStream,
) -> Vec<Vec<f64>> {
    world.sample_point_range(class, 0..count as u64, stream)
}

/// Closed-form theory inputs. Mean gaps are `N(0, 2Σ)`, so the Gaussian
/// quartic identity gives `E[(ΔᵀΔ)²] = 4 Tr(Σ)² + 8 Tr(Σ²)`.
pub fn world_moments(world: &GaussianWorld) -> TheoryInputs {
    let sigma = world.sigma();
    let sigma_c = world.sigma_c();
    let tr_sigma = numerics::trace(sigma).expect("square");
    let tr_sigma_sq = numerics::trace_of_product(sigma, sigma).expect("square");
    TheoryInputs {
        tr_sigma,
        tr_sigma_c_sq: numerics::trace_of_product(sigma_c, sigma_c).expect("square"),
        tr_sigma_sigma_c: numerics::trace_of_product(sigma, sigma_c).expect("square"),
        fourth_moment: 4.0 * tr_sigma * tr_sigma + 8.0 * tr_sigma_sq,
    }
}

/// Monte Carlo estimate of `E[((μ_a − μ_b)ᵀ(μ_a − μ_b))²]` and its standard
/// error, drawing `pairs` independent class pairs.
pub fn mc_fourth_moment(world: &GaussianWorld, pairs: usize, stream: &SeedStream) -> (f64, f64) {
    let values: Vec<f64> = (0..pairs as u64)
        .map(|i| {
            let s = stream.child(i);
            let a = world.sample_class(0, &s);
            let b = world.sample_class(1, &s);
            let g = numerics::squared_distance(&a.mean, &b.mean);
            g * g
        })
        .collect();
    mean_and_standard_error(&values)
}

pub(crate) fn mean_and_standard_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Covariance shorthand accepted on the command line:
/// `spherical:<v>`, `diag:<v1,v2,..>` or `file:<path>` (JSON nested array).
#[derive(Debug, Clone, PartialEq)]
pub enum CovSpec {
    Spherical(f64),
    Diagonal(Vec<f64>),
    File(std::path::PathBuf),
}

impl std::str::FromStr for CovSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidParameter(format!("covariance spec {s:?} lacks ':'")))?;
        let number = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("bad number {t:?} in {s:?}")))
        };
        let spec = match kind {
            "spherical" => CovSpec::Spherical(number(arg)?),
            "diag" => CovSpec::Diagonal(arg.split(',').map(number).collect::<Result<_>>()?),
            "file" => CovSpec::File(arg.into()),
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "unknown covariance kind {kind:?}"
                )))
            }
        };
        Ok(spec)
    }
}

impl CovSpec {
    pub fn build(&self, dim: usize) -> Result<DenseMatrix> {
        let m = match self {
            CovSpec::Spherical(v) => DenseMatrix::identity(dim).scaled(*v),
            CovSpec::Diagonal(d) => {
                if d.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: d.len(),
                    });
                }
                DenseMatrix::from_diag(d)
            }
            CovSpec::File(path) => {
                let rows: Vec<Vec<f64>> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
                let m = DenseMatrix::from_rows(&rows)?;
                if m.rows() != dim || m.cols() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: m.rows(),
                    });
                }
                m
            }
        };
        if m.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        check_psd("covariance spec", &m)?;
        Ok(m)
    }
}
