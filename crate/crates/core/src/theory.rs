//! Closed-form accuracy bounds for prototype classifiers and the Monte Carlo
//! estimators that check them.
//!
//! For a 2-way episode with correct class `a` and wrong class `b`, write
//! `α = ‖x − z_b‖² − ‖x − z_a‖²` for a query `x` from `a` and prototypes
//! `z_a`, `z_b` built from `k` supports each. The classifier is right iff
//! `α > 0`, and the one-sided Chebyshev inequality bounds `Pr(α > 0)` from
//! below by `E[α]² / E[α²]`. Under the Gaussian equal-covariance model:
//!
//! - `E[α | a, b] = ‖μ_a − μ_b‖²` and `E[α] = 2 Tr(Σ)`,
//! - `E_{a,b}[Var(α | a, b)] ≤ 8(1 + 1/k) Tr(Σ_c((1 + 1/k)Σ_c + 2Σ))`,
//!
//! which combine into
//!
//! ```text
//!              4 Tr(Σ)²
//! R ≥ ─────────────────────────────────────────────────────────────────
//!     8(1+1/k)² Tr(Σ_c²) + 16(1+1/k) Tr(Σ Σ_c) + E[((μ_a−μ_b)ᵀ(μ_a−μ_b))²]
//! ```
//!
//! The N-way bound follows from Fréchet's inequality over the `N − 1`
//! wrong classes and is often vacuous, so both raw and clamped values are
//! reported.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::ClassStats;
use crate::numerics::{self, squared_distance, DenseMatrix};
use crate::protonet::{self, alpha_pair, AlphaForm, EvalConfig, QueryMode, Source};
use crate::rng::SeedStream;
use crate::world::{GaussianWorld, SampledClass, TheoryInputs};
use crate::{Error, Result};

/// Draws per class pair when estimating `E_{a,b}[Var(α | a, b)]`.
pub const CONDITIONAL_GROUP_SIZE: usize = 50;

pub const MIN_ALPHA_SAMPLES: usize = 1000;
pub const MIN_ACCURACY_EPISODES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundComponents {
    /// `4 Tr(Σ)²`
    pub numerator: f64,
    /// `8(1+1/k)² Tr(Σ_c²)`
    pub denom_term1: f64,
    /// `16(1+1/k) Tr(Σ Σ_c)`
    pub denom_term2: f64,
    /// `E[((μ_a−μ_b)ᵀ(μ_a−μ_b))²]`
    pub denom_term3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub k: usize,
    pub ways: usize,
    /// Two-way bound the N-way value is built from.
    pub pairwise: f64,
    /// May be negative for `ways > 2`.
    pub raw: f64,
    pub clamped: f64,
    pub components: BoundComponents,
}

/// `E[α | a, b] = (μ_a − μ_b)ᵀ(μ_a − μ_b)`.
pub fn lemma1_conditional(mu_a: &[f64], mu_b: &[f64]) -> Result<f64> {
    if mu_a.len() != mu_b.len() {
        return Err(Error::DimensionMismatch {
            expected: mu_a.len(),
            found: mu_b.len(),
        });
    }
    Ok(squared_distance(mu_a, mu_b))
}

/// `E[α] = 2 Tr(Σ)`.
pub fn lemma1_marginal(tr_sigma: f64) -> f64 {
    2.0 * tr_sigma
}

/// Upper bound on `E_{a,b}[Var(α | a, b)]`.
pub fn lemma2_bound(k: usize, sigma_c: &DenseMatrix, sigma: &DenseMatrix) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let n = sigma_c.rows();
    if !sigma_c.is_square() || sigma.rows() != n || sigma.cols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: sigma.rows(),
        });
    }
    let u = 1.0 + 1.0 / k as f64;
    let inner = sigma_c.scaled(u).add_scaled(sigma, 2.0)?;
    Ok(8.0 * u * numerics::trace_of_product(sigma_c, &inner)?)
}

fn bound_components(inputs: &TheoryInputs, k: usize) -> Result<BoundComponents> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    inputs.validate()?;
    let u = 1.0 + 1.0 / k as f64;
    Ok(BoundComponents {
        numerator: 4.0 * inputs.tr_sigma * inputs.tr_sigma,
        denom_term1: 8.0 * u * u * inputs.tr_sigma_c_sq,
        denom_term2: 16.0 * u * inputs.tr_sigma_sigma_c,
        denom_term3: inputs.fourth_moment,
    })
}

/// Two-way lower bound on expected accuracy.
pub fn theorem1_bound(inputs: &TheoryInputs, k: usize) -> Result<BoundReport> {
    let c = bound_components(inputs, k)?;
    let denom = c.denom_term1 + c.denom_term2 + c.denom_term3;
    if !(denom > 0.0) {
        return Err(Error::DegenerateDenominator);
    }
    let value = c.numerator / denom;
    Ok(BoundReport {
        k,
        ways: 2,
        pairwise: value,
        raw: value,
        clamped: value.clamp(0.0, 1.0),
        components: c,
    })
}

/// N-way bound `(N − 1) · pairwise − (N − 2)`.
pub fn nway_bound(inputs: &TheoryInputs, k: usize, ways: usize) -> Result<BoundReport> {
    if ways < 2 {
        return Err(Error::InvalidParameter("ways must be at least 2".into()));
    }
    let pair = theorem1_bound(inputs, k)?;
    if ways == 2 {
        return Ok(pair);
    }
    let raw = (ways - 1) as f64 * pair.pairwise - (ways - 2) as f64;
    Ok(BoundReport {
        ways,
        raw,
        clamped: raw.clamp(0.0, 1.0),
        ..pair
    })
}

/// Generalization gap `sqrt((D(ln(4k/D) + 1) + ln(4/δ)) / (2k))` for VC
/// dimension `D` and `k` supports per class.
pub fn vc_gap(vc_dim: usize, k: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidDelta(delta));
    }
    if vc_dim == 0 || k == 0 {
        return Err(Error::InvalidParameter("VC dimension and k must be at least 1".into()));
    }
    let d = vc_dim as f64;
    let k = k as f64;
    let radicand = (d * ((4.0 * k / d).ln() + 1.0) + (4.0 / delta).ln()) / (2.0 * k);
    if !(radicand >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "gap radicand is negative ({radicand}) for D={vc_dim}, k={k}"
        )));
    }
    Ok(radicand.sqrt())
}

/// Theory inputs estimated from an empirical class set, treating the
/// classes as the sampling distribution: `Σ` is the (1/N) covariance of
/// class means, `Σ_c` the equal-weight mean class covariance and the fourth
/// moment averages over all ordered pairs, including `a = b`.
pub fn empirical_inputs(stats: &ClassStats) -> Result<TheoryInputs> {
    let n = stats.classes.len();
    if n < 2 {
        return Err(Error::SingleClass);
    }
    let means: Vec<&[f64]> = stats.classes.iter().map(|c| c.mean.as_slice()).collect();
    let sigma = numerics::covariance(&means, None)?;
    let dim = sigma.rows();
    let mut sigma_c = DenseMatrix::zeros(dim, dim);
    for c in &stats.classes {
        sigma_c = sigma_c.add_scaled(&c.cov, 1.0 / n as f64)?;
    }
    let fourth: f64 = (0..n)
        .into_par_iter()
        .map(|a| {
            means
                .iter()
                .map(|mb| squared_distance(means[a], mb).powi(2))
                .sum::<f64>()
        })
        .collect::<Vec<_>>()
        .iter()
        .sum::<f64>()
        / (n * n) as f64;
    Ok(TheoryInputs {
        tr_sigma: numerics::trace(&sigma)?,
        tr_sigma_c_sq: numerics::trace_of_product(&sigma_c, &sigma_c)?,
        tr_sigma_sigma_c: numerics::trace_of_product(&sigma, &sigma_c)?,
        fourth_moment: fourth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaMoments {
    /// `E[α | a, b]` for a fixed pair, else `E_{a,b} E[α | a, b]`.
    pub mean_conditional: f64,
    /// `Var(α | a, b)` for a fixed pair, else `E_{a,b}[Var(α | a, b)]`.
    pub var_conditional: f64,
    pub mean_marginal: f64,
    pub var_marginal: f64,
    pub se_mean_conditional: f64,
    pub se_var_conditional: f64,
    pub se_mean_marginal: f64,
    pub se_var_marginal: f64,
    pub sample_count: usize,
    /// Distinct class pairs behind the conditional estimates.
    pub pair_count: usize,
}

fn draw_alpha(world: &GaussianWorld, a: &SampledClass, b: &SampledClass, k: usize, s: &SeedStream) -> f64 {
    let mut pa = world.sample_point_range(a, 0..(k + 1) as u64, &s.child(0));
    let query = pa.pop().expect("k + 1 points");
    let pb = world.sample_point_range(b, 0..k as u64, &s.child(1));
    let protos = protonet::prototypes(&protonet::Episode {
        ways: 2,
        shots: k,
        supports: vec![pa, pb],
        queries: Vec::new(),
    });
    alpha_pair(&query, &protos[0], &protos[1], AlphaForm::Distance).expect("dimensions agree")
}

// mean, unbiased variance, SE of mean, asymptotic SE of the variance
fn moments(values: &[f64]) -> (f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let var = m2 * n / (n - 1.0);
    (mean, var, (var / n).sqrt(), ((m4 - m2 * m2).max(0.0) / n).sqrt())
}

fn pair(world: &GaussianWorld, s: &SeedStream) -> (SampledClass, SampledClass) {
    let ps = s.named("pair");
    (world.sample_class(0, &ps), world.sample_class(1, &ps))
}

/// Monte Carlo moments of `α` for `k`-shot 2-way episodes.
///
/// With `fixed_pair` every draw uses those class means and the conditional
/// and marginal fields coincide. Otherwise the marginal pass draws a fresh
/// pair per sample, and the conditional pass draws `samples /
/// CONDITIONAL_GROUP_SIZE` pairs with `CONDITIONAL_GROUP_SIZE` draws each;
/// its standard errors come from the spread across pairs.
pub fn mc_alpha_moments(
    world: &GaussianWorld,
    k: usize,
    fixed_pair: Option<(&[f64], &[f64])>,
    samples: usize,
    stream: &SeedStream,
) -> Result<AlphaMoments> {
    if samples < MIN_ALPHA_SAMPLES {
        return Err(Error::InvalidParameter(format!(
            "need at least {MIN_ALPHA_SAMPLES} samples, got {samples}"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if let Some((a, b)) = fixed_pair {
        for m in [a, b] {
            if m.len() != world.dim() {
                return Err(Error::DimensionMismatch {
                    expected: world.dim(),
                    found: m.len(),
                });
            }
        }
        let a = SampledClass { id: 0, mean: a.to_vec() };
        let b = SampledClass { id: 1, mean: b.to_vec() };
        let s = stream.named("fixed");
        let values: Vec<f64> = (0..samples as u64)
            .into_par_iter()
            .map(|i| draw_alpha(world, &a, &b, k, &s.child(i)))
            .collect();
        let (mean, var, se_mean, se_var) = moments(&values);
        return Ok(AlphaMoments {
            mean_conditional: mean,
            var_conditional: var,
            mean_marginal: mean,
            var_marginal: var,
            se_mean_conditional: se_mean,
            se_var_conditional: se_var,
            se_mean_marginal: se_mean,
            se_var_marginal: se_var,
            sample_count: samples,
            pair_count: 1,
        });
    }

    let ms = stream.named("marginal");
    let marginal: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let s = ms.child(i);
            let (a, b) = pair(world, &s);
            draw_alpha(world, &a, &b, k, &s)
        })
        .collect();
    let (mean_m, var_m, se_mean_m, se_var_m) = moments(&marginal);

    let groups = (samples / CONDITIONAL_GROUP_SIZE).max(2);
    let cs = stream.named("conditional");
    let per_group: Vec<(f64, f64)> = (0..groups as u64)
        .into_par_iter()
        .map(|g| {
            let s = cs.child(g);
            let (a, b) = pair(world, &s);
            let values: Vec<f64> = (0..CONDITIONAL_GROUP_SIZE as u64)
                .map(|j| draw_alpha(world, &a, &b, k, &s.child(j)))
                .collect();
            let (mean, var, _, _) = moments(&values);
            (mean, var)
        })
        .collect();
    let means: Vec<f64> = per_group.iter().map(|g| g.0).collect();
    let vars: Vec<f64> = per_group.iter().map(|g| g.1).collect();
    let (mean_c, _, se_mean_c, _) = moments(&means);
    let (var_c, _, se_var_c, _) = moments(&vars);

    Ok(AlphaMoments {
        mean_conditional: mean_c,
        var_conditional: var_c,
        mean_marginal: mean_m,
        var_marginal: var_m,
        se_mean_conditional: se_mean_c,
        se_var_conditional: se_var_c,
        se_mean_marginal: se_mean_m,
        se_var_marginal: se_var_m,
        sample_count: samples,
        pair_count: groups,
    })
}

/// Empirical N-way accuracy over world episodes with its 95% half-width.
pub fn mc_accuracy(
    world: &GaussianWorld,
    k: usize,
    ways: usize,
    episodes: usize,
    queries: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if episodes < MIN_ACCURACY_EPISODES {
        return Err(Error::InvalidParameter(format!(
            "need at least {MIN_ACCURACY_EPISODES} episodes, got {episodes}"
        )));
    }
    let config = EvalConfig {
        ways,
        shots: vec![k],
        queries,
        query_mode: QueryMode::PerClass,
        episodes,
        seed,
    };
    let report = protonet::evaluate(&config, Source::World(world), None)?;
    let r = &report.per_k[0];
    Ok((r.accuracy, r.ci95))
}
