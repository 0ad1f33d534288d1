//! Episodes, the nearest-prototype classifier and the episodic evaluation
//! harness.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::EmbeddingDataset;
use crate::numerics::{dot, squared_distance};
use crate::rng::SeedStream;
use crate::transforms::LinearTransform;
use crate::world::GaussianWorld;
use crate::{Error, Result};

pub const DEFAULT_EPISODES: usize = 600;
pub const DEFAULT_QUERIES: usize = 15;

/// Where episodes come from.
#[derive(Debug, Clone, Copy)]
pub enum Source<'a> {
    /// Fresh classes drawn i.i.d. from the world for every episode.
    World(&'a GaussianWorld),
    /// Classes and samples drawn without replacement from a fixed dataset.
    Dataset(&'a EmbeddingDataset),
}

impl Source<'_> {
    pub fn dim(&self) -> usize {
        match self {
            Source::World(w) => w.dim(),
            Source::Dataset(d) => d.dim(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryMode {
    /// `queries` samples from every class in the episode.
    #[default]
    PerClass,
    /// `queries` samples in total, each from a uniformly chosen class.
    PerEpisode,
}

impl std::str::FromStr for QueryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-class" => Ok(Self::PerClass),
            "per-episode" => Ok(Self::PerEpisode),
            _ => Err(Error::InvalidParameter(format!("unknown query mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub ways: usize,
    pub shots: usize,
    /// `supports[i]` holds the `shots` vectors of class `i`.
    pub supports: Vec<Vec<Vec<f64>>>,
    /// Query vectors with their class index in `0..ways`.
    pub queries: Vec<(Vec<f64>, usize)>,
}

impl Episode {
    pub fn validate(&self) -> Result<()> {
        if self.supports.len() != self.ways {
            return Err(Error::DimensionMismatch {
                expected: self.ways,
                found: self.supports.len(),
            });
        }
        let dim = self
            .supports
            .first()
            .and_then(|s| s.first())
            .map_or(0, Vec::len);
        for s in &self.supports {
            if s.len() != self.shots {
                return Err(Error::DimensionMismatch {
                    expected: self.shots,
                    found: s.len(),
                });
            }
        }
        let vectors = self
            .supports
            .iter()
            .flatten()
            .chain(self.queries.iter().map(|(q, _)| q));
        for v in vectors {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        if let Some((_, y)) = self.queries.iter().find(|(_, y)| *y >= self.ways) {
            return Err(Error::InvalidParameter(format!("query label {y} out of range")));
        }
        Ok(())
    }

    /// Applies `transform` to every support and query vector.
    pub fn transformed(&self, transform: &LinearTransform) -> Result<Episode> {
        let supports = self
            .supports
            .iter()
            .map(|s| s.iter().map(|v| transform.apply(v)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let queries = self
            .queries
            .iter()
            .map(|(q, y)| Ok((transform.apply(q)?, *y)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Episode {
            ways: self.ways,
            shots: self.shots,
            supports,
            queries,
        })
    }
}

fn query_counts(ways: usize, queries: usize, mode: QueryMode, stream: &SeedStream) -> Vec<usize> {
    match mode {
        QueryMode::PerClass => vec![queries; ways],
        QueryMode::PerEpisode => {
            let mut rng = stream.named("query-classes").rng();
            let mut counts = vec![0; ways];
            for _ in 0..queries {
                counts[rng.random_range(0..ways)] += 1;
            }
            counts
        }
    }
}

/// Draws one N-way k-shot episode. Deterministic given `stream`.
pub fn sample_episode(
    source: Source<'_>,
    ways: usize,
    shots: usize,
    queries: usize,
    mode: QueryMode,
    stream: &SeedStream,
) -> Result<Episode> {
    if ways == 0 || shots == 0 {
        return Err(Error::InvalidParameter("ways and shots must be at least 1".into()));
    }
    let counts = query_counts(ways, queries, mode, stream);
    let mut supports = Vec::with_capacity(ways);
    let mut query_list = Vec::new();
    match source {
        Source::World(world) => {
            let class_stream = stream.named("classes");
            for (i, &q) in counts.iter().enumerate() {
                let class = world.sample_class(i as u64, &class_stream);
                let mut points =
                    world.sample_point_range(&class, 0..(shots + q) as u64, &stream.child(i as u64));
                let qs = points.split_off(shots);
                supports.push(points);
                query_list.extend(qs.into_iter().map(|v| (v, i)));
            }
        }
        Source::Dataset(data) => {
            let available = data.classes().len();
            if available < ways {
                return Err(Error::InsufficientClasses {
                    needed: ways,
                    available,
                });
            }
            let mut rng = stream.rng();
            let chosen = index::sample(&mut rng, available, ways).into_vec();
            for (i, (&c, &q)) in chosen.iter().zip(&counts).enumerate() {
                let members = data.members(c);
                let needed = shots + q;
                if members.len() < needed {
                    return Err(Error::InsufficientSamplesPerClass {
                        label: data.classes()[c].clone(),
                        needed,
                        available: members.len(),
                    });
                }
                let picks = index::sample(&mut rng, members.len(), needed).into_vec();
                let mut vectors = picks.iter().map(|&p| data.vector(members[p]).to_vec());
                supports.push(vectors.by_ref().take(shots).collect());
                query_list.extend(vectors.map(|v| (v, i)));
            }
        }
    }
    Ok(Episode {
        ways,
        shots,
        supports,
        queries: query_list,
    })
}

/// Mean of each class's supports.
pub fn prototypes(episode: &Episode) -> Vec<Vec<f64>> {
    episode
        .supports
        .iter()
        .map(|support| {
            let dim = support.first().map_or(0, Vec::len);
            let mut mean = vec![0.0; dim];
            for v in support {
                for (m, x) in mean.iter_mut().zip(v) {
                    *m += x;
                }
            }
            let k = support.len() as f64;
            mean.iter_mut().for_each(|m| *m /= k);
            mean
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    /// Index of the nearest prototype, lowest index on ties.
    pub argmax: usize,
}

/// Softmax over negative squared Euclidean distances to the prototypes.
pub fn predict(query: &[f64], prototypes: &[Vec<f64>]) -> Result<Prediction> {
    let mut distances = Vec::with_capacity(prototypes.len());
    for p in prototypes {
        if p.len() != query.len() {
            return Err(Error::DimensionMismatch {
                expected: query.len(),
                found: p.len(),
            });
        }
        distances.push(squared_distance(query, p));
    }
    let mut argmax = 0;
    for (j, &d) in distances.iter().enumerate() {
        if d < distances[argmax] {
            argmax = j;
        }
    }
    // max-subtraction: the nearest prototype gets exponent 0
    let nearest = distances[argmax];
    let mut probabilities: Vec<f64> = distances.iter().map(|d| (nearest - d).exp()).collect();
    let z: f64 = probabilities.iter().sum();
    probabilities.iter_mut().for_each(|p| *p /= z);
    Ok(Prediction {
        probabilities,
        argmax,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaForm {
    /// `‖q − b‖² − ‖q − a‖²`
    Distance,
    /// `2(a − b)ᵀq + (bᵀb − aᵀa)`
    Linear,
}

/// Margin of the correct prototype `a` over the wrong prototype `b`;
/// positive means `q` is classified as `a`.
pub fn alpha_pair(query: &[f64], proto_a: &[f64], proto_b: &[f64], form: AlphaForm) -> Result<f64> {
    for p in [proto_a, proto_b] {
        if p.len() != query.len() {
            return Err(Error::DimensionMismatch {
                expected: query.len(),
                found: p.len(),
            });
        }
    }
    Ok(match form {
        AlphaForm::Distance => squared_distance(query, proto_b) - squared_distance(query, proto_a),
        AlphaForm::Linear => {
            let w: f64 = proto_a
                .iter()
                .zip(proto_b)
                .zip(query)
                .map(|((a, b), q)| (a - b) * q)
                .sum();
            2.0 * w + (dot(proto_b, proto_b) - dot(proto_a, proto_a))
        }
    })
}

/// Fraction of queries whose nearest prototype is their own class.
pub fn episode_accuracy(episode: &Episode) -> Result<f64> {
    let protos = prototypes(episode);
    let mut correct = 0usize;
    for (q, y) in &episode.queries {
        if predict(q, &protos)?.argmax == *y {
            correct += 1;
        }
    }
    Ok(if episode.queries.is_empty() {
        0.0
    } else {
        correct as f64 / episode.queries.len() as f64
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub ways: usize,
    pub shots: Vec<usize>,
    pub queries: usize,
    pub query_mode: QueryMode,
    pub episodes: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ways: 5,
            shots: (1..=10).collect(),
            queries: DEFAULT_QUERIES,
            query_mode: QueryMode::PerClass,
            episodes: DEFAULT_EPISODES,
            seed: 0,
        }
    }
}

impl EvalConfig {
    fn validate(&self) -> Result<()> {
        if self.ways == 0 || self.queries == 0 || self.episodes == 0 || self.shots.is_empty() {
            return Err(Error::InvalidParameter(
                "ways, queries, episodes and the shot list must be nonzero".into(),
            ));
        }
        if self.shots.contains(&0) {
            return Err(Error::InvalidParameter("shots must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotResult {
    pub k: usize,
    pub accuracy: f64,
    pub ci95: f64,
    pub episodes: usize,
    #[serde(skip)]
    pub episode_accuracies: Vec<f64>,
}

/// Mean and 95% half-width `1.96 · s / √n` (sample standard deviation).
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

impl ShotResult {
    pub fn from_episodes(k: usize, episode_accuracies: Vec<f64>) -> Self {
        let (accuracy, ci95) = mean_ci95(&episode_accuracies);
        Self {
            k,
            accuracy,
            ci95,
            episodes: episode_accuracies.len(),
            episode_accuracies,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub per_k: Vec<ShotResult>,
}

impl EvalReport {
    /// Accuracy and CI pooled over every episode of every shot value.
    pub fn average(&self) -> (f64, f64) {
        let all: Vec<f64> = self
            .per_k
            .iter()
            .flat_map(|r| r.episode_accuracies.iter().copied())
            .collect();
        mean_ci95(&all)
    }

    /// `k,accuracy,ci95,episodes`, one row per shot value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,accuracy,ci95,episodes\n");
        for r in &self.per_k {
            out.push_str(&format!("{},{},{},{}\n", r.k, r.accuracy, r.ci95, r.episodes));
        }
        out
    }

    /// Wide per-shot table: one column per testing shot plus the pooled
    /// average, in percent.
    pub fn to_table_csv(&self, model: &str, training_shots: &str) -> String {
        let mut header = String::from("model,training_shots");
        let mut row = format!("{model},{training_shots}");
        for r in &self.per_k {
            header.push_str(&format!(",{}", r.k));
            row.push_str(&format!(",{:.2}", 100.0 * r.accuracy));
        }
        let (avg, ci) = self.average();
        header.push_str(",average,average_ci95\n");
        row.push_str(&format!(",{:.2},{:.2}\n", 100.0 * avg, 100.0 * ci));
        header + &row
    }
}

/// Runs `config.episodes` episodes per shot value. Episode `e` of shot `k`
/// draws from `SeedStream::new(seed).child(k).child(e)`, so the report does
/// not depend on how rayon schedules the work.
pub fn evaluate(
    config: &EvalConfig,
    source: Source<'_>,
    transform: Option<&LinearTransform>,
) -> Result<EvalReport> {
    config.validate()?;
    if let Some(t) = transform {
        if t.dim_in() != source.dim() {
            return Err(Error::DimensionMismatch {
                expected: source.dim(),
                found: t.dim_in(),
            });
        }
    }
    if let Source::Dataset(d) = source {
        if d.classes().len() < config.ways {
            return Err(Error::InsufficientClasses {
                needed: config.ways,
                available: d.classes().len(),
            });
        }
    }
    let root = SeedStream::new(config.seed);
    let mut per_k = Vec::with_capacity(config.shots.len());
    for &k in &config.shots {
        let shot_stream = root.child(k as u64);
        let accuracies = (0..config.episodes as u64)
            .into_par_iter()
            .map(|e| {
                let episode = sample_episode(
                    source,
                    config.ways,
                    k,
                    config.queries,
                    config.query_mode,
                    &shot_stream.child(e),
                )?;
                match transform {
                    Some(t) => episode_accuracy(&episode.transformed(t)?),
                    None => episode_accuracy(&episode),
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        per_k.push(ShotResult::from_episodes(k, accuracies));
    }
    Ok(EvalReport {
        config: config.clone(),
        per_k,
    })
}

/// [`evaluate`] on a dedicated pool of `workers` threads.
pub fn evaluate_with_workers(
    config: &EvalConfig,
    source: Source<'_>,
    transform: Option<&LinearTransform>,
    workers: usize,
) -> Result<EvalReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(|| evaluate(config, source, transform))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DenseMatrix;
    use crate::transforms::Method;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn spherical(dim: usize, s: f64, c: f64) -> GaussianWorld {
        GaussianWorld::centered(
            DenseMatrix::identity(dim).scaled(s),
            DenseMatrix::identity(dim).scaled(c),
        )
        .unwrap()
    }

    fn cfg(ways: usize, shots: Vec<usize>, episodes: usize) -> EvalConfig {
        EvalConfig {
            ways,
            shots,
            queries: 15,
            query_mode: QueryMode::PerClass,
            episodes,
            seed: 5,
        }
    }

    #[test]
    fn world_episode_shape() {
        let w = spherical(3, 1.0, 1.0);
        let e = sample_episode(Source::World(&w), 2, 1, 1, QueryMode::PerClass, &SeedStream::new(1)).unwrap();
        assert_eq!(e.supports.len(), 2);
        assert!(e.supports.iter().all(|s| s.len() == 1 && s[0].len() == 3));
        assert_eq!(e.queries.len(), 2);
        assert_eq!(e.queries.iter().map(|(_, y)| *y).collect::<Vec<_>>(), vec![0, 1]);
        e.validate().unwrap();
        let again = sample_episode(Source::World(&w), 2, 1, 1, QueryMode::PerClass, &SeedStream::new(1)).unwrap();
        assert_eq!(e, again);
    }

    #[test]
    fn per_episode_queries_total() {
        let w = spherical(2, 1.0, 1.0);
        let e = sample_episode(Source::World(&w), 5, 2, 15, QueryMode::PerEpisode, &SeedStream::new(8)).unwrap();
        assert_eq!(e.queries.len(), 15);
        e.validate().unwrap();
    }

    #[test]
    fn dataset_episode_errors_and_disjointness() {
        let records: Vec<(String, Vec<f64>)> = (0..10)
            .map(|i| (if i < 5 { "a" } else { "b" }.to_string(), vec![i as f64]))
            .collect();
        let d = EmbeddingDataset::new(records).unwrap();
        let s = SeedStream::new(3);
        assert!(matches!(
            sample_episode(Source::Dataset(&d), 2, 5, 1, QueryMode::PerClass, &s),
            Err(Error::InsufficientSamplesPerClass { needed: 6, available: 5, .. })
        ));
        assert!(matches!(
            sample_episode(Source::Dataset(&d), 3, 1, 1, QueryMode::PerClass, &s),
            Err(Error::InsufficientClasses { needed: 3, available: 2 })
        ));
        let e = sample_episode(Source::Dataset(&d), 2, 3, 2, QueryMode::PerClass, &s).unwrap();
        for (i, support) in e.supports.iter().enumerate() {
            let qs: Vec<&Vec<f64>> = e.queries.iter().filter(|(_, y)| *y == i).map(|(q, _)| q).collect();
            for q in qs {
                assert!(!support.contains(q));
            }
        }
        assert_eq!(e, sample_episode(Source::Dataset(&d), 2, 3, 2, QueryMode::PerClass, &s).unwrap());
    }

    #[test]
    fn prototype_examples() {
        let e = Episode {
            ways: 3,
            shots: 0,
            supports: vec![
                vec![vec![1.0, 2.0]],
                vec![vec![0.0, 0.0], vec![2.0, 0.0]],
                vec![vec![4.0, 4.0]; 3],
            ],
            queries: vec![],
        };
        assert_eq!(prototypes(&e), vec![vec![1.0, 2.0], vec![1.0, 0.0], vec![4.0, 4.0]]);
    }

    #[test]
    fn predict_examples() {
        let p = predict(&[1.0, 5.0], &[vec![0.0, 5.0], vec![2.0, 5.0]]).unwrap();
        assert_eq!(p.probabilities, vec![0.5, 0.5]);
        assert_eq!(p.argmax, 0);

        let p = predict(&[0.0, 0.0], &[vec![0.0, 0.0], vec![10.0, 0.0]]).unwrap();
        assert!((p.probabilities[0] - 1.0).abs() < 1e-15);
        assert_eq!(p.argmax, 0);

        // p₀ = σ(2.25 − 0.25) = σ(2)
        let p = predict(&[0.5], &[vec![0.0], vec![2.0]]).unwrap();
        let sigmoid = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((p.probabilities[0] - sigmoid).abs() < 1e-15);
        assert!((p.probabilities[0] - 0.8808).abs() < 1e-4);
        // brute-force softmax, no max-subtraction
        let (e0, e1) = ((-0.25f64).exp(), (-2.25f64).exp());
        assert!((p.probabilities[0] - e0 / (e0 + e1)).abs() < 1e-15);

        assert!(matches!(predict(&[0.0], &[vec![0.0, 1.0]]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn predict_survives_huge_distances() {
        let p = predict(&[0.0], &[vec![1e3], vec![1e3 + 1.0]]).unwrap();
        assert!(p.probabilities.iter().all(|x| x.is_finite()));
        assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(p.argmax, 0);
    }

    #[test]
    fn alpha_examples() {
        let a = [1.0, 2.0];
        let b = [-1.0, 0.5];
        let gap = squared_distance(&a, &b);
        for form in [AlphaForm::Distance, AlphaForm::Linear] {
            assert!((alpha_pair(&a, &a, &b, form).unwrap() - gap).abs() < 1e-12);
            assert_eq!(alpha_pair(&[3.0, 3.0], &a, &a, form).unwrap(), 0.0);
        }
        let mut rng = SeedStream::new(17).rng();
        let mut draw = || (0..5).map(|_| rng.sample(StandardNormal)).collect::<Vec<f64>>();
        let (q, a, b) = (draw(), draw(), draw());
        let expanded = (0..5).map(|i| (q[i] - b[i]).powi(2)).sum::<f64>()
            - (0..5).map(|i| (q[i] - a[i]).powi(2)).sum::<f64>();
        assert!((alpha_pair(&q, &a, &b, AlphaForm::Distance).unwrap() - expanded).abs() < 1e-9);
        assert!((alpha_pair(&q, &a, &b, AlphaForm::Linear).unwrap() - expanded).abs() < 1e-9);
        assert!(alpha_pair(&q, &a, &[1.0], AlphaForm::Linear).is_err());
    }

    #[test]
    fn noiseless_world_is_perfect() {
        let w = spherical(3, 1.0, 0.0);
        let r = evaluate(&cfg(5, vec![1, 3, 5], 50), Source::World(&w), None).unwrap();
        for s in &r.per_k {
            assert_eq!(s.accuracy, 1.0);
            assert_eq!(s.ci95, 0.0);
            assert_eq!(s.episodes, 50);
        }
    }

    #[test]
    fn identical_classes_are_at_chance() {
        let w = spherical(3, 0.0, 1.0);
        let r = evaluate(&cfg(4, vec![2], 2000), Source::World(&w), None).unwrap();
        let s = &r.per_k[0];
        assert!((s.accuracy - 0.25).abs() <= s.ci95.max(1e-3), "{} ± {}", s.accuracy, s.ci95);
    }

    #[test]
    fn more_shots_help() {
        let w = spherical(4, 1.0, 1.0);
        let r = evaluate(&cfg(2, vec![1, 5], 5000), Source::World(&w), None).unwrap();
        assert!(r.per_k[1].accuracy > r.per_k[0].accuracy);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let w = spherical(3, 1.0, 1.0);
        let c = cfg(3, vec![1, 2], 300);
        let a = evaluate_with_workers(&c, Source::World(&w), None, 1).unwrap();
        let b = evaluate_with_workers(&c, Source::World(&w), None, 6).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.per_k[0].episode_accuracies, b.per_k[0].episode_accuracies);
    }

    #[test]
    fn ci_matches_definition() {
        let r = ShotResult::from_episodes(1, vec![1.0, 0.5, 0.0, 0.5]);
        let sd = (0.5f64 / 3.0).sqrt();
        assert!((r.ci95 - 1.96 * sd / 2.0).abs() < 1e-15);
        assert_eq!(r.accuracy, 0.5);
    }

    #[test]
    fn report_formats() {
        let report = EvalReport {
            config: cfg(2, vec![1, 2], 2),
            per_k: vec![
                ShotResult::from_episodes(1, vec![1.0, 0.5]),
                ShotResult::from_episodes(2, vec![1.0, 1.0]),
            ],
        };
        let csv = report.to_csv();
        assert_eq!(csv.lines().next(), Some("k,accuracy,ci95,episodes"));
        assert_eq!(csv.lines().count(), 3);
        let table = report.to_table_csv("protonet", "");
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "model,training_shots,1,2,average,average_ci95");
        assert!(lines[1].starts_with("protonet,,75.00,100.00,87.50,"));
    }

    fn random_episode(seed: u64, ways: usize, shots: usize, dim: usize) -> Episode {
        let w = GaussianWorld::random_psd(dim, 1.0, &SeedStream::new(seed)).unwrap();
        sample_episode(Source::World(&w), ways, shots, 3, QueryMode::PerClass, &SeedStream::new(seed + 1)).unwrap()
    }

    #[test]
    fn transform_commutes_with_prototypes() {
        let e = random_episode(40, 4, 5, 6);
        let q = crate::numerics::sym_eigendecompose(&DenseMatrix::from_rows(&[
            vec![2.0, 1.0, 0.0, 0.0, 0.0, 0.3],
            vec![1.0, 3.0, 0.2, 0.0, 0.0, 0.0],
            vec![0.0, 0.2, 1.0, 0.5, 0.0, 0.0],
            vec![0.0, 0.0, 0.5, 4.0, 0.1, 0.0],
            vec![0.0, 0.0, 0.0, 0.1, 5.0, 0.7],
            vec![0.3, 0.0, 0.0, 0.0, 0.7, 6.0],
        ]).unwrap()).unwrap().eigenvectors;
        let cols: Vec<Vec<f64>> = (0..3).map(|j| q.column(j)).collect();
        let t = LinearTransform::from_projection(DenseMatrix::from_columns(&cols).unwrap(), Method::Est).unwrap();
        let after = prototypes(&e.transformed(&t).unwrap());
        let before: Vec<Vec<f64>> = prototypes(&e).iter().map(|p| t.apply(p).unwrap()).collect();
        for (a, b) in after.iter().zip(&before) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn probabilities_are_a_distribution(
            q in proptest::collection::vec(-50.0f64..50.0, 3),
            protos in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 3), 1..8),
        ) {
            let p = predict(&q, &protos).unwrap();
            prop_assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(p.probabilities.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }

        #[test]
        fn translation_invariance(seed in 0u64..500, shift in proptest::collection::vec(-20.0f64..20.0, 4)) {
            let e = random_episode(seed, 3, 2, 4);
            let moved = Episode {
                supports: e.supports.iter().map(|s| s.iter().map(|v| v.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect()).collect(),
                queries: e.queries.iter().map(|(q, y)| (q.iter().zip(&shift).map(|(a, b)| a + b).collect(), *y)).collect(),
                ..e.clone()
            };
            let (p0, p1) = (prototypes(&e), prototypes(&moved));
            for ((q0, _), (q1, _)) in e.queries.iter().zip(&moved.queries) {
                let a = predict(q0, &p0).unwrap();
                let b = predict(q1, &p1).unwrap();
                for (x, y) in a.probabilities.iter().zip(&b.probabilities) {
                    prop_assert!((x - y).abs() <= 1e-9);
                }
            }
        }

        #[test]
        fn label_permutation_symmetry(seed in 0u64..500, rot in 1usize..4) {
            let e = random_episode(seed, 4, 2, 3);
            let perm: Vec<usize> = (0..4).map(|i| (i + rot) % 4).collect(); // new index of class i
            let mut supports = vec![Vec::new(); 4];
            for (i, s) in e.supports.iter().enumerate() {
                supports[perm[i]] = s.clone();
            }
            let permuted = Episode {
                supports,
                queries: e.queries.iter().map(|(q, y)| (q.clone(), perm[*y])).collect(),
                ..e.clone()
            };
            let (p0, p1) = (prototypes(&e), prototypes(&permuted));
            for (q, _) in &e.queries {
                let a = predict(q, &p0).unwrap();
                let b = predict(q, &p1).unwrap();
                for i in 0..4 {
                    prop_assert!((a.probabilities[i] - b.probabilities[perm[i]]).abs() <= 1e-15);
                }
            }
            prop_assert_eq!(episode_accuracy(&e).unwrap(), episode_accuracy(&permuted).unwrap());
        }
    }
}
