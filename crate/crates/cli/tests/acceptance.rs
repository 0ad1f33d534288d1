//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits nonzero if any failed. Pass criterion numbers as arguments to
//! run a subset, e.g. `cargo test -p protoest-cli --test acceptance -- 3 5`.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use protoest::datastore::{class_stats, diagnose, moment_summary, EmbeddingDataset, Weighting};
use protoest::numerics::{sym_eigendecompose, trace, DenseMatrix};
use protoest::protonet::{self, alpha_pair, prototypes, sample_episode, AlphaForm, EvalConfig, QueryMode, Source};
use protoest::rng::SeedStream;
use protoest::theory;
use protoest::transforms::{fit_est, fit_pca};
use protoest::world::{self, mc_fourth_moment, world_moments, GaussianWorld, TheoryInputs};
use rand::Rng;

/// Minimum EST-over-identity 1-shot accuracy gain for criterion 5. A pilot
/// over data seeds 100..110 on the same world gave gains of 0.635 to 0.642
/// (EST near 1.0, identity near 0.36, each CI under 0.008).
const EST_PILOT_MARGIN: f64 = 0.6;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn within_time(o: Outcome, start: Instant, limit: Duration) -> Outcome {
    let elapsed = start.elapsed();
    if elapsed > limit {
        outcome(false, format!("{} (took {:.1?}, limit {:?})", o.detail, elapsed, limit))
    } else {
        o
    }
}

fn spherical(dim: usize, s: f64, c: f64) -> GaussianWorld {
    GaussianWorld::centered(DenseMatrix::identity(dim).scaled(s), DenseMatrix::identity(dim).scaled(c)).unwrap()
}

fn grid_worlds() -> Vec<GaussianWorld> {
    (0..5u64)
        .map(|i| GaussianWorld::random_psd([2, 4, 8][i as usize % 3], 1.0, &SeedStream::new(1000 + i)).unwrap())
        .collect()
}

const GRID_K: [usize; 4] = [1, 2, 5, 10];

fn lemma1() -> Outcome {
    let start = Instant::now();
    let world = spherical(4, 1.0, 1.0);
    let root = SeedStream::new(1);
    let pair = world::sample_classes(&world, 2, &root.named("pair"));
    let closed = theory::lemma1_conditional(&pair[0].mean, &pair[1].mean).unwrap();
    let fixed =
        theory::mc_alpha_moments(&world, 1, Some((&pair[0].mean, &pair[1].mean)), 200_000, &root.named("fixed")).unwrap();
    let cond_z = (fixed.mean_conditional - closed) / fixed.se_mean_conditional;

    let random = theory::mc_alpha_moments(&world, 1, None, 200_000, &root.named("random")).unwrap();
    let marginal = theory::lemma1_marginal(4.0);
    let marg_z = (random.mean_marginal - marginal) / random.se_mean_marginal;
    within_time(
        outcome(
            cond_z.abs() <= 4.0 && marg_z.abs() <= 4.0,
            format!(
                "fixed pair {:.4} vs {closed:.4} ({cond_z:+.2} SE); marginal {:.4} vs {marginal} ({marg_z:+.2} SE)",
                fixed.mean_conditional, random.mean_marginal
            ),
        ),
        start,
        Duration::from_secs(30),
    )
}

fn lemma2() -> Outcome {
    let start = Instant::now();
    let mut worst = f64::NEG_INFINITY;
    let mut failures = Vec::new();
    let mut cells = 0;
    for (w, world) in grid_worlds().iter().enumerate() {
        for k in GRID_K {
            let m = theory::mc_alpha_moments(world, k, None, 50_000, &SeedStream::new(2).child(w as u64).child(k as u64))
                .unwrap();
            let bound = theory::lemma2_bound(k, world.sigma_c(), world.sigma()).unwrap();
            let z = (m.var_conditional - bound) / m.se_var_conditional;
            worst = worst.max(z);
            cells += 1;
            if z > 4.0 {
                failures.push(format!("world {w} k {k}: {} > {bound}", m.var_conditional));
            }
        }
    }
    within_time(
        outcome(
            failures.is_empty(),
            format!("{cells} cells, max (mc - bound)/SE = {worst:.2} {}", failures.join("; ")),
        ),
        start,
        Duration::from_secs(120),
    )
}

fn theorem1() -> Outcome {
    let mut problems = Vec::new();
    let mut min_slack = f64::INFINITY;
    for (w, world) in grid_worlds().iter().enumerate() {
        let m = world_moments(world);
        let b: Vec<f64> = (1..=10).map(|k| theory::theorem1_bound(&m, k).unwrap().raw).collect();
        if !b.windows(2).all(|p| p[1] >= p[0]) {
            problems.push(format!("world {w}: bound not monotone"));
        }
        if m.tr_sigma_c_sq > 0.0 && b[1] - b[0] <= b[9] - b[4] {
            problems.push(format!("world {w}: no saturation"));
        }
        for k in GRID_K {
            let (acc, ci) = theory::mc_accuracy(world, k, 2, 5000, 15, 30 + w as u64).unwrap();
            let slack = (acc - (b[k - 1] - 3.0 * ci)) / ci;
            min_slack = min_slack.min(slack);
            if acc < b[k - 1] - 3.0 * ci {
                problems.push(format!("world {w} k {k}: accuracy {acc} below bound {}", b[k - 1]));
            }
        }
    }

    let eps_world = spherical(2, 1.0, 1e-6);
    let m = world_moments(&eps_world);
    let spot = theory::theorem1_bound(&m, 1).unwrap().raw;
    if (spot - 0.5).abs() > 1e-3 {
        problems.push(format!("spot value {spot}"));
    }
    // cross-check with a Monte Carlo fourth moment
    let (fourth, se) = mc_fourth_moment(&eps_world, 1_000_000, &SeedStream::new(3));
    let mc_inputs = TheoryInputs {
        fourth_moment: fourth,
        ..m
    };
    let mc_spot = theory::theorem1_bound(&mc_inputs, 1).unwrap().raw;
    let c = theory::theorem1_bound(&m, 1).unwrap().components;
    let denom = c.denom_term1 + c.denom_term2 + c.denom_term3;
    let se_spot = c.numerator / (denom * denom) * se;
    if (mc_spot - spot).abs() > 3.0 * se_spot {
        problems.push(format!("Monte Carlo spot value {mc_spot} ± {se_spot}"));
    }
    outcome(
        problems.is_empty(),
        format!(
            "min accuracy slack {min_slack:.1} CI units; spot {spot:.6}, Monte Carlo {mc_spot:.4} {}",
            problems.join("; ")
        ),
    )
}

fn linear_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = SeedStream::new(4).rng();
    let mut draw = || (0..5).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let (q, a, b) = (draw(), draw(), draw());
        let d = alpha_pair(&q, &a, &b, AlphaForm::Distance).unwrap();
        let l = alpha_pair(&q, &a, &b, AlphaForm::Linear).unwrap();
        worst = worst.max((d - l).abs());
    }
    within_time(
        outcome(worst <= 1e-9, format!("10000 triples, max |difference| {worst:.2e}")),
        start,
        Duration::from_secs(5),
    )
}

// Largest principal angle between span(basis) and the first `d` coordinate axes, degrees.
fn largest_angle_to_axes(basis: &DenseMatrix, d: usize) -> f64 {
    let top = DenseMatrix::from_rows(&(0..d).map(|i| basis.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
    let gram = top.transpose().matmul(&top).unwrap();
    let smallest = sym_eigendecompose(&gram).unwrap().eigenvalues[d - 1].max(0.0);
    smallest.sqrt().min(1.0).acos().to_degrees()
}

fn est_recovery() -> Outcome {
    let start = Instant::now();
    let mut sigma = vec![0.0; 10];
    let mut sigma_c = vec![1.0; 10];
    sigma[..2].fill(1.0);
    sigma_c[..2].fill(0.0);
    let world = GaussianWorld::centered(DenseMatrix::from_diag(&sigma), DenseMatrix::from_diag(&sigma_c)).unwrap();
    let root = SeedStream::new(5);
    let mut records = Vec::with_capacity(200 * 500);
    for class in world::sample_classes(&world, 200, &root.named("classes")) {
        let label = format!("c{}", class.id);
        for p in world::sample_points(&class, &world, 500, &root.named("points").child(class.id)) {
            records.push((label.clone(), p));
        }
    }
    let stats = class_stats(&EmbeddingDataset::new(records).unwrap());
    let est = fit_est(&moment_summary(&stats, Weighting::EqualClass).unwrap(), 1.0, 2).unwrap();
    let angle = largest_angle_to_axes(est.projection(), 2);

    let config = EvalConfig {
        ways: 5,
        shots: vec![1],
        queries: 15,
        query_mode: QueryMode::PerClass,
        episodes: 600,
        seed: 55,
    };
    let with = protonet::evaluate(&config, Source::World(&world), Some(&est)).unwrap().per_k[0].clone();
    let without = protonet::evaluate(&config, Source::World(&world), None).unwrap().per_k[0].clone();
    let gain = with.accuracy - without.accuracy;
    let passed = angle < 5.0 && gain > with.ci95 + without.ci95 && gain >= EST_PILOT_MARGIN;
    within_time(
        outcome(
            passed,
            format!(
                "angle {angle:.3} deg; 1-shot accuracy {:.4} ± {:.4} with EST vs {:.4} ± {:.4} without (gain {gain:.4}, required {EST_PILOT_MARGIN})",
                with.accuracy, with.ci95, without.accuracy, without.ci95
            ),
        ),
        start,
        Duration::from_secs(180),
    )
}

fn est_pca_consistency() -> Outcome {
    let world = GaussianWorld::random_psd(6, 0.5, &SeedStream::new(6)).unwrap();
    let root = SeedStream::new(60);
    let classes = world::sample_classes(&world, 40, &root.named("classes"));
    let mut records = Vec::new();
    for c in &classes {
        for p in world::sample_points(c, &world, 25, &root.named("points").child(c.id)) {
            records.push((format!("c{}", c.id), p));
        }
    }
    let dataset = EmbeddingDataset::new(records).unwrap();
    let stats = class_stats(&dataset);
    let means = EmbeddingDataset::new(stats.classes.iter().map(|c| (c.label.clone(), c.mean.clone())).collect()).unwrap();
    let mean_stats = class_stats(&means);
    let est = fit_est(&moment_summary(&mean_stats, Weighting::EqualClass).unwrap(), 0.0, 6).unwrap();
    let pca = fit_pca(&mean_stats.total_cov, 6).unwrap();
    let eig_gap = est
        .selected_eigenvalues()
        .iter()
        .zip(pca.selected_eigenvalues())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let t = fit_est(&moment_summary(&stats, Weighting::EqualClass).unwrap(), 0.001, 3).unwrap();
    let mut commute = 0.0f64;
    for e in 0..200 {
        let ep = sample_episode(Source::Dataset(&dataset), 5, 5, 3, QueryMode::PerClass, &root.named("episodes").child(e))
            .unwrap();
        let after = prototypes(&ep.transformed(&t).unwrap());
        for (p, q) in prototypes(&ep).iter().zip(&after) {
            for (x, y) in t.apply(p).unwrap().iter().zip(q) {
                commute = commute.max((x - y).abs());
            }
        }
    }
    outcome(
        eig_gap <= 1e-8 && commute <= 1e-10,
        format!("max eigenvalue gap {eig_gap:.2e}; max commutation error {commute:.2e}"),
    )
}

fn diagnostics() -> Outcome {
    let mut rng = SeedStream::new(7).rng();
    let mut normal = || rng.sample::<f64, _>(rand_distr::StandardNormal);
    // orthonormal 3-frame in R^10 from an eigenbasis
    let mut raw = DenseMatrix::zeros(10, 10);
    for i in 0..10 {
        for j in 0..10 {
            raw[(i, j)] = normal();
        }
    }
    let frame = sym_eigendecompose(&raw.add_scaled(&raw.transpose(), 1.0).unwrap()).unwrap().eigenvectors;
    let records: Vec<(String, Vec<f64>)> = (0..500)
        .map(|i| {
            let z = [normal(), normal(), normal()];
            let v = (0..10).map(|r| (0..3).map(|c| frame[(r, c)] * z[c]).sum()).collect();
            (format!("c{}", i % 5), v)
        })
        .collect();
    let report = diagnose(&EmbeddingDataset::new(records).unwrap(), 0.9, Weighting::EqualClass).unwrap();

    let sizes = [3, 17, 40, 8, 101];
    let mut records = Vec::new();
    for (c, &n) in sizes.iter().enumerate() {
        let offset: Vec<f64> = (0..4).map(|_| 3.0 * normal()).collect();
        for _ in 0..n {
            records.push((format!("k{c}"), offset.iter().map(|o| o + (c + 1) as f64 * 0.3 * normal()).collect()));
        }
    }
    let stats = class_stats(&EmbeddingDataset::new(records).unwrap());
    let s = moment_summary(&stats, Weighting::ClassSize).unwrap();
    let total = trace(&stats.total_cov).unwrap();
    let parts = trace(&s.between_cov).unwrap() + trace(&s.within_cov).unwrap();
    let rel = (total - parts).abs() / total;
    outcome(
        report.intrinsic_dimension == 3 && rel <= 1e-9,
        format!(
            "rank-3 data gives intrinsic dimension {}; total-variance identity relative error {rel:.2e}",
            report.intrinsic_dimension
        ),
    )
}

fn vc() -> Outcome {
    let v = theory::vc_gap(2, 2, 0.05).unwrap();
    let in_k: Vec<f64> = (2..=1000).map(|k| theory::vc_gap(2, k, 0.05).unwrap()).collect();
    let in_d: Vec<f64> = (1..=64).map(|d| theory::vc_gap(d, 100, 0.05).unwrap()).collect();
    let dec = in_k.windows(2).all(|w| w[1] < w[0]);
    let inc = in_d.windows(2).all(|w| w[1] > w[0]);
    outcome(
        (v - 1.513).abs() <= 1e-3 && dec && inc,
        format!("gap(2, 2, 0.05) = {v:.6}; decreasing in k: {dec}; increasing in D: {inc}"),
    )
}

fn cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_protoest"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = || -> Result<Vec<Vec<u8>>, String> {
        cli(d, &["gen-world", "--dim", "8", "--seed", "11", "--sigma-c-spec", "spherical:2"])?;
        let mut csvs = Vec::new();
        for (i, w) in ["1", "4", "8", "1"].iter().enumerate() {
            let prefix = format!("run{i}");
            cli(d, &["eval", "--source", "world.json", "--seed", "9", "--workers", w, "--out", &prefix])?;
            csvs.push(std::fs::read(d.join(format!("{prefix}.csv"))).map_err(|e| e.to_string())?);
        }
        Ok(csvs)
    };
    match run() {
        Ok(csvs) => {
            let same = csvs.windows(2).all(|w| w[0] == w[1]);
            outcome(same, format!("workers 1, 4, 8 and a repeat run: identical CSV bytes = {same}"))
        }
        Err(e) => outcome(false, e),
    }
}

fn protocol() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    if let Err(e) = cli(d, &["gen-world", "--dim", "6", "--seed", "12"]).and_then(|_| cli(d, &["eval", "--source", "world.json"])) {
        return outcome(false, e);
    }
    let csv = std::fs::read_to_string(d.join("eval.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let shots_ok = rows.iter().map(|r| r[0]).eq((1..=10).map(|k| k.to_string()).collect::<Vec<_>>().iter().map(String::as_str));
    let episodes_ok = rows.iter().all(|r| r[3] == "600");
    let report: protonet::EvalReport = serde_json::from_str(&std::fs::read_to_string(d.join("eval.json")).unwrap()).unwrap();
    let json_ok = report.config.episodes == 600 && report.per_k.iter().all(|r| r.episodes == 600);
    let table = std::fs::read_to_string(d.join("eval.table.csv")).unwrap();
    let header = table.lines().next().unwrap_or("");
    let header_ok = header == "model,training_shots,1,2,3,4,5,6,7,8,9,10,average,average_ci95";
    let table_rows = table.lines().count();
    outcome(
        shots_ok && episodes_ok && json_ok && header_ok && table_rows == 2,
        format!("shots 1..10: {shots_ok}; 600 episodes each: {}; table header: {header}", episodes_ok && json_ok),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("mean of alpha matches closed forms", lemma1),
        ("expected conditional variance bound dominates", lemma2),
        ("accuracy lower bound validity and shape", theorem1),
        ("distance and linear margins agree", linear_equivalence),
        ("EST recovers the signal subspace", est_recovery),
        ("EST with rho 0 matches PCA on class means", est_pca_consistency),
        ("intrinsic dimension and total variance", diagnostics),
        ("VC gap value and monotonicity", vc),
        ("eval CSV is deterministic", determinism),
        ("default eval protocol shape", protocol),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        println!(
            "criterion {n:>2} {} {name} [{:.1?}]: {}",
            if o.passed { "PASS" } else { "FAIL" },
            start.elapsed(),
            o.detail
        );
        if !o.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
