use std::ffi::OsString;
use std::path::{Path, PathBuf};

use protoest::datastore::{self, class_stats, load_embeddings, moment_summary, write_csv_row};
use protoest::protonet::{self, EvalConfig, Source};
use protoest::rng::SeedStream;
use protoest::theory::{self, AlphaMoments, BoundReport};
use protoest::transforms::{fit_est, fit_pca, LinearTransform, Method};
use protoest::world::{self, world_moments, CovSpec, GaussianWorld, TheoryInputs};
use serde::Serialize;

use crate::manifest::{file_digest, RunManifest};
use crate::{
    BoundArgs, DiagnoseArgs, EvalArgs, Failure, FitArgs, GenWorldArgs, VcArgs, VerifyArgs, EXIT_INPUT,
    EXIT_VERIFICATION,
};

type CmdResult = Result<(), Failure>;

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(prefix.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

fn json_line(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn as_input(e: protoest::Error) -> Failure {
    Failure::new(EXIT_INPUT, e.to_string())
}

pub fn gen_world(a: &GenWorldArgs) -> CmdResult {
    let mut inputs = Vec::new();
    let mut cov = |text: &str| -> Result<_, Failure> {
        let spec: CovSpec = text.parse().map_err(as_input)?;
        if let CovSpec::File(p) = &spec {
            inputs.push(p.clone());
        }
        spec.build(a.dim)
            .map_err(|e| Failure::new(EXIT_INPUT, format!("{text}: {e}")))
    };
    let sigma = cov(&a.sigma_spec)?;
    let sigma_c = cov(&a.sigma_c_spec)?;
    let mu = a.mu.clone().unwrap_or_else(|| vec![0.0; a.dim]);
    let world = GaussianWorld::new(mu, sigma, sigma_c).map_err(as_input)?;

    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let manifest = RunManifest::new("gen-world", a, Some(a.seed), &input_refs)?;
    manifest.write_with(&a.out, &(world.to_json()? + "\n"))?;

    if let (Some(classes), Some(per_class)) = (a.classes, a.points_per_class) {
        let root = SeedStream::new(a.seed);
        let points = root.named("points");
        let mut csv = String::new();
        for class in world::sample_classes(&world, classes, &root.named("classes")) {
            let label = format!("c{}", class.id);
            for p in world::sample_points(&class, &world, per_class, &points.child(class.id)) {
                write_csv_row(&mut csv, &label, &p);
            }
        }
        manifest.write_with(&a.csv_out, &csv)?;
    }
    Ok(())
}

pub fn fit(a: &FitArgs) -> CmdResult {
    let dataset = load_embeddings(&a.input)?;
    let digest = file_digest(&a.input)?;
    let stats = class_stats(&dataset);
    let transform = match a.method {
        Method::Est => fit_est(&moment_summary(&stats, a.weighting)?, a.rho, a.dim)?,
        Method::Pca => fit_pca(&stats.total_cov, a.dim)?,
    }
    .with_source_digest(digest);
    if transform.negative_selected_count() > 0 {
        eprintln!(
            "warning: {} selected eigenvalues are negative; consider a smaller --dim or --rho",
            transform.negative_selected_count()
        );
    }
    RunManifest::new("fit", a, None, &[&a.input])?.write_with(&a.out, &(transform.to_json()? + "\n"))?;
    Ok(())
}

enum Loaded {
    World(GaussianWorld),
    Dataset(datastore::EmbeddingDataset),
}

impl Loaded {
    fn open(path: &Path) -> Result<Self, Failure> {
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        Ok(if is_json {
            Loaded::World(GaussianWorld::load(path)?)
        } else {
            Loaded::Dataset(load_embeddings(path)?)
        })
    }

    fn source(&self) -> Source<'_> {
        match self {
            Loaded::World(w) => Source::World(w),
            Loaded::Dataset(d) => Source::Dataset(d),
        }
    }
}

pub fn eval(a: &EvalArgs) -> CmdResult {
    let loaded = Loaded::open(&a.source)?;
    let transform = a.transform.as_deref().map(LinearTransform::load).transpose()?;
    let config = EvalConfig {
        ways: a.ways,
        shots: a.shots.clone(),
        queries: a.queries,
        query_mode: a.query_mode,
        episodes: a.episodes,
        seed: a.seed,
    };
    let report = match a.workers {
        Some(w) => protonet::evaluate_with_workers(&config, loaded.source(), transform.as_ref(), w)?,
        None => protonet::evaluate(&config, loaded.source(), transform.as_ref())?,
    };
    let model = a.model.clone().unwrap_or_else(|| match &transform {
        None => "ProtoNet".to_string(),
        Some(t) => match t.method() {
            Method::Est => "ProtoNet-EST".to_string(),
            Method::Pca => "ProtoNet-PCA".to_string(),
        },
    });

    let mut inputs: Vec<&Path> = vec![&a.source];
    if let Some(t) = &a.transform {
        inputs.push(t);
    }
    let manifest = RunManifest::new("eval", a, Some(a.seed), &inputs)?;
    manifest.write_with(&with_suffix(&a.out, ".json"), &json_line(&report))?;
    manifest.write_with(&with_suffix(&a.out, ".csv"), &report.to_csv())?;
    manifest.write_with(
        &with_suffix(&a.out, ".table.csv"),
        &report.to_table_csv(&model, &a.training_shots),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct BoundRow {
    k: usize,
    bound: BoundReport,
    mc_accuracy: Option<f64>,
    mc_ci95: Option<f64>,
}

#[derive(Serialize)]
struct BoundSweep {
    ways: usize,
    inputs: TheoryInputs,
    mc_episodes: Option<usize>,
    seed: u64,
    rows: Vec<BoundRow>,
}

pub fn bound(a: &BoundArgs) -> CmdResult {
    let (path, loaded) = match (&a.world_config, &a.moments_from) {
        (Some(p), _) => (p, Loaded::World(GaussianWorld::load(p)?)),
        (None, Some(p)) => (p, Loaded::Dataset(load_embeddings(p)?)),
        (None, None) => unreachable!("clap requires one source"),
    };
    let inputs = match &loaded {
        Loaded::World(w) => world_moments(w),
        Loaded::Dataset(d) => theory::empirical_inputs(&class_stats(d)).map_err(as_input)?,
    };

    let mut rows = Vec::with_capacity(a.shots.len());
    for &k in &a.shots {
        let bound = theory::nway_bound(&inputs, k, a.ways).map_err(as_input)?;
        let mc = match (a.mc_episodes, &loaded) {
            (None, _) => None,
            (Some(episodes), Loaded::World(w)) => Some(theory::mc_accuracy(w, k, a.ways, episodes, a.queries, a.seed)?),
            (Some(episodes), Loaded::Dataset(_)) => {
                let config = EvalConfig {
                    ways: a.ways,
                    shots: vec![k],
                    queries: a.queries,
                    query_mode: protonet::QueryMode::PerClass,
                    episodes,
                    seed: a.seed,
                };
                let r = protonet::evaluate(&config, loaded.source(), None)?;
                Some((r.per_k[0].accuracy, r.per_k[0].ci95))
            }
        };
        rows.push(BoundRow {
            k,
            bound,
            mc_accuracy: mc.map(|m| m.0),
            mc_ci95: mc.map(|m| m.1),
        });
    }

    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut csv = String::from("k,bound_raw,bound_clamped,mc_accuracy,mc_ci95\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.k,
            r.bound.raw,
            r.bound.clamped,
            opt(r.mc_accuracy),
            opt(r.mc_ci95)
        ));
    }
    let sweep = BoundSweep {
        ways: a.ways,
        inputs,
        mc_episodes: a.mc_episodes,
        seed: a.seed,
        rows,
    };
    let manifest = RunManifest::new("bound", a, Some(a.seed), &[path])?;
    manifest.write_with(&with_suffix(&a.out, ".csv"), &csv)?;
    manifest.write_with(&with_suffix(&a.out, ".json"), &json_line(&sweep))?;
    Ok(())
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    k: usize,
    closed_form: f64,
    estimate: f64,
    standard_error: f64,
    passed: bool,
}

#[derive(Serialize)]
struct VerifyReport {
    samples: usize,
    seed: u64,
    perturb: f64,
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    checks: Vec<Check>,
    all_passed: bool,
}

// Slack for exactly deterministic cases where the standard error is zero.
fn slack(closed: f64) -> f64 {
    1e-9 * closed.abs().max(1.0)
}

pub fn verify(a: &VerifyArgs) -> CmdResult {
    if a.samples < theory::MIN_ALPHA_SAMPLES {
        return Err(Failure::new(
            EXIT_INPUT,
            format!("--samples must be at least {}", theory::MIN_ALPHA_SAMPLES),
        ));
    }
    let world = GaussianWorld::load(&a.world_config)?;
    let root = SeedStream::new(a.seed);
    let pair = world::sample_classes(&world, 2, &root.named("pair"));
    let (mu_a, mu_b) = (&pair[0].mean, &pair[1].mean);
    let scale = 1.0 + a.perturb;
    let tr_sigma = world_moments(&world).tr_sigma;

    let mut checks = Vec::new();
    for &k in &a.k {
        let stream = root.child(k as u64);
        let fixed: AlphaMoments =
            theory::mc_alpha_moments(&world, k, Some((mu_a, mu_b)), a.samples, &stream.named("fixed-pair"))?;
        let random = theory::mc_alpha_moments(&world, k, None, a.samples, &stream.named("random-pairs"))?;

        let closed = scale * theory::lemma1_conditional(mu_a, mu_b)?;
        checks.push(Check {
            name: "mean_alpha_fixed_pair",
            k,
            closed_form: closed,
            estimate: fixed.mean_conditional,
            standard_error: fixed.se_mean_conditional,
            passed: (fixed.mean_conditional - closed).abs() <= 4.0 * fixed.se_mean_conditional + slack(closed),
        });
        let closed = scale * theory::lemma1_marginal(tr_sigma);
        checks.push(Check {
            name: "mean_alpha_marginal",
            k,
            closed_form: closed,
            estimate: random.mean_marginal,
            standard_error: random.se_mean_marginal,
            passed: (random.mean_marginal - closed).abs() <= 4.0 * random.se_mean_marginal + slack(closed),
        });
        let closed = scale * theory::lemma2_bound(k, world.sigma_c(), world.sigma())?;
        checks.push(Check {
            name: "expected_conditional_variance_bound",
            k,
            closed_form: closed,
            estimate: random.var_conditional,
            standard_error: random.se_var_conditional,
            passed: random.var_conditional <= closed + 4.0 * random.se_var_conditional + slack(closed),
        });
    }
    let all_passed = checks.iter().all(|c| c.passed);
    let report = VerifyReport {
        samples: a.samples,
        seed: a.seed,
        perturb: a.perturb,
        mu_a: mu_a.clone(),
        mu_b: mu_b.clone(),
        checks,
        all_passed,
    };
    RunManifest::new("verify", a, Some(a.seed), &[&a.world_config])?.write_with(&a.out, &json_line(&report))?;
    for c in report.checks.iter().filter(|c| !c.passed) {
        eprintln!(
            "FAIL {} k={}: estimate {} (se {}) vs closed form {}",
            c.name, c.k, c.estimate, c.standard_error, c.closed_form
        );
    }
    if all_passed {
        Ok(())
    } else {
        Err(Failure::new(EXIT_VERIFICATION, "verification failed"))
    }
}

pub fn diagnose(a: &DiagnoseArgs) -> CmdResult {
    let dataset = load_embeddings(&a.input)?;
    let report = datastore::diagnose(&dataset, a.threshold, a.weighting)?;
    let text = json_line(&report);
    match &a.out {
        Some(out) => RunManifest::new("diagnose", a, None, &[&a.input])?.write_with(out, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

pub fn vc(a: &VcArgs) -> CmdResult {
    println!("{}", theory::vc_gap(a.vc_dim, a.k, a.delta)?);
    Ok(())
}
