//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use liegg::datasets::{gen_sphere, SphereSampling};
use liegg::experiments::{
    analyze, cmd_sample_complexity, obtain_model, polarize, prepare_data, ExperimentConfig,
    Overrides, TaskData,
};
use liegg::linalg::skew_project;
use liegg::metrics::{
    cosine_similarity, direct_invariance, invariance_direct_product, symmetry_bias,
    unit_rotation_generator, Dataset, GroupProjector, SymmetryAnalysis, SymmetryReport,
};
use liegg::net::{
    hidden_dim_for_budget, Activation, Discriminator, NetSpec, Network, SphereDiscriminator,
};
use liegg::polarization::{polarization_vector, InputAction, SeedMode};
use liegg::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

const SEEDS: std::ops::RangeInclusive<u64> = 1..=8;

// Criterion 1.
const SPHERE_REL_TOL: f64 = 1e-6;
const SPHERE_BIAS_MAX: f64 = 1e-6;
const SPHERE_VARIANCE_MAX: f64 = 1e-12;
const SPHERE_RUNTIME: Duration = Duration::from_secs(1);
// Criterion 2.
const O5_MEAN_BIAS_MAX: f64 = 0.15;
const O5_TREND_SIZES: [usize; 3] = [100, 300, 1000];
const O5_TREND_MIN_SEEDS: usize = 6;
const O5_RUNTIME: Duration = Duration::from_secs(600);
// Criterion 3.
const EQ4_RANDOM_H: usize = 100;
const EQ4_ABS_TOL: f64 = 1e-10;
const EQ4_T: f64 = 1e-3;
// Criterion 4.
const GRAD_PAIRS: usize = 200;
const GRAD_REL_TOL: f64 = 1e-4;
// Criterion 5.
const IMG_COSINE_MIN: f64 = 0.9;
const IMG_COSINE_MIN_SEEDS: usize = 6;
const IMG_DEEP_MIN_SEEDS: usize = 5;
const IMG_DEEP_BUDGET: usize = 40_000;
const IMG_DEEP_LAYERS: usize = 6;
// Criterion 6.
const O5_FRACTION: f64 = 0.0025;
const O5_FRACTION_REL: f64 = 0.10;
const O5_SUBSAMPLE_N: usize = 900_000;
const IMG_FRACTION: f64 = 0.05;
const IMG_FRACTION_REL: f64 = 0.15;
const IMG_SUBSAMPLE_N: usize = 20_000;
const IMG_SUBSAMPLE_EPOCHS: usize = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn config(v: Value) -> ExperimentConfig {
    ExperimentConfig::from_value(v, &Overrides::default()).expect("valid acceptance config")
}

fn extract(cfg: &ExperimentConfig) -> (Network, TaskData, SymmetryReport) {
    let data = prepare_data(cfg).unwrap();
    let (model, _) = obtain_model(cfg, &data).unwrap();
    let e = polarize(cfg, model.discriminator(), &data, &cfg.extraction.seed_mode).unwrap();
    let report = analyze(cfg, &e).unwrap();
    (model.network().cloned().unwrap(), data, report)
}

fn sphere_oracle() -> Outcome {
    let clock = Instant::now();
    let points = gen_sphere(500, 5, 1, SphereSampling::Uniform);
    let e = polarization_vector(
        &SphereDiscriminator::new(5),
        &points,
        &SeedMode::SumOutputs,
        InputAction::Full,
    )
    .unwrap();
    let analysis = SymmetryAnalysis::new(&e).unwrap();
    let null_dim = analysis.null_dim(SPHERE_REL_TOL);
    let basis = analysis.generators(10).unwrap();
    let biases = symmetry_bias(&basis, &GroupProjector::SpecialOrthogonal).unwrap();
    let max_bias = biases.iter().copied().fold(0.0, f64::max);
    let variance = analysis.variance();
    let elapsed = clock.elapsed();
    outcome(
        null_dim == 10
            && max_bias <= SPHERE_BIAS_MAX
            && variance <= SPHERE_VARIANCE_MAX
            && elapsed < SPHERE_RUNTIME,
        format!(
            "null dim {null_dim}, max bias {max_bias:.2e}, variance {variance:.2e}, {elapsed:.2?}"
        ),
    )
}

fn o5_config(n: usize, seed: u64) -> ExperimentConfig {
    config(json!({ "task": "o5", "seed": seed, "data": { "n_samples": n } }))
}

struct O5Runs {
    outcome: Outcome,
    reference: (Network, TaskData, ExperimentConfig),
}

fn o5_regression() -> O5Runs {
    let clock = Instant::now();
    let mut decreasing = 0;
    let mut trends = Vec::new();
    let mut reference = None;
    let mut bias = f64::NAN;
    for seed in SEEDS {
        let mut curve = Vec::new();
        for n in O5_TREND_SIZES {
            let cfg = o5_config(n, seed);
            let (net, data, report) = extract(&cfg);
            curve.push(report.mean_variance);
            if seed == 1 && n == 1000 {
                bias = report.mean_bias;
                reference = Some((net, data, cfg));
            }
        }
        if curve.windows(2).all(|w| w[1] < w[0]) {
            decreasing += 1;
        }
        trends.push(curve);
    }
    let elapsed = clock.elapsed();
    let seed1 = trends[0]
        .iter()
        .map(|v| format!("{v:.3}"))
        .collect::<Vec<_>>()
        .join(" > ");
    O5Runs {
        outcome: outcome(
            bias <= O5_MEAN_BIAS_MAX && decreasing >= O5_TREND_MIN_SEEDS && elapsed <= O5_RUNTIME,
            format!(
                "mean bias {bias:.4} at N=1000, variance decreasing in {decreasing}/8 seeds (seed 1: {seed1}), {elapsed:.1?}"
            ),
        ),
        reference: reference.unwrap(),
    }
}

fn invariance_consistency(net: &Network, data: &TaskData, cfg: &ExperimentConfig) -> Outcome {
    let TaskData::Regression { train, .. } = data else {
        unreachable!()
    };
    let e = polarize(cfg, net, data, &cfg.extraction.seed_mode).unwrap();
    let analysis = SymmetryAnalysis::new(&e).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let random_h = |rng: &mut ChaCha8Rng| {
        let h = Matrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let n = h.frobenius_norm();
        h.scaled(1.0 / n)
    };
    let mut worst_abs = 0.0f64;
    for _ in 0..EQ4_RANDOM_H {
        let h = random_h(&mut rng);
        let a = analysis.invariance_estimate(&h).unwrap();
        let b = invariance_direct_product(&e, &h).unwrap();
        worst_abs = worst_abs.max((a - b).abs());
    }
    let dataset = Dataset::Vectors {
        data: &train.inputs,
        action: cfg.extraction.action,
    };
    let mut worst_rel = 0.0f64;
    for h in [
        random_h(&mut rng),
        skew_project(&random_h(&mut rng)).unwrap(),
        random_h(&mut rng),
    ] {
        let est = analysis.invariance_estimate(&h).unwrap();
        let direct = direct_invariance(net, dataset, &h, EQ4_T).unwrap() / (EQ4_T * EQ4_T);
        worst_rel = worst_rel.max((direct - est).abs() / est);
    }
    outcome(
        worst_abs <= EQ4_ABS_TOL && worst_rel <= 10.0 * EQ4_T,
        format!(
            "max |spectral - product| {worst_abs:.2e}, max relative gap to direct {worst_rel:.2e}"
        ),
    )
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for pair in 0..GRAD_PAIRS {
        let input = rng.random_range(1..12);
        let mut dims = vec![input];
        for _ in 0..rng.random_range(1..4) {
            dims.push(rng.random_range(2..16));
        }
        let output = rng.random_range(1..5);
        dims.push(output);
        let act = if pair % 2 == 0 {
            Activation::Swish
        } else {
            Activation::Tanh
        };
        let spec = NetSpec::new(dims, act)
            .unwrap()
            .with_output_normalization(output > 1 && pair % 3 == 0);
        let net = Network::init(spec, rng.random()).unwrap();
        let x: Vec<f64> = (0..input).map(|_| rng.random_range(-1.5..1.5)).collect();
        let seed: Vec<f64> = (0..output).map(|_| rng.random_range(-1.0..1.0)).collect();
        let analytic = net.input_gradient(&x, &seed).unwrap();
        let step = 1e-5;
        let numeric: Vec<f64> = (0..input)
            .map(|i| {
                let (mut p, mut m) = (x.clone(), x.clone());
                p[i] += step;
                m[i] -= step;
                let (fp, fm) = (net.forward(&p).unwrap(), net.forward(&m).unwrap());
                fp.iter()
                    .zip(&fm)
                    .zip(&seed)
                    .map(|((a, b), s)| s * (a - b))
                    .sum::<f64>()
                    / (2.0 * step)
            })
            .collect();
        let diff = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = numeric.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-6);
        worst = worst.max(diff / scale);
    }
    outcome(
        worst <= GRAD_REL_TOL,
        format!("max relative error {worst:.2e} over {GRAD_PAIRS} pairs"),
    )
}

fn image_config(seed: u64, extra: Value) -> ExperimentConfig {
    let mut v = json!({ "task": "rot_images", "seed": seed });
    if let (Value::Object(a), Value::Object(b)) = (&mut v, extra) {
        a.extend(b);
    }
    config(v)
}

fn image_extraction() -> Outcome {
    let rotation = unit_rotation_generator();
    let mut aligned = 0;
    let mut deeper = 0;
    let mut cosines = Vec::new();
    for seed in SEEDS {
        let (_, _, shallow) = extract(&image_config(seed, json!({})));
        let cos = cosine_similarity(&shallow.generators[0], &rotation).unwrap();
        cosines.push(cos);
        if cos >= IMG_COSINE_MIN {
            aligned += 1;
        }
        let deep_cfg = image_config(
            seed,
            json!({ "net": { "param_budget": IMG_DEEP_BUDGET, "hidden_layers": IMG_DEEP_LAYERS } }),
        );
        let (_, _, deep) = extract(&deep_cfg);
        if deep.min_bias <= shallow.min_bias {
            deeper += 1;
        }
    }
    let worst = cosines.iter().copied().fold(1.0, f64::min);
    outcome(
        aligned >= IMG_COSINE_MIN_SEEDS && deeper >= IMG_DEEP_MIN_SEEDS,
        format!("cosine >= {IMG_COSINE_MIN} in {aligned}/8 seeds (worst {worst:.3}), deep min bias <= shallow in {deeper}/8"),
    )
}

fn relative_gap(cfg: &ExperimentConfig, fraction: f64) -> (f64, f64, f64) {
    let o = cmd_sample_complexity(cfg).unwrap();
    let s = o.summary.iter().find(|s| s.fraction == fraction).unwrap();
    let gap = (s.mean_bias_mean - s.reference_mean_bias).abs() / s.reference_mean_bias;
    (gap, s.mean_bias_mean, s.reference_mean_bias)
}

fn sample_complexity(scratch: &Path) -> Outcome {
    let o5 = config(json!({
        "task": "o5",
        "data": { "n_samples": O5_SUBSAMPLE_N },
        "sample_complexity": { "fractions": [O5_FRACTION] },
        "output_dir": scratch.join("o5"),
    }));
    let (o5_gap, o5_sub, o5_ref) = relative_gap(&o5, O5_FRACTION);

    let img = |net: Value, dir: &str| {
        image_config(
            1,
            json!({
                "net": net,
                "data": { "n_samples": IMG_SUBSAMPLE_N },
                "train": { "epochs": IMG_SUBSAMPLE_EPOCHS },
                "sample_complexity": { "fractions": [IMG_FRACTION] },
                "extraction": { "pgm_images": 0 },
                "output_dir": scratch.join(dir),
            }),
        )
    };
    let (img_gap, img_sub, img_ref) = relative_gap(&img(json!({}), "img"), IMG_FRACTION);
    let (deep_gap, _, _) = relative_gap(
        &img(
            json!({ "param_budget": IMG_DEEP_BUDGET, "hidden_layers": IMG_DEEP_LAYERS }),
            "img-deep",
        ),
        IMG_FRACTION,
    );
    println!(
        "INFO  6 deep image net: 5% subsample bias gap {:.1}%",
        100.0 * deep_gap
    );
    outcome(
        o5_gap <= O5_FRACTION_REL && img_gap <= IMG_FRACTION_REL,
        format!(
            "o5 0.25%: {o5_sub:.4} vs {o5_ref:.4} ({:.1}%), images 5%: {img_sub:.4} vs {img_ref:.4} ({:.1}%)",
            100.0 * o5_gap,
            100.0 * img_gap
        ),
    )
}

fn architecture_arithmetic() -> Outcome {
    let a = hidden_dim_for_budget(40_000, 2, 784, 10).unwrap();
    let b = hidden_dim_for_budget(160_000, 6, 784, 10).unwrap();
    outcome(
        a == 47 && b == 116,
        format!("h = {a} at 40000/2, h = {b} at 160000/6"),
    )
}

fn csv_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn cli_determinism(scratch: &Path) -> Outcome {
    let runs = [
        (
            "extract",
            r#"task = "rot_images"
[data]
n_samples = 60
image_size = 10
classes = 3
[net]
param_budget = 800
hidden_layers = 1
[train]
epochs = 2
"#,
        ),
        (
            "sweep",
            r#"task = "o5"
[data]
n_samples = 80
[train]
epochs = 2
[sweep]
budgets = [300, 600]
depths = [1, 2]
seeds = [1, 2]
"#,
        ),
        (
            "layerwise",
            r#"task = "o5"
[data]
n_samples = 80
[train]
epochs = 2
[layerwise]
hidden = 8
depth = 4
sub_layers = 2
"#,
        ),
        (
            "sample-complexity",
            r#"task = "o5"
[data]
n_samples = 200
[train]
epochs = 2
[sample_complexity]
fractions = [0.1, 0.5, 1.0]
seeds = [1, 2, 3]
"#,
        ),
    ];
    let mut mismatches = Vec::new();
    let mut compared = 0;
    for (cmd, text) in runs {
        let cfg = scratch.join(format!("{cmd}.toml"));
        fs::write(&cfg, text).unwrap();
        let dirs: Vec<PathBuf> = ["a", "b"]
            .iter()
            .map(|r| scratch.join(format!("{cmd}-{r}")))
            .collect();
        for dir in &dirs {
            let status = Command::new(env!("CARGO_BIN_EXE_liegg"))
                .args([
                    cmd,
                    "--config",
                    cfg.to_str().unwrap(),
                    "--seed",
                    "7",
                    "--out",
                    dir.to_str().unwrap(),
                ])
                .output()
                .unwrap()
                .status;
            if !status.success() {
                mismatches.push(format!("{cmd} exited with {status}"));
            }
        }
        let files = csv_files(&dirs[0]);
        if files != csv_files(&dirs[1]) || files.is_empty() {
            mismatches.push(format!("{cmd}: file sets differ"));
        }
        for f in files {
            compared += 1;
            if fs::read(dirs[0].join(&f)).ok() != fs::read(dirs[1].join(&f)).ok() {
                mismatches.push(format!("{cmd}: {}", f.display()));
            }
        }
    }
    outcome(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("{compared} CSV files identical across 4 commands")
        } else {
            mismatches.join("; ")
        },
    )
}

fn report(id: usize, name: &str, o: &Outcome, elapsed: Duration) -> bool {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    println!("{tag}  {id} {name}: {} [{elapsed:.1?}]", o.detail);
    o.pass
}

fn main() {
    let scratch = tempfile::tempdir().unwrap();
    let mut all = true;
    let mut timed = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let clock = Instant::now();
        let o = f();
        all &= report(id, name, &o, clock.elapsed());
    };

    timed(1, "sphere oracle", &mut sphere_oracle);
    let mut reference = None;
    timed(2, "o5 regression", &mut || {
        let runs = o5_regression();
        reference = Some(runs.reference);
        runs.outcome
    });
    let (net, data, cfg) = reference.unwrap();
    timed(3, "invariance estimate", &mut || {
        invariance_consistency(&net, &data, &cfg)
    });
    timed(4, "input gradients", &mut gradient_check);
    timed(5, "image extraction", &mut image_extraction);
    timed(6, "sample complexity", &mut || {
        sample_complexity(scratch.path())
    });
    timed(7, "architecture arithmetic", &mut architecture_arithmetic);
    timed(8, "cli determinism", &mut || {
        cli_determinism(scratch.path())
    });

    if !all {
        std::process::exit(1);
    }
}
