//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use dipole_paths::ablation::{run_trial, summarize, AblationConfig};
use dipole_paths::dipole::SemanticDipole;
use dipole_paths::encoder::{make_linear_encoder, SyntheticEncoder};
use dipole_paths::grad::{check_against_finite_differences, GradInstance, GradOptions, InstanceSpec, DEFAULT_FD_STEP};
use dipole_paths::io::write_json;
use dipole_paths::objective::{Pole, SimilarityMode};
use dipole_paths::testbed::{make_ground_truth_dipoles, recovery_alignment, DEFAULT_SEPARATION};
use dipole_paths::trainer::{fit, TrainConfig, TrainReport};
use dipole_paths::traversal::{embed_path, read_path_jsonl, traverse, write_path_jsonl, Sign, TraversalConfig};
use dipole_paths::warp::{
    default_initial_gamma, init_warper, LatentWarper, DEFAULT_STALL_TOLERANCE, DEFAULT_SUPPORTS_PER_PATH,
    DEFAULT_SUPPORT_RADIUS,
};

const RECOVERY_LATENTS: usize = 100;
const RECOVERY_ITERATIONS: usize = 2000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dipole-paths")
}

fn out_dir() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

// ---------------------------------------------------------------------------
// Synthetic recovery

struct Recovery {
    warper: LatentWarper,
    encoder: SyntheticEncoder,
    /// `m[k][t]`: mean cosine of path `k`'s mapped direction with dipole `t`.
    matrix: Vec<Vec<f64>>,
    report: TrainReport,
    elapsed: Duration,
}

impl Recovery {
    fn diagonal(&self) -> Vec<f64> {
        (0..self.matrix.len()).map(|k| self.matrix[k][k]).collect()
    }

    fn max_off_diagonal(&self) -> f64 {
        let k = self.matrix.len();
        (0..k).flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.matrix[i][j])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn mean_alignment(&self) -> f64 {
        let d = self.diagonal();
        d.iter().sum::<f64>() / d.len() as f64
    }

    fn passes(&self, threshold: f64) -> bool {
        self.diagonal().iter().all(|&c| c > threshold) && self.max_off_diagonal() < 0.3
    }

    fn summary(&self) -> String {
        let d: Vec<String> = self.diagonal().iter().map(|c| format!("{c:.3}")).collect();
        format!(
            "per-path alignment [{}], max cross-alignment {:.3}, final loss {:.4}, {} iterations, stalled {}",
            d.join(", "),
            self.max_off_diagonal(),
            self.report.final_loss,
            self.report.iterations_run,
            self.report.stalled
        )
    }
}

/// d = 16, e = 32, K = 4, linear orthonormal encoder, defaults otherwise.
fn recovery_run(beta: f64, temperature: f64) -> Recovery {
    let start = Instant::now();
    let encoder = make_linear_encoder(16, 32, 0, true).unwrap();
    let (bank, _) = make_ground_truth_dipoles(&encoder, 4, 1, DEFAULT_SEPARATION, beta).unwrap();
    let init = init_warper(
        16,
        4,
        DEFAULT_SUPPORTS_PER_PATH,
        2,
        DEFAULT_SUPPORT_RADIUS,
        default_initial_gamma(DEFAULT_SUPPORT_RADIUS),
    )
    .unwrap();
    let config = TrainConfig { beta, temperature, iterations: RECOVERY_ITERATIONS, ..TrainConfig::default() };
    let (warper, _, report) = fit(&config, init, &bank, &encoder).unwrap();
    let matrix = recovery_alignment(&warper, &encoder, &bank, RECOVERY_LATENTS, 99).unwrap();
    Recovery { warper, encoder, matrix, report, elapsed: start.elapsed() }
}

// ---------------------------------------------------------------------------
// Criteria

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let modes = [
        SimilarityMode::DipoleField,
        SimilarityMode::LinearDifference,
        SimilarityMode::SinglePrompt(Pole::Plus),
        SimilarityMode::SinglePrompt(Pole::Minus),
    ];
    let opts = GradOptions::default();
    let mut worst_param = 0.0f64;
    let mut worst_spatial = 0.0f64;
    let instances = 240;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let spec = InstanceSpec {
            latent_dim: rng.random_range(1..=8),
            embedding_dim: rng.random_range(1..=8),
            supports_per_path: rng.random_range(1..=3),
            num_paths: rng.random_range(1..=3),
            batch_size: rng.random_range(1..=3),
            hidden_dim: rng.random_bool(0.5).then(|| rng.random_range(1..=8)),
            mode: modes[rng.random_range(0..modes.len())],
            temperature: rng.random_range(0.1..2.0),
            beta: rng.random_range(0.1..0.9),
        };
        let inst = GradInstance::random(&spec, seed).unwrap();
        let report = inst.finite_diff_check(&opts, DEFAULT_FD_STEP).unwrap();
        worst_param = worst_param.max(report.max_relative_error);

        // Spatial gradients of the latent warp and the dipole field.
        let trainable = vec![true; spec.latent_dim];
        for (k, z) in (0..spec.num_paths).zip(inst.batch.iter().cycle()) {
            let w = &inst.warper;
            let r = check_against_finite_differences(
                z,
                &trainable,
                &w.gradient(k, z).unwrap(),
                |x| w.value(k, x),
                DEFAULT_FD_STEP,
            )
            .unwrap();
            worst_spatial = worst_spatial.max(r.max_relative_error);
        }
        let s: Vec<f64> = (0..spec.embedding_dim).map(|_| rng.sample(StandardNormal)).collect();
        for d in inst.bank.dipoles() {
            let r = check_against_finite_differences(
                &s,
                &vec![true; s.len()],
                &d.field_gradient(&s).unwrap(),
                |x| d.field_value(x),
                DEFAULT_FD_STEP,
            )
            .unwrap();
            worst_spatial = worst_spatial.max(r.max_relative_error);
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst_param < 1e-5 && worst_spatial < 1e-6 && elapsed < Duration::from_secs(60),
        format!(
            "{instances} instances: max parameter rel. error {worst_param:.2e} (< 1e-5), max spatial rel. error {worst_spatial:.2e} (< 1e-6), {:.1} s (< 60 s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn analytic_field_values() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_pole = 0.0f64;
    let mut worst_gamma = 0.0f64;
    let mut monotone = true;
    for i in 0..100 {
        let e = rng.random_range(1..=16);
        let minus: Vec<f64> = (0..e).map(|_| rng.random_range(-2.0..2.0)).collect();
        let plus: Vec<f64> = (0..e).map(|_| rng.random_range(-2.0..2.0)).collect();
        let beta = rng.random_range(0.01..0.99);
        let d = SemanticDipole::new(format!("d{i}"), minus.clone(), plus.clone(), beta).unwrap();
        worst_pole = worst_pole
            .max((d.field_value(&plus).unwrap() - (1.0 - beta)).abs())
            .max((d.field_value(&minus).unwrap() - (beta - 1.0)).abs());
        // Independent evaluation of -ln(beta) / |s+ - s-|^2.
        let sq: f64 = plus.iter().rev().zip(minus.iter().rev()).map(|(p, m)| (p - m) * (p - m)).sum();
        let gamma = -beta.ln() / sq;
        worst_gamma = worst_gamma.max((d.gamma() - gamma).abs() / gamma);
        let mut ts: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..1.0)).filter(|&t| t > 0.0).collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        let f: Vec<f64> = ts
            .iter()
            .map(|t| {
                let s: Vec<f64> = minus.iter().zip(&plus).map(|(m, p)| m + t * (p - m)).collect();
                d.field_value(&s).unwrap()
            })
            .collect();
        monotone &= f.windows(2).all(|w| w[1] > w[0]);
    }
    outcome(
        worst_pole <= 1e-12 && worst_gamma <= 1e-12 && monotone,
        format!(
            "100 dipoles: max pole error {worst_pole:.1e}, max gamma rel. error {worst_gamma:.1e} (<= 1e-12), strictly increasing on segment: {monotone}"
        ),
    )
}

fn synthetic_recovery(run: &Recovery) -> Outcome {
    let fast = run.elapsed < Duration::from_secs(300);
    outcome(
        run.passes(0.9) && fast,
        format!("{} (> 0.9 / < 0.3), {:.1} s (< 300 s)", run.summary(), run.elapsed.as_secs_f64()),
    )
}

fn cli(args: &[&str]) -> i32 {
    Command::new(bin()).args(args).output().unwrap().status.code().unwrap_or(-1)
}

fn beta_robustness() -> Outcome {
    let runs: Vec<(f64, Recovery)> =
        [0.25, 0.75, 0.95].into_par_iter().map(|b| (b, recovery_run(b, 0.5))).collect();
    let mut ok = true;
    let mut detail = Vec::new();
    for (b, r) in &runs {
        ok &= r.passes(0.85);
        detail.push(format!("beta {b}: min alignment {:.3}", r.diagonal().iter().copied().fold(f64::INFINITY, f64::min)));
    }
    let dir = out_dir().join("beta_collapse");
    let d = dir.to_str().unwrap();
    assert_eq!(cli(&["synth", "--out-dir", d]), 0);
    let code = cli(&[
        "train",
        "--bank",
        &format!("{d}/bank.json"),
        "--encoder",
        &format!("{d}/encoder.json"),
        "--beta",
        "0.05",
        "--out-dir",
        &format!("{d}/run"),
    ]);
    let report = std::fs::read_to_string(dir.join("run/report.json")).unwrap_or_default();
    let loss_line = report.lines().find(|l| l.contains("final_loss")).unwrap_or("").trim().to_string();
    ok &= code == 3;
    detail.push(format!("beta 0.05 train exit code {code} (expected 3), {loss_line}"));
    outcome(ok, format!("{} (> 0.85)", detail.join("; ")))
}

fn temperature_robustness(reference: &Recovery) -> Outcome {
    let base = reference.mean_alignment();
    let runs: Vec<(f64, f64)> = [0.01, 0.1, 1.0, 5.0]
        .into_par_iter()
        .map(|t| (t, recovery_run(0.5, t).mean_alignment()))
        .collect();
    let ok = runs.iter().all(|(_, a)| (a - base).abs() <= 0.1);
    let detail: Vec<String> = runs.iter().map(|(t, a)| format!("tau {t}: {a:.3}")).collect();
    outcome(ok, format!("tau 0.5: {base:.3}; {} (within 0.1)", detail.join(", ")))
}

fn mode_ablation() -> Outcome {
    let config = AblationConfig::default();
    let trials: Vec<_> = (0..20u64).into_par_iter().map(|s| run_trial(&config, s).unwrap()).collect();
    let report = summarize(config, trials);
    let path = out_dir().join("mode_ablation.json");
    write_json(std::fs::File::create(&path).unwrap(), &report).unwrap();
    let mean = |f: &dyn Fn(&dipole_paths::ablation::TrialResult) -> f64| {
        report.trials.iter().map(f).sum::<f64>() / report.trials.len() as f64
    };
    outcome(
        report.dipole_field_win_rate >= 0.7,
        format!(
            "dipole-field best on {:.0}% of 20 trials (>= 70%); mean traversal alignment dipole-field {:.3}, linear-difference {:.3}, single-prompt {:.3}; single-step win rate {:.0}%; report {}",
            100.0 * report.dipole_field_win_rate,
            mean(&|t| t.traversal.dipole_field),
            mean(&|t| t.traversal.linear_difference),
            mean(&|t| t.traversal.single_prompt_plus),
            100.0 * report.single_step_win_rate,
            path.display()
        ),
    )
}

fn traversal_lengths(run: &Recovery) -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let starts: Vec<Vec<f64>> = (0..8).map(|_| (0..16).map(|_| rng.sample(StandardNormal)).collect()).collect();
    for (length, expected) in [(10.8, 24), (19.2, 42), (28.8, 64)] {
        let mut worst_step = 0.0f64;
        let mut finite = true;
        let mut complete = true;
        let mut schema = true;
        let mut steps = 0;
        for sign in [Sign::Positive, Sign::Negative] {
            let cfg = TraversalConfig::from_length(length, 0.45, sign).unwrap();
            steps = cfg.steps;
            for z0 in &starts {
                for k in 0..4 {
                    let path = traverse(&run.warper, k, z0, &cfg, DEFAULT_STALL_TOLERANCE).unwrap();
                    complete &= !path.stalled && path.completed_steps() == expected;
                    for w in path.latents.windows(2) {
                        let d = w[1].iter().zip(&w[0]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                        worst_step = worst_step.max((d - 0.45).abs());
                    }
                    let path = embed_path(path, &run.encoder).unwrap();
                    finite &= path.latents.iter().chain(path.embeddings.as_ref().unwrap()).flatten().all(|v| v.is_finite())
                        && path.warp_values.iter().all(|v| v.is_finite());
                    let mut buf = Vec::new();
                    write_path_jsonl(&path, &mut buf).unwrap();
                    schema &= read_path_jsonl(buf.as_slice()).map(|r| r.len() == path.latents.len()).unwrap_or(false);
                }
            }
        }
        ok &= steps == expected && worst_step <= 1e-9 && finite && complete && schema;
        detail.push(format!(
            "L {length}: {steps} steps (achieved {:.2}), max step error {worst_step:.1e}, finite {finite}, complete {complete}, JSONL valid {schema}",
            steps as f64 * 0.45
        ));
    }
    outcome(ok, detail.join("; "))
}

fn determinism() -> Outcome {
    let dir = out_dir().join("determinism");
    let d = dir.to_str().unwrap();
    assert_eq!(cli(&["synth", "--out-dir", d]), 0);
    let train = |name: &str| {
        cli(&[
            "train",
            "--bank",
            &format!("{d}/bank.json"),
            "--encoder",
            &format!("{d}/encoder.json"),
            "--seed",
            "11",
            "--out-dir",
            &format!("{d}/{name}"),
        ])
    };
    let (c1, c2) = (train("a"), train("b"));
    let read = |p: &str| std::fs::read(dir.join(p)).unwrap();
    let same_ckpt = read("a/checkpoint.json") == read("b/checkpoint.json");
    let same_report = read("a/report.json") == read("b/report.json");
    outcome(
        same_ckpt && same_report && c1 == c2,
        format!("exit codes {c1}/{c2}; checkpoints identical {same_ckpt}; reports identical {same_report}"),
    )
}

fn run_criterion(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let secs = start.elapsed().as_secs_f64();
    match result {
        Ok(o) => {
            println!("[{}] {name}: {} ({secs:.1} s)", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            o.pass
        }
        Err(_) => {
            println!("[FAIL] {name}: panicked ({secs:.1} s)");
            false
        }
    }
}

fn main() {
    let mut results = Vec::new();
    results.push(run_criterion("gradient correctness", gradient_correctness));
    results.push(run_criterion("analytic field values", analytic_field_values));
    let reference = recovery_run(0.5, 0.5);
    results.push(run_criterion("synthetic recovery", || synthetic_recovery(&reference)));
    results.push(run_criterion("beta robustness", beta_robustness));
    results.push(run_criterion("temperature robustness", || temperature_robustness(&reference)));
    results.push(run_criterion("mode ablation", mode_ablation));
    results.push(run_criterion("traversal lengths", || traversal_lengths(&reference)));
    results.push(run_criterion("determinism", determinism));
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
