//! Command-line surface.
//!
//! Exit codes: 0 success, 1 configuration error, 2 I/O error (missing,
//! unreadable or invalid input files; unwritable outputs), 3 stall, 4 gradient
//! check failure.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use dipole_paths::ablation::{run_trial, summarize, AblationConfig};
use dipole_paths::dipole::{load_dipole_bank, save_dipole_bank, DipoleBank, DEFAULT_BETA};
use dipole_paths::encoder::{load_encoder, make_linear_encoder, make_mlp_encoder, save_encoder, SyntheticEncoder};
use dipole_paths::fieldmap::{field_grid, render_svg, write_field_csv, Slice};
use dipole_paths::grad::{GradInstance, GradOptions, InstanceSpec, DEFAULT_FD_STEP};
use dipole_paths::io::{read_json, write_json, write_json_line};
use dipole_paths::objective::{SimilarityMode, DEFAULT_TEMPERATURE};
use dipole_paths::testbed::{make_ground_truth_dipoles, save_ground_truth, DEFAULT_SEPARATION};
use dipole_paths::trainer::{fit_from, load_checkpoint, save_checkpoint, Checkpoint, TrainConfig, TrainState};
use dipole_paths::traversal::{
    embed_path, path_metrics, traverse, PathMetrics, Sign, TraversalConfig, DEFAULT_EPSILON,
};
use dipole_paths::warp::{
    default_initial_gamma, init_warper, DEFAULT_STALL_TOLERANCE, DEFAULT_SUPPORTS_PER_PATH,
    DEFAULT_SUPPORT_RADIUS,
};
use dipole_paths::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_STALL: i32 = 3;
pub const EXIT_GRADIENT: i32 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure { code: EXIT_CONFIG, message: e.to_string() }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure { code: EXIT_IO, message: format!("{}: {e}", path.display()) }
}

/// Errors raised while computing; collapse of every shift counts as a stall.
fn run_err(e: Error) -> Failure {
    match e {
        Error::AllStalled | Error::Stalled { .. } => Failure { code: EXIT_STALL, message: e.to_string() },
        Error::Io(_) => Failure { code: EXIT_IO, message: e.to_string() },
        other => config_err(other),
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

#[derive(Debug, Parser)]
#[command(name = "dipole-paths", version, about = "Train and inspect RBF latent warpers aligned with semantic-dipole fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic encoder, a ground-truth dipole bank and its latent directions.
    Synth(SynthArgs),
    /// Train a latent warper against a dipole bank.
    Train(TrainArgs),
    /// Traverse trained paths and emit per-step JSONL and metrics.
    Traverse(TraverseArgs),
    /// Sample one dipole field on a 2-D slice as CSV and an SVG quiver.
    FieldMap(FieldMapArgs),
    /// Compare analytic gradients with finite differences on a random instance.
    CheckGrad(CheckGradArgs),
    /// Compare similarity modes on seeded MLP testbeds.
    Ablation(AblationArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EncoderKind {
    Linear,
    Mlp,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 16)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 32)]
    pub embedding_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden_dim: usize,
    /// Number of dipoles.
    #[arg(long = "K", default_value_t = 4)]
    pub num_dipoles: usize,
    #[arg(long, value_enum, default_value_t = EncoderKind::Linear)]
    pub encoder: EncoderKind,
    /// Linear encoder with Gaussian entries instead of orthonormal rows/columns.
    #[arg(long)]
    pub non_orthonormal: bool,
    #[arg(long, default_value_t = DEFAULT_SEPARATION)]
    pub separation: f64,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

/// Training settings readable from a JSON config file; flags take precedence.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFileConfig {
    pub batch_size: Option<usize>,
    pub iterations: Option<usize>,
    pub learning_rate: Option<f64>,
    pub epsilon_range: Option<[f64; 2]>,
    pub beta: Option<f64>,
    pub temperature: Option<f64>,
    pub mode: Option<SimilarityMode>,
    pub seed: Option<u64>,
    pub train_scales: Option<bool>,
    pub stall_window: Option<usize>,
    pub stall_threshold: Option<f64>,
    pub supports_per_path: Option<usize>,
    pub support_radius: Option<f64>,
    pub initial_gamma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long)]
    pub encoder: PathBuf,
    /// JSON file with training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from a checkpoint; its settings replace the defaults.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epsilon_min: Option<f64>,
    #[arg(long)]
    pub epsilon_max: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub mode: Option<SimilarityMode>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep all log-scales at their initial values.
    #[arg(long)]
    pub freeze_scales: bool,
    #[arg(long)]
    pub stall_window: Option<usize>,
    #[arg(long)]
    pub stall_threshold: Option<f64>,
    #[arg(long)]
    pub supports_per_path: Option<usize>,
    #[arg(long)]
    pub support_radius: Option<f64>,
    #[arg(long)]
    pub initial_gamma: Option<f64>,
    /// Record wall-clock time in the report (otherwise null, keeping reports reproducible).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct TraverseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Encoder for embedding the paths; required for metrics.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    /// Dipole bank for metrics.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Traversal length; steps are the whole multiples of epsilon that fit.
    #[arg(long, conflicts_with = "steps")]
    pub length: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// JSON array of starting latents; otherwise `--num-latents` are sampled.
    #[arg(long)]
    pub latents: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub num_latents: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also walk each path in the negative direction.
    #[arg(long)]
    pub both_signs: bool,
    #[arg(long, default_value_t = DEFAULT_STALL_TOLERANCE)]
    pub stall_tolerance: f64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct FieldMapArgs {
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub dipole: usize,
    /// Grid points per side.
    #[arg(long, default_value_t = 41)]
    pub n: usize,
    /// Half-width of the square grid; defaults to the pole distance.
    #[arg(long)]
    pub extent: Option<f64>,
    /// Slice origin and basis as comma-separated vectors; default is the plane
    /// through both poles.
    #[arg(long, requires_all = ["u", "v"])]
    pub origin: Option<String>,
    #[arg(long, requires_all = ["origin", "v"])]
    pub u: Option<String>,
    #[arg(long, requires_all = ["origin", "u"])]
    pub v: Option<String>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckGradArgs {
    #[arg(long, default_value_t = 3)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 4)]
    pub embedding_dim: usize,
    /// Use an MLP encoder with this hidden width.
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub supports_per_path: usize,
    #[arg(long = "K", default_value_t = 2)]
    pub num_paths: usize,
    #[arg(long, default_value_t = 2)]
    pub batch_size: usize,
    #[arg(long, default_value_t = SimilarityMode::DipoleField)]
    pub mode: SimilarityMode,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    pub temperature: f64,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_FD_STEP)]
    pub fd_step: f64,
    /// Maximum accepted relative error.
    #[arg(long, default_value_t = 1e-5)]
    pub threshold: f64,
    #[arg(long)]
    pub freeze_scales: bool,
    /// Perturbs the analytic gradient before comparison (harness self-test).
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    #[arg(long, default_value_t = 20)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub first_seed: u64,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, default_value = "ablation.json")]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Traverse(a) => cmd_traverse(a),
        Command::FieldMap(a) => cmd_field_map(a),
        Command::CheckGrad(a) => cmd_check_grad(a),
        Command::Ablation(a) => cmd_ablation(a),
    }
}

fn ensure_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| io_err(path, e))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn write_with<F>(path: &Path, f: F) -> CliResult
where
    F: FnOnce(&mut BufWriter<File>) -> dipole_paths::Result<()>,
{
    let mut w = create(path)?;
    f(&mut w).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

fn load_bank_file(path: &Path) -> CliResult<DipoleBank> {
    load_dipole_bank(open(path)?).map_err(|e| io_err(path, e))
}

fn load_encoder_file(path: &Path) -> CliResult<SyntheticEncoder> {
    load_encoder(open(path)?).map_err(|e| io_err(path, e))
}

fn load_checkpoint_file(path: &Path) -> CliResult<Checkpoint> {
    load_checkpoint(open(path)?).map_err(|e| io_err(path, e))
}

fn cmd_synth(a: SynthArgs) -> CliResult<i32> {
    let encoder = match a.encoder {
        EncoderKind::Linear => make_linear_encoder(a.latent_dim, a.embedding_dim, a.seed, !a.non_orthonormal),
        EncoderKind::Mlp => make_mlp_encoder(a.latent_dim, a.hidden_dim, a.embedding_dim, a.seed),
    }
    .map_err(config_err)?;
    let (bank, truth) =
        make_ground_truth_dipoles(&encoder, a.num_dipoles, a.seed.wrapping_add(1), a.separation, a.beta)
            .map_err(config_err)?;
    ensure_dir(&a.out_dir)?;
    write_with(&a.out_dir.join("encoder.json"), |w| save_encoder(&encoder, w))?;
    write_with(&a.out_dir.join("bank.json"), |w| save_dipole_bank(&bank, w))?;
    write_with(&a.out_dir.join("ground_truth.json"), |w| save_ground_truth(&truth, w))?;
    Ok(EXIT_OK)
}

/// Layers flags over the file config over `base`.
fn resolve_train_config(a: &TrainArgs, file: &TrainFileConfig, base: TrainConfig) -> TrainConfig {
    let mut c = base;
    macro_rules! layer {
        ($field:ident) => {
            if let Some(v) = file.$field.clone() {
                c.$field = v;
            }
            if let Some(v) = a.$field.clone() {
                c.$field = v;
            }
        };
    }
    layer!(batch_size);
    layer!(iterations);
    layer!(learning_rate);
    layer!(beta);
    layer!(temperature);
    layer!(mode);
    layer!(seed);
    layer!(stall_window);
    layer!(stall_threshold);
    if let Some(r) = file.epsilon_range {
        c.epsilon_range = r;
    }
    if let Some(lo) = a.epsilon_min {
        c.epsilon_range[0] = lo;
    }
    if let Some(hi) = a.epsilon_max {
        c.epsilon_range[1] = hi;
    }
    if let Some(t) = file.train_scales {
        c.train_scales = t;
    }
    if a.freeze_scales {
        c.train_scales = false;
    }
    c
}

fn cmd_train(a: TrainArgs) -> CliResult<i32> {
    let file = match &a.config {
        Some(p) => read_json::<_, TrainFileConfig>(open(p)?).map_err(|e| config_err(format!("{}: {e}", p.display())))?,
        None => TrainFileConfig::default(),
    };
    let bank = load_bank_file(&a.bank)?;
    let encoder = load_encoder_file(&a.encoder)?;
    let resumed = a.resume.as_deref().map(load_checkpoint_file).transpose()?;
    let base = resumed.as_ref().map(|c| c.config.clone()).unwrap_or_default();
    let config = resolve_train_config(&a, &file, base);
    config.validate().map_err(config_err)?;
    if bank.embedding_dim() != encoder.embedding_dim() {
        return Err(config_err(format!(
            "bank embedding_dim {} != encoder embedding_dim {}",
            bank.embedding_dim(),
            encoder.embedding_dim()
        )));
    }
    let state = match resumed {
        Some(c) => c.state,
        None => {
            let n = a.supports_per_path.or(file.supports_per_path).unwrap_or(DEFAULT_SUPPORTS_PER_PATH);
            let radius = a.support_radius.or(file.support_radius).unwrap_or(DEFAULT_SUPPORT_RADIUS);
            let gamma = a.initial_gamma.or(file.initial_gamma).unwrap_or_else(|| default_initial_gamma(radius));
            let warper = init_warper(encoder.latent_dim(), bank.len(), n, config.seed, radius, gamma)
                .map_err(config_err)?;
            TrainState::new(warper, config.learning_rate).map_err(config_err)?
        }
    };
    if state.warper.num_paths() != bank.len() || state.warper.latent_dim() != encoder.latent_dim() {
        return Err(config_err("checkpoint shape does not match the bank and encoder"));
    }
    let (state, mut report) = fit_from(&config, state, &bank, &encoder).map_err(run_err)?;
    if !a.timing {
        report.wall_time_seconds = None;
    }
    ensure_dir(&a.out_dir)?;
    let stalled = report.stalled;
    write_with(&a.out_dir.join("checkpoint.json"), |w| save_checkpoint(&Checkpoint { config, state }, w))?;
    write_with(&a.out_dir.join("report.json"), |w| write_json(w, &report))?;
    if stalled {
        eprintln!("training stalled after {} iterations", report.iterations_run);
        return Ok(EXIT_STALL);
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct TraversalSummary {
    latent_index: usize,
    path_id: String,
    file: String,
    steps: usize,
    length: f64,
    stalled: bool,
    metrics: Option<PathMetrics>,
}

fn cmd_traverse(a: TraverseArgs) -> CliResult<i32> {
    let ckpt = load_checkpoint_file(&a.checkpoint)?;
    let warper = ckpt.state.warper;
    let encoder = a.encoder.as_deref().map(load_encoder_file).transpose()?;
    let bank = a.bank.as_deref().map(load_bank_file).transpose()?;
    if let Some(e) = &encoder {
        if e.latent_dim() != warper.latent_dim() {
            return Err(config_err("encoder latent_dim does not match the checkpoint"));
        }
    }
    if let Some(b) = &bank {
        if b.len() != warper.num_paths() {
            return Err(config_err("bank size does not match the checkpoint"));
        }
        if encoder.is_none() {
            return Err(config_err("--bank needs --encoder to embed the paths"));
        }
    }
    let cfg = match (a.length, a.steps) {
        (Some(l), _) => TraversalConfig::from_length(l, a.epsilon, Sign::Positive),
        (None, Some(s)) => TraversalConfig::new(a.epsilon, s, Sign::Positive),
        (None, None) => TraversalConfig::from_length(10.8, a.epsilon, Sign::Positive),
    }
    .map_err(config_err)?;
    if !(a.stall_tolerance > 0.0) {
        return Err(config_err("stall tolerance must be > 0"));
    }
    let latents: Vec<Vec<f64>> = match &a.latents {
        Some(p) => read_json(open(p)?).map_err(|e| io_err(p, e))?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            (0..a.num_latents)
                .map(|_| (0..warper.latent_dim()).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect()
        }
    };
    if latents.iter().any(|z| z.len() != warper.latent_dim()) {
        return Err(config_err("starting latent has the wrong dimension"));
    }
    let signs: &[Sign] = if a.both_signs { &[Sign::Positive, Sign::Negative] } else { &[Sign::Positive] };
    ensure_dir(&a.out_dir)?;
    let mut summaries = Vec::new();
    for (m, z0) in latents.iter().enumerate() {
        for k in 0..warper.num_paths() {
            for &sign in signs {
                let cfg = TraversalConfig { sign, ..cfg };
                let mut path = traverse(&warper, k, z0, &cfg, a.stall_tolerance).map_err(run_err)?;
                if let Some(e) = &encoder {
                    path = embed_path(path, e).map_err(run_err)?;
                }
                let metrics = match &bank {
                    Some(b) if path.completed_steps() >= 1 => {
                        Some(path_metrics(&path, b.dipole(k)).map_err(run_err)?)
                    }
                    _ => None,
                };
                let tag = if sign == Sign::Positive { "pos" } else { "neg" };
                let file = format!("path_z{m}_k{k}_{tag}.jsonl");
                write_with(&a.out_dir.join(&file), |w| dipole_paths::traversal::write_path_jsonl(&path, w))?;
                summaries.push(TraversalSummary {
                    latent_index: m,
                    path_id: path.path_id.clone(),
                    file,
                    steps: path.completed_steps(),
                    length: path.length(),
                    stalled: path.stalled,
                    metrics,
                });
            }
        }
    }
    write_with(&a.out_dir.join("metrics.json"), |w| write_json(w, &summaries))?;
    Ok(EXIT_OK)
}

fn parse_vector(flag: &str, s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| config_err(format!("--{flag}: bad number `{x}`"))))
        .collect()
}

fn cmd_field_map(a: FieldMapArgs) -> CliResult<i32> {
    let bank = load_bank_file(&a.bank)?;
    if a.dipole >= bank.len() {
        return Err(config_err(format!("dipole index {} out of range (K = {})", a.dipole, bank.len())));
    }
    let dipole = bank.dipole(a.dipole);
    let slice = match (&a.origin, &a.u, &a.v) {
        (Some(o), Some(u), Some(v)) => Slice::new(parse_vector("origin", o)?, parse_vector("u", u)?, parse_vector("v", v)?),
        _ => Slice::through_poles(dipole),
    }
    .map_err(config_err)?;
    let extent = a.extent.unwrap_or_else(|| dipole_paths::linalg::norm(&dipole.axis()));
    let grid = field_grid(dipole, &slice, a.n, extent).map_err(config_err)?;
    ensure_dir(&a.out_dir)?;
    write_with(&a.out_dir.join("field.csv"), |w| write_field_csv(&grid, w))?;
    let svg = render_svg(&grid);
    let path = a.out_dir.join("field.svg");
    fs::write(&path, svg).map_err(|e| io_err(&path, e))?;
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct CheckGradReport {
    instance: InstanceSpec,
    seed: u64,
    fd_step: f64,
    threshold: f64,
    max_relative_error: f64,
    worst_parameter_index: Option<usize>,
    checked_parameters: usize,
    passed: bool,
}

fn cmd_check_grad(a: CheckGradArgs) -> CliResult<i32> {
    if !(a.fd_step > 0.0) || !a.fd_step.is_finite() {
        return Err(config_err(format!("--fd-step {} must be > 0", a.fd_step)));
    }
    if !(a.threshold > 0.0) {
        return Err(config_err("--threshold must be > 0"));
    }
    let spec = InstanceSpec {
        latent_dim: a.latent_dim,
        embedding_dim: a.embedding_dim,
        supports_per_path: a.supports_per_path,
        num_paths: a.num_paths,
        batch_size: a.batch_size,
        hidden_dim: a.hidden_dim,
        mode: a.mode,
        temperature: a.temperature,
        beta: a.beta,
    };
    let inst = GradInstance::random(&spec, a.seed).map_err(config_err)?;
    let opts = GradOptions { train_scales: !a.freeze_scales, ..GradOptions::default() };
    let eval = inst.evaluate(&opts).map_err(run_err)?;
    let mut analytic = eval.gradient.to_flat();
    if a.corrupt_gradient {
        for g in analytic.iter_mut() {
            *g = 1.5 * *g + 1e-3;
        }
    }
    let fd = dipole_paths::grad::finite_diff_check_against(
        &inst.warper,
        &inst.bank,
        &inst.encoder,
        &inst.batch,
        &inst.config,
        &inst.shift_magnitudes,
        &opts,
        a.fd_step,
        &analytic,
    )
    .map_err(run_err)?;
    let passed = fd.max_relative_error < a.threshold;
    let report = CheckGradReport {
        instance: spec,
        seed: a.seed,
        fd_step: a.fd_step,
        threshold: a.threshold,
        max_relative_error: fd.max_relative_error,
        worst_parameter_index: fd.worst_parameter_index,
        checked_parameters: fd.checked_parameters,
        passed,
    };
    write_json_line(std::io::stdout().lock(), &report).map_err(|e| Failure { code: EXIT_IO, message: e.to_string() })?;
    Ok(if passed { EXIT_OK } else { EXIT_GRADIENT })
}

fn cmd_ablation(a: AblationArgs) -> CliResult<i32> {
    let mut config = AblationConfig::default();
    if let Some(it) = a.iterations {
        config.train.iterations = it;
    }
    config.train.validate().map_err(config_err)?;
    let trials = (a.first_seed..a.first_seed + a.trials)
        .map(|s| run_trial(&config, s))
        .collect::<dipole_paths::Result<Vec<_>>>()
        .map_err(run_err)?;
    let report = summarize(config, trials);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write_with(&a.out, |w| write_json(w, &report))?;
    Ok(EXIT_OK)
}
