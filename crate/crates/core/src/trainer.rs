//! Optimization of warper parameters against the contrastive objective.

use std::io::{Read, Write};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dipole::DipoleBank;
use crate::encoder::SyntheticEncoder;
use crate::error::{check_dim, Error, Result};
use crate::grad::{loss_and_param_gradients, GradOptions, StallPolicy};
use crate::io;
use crate::objective::{ContrastiveConfig, SimilarityMode, DEFAULT_TEMPERATURE};
use crate::optim::{Adam, DEFAULT_LEARNING_RATE};
use crate::warp::{LatentWarper, DEFAULT_STALL_TOLERANCE};

pub const DEFAULT_BATCH_SIZE: usize = 16;
pub const DEFAULT_ITERATIONS: usize = 2000;
pub const DEFAULT_EPSILON_RANGE: [f64; 2] = [0.1, 0.75];
pub const DEFAULT_STALL_WINDOW: usize = 200;
pub const DEFAULT_STALL_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub epsilon_range: [f64; 2],
    pub beta: f64,
    pub temperature: f64,
    pub mode: SimilarityMode,
    pub seed: u64,
    pub train_scales: bool,
    pub stall_window: usize,
    pub stall_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            iterations: DEFAULT_ITERATIONS,
            learning_rate: DEFAULT_LEARNING_RATE,
            epsilon_range: DEFAULT_EPSILON_RANGE,
            beta: crate::dipole::DEFAULT_BETA,
            temperature: DEFAULT_TEMPERATURE,
            mode: SimilarityMode::DipoleField,
            seed: 0,
            train_scales: true,
            stall_window: DEFAULT_STALL_WINDOW,
            stall_threshold: DEFAULT_STALL_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate {} must be > 0", self.learning_rate));
        }
        let [lo, hi] = self.epsilon_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("epsilon range [{lo}, {hi}] needs 0 < min <= max"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta {} must lie in (0, 1)", self.beta));
        }
        ContrastiveConfig::new(self.temperature, self.mode)?;
        if self.stall_window == 0 {
            return bad("stall_window must be >= 1".into());
        }
        if !(self.stall_threshold >= 0.0) || !self.stall_threshold.is_finite() {
            return bad(format!("stall_threshold {} must be >= 0", self.stall_threshold));
        }
        Ok(())
    }

    fn grad_options(&self) -> GradOptions {
        GradOptions {
            train_scales: self.train_scales,
            stall_tolerance: DEFAULT_STALL_TOLERANCE,
            stall_policy: StallPolicy::Skip,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainState {
    pub warper: LatentWarper,
    pub optimizer: Adam,
    pub iteration: u64,
    pub loss_history: Vec<f64>,
    pub guard_events: u64,
    pub stalled_pairs: u64,
}

impl TrainState {
    pub fn new(warper: LatentWarper, learning_rate: f64) -> Result<Self> {
        let optimizer = Adam::new(warper.num_params(), learning_rate)?;
        Ok(Self { warper, optimizer, iteration: 0, loss_history: Vec::new(), guard_events: 0, stalled_pairs: 0 })
    }

    fn validate(&self) -> Result<()> {
        check_dim(self.warper.num_params(), self.optimizer.num_params())?;
        check_dim(self.iteration as usize, self.loss_history.len())?;
        LatentWarper::from_paths(self.warper.latent_dim(), self.warper.paths().to_vec())?;
        Ok(())
    }
}

/// Batch latents and shift magnitudes for one iteration. Each iteration reads
/// its own stream of the seeded generator, so a resumed run draws the same
/// samples as an uninterrupted one.
pub fn sample_batch(
    config: &TrainConfig,
    iteration: u64,
    latent_dim: usize,
    num_paths: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(iteration);
    let [lo, hi] = config.epsilon_range;
    let batch = (0..config.batch_size)
        .map(|_| (0..latent_dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let eps = (0..config.batch_size)
        .map(|_| (0..num_paths).map(|_| if lo == hi { lo } else { rng.random_range(lo..=hi) }).collect())
        .collect();
    (batch, eps)
}

/// One optimizer update; returns the loss before the update. `bank` is used
/// as given (its overlap is not reset from `config.beta`).
pub fn train_step(
    state: &mut TrainState,
    bank: &DipoleBank,
    encoder: &SyntheticEncoder,
    config: &TrainConfig,
) -> Result<f64> {
    let contrastive = ContrastiveConfig::new(config.temperature, config.mode)?;
    let w = &state.warper;
    let (batch, eps) = sample_batch(config, state.iteration, w.latent_dim(), w.num_paths());
    let eval = loss_and_param_gradients(w, bank, encoder, &batch, &contrastive, &eps, &config.grad_options())?;
    if !eval.loss.is_finite() || !eval.gradient.is_finite() {
        return Err(Error::NonFinite("training loss or gradient"));
    }
    let mut params = w.to_flat();
    let frozen = (!config.train_scales).then(|| w.log_scale_mask());
    state.optimizer.update(&mut params, &eval.gradient.to_flat(), frozen.as_deref())?;
    state.warper.set_flat(&params)?;
    state.iteration += 1;
    state.loss_history.push(eval.loss);
    state.guard_events += eval.guard_events as u64;
    state.stalled_pairs += eval.stalled_pairs as u64;
    Ok(eval.loss)
}

/// Windowed stall test on a loss history: with `w = window`, compares the
/// mean of the last `w` losses with the mean of the first `w` and reports a
/// stall when the relative improvement is below `threshold`. Needs at least
/// `2 w` entries; returns `None` before that.
pub fn stall_detected(history: &[f64], window: usize, threshold: f64) -> Option<bool> {
    if window == 0 || history.len() < 2 * window {
        return None;
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let first = mean(&history[..window]);
    let last = mean(&history[history.len() - window..]);
    if first <= 0.0 {
        return Some(false);
    }
    Some((first - last) / first < threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainReport {
    pub final_loss: f64,
    pub iterations_run: usize,
    pub stalled: bool,
    pub guard_events: u64,
    pub wall_time_seconds: Option<f64>,
}

/// Runs `config.iterations` steps from `state`, stopping early when the stall
/// test fires. The overlap `config.beta` is applied to the bank first.
pub fn fit_from(
    config: &TrainConfig,
    mut state: TrainState,
    bank: &DipoleBank,
    encoder: &SyntheticEncoder,
) -> Result<(TrainState, TrainReport)> {
    config.validate()?;
    state.validate()?;
    let bank = bank.with_beta(config.beta)?;
    if bank.len() != state.warper.num_paths() {
        return Err(Error::InvalidParameter(format!(
            "bank has {} dipoles but warper has {} paths",
            bank.len(),
            state.warper.num_paths()
        )));
    }
    state.optimizer.learning_rate = config.learning_rate;
    let start = Instant::now();
    let mut stalled = false;
    let mut run = 0;
    while (state.iteration as usize) < config.iterations {
        train_step(&mut state, &bank, encoder, config)?;
        run += 1;
        if stall_detected(&state.loss_history, config.stall_window, config.stall_threshold) == Some(true) {
            stalled = true;
            break;
        }
    }
    let report = TrainReport {
        final_loss: state.loss_history.last().copied().unwrap_or(f64::NAN),
        iterations_run: run,
        stalled,
        guard_events: state.guard_events,
        wall_time_seconds: Some(start.elapsed().as_secs_f64()),
    };
    Ok((state, report))
}

pub fn fit(
    config: &TrainConfig,
    warper: LatentWarper,
    bank: &DipoleBank,
    encoder: &SyntheticEncoder,
) -> Result<(LatentWarper, Vec<f64>, TrainReport)> {
    let state = TrainState::new(warper, config.learning_rate)?;
    let (state, report) = fit_from(config, state, bank, encoder)?;
    Ok((state.warper, state.loss_history, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub state: TrainState,
}

pub fn save_checkpoint<W: Write>(checkpoint: &Checkpoint, sink: W) -> Result<()> {
    io::write_json(sink, checkpoint)
}

pub fn load_checkpoint<R: Read>(source: R) -> Result<Checkpoint> {
    let ckpt: Checkpoint = io::read_json(source)?;
    ckpt.config.validate().map_err(|e| Error::Validation(format!("checkpoint config: {e}")))?;
    ckpt.state.validate().map_err(|e| Error::Validation(format!("checkpoint state: {e}")))?;
    Ok(ckpt)
}
