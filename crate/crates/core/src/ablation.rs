//! Similarity-mode comparison on the MLP testbed: the same initial warper is
//! trained under each mode and its traversals are scored by how closely the
//! embedding steps follow the dipole field.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dipole::DipoleBank;
use crate::encoder::{make_mlp_encoder, SyntheticEncoder};
use crate::error::Result;
use crate::objective::{Pole, SimilarityMode};
use crate::testbed::{make_ground_truth_dipoles, DEFAULT_SEPARATION};
use crate::trainer::{fit, TrainConfig};
use crate::traversal::{embed_path, path_metrics, traverse, Sign, TraversalConfig, DEFAULT_EPSILON};
use crate::warp::{default_initial_gamma, init_warper, LatentWarper, DEFAULT_STALL_TOLERANCE, DEFAULT_SUPPORTS_PER_PATH, DEFAULT_SUPPORT_RADIUS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    pub num_paths: usize,
    pub supports_per_path: usize,
    pub train: TrainConfig,
    pub eval_latents: usize,
    pub eval_steps: usize,
    pub epsilon: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            hidden_dim: 64,
            embedding_dim: 32,
            num_paths: 4,
            supports_per_path: DEFAULT_SUPPORTS_PER_PATH,
            train: TrainConfig::default(),
            eval_latents: 16,
            eval_steps: 24,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// Per-mode field alignment scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeScores {
    pub dipole_field: f64,
    pub linear_difference: f64,
    pub single_prompt_plus: f64,
    /// Scored along the negative direction, which heads back toward `s+`.
    pub single_prompt_minus: f64,
}

impl ModeScores {
    /// `dipole_field` is at least both `linear_difference` and `single_prompt_plus`.
    pub fn dipole_field_best(&self) -> bool {
        self.dipole_field >= self.linear_difference && self.dipole_field >= self.single_prompt_plus
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    /// Along traversals of `eval_steps` steps.
    pub traversal: ModeScores,
    /// First step only.
    pub single_step: ModeScores,
    /// Decided on the traversal scores.
    pub dipole_field_best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config: AblationConfig,
    pub trials: Vec<TrialResult>,
    pub dipole_field_win_rate: f64,
    pub single_step_win_rate: f64,
}

/// Mean per-step field alignment over seeded latents and all paths.
pub fn field_alignment_score(
    warper: &LatentWarper,
    encoder: &SyntheticEncoder,
    bank: &DipoleBank,
    num_latents: usize,
    steps: usize,
    epsilon: f64,
    sign: Sign,
    seed: u64,
) -> Result<f64> {
    let cfg = TraversalConfig::new(epsilon, steps, sign)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut count = 0usize;
    for _ in 0..num_latents {
        let z0: Vec<f64> = (0..warper.latent_dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
        for (k, dipole) in bank.dipoles().iter().enumerate() {
            let path = traverse(warper, k, &z0, &cfg, DEFAULT_STALL_TOLERANCE)?;
            if path.completed_steps() == 0 {
                continue;
            }
            total += path_metrics(&embed_path(path, encoder)?, dipole)?.alignment;
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

pub fn run_trial(config: &AblationConfig, seed: u64) -> Result<TrialResult> {
    let enc = make_mlp_encoder(config.latent_dim, config.hidden_dim, config.embedding_dim, seed)?;
    let (bank, _) =
        make_ground_truth_dipoles(&enc, config.num_paths, seed.wrapping_add(1), DEFAULT_SEPARATION, config.train.beta)?;
    let init = init_warper(
        config.latent_dim,
        config.num_paths,
        config.supports_per_path,
        seed.wrapping_add(2),
        DEFAULT_SUPPORT_RADIUS,
        default_initial_gamma(DEFAULT_SUPPORT_RADIUS),
    )?;
    let score = |mode: SimilarityMode, sign: Sign| -> Result<(f64, f64)> {
        let train = TrainConfig { mode, seed: seed.wrapping_add(3), ..config.train.clone() };
        let (w, _, _) = fit(&train, init.clone(), &bank, &enc)?;
        let eval = |steps| {
            field_alignment_score(&w, &enc, &bank, config.eval_latents, steps, config.epsilon, sign, seed.wrapping_add(4))
        };
        Ok((eval(config.eval_steps)?, eval(1)?))
    };
    let df = score(SimilarityMode::DipoleField, Sign::Positive)?;
    let ld = score(SimilarityMode::LinearDifference, Sign::Positive)?;
    let spp = score(SimilarityMode::SinglePrompt(Pole::Plus), Sign::Positive)?;
    let spm = score(SimilarityMode::SinglePrompt(Pole::Minus), Sign::Negative)?;
    let traversal = ModeScores { dipole_field: df.0, linear_difference: ld.0, single_prompt_plus: spp.0, single_prompt_minus: spm.0 };
    let single_step = ModeScores { dipole_field: df.1, linear_difference: ld.1, single_prompt_plus: spp.1, single_prompt_minus: spm.1 };
    Ok(TrialResult { seed, dipole_field_best: traversal.dipole_field_best(), traversal, single_step })
}

pub fn summarize(config: AblationConfig, trials: Vec<TrialResult>) -> AblationReport {
    let wins = trials.iter().filter(|t| t.dipole_field_best).count();
    let single = trials.iter().filter(|t| t.single_step.dipole_field_best()).count();
    let rate = |w: usize| if trials.is_empty() { 0.0 } else { w as f64 / trials.len() as f64 };
    AblationReport {
        dipole_field_win_rate: rate(wins),
        single_step_win_rate: rate(single),
        config,
        trials,
    }
}
