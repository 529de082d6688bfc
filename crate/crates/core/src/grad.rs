//! Exact parameter gradients of the contrastive loss through the whole chain
//!
//! ```text
//! params -> grad_z f_k(z) -> eps * g/|g| -> encoder -> similarities -> loss
//! ```
//!
//! using hand-derived adjoints, plus a central finite-difference harness.

use serde::Serialize;

use crate::dipole::DipoleBank;
use crate::encoder::SyntheticEncoder;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::{dot, guarded_cosine_grad_b, norm};
use crate::objective::{
    compared_vector, contrastive_loss_and_adjoint, item_similarities, supervision_direction,
    ContrastiveConfig, SimilarityMatrixBatch, SimilarityMode,
};
use crate::warp::{LatentWarper, DEFAULT_STALL_TOLERANCE};

/// Gradient with the same layout as the warper's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub supports: Vec<Vec<Vec<f64>>>,
    pub log_scales: Vec<Vec<f64>>,
}

impl ParamGradient {
    pub fn zeros_like(w: &LatentWarper) -> Self {
        let n = w.supports_per_path();
        Self {
            supports: vec![vec![vec![0.0; w.latent_dim()]; n]; w.num_paths()],
            log_scales: vec![vec![0.0; n]; w.num_paths()],
        }
    }

    /// Canonical flattening, matching [`LatentWarper::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (qs, ls) in self.supports.iter().zip(&self.log_scales) {
            for q in qs {
                out.extend_from_slice(q);
            }
            out.extend_from_slice(ls);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StallPolicy {
    /// Any stalled shift is an error.
    Error,
    /// Stalled `(item, path)` pairs drop out of the loss and are counted.
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradOptions {
    pub train_scales: bool,
    pub stall_tolerance: f64,
    pub stall_policy: StallPolicy,
}

impl Default for GradOptions {
    fn default() -> Self {
        Self {
            train_scales: true,
            stall_tolerance: DEFAULT_STALL_TOLERANCE,
            stall_policy: StallPolicy::Error,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub gradient: ParamGradient,
    pub guard_events: usize,
    pub stalled_pairs: usize,
}

struct ItemForward {
    s: Vec<f64>,
    /// One entry per path; `None` if the shift stalled.
    shifts: Vec<Option<Shift>>,
}

struct Shift {
    g: Vec<f64>,
    g_norm: f64,
    z_shift: Vec<f64>,
    s_shift: Vec<f64>,
}

fn check_inputs(
    warper: &LatentWarper,
    bank: &DipoleBank,
    encoder: &SyntheticEncoder,
    batch: &[Vec<f64>],
    shift_magnitudes: &[Vec<f64>],
) -> Result<()> {
    if bank.len() != warper.num_paths() {
        return Err(Error::InvalidParameter(format!(
            "bank has {} dipoles but warper has {} paths",
            bank.len(),
            warper.num_paths()
        )));
    }
    check_dim(warper.latent_dim(), encoder.latent_dim())?;
    check_dim(bank.embedding_dim(), encoder.embedding_dim())?;
    if batch.is_empty() {
        return Err(Error::InvalidSize("batch must be non-empty".into()));
    }
    check_dim(batch.len(), shift_magnitudes.len())?;
    for (z, eps) in batch.iter().zip(shift_magnitudes) {
        check_dim(warper.latent_dim(), z.len())?;
        check_finite(z, "batch latent")?;
        check_dim(warper.num_paths(), eps.len())?;
        check_finite(eps, "shift magnitude")?;
    }
    Ok(())
}

fn forward(
    warper: &LatentWarper,
    bank: &DipoleBank,
    encoder: &SyntheticEncoder,
    config: &ContrastiveConfig,
    batch: &[Vec<f64>],
    shift_magnitudes: &[Vec<f64>],
    opts: &GradOptions,
) -> Result<(Vec<ItemForward>, SimilarityMatrixBatch, usize)> {
    let mut items = Vec::with_capacity(batch.len());
    let mut matrices = Vec::with_capacity(batch.len());
    let mut guard_events = 0;
    let mut stalled = 0;
    for (z, eps) in batch.iter().zip(shift_magnitudes) {
        let s = encoder.encode(z)?;
        let mut shifts = Vec::with_capacity(warper.num_paths());
        for (k, &e) in eps.iter().enumerate() {
            let g = warper.gradient(k, z)?;
            let g_norm = norm(&g);
            if !(g_norm >= opts.stall_tolerance) {
                match opts.stall_policy {
                    StallPolicy::Error => {
                        return Err(Error::Stalled { norm: g_norm, tolerance: opts.stall_tolerance })
                    }
                    StallPolicy::Skip => {
                        stalled += 1;
                        shifts.push(None);
                        continue;
                    }
                }
            }
            let z_shift: Vec<f64> = z.iter().zip(&g).map(|(zj, gj)| zj + e * gj / g_norm).collect();
            let s_shift = encoder.encode(&z_shift)?;
            shifts.push(Some(Shift { g, g_norm, z_shift, s_shift }));
        }
        let slots: Vec<Option<Vec<f64>>> =
            shifts.iter().map(|sh| sh.as_ref().map(|sh| sh.s_shift.clone())).collect();
        let (m, guard) = item_similarities(config.mode, bank, &s, &slots)?;
        guard_events += guard;
        matrices.push(m);
        items.push(ItemForward { s, shifts });
    }
    if stalled == batch.len() * warper.num_paths() {
        return Err(Error::AllStalled);
    }
    Ok((items, SimilarityMatrixBatch { items: matrices, guard_events }, stalled))
}

/// Loss and exact parameter gradients, with the upstream adjoint `scale`
/// (the gradient of `scale * loss` is returned; the loss itself is unscaled).
pub fn loss_and_param_gradients_scaled(
    warper: &LatentWarper,
    bank: &DipoleBank,
    encoder: &SyntheticEncoder,
    batch: &[Vec<f64>],
    config: &ContrastiveConfig,
    shift_magnitudes: &[Vec<f64>],
    opts: &GradOptions,
    scale: f64,
) -> Result<Evaluation> {
    check_inputs(warper, bank, encoder, batch, shift_magnitudes)?;
    let (items, sims, stalled_pairs) =
        forward(warper, bank, encoder, config, batch, shift_magnitudes, opts)?;
    let (loss, adjoints) = contrastive_loss_and_adjoint(&sims, config.temperature)?;

    let k_paths = warper.num_paths();
    let mut gradient = ParamGradient::zeros_like(warper);
    for (((item, z), eps), adj) in items.iter().zip(batch).zip(shift_magnitudes).zip(&adjoints) {
        let sup: Vec<Vec<f64>> = (0..k_paths)
            .map(|row| supervision_direction(config.mode, bank, row, &item.s))
            .collect::<Result<_>>()?;
        for (t, shift) in item.shifts.iter().enumerate() {
            let Some(shift) = shift else { continue };
            let c = compared_vector(config.mode, &item.s, &shift.s_shift);
            // dL/dc_t
            let mut d_c = vec![0.0; c.len()];
            for (row, v) in sup.iter().enumerate() {
                let a = scale * adj[row * k_paths + t];
                if a == 0.0 {
                    continue;
                }
                for (dc, gb) in d_c.iter_mut().zip(guarded_cosine_grad_b(v, &c)) {
                    *dc += a * gb;
                }
            }
            // c depends on params only through s_t = E(z_t).
            let d_z = encoder.vjp(&shift.z_shift, &d_c)?;
            // z_t = z + eps g/|g|  =>  dL/dg = eps/|g| (I - gh gh^T) dL/dz_t
            let inv = 1.0 / shift.g_norm;
            let g_hat: Vec<f64> = shift.g.iter().map(|v| v * inv).collect();
            let proj = dot(&g_hat, &d_z);
            let u: Vec<f64> = d_z
                .iter()
                .zip(&g_hat)
                .map(|(w, h)| eps[t] * inv * (w - h * proj))
                .collect();
            let (dq, dl) = warper.gradient_param_vjp(t, z, &u);
            for (acc, d) in gradient.supports[t].iter_mut().zip(dq) {
                for (a, v) in acc.iter_mut().zip(d) {
                    *a += v;
                }
            }
            if opts.train_scales {
                for (a, v) in gradient.log_scales[t].iter_mut().zip(dl) {
                    *a += v;
                }
            }
        }
    }
    Ok(Evaluation { loss, gradient, guard_events: sims.guard_events, stalled_pairs })
}

pub fn loss_and_param_gradients(
    warper: &LatentWarper,
    bank: &DipoleBank,
    encoder: &SyntheticEncoder,
    batch: &[Vec<f64>],
    config: &ContrastiveConfig,
    shift_magnitudes: &[Vec<f64>],
    opts: &GradOptions,
) -> Result<Evaluation> {
    loss_and_param_gradients_scaled(warper, bank, encoder, batch, config, shift_magnitudes, opts, 1.0)
}

/// Forward loss only, evaluated through the objective module.
pub fn loss_only(
    warper: &LatentWarper,
    bank: &DipoleBank,
    encoder: &SyntheticEncoder,
    batch: &[Vec<f64>],
    config: &ContrastiveConfig,
    shift_magnitudes: &[Vec<f64>],
    opts: &GradOptions,
) -> Result<f64> {
    check_inputs(warper, bank, encoder, batch, shift_magnitudes)?;
    let (_, sims, _) = forward(warper, bank, encoder, config, batch, shift_magnitudes, opts)?;
    crate::objective::contrastive_loss(&sims, config.temperature)
}

/// Base finite-difference step; parameter `i` uses `h * (1 + |theta_i|)`.
pub const DEFAULT_FD_STEP: f64 = 1e-4;
/// Magnitude below which errors are measured absolutely rather than relatively.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

#[derive(Debug, Clone, Serialize)]
pub struct FdReport {
    pub max_relative_error: f64,
    /// Canonical parameter index of the worst entry, if any parameter was checked.
    pub worst_parameter_index: Option<usize>,
    pub checked_parameters: usize,
}

/// Compares `analytic` against central differences of `f` at `params`, over
/// the entries where `trainable` is set.
///
/// Each entry uses central differences at steps `h_i = h * (1 + |theta_i|)`
/// and `h_i / 2`, combined by one Richardson step.
pub fn check_against_finite_differences<F>(
    params: &[f64],
    trainable: &[bool],
    analytic: &[f64],
    mut f: F,
    h: f64,
) -> Result<FdReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameter(format!("finite-difference step {h} must be > 0")));
    }
    check_dim(params.len(), analytic.len())?;
    check_dim(params.len(), trainable.len())?;
    let mut theta = params.to_vec();
    let mut worst = (0.0, None);
    let mut checked = 0;
    for i in 0..params.len() {
        if !trainable[i] {
            continue;
        }
        let step = h * (1.0 + params[i].abs());
        theta[i] = params[i] + step;
        let up = f(&theta)?;
        theta[i] = params[i] - step;
        let down = f(&theta)?;
        theta[i] = params[i];
        let coarse = (up - down) / (2.0 * step);
        let half = 0.5 * step;
        theta[i] = params[i] + half;
        let up = f(&theta)?;
        theta[i] = params[i] - half;
        let down = f(&theta)?;
        theta[i] = params[i];
        let fine = (up - down) / (2.0 * half);
        // Richardson: cancels the O(h^2) truncation term of the central scheme.
        let numeric = (4.0 * fine - coarse) / 3.0;
        let err = relative_error(analytic[i], numeric);
        checked += 1;
        if worst.1.is_none() || err > worst.0 {
            worst = (err, Some(i));
        }
    }
    Ok(FdReport { max_relative_error: worst.0, worst_parameter_index: worst.1, checked_parameters: checked })
}

/// Checks the pipeline gradient of the loss against central differences
/// over every trainable warper parameter.
pub fn finite_diff_check(
    warper: &LatentWarper,
    bank: &DipoleBank,
    encoder: &SyntheticEncoder,
    batch: &[Vec<f64>],
    config: &ContrastiveConfig,
    shift_magnitudes: &[Vec<f64>],
    opts: &GradOptions,
    h: f64,
) -> Result<FdReport> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameter(format!("finite-difference step {h} must be > 0")));
    }
    let eval = loss_and_param_gradients(warper, bank, encoder, batch, config, shift_magnitudes, opts)?;
    finite_diff_check_against(warper, bank, encoder, batch, config, shift_magnitudes, opts, h, &eval.gradient.to_flat())
}

/// Like [`finite_diff_check`] but against a caller-supplied analytic gradient.
pub fn finite_diff_check_against(
    warper: &LatentWarper,
    bank: &DipoleBank,
    encoder: &SyntheticEncoder,
    batch: &[Vec<f64>],
    config: &ContrastiveConfig,
    shift_magnitudes: &[Vec<f64>],
    opts: &GradOptions,
    h: f64,
    analytic: &[f64],
) -> Result<FdReport> {
    let params = warper.to_flat();
    let trainable: Vec<bool> =
        warper.log_scale_mask().into_iter().map(|is_scale| opts.train_scales || !is_scale).collect();
    let mut probe = warper.clone();
    check_against_finite_differences(
        &params,
        &trainable,
        analytic,
        |theta| {
            probe.set_flat(theta)?;
            loss_only(&probe, bank, encoder, batch, config, shift_magnitudes, opts)
        },
        h,
    )
}

/// Sizes and scales for a random gradient-check instance.
#[derive(Debug, Clone, Serialize)]
pub struct InstanceSpec {
    pub latent_dim: usize,
    pub embedding_dim: usize,
    pub supports_per_path: usize,
    pub num_paths: usize,
    pub batch_size: usize,
    pub hidden_dim: Option<usize>,
    pub mode: SimilarityMode,
    pub temperature: f64,
    pub beta: f64,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            latent_dim: 3,
            embedding_dim: 4,
            supports_per_path: 2,
            num_paths: 2,
            batch_size: 2,
            hidden_dim: None,
            mode: SimilarityMode::DipoleField,
            temperature: crate::objective::DEFAULT_TEMPERATURE,
            beta: crate::dipole::DEFAULT_BETA,
        }
    }
}

/// A self-contained pipeline evaluation problem.
#[derive(Debug, Clone)]
pub struct GradInstance {
    pub warper: LatentWarper,
    pub bank: DipoleBank,
    pub encoder: SyntheticEncoder,
    pub batch: Vec<Vec<f64>>,
    pub shift_magnitudes: Vec<Vec<f64>>,
    pub config: ContrastiveConfig,
}

impl GradInstance {
    /// Deterministic random instance: standard normal supports and latents,
    /// log-scales jittered around the default initial scale, uniform pole coordinates in `[-1, 1]`, shifts in the
    /// training range.
    pub fn random(spec: &InstanceSpec, seed: u64) -> Result<Self> {
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;
        use rand_distr::{Distribution, StandardNormal};

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base_log_gamma =
            crate::warp::default_initial_gamma(crate::warp::DEFAULT_SUPPORT_RADIUS).ln();
        let paths = (0..spec.num_paths)
            .map(|_| crate::warp::WarpPath {
                supports: (0..spec.supports_per_path)
                    .map(|_| (0..spec.latent_dim).map(|_| StandardNormal.sample(&mut rng)).collect())
                    .collect(),
                log_scales: (0..spec.supports_per_path)
                    .map(|_| base_log_gamma + rng.random_range(-0.5..0.5))
                    .collect(),
            })
            .collect();
        let warper = LatentWarper::from_paths(spec.latent_dim, paths)?;
        let enc_seed = rng.random();
        let encoder = match spec.hidden_dim {
            Some(h) => crate::encoder::make_mlp_encoder(spec.latent_dim, h, spec.embedding_dim, enc_seed)?,
            None => crate::encoder::make_linear_encoder(spec.latent_dim, spec.embedding_dim, enc_seed, false)?,
        };
        let dipoles = (0..spec.num_paths)
            .map(|i| {
                let m: Vec<f64> = (0..spec.embedding_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let p: Vec<f64> = (0..spec.embedding_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                crate::dipole::SemanticDipole::new(format!("d{i}"), m, p, spec.beta)
            })
            .collect::<Result<Vec<_>>>()?;
        let bank = DipoleBank::new(spec.embedding_dim, spec.beta, dipoles)?;
        let batch = (0..spec.batch_size)
            .map(|_| (0..spec.latent_dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let shift_magnitudes = (0..spec.batch_size)
            .map(|_| (0..spec.num_paths).map(|_| rng.random_range(0.1..=0.75)).collect())
            .collect();
        let config = ContrastiveConfig::new(spec.temperature, spec.mode)?;
        Ok(Self { warper, bank, encoder, batch, shift_magnitudes, config })
    }

    pub fn evaluate(&self, opts: &GradOptions) -> Result<Evaluation> {
        loss_and_param_gradients(
            &self.warper,
            &self.bank,
            &self.encoder,
            &self.batch,
            &self.config,
            &self.shift_magnitudes,
            opts,
        )
    }

    pub fn finite_diff_check(&self, opts: &GradOptions, h: f64) -> Result<FdReport> {
        finite_diff_check(
            &self.warper,
            &self.bank,
            &self.encoder,
            &self.batch,
            &self.config,
            &self.shift_magnitudes,
            opts,
            h,
        )
    }
}
