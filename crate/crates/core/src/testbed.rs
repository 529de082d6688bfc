//! Ground-truth dipoles and oracle directions for the synthetic encoders.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dipole::{DipoleBank, SemanticDipole};
use crate::encoder::SyntheticEncoder;
use crate::error::{Error, Result};
use crate::io;
use crate::linalg::{dot, guarded_cosine, normalized, orthonormalize_rows, sub};
use crate::warp::{random_on_sphere, LatentWarper, DEFAULT_STALL_TOLERANCE};

pub const DEFAULT_SEPARATION: f64 = 4.0;
pub const PROBE_STEP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    /// Orthonormal latent directions, one per dipole.
    pub directions: Vec<Vec<f64>>,
    pub separation: f64,
    pub centre: Vec<f64>,
}

/// Dipoles whose poles are the encodings of `centre +/- (separation / 2) u_k`
/// for orthonormal latent directions `u_k`, with `centre = 0`.
///
/// For a linear encoder with orthonormal rows the directions are drawn inside
/// the row space, so the encoder is an isometry along them.
pub fn make_ground_truth_dipoles(
    encoder: &SyntheticEncoder,
    num_dipoles: usize,
    seed: u64,
    separation: f64,
    beta: f64,
) -> Result<(DipoleBank, GroundTruth)> {
    let d = encoder.latent_dim();
    if num_dipoles == 0 || num_dipoles > d {
        return Err(Error::InvalidSize(format!(
            "need 1 <= K <= latent_dim ({d}), got K = {num_dipoles}"
        )));
    }
    if !(separation > 0.0) || !separation.is_finite() {
        return Err(Error::InvalidParameter(format!("separation {separation} must be > 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut directions: Vec<Vec<f64>> = match encoder {
        SyntheticEncoder::Linear { a, orthonormal: true, embedding_dim, latent_dim, .. }
            if embedding_dim < latent_dim =>
        {
            if num_dipoles > *embedding_dim {
                return Err(Error::InvalidSize(format!(
                    "row space has dimension {embedding_dim} < K = {num_dipoles}"
                )));
            }
            (0..num_dipoles)
                .map(|_| {
                    let r = random_on_sphere(&mut rng, *embedding_dim, 1.0);
                    let mut u = vec![0.0; d];
                    for (row, ri) in a.iter().zip(&r) {
                        for (uj, aj) in u.iter_mut().zip(row) {
                            *uj += ri * aj;
                        }
                    }
                    u
                })
                .collect()
        }
        _ => (0..num_dipoles)
            .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect(),
    };
    if !orthonormalize_rows(&mut directions, 1e-10) {
        return Err(Error::InvalidSize("degenerate direction draw".into()));
    }
    let centre = vec![0.0; d];
    let half = 0.5 * separation;
    let dipoles = directions
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let plus: Vec<f64> = centre.iter().zip(u).map(|(c, x)| c + half * x).collect();
            let minus: Vec<f64> = centre.iter().zip(u).map(|(c, x)| c - half * x).collect();
            SemanticDipole::new(format!("gt{k}"), encoder.encode(&minus)?, encoder.encode(&plus)?, beta)
        })
        .collect::<Result<Vec<_>>>()?;
    let bank = DipoleBank::new(encoder.embedding_dim(), beta, dipoles)?;
    Ok((bank, GroundTruth { directions, separation, centre }))
}

/// Solves the symmetric positive definite system `m x = b` by Cholesky.
fn solve_spd(mut m: Vec<Vec<f64>>, b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    for j in 0..n {
        let mut diag = m[j][j];
        for k in 0..j {
            diag -= m[j][k] * m[j][k];
        }
        if !(diag > 1e-14) {
            return None;
        }
        let diag = diag.sqrt();
        m[j][j] = diag;
        for i in j + 1..n {
            let mut v = m[i][j];
            for k in 0..j {
                v -= m[i][k] * m[j][k];
            }
            m[i][j] = v / diag;
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= m[i][k] * y[k];
        }
        y[i] /= m[i][i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= m[k][i] * y[k];
        }
        y[i] /= m[i][i];
    }
    Some(y)
}

/// Unit latent direction `delta` maximizing `cos(s+ - s-, A delta)` for a
/// linear encoder: the normalized minimum-norm least-squares solution of
/// `A delta = s+ - s-`, which is `A^T (s+ - s-)` when `A` has orthonormal
/// rows or columns.
pub fn oracle_direction(encoder: &SyntheticEncoder, dipole: &SemanticDipole) -> Result<Vec<f64>> {
    let a = encoder.linear_matrix().ok_or_else(|| {
        Error::InvalidParameter("oracle direction needs a linear encoder".into())
    })?;
    let v = dipole.axis();
    let (e, d) = (a.len(), encoder.latent_dim());
    let delta = if e >= d {
        // (A^T A) x = A^T v
        let gram: Vec<Vec<f64>> =
            (0..d).map(|i| (0..d).map(|j| a.iter().map(|r| r[i] * r[j]).sum()).collect()).collect();
        let rhs: Vec<f64> = (0..d).map(|i| a.iter().zip(&v).map(|(r, vi)| r[i] * vi).sum()).collect();
        solve_spd(gram, &rhs)
    } else {
        // x = A^T (A A^T)^-1 v
        let gram: Vec<Vec<f64>> = a.iter().map(|r| a.iter().map(|s| dot(r, s)).collect()).collect();
        solve_spd(gram, &v).map(|y| {
            (0..d).map(|j| a.iter().zip(&y).map(|(r, yi)| r[j] * yi).sum()).collect()
        })
    }
    .ok_or_else(|| Error::InvalidParameter("encoder matrix is rank deficient".into()))?;
    normalized(&delta).ok_or_else(|| Error::InvalidParameter("dipole axis is orthogonal to the encoder range".into()))
}

/// Best of `samples` seeded random unit directions by the cosine between the
/// dipole field gradient at `encode(z)` and the embedding change of a
/// `PROBE_STEP` latent move.
pub fn brute_force_direction(
    encoder: &SyntheticEncoder,
    z: &[f64],
    dipole: &SemanticDipole,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if samples == 0 {
        return Err(Error::InvalidParameter("samples must be >= 1".into()));
    }
    let s = encoder.encode(z)?;
    let target = dipole.field_gradient(&s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..samples {
        let delta = random_on_sphere(&mut rng, z.len(), 1.0);
        let probe: Vec<f64> = z.iter().zip(&delta).map(|(zj, dj)| zj + PROBE_STEP * dj).collect();
        let c = guarded_cosine(&target, &sub(&encoder.encode(&probe)?, &s)).0;
        if best.as_ref().is_none_or(|(b, _)| c > *b) {
            best = Some((c, delta));
        }
    }
    Ok(best.unwrap().1)
}

/// `m[k][t]`: mean over `num_latents` seeded standard-normal latents of
/// `cos(J_E(z) u_k(z), s_t+ - s_t-)`, where `u_k` is path `k`'s unit
/// direction and `J_E` the encoder Jacobian. Stalled latents are skipped.
pub fn recovery_alignment(
    warper: &LatentWarper,
    encoder: &SyntheticEncoder,
    bank: &DipoleBank,
    num_latents: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let k = warper.num_paths();
    if bank.len() != k {
        return Err(Error::InvalidParameter("bank and warper disagree on K".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axes: Vec<Vec<f64>> = bank.dipoles().iter().map(|d| d.axis()).collect();
    let mut sums = vec![vec![0.0; k]; k];
    let mut counts = vec![0usize; k];
    for _ in 0..num_latents {
        let z: Vec<f64> = (0..warper.latent_dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
        for (row, (sum, count)) in sums.iter_mut().zip(&mut counts).enumerate() {
            let Ok(u) = warper.unit_direction(row, &z, DEFAULT_STALL_TOLERANCE) else { continue };
            let moved = encoder.jvp(&z, &u)?;
            for (acc, axis) in sum.iter_mut().zip(&axes) {
                *acc += guarded_cosine(&moved, axis).0;
            }
            *count += 1;
        }
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(row, c)| row.into_iter().map(|v| if c == 0 { 0.0 } else { v / c as f64 }).collect())
        .collect())
}

pub fn load_ground_truth<R: Read>(source: R) -> Result<GroundTruth> {
    let gt: GroundTruth = io::read_json(source)?;
    for u in &gt.directions {
        if u.len() != gt.centre.len() {
            return Err(Error::Validation("ground-truth direction dimension mismatch".into()));
        }
    }
    Ok(gt)
}

pub fn save_ground_truth<W: Write>(gt: &GroundTruth, sink: W) -> Result<()> {
    io::write_json(sink, gt)
}
