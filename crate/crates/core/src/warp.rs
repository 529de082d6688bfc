//! Trainable RBF warpings of the latent space.
//!
//! Path `k` is the odd scalar field
//!
//! ```text
//! f_k(z) = sum_i exp(-g_i |z - q_i|^2) - exp(-g_i |z + q_i|^2),   g_i = exp(l_i)
//! ```
//!
//! whose spatial gradient defines the traversal direction at `z`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::{norm, scale};

pub const DEFAULT_STALL_TOLERANCE: f64 = 1e-8;
/// Supports per path used by the trainer and CLI when not configured.
pub const DEFAULT_SUPPORTS_PER_PATH: usize = 8;
pub const DEFAULT_SUPPORT_RADIUS: f64 = 1.0;

/// Scale at which the two mirrored bumps of a support of norm `radius`
/// overlap by one half: `exp(-g * (2 r)^2) = 0.5`.
pub fn default_initial_gamma(radius: f64) -> f64 {
    std::f64::consts::LN_2 / (4.0 * radius * radius)
}

/// Supports and log-scales of one warping path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpPath {
    pub supports: Vec<Vec<f64>>,
    pub log_scales: Vec<f64>,
}

impl WarpPath {
    pub fn gamma(&self, i: usize) -> f64 {
        self.log_scales[i].exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentWarper {
    latent_dim: usize,
    supports_per_path: usize,
    paths: Vec<WarpPath>,
}

impl LatentWarper {
    /// Builds a warper from explicit parameters, validating shapes and finiteness.
    pub fn from_paths(latent_dim: usize, paths: Vec<WarpPath>) -> Result<Self> {
        if latent_dim == 0 || paths.is_empty() {
            return Err(Error::InvalidSize("latent_dim and num_paths must be >= 1".into()));
        }
        let n = paths[0].supports.len();
        if n == 0 {
            return Err(Error::InvalidSize("supports_per_path must be >= 1".into()));
        }
        for p in &paths {
            if p.supports.len() != n || p.log_scales.len() != n {
                return Err(Error::InvalidSize(format!(
                    "every path needs {n} supports and {n} log-scales"
                )));
            }
            for q in &p.supports {
                check_dim(latent_dim, q.len())?;
                check_finite(q, "support vector")?;
            }
            check_finite(&p.log_scales, "log-scale")?;
        }
        Ok(Self { latent_dim, supports_per_path: n, paths })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn num_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn supports_per_path(&self) -> usize {
        self.supports_per_path
    }

    pub fn paths(&self) -> &[WarpPath] {
        &self.paths
    }

    pub fn path(&self, k: usize) -> &WarpPath {
        &self.paths[k]
    }

    /// Number of scalar parameters in the canonical flattening.
    pub fn num_params(&self) -> usize {
        self.paths.len() * self.supports_per_path * (self.latent_dim + 1)
    }

    /// Parameters in canonical order: path-major; within a path all supports
    /// (support index, then coordinate) followed by the `N` log-scales.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for p in &self.paths {
            for q in &p.supports {
                out.extend_from_slice(q);
            }
            out.extend_from_slice(&p.log_scales);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_dim(self.num_params(), flat.len())?;
        check_finite(flat, "warper parameters")?;
        let mut it = flat.iter().copied();
        for p in &mut self.paths {
            for q in &mut p.supports {
                for c in q.iter_mut() {
                    *c = it.next().unwrap();
                }
            }
            for l in &mut p.log_scales {
                *l = it.next().unwrap();
            }
        }
        Ok(())
    }

    /// Mask over the canonical flattening: `true` for log-scale entries.
    pub fn log_scale_mask(&self) -> Vec<bool> {
        let per_path = self.supports_per_path * (self.latent_dim + 1);
        let support_block = self.supports_per_path * self.latent_dim;
        (0..self.num_params()).map(|i| i % per_path >= support_block).collect()
    }

    fn check_input(&self, k: usize, z: &[f64]) -> Result<()> {
        if k >= self.paths.len() {
            return Err(Error::InvalidParameter(format!(
                "path index {k} out of range (K = {})",
                self.paths.len()
            )));
        }
        check_dim(self.latent_dim, z.len())?;
        check_finite(z, "latent vector")
    }

    /// Value of the warping field of path `k` at `z`.
    pub fn value(&self, k: usize, z: &[f64]) -> Result<f64> {
        self.check_input(k, z)?;
        let p = &self.paths[k];
        let mut f = 0.0;
        for (i, q) in p.supports.iter().enumerate() {
            let g = p.gamma(i);
            let (dm, dp) = mirrored_dist_sq(z, q);
            f += (-g * dm).exp() - (-g * dp).exp();
        }
        Ok(f)
    }

    /// Spatial gradient of the warping field of path `k` at `z`.
    pub fn gradient(&self, k: usize, z: &[f64]) -> Result<Vec<f64>> {
        self.check_input(k, z)?;
        let p = &self.paths[k];
        let mut grad = vec![0.0; self.latent_dim];
        for (i, q) in p.supports.iter().enumerate() {
            let g = p.gamma(i);
            let (dm, dp) = mirrored_dist_sq(z, q);
            let a = (-g * dm).exp();
            let b = (-g * dp).exp();
            for j in 0..self.latent_dim {
                grad[j] += -2.0 * g * (a * (z[j] - q[j]) - b * (z[j] + q[j]));
            }
        }
        Ok(grad)
    }

    /// Unit-norm traversal direction, or [`Error::Stalled`] in flat regions.
    pub fn unit_direction(&self, k: usize, z: &[f64], stall_tolerance: f64) -> Result<Vec<f64>> {
        if !(stall_tolerance > 0.0) {
            return Err(Error::InvalidParameter("stall_tolerance must be > 0".into()));
        }
        let grad = self.gradient(k, z)?;
        let n = norm(&grad);
        if !(n >= stall_tolerance) {
            return Err(Error::Stalled { norm: n, tolerance: stall_tolerance });
        }
        Ok(scale(&grad, 1.0 / n))
    }

    /// Vector-Jacobian product of the spatial gradient with respect to the
    /// parameters of path `k`: returns `(u^T dG/dq_i, u^T dG/dl_i)` per support,
    /// where `G = gradient(k, z)`.
    pub(crate) fn gradient_param_vjp(
        &self,
        k: usize,
        z: &[f64],
        u: &[f64],
    ) -> (Vec<Vec<f64>>, Vec<f64>) {
        let p = &self.paths[k];
        let d = self.latent_dim;
        let mut d_supports = Vec::with_capacity(self.supports_per_path);
        let mut d_log_scales = Vec::with_capacity(self.supports_per_path);
        for (i, q) in p.supports.iter().enumerate() {
            let g = p.gamma(i);
            let x: Vec<f64> = (0..d).map(|j| z[j] - q[j]).collect();
            let y: Vec<f64> = (0..d).map(|j| z[j] + q[j]).collect();
            let x2: f64 = x.iter().map(|v| v * v).sum();
            let y2: f64 = y.iter().map(|v| v * v).sum();
            let a = (-g * x2).exp();
            let b = (-g * y2).exp();
            let ux: f64 = u.iter().zip(&x).map(|(s, t)| s * t).sum();
            let uy: f64 = u.iter().zip(&y).map(|(s, t)| s * t).sum();

            // u.G_i = -2g (a u.x - b u.y)
            let dq: Vec<f64> = (0..d)
                .map(|j| {
                    -2.0 * g * (2.0 * g * (a * ux * x[j] + b * uy * y[j]) - (a + b) * u[j])
                })
                .collect();
            let d_gamma = -2.0 * (a * ux - b * uy) - 2.0 * g * (-x2 * a * ux + y2 * b * uy);
            d_supports.push(dq);
            d_log_scales.push(g * d_gamma);
        }
        (d_supports, d_log_scales)
    }
}

#[inline]
fn mirrored_dist_sq(z: &[f64], q: &[f64]) -> (f64, f64) {
    let mut dm = 0.0;
    let mut dp = 0.0;
    for (zj, qj) in z.iter().zip(q) {
        dm += (zj - qj) * (zj - qj);
        dp += (zj + qj) * (zj + qj);
    }
    (dm, dp)
}

/// Deterministic initialization: supports uniform on the sphere of radius
/// `support_radius`, all scales equal to `initial_gamma`.
pub fn init_warper(
    latent_dim: usize,
    num_paths: usize,
    supports_per_path: usize,
    seed: u64,
    support_radius: f64,
    initial_gamma: f64,
) -> Result<LatentWarper> {
    if latent_dim == 0 || num_paths == 0 || supports_per_path == 0 {
        return Err(Error::InvalidSize("d, K and N must all be >= 1".into()));
    }
    if !(support_radius > 0.0) || !support_radius.is_finite() {
        return Err(Error::InvalidParameter("support_radius must be > 0".into()));
    }
    if !(initial_gamma > 0.0) || !initial_gamma.is_finite() {
        return Err(Error::InvalidParameter("initial_gamma must be > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log_gamma = initial_gamma.ln();
    let paths = (0..num_paths)
        .map(|_| {
            let supports = (0..supports_per_path)
                .map(|_| random_on_sphere(&mut rng, latent_dim, support_radius))
                .collect();
            WarpPath { supports, log_scales: vec![log_gamma; supports_per_path] }
        })
        .collect();
    LatentWarper::from_paths(latent_dim, paths)
}

pub(crate) fn random_on_sphere<R: rand::Rng>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return scale(&v, radius / n);
        }
    }
}
