//! Differentiable latent-to-embedding maps standing in for a generator
//! followed by an image encoder.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::io;
use crate::linalg::{dot, orthonormalize_rows};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Row-major dense weights: `rows[r][c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticEncoder {
    Linear {
        latent_dim: usize,
        embedding_dim: usize,
        /// Rows orthonormal when `embedding_dim <= latent_dim`, columns otherwise.
        orthonormal: bool,
        seed: Option<u64>,
        a: Vec<Vec<f64>>,
    },
    Mlp {
        latent_dim: usize,
        hidden_dim: usize,
        embedding_dim: usize,
        activation: Activation,
        seed: Option<u64>,
        w1: Vec<Vec<f64>>,
        b1: Vec<f64>,
        w2: Vec<Vec<f64>>,
    },
}

fn matvec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, x)).collect()
}

fn matvec_t(m: &[Vec<f64>], y: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (row, yi) in m.iter().zip(y) {
        for (o, r) in out.iter_mut().zip(row) {
            *o += r * yi;
        }
    }
    out
}

fn check_matrix(m: &[Vec<f64>], rows: usize, cols: usize, what: &'static str) -> Result<()> {
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        return Err(Error::Validation(format!("{what} is not {rows}x{cols}")));
    }
    for r in m {
        check_finite(r, what)?;
    }
    Ok(())
}

impl SyntheticEncoder {
    pub fn latent_dim(&self) -> usize {
        match self {
            Self::Linear { latent_dim, .. } | Self::Mlp { latent_dim, .. } => *latent_dim,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        match self {
            Self::Linear { embedding_dim, .. } | Self::Mlp { embedding_dim, .. } => *embedding_dim,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Self::Linear { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Linear { latent_dim, embedding_dim, a, .. } => {
                if *latent_dim == 0 || *embedding_dim == 0 {
                    return Err(Error::InvalidSize("encoder sizes must be >= 1".into()));
                }
                check_matrix(a, *embedding_dim, *latent_dim, "linear encoder matrix")
            }
            Self::Mlp { latent_dim, hidden_dim, embedding_dim, w1, b1, w2, .. } => {
                if *latent_dim == 0 || *hidden_dim == 0 || *embedding_dim == 0 {
                    return Err(Error::InvalidSize("encoder sizes must be >= 1".into()));
                }
                check_matrix(w1, *hidden_dim, *latent_dim, "mlp W1")?;
                check_matrix(w2, *embedding_dim, *hidden_dim, "mlp W2")?;
                check_dim(*hidden_dim, b1.len())?;
                check_finite(b1, "mlp b1")
            }
        }
    }

    pub fn encode(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.latent_dim(), z.len())?;
        Ok(match self {
            Self::Linear { a, .. } => matvec(a, z),
            Self::Mlp { w1, b1, w2, activation, .. } => {
                let h: Vec<f64> = matvec(w1, z)
                    .into_iter()
                    .zip(b1)
                    .map(|(x, b)| activation.apply(x + b))
                    .collect();
                matvec(w2, &h)
            }
        })
    }

    /// Jacobian-vector product `J(z) v`.
    pub fn jvp(&self, z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.latent_dim(), z.len())?;
        check_dim(self.latent_dim(), v.len())?;
        Ok(match self {
            Self::Linear { a, .. } => matvec(a, v),
            Self::Mlp { w1, b1, w2, activation, .. } => {
                let dh: Vec<f64> = matvec(w1, z)
                    .into_iter()
                    .zip(b1)
                    .zip(matvec(w1, v))
                    .map(|((x, b), wv)| activation.derivative(x + b) * wv)
                    .collect();
                matvec(w2, &dh)
            }
        })
    }

    /// Vector-Jacobian product `J(z)^T w`.
    pub fn vjp(&self, z: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.latent_dim(), z.len())?;
        check_dim(self.embedding_dim(), w.len())?;
        Ok(match self {
            Self::Linear { a, latent_dim, .. } => matvec_t(a, w, *latent_dim),
            Self::Mlp { w1, b1, w2, activation, hidden_dim, latent_dim, .. } => {
                let back = matvec_t(w2, w, *hidden_dim);
                let gated: Vec<f64> = matvec(w1, z)
                    .into_iter()
                    .zip(b1)
                    .zip(back)
                    .map(|((x, b), g)| activation.derivative(x + b) * g)
                    .collect();
                matvec_t(w1, &gated, *latent_dim)
            }
        })
    }

    /// Matrix of a linear encoder.
    pub fn linear_matrix(&self) -> Option<&[Vec<f64>]> {
        match self {
            Self::Linear { a, .. } => Some(a),
            Self::Mlp { .. } => None,
        }
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Vec<Vec<f64>> {
    let dist = Normal::new(0.0, std).expect("std > 0");
    (0..rows).map(|_| (0..cols).map(|_| dist.sample(rng)).collect()).collect()
}

fn transpose(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = m.first().map_or(0, Vec::len);
    (0..cols).map(|c| m.iter().map(|r| r[c]).collect()).collect()
}

/// Gaussian linear map `R^d -> R^e`, optionally orthonormalized.
///
/// With `orthonormal` the rows are orthonormal when `e <= d` (`A A^T = I_e`)
/// and the columns are when `e > d` (`A^T A = I_d`, an isometric embedding).
pub fn make_linear_encoder(
    latent_dim: usize,
    embedding_dim: usize,
    seed: u64,
    orthonormal: bool,
) -> Result<SyntheticEncoder> {
    if latent_dim == 0 || embedding_dim == 0 {
        return Err(Error::InvalidSize("encoder sizes must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = if orthonormal {
        if embedding_dim <= latent_dim {
            let mut rows = gaussian_matrix(&mut rng, embedding_dim, latent_dim, 1.0);
            if !orthonormalize_rows(&mut rows, 1e-10) {
                return Err(Error::InvalidSize("rank-deficient draw".into()));
            }
            rows
        } else {
            let mut cols = gaussian_matrix(&mut rng, latent_dim, embedding_dim, 1.0);
            if !orthonormalize_rows(&mut cols, 1e-10) {
                return Err(Error::InvalidSize("rank-deficient draw".into()));
            }
            transpose(&cols)
        }
    } else {
        gaussian_matrix(&mut rng, embedding_dim, latent_dim, 1.0 / (latent_dim as f64).sqrt())
    };
    Ok(SyntheticEncoder::Linear { latent_dim, embedding_dim, orthonormal, seed: Some(seed), a })
}

/// One-hidden-layer tanh network with zero hidden bias, so `encode(0) = 0`.
pub fn make_mlp_encoder(
    latent_dim: usize,
    hidden_dim: usize,
    embedding_dim: usize,
    seed: u64,
) -> Result<SyntheticEncoder> {
    if latent_dim == 0 || hidden_dim == 0 || embedding_dim == 0 {
        return Err(Error::InvalidSize("encoder sizes must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w1 = gaussian_matrix(&mut rng, hidden_dim, latent_dim, 1.0 / (latent_dim as f64).sqrt());
    let w2 = gaussian_matrix(&mut rng, embedding_dim, hidden_dim, 1.0 / (hidden_dim as f64).sqrt());
    Ok(SyntheticEncoder::Mlp {
        latent_dim,
        hidden_dim,
        embedding_dim,
        activation: Activation::Tanh,
        seed: Some(seed),
        w1,
        b1: vec![0.0; hidden_dim],
        w2,
    })
}

pub fn load_encoder<R: Read>(source: R) -> Result<SyntheticEncoder> {
    let enc: SyntheticEncoder = io::read_json(source)?;
    enc.validate()?;
    Ok(enc)
}

pub fn save_encoder<W: Write>(encoder: &SyntheticEncoder, sink: W) -> Result<()> {
    io::write_json(sink, encoder)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gram(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
        a.iter().map(|r| a.iter().map(|s| dot(r, s)).collect()).collect()
    }

    #[test]
    fn orthonormal_rows_when_wide() {
        let enc = make_linear_encoder(8, 5, 3, true).unwrap();
        let g = gram(enc.linear_matrix().unwrap());
        for (i, row) in g.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((v - e).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn orthonormal_columns_when_tall() {
        let enc = make_linear_encoder(4, 9, 3, true).unwrap();
        let cols = transpose(enc.linear_matrix().unwrap());
        let g = gram(&cols);
        for (i, row) in g.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((v - e).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn deterministic_and_zero_preserving() {
        let a = make_linear_encoder(6, 4, 11, false).unwrap();
        assert_eq!(a, make_linear_encoder(6, 4, 11, false).unwrap());
        assert_eq!(a.encode(&[0.0; 6]).unwrap(), vec![0.0; 4]);
        let m = make_mlp_encoder(6, 10, 4, 5).unwrap();
        assert_eq!(m, make_mlp_encoder(6, 10, 4, 5).unwrap());
        assert_eq!(m.encode(&[0.0; 6]).unwrap(), vec![0.0; 4]);
        let z = [0.3, -0.1, 0.7, 0.0, 1.2, -2.0];
        assert_eq!(m.encode(&z).unwrap(), make_mlp_encoder(6, 10, 4, 5).unwrap().encode(&z).unwrap());
    }

    #[test]
    fn vjp_is_transpose_of_jvp() {
        let m = make_mlp_encoder(5, 7, 3, 2).unwrap();
        let z = [0.2, -0.4, 1.0, 0.5, -1.5];
        let v = [1.0, 0.5, -0.3, 0.2, 0.9];
        let w = [0.7, -1.1, 0.4];
        let lhs = dot(&w, &m.jvp(&z, &v).unwrap());
        let rhs = dot(&m.vjp(&z, &w).unwrap(), &v);
        assert!((lhs - rhs).abs() < 1e-13);
    }

    #[test]
    fn size_errors() {
        assert!(make_linear_encoder(0, 3, 0, true).is_err());
        assert!(make_mlp_encoder(3, 0, 3, 0).is_err());
        let m = make_mlp_encoder(3, 4, 2, 0).unwrap();
        assert!(m.encode(&[0.0; 2]).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let m = make_mlp_encoder(3, 4, 2, 8).unwrap();
        let mut buf = Vec::new();
        save_encoder(&m, &mut buf).unwrap();
        assert_eq!(load_encoder(buf.as_slice()).unwrap(), m);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("\"kind\": \"mlp\""));
    }
}
