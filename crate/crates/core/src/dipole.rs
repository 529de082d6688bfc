//! Semantic dipoles and the warping field they induce on the embedding space.

use std::collections::HashSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::io;
use crate::linalg::{dist_sq, norm, normalized};

pub const DEFAULT_BETA: f64 = 0.5;
const GAMMA_REL_TOL: f64 = 1e-9;
const INTEGRATION_STOP_NORM: f64 = 1e-8;

/// Scale that makes each pole's RBF evaluate to `beta` at the opposite pole.
pub fn compute_gamma(s_minus: &[f64], s_plus: &[f64], beta: f64) -> Result<f64> {
    check_dim(s_minus.len(), s_plus.len())?;
    check_finite(s_minus, "s_minus")?;
    check_finite(s_plus, "s_plus")?;
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidParameter(format!("beta = {beta} outside (0, 1)")));
    }
    let sep = dist_sq(s_plus, s_minus);
    if !(sep > 0.0) {
        return Err(Error::DegenerateDipole(String::new()));
    }
    Ok(-beta.ln() / sep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticDipole {
    pub id: String,
    pub text_minus: Option<String>,
    pub text_plus: Option<String>,
    s_minus: Vec<f64>,
    s_plus: Vec<f64>,
    beta: f64,
    gamma: f64,
}

impl SemanticDipole {
    pub fn new(
        id: impl Into<String>,
        s_minus: Vec<f64>,
        s_plus: Vec<f64>,
        beta: f64,
    ) -> Result<Self> {
        let id = id.into();
        let gamma = compute_gamma(&s_minus, &s_plus, beta).map_err(|e| match e {
            Error::DegenerateDipole(_) => Error::DegenerateDipole(id.clone()),
            other => other,
        })?;
        Ok(Self { id, text_minus: None, text_plus: None, s_minus, s_plus, beta, gamma })
    }

    pub fn with_texts(mut self, minus: Option<String>, plus: Option<String>) -> Self {
        self.text_minus = minus;
        self.text_plus = plus;
        self
    }

    pub fn s_minus(&self) -> &[f64] {
        &self.s_minus
    }

    pub fn s_plus(&self) -> &[f64] {
        &self.s_plus
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dim(&self) -> usize {
        self.s_plus.len()
    }

    /// `s+ - s-`
    pub fn axis(&self) -> Vec<f64> {
        self.s_plus.iter().zip(&self.s_minus).map(|(p, m)| p - m).collect()
    }

    /// Same poles with `s-` and `s+` exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            id: self.id.clone(),
            text_minus: self.text_plus.clone(),
            text_plus: self.text_minus.clone(),
            s_minus: self.s_plus.clone(),
            s_plus: self.s_minus.clone(),
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    fn pole_weights(&self, s: &[f64]) -> (f64, f64) {
        let a_plus = (-self.gamma * dist_sq(s, &self.s_plus)).exp();
        let a_minus = (-self.gamma * dist_sq(s, &self.s_minus)).exp();
        (a_plus, a_minus)
    }

    pub fn field_value(&self, s: &[f64]) -> Result<f64> {
        check_dim(self.dim(), s.len())?;
        let (a_plus, a_minus) = self.pole_weights(s);
        Ok(a_plus - a_minus)
    }

    pub fn field_gradient(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), s.len())?;
        let (a_plus, a_minus) = self.pole_weights(s);
        Ok((0..s.len())
            .map(|j| {
                -2.0 * self.gamma
                    * (a_plus * (s[j] - self.s_plus[j]) - a_minus * (s[j] - self.s_minus[j]))
            })
            .collect())
    }

    /// Gradient ascent on the field: `s <- s + step * grad f(s)`.
    ///
    /// The returned path includes the start point and stops after
    /// `max_steps` updates or once the gradient norm drops below `1e-8`.
    pub fn integrate_field(&self, s0: &[f64], step: f64, max_steps: usize) -> Result<Vec<Vec<f64>>> {
        check_dim(self.dim(), s0.len())?;
        if !(step > 0.0) {
            return Err(Error::InvalidParameter("integration step must be > 0".into()));
        }
        let mut path = vec![s0.to_vec()];
        for _ in 0..max_steps {
            let s = path.last().unwrap();
            let g = self.field_gradient(s)?;
            if norm(&g) < INTEGRATION_STOP_NORM {
                break;
            }
            let next = s.iter().zip(&g).map(|(x, gx)| x + step * gx).collect();
            path.push(next);
        }
        Ok(path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DipoleBank {
    embedding_dim: usize,
    beta: f64,
    normalize: bool,
    metadata: Option<serde_json::Map<String, serde_json::Value>>,
    dipoles: Vec<SemanticDipole>,
}

impl DipoleBank {
    pub fn new(embedding_dim: usize, beta: f64, dipoles: Vec<SemanticDipole>) -> Result<Self> {
        if embedding_dim == 0 {
            return Err(Error::InvalidSize("embedding_dim must be >= 1".into()));
        }
        if dipoles.is_empty() {
            return Err(Error::Validation("a dipole bank needs at least one dipole".into()));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidParameter(format!("beta = {beta} outside (0, 1)")));
        }
        let mut seen = HashSet::new();
        for d in &dipoles {
            check_dim(embedding_dim, d.dim())?;
            if !seen.insert(d.id.as_str()) {
                return Err(Error::Validation(format!("duplicate dipole id `{}`", d.id)));
            }
        }
        Ok(Self { embedding_dim, beta, normalize: false, metadata: None, dipoles })
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Whether query embeddings are L2-normalized before evaluating fields.
    pub fn normalize(&self) -> bool {
        self.normalize
    }

    /// Free-form provenance carried through load/save untouched (encoder
    /// model name, export date and the like).
    pub fn metadata(&self) -> Option<&serde_json::Map<String, serde_json::Value>> {
        self.metadata.as_ref()
    }

    pub fn with_metadata(mut self, metadata: serde_json::Map<String, serde_json::Value>) -> Self {
        self.metadata = Some(metadata);
        self
    }

    pub fn len(&self) -> usize {
        self.dipoles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dipoles.is_empty()
    }

    pub fn dipoles(&self) -> &[SemanticDipole] {
        &self.dipoles
    }

    pub fn dipole(&self, k: usize) -> &SemanticDipole {
        &self.dipoles[k]
    }

    /// Embedding at which fields are queried: `s` itself, or `s / |s|` for
    /// normalizing banks.
    pub fn query_point(&self, s: &[f64]) -> Vec<f64> {
        if self.normalize {
            normalized(s).unwrap_or_else(|| s.to_vec())
        } else {
            s.to_vec()
        }
    }

    /// Same bank with dipoles reordered by `perm` (`new[i] = old[perm[i]]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = self.clone();
        out.dipoles = perm.iter().map(|&i| self.dipoles[i].clone()).collect();
        out
    }

    /// Sub-bank with the selected dipoles, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let dipoles = indices.iter().map(|&i| self.dipoles[i].clone()).collect();
        let mut out = Self::new(self.embedding_dim, self.beta, dipoles)?;
        out.normalize = self.normalize;
        out.metadata = self.metadata.clone();
        Ok(out)
    }

    /// Rebuilds every dipole's scale for a new global `beta`.
    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        let dipoles = self
            .dipoles
            .iter()
            .map(|d| {
                Ok(SemanticDipole::new(d.id.clone(), d.s_minus.clone(), d.s_plus.clone(), beta)?
                    .with_texts(d.text_minus.clone(), d.text_plus.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = Self::new(self.embedding_dim, beta, dipoles)?;
        out.normalize = self.normalize;
        out.metadata = self.metadata.clone();
        Ok(out)
    }

    pub fn to_file(&self) -> DipoleBankFile {
        DipoleBankFile {
            embedding_dim: self.embedding_dim,
            beta: self.beta,
            normalize: self.normalize.then_some(true),
            metadata: self.metadata.clone(),
            dipoles: self
                .dipoles
                .iter()
                .map(|d| DipoleRecord {
                    id: d.id.clone(),
                    text_minus: d.text_minus.clone(),
                    text_plus: d.text_plus.clone(),
                    beta: (d.beta.to_bits() != self.beta.to_bits()).then_some(d.beta),
                    gamma: d.gamma,
                    s_minus: d.s_minus.clone(),
                    s_plus: d.s_plus.clone(),
                })
                .collect(),
        }
    }

    pub fn from_file(file: DipoleBankFile) -> Result<Self> {
        let normalize = file.normalize.unwrap_or(false);
        let mut dipoles = Vec::with_capacity(file.dipoles.len());
        for rec in file.dipoles {
            if rec.s_minus.len() != file.embedding_dim || rec.s_plus.len() != file.embedding_dim {
                return Err(Error::Validation(format!(
                    "dipole `{}` has dimension {}/{}, bank declares {}",
                    rec.id,
                    rec.s_minus.len(),
                    rec.s_plus.len(),
                    file.embedding_dim
                )));
            }
            let beta = rec.beta.unwrap_or(file.beta);
            let (s_minus, s_plus) = if normalize {
                let m = normalized(&rec.s_minus)
                    .ok_or_else(|| Error::DegenerateDipole(rec.id.clone()))?;
                let p = normalized(&rec.s_plus)
                    .ok_or_else(|| Error::DegenerateDipole(rec.id.clone()))?;
                (m, p)
            } else {
                (rec.s_minus, rec.s_plus)
            };
            let dipole = SemanticDipole::new(rec.id, s_minus, s_plus, beta)?
                .with_texts(rec.text_minus, rec.text_plus);
            let rel = (dipole.gamma - rec.gamma).abs() / dipole.gamma;
            if !(rel <= GAMMA_REL_TOL) {
                return Err(Error::Validation(format!(
                    "dipole `{}`: stored gamma {} disagrees with -ln(beta)/|s+ - s-|^2 = {}",
                    dipole.id, rec.gamma, dipole.gamma
                )));
            }
            dipoles.push(dipole);
        }
        let mut bank = Self::new(file.embedding_dim, file.beta, dipoles)?;
        bank.normalize = normalize;
        bank.metadata = file.metadata;
        Ok(bank)
    }
}

/// On-disk dipole-bank document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DipoleBankFile {
    pub embedding_dim: usize,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalize: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Map<String, serde_json::Value>>,
    pub dipoles: Vec<DipoleRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DipoleRecord {
    pub id: String,
    pub text_minus: Option<String>,
    pub text_plus: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub gamma: f64,
    pub s_minus: Vec<f64>,
    pub s_plus: Vec<f64>,
}

pub fn load_dipole_bank<R: Read>(source: R) -> Result<DipoleBank> {
    DipoleBank::from_file(io::read_json(source)?)
}

pub fn save_dipole_bank<W: Write>(bank: &DipoleBank, sink: W) -> Result<()> {
    io::write_json(sink, &bank.to_file())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_examples() {
        let g = compute_gamma(&[0.0], &[1.0], 0.5).unwrap();
        assert!((g - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((g - 0.6931472).abs() < 1e-7);
        let g = compute_gamma(&[0.0, 0.0], &[2.0, 0.0], (-1.0f64).exp()).unwrap();
        assert!((g - 0.25).abs() < 1e-15);
        assert!(matches!(compute_gamma(&[1.0], &[1.0], 0.5), Err(Error::DegenerateDipole(_))));
        assert!(compute_gamma(&[0.0], &[1.0], 1.0).is_err());
        assert!(compute_gamma(&[0.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn pole_and_bisector_values() {
        let d = SemanticDipole::new("a", vec![0.0, 1.0], vec![2.0, -1.0], 0.3).unwrap();
        assert!((d.field_value(d.s_plus()).unwrap() - 0.7).abs() < 1e-12);
        assert!((d.field_value(d.s_minus()).unwrap() + 0.7).abs() < 1e-12);
        // midpoint (1, 0) plus an orthogonal offset along (1, 1)
        assert!(d.field_value(&[3.0, 2.0]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn gradient_at_minus_pole() {
        let d = SemanticDipole::new("a", vec![0.0], vec![1.0], 0.5).unwrap();
        let g = d.field_gradient(&[0.0]).unwrap();
        assert!((g[0] - std::f64::consts::LN_2).abs() < 1e-15);
        let d = SemanticDipole::new("b", vec![1.0, 2.0, 0.0], vec![0.0, 1.0, 3.0], 0.25).unwrap();
        let g = d.field_gradient(d.s_minus()).unwrap();
        let c = 2.0 * d.gamma() * d.beta();
        for (gj, aj) in g.iter().zip(d.axis()) {
            assert!((gj - c * aj).abs() < 1e-15);
        }
    }

    #[test]
    fn integration_increases_field() {
        let d = SemanticDipole::new("a", vec![-1.0, 0.0], vec![1.0, 0.0], 0.5).unwrap();
        let path = d.integrate_field(d.s_minus(), 0.05, 50).unwrap();
        assert_eq!(path.len(), 51);
        let f: Vec<f64> = path.iter().map(|s| d.field_value(s).unwrap()).collect();
        assert!(f.windows(2).all(|w| w[1] > w[0]));
        let far = d.integrate_field(&[1e3, 0.0], 0.1, 10).unwrap();
        assert_eq!(far.len(), 1);
        assert!(d.integrate_field(d.s_minus(), 0.0, 10).is_err());
    }

    #[test]
    fn bank_validation() {
        let a = SemanticDipole::new("x", vec![0.0; 2], vec![1.0, 0.0], 0.5).unwrap();
        assert!(DipoleBank::new(2, 0.5, vec![]).is_err());
        assert!(DipoleBank::new(2, 0.5, vec![a.clone(), a.clone()]).is_err());
        assert!(DipoleBank::new(3, 0.5, vec![a.clone()]).is_err());
        let bank = DipoleBank::new(2, 0.5, vec![a]).unwrap();
        let mut buf = Vec::new();
        save_dipole_bank(&bank, &mut buf).unwrap();
        assert_eq!(load_dipole_bank(buf.as_slice()).unwrap(), bank);
    }

    #[test]
    fn stored_gamma_mismatch_rejected() {
        let a = SemanticDipole::new("x", vec![0.0; 2], vec![1.0, 0.0], 0.5).unwrap();
        let mut file = DipoleBank::new(2, 0.5, vec![a]).unwrap().to_file();
        file.dipoles[0].gamma *= 1.0 + 1e-6;
        assert!(matches!(DipoleBank::from_file(file), Err(Error::Validation(_))));
    }

    #[test]
    fn beta_override_roundtrips() {
        let a = SemanticDipole::new("x", vec![0.0; 2], vec![1.0, 0.0], 0.5).unwrap();
        let b = SemanticDipole::new("y", vec![0.0; 2], vec![0.0, 2.0], 0.9).unwrap();
        let bank = DipoleBank::new(2, 0.5, vec![a, b]).unwrap();
        let file = bank.to_file();
        assert!(file.dipoles[0].beta.is_none());
        assert_eq!(file.dipoles[1].beta, Some(0.9));
        assert_eq!(DipoleBank::from_file(file).unwrap(), bank);
    }

    #[test]
    fn normalizing_bank_rescales_poles() {
        let json = r#"{"embedding_dim": 2, "beta": 0.5, "normalize": true, "dipoles": [
            {"id": "n", "text_minus": null, "text_plus": null,
             "gamma": 0.34657359027997264, "s_minus": [3.0, 0.0], "s_plus": [0.0, 5.0]}]}"#;
        let bank = load_dipole_bank(json.as_bytes()).unwrap();
        assert!(bank.normalize());
        assert_eq!(bank.dipole(0).s_plus(), &[0.0, 1.0]);
        assert_eq!(bank.query_point(&[0.0, 4.0]), vec![0.0, 1.0]);
    }
}
