//! Text-side supervision directions and the contrastive path loss.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dipole::DipoleBank;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{guarded_cosine, log_sum_exp, softmax};

pub const DEFAULT_TEMPERATURE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pole {
    Minus,
    Plus,
}

/// Which embedding-space vector a manipulation is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SimilarityMode {
    /// Local gradient of the dipole field at the original embedding.
    DipoleField,
    /// Constant pole difference `s+ - s-`.
    LinearDifference,
    /// One pole's embedding compared with the manipulated embedding itself.
    SinglePrompt(Pole),
}

impl SimilarityMode {
    /// Whether similarities are taken against `s_t - s` (true) or `s_t` (false).
    pub fn compares_difference(self) -> bool {
        !matches!(self, SimilarityMode::SinglePrompt(_))
    }
}

impl fmt::Display for SimilarityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimilarityMode::DipoleField => "dipole-field",
            SimilarityMode::LinearDifference => "linear-difference",
            SimilarityMode::SinglePrompt(Pole::Plus) => "single-prompt-plus",
            SimilarityMode::SinglePrompt(Pole::Minus) => "single-prompt-minus",
        })
    }
}

impl From<SimilarityMode> for String {
    fn from(mode: SimilarityMode) -> String {
        mode.to_string()
    }
}

impl TryFrom<String> for SimilarityMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for SimilarityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dipole-field" => Ok(SimilarityMode::DipoleField),
            "linear-difference" => Ok(SimilarityMode::LinearDifference),
            "single-prompt-plus" => Ok(SimilarityMode::SinglePrompt(Pole::Plus)),
            "single-prompt-minus" => Ok(SimilarityMode::SinglePrompt(Pole::Minus)),
            other => Err(Error::InvalidParameter(format!("unknown similarity mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub mode: SimilarityMode,
}

impl ContrastiveConfig {
    pub fn new(temperature: f64, mode: SimilarityMode) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::InvalidParameter(format!("temperature {temperature} must be > 0")));
        }
        Ok(Self { temperature, mode })
    }
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self { temperature: DEFAULT_TEMPERATURE, mode: SimilarityMode::DipoleField }
    }
}

pub fn supervision_direction(
    mode: SimilarityMode,
    bank: &DipoleBank,
    k: usize,
    s: &[f64],
) -> Result<Vec<f64>> {
    if k >= bank.len() {
        return Err(Error::InvalidParameter(format!("dipole index {k} out of range")));
    }
    check_dim(bank.embedding_dim(), s.len())?;
    let dipole = bank.dipole(k);
    match mode {
        SimilarityMode::DipoleField => dipole.field_gradient(&bank.query_point(s)),
        SimilarityMode::LinearDifference => Ok(dipole.axis()),
        SimilarityMode::SinglePrompt(Pole::Plus) => Ok(dipole.s_plus().to_vec()),
        SimilarityMode::SinglePrompt(Pole::Minus) => Ok(dipole.s_minus().to_vec()),
    }
}

/// `K x K` similarities for one original latent. Row `k` compares the
/// supervision direction of dipole `k` with the manipulation along path `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    k: usize,
    entries: Vec<f64>,
    active: Vec<bool>,
}

impl SimilarityMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        let mut entries = Vec::with_capacity(k * k);
        for r in rows {
            check_dim(k, r.len())?;
            entries.extend(r);
        }
        Ok(Self { k, entries, active: vec![true; k] })
    }

    pub(crate) fn with_active(k: usize, entries: Vec<f64>, active: Vec<bool>) -> Self {
        debug_assert_eq!(entries.len(), k * k);
        Self { k, entries, active }
    }

    pub fn size(&self) -> usize {
        self.k
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.k + col]
    }

    /// Paths whose shift was evaluated; inactive paths drop out of both rows
    /// and columns.
    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.k;
        let mut entries = Vec::with_capacity(k * k);
        for &r in perm {
            for &c in perm {
                entries.push(self.get(r, c));
            }
        }
        Self { k, entries, active: perm.iter().map(|&i| self.active[i]).collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrixBatch {
    pub items: Vec<SimilarityMatrix>,
    /// Cosines whose norm product hit the denominator floor.
    pub guard_events: usize,
}

/// Similarities between supervision directions and manipulations.
///
/// `shifted[n][t]` is the embedding of item `n` moved along path `t`.
pub fn similarity_matrix(
    mode: SimilarityMode,
    bank: &DipoleBank,
    originals: &[Vec<f64>],
    shifted: &[Vec<Vec<f64>>],
) -> Result<SimilarityMatrixBatch> {
    check_dim(originals.len(), shifted.len())?;
    let mut items = Vec::with_capacity(originals.len());
    let mut guard_events = 0;
    for (s, row) in originals.iter().zip(shifted) {
        check_dim(bank.len(), row.len())?;
        let slots: Vec<Option<Vec<f64>>> = row.iter().map(|st| Some(st.clone())).collect();
        let (m, g) = item_similarities(mode, bank, s, &slots)?;
        guard_events += g;
        items.push(m);
    }
    Ok(SimilarityMatrixBatch { items, guard_events })
}

/// Vector compared against the supervision directions for one manipulation.
pub(crate) fn compared_vector(mode: SimilarityMode, s: &[f64], s_t: &[f64]) -> Vec<f64> {
    if mode.compares_difference() {
        s_t.iter().zip(s).map(|(a, b)| a - b).collect()
    } else {
        s_t.to_vec()
    }
}

/// Similarities for one item; `None` slots are stalled paths.
pub(crate) fn item_similarities(
    mode: SimilarityMode,
    bank: &DipoleBank,
    s: &[f64],
    shifted: &[Option<Vec<f64>>],
) -> Result<(SimilarityMatrix, usize)> {
    let k = bank.len();
    let mut guard = 0;
    let compared: Vec<Option<Vec<f64>>> = shifted
        .iter()
        .map(|st| {
            st.as_ref()
                .map(|st| {
                    check_dim(s.len(), st.len())?;
                    Ok(compared_vector(mode, s, st))
                })
                .transpose()
        })
        .collect::<Result<_>>()?;
    let active: Vec<bool> = compared.iter().map(Option::is_some).collect();
    let mut entries = vec![0.0; k * k];
    for row in 0..k {
        if !active[row] {
            continue;
        }
        let v = supervision_direction(mode, bank, row, s)?;
        for (col, c) in compared.iter().enumerate() {
            if let Some(c) = c {
                let (p, guarded) = guarded_cosine(&v, c);
                guard += usize::from(guarded);
                entries[row * k + col] = p;
            }
        }
    }
    Ok((SimilarityMatrix::with_active(k, entries, active), guard))
}

/// Loss and its adjoint `dL/dp` for every entry (zero for inactive entries).
pub(crate) fn contrastive_loss_and_adjoint(
    batch: &SimilarityMatrixBatch,
    temperature: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidParameter(format!("temperature {temperature} must be > 0")));
    }
    let rows: usize = batch.items.iter().map(|m| m.active.iter().filter(|a| **a).count()).sum();
    let mut adjoints = Vec::with_capacity(batch.items.len());
    if rows == 0 {
        for m in &batch.items {
            adjoints.push(vec![0.0; m.k * m.k]);
        }
        return Ok((0.0, adjoints));
    }
    let norm = 1.0 / rows as f64;
    let mut total = 0.0;
    for m in &batch.items {
        if m.entries.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("similarity matrix"));
        }
        let k = m.k;
        let cols: Vec<usize> = (0..k).filter(|&t| m.active[t]).collect();
        let mut adj = vec![0.0; k * k];
        for &row in &cols {
            let logits: Vec<f64> = cols.iter().map(|&t| m.get(row, t) / temperature).collect();
            total += log_sum_exp(&logits) - m.get(row, row) / temperature;
            for (&t, w) in cols.iter().zip(softmax(&logits)) {
                let target = if t == row { 1.0 } else { 0.0 };
                adj[row * k + t] = (w - target) * norm / temperature;
            }
        }
        adjoints.push(adj);
    }
    Ok((total * norm, adjoints))
}

/// Mean over items and paths of `-log softmax_t(p[k][t] / tau)[k]`.
pub fn contrastive_loss(batch: &SimilarityMatrixBatch, temperature: f64) -> Result<f64> {
    contrastive_loss_and_adjoint(batch, temperature).map(|(l, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dipole::SemanticDipole;

    fn batch(rows: Vec<Vec<f64>>) -> SimilarityMatrixBatch {
        SimilarityMatrixBatch { items: vec![SimilarityMatrix::from_rows(rows).unwrap()], guard_events: 0 }
    }

    fn bank2() -> DipoleBank {
        let a = SemanticDipole::new("a", vec![-1.0, 0.0], vec![1.0, 0.0], 0.5).unwrap();
        let b = SemanticDipole::new("b", vec![0.0, -1.0], vec![0.0, 1.0], 0.5).unwrap();
        DipoleBank::new(2, 0.5, vec![a, b]).unwrap()
    }

    #[test]
    fn loss_examples() {
        assert_eq!(contrastive_loss(&batch(vec![vec![0.4]]), 0.5).unwrap(), 0.0);
        let uniform = batch(vec![vec![0.2; 3]; 3]);
        assert!((contrastive_loss(&uniform, 0.7).unwrap() - 3f64.ln()).abs() < 1e-14);
        let l = contrastive_loss(&batch(vec![vec![1.0, 0.0], vec![0.0, 1.0]]), 1.0).unwrap();
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((l - expected).abs() < 1e-15);
        assert!((l - 0.3132617).abs() < 1e-7);
        assert!(contrastive_loss(&uniform, 0.0).is_err());
        assert!(contrastive_loss(&batch(vec![vec![f64::NAN]]), 1.0).is_err());
    }

    #[test]
    fn supervision_modes() {
        let bank = bank2();
        let d = bank.dipole(0);
        let g = supervision_direction(SimilarityMode::DipoleField, &bank, 0, d.s_minus()).unwrap();
        let c = 2.0 * d.gamma() * d.beta();
        assert!((g[0] - c * 2.0).abs() < 1e-15 && g[1] == 0.0);
        let l1 = supervision_direction(SimilarityMode::LinearDifference, &bank, 1, &[0.3, 0.1]).unwrap();
        let l2 = supervision_direction(SimilarityMode::LinearDifference, &bank, 1, &[-5.0, 2.0]).unwrap();
        assert_eq!(l1, l2);
        let p = supervision_direction(SimilarityMode::SinglePrompt(Pole::Plus), &bank, 1, &[0.0, 0.0]).unwrap();
        assert_eq!(p, bank.dipole(1).s_plus());
    }

    #[test]
    fn no_movement_gives_zero_similarities() {
        let bank = bank2();
        let s = vec![0.3, -0.2];
        let m = similarity_matrix(SimilarityMode::DipoleField, &bank, &[s.clone()], &[vec![s.clone(), s]])
            .unwrap();
        assert_eq!(m.guard_events, 4);
        assert!(m.items[0].entries.iter().all(|p| *p == 0.0));
    }

    #[test]
    fn linear_difference_hand_instance() {
        let a = SemanticDipole::new("a", vec![-0.5, 0.0], vec![0.5, 0.0], 0.5).unwrap();
        let bank = DipoleBank::new(2, 0.5, vec![a]).unwrap();
        let m = similarity_matrix(
            SimilarityMode::LinearDifference,
            &bank,
            &[vec![0.0, 0.0]],
            &[vec![vec![1.0, 1.0]]],
        )
        .unwrap();
        assert_eq!(m.items[0].size(), 1);
        assert!((m.items[0].get(0, 0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn mode_parsing() {
        for m in [
            SimilarityMode::DipoleField,
            SimilarityMode::LinearDifference,
            SimilarityMode::SinglePrompt(Pole::Plus),
            SimilarityMode::SinglePrompt(Pole::Minus),
        ] {
            assert_eq!(m.to_string().parse::<SimilarityMode>().unwrap(), m);
        }
        assert!("cosine".parse::<SimilarityMode>().is_err());
    }
}
