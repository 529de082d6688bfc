//! Fixed-step traversal of the latent warping fields.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::dipole::SemanticDipole;
use crate::encoder::SyntheticEncoder;
use crate::error::{check_dim, Error, Result};
use crate::io;
use crate::linalg::{guarded_cosine, norm, sub};
use crate::warp::LatentWarper;

/// Latent step length behind the default traversal lengths.
pub const DEFAULT_EPSILON: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "-")]
    Negative,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Positive => 1.0,
            Sign::Negative => -1.0,
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Positive => "+",
            Sign::Negative => "-",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraversalConfig {
    pub epsilon: f64,
    pub steps: usize,
    pub sign: Sign,
}

impl TraversalConfig {
    pub fn new(epsilon: f64, steps: usize, sign: Sign) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!("epsilon {epsilon} must be > 0")));
        }
        if steps == 0 {
            return Err(Error::InvalidParameter("steps must be >= 1".into()));
        }
        Ok(Self { epsilon, steps, sign })
    }

    /// Whole steps of size `epsilon` that fit in `length`; a trailing partial
    /// step is dropped, so `19.2` at `0.45` gives 42 steps.
    pub fn from_length(length: f64, epsilon: f64, sign: Sign) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::InvalidParameter(format!("length {length} must be > 0")));
        }
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!("epsilon {epsilon} must be > 0")));
        }
        // Tolerate representation error in exact multiples such as 28.8 / 0.45.
        let steps = (length / epsilon + 1e-9).floor() as usize;
        Self::new(epsilon, steps, sign)
    }

    pub fn length(&self) -> f64 {
        self.steps as f64 * self.epsilon
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraversalPath {
    pub path_id: String,
    pub path_index: usize,
    pub epsilon: f64,
    pub latents: Vec<Vec<f64>>,
    pub embeddings: Option<Vec<Vec<f64>>>,
    pub warp_values: Vec<f64>,
    pub stalled: bool,
}

impl TraversalPath {
    pub fn completed_steps(&self) -> usize {
        self.latents.len() - 1
    }

    pub fn length(&self) -> f64 {
        self.completed_steps() as f64 * self.epsilon
    }
}

/// Walks `z <- z + sign * eps * grad f_k(z) / |grad f_k(z)|` for up to
/// `config.steps` steps, stopping early (with `stalled` set) in flat regions.
pub fn traverse(
    warper: &LatentWarper,
    k: usize,
    z0: &[f64],
    config: &TraversalConfig,
    stall_tolerance: f64,
) -> Result<TraversalPath> {
    check_dim(warper.latent_dim(), z0.len())?;
    let mut latents = vec![z0.to_vec()];
    let mut warp_values = vec![warper.value(k, z0)?];
    let mut stalled = false;
    let step = config.sign.factor() * config.epsilon;
    for _ in 0..config.steps {
        let z = latents.last().unwrap();
        let dir = match warper.unit_direction(k, z, stall_tolerance) {
            Ok(d) => d,
            Err(Error::Stalled { .. }) => {
                stalled = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let next: Vec<f64> = z.iter().zip(&dir).map(|(zj, dj)| zj + step * dj).collect();
        warp_values.push(warper.value(k, &next)?);
        latents.push(next);
    }
    Ok(TraversalPath {
        path_id: format!("k{k}{}", config.sign),
        path_index: k,
        epsilon: config.epsilon,
        latents,
        embeddings: None,
        warp_values,
        stalled,
    })
}

pub fn embed_path(mut path: TraversalPath, encoder: &SyntheticEncoder) -> Result<TraversalPath> {
    let embeddings = path.latents.iter().map(|z| encoder.encode(z)).collect::<Result<Vec<_>>>()?;
    path.embeddings = Some(embeddings);
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathMetrics {
    /// Mean cosine between embedding steps and the dipole field gradient.
    pub alignment: f64,
    /// `|s_0 - s+| - |s_T - s+|`; positive when the path approaches `s+`.
    pub pole_gain: f64,
    /// Mean cosine between consecutive latent steps (`None` for one step).
    pub smoothness: Option<f64>,
}

pub fn path_metrics(path: &TraversalPath, dipole: &SemanticDipole) -> Result<PathMetrics> {
    let emb = path
        .embeddings
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("path has no embeddings".into()))?;
    if emb.len() < 2 {
        return Err(Error::InvalidParameter("path metrics need at least two points".into()));
    }
    let mut align = 0.0;
    for w in emb.windows(2) {
        let grad = dipole.field_gradient(&w[0])?;
        align += guarded_cosine(&sub(&w[1], &w[0]), &grad).0;
    }
    let alignment = align / (emb.len() - 1) as f64;
    let first = &emb[0];
    let last = emb.last().unwrap();
    let pole_gain = norm(&sub(first, dipole.s_plus())) - norm(&sub(last, dipole.s_plus()));
    let steps: Vec<Vec<f64>> = path.latents.windows(2).map(|w| sub(&w[1], &w[0])).collect();
    let smoothness = (steps.len() >= 2).then(|| {
        steps.windows(2).map(|w| guarded_cosine(&w[0], &w[1]).0).sum::<f64>()
            / (steps.len() - 1) as f64
    });
    Ok(PathMetrics { alignment, pole_gain, smoothness })
}

/// One line of the traversal JSONL stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub path_id: String,
    pub step: usize,
    pub z: Vec<f64>,
    pub s: Option<Vec<f64>>,
    pub f: f64,
}

pub fn write_path_jsonl<W: Write>(path: &TraversalPath, mut sink: W) -> Result<()> {
    for (i, (z, f)) in path.latents.iter().zip(&path.warp_values).enumerate() {
        let rec = StepRecord {
            path_id: path.path_id.clone(),
            step: i,
            z: z.clone(),
            s: path.embeddings.as_ref().map(|e| e[i].clone()),
            f: *f,
        };
        io::write_json_line(&mut sink, &rec)?;
    }
    Ok(())
}

/// Parses a JSONL stream, checking that each path's steps are contiguous from 0
/// and that vector dimensions are consistent within a path.
pub fn read_path_jsonl<R: BufRead>(source: R) -> Result<Vec<StepRecord>> {
    let mut out: Vec<StepRecord> = Vec::new();
    for line in source.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: StepRecord = serde_json::from_str(&line)?;
        let prev = out.iter().rev().find(|r| r.path_id == rec.path_id);
        let expected = prev.map_or(0, |p| p.step + 1);
        if rec.step != expected {
            return Err(Error::Validation(format!(
                "path `{}`: step {} follows {:?}",
                rec.path_id,
                rec.step,
                prev.map(|p| p.step)
            )));
        }
        if let Some(p) = prev {
            if p.z.len() != rec.z.len() || p.s.as_ref().map(Vec::len) != rec.s.as_ref().map(Vec::len) {
                return Err(Error::Validation(format!("path `{}`: dimension change", rec.path_id)));
            }
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::make_linear_encoder;
    use crate::warp::{init_warper, DEFAULT_STALL_TOLERANCE};

    #[test]
    fn lengths_from_paper_grid() {
        for (len, steps) in [(10.8, 24), (19.2, 42), (28.8, 64)] {
            let c = TraversalConfig::from_length(len, DEFAULT_EPSILON, Sign::Positive).unwrap();
            assert_eq!(c.steps, steps, "{len}");
        }
        let c = TraversalConfig::new(0.45, 24, Sign::Positive).unwrap();
        assert!((c.length() - 10.8).abs() < 1e-12);
        assert!(TraversalConfig::new(0.0, 3, Sign::Positive).is_err());
        assert!(TraversalConfig::from_length(0.1, 0.45, Sign::Positive).is_err());
    }

    #[test]
    fn steps_have_exact_length_and_signs_mirror() {
        let w = init_warper(5, 2, 3, 4, 1.0, 0.2).unwrap();
        let z0 = [0.3, -0.2, 0.5, 0.1, -0.7];
        let cfg = TraversalConfig::new(0.45, 24, Sign::Positive).unwrap();
        let p = traverse(&w, 1, &z0, &cfg, DEFAULT_STALL_TOLERANCE).unwrap();
        assert!(!p.stalled);
        assert_eq!(p.completed_steps(), 24);
        for s in p.latents.windows(2) {
            assert!((norm(&sub(&s[1], &s[0])) - 0.45).abs() < 1e-9);
        }
        let neg = traverse(&w, 1, &z0, &TraversalConfig { sign: Sign::Negative, ..cfg }, DEFAULT_STALL_TOLERANCE)
            .unwrap();
        let a = sub(&p.latents[1], &z0);
        let b = sub(&neg.latents[1], &z0);
        assert!(a.iter().zip(&b).all(|(x, y)| *x == -*y));
        assert_eq!(p.path_id, "k1+");
        assert_eq!(neg.path_id, "k1-");
    }

    #[test]
    fn stalled_start_keeps_only_origin() {
        let w = init_warper(3, 1, 2, 1, 1.0, 1.0).unwrap();
        let cfg = TraversalConfig::new(0.45, 10, Sign::Positive).unwrap();
        let p = traverse(&w, 0, &[1e3, 0.0, 0.0], &cfg, DEFAULT_STALL_TOLERANCE).unwrap();
        assert!(p.stalled);
        assert_eq!(p.latents.len(), 1);
        assert_eq!(p.length(), 0.0);
    }

    #[test]
    fn embedding_identity_and_linearity() {
        let w = init_warper(4, 1, 2, 3, 1.0, 0.3).unwrap();
        let cfg = TraversalConfig::new(0.2, 5, Sign::Positive).unwrap();
        let p = traverse(&w, 0, &[0.1, 0.2, -0.3, 0.4], &cfg, DEFAULT_STALL_TOLERANCE).unwrap();
        let eye = SyntheticEncoder::Linear {
            latent_dim: 4,
            embedding_dim: 4,
            orthonormal: true,
            seed: None,
            a: (0..4).map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect(),
        };
        let e = embed_path(p.clone(), &eye).unwrap();
        assert_eq!(e.embeddings.as_ref().unwrap(), &p.latents);
        let enc = make_linear_encoder(4, 6, 2, false).unwrap();
        let e = embed_path(p.clone(), &enc).unwrap();
        let emb = e.embeddings.unwrap();
        for t in 0..p.completed_steps() {
            let ds = sub(&emb[t + 1], &emb[t]);
            let mapped = enc.encode(&sub(&p.latents[t + 1], &p.latents[t])).unwrap();
            assert!(ds.iter().zip(&mapped).all(|(a, b)| (a - b).abs() < 1e-10));
        }
        let one = TraversalPath { latents: vec![p.latents[0].clone()], warp_values: vec![0.0], ..p };
        assert_eq!(embed_path(one, &enc).unwrap().embeddings.unwrap().len(), 1);
    }

    #[test]
    fn metrics_on_reference_paths() {
        let d = SemanticDipole::new("a", vec![-1.0, 0.0], vec![1.0, 0.0], 0.5).unwrap();
        let s_path = d.integrate_field(&[-0.5, 0.7], 0.1, 20).unwrap();
        let path = TraversalPath {
            path_id: "x".into(),
            path_index: 0,
            epsilon: 0.1,
            latents: s_path.clone(),
            embeddings: Some(s_path),
            warp_values: vec![0.0; 21],
            stalled: false,
        };
        let m = path_metrics(&path, &d).unwrap();
        assert!((m.alignment - 1.0).abs() < 1e-9);

        let line: Vec<Vec<f64>> = (0..=4).map(|i| vec![-1.0 + 0.5 * i as f64, 0.0]).collect();
        let path = TraversalPath { latents: line.clone(), embeddings: Some(line), ..path };
        let m = path_metrics(&path, &d).unwrap();
        assert!((m.pole_gain - 2.0).abs() < 1e-15);
        assert!((m.smoothness.unwrap() - 1.0).abs() < 1e-15);

        let single = TraversalPath { latents: vec![vec![0.0, 0.0]], embeddings: Some(vec![vec![0.0, 0.0]]), ..path };
        assert!(path_metrics(&single, &d).is_err());
    }

    #[test]
    fn jsonl_roundtrip_and_validation() {
        let w = init_warper(3, 1, 2, 3, 1.0, 0.3).unwrap();
        let cfg = TraversalConfig::new(0.45, 4, Sign::Negative).unwrap();
        let enc = make_linear_encoder(3, 2, 1, true).unwrap();
        let p = embed_path(traverse(&w, 0, &[0.5, 0.1, 0.2], &cfg, 1e-8).unwrap(), &enc).unwrap();
        let mut buf = Vec::new();
        write_path_jsonl(&p, &mut buf).unwrap();
        let recs = read_path_jsonl(buf.as_slice()).unwrap();
        assert_eq!(recs.len(), 5);
        assert_eq!(recs[3].z, p.latents[3]);
        let bad = String::from_utf8(buf).unwrap().replace("\"step\":2", "\"step\":7");
        assert!(read_path_jsonl(bad.as_bytes()).is_err());
        assert!(read_path_jsonl(r#"{"path_id":"a","step":0,"z":[1],"s":null,"f":0,"x":1}"#.as_bytes()).is_err());
    }
}
