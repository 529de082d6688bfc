//! Adam over a flat parameter vector.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "learning rate {learning_rate} must be > 0"
            )));
        }
        Ok(Self {
            learning_rate,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps: DEFAULT_EPS,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        })
    }

    pub fn num_params(&self) -> usize {
        self.m.len()
    }

    /// One update. Entries with `frozen[i]` set are left bitwise unchanged and
    /// keep zero moments.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64], frozen: Option<&[bool]>) -> Result<()> {
        check_dim(self.m.len(), params.len())?;
        check_dim(self.m.len(), grad.len())?;
        if let Some(f) = frozen {
            check_dim(self.m.len(), f.len())?;
        }
        check_finite(grad, "gradient")?;
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - self.beta1.powf(t);
        let c2 = 1.0 - self.beta2.powf(t);
        for i in 0..params.len() {
            if frozen.is_some_and(|f| f[i]) {
                continue;
            }
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
