//! Two-layer classifier head: `features → ReLU(hidden) → 2 logits`.
//!
//! All parameters live in one flat buffer so the optimizer can step them as a
//! single vector. Layout: `W1` (D×H, row = input feature), `b1` (H), `W2`
//! (H×2, row = hidden unit), `b2` (2).

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grad::Logits;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DCPTHEAD";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Scalar parameter count of a `dim → hidden → 2` head.
pub const fn param_count_for(dim: usize, hidden: usize) -> usize {
    dim * hidden + hidden + hidden * 2 + 2
}

/// Head weights, or a gradient with the same layout.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    dim: usize,
    hidden: usize,
    values: Vec<f64>,
}

impl HeadParams {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        HeadParams {
            dim,
            hidden,
            values: vec![0.0; param_count_for(dim, hidden)],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, dim: usize, hidden: usize) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::Param(format!(
                "head dimensions must be ≥ 1, got {dim}×{hidden}"
            )));
        }
        let mut p = HeadParams::zeros(dim, hidden);
        let lim1 = (6.0 / (dim + hidden) as f64).sqrt();
        for w in p.w1_mut() {
            *w = rng.random_range(-lim1..lim1);
        }
        let lim2 = (6.0 / (hidden + 2) as f64).sqrt();
        for w in p.w2_mut() {
            *w = rng.random_range(-lim2..lim2);
        }
        Ok(p)
    }

    pub fn from_values(dim: usize, hidden: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != param_count_for(dim, hidden) {
            return Err(Error::Shape(format!(
                "{} values for a {dim}×{hidden} head (need {})",
                values.len(),
                param_count_for(dim, hidden)
            )));
        }
        Ok(HeadParams { dim, hidden, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn offsets(&self) -> [usize; 4] {
        let (d, h) = (self.dim, self.hidden);
        [0, d * h, d * h + h, d * h + h + 2 * h]
    }

    pub fn w1(&self) -> &[f64] {
        let o = self.offsets();
        &self.values[o[0]..o[1]]
    }
    pub fn b1(&self) -> &[f64] {
        let o = self.offsets();
        &self.values[o[1]..o[2]]
    }
    pub fn w2(&self) -> &[f64] {
        let o = self.offsets();
        &self.values[o[2]..o[3]]
    }
    pub fn b2(&self) -> &[f64] {
        let o = self.offsets();
        &self.values[o[3]..]
    }
    pub fn w1_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.values[o[0]..o[1]]
    }
    pub fn b1_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.values[o[1]..o[2]]
    }
    pub fn w2_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.values[o[2]..o[3]]
    }
    pub fn b2_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.values[o[3]..]
    }

    fn check_feat(&self, feat: &[f64]) -> Result<()> {
        if feat.len() != self.dim {
            return Err(Error::Shape(format!(
                "feature length {} does not match head input {}",
                feat.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Returns the post-ReLU hidden activations and the logits.
    pub fn forward(&self, feat: &[f64]) -> Result<(Vec<f64>, Logits)> {
        self.check_feat(feat)?;
        let h = self.hidden;
        let mut hidden = self.b1().to_vec();
        for (&x, row) in feat.iter().zip(self.w1().chunks_exact(h)) {
            if x != 0.0 {
                for (acc, &w) in hidden.iter_mut().zip(row) {
                    *acc += x * w;
                }
            }
        }
        for v in hidden.iter_mut() {
            *v = v.max(0.0);
        }
        let b2 = self.b2();
        let mut logits = [b2[0], b2[1]];
        for (&a, w) in hidden.iter().zip(self.w2().chunks_exact(2)) {
            logits[0] += a * w[0];
            logits[1] += a * w[1];
        }
        Ok((hidden, logits))
    }

    /// Adds `scale ×` the parameter gradient into `acc` and returns the
    /// gradient with respect to the input features.
    ///
    /// `d_hidden` (upstream at the hidden layer) and `d_logits` are summed
    /// before the ReLU gate.
    pub fn backward_accumulate(
        &self,
        feat: &[f64],
        hidden: &[f64],
        d_hidden: Option<&[f64]>,
        d_logits: Logits,
        scale: f64,
        acc: &mut HeadParams,
    ) -> Result<Vec<f64>> {
        self.check_feat(feat)?;
        let h = self.hidden;
        if hidden.len() != h || d_hidden.is_some_and(|d| d.len() != h) {
            return Err(Error::Shape(format!("hidden signals must have length {h}")));
        }
        if acc.dim != self.dim || acc.hidden != h {
            return Err(Error::Shape(format!(
                "gradient buffer is {}×{}, head is {}×{h}",
                acc.dim, acc.hidden, self.dim
            )));
        }
        let dl = [d_logits[0] * scale, d_logits[1] * scale];

        let mut d_pre = vec![0.0; h];
        for (j, (dp, w)) in d_pre.iter_mut().zip(self.w2().chunks_exact(2)).enumerate() {
            if hidden[j] > 0.0 {
                let from_hidden = d_hidden.map_or(0.0, |d| d[j] * scale);
                *dp = from_hidden + w[0] * dl[0] + w[1] * dl[1];
            }
        }

        acc.b2_mut()[0] += dl[0];
        acc.b2_mut()[1] += dl[1];
        for (&a, g) in hidden.iter().zip(acc.w2_mut().chunks_exact_mut(2)) {
            g[0] += a * dl[0];
            g[1] += a * dl[1];
        }
        for (g, &dp) in acc.b1_mut().iter_mut().zip(&d_pre) {
            *g += dp;
        }
        for (&x, grow) in feat.iter().zip(acc.w1_mut().chunks_exact_mut(h)) {
            for (g, &dp) in grow.iter_mut().zip(&d_pre) {
                *g += x * dp;
            }
        }
        let d_feat = self
            .w1()
            .chunks_exact(h)
            .map(|row| row.iter().zip(&d_pre).map(|(w, dp)| w * dp).sum())
            .collect();
        Ok(d_feat)
    }

    /// Parameter gradient and feature gradient for the given upstream signals.
    pub fn backward(
        &self,
        feat: &[f64],
        hidden: &[f64],
        d_hidden: Option<&[f64]>,
        d_logits: Logits,
    ) -> Result<(HeadParams, Vec<f64>)> {
        let mut grad = HeadParams::zeros(self.dim, self.hidden);
        let d_feat = self.backward_accumulate(feat, hidden, d_hidden, d_logits, 1.0, &mut grad)?;
        Ok((grad, d_feat))
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.values.len() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.hidden as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 20 {
            return Err(format!("checkpoint truncated: {} header bytes", bytes.len()));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err("bad magic, expected DCPTHEAD".into());
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = u32_at(8);
        if version != CHECKPOINT_VERSION {
            return Err(format!(
                "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            ));
        }
        let (dim, hidden) = (u32_at(12) as usize, u32_at(16) as usize);
        let n = param_count_for(dim, hidden);
        let body = &bytes[20..];
        if body.len() != n * 8 {
            return Err(format!(
                "checkpoint body is {} bytes, expected {} for a {dim}×{hidden} head",
                body.len(),
                n * 8
            ));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err("checkpoint contains non-finite parameters".into());
        }
        Ok(HeadParams { dim, hidden, values })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        HeadParams::from_checkpoint_bytes(&bytes).map_err(|m| Error::format(path, m))
    }
}
