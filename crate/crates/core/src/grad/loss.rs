use crate::error::{Error, Result};

use super::ensure_finite;

/// Two-class logit (or probability) vector.
pub type Logits = [f64; 2];

/// Probabilities are floored here before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Vectors with a smaller Euclidean norm are rejected by the cosine loss.
pub const NORM_EPS: f64 = 1e-12;

pub fn softmax(z: Logits) -> Logits {
    let m = z[0].max(z[1]);
    let e = [(z[0] - m).exp(), (z[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

/// Cross-entropy of `softmax(logits)` against a hard label, with its
/// gradient `softmax(logits) - onehot(label)`.
pub fn softmax_ce(logits: Logits, label: usize) -> Result<(f64, Logits)> {
    ensure_finite("logits", &logits)?;
    if label > 1 {
        return Err(Error::Param(format!("label must be 0 or 1, got {label}")));
    }
    let (hi, lo) = if logits[0] >= logits[1] { (0, 1) } else { (1, 0) };
    // log-sum-exp shifted by the max; ln_1p keeps tiny losses accurate
    let lse_shifted = (logits[lo] - logits[hi]).exp().ln_1p();
    let loss = lse_shifted + (logits[hi] - logits[label]);
    let p = softmax(logits);
    let mut grad = p;
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// `1 - cos(a, b)` with gradients with respect to both arguments.
pub fn cosine_distance_loss(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cosine operands differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    ensure_finite("cosine operand a", a)?;
    ensure_finite("cosine operand b", b)?;
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na <= NORM_EPS || nb <= NORM_EPS {
        return Err(Error::Numeric(format!(
            "degenerate vector for cosine distance (norms {na:e}, {nb:e})"
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let inv = 1.0 / (na * nb);
    let cos = dot * inv;
    let ga = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| -(y * inv - cos * x / (na * na)))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| -(x * inv - cos * y / (nb * nb)))
        .collect();
    // rounding can push |cos| a hair past 1
    Ok((1.0 - cos.clamp(-1.0, 1.0), ga, gb))
}

/// `KL(sg[p_c] ‖ p_d) + KL(p_d ‖ sg[p_c])` for two logit vectors.
///
/// The clean distribution is a constant: only the gradient with respect to
/// the degraded-path logits is returned, so no gradient can reach the clean
/// path through this term.
pub fn symmetric_kl_loss(logits_clean: Logits, logits_deg: Logits) -> Result<(f64, Logits)> {
    ensure_finite("clean logits", &logits_clean)?;
    ensure_finite("degraded logits", &logits_deg)?;
    let pc = softmax(logits_clean).map(|p| p.max(PROB_FLOOR));
    let pd_raw = softmax(logits_deg);
    let pd = pd_raw.map(|p| p.max(PROB_FLOOR));

    // KL(c‖d) + KL(d‖c) = Σ (p_c − p_d)(ln p_c − ln p_d)
    let loss: f64 = (0..2).map(|j| (pc[j] - pd[j]) * (pc[j].ln() - pd[j].ln())).sum();

    // ∂L/∂p_d; zero where the floor is active
    let mut g = [0.0; 2];
    for j in 0..2 {
        if pd_raw[j] > PROB_FLOOR {
            g[j] = (pd[j] / pc[j]).ln() - pc[j] / pd[j] + 1.0;
        }
    }
    // back through the softmax Jacobian
    let mean = pd_raw[0] * g[0] + pd_raw[1] * g[1];
    let grad = [pd_raw[0] * (g[0] - mean), pd_raw[1] * (g[1] - mean)];
    Ok((loss, grad))
}
