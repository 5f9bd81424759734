//! Scalar losses with exact analytic gradients, the AdamW optimizer, and a
//! central-difference gradient checker.
//!
//! Only the fixed computation graph of the paired objective is
//! differentiated; there is no general autodiff tape.

mod adamw;
mod check;
mod loss;

pub use adamw::{AdamW, AdamWState};
pub use check::{finite_diff_check, relative_error};
pub use loss::{
    cosine_distance_loss, softmax, softmax_ce, symmetric_kl_loss, Logits, PROB_FLOOR,
    NORM_EPS,
};

use crate::error::{Error, Result};

pub(crate) fn ensure_finite(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{name} contains non-finite values")))
    }
}
