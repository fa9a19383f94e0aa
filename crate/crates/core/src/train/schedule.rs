use crate::error::{bail, Result};

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at `total_steps`.
/// Both endpoints are returned exactly.
pub fn cosine_lr(step: u64, total_steps: u64, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total_steps == 0 {
        bail!(InvalidArgument, "cosine schedule needs at least one step");
    }
    if step > total_steps {
        bail!(InvalidArgument, "step {step} beyond schedule length {total_steps}");
    }
    if step == 0 {
        return Ok(lr_max);
    }
    if step == total_steps {
        return Ok(lr_min);
    }
    let phase = core::f64::consts::PI * step as f64 / total_steps as f64;
    Ok(lr_min + (lr_max - lr_min) * (1.0 + libm::cos(phase)) / 2.0)
}
