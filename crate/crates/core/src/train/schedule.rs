use crate::error::{Error, Result};

/// Default exponent of the poly decay.
pub const POLY_POWER: f64 = 0.9;

/// `lr0·(1 − iter/max_iter)^power`.
pub fn poly_lr(iter: usize, max_iter: usize, lr0: f64, power: f64) -> Result<f64> {
    if max_iter == 0 || iter > max_iter {
        return Err(Error::InvalidArgument(format!(
            "poly_lr: iteration {iter} outside 0..={max_iter}"
        )));
    }
    Ok(lr0 * (1.0 - iter as f64 / max_iter as f64).powf(power))
}
