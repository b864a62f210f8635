use crate::error::{Error, Result};

/// Warmup length in steps: `⌊warmup_frac · total⌋`.
pub fn warmup_steps(total_steps: u64, warmup_frac: f64) -> u64 {
    (warmup_frac * total_steps as f64).floor() as u64
}

/// Linear warmup from 0 to `base_lr`, then cosine decay to 0 at `total_steps`.
pub fn lr_schedule(step: u64, total_steps: u64, warmup_frac: f64, base_lr: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Config("total_steps must be positive".into()));
    }
    if !(0.0..=1.0).contains(&warmup_frac) {
        return Err(Error::Config(format!("warmup fraction {warmup_frac} outside [0, 1]")));
    }
    let step = step.min(total_steps);
    let warmup = warmup_steps(total_steps, warmup_frac);
    if step < warmup {
        return Ok(base_lr * step as f64 / warmup as f64);
    }
    if warmup == total_steps {
        return Ok(base_lr);
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}
