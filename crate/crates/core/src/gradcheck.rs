//! Central finite-difference check of the backpropagated gradient, run in
//! 64-bit arithmetic on a small configuration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::model::{forward, grad, init_params, loss_weighted_bce, ModelConfig, ModelParams};
use crate::targets::NUM_KEYS;

/// Gradient entries smaller than this in both routes are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

/// Central-difference half step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Standard deviation of the noise added to the initial parameters before
/// checking. At the raw initialisation many deep-layer gradients sit near
/// 1e-9, where finite differences are all noise.
pub const PARAM_JITTER: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// The configuration the gradient gate runs on: 4 frames of 16×16 with
/// 2×8×8 tubelets, width 16, two layers and two heads.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        frames: 4,
        resolution: 16,
        tubelet: 2,
        patch: 8,
        dim: 16,
        layers: 2,
        heads: 2,
        channels: 1,
        mlp_ratio: 4,
    }
}

/// A random batch: clips uniform in `[0, 1)`, targets drawn from {0, 0.5, 1}.
pub fn random_batch(cfg: &ModelConfig, batch: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clips = (0..batch)
        .map(|_| (0..cfg.clip_len()).map(|_| rng.random::<f64>()).collect())
        .collect();
    let targets = (0..batch)
        .map(|_| {
            (0..NUM_KEYS)
                .map(|_| [0.0, 0.0, 0.5, 1.0][rng.random_range(0..4)])
                .collect()
        })
        .collect();
    (clips, targets)
}

fn batch_loss(p: &ModelParams<f64>, clips: &[Vec<f64>], targets: &[Vec<f64>], w: f64) -> Result<f64> {
    let preds = forward(p, clips)?;
    let flat_p: Vec<f64> = preds.concat();
    let flat_t: Vec<f64> = targets.concat();
    Ok(loss_weighted_bce(&flat_p, &flat_t, w))
}

/// Compare every gradient entry against `(L(θ+h) − L(θ−h)) / 2h`. Relative
/// error is `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn check_gradients(
    cfg: &ModelConfig,
    seed: u64,
    batch: usize,
    class_weight: f64,
    step: f64,
) -> Result<GradCheckReport> {
    let mut params: ModelParams<f64> = init_params(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let noise = Normal::new(0.0, PARAM_JITTER).expect("valid std");
    params.data.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
    let (clips, targets) = random_batch(cfg, batch, seed ^ 0x5eed);
    let (_, analytic) = grad(&params, &clips, &targets, class_weight)?;

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    let mut probe = params.clone();
    for t in &params.layout.tensors {
        for i in t.range() {
            let orig = probe.data[i];
            probe.data[i] = orig + step;
            let up = batch_loss(&probe, &clips, &targets, class_weight)?;
            probe.data[i] = orig - step;
            let down = batch_loss(&probe, &clips, &targets, class_weight)?;
            probe.data[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.data[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_tensor = t.name.clone();
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn other_seed_passes_too() {
        let r = check_gradients(&tiny_config(), 3, 1, 1.0, DEFAULT_STEP).unwrap();
        assert_eq!(r.checked, init_params::<f64>(&tiny_config(), 0).unwrap().len());
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn random_batch_targets_are_labels() {
        let (clips, targets) = random_batch(&tiny_config(), 3, 1);
        assert_eq!(clips.len(), 3);
        assert!(clips.iter().all(|c| c.len() == tiny_config().clip_len()));
        assert!(targets.iter().flatten().all(|&t| t == 0.0 || t == 0.5 || t == 1.0));
    }
}
