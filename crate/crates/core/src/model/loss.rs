use super::scalar::Scalar;

/// Predictions are clamped to `[EPS, 1 − EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

/// Mean over all elements of `−[w·y·ln ŷ + (1−y)·ln(1−ŷ)]`. The class weight
/// scales only the positive term, so a soft label `y = 0.5` contributes
/// `0.5·w` on the positive side.
pub fn loss_weighted_bce<F: Scalar>(pred: &[F], target: &[F], class_weight: f64) -> F {
    assert_eq!(pred.len(), target.len(), "prediction and target sizes differ");
    if pred.is_empty() {
        return F::zero();
    }
    let w = F::of(class_weight);
    let lo = F::of(EPS);
    let hi = F::one() - lo;
    let sum: F = pred
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            let p = p.max(lo).min(hi);
            -(w * y * p.ln() + (F::one() - y) * (F::one() - p).ln())
        })
        .sum();
    sum / F::of(pred.len() as f64)
}

/// Derivative of one element's loss with respect to its logit, given the
/// sigmoid output `p`: `p·(w·y + 1 − y) − w·y`. Zero where the clamp is active.
#[inline]
pub fn bce_logit_grad<F: Scalar>(p: F, y: F, w: F) -> F {
    let lo = F::of(EPS);
    if p < lo || p > F::one() - lo {
        return F::zero();
    }
    p * (w * y + F::one() - y) - w * y
}
