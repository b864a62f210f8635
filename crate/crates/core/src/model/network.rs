//! Forward pass and exact reverse-mode gradients of the tubelet video
//! transformer: tubelet embedding + learned positions → pre-norm encoder
//! blocks → token mean → LayerNorm → 88 sigmoid heads.

use super::config::ModelConfig;
use super::loss::{bce_logit_grad, loss_weighted_bce};
use super::params::{BlockOffsets, Gradients, ModelParams};
use super::scalar::{gemm, Mat, MatMut, Scalar};
use crate::error::{Error, Result};
use crate::par;
use crate::targets::NUM_KEYS;

const LN_EPS: f64 = 1e-6;

/// Flatten a `T × S × S × C` clip into one row per tubelet.
pub fn extract_tubelets<F: Scalar>(cfg: &ModelConfig, clip: &[F]) -> Vec<F> {
    let (t, p, s, c) = (cfg.tubelet, cfg.patch, cfg.resolution, cfg.channels);
    let g = cfg.patches_per_side();
    let row_len = cfg.tubelet_len();
    let mut out = vec![F::zero(); cfg.tokens() * row_len];
    for ti in 0..cfg.frames / t {
        for py in 0..g {
            for px in 0..g {
                let token = (ti * g + py) * g + px;
                let dst = &mut out[token * row_len..(token + 1) * row_len];
                let mut k = 0;
                for dt in 0..t {
                    let frame = ti * t + dt;
                    for dy in 0..p {
                        let y = py * p + dy;
                        let src = ((frame * s + y) * s + px * p) * c;
                        dst[k..k + p * c].copy_from_slice(&clip[src..src + p * c]);
                        k += p * c;
                    }
                }
            }
        }
    }
    out
}

struct NormCache<F> {
    xhat: Vec<F>,
    rstd: Vec<F>,
}

fn layer_norm<F: Scalar>(x: &[F], rows: usize, d: usize, g: &[F], b: &[F]) -> (Vec<F>, NormCache<F>) {
    let mut out = vec![F::zero(); rows * d];
    let mut xhat = vec![F::zero(); rows * d];
    let mut rstd = vec![F::zero(); rows];
    let inv_d = F::of(1.0 / d as f64);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<F>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
        let rs = F::one() / (var + F::of(LN_EPS)).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            out[r * d + j] = h * g[j] + b[j];
        }
    }
    (out, NormCache { xhat, rstd })
}

/// Returns the input gradient; accumulates gain/offset gradients.
fn layer_norm_back<F: Scalar>(
    dy: &[F],
    cache: &NormCache<F>,
    d: usize,
    g: &[F],
    dg: &mut [F],
    db: &mut [F],
) -> Vec<F> {
    let rows = cache.rstd.len();
    let mut dx = vec![F::zero(); rows * d];
    let inv_d = F::of(1.0 / d as f64);
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_dxh = F::zero();
        let mut mean_dxh_xh = F::zero();
        for j in 0..d {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
            let dxh = dyr[j] * g[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
        }
        mean_dxh *= inv_d;
        mean_dxh_xh *= inv_d;
        for j in 0..d {
            let dxh = dyr[j] * g[j];
            dx[r * d + j] = cache.rstd[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// `tanh` through a single `exp`; libm's `tanh` is several times slower and
/// dominated the MLP cost.
#[inline]
fn fast_tanh<F: Scalar>(u: F) -> F {
    let two = F::of(2.0);
    F::one() - two / (F::one() + (two * u).exp())
}

/// tanh approximation of GELU.
#[inline]
fn gelu<F: Scalar>(x: F) -> F {
    let u = F::of(GELU_C) * (x + F::of(GELU_A) * x * x * x);
    F::of(0.5) * x * (F::one() + fast_tanh(u))
}

#[inline]
fn gelu_grad<F: Scalar>(x: F) -> F {
    let u = F::of(GELU_C) * (x + F::of(GELU_A) * x * x * x);
    let th = fast_tanh(u);
    let du = F::of(GELU_C) * (F::one() + F::of(3.0 * GELU_A) * x * x);
    F::of(0.5) * (F::one() + th) + F::of(0.5) * x * (F::one() - th * th) * du
}

#[inline]
pub fn sigmoid<F: Scalar>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

fn add_bias<F: Scalar>(x: &mut [F], bias: &[F]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn col_sums_into<F: Scalar>(x: &[F], cols: usize, out: &mut [F]) {
    for row in x.chunks_exact(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// `x·W + b` for row-major `x: rows × k`, `W: k × n`.
fn linear<F: Scalar>(x: &[F], rows: usize, k: usize, w: &[F], b: &[F], n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); rows * n];
    gemm(F::one(), Mat::new(x, rows, k), Mat::new(w, k, n), F::zero(), MatMut::new(&mut out, rows, n));
    add_bias(&mut out, b);
    out
}

/// Backward of `linear`: accumulate `dW += xᵀ·dy`, `db += Σ dy`, return `dy·Wᵀ`.
#[allow(clippy::too_many_arguments)]
fn linear_back<F: Scalar>(
    x: &[F],
    dy: &[F],
    rows: usize,
    k: usize,
    n: usize,
    w: &[F],
    dw: &mut [F],
    db: &mut [F],
) -> Vec<F> {
    gemm(F::one(), Mat::new(x, rows, k).t(), Mat::new(dy, rows, n), F::one(), MatMut::new(dw, k, n));
    col_sums_into(dy, n, db);
    let mut dx = vec![F::zero(); rows * k];
    gemm(F::one(), Mat::new(dy, rows, n), Mat::new(w, k, n).t(), F::zero(), MatMut::new(&mut dx, rows, k));
    dx
}

struct BlockCache<F> {
    ln1: NormCache<F>,
    a: Vec<F>,
    qkv: Vec<F>,
    probs: Vec<F>,
    attn: Vec<F>,
    ln2: NormCache<F>,
    c: Vec<F>,
    hpre: Vec<F>,
    hact: Vec<F>,
}

/// Everything the backward pass needs from one sample's forward pass.
struct Trace<F> {
    tubelets: Vec<F>,
    blocks: Vec<BlockCache<F>>,
    norm: NormCache<F>,
    z: Vec<F>,
    logits: Vec<F>,
}

fn check_finite<F: Scalar>(v: &[F], what: impl FnOnce() -> String) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what()))
    }
}

fn slice<F>(p: &[F], off: usize, len: usize) -> &[F] {
    &p[off..off + len]
}

fn block_forward<F: Scalar>(
    cfg: &ModelConfig,
    p: &[F],
    o: &BlockOffsets,
    x: &mut [F],
) -> BlockCache<F> {
    let (n, d, m, h, dh) = (cfg.tokens(), cfg.dim, cfg.mlp_dim(), cfg.heads, cfg.head_dim());
    let (a, ln1) = layer_norm(x, n, d, slice(p, o.ln1_g, d), slice(p, o.ln1_b, d));
    let qkv = linear(&a, n, d, slice(p, o.wqkv, d * 3 * d), slice(p, o.bqkv, 3 * d), 3 * d);

    let scale = F::of(1.0 / (dh as f64).sqrt());
    let mut probs = vec![F::zero(); h * n * n];
    let mut attn = vec![F::zero(); n * d];
    for hh in 0..h {
        let pr = &mut probs[hh * n * n..(hh + 1) * n * n];
        let q = Mat::cols_of(&qkv, n, 3 * d, hh * dh, dh);
        let k = Mat::cols_of(&qkv, n, 3 * d, d + hh * dh, dh);
        gemm(scale, q, k.t(), F::zero(), MatMut::new(pr, n, n));
        for row in pr.chunks_exact_mut(n) {
            let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut sum = F::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum += *v;
            }
            let inv = F::one() / sum;
            row.iter_mut().for_each(|v| *v *= inv);
        }
        let v = Mat::cols_of(&qkv, n, 3 * d, 2 * d + hh * dh, dh);
        gemm(F::one(), Mat::new(pr, n, n), v, F::zero(), MatMut::cols_of(&mut attn, n, d, hh * dh, dh));
    }
    let proj = linear(&attn, n, d, slice(p, o.wo, d * d), slice(p, o.bo, d), d);
    x.iter_mut().zip(&proj).for_each(|(x, &y)| *x += y);

    let (c, ln2) = layer_norm(x, n, d, slice(p, o.ln2_g, d), slice(p, o.ln2_b, d));
    let hpre = linear(&c, n, d, slice(p, o.w1, d * m), slice(p, o.b1, m), m);
    let hact: Vec<F> = hpre.iter().map(|&v| gelu(v)).collect();
    let mlp = linear(&hact, n, m, slice(p, o.w2, m * d), slice(p, o.b2, d), d);
    x.iter_mut().zip(&mlp).for_each(|(x, &y)| *x += y);

    BlockCache {
        ln1,
        a,
        qkv,
        probs,
        attn,
        ln2,
        c,
        hpre,
        hact,
    }
}

fn forward_trace<F: Scalar>(params: &ModelParams<F>, clip: &[F]) -> Result<Trace<F>> {
    let cfg = &params.config;
    let lay = &params.layout;
    let p = &params.data;
    let (n, d, pl) = (cfg.tokens(), cfg.dim, cfg.tubelet_len());
    if clip.len() != cfg.clip_len() {
        return Err(Error::Shape(format!(
            "clip has {} values, config {cfg} expects {}",
            clip.len(),
            cfg.clip_len()
        )));
    }
    let tubelets = if params.input.is_identity() {
        extract_tubelets(cfg, clip)
    } else {
        let mut std_clip = clip.to_vec();
        params.input.apply(&mut std_clip);
        extract_tubelets(cfg, &std_clip)
    };
    let mut x = linear(&tubelets, n, pl, slice(p, lay.patch_w, pl * d), slice(p, lay.patch_b, d), d);
    x.iter_mut().zip(slice(p, lay.pos, n * d)).for_each(|(x, &e)| *x += e);
    check_finite(&x, || "patch embedding".into())?;

    let mut blocks = Vec::with_capacity(cfg.layers);
    for (l, o) in lay.blocks.iter().enumerate() {
        blocks.push(block_forward(cfg, p, o, &mut x));
        check_finite(&x, || format!("block {l}"))?;
    }

    let inv_n = F::of(1.0 / n as f64);
    let mut pooled = vec![F::zero(); d];
    col_sums_into(&x, d, &mut pooled);
    pooled.iter_mut().for_each(|v| *v *= inv_n);
    let (z, norm) = layer_norm(&pooled, 1, d, slice(p, lay.norm_g, d), slice(p, lay.norm_b, d));
    let logits = linear(&z, 1, d, slice(p, lay.head_w, d * NUM_KEYS), slice(p, lay.head_b, NUM_KEYS), NUM_KEYS);
    check_finite(&logits, || "heads".into())?;
    Ok(Trace {
        tubelets,
        blocks,
        norm,
        z,
        logits,
    })
}

fn block_backward<F: Scalar>(
    cfg: &ModelConfig,
    p: &[F],
    o: &BlockOffsets,
    cache: &BlockCache<F>,
    dx: &mut [F],
    g: &mut [F],
) {
    let (n, d, m, h, dh) = (cfg.tokens(), cfg.dim, cfg.mlp_dim(), cfg.heads, cfg.head_dim());

    // MLP branch; dx is the gradient of the residual stream after the block
    let dhact = {
        let (dw2, db2) = two_mut(g, o.w2, m * d, o.b2, d);
        linear_back(&cache.hact, dx, n, m, d, slice(p, o.w2, m * d), dw2, db2)
    };
    let dhpre: Vec<F> = dhact
        .iter()
        .zip(&cache.hpre)
        .map(|(&dg, &x)| dg * gelu_grad(x))
        .collect();
    let dc = {
        let (dw1, db1) = two_mut(g, o.w1, d * m, o.b1, m);
        linear_back(&cache.c, &dhpre, n, d, m, slice(p, o.w1, d * m), dw1, db1)
    };
    let dmid = {
        let (dg2, db2) = two_mut(g, o.ln2_g, d, o.ln2_b, d);
        layer_norm_back(&dc, &cache.ln2, d, slice(p, o.ln2_g, d), dg2, db2)
    };
    dx.iter_mut().zip(&dmid).for_each(|(a, &b)| *a += b);

    // attention branch
    let dattn = {
        let (dwo, dbo) = two_mut(g, o.wo, d * d, o.bo, d);
        linear_back(&cache.attn, dx, n, d, d, slice(p, o.wo, d * d), dwo, dbo)
    };
    let scale = F::of(1.0 / (dh as f64).sqrt());
    let mut dqkv = vec![F::zero(); n * 3 * d];
    let mut dp = vec![F::zero(); n * n];
    for hh in 0..h {
        let pr = &cache.probs[hh * n * n..(hh + 1) * n * n];
        let d_o = Mat::cols_of(&dattn, n, d, hh * dh, dh);
        let v = Mat::cols_of(&cache.qkv, n, 3 * d, 2 * d + hh * dh, dh);
        gemm(F::one(), d_o, v.t(), F::zero(), MatMut::new(&mut dp, n, n));
        gemm(
            F::one(),
            Mat::new(pr, n, n).t(),
            d_o,
            F::zero(),
            MatMut::cols_of(&mut dqkv, n, 3 * d, 2 * d + hh * dh, dh),
        );
        // softmax backward, in place: dS = P ⊙ (dP − rowsum(dP ⊙ P))
        for (dr, pr) in dp.chunks_exact_mut(n).zip(pr.chunks_exact(n)) {
            let dot: F = dr.iter().zip(pr).map(|(&a, &b)| a * b).sum();
            dr.iter_mut().zip(pr).for_each(|(a, &b)| *a = b * (*a - dot));
        }
        let q = Mat::cols_of(&cache.qkv, n, 3 * d, hh * dh, dh);
        let k = Mat::cols_of(&cache.qkv, n, 3 * d, d + hh * dh, dh);
        gemm(scale, Mat::new(&dp, n, n), k, F::zero(), MatMut::cols_of(&mut dqkv, n, 3 * d, hh * dh, dh));
        gemm(
            scale,
            Mat::new(&dp, n, n).t(),
            q,
            F::zero(),
            MatMut::cols_of(&mut dqkv, n, 3 * d, d + hh * dh, dh),
        );
    }
    let da = {
        let (dw, db) = two_mut(g, o.wqkv, d * 3 * d, o.bqkv, 3 * d);
        linear_back(&cache.a, &dqkv, n, d, 3 * d, slice(p, o.wqkv, d * 3 * d), dw, db)
    };
    let din = {
        let (dg1, db1) = two_mut(g, o.ln1_g, d, o.ln1_b, d);
        layer_norm_back(&da, &cache.ln1, d, slice(p, o.ln1_g, d), dg1, db1)
    };
    dx.iter_mut().zip(&din).for_each(|(a, &b)| *a += b);
}

/// Two disjoint mutable tensors of the flat buffer; `a` must precede `b`.
fn two_mut<F>(g: &mut [F], a: usize, alen: usize, b: usize, blen: usize) -> (&mut [F], &mut [F]) {
    assert!(a + alen <= b, "tensors must be ordered and disjoint");
    let (lo, hi) = g.split_at_mut(b);
    (&mut lo[a..a + alen], &mut hi[..blen])
}

/// Accumulate the gradient of one sample given `∂loss/∂logits`.
fn backward<F: Scalar>(params: &ModelParams<F>, trace: &Trace<F>, dlogits: &[F], g: &mut [F]) {
    let cfg = &params.config;
    let lay = &params.layout;
    let p = &params.data;
    let (n, d, pl) = (cfg.tokens(), cfg.dim, cfg.tubelet_len());

    let dz = {
        let (dw, db) = two_mut(g, lay.head_w, d * NUM_KEYS, lay.head_b, NUM_KEYS);
        linear_back(&trace.z, dlogits, 1, d, NUM_KEYS, slice(p, lay.head_w, d * NUM_KEYS), dw, db)
    };
    let dpooled = {
        let (dg, db) = two_mut(g, lay.norm_g, d, lay.norm_b, d);
        layer_norm_back(&dz, &trace.norm, d, slice(p, lay.norm_g, d), dg, db)
    };
    let inv_n = F::of(1.0 / n as f64);
    let mut dx: Vec<F> = (0..n * d).map(|i| dpooled[i % d] * inv_n).collect();

    for (o, cache) in lay.blocks.iter().zip(&trace.blocks).rev() {
        block_backward(cfg, p, o, cache, &mut dx, g);
    }

    g[lay.pos..lay.pos + n * d]
        .iter_mut()
        .zip(&dx)
        .for_each(|(a, &b)| *a += b);
    let (dw, db) = two_mut(g, lay.patch_w, pl * d, lay.patch_b, d);
    gemm(F::one(), Mat::new(&trace.tubelets, n, pl).t(), Mat::new(&dx, n, d), F::one(), MatMut::new(dw, pl, d));
    col_sums_into(&dx, d, db);
}

/// Pre-sigmoid head outputs for one clip.
pub fn logits<F: Scalar>(params: &ModelParams<F>, clip: &[F]) -> Result<Vec<F>> {
    forward_trace(params, clip).map(|t| t.logits)
}

/// Per-key onset likelihoods in `(0, 1)` for every clip in the batch.
pub fn forward<F: Scalar, C: AsRef<[F]> + Sync>(
    params: &ModelParams<F>,
    clips: &[C],
) -> Result<Vec<Vec<F>>> {
    par::map_slice(clips, |clip| {
        logits(params, clip.as_ref()).map(|z| z.into_iter().map(sigmoid).collect())
    })
    .into_iter()
    .collect()
}

/// Mean weighted BCE over the batch and its exact gradient.
pub fn grad<F: Scalar, C: AsRef<[F]> + Sync, T: AsRef<[F]> + Sync>(
    params: &ModelParams<F>,
    clips: &[C],
    targets: &[T],
    class_weight: f64,
) -> Result<(F, Gradients<F>)> {
    if clips.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} clips but {} targets",
            clips.len(),
            targets.len()
        )));
    }
    if clips.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    if let Some(t) = targets.iter().find(|t| t.as_ref().len() != NUM_KEYS) {
        return Err(Error::Shape(format!("target has {} entries, need {NUM_KEYS}", t.as_ref().len())));
    }
    let count = (clips.len() * NUM_KEYS) as f64;
    let w = F::of(class_weight);

    let per_sample = par::map_range(clips.len(), |i| -> Result<(F, Vec<F>)> {
        let trace = forward_trace(params, clips[i].as_ref())?;
        let target = targets[i].as_ref();
        let pred: Vec<F> = trace.logits.iter().map(|&z| sigmoid(z)).collect();
        let loss = loss_weighted_bce(&pred, target, class_weight) * F::of(NUM_KEYS as f64 / count);
        let dlogits: Vec<F> = pred
            .iter()
            .zip(target)
            .map(|(&yhat, &y)| bce_logit_grad(yhat, y, w) * F::of(1.0 / count))
            .collect();
        let mut g = vec![F::zero(); params.len()];
        backward(params, &trace, &dlogits, &mut g);
        Ok((loss, g))
    });

    let mut total = F::zero();
    let mut grads = params.zeros_like();
    for r in per_sample {
        let (loss, g) = r?;
        total += loss;
        grads.data.iter_mut().zip(&g).for_each(|(a, &b)| *a += b);
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    Ok((total, grads))
}
