use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::ModelConfig;
use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Standard deviation of the truncated-normal weight init.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub init: InitKind,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wqkv: usize,
    pub bqkv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Offsets of every tensor inside the flat parameter buffer. Matrices are
/// row-major `in × out`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub patch_w: usize,
    pub patch_b: usize,
    pub pos: usize,
    pub blocks: Vec<BlockOffsets>,
    pub norm_g: usize,
    pub norm_b: usize,
    pub head_w: usize,
    pub head_b: usize,
    pub total: usize,
    pub tensors: Vec<TensorSpec>,
}

/// How a tensor is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    TruncNormal,
    Zeros,
    Ones,
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        let mut tensors = Vec::new();
        let mut total = 0;
        let mut add = |name: String, shape: Vec<usize>, init: InitKind| {
            let offset = total;
            total += shape.iter().product::<usize>();
            tensors.push(TensorSpec { name, shape, offset, init });
            offset
        };
        let (d, m) = (c.dim, c.mlp_dim());
        let patch_w = add("patch.w".into(), vec![c.tubelet_len(), d], InitKind::TruncNormal);
        let patch_b = add("patch.b".into(), vec![d], InitKind::Zeros);
        let pos = add("pos".into(), vec![c.tokens(), d], InitKind::TruncNormal);
        let blocks = (0..c.layers)
            .map(|l| {
                let mut t = |s: &str, shape: Vec<usize>, init| add(format!("block{l}.{s}"), shape, init);
                BlockOffsets {
                    ln1_g: t("ln1.g", vec![d], InitKind::Ones),
                    ln1_b: t("ln1.b", vec![d], InitKind::Zeros),
                    wqkv: t("attn.wqkv", vec![d, 3 * d], InitKind::TruncNormal),
                    bqkv: t("attn.bqkv", vec![3 * d], InitKind::Zeros),
                    wo: t("attn.wo", vec![d, d], InitKind::TruncNormal),
                    bo: t("attn.bo", vec![d], InitKind::Zeros),
                    ln2_g: t("ln2.g", vec![d], InitKind::Ones),
                    ln2_b: t("ln2.b", vec![d], InitKind::Zeros),
                    w1: t("mlp.w1", vec![d, m], InitKind::TruncNormal),
                    b1: t("mlp.b1", vec![m], InitKind::Zeros),
                    w2: t("mlp.w2", vec![m, d], InitKind::TruncNormal),
                    b2: t("mlp.b2", vec![d], InitKind::Zeros),
                }
            })
            .collect();
        let norm_g = add("norm.g".into(), vec![d], InitKind::Ones);
        let norm_b = add("norm.b".into(), vec![d], InitKind::Zeros);
        let head_w = add("head.w".into(), vec![d, c.outputs()], InitKind::TruncNormal);
        let head_b = add("head.b".into(), vec![c.outputs()], InitKind::Zeros);
        Layout {
            patch_w,
            patch_b,
            pos,
            blocks,
            norm_g,
            norm_b,
            head_w,
            head_b,
            total,
            tensors,
        }
    }
}

/// Fixed input standardization `(x - mean) * scale`, with `mean` one
/// `S × S × C` image shared by every frame. Set from training data, never
/// trained. An empty `mean` means zero.
#[derive(Clone, Debug, PartialEq)]
pub struct InputNorm {
    pub mean: Vec<f32>,
    pub scale: f32,
}

impl Default for InputNorm {
    fn default() -> Self {
        InputNorm { mean: Vec::new(), scale: 1.0 }
    }
}

impl InputNorm {
    pub fn is_identity(&self) -> bool {
        self.mean.is_empty() && self.scale == 1.0
    }

    /// Per-pixel mean over `frames` (each `S × S × C`) and the inverse of the
    /// pooled standard deviation around it.
    pub fn fit<'a>(frames: impl IntoIterator<Item = &'a [f32]>) -> Option<InputNorm> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for f in frames {
            if sum.is_empty() {
                sum = vec![0.0; f.len()];
                sq = vec![0.0; f.len()];
            }
            if f.len() != sum.len() {
                return None;
            }
            for ((s, q), &v) in sum.iter_mut().zip(&mut sq).zip(f) {
                *s += v as f64;
                *q += (v as f64) * (v as f64);
            }
            n += 1;
        }
        if n == 0 {
            return None;
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let var = sq.iter().zip(&mean).map(|(q, m)| (q / nf - m * m).max(0.0)).sum::<f64>() / mean.len() as f64;
        let std = var.sqrt().max(1e-3);
        Some(InputNorm {
            mean: mean.iter().map(|&m| m as f32).collect(),
            scale: (1.0 / std) as f32,
        })
    }

    /// Standardize a whole clip in place.
    pub fn apply<F: Scalar>(&self, clip: &mut [F]) {
        let scale = F::of(self.scale as f64);
        if self.mean.is_empty() {
            clip.iter_mut().for_each(|v| *v *= scale);
            return;
        }
        for frame in clip.chunks_mut(self.mean.len()) {
            for (v, &m) in frame.iter_mut().zip(&self.mean) {
                *v = (*v - F::of(m as f64)) * scale;
            }
        }
    }
}

/// Flat parameter (or gradient) buffer with its layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<F> {
    pub config: ModelConfig,
    pub layout: Layout,
    pub data: Vec<F>,
    pub input: InputNorm,
}

/// Gradients share the parameter layout.
pub type Gradients<F> = ModelParams<F>;

impl<F: Scalar> ModelParams<F> {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        Ok(ModelParams {
            config: *config,
            data: vec![F::zero(); layout.total],
            layout,
            input: InputNorm::default(),
        })
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            config: self.config,
            layout: self.layout.clone(),
            data: vec![F::zero(); self.data.len()],
            input: self.input.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[F]> {
        let t = self.layout.tensors.iter().find(|t| t.name == name)?;
        Some(&self.data[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [F]> {
        let t = self.layout.tensors.iter().find(|t| t.name == name)?.clone();
        Some(&mut self.data[t.range()])
    }

    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        ModelParams {
            config: self.config,
            layout: self.layout.clone(),
            data: self.data.iter().map(|v| G::of(v.as_f64())).collect(),
            input: self.input.clone(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.layout
            .tensors
            .iter()
            .find(|t| self.data[t.range()].iter().any(|v| !v.is_finite()))
            .map(|t| t.name.as_str())
    }
}

/// Truncated-normal (±2σ, σ = 0.02) weights, zero biases and norm offsets,
/// unit norm gains. Deterministic per seed.
pub fn init_params<F: Scalar>(config: &ModelConfig, seed: u64) -> Result<ModelParams<F>> {
    let mut p = ModelParams::<F>::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in p.layout.tensors.clone() {
        let slice = &mut p.data[t.range()];
        match t.init {
            InitKind::Zeros => {}
            InitKind::Ones => slice.iter_mut().for_each(|v| *v = F::one()),
            InitKind::TruncNormal => {
                for v in slice.iter_mut() {
                    let x = loop {
                        let z: f64 = rng.sample(StandardNormal);
                        if z.abs() <= 2.0 {
                            break z;
                        }
                    };
                    *v = F::of(x * INIT_STD);
                }
            }
        }
    }
    Ok(p)
}

const MAGIC: &[u8; 8] = b"PVTCKPT1";

/// Serialize as: magic, u32 LE header length, UTF-8 header (config keys, an
/// `input_scale` line, an optional `input_mean N` line, then one
/// `tensor NAME D0xD1…` line per tensor), then every tensor as f32 LE in
/// header order, then the `N` input mean values as f32 LE.
pub fn encode_checkpoint<F: Scalar>(params: &ModelParams<F>) -> Vec<u8> {
    let mut header = String::new();
    for (k, v) in params.config.to_kv() {
        header.push_str(&format!("{k}={v}\n"));
    }
    header.push_str(&format!("input_scale {:e}\n", params.input.scale));
    if !params.input.mean.is_empty() {
        header.push_str(&format!("input_mean {}\n", params.input.mean.len()));
    }
    for t in &params.layout.tensors {
        let shape: Vec<String> = t.shape.iter().map(usize::to_string).collect();
        header.push_str(&format!("tensor {} {}\n", t.name, shape.join("x")));
    }
    let mut out = Vec::with_capacity(12 + header.len() + params.data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in &params.data {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    for v in &params.input.mean {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint<F: Scalar>(bytes: &[u8]) -> Result<ModelParams<F>> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header = std::str::from_utf8(header).map_err(|_| Error::Checkpoint("header not UTF-8".into()))?;
    let mut kv = Vec::new();
    let mut tensors = Vec::new();
    let mut input = InputNorm::default();
    let mut mean_len = 0usize;
    for line in header.lines() {
        if let Some(v) = line.strip_prefix("input_scale ") {
            input.scale = v
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad input scale {line:?}")))?;
        } else if let Some(v) = line.strip_prefix("input_mean ") {
            mean_len = v
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad input mean {line:?}")))?;
        } else if let Some(rest) = line.strip_prefix("tensor ") {
            let (name, shape) = rest
                .split_once(' ')
                .ok_or_else(|| Error::Checkpoint(format!("bad tensor line {line:?}")))?;
            let shape: Vec<usize> = shape
                .split('x')
                .map(|d| d.parse().map_err(|_| Error::Checkpoint(format!("bad shape in {line:?}"))))
                .collect::<Result<_>>()?;
            tensors.push((name.to_string(), shape));
        } else if let Some((k, v)) = line.split_once('=') {
            let v: usize = v
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad config line {line:?}")))?;
            kv.push((k.to_string(), v));
        }
    }
    let config = ModelConfig::from_kv(&kv)?;
    let mut params = ModelParams::<F>::zeros(&config)?;
    if tensors.len() != params.layout.tensors.len()
        || tensors
            .iter()
            .zip(&params.layout.tensors)
            .any(|((n, s), t)| *n != t.name || *s != t.shape)
    {
        return Err(Error::Checkpoint("tensor table does not match the config".into()));
    }
    let body = &bytes[12 + hlen..];
    let expected = (params.data.len() + mean_len) * 4;
    if body.len() != expected {
        return Err(Error::Checkpoint(format!("expected {expected} weight bytes, found {}", body.len())));
    }
    let mut values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    for v in params.data.iter_mut() {
        *v = F::of(values.next().unwrap() as f64);
    }
    input.mean = values.collect();
    if !input.mean.is_empty() && input.mean.len() != config.frame_len() {
        return Err(Error::Checkpoint("input mean does not match the frame size".into()));
    }
    params.input = input;
    Ok(params)
}

pub fn save_checkpoint<F: Scalar>(path: &Path, params: &ModelParams<F>) -> Result<()> {
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<ModelParams<F>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
