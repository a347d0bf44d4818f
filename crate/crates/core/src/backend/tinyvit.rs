//! Forward-only 3D ViT with SAM-style prompt encoder and mask decoder.
//!
//! Weights are drawn from a seeded generator; nothing is trained. The model
//! exists to exercise shapes, caching and numerical invariants at the real
//! patch geometry.
//!
//! Encoder: non-overlapping patch embedding, optional learned position
//! embedding, `depth` pre-norm blocks (multi-head self-attention + GELU MLP),
//! final layer norm.
//!
//! Prompt encoder: each point becomes a token `label_embed + PE(xyz)`; a 2D
//! box becomes two corner tokens `(x0,y0,z)` and `(x1,y1,z)`, i.e. a zero
//! thickness plane on its slice. `PE` is a random Fourier encoding. A prior
//! mask is average-pooled onto the token grid and added to image tokens
//! along a learned direction.
//!
//! Decoder: prompt tokens cross-attend to image tokens (queries carry
//! `PE(prompt)`, keys carry `PE(cell)`), pass through an MLP, and each image
//! token is scored by a per-token linear head dotted with the prompt output,
//! plus a Fourier affinity term between prompt and cell positions. Token
//! logits are trilinearly upsampled to the input shape.

use std::f32::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::resample_trilinear;
use crate::prompts::{PointLabel, PromptSet};
use crate::volume::{IntensityVolume, Shape, Volume, VolumeMeta};

use super::weights::Tensor;
use super::{logits_from, Backend, ImageFeatures, LogitVolume, ModelConfig};

const LN_EPS: f32 = 1e-5;
const INIT_STD: f32 = 0.02;
const FOURIER_SCALE: f32 = 2.0;
const MLP_RATIO: usize = 4;

#[derive(Clone, Debug)]
struct Linear {
    weight: Tensor, // [out, in]
    bias: Tensor,   // [out]
}

impl Linear {
    fn new(out: usize, inp: usize) -> Self {
        Linear {
            weight: Tensor::zeros(vec![out, inp]),
            bias: Tensor::zeros(vec![out]),
        }
    }

    fn out_dim(&self) -> usize {
        self.weight.shape[0]
    }

    fn apply_into(&self, x: &[f32], y: &mut [f32]) {
        let inp = self.weight.shape[1];
        debug_assert_eq!(x.len(), inp);
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.weight.data[o * inp..(o + 1) * inp];
            *yo = self.bias.data[o] + dot(row, x);
        }
    }

    fn apply(&self, x: &[f32]) -> Vec<f32> {
        let mut y = vec![0.0; self.out_dim()];
        self.apply_into(x, &mut y);
        y
    }

    /// Applies the layer to every row of a row-major `[n, in]` matrix.
    fn apply_rows(&self, x: &[f32]) -> Vec<f32> {
        let inp = self.weight.shape[1];
        let out = self.out_dim();
        let n = x.len() / inp;
        let mut y = vec![0.0; n * out];
        y.par_chunks_mut(out)
            .zip(x.par_chunks(inp))
            .for_each(|(yr, xr)| self.apply_into(xr, yr));
        y
    }
}

#[derive(Clone, Debug)]
struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
}

impl LayerNorm {
    fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Tensor::filled(vec![dim], 1.0),
            beta: Tensor::zeros(vec![dim]),
        }
    }

    fn apply(&self, x: &[f32]) -> Vec<f32> {
        let n = x.len() as f32;
        let mean = x.iter().sum::<f32>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        x.iter()
            .zip(&self.gamma.data)
            .zip(&self.beta.data)
            .map(|((v, g), b)| (v - mean) * inv * g + b)
            .collect()
    }

    fn apply_rows(&self, x: &[f32]) -> Vec<f32> {
        let dim = self.gamma.data.len();
        x.par_chunks(dim).flat_map_iter(|r| self.apply(r)).collect()
    }
}

#[derive(Clone, Debug)]
struct Block {
    ln1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Clone, Debug)]
struct Decoder {
    norm_q: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    norm_mlp: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    head_proj: Linear,
    head_hyper: Linear,
    /// Scalar weight of the prompt/cell Fourier affinity.
    head_affinity: Tensor,
    head_bias: Tensor,
}

/// Row-sum statistics of every softmax attention matrix evaluated.
#[derive(Clone, Debug, Default)]
pub struct AttentionStats {
    pub rows: usize,
    pub max_row_sum_error: f32,
}

impl AttentionStats {
    fn record(&mut self, row_sum: f32) {
        self.rows += 1;
        self.max_row_sum_error = self.max_row_sum_error.max((row_sum - 1.0).abs());
    }

    fn merge(&mut self, other: &AttentionStats) {
        self.rows += other.rows;
        self.max_row_sum_error = self.max_row_sum_error.max(other.max_row_sum_error);
    }
}

/// Lists every parameter of a `TinyVit` binding as `(name, &[mut] Tensor)`.
macro_rules! tensor_refs {
    ($m:ident $(, $mu:ident)?) => {{
        let mut out: Vec<(String, & $($mu)? Tensor)> = vec![
            ("patch_embed.weight".into(), & $($mu)? $m.patch_embed.weight),
            ("patch_embed.bias".into(), & $($mu)? $m.patch_embed.bias),
            ("pos_embed".into(), & $($mu)? $m.pos_embed),
        ];
        for (i, b) in (& $($mu)? $m.blocks).into_iter().enumerate() {
            let p = format!("blocks.{i}");
            out.extend([
                (format!("{p}.ln1.gamma"), & $($mu)? b.ln1.gamma),
                (format!("{p}.ln1.beta"), & $($mu)? b.ln1.beta),
                (format!("{p}.qkv.weight"), & $($mu)? b.qkv.weight),
                (format!("{p}.qkv.bias"), & $($mu)? b.qkv.bias),
                (format!("{p}.proj.weight"), & $($mu)? b.proj.weight),
                (format!("{p}.proj.bias"), & $($mu)? b.proj.bias),
                (format!("{p}.ln2.gamma"), & $($mu)? b.ln2.gamma),
                (format!("{p}.ln2.beta"), & $($mu)? b.ln2.beta),
                (format!("{p}.fc1.weight"), & $($mu)? b.fc1.weight),
                (format!("{p}.fc1.bias"), & $($mu)? b.fc1.bias),
                (format!("{p}.fc2.weight"), & $($mu)? b.fc2.weight),
                (format!("{p}.fc2.bias"), & $($mu)? b.fc2.bias),
            ]);
        }
        let d = & $($mu)? $m.decoder;
        out.extend([
            ("enc_norm.gamma".into(), & $($mu)? $m.enc_norm.gamma),
            ("enc_norm.beta".into(), & $($mu)? $m.enc_norm.beta),
            ("prompt.fourier".into(), & $($mu)? $m.fourier),
            ("prompt.label_embed".into(), & $($mu)? $m.label_embed),
            ("prompt.corner_embed".into(), & $($mu)? $m.corner_embed),
            ("prompt.mask_embed".into(), & $($mu)? $m.mask_embed),
            ("decoder.norm_q.gamma".into(), & $($mu)? d.norm_q.gamma),
            ("decoder.norm_q.beta".into(), & $($mu)? d.norm_q.beta),
            ("decoder.q.weight".into(), & $($mu)? d.q.weight),
            ("decoder.q.bias".into(), & $($mu)? d.q.bias),
            ("decoder.k.weight".into(), & $($mu)? d.k.weight),
            ("decoder.k.bias".into(), & $($mu)? d.k.bias),
            ("decoder.v.weight".into(), & $($mu)? d.v.weight),
            ("decoder.v.bias".into(), & $($mu)? d.v.bias),
            ("decoder.out.weight".into(), & $($mu)? d.out.weight),
            ("decoder.out.bias".into(), & $($mu)? d.out.bias),
            ("decoder.norm_mlp.gamma".into(), & $($mu)? d.norm_mlp.gamma),
            ("decoder.norm_mlp.beta".into(), & $($mu)? d.norm_mlp.beta),
            ("decoder.fc1.weight".into(), & $($mu)? d.fc1.weight),
            ("decoder.fc1.bias".into(), & $($mu)? d.fc1.bias),
            ("decoder.fc2.weight".into(), & $($mu)? d.fc2.weight),
            ("decoder.fc2.bias".into(), & $($mu)? d.fc2.bias),
            ("decoder.head_proj.weight".into(), & $($mu)? d.head_proj.weight),
            ("decoder.head_proj.bias".into(), & $($mu)? d.head_proj.bias),
            ("decoder.head_hyper.weight".into(), & $($mu)? d.head_hyper.weight),
            ("decoder.head_hyper.bias".into(), & $($mu)? d.head_hyper.bias),
            ("decoder.head_affinity".into(), & $($mu)? d.head_affinity),
            ("decoder.head_bias".into(), & $($mu)? d.head_bias),
        ]);
        out
    }};
}

/// Seeded, forward-only tiny 3D ViT.
#[derive(Clone, Debug)]
pub struct TinyVit {
    cfg: ModelConfig,
    patch_embed: Linear,
    pos_embed: Tensor, // [tokens, C]
    blocks: Vec<Block>,
    enc_norm: LayerNorm,
    fourier: Tensor,      // [3, C/2]
    label_embed: Tensor,  // [2, C]: positive, negative
    corner_embed: Tensor, // [2, C]
    mask_embed: Tensor,   // [C]
    decoder: Decoder,
}

impl TinyVit {
    /// Builds the architecture with zeroed parameters.
    fn skeleton(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.embed_dim;
        let patch_len: usize = cfg.patch.iter().product();
        let blocks = (0..cfg.depth)
            .map(|_| Block {
                ln1: LayerNorm::new(c),
                qkv: Linear::new(3 * c, c),
                proj: Linear::new(c, c),
                ln2: LayerNorm::new(c),
                fc1: Linear::new(MLP_RATIO * c, c),
                fc2: Linear::new(c, MLP_RATIO * c),
            })
            .collect();
        Ok(TinyVit {
            cfg: cfg.clone(),
            patch_embed: Linear::new(c, patch_len),
            pos_embed: Tensor::zeros(vec![cfg.token_count(), c]),
            blocks,
            enc_norm: LayerNorm::new(c),
            fourier: Tensor::zeros(vec![3, c / 2]),
            label_embed: Tensor::zeros(vec![2, c]),
            corner_embed: Tensor::zeros(vec![2, c]),
            mask_embed: Tensor::zeros(vec![c]),
            decoder: Decoder {
                norm_q: LayerNorm::new(c),
                q: Linear::new(c, c),
                k: Linear::new(c, c),
                v: Linear::new(c, c),
                out: Linear::new(c, c),
                norm_mlp: LayerNorm::new(c),
                fc1: Linear::new(MLP_RATIO * c, c),
                fc2: Linear::new(c, MLP_RATIO * c),
                head_proj: Linear::new(c, c),
                head_hyper: Linear::new(c, c),
                head_affinity: Tensor::zeros(vec![1]),
                head_bias: Tensor::zeros(vec![1]),
            },
        })
    }

    /// Random initialization from `cfg.seed`.
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        let mut model = Self::skeleton(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let small = Normal::new(0.0f32, INIT_STD).expect("valid std");
        let unit = Normal::new(0.0f32, 1.0).expect("valid std");
        for (name, t) in model.named_tensors_mut() {
            // layer-norm and bias parameters keep their skeleton values
            if name.ends_with(".gamma") || name.ends_with(".beta") || name.ends_with(".bias") {
                continue;
            }
            let dist = match name.as_str() {
                "prompt.fourier"
                | "prompt.label_embed"
                | "prompt.corner_embed"
                | "prompt.mask_embed" => unit,
                "decoder.head_affinity" => {
                    t.data[0] = 1.0;
                    continue;
                }
                _ => small,
            };
            t.data.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
        }
        model
            .fourier
            .data
            .iter_mut()
            .for_each(|v| *v *= FOURIER_SCALE);
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Every parameter tensor with a stable dotted name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let m = self;
        tensor_refs!(m)
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let m = self;
        tensor_refs!(m, mut)
    }

    /// Builds a model from externally supplied tensors; every parameter must
    /// be present with the shape implied by `cfg`.
    pub fn from_tensors(
        cfg: &ModelConfig,
        mut tensors: std::collections::BTreeMap<String, Tensor>,
    ) -> Result<Self> {
        let mut model = Self::skeleton(cfg)?;
        for (name, slot) in model.named_tensors_mut() {
            let t = tensors
                .remove(&name)
                .ok_or_else(|| Error::Weights(format!("missing tensor {name}")))?;
            if t.shape != slot.shape {
                return Err(Error::Weights(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape, slot.shape
                )));
            }
            *slot = t;
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Weights(format!("unexpected tensor {extra}")));
        }
        Ok(model)
    }

    /// Sets the decoder head to zero so every logit is exactly zero.
    pub fn zero_head(&mut self) {
        let d = &mut self.decoder;
        for t in [
            &mut d.head_proj.weight,
            &mut d.head_proj.bias,
            &mut d.head_hyper.weight,
            &mut d.head_hyper.bias,
            &mut d.head_affinity,
            &mut d.head_bias,
        ] {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn check_input(&self, v: &IntensityVolume) -> Result<()> {
        if v.shape() != self.cfg.input_shape {
            return Err(Error::ShapeMismatch {
                expected: self.cfg.input_shape,
                actual: v.shape(),
            });
        }
        Ok(())
    }

    /// Flattens non-overlapping patches; tokens x-fastest, voxels within a patch x-fastest.
    fn patchify(&self, v: &IntensityVolume) -> Vec<f32> {
        let [gx, gy, gz] = self.cfg.token_grid();
        let [px, py, pz] = self.cfg.patch;
        let mut out = Vec::with_capacity(v.data().len());
        for tz in 0..gz {
            for ty in 0..gy {
                for tx in 0..gx {
                    for dz in 0..pz {
                        for dy in 0..py {
                            for dx in 0..px {
                                out.push(v.get([tx * px + dx, ty * py + dy, tz * pz + dz]));
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Image encoder; also returns attention row-sum statistics.
    pub fn encode_with_stats(
        &self,
        v: &IntensityVolume,
    ) -> Result<(ImageFeatures, AttentionStats)> {
        self.check_input(v)?;
        let c = self.cfg.embed_dim;
        let mut x = self.patch_embed.apply_rows(&self.patchify(v));
        if self.cfg.pos_embed {
            x.iter_mut()
                .zip(&self.pos_embed.data)
                .for_each(|(a, p)| *a += p);
        }
        let mut stats = AttentionStats::default();
        for b in &self.blocks {
            let h = b.ln1.apply_rows(&x);
            let qkv = b.qkv.apply_rows(&h);
            let n = x.len() / c;
            let (q, k, vv) = split_qkv(&qkv, n, c);
            let (att, s) = multi_head_attention(&q, &k, &vv, c, self.cfg.heads);
            stats.merge(&s);
            let att = b.proj.apply_rows(&att);
            x.iter_mut().zip(&att).for_each(|(a, d)| *a += d);
            let h = b.ln2.apply_rows(&x);
            let mut m = b.fc1.apply_rows(&h);
            m.par_iter_mut().for_each(|v| *v = gelu(*v));
            let m = b.fc2.apply_rows(&m);
            x.iter_mut().zip(&m).for_each(|(a, d)| *a += d);
        }
        let x = self.enc_norm.apply_rows(&x);
        Ok((
            ImageFeatures {
                grid: self.cfg.token_grid(),
                dim: c,
                data: x,
                input_shape: self.cfg.input_shape,
                fingerprint: None,
            },
            stats,
        ))
    }

    /// Random Fourier encoding of a position normalized to `[0,1]^3`.
    fn fourier_pe(&self, u: [f32; 3]) -> Vec<f32> {
        let half = self.cfg.embed_dim / 2;
        let g = &self.fourier.data;
        let mut out = vec![0.0; 2 * half];
        for j in 0..half {
            let arg: f32 = (0..3)
                .map(|a| (2.0 * u[a] - 1.0) * g[a * half + j])
                .sum::<f32>()
                * 2.0
                * PI;
            out[j] = arg.sin();
            out[half + j] = arg.cos();
        }
        out
    }

    fn voxel_pe(&self, p: [usize; 3]) -> Vec<f32> {
        let s = self.cfg.input_shape;
        self.fourier_pe([0, 1, 2].map(|a| (p[a] as f32 + 0.5) / s[a] as f32))
    }

    fn dense_pe(&self) -> Vec<f32> {
        let [gx, gy, gz] = self.cfg.token_grid();
        let mut out = Vec::with_capacity(gx * gy * gz * self.cfg.embed_dim);
        for z in 0..gz {
            for y in 0..gy {
                for x in 0..gx {
                    out.extend(self.fourier_pe([
                        (x as f32 + 0.5) / gx as f32,
                        (y as f32 + 0.5) / gy as f32,
                        (z as f32 + 0.5) / gz as f32,
                    ]));
                }
            }
        }
        out
    }

    /// Prompt tokens as (content embedding, positional encoding, sign).
    fn prompt_tokens(&self, ps: &PromptSet) -> Vec<(Vec<f32>, Vec<f32>, f32)> {
        let c = self.cfg.embed_dim;
        let row = |t: &Tensor, i: usize| t.data[i * c..(i + 1) * c].to_vec();
        let mut out = Vec::new();
        if let Some(b) = &ps.bbox {
            let [x0, y0, x1, y1] = b.rect;
            out.push((
                row(&self.corner_embed, 0),
                self.voxel_pe([x0, y0, b.slice_z]),
                1.0,
            ));
            out.push((
                row(&self.corner_embed, 1),
                self.voxel_pe([x1, y1, b.slice_z]),
                1.0,
            ));
        }
        for p in &ps.points {
            let (idx, sign) = match p.label {
                PointLabel::Positive => (0, 1.0),
                PointLabel::Negative => (1, -1.0),
            };
            out.push((row(&self.label_embed, idx), self.voxel_pe(p.pos), sign));
        }
        out
    }

    /// Decoder at token-grid resolution; also returns attention statistics.
    pub fn decode_tokens(
        &self,
        f: &ImageFeatures,
        ps: &PromptSet,
    ) -> Result<(Vec<f32>, AttentionStats)> {
        let c = self.cfg.embed_dim;
        if f.grid != self.cfg.token_grid() || f.dim != c {
            return Err(Error::ShapeMismatch {
                expected: self.cfg.token_grid(),
                actual: f.grid,
            });
        }
        let mut check = ps.clone();
        check.prior_mask = None;
        check.validate(self.cfg.input_shape)?;

        let n = f.token_count();
        let mut img = f.data.clone();
        if let Some(m) = &ps.prior_mask {
            if m.shape() != self.cfg.input_shape {
                return Err(Error::ShapeMismatch {
                    expected: self.cfg.input_shape,
                    actual: m.shape(),
                });
            }
            let pooled = self.pool_mask(m.data());
            img.par_chunks_mut(c).zip(&pooled).for_each(|(tok, &w)| {
                tok.iter_mut()
                    .zip(&self.mask_embed.data)
                    .for_each(|(t, e)| *t += w * e);
            });
        }
        let dense = self.dense_pe();
        let keys_in: Vec<f32> = img.iter().zip(&dense).map(|(a, b)| a + b).collect();
        let d = &self.decoder;
        let k = d.k.apply_rows(&keys_in);
        let v = d.v.apply_rows(&img);

        let tokens = self.prompt_tokens(ps);
        let mut q = Vec::with_capacity(tokens.len() * c);
        for (content, pe, _) in &tokens {
            let t: Vec<f32> = content.iter().zip(pe).map(|(a, b)| a + b).collect();
            q.extend(d.q.apply(&d.norm_q.apply(&t)));
        }
        let (att, stats) = multi_head_attention(&q, &k, &v, c, self.cfg.heads);
        let hyper: Vec<Vec<f32>> = tokens
            .iter()
            .enumerate()
            .map(|(i, (content, _, _))| {
                let delta = d.out.apply(&att[i * c..(i + 1) * c]);
                let u: Vec<f32> = content.iter().zip(&delta).map(|(a, b)| a + b).collect();
                let mut m = d.fc1.apply(&d.norm_mlp.apply(&u));
                m.iter_mut().for_each(|x| *x = gelu(*x));
                let m = d.fc2.apply(&m);
                let u: Vec<f32> = u.iter().zip(&m).map(|(a, b)| a + b).collect();
                d.head_hyper.apply(&u)
            })
            .collect();

        let proj = d.head_proj.apply_rows(&img);
        let scale = 1.0 / (c as f32).sqrt();
        let aff = d.head_affinity.data[0] / (c / 2) as f32;
        let inv_n = 1.0 / tokens.len() as f32;
        let logits: Vec<f32> = (0..n)
            .into_par_iter()
            .map(|t| {
                let pt = &proj[t * c..(t + 1) * c];
                let pe = &dense[t * c..(t + 1) * c];
                let s: f32 = tokens
                    .iter()
                    .zip(&hyper)
                    .map(|((_, ppe, sign), h)| sign * (dot(pt, h) * scale + aff * dot(ppe, pe)))
                    .sum();
                d.head_bias.data[0] + s * inv_n
            })
            .collect();
        Ok((logits, stats))
    }

    fn pool_mask(&self, mask: &[u8]) -> Vec<f32> {
        let [gx, gy, gz] = self.cfg.token_grid();
        let [px, py, pz] = self.cfg.patch;
        let [nx, ny, _] = self.cfg.input_shape;
        let per = (px * py * pz) as f32;
        let mut out = Vec::with_capacity(gx * gy * gz);
        for tz in 0..gz {
            for ty in 0..gy {
                for tx in 0..gx {
                    let mut s = 0u32;
                    for dz in 0..pz {
                        for dy in 0..py {
                            let row = nx * (ty * py + dy + ny * (tz * pz + dz)) + tx * px;
                            s += mask[row..row + px].iter().map(|&b| b as u32).sum::<u32>();
                        }
                    }
                    out.push(s as f32 / per);
                }
            }
        }
        out
    }

    fn upsample(&self, token_logits: Vec<f32>) -> LogitVolume {
        let grid = self.cfg.token_grid();
        let coarse = Volume::from_parts_unchecked(VolumeMeta::new(grid), token_logits);
        let fine = resample_trilinear(&coarse, self.cfg.input_shape);
        logits_from(self.cfg.input_shape, fine.into_data())
    }
}

impl Backend for TinyVit {
    fn name(&self) -> &str {
        "tinyvit"
    }

    fn required_shape(&self) -> Option<Shape> {
        Some(self.cfg.input_shape)
    }

    fn encode(&self, volume: &IntensityVolume) -> Result<ImageFeatures> {
        Ok(self.encode_with_stats(volume)?.0)
    }

    fn decode(&self, features: &ImageFeatures, prompts: &PromptSet) -> Result<LogitVolume> {
        let (tokens, _) = self.decode_tokens(features, prompts)?;
        Ok(self.upsample(tokens))
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gelu(x: f32) -> f32 {
    let x = x as f64;
    (0.5 * x * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2))) as f32
}

fn split_qkv(qkv: &[f32], n: usize, c: usize) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let mut q = Vec::with_capacity(n * c);
    let mut k = Vec::with_capacity(n * c);
    let mut v = Vec::with_capacity(n * c);
    for row in qkv.chunks(3 * c) {
        q.extend_from_slice(&row[..c]);
        k.extend_from_slice(&row[c..2 * c]);
        v.extend_from_slice(&row[2 * c..]);
    }
    (q, k, v)
}

/// `softmax(QKᵀ/√d)·V` per head. Inputs are row-major `[rows, c]` with heads
/// occupying contiguous channel groups.
fn multi_head_attention(
    q: &[f32],
    k: &[f32],
    v: &[f32],
    c: usize,
    heads: usize,
) -> (Vec<f32>, AttentionStats) {
    let dh = c / heads;
    let nq = q.len() / c;
    let nk = k.len() / c;
    let scale = 1.0 / (dh as f32).sqrt();
    // per-head contiguous copies of K and V
    let split = |m: &[f32]| -> Vec<Vec<f32>> {
        (0..heads)
            .map(|h| {
                m.chunks(c)
                    .flat_map(|r| r[h * dh..(h + 1) * dh].iter().copied())
                    .collect()
            })
            .collect()
    };
    let kh = split(k);
    let vh = split(v);
    let rows: Vec<(Vec<f32>, AttentionStats)> = (0..nq)
        .into_par_iter()
        .map(|i| {
            let mut out = vec![0.0f32; c];
            let mut stats = AttentionStats::default();
            let mut scores = vec![0.0f32; nk];
            for h in 0..heads {
                let qi = &q[i * c + h * dh..i * c + (h + 1) * dh];
                let kk = &kh[h];
                let mut max = f32::NEG_INFINITY;
                for (j, s) in scores.iter_mut().enumerate() {
                    *s = dot(qi, &kk[j * dh..(j + 1) * dh]) * scale;
                    max = max.max(*s);
                }
                let mut total = 0.0f32;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    total += *s;
                }
                let inv = 1.0 / total;
                let mut row_sum = 0.0f32;
                let o = &mut out[h * dh..(h + 1) * dh];
                let vv = &vh[h];
                for (j, s) in scores.iter_mut().enumerate() {
                    *s *= inv;
                    row_sum += *s;
                    let vj = &vv[j * dh..(j + 1) * dh];
                    o.iter_mut().zip(vj).for_each(|(a, b)| *a += *s * b);
                }
                stats.record(row_sum);
            }
            (out, stats)
        })
        .collect();
    let mut stats = AttentionStats::default();
    let mut out = Vec::with_capacity(nq * c);
    for (r, s) in rows {
        out.extend(r);
        stats.merge(&s);
    }
    (out, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::PointPrompt;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            input_shape: [32, 32, 16],
            patch: [8, 8, 4],
            embed_dim: 16,
            depth: 1,
            heads: 2,
            seed: 7,
            pos_embed: true,
        }
    }

    fn ramp(shape: Shape) -> IntensityVolume {
        Volume::from_fn(VolumeMeta::new(shape), |[x, y, z]| {
            ((x * 7 + y * 3 + z * 11) % 17) as f32 / 16.0
        })
        .unwrap()
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        let cfg = ModelConfig {
            depth: 0,
            ..small_cfg()
        };
        let mut m = TinyVit::new(&cfg).unwrap();
        m.zero_head();
        let f = m.encode(&ramp(cfg.input_shape)).unwrap();
        let l = m
            .decode(&f, &PromptSet::from_point(PointPrompt::positive([3, 4, 5])))
            .unwrap();
        assert!(l.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = small_cfg();
        let v = ramp(cfg.input_shape);
        let ps = PromptSet::from_point(PointPrompt::positive([10, 12, 3]));
        let run = || {
            let m = TinyVit::new(&cfg).unwrap();
            let f = m.encode(&v).unwrap();
            m.decode(&f, &ps).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let other = TinyVit::new(&ModelConfig {
            seed: 8,
            ..cfg.clone()
        })
        .unwrap();
        let f = other.encode(&v).unwrap();
        assert_ne!(other.decode(&f, &ps).unwrap(), a);
    }

    #[test]
    fn rejects_wrong_shape_and_empty_prompts() {
        let m = TinyVit::new(&small_cfg()).unwrap();
        assert!(matches!(
            m.encode(&ramp([32, 32, 8])),
            Err(Error::ShapeMismatch { .. })
        ));
        let f = m.encode(&ramp([32, 32, 16])).unwrap();
        assert!(matches!(
            m.decode(&f, &PromptSet::default()),
            Err(Error::EmptyPrompts)
        ));
    }

    #[test]
    fn attention_rows_normalized() {
        let cfg = small_cfg();
        let m = TinyVit::new(&cfg).unwrap();
        let (f, s) = m.encode_with_stats(&ramp(cfg.input_shape)).unwrap();
        assert_eq!(s.rows, cfg.token_count() * cfg.heads);
        assert!(s.max_row_sum_error < 1e-5);
        let (_, s) = m
            .decode_tokens(&f, &PromptSet::from_point(PointPrompt::positive([0, 0, 0])))
            .unwrap();
        assert_eq!(s.rows, cfg.heads);
        assert!(s.max_row_sum_error < 1e-5);
    }

    #[test]
    fn prior_mask_changes_logits() {
        let cfg = small_cfg();
        let m = TinyVit::new(&cfg).unwrap();
        let f = m.encode(&ramp(cfg.input_shape)).unwrap();
        let mut ps = PromptSet::from_point(PointPrompt::positive([5, 5, 5]));
        let base = m.decode(&f, &ps).unwrap();
        let mut prior =
            crate::volume::LabelVolume::empty(VolumeMeta::new(cfg.input_shape)).unwrap();
        prior.set([1, 1, 1], 1);
        ps.prior_mask = Some(prior);
        assert_ne!(m.decode(&f, &ps).unwrap(), base);
    }

    #[test]
    fn translation_equivariance_without_position_embedding() {
        let cfg = ModelConfig {
            pos_embed: false,
            ..small_cfg()
        };
        let m = TinyVit::new(&cfg).unwrap();
        let flat = IntensityVolume::filled(VolumeMeta::new(cfg.input_shape), 0.4).unwrap();
        let f = m.encode(&flat).unwrap();
        let at = |x: usize| {
            m.decode_tokens(
                &f,
                &PromptSet::from_point(PointPrompt::positive([x, 13, 6])),
            )
            .unwrap()
            .0
        };
        let (a, b) = (at(9), at(9 + cfg.patch[0]));
        let [gx, gy, gz] = cfg.token_grid();
        for z in 0..gz {
            for y in 0..gy {
                for x in 0..gx - 1 {
                    let ia = x + gx * (y + gy * z);
                    assert!((a[ia] - b[ia + 1]).abs() < 1e-4, "token ({x},{y},{z})");
                }
            }
        }
    }
}
