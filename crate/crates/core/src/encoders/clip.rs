//! Inference-only ResNet dual encoder read from a safetensors state dict
//! that uses the original checkpoint's parameter names.
//!
//! Visual taps: `layer2` → f1 (stride 8), `layer3` → f2 (stride 16),
//! `layer4` → f3 (stride 32), attention-pool output → global vector. The
//! attention pool's positional table is bilinearly resampled when the input
//! grid differs from the one it was trained at.
//!
//! Architecture hyper-parameters (stage depths, widths, heads, context
//! length) are read off the tensor shapes, so any member of the ResNet
//! family loads.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::{Path, PathBuf};

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView2, Axis};
use safetensors::{Dtype, SafeTensors};
use sha2::{Digest, Sha256};

use super::{
    BackboneDims, GlobalToken, ImageBatch, TextFeatures, TokenSequence, VisualFeatures,
};
use crate::error::{Error, Result};
use crate::ops::{self, BatchNorm, Interpolation};

struct TensorStore {
    path: PathBuf,
    tensors: HashMap<String, (Vec<usize>, Vec<f64>)>,
}

fn f16_to_f32(bits: u16) -> f32 {
    let sign = u32::from(bits >> 15) << 31;
    let exp = u32::from((bits >> 10) & 0x1f);
    let frac = u32::from(bits & 0x3ff);
    let out = match (exp, frac) {
        (0, 0) => sign,
        (0, f) => {
            // subnormal: renormalize
            let mut e = 127 - 15 + 1;
            let mut f = f;
            while f & 0x400 == 0 {
                f <<= 1;
                e -= 1;
            }
            sign | ((e as u32) << 23) | ((f & 0x3ff) << 13)
        }
        (0x1f, f) => sign | 0x7f80_0000 | (f << 13),
        (e, f) => sign | ((e + 127 - 15) << 23) | (f << 13),
    };
    f32::from_bits(out)
}

impl TensorStore {
    fn open(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::WeightsLoad {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let st = SafeTensors::deserialize(&bytes).map_err(|e| Error::WeightsLoad {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut tensors = HashMap::new();
        for (name, view) in st.tensors() {
            let data = view.data();
            let values: Vec<f64> = match view.dtype() {
                Dtype::F32 => data
                    .chunks_exact(4)
                    .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                    .collect(),
                Dtype::F64 => data
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
                Dtype::F16 => data
                    .chunks_exact(2)
                    .map(|c| f64::from(f16_to_f32(u16::from_le_bytes([c[0], c[1]]))))
                    .collect(),
                Dtype::BF16 => data
                    .chunks_exact(2)
                    .map(|c| {
                        f64::from(f32::from_bits(u32::from(u16::from_le_bytes([c[0], c[1]])) << 16))
                    })
                    .collect(),
                Dtype::I64 => continue,
                other => {
                    return Err(Error::WeightsLoad {
                        path: path.to_path_buf(),
                        reason: format!("tensor {name} has unsupported dtype {other:?}"),
                    })
                }
            };
            tensors.insert(name, (view.shape().to_vec(), values));
        }
        Ok(TensorStore {
            path: path.to_path_buf(),
            tensors,
        })
    }

    fn missing(&self, name: &str) -> Error {
        Error::WeightsLoad {
            path: self.path.clone(),
            reason: format!("missing tensor {name}"),
        }
    }

    fn shape(&self, name: &str) -> Result<&[usize]> {
        self.tensors
            .get(name)
            .map(|(s, _)| s.as_slice())
            .ok_or_else(|| self.missing(name))
    }

    fn has(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    fn take(&mut self, name: &str, expect_rank: usize) -> Result<(Vec<usize>, Vec<f64>)> {
        let (shape, data) = self.tensors.remove(name).ok_or_else(|| self.missing(name))?;
        if shape.len() != expect_rank {
            return Err(Error::WeightsLoad {
                path: self.path.clone(),
                reason: format!("tensor {name} has rank {}, expected {expect_rank}", shape.len()),
            });
        }
        Ok((shape, data))
    }

    fn vector(&mut self, name: &str) -> Result<Array1<f64>> {
        let (_, data) = self.take(name, 1)?;
        Ok(Array1::from(data))
    }

    fn matrix(&mut self, name: &str) -> Result<Array2<f64>> {
        let (shape, data) = self.take(name, 2)?;
        Ok(Array2::from_shape_vec((shape[0], shape[1]), data).expect("shape matches data"))
    }

    /// Converts an `[out, in, kh, kw]` kernel into the `[(ky, kx, in), out]` layout.
    fn conv(&mut self, name: &str) -> Result<(usize, Array2<f64>)> {
        let (shape, data) = self.take(name, 4)?;
        let (cout, cin, kh, kw) = (shape[0], shape[1], shape[2], shape[3]);
        if kh != kw {
            return Err(Error::WeightsLoad {
                path: self.path.clone(),
                reason: format!("tensor {name} has non-square kernel"),
            });
        }
        let src = Array4::from_shape_vec((cout, cin, kh, kw), data).expect("shape matches data");
        let mut w = Array2::zeros((kh * kw * cin, cout));
        for co in 0..cout {
            for ci in 0..cin {
                for ky in 0..kh {
                    for kx in 0..kw {
                        w[[(ky * kw + kx) * cin + ci, co]] = src[[co, ci, ky, kx]];
                    }
                }
            }
        }
        Ok((kh, w))
    }

    fn batch_norm(&mut self, prefix: &str) -> Result<BatchNorm> {
        let gamma = self.vector(&format!("{prefix}.weight"))?;
        let mut bn = BatchNorm::new(gamma.len());
        bn.gamma = gamma;
        bn.beta = self.vector(&format!("{prefix}.bias"))?;
        bn.running_mean = self.vector(&format!("{prefix}.running_mean"))?;
        bn.running_var = self.vector(&format!("{prefix}.running_var"))?;
        self.tensors.remove(&format!("{prefix}.num_batches_tracked"));
        Ok(bn)
    }

    fn layer_norm(&mut self, prefix: &str) -> Result<LayerNorm> {
        Ok(LayerNorm {
            gamma: self.vector(&format!("{prefix}.weight"))?,
            beta: self.vector(&format!("{prefix}.bias"))?,
        })
    }

    fn linear(&mut self, prefix: &str) -> Result<Linear> {
        Ok(Linear {
            weight: self.matrix(&format!("{prefix}.weight"))?,
            bias: self.vector(&format!("{prefix}.bias"))?,
        })
    }
}

#[derive(Debug)]
struct ConvBn {
    kernel: usize,
    stride: usize,
    pad: usize,
    weight: Array2<f64>,
    bn: BatchNorm,
}

impl ConvBn {
    fn load(store: &mut TensorStore, conv: &str, bn: &str, stride: usize) -> Result<Self> {
        let (kernel, weight) = store.conv(conv)?;
        Ok(ConvBn {
            kernel,
            stride,
            pad: kernel / 2,
            weight,
            bn: store.batch_norm(bn)?,
        })
    }

    fn forward(&self, x: &Array4<f64>, relu: bool) -> Array4<f64> {
        let y = ops::conv2d(x, &self.weight, self.kernel, self.stride, self.pad);
        let shape = y.dim();
        let mut y = ops::from_rows(self.bn.forward_eval(ops::as_rows(&y)), shape);
        if relu {
            ops::relu_inplace(&mut y);
        }
        y
    }

    fn params(&self) -> Vec<&[f64]> {
        vec![
            self.weight.as_slice().expect("standard"),
            self.bn.gamma.as_slice().expect("standard"),
            self.bn.beta.as_slice().expect("standard"),
            self.bn.running_mean.as_slice().expect("standard"),
            self.bn.running_var.as_slice().expect("standard"),
        ]
    }
}

#[derive(Debug)]
struct Bottleneck {
    conv1: ConvBn,
    conv2: ConvBn,
    conv3: ConvBn,
    stride: usize,
    downsample: Option<ConvBn>,
}

impl Bottleneck {
    fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let mut out = self.conv1.forward(x, true);
        out = self.conv2.forward(&out, true);
        if self.stride > 1 {
            out = ops::avg_pool(&out, self.stride);
        }
        out = self.conv3.forward(&out, false);
        match &self.downsample {
            Some(ds) => {
                let pooled;
                let src = if self.stride > 1 {
                    pooled = ops::avg_pool(x, self.stride);
                    &pooled
                } else {
                    x
                };
                out += &ds.forward(src, false);
            }
            None => out += x,
        }
        ops::relu_inplace(&mut out);
        out
    }
}

#[derive(Debug)]
struct Linear {
    weight: Array2<f64>,
    bias: Array1<f64>,
}

impl Linear {
    fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }
}

#[derive(Debug)]
struct LayerNorm {
    gamma: Array1<f64>,
    beta: Array1<f64>,
}

impl LayerNorm {
    fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut y = x.to_owned();
        for mut row in y.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + 1e-5).sqrt();
            for (i, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * self.gamma[i] + self.beta[i];
            }
        }
        y
    }
}

fn softmax_inplace(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Multi-head scaled dot-product attention on pre-projected q/k/v rows.
/// `causal` restricts query i to keys ≤ i (queries and keys aligned).
fn attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, heads: usize, causal: bool) -> Array2<f64> {
    let width = q.ncols();
    let hd = width / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out = Array2::zeros((q.nrows(), width));
    for h in 0..heads {
        let cols = s![.., h * hd..(h + 1) * hd];
        let qh = q.slice(cols);
        let kh = k.slice(cols);
        let vh = v.slice(cols);
        let mut scores = qh.dot(&kh.t()) * scale;
        for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
            if causal {
                row.slice_mut(s![i + 1..]).fill(f64::NEG_INFINITY);
            }
            softmax_inplace(row.as_slice_mut().expect("contiguous"));
        }
        out.slice_mut(cols).assign(&scores.dot(&vh));
    }
    out
}

#[derive(Debug)]
struct AttentionPool {
    positional: Array2<f64>,
    q: Linear,
    k: Linear,
    v: Linear,
    c: Linear,
    heads: usize,
}

impl AttentionPool {
    /// Positional table for an `h × w` grid (row 0 is the pooled token).
    fn positional_for(&self, h: usize, w: usize) -> Array2<f64> {
        let n = self.positional.nrows() - 1;
        let side = (n as f64).sqrt().round() as usize;
        if side * side == h * w && side == h {
            return self.positional.clone();
        }
        let c = self.positional.ncols();
        let grid = self
            .positional
            .slice(s![1.., ..])
            .to_owned()
            .into_shape_with_order((1, side, side, c))
            .expect("square positional grid");
        let resized = ops::resize(&grid, h, w, Interpolation::Bilinear);
        let mut out = Array2::zeros((h * w + 1, c));
        out.row_mut(0).assign(&self.positional.row(0));
        out.slice_mut(s![1.., ..])
            .assign(&resized.into_shape_with_order((h * w, c)).expect("reshape"));
        out
    }

    fn forward(&self, x: &Array4<f64>) -> Array2<f64> {
        let (b, h, w, c) = x.dim();
        let pos = self.positional_for(h, w);
        let mut out = Array2::zeros((b, self.c.weight.nrows()));
        for bi in 0..b {
            let tokens = x
                .index_axis(Axis(0), bi)
                .to_owned()
                .into_shape_with_order((h * w, c))
                .expect("reshape");
            let mut seq = Array2::zeros((h * w + 1, c));
            seq.row_mut(0).assign(&tokens.mean_axis(Axis(0)).expect("non-empty grid"));
            seq.slice_mut(s![1.., ..]).assign(&tokens);
            seq += &pos;
            let q = self.q.forward(seq.slice(s![0..1, ..]));
            let k = self.k.forward(seq.view());
            let v = self.v.forward(seq.view());
            let attended = attention(&q, &k, &v, self.heads, false);
            out.row_mut(bi).assign(&self.c.forward(attended.view()).row(0));
        }
        out
    }
}

#[derive(Debug)]
struct TextBlock {
    ln1: LayerNorm,
    in_proj: Linear,
    out_proj: Linear,
    ln2: LayerNorm,
    fc: Linear,
    proj: Linear,
}

impl TextBlock {
    fn forward(&self, x: &Array2<f64>, heads: usize) -> Array2<f64> {
        let width = x.ncols();
        let h = self.ln1.forward(x.view());
        let qkv = self.in_proj.forward(h.view());
        let q = qkv.slice(s![.., 0..width]).to_owned();
        let k = qkv.slice(s![.., width..2 * width]).to_owned();
        let v = qkv.slice(s![.., 2 * width..]).to_owned();
        let attended = attention(&q, &k, &v, heads, true);
        let x = x + &self.out_proj.forward(attended.view());
        let mut hidden = self.fc.forward(self.ln2.forward(x.view()).view());
        hidden.mapv_inplace(|v| v / (1.0 + (-1.702 * v).exp()));
        &x + &self.proj.forward(hidden.view())
    }
}

#[derive(Debug)]
pub struct ClipModel {
    stem: [ConvBn; 3],
    layers: [Vec<Bottleneck>; 4],
    attnpool: AttentionPool,
    token_embedding: Array2<f64>,
    positional: Array2<f64>,
    blocks: Vec<TextBlock>,
    text_heads: usize,
    ln_final: LayerNorm,
    text_projection: Array2<f64>,
    dims: BackboneDims,
    pub global_token: GlobalToken,
}

fn count_indexed(store: &TensorStore, prefix: &str) -> usize {
    let mut idx: Vec<usize> = store
        .tensors
        .keys()
        .filter_map(|k| k.strip_prefix(prefix))
        .filter_map(|rest| rest.split('.').next()?.parse().ok())
        .collect();
    idx.sort_unstable();
    idx.dedup();
    idx.len()
}

impl ClipModel {
    pub fn load(path: &Path) -> Result<Self> {
        let mut store = TensorStore::open(path)?;
        let width = store.shape("visual.layer1.0.conv1.weight")?[0];
        let depths: Vec<usize> = (1..=4)
            .map(|i| count_indexed(&store, &format!("visual.layer{i}.")))
            .collect();
        if depths.contains(&0) {
            return Err(Error::WeightsLoad {
                path: path.to_path_buf(),
                reason: format!("incomplete visual tower, stage depths {depths:?}"),
            });
        }

        let stem = [
            ConvBn::load(&mut store, "visual.conv1.weight", "visual.bn1", 2)?,
            ConvBn::load(&mut store, "visual.conv2.weight", "visual.bn2", 1)?,
            ConvBn::load(&mut store, "visual.conv3.weight", "visual.bn3", 1)?,
        ];

        let mut layers: [Vec<Bottleneck>; 4] = Default::default();
        for (li, depth) in depths.iter().enumerate() {
            let stage_stride = if li == 0 { 1 } else { 2 };
            for bi in 0..*depth {
                let p = format!("visual.layer{}.{bi}", li + 1);
                let stride = if bi == 0 { stage_stride } else { 1 };
                let downsample = if store.has(&format!("{p}.downsample.1.weight")) {
                    Some(ConvBn::load(
                        &mut store,
                        &format!("{p}.downsample.1.weight"),
                        &format!("{p}.downsample.2"),
                        1,
                    )?)
                } else {
                    None
                };
                layers[li].push(Bottleneck {
                    conv1: ConvBn::load(&mut store, &format!("{p}.conv1.weight"), &format!("{p}.bn1"), 1)?,
                    conv2: ConvBn::load(&mut store, &format!("{p}.conv2.weight"), &format!("{p}.bn2"), 1)?,
                    conv3: ConvBn::load(&mut store, &format!("{p}.conv3.weight"), &format!("{p}.bn3"), 1)?,
                    stride,
                    downsample,
                });
            }
        }

        let attnpool = AttentionPool {
            positional: store.matrix("visual.attnpool.positional_embedding")?,
            q: store.linear("visual.attnpool.q_proj")?,
            k: store.linear("visual.attnpool.k_proj")?,
            v: store.linear("visual.attnpool.v_proj")?,
            c: store.linear("visual.attnpool.c_proj")?,
            heads: (width * 32 / 64).max(1),
        };

        let n_blocks = count_indexed(&store, "transformer.resblocks.");
        let mut blocks = Vec::with_capacity(n_blocks);
        for i in 0..n_blocks {
            let p = format!("transformer.resblocks.{i}");
            blocks.push(TextBlock {
                ln1: store.layer_norm(&format!("{p}.ln_1"))?,
                in_proj: Linear {
                    weight: store.matrix(&format!("{p}.attn.in_proj_weight"))?,
                    bias: store.vector(&format!("{p}.attn.in_proj_bias"))?,
                },
                out_proj: store.linear(&format!("{p}.attn.out_proj"))?,
                ln2: store.layer_norm(&format!("{p}.ln_2"))?,
                fc: store.linear(&format!("{p}.mlp.c_fc"))?,
                proj: store.linear(&format!("{p}.mlp.c_proj"))?,
            });
        }
        let token_embedding = store.matrix("token_embedding.weight")?;
        let text_width = token_embedding.ncols();
        let text_projection = store.matrix("text_projection")?;
        let dims = BackboneDims {
            c1: layers[1].last().map_or(0, |b| b.conv3.weight.ncols()),
            c2: layers[2].last().map_or(0, |b| b.conv3.weight.ncols()),
            c3: layers[3].last().map_or(0, |b| b.conv3.weight.ncols()),
            embed: text_projection.ncols(),
        };
        if attnpool.c.weight.nrows() != dims.embed {
            return Err(Error::WeightsLoad {
                path: path.to_path_buf(),
                reason: format!(
                    "visual embedding width {} differs from text embedding width {}",
                    attnpool.c.weight.nrows(),
                    dims.embed
                ),
            });
        }
        Ok(ClipModel {
            stem,
            layers,
            attnpool,
            token_embedding,
            positional: store.matrix("positional_embedding")?,
            blocks,
            text_heads: (text_width / 64).max(1),
            ln_final: store.layer_norm("ln_final")?,
            text_projection,
            dims,
            global_token: GlobalToken::Eos,
        })
    }

    pub fn dims(&self) -> BackboneDims {
        self.dims
    }

    pub fn context_length(&self) -> usize {
        self.positional.nrows()
    }

    pub fn encode_image(&self, images: &ImageBatch) -> Result<VisualFeatures> {
        let mut x = images.pixels().clone();
        for conv in &self.stem {
            x = conv.forward(&x, true);
        }
        x = ops::avg_pool(&x, 2);
        let mut taps = Vec::with_capacity(3);
        for (li, stage) in self.layers.iter().enumerate() {
            for block in stage {
                x = block.forward(&x);
            }
            if li > 0 {
                taps.push(x.clone());
            }
        }
        let global = self.attnpool.forward(&x);
        let f3 = taps.pop().expect("three taps");
        let f2 = taps.pop().expect("three taps");
        let f1 = taps.pop().expect("three taps");
        Ok(VisualFeatures { f1, f2, f3, global })
    }

    pub fn encode_text(&self, tokens: &[TokenSequence]) -> Result<TextFeatures> {
        let ctx = self.context_length();
        let c = self.dims.embed;
        let mut per_token = Array3::zeros((tokens.len(), ctx, c));
        let mut global = Array2::zeros((tokens.len(), c));
        for (b, seq) in tokens.iter().enumerate() {
            if seq.ids.len() != ctx {
                return Err(Error::InvalidInput(format!(
                    "token sequence has length {}, text tower expects {ctx}",
                    seq.ids.len()
                )));
            }
            let mut x = Array2::zeros((ctx, self.token_embedding.ncols()));
            for (pos, &id) in seq.ids.iter().enumerate() {
                let row = self.token_embedding.row(id as usize);
                x.row_mut(pos).assign(&(&row + &self.positional.row(pos)));
            }
            for block in &self.blocks {
                x = block.forward(&x, self.text_heads);
            }
            let projected = self.ln_final.forward(x.view()).dot(&self.text_projection);
            let pick = match self.global_token {
                GlobalToken::Eos => seq.eos_position(),
                GlobalToken::Bos => 0,
            };
            global.row_mut(b).assign(&projected.row(pick));
            per_token.index_axis_mut(Axis(0), b).assign(&projected);
        }
        Ok(TextFeatures {
            tokens: per_token,
            global,
        })
    }

    pub fn parameter_digest(&self) -> String {
        let mut parts: Vec<&[f64]> = Vec::new();
        for conv in &self.stem {
            parts.extend(conv.params());
        }
        for stage in &self.layers {
            for block in stage {
                for conv in [&block.conv1, &block.conv2, &block.conv3]
                    .into_iter()
                    .chain(block.downsample.as_ref())
                {
                    parts.extend(conv.params());
                }
            }
        }
        let ap = &self.attnpool;
        parts.push(ap.positional.as_slice().expect("standard"));
        for lin in [&ap.q, &ap.k, &ap.v, &ap.c] {
            parts.push(lin.weight.as_slice().expect("standard"));
            parts.push(lin.bias.as_slice().expect("standard"));
        }
        parts.push(self.token_embedding.as_slice().expect("standard"));
        parts.push(self.positional.as_slice().expect("standard"));
        for b in &self.blocks {
            for ln in [&b.ln1, &b.ln2] {
                parts.push(ln.gamma.as_slice().expect("standard"));
                parts.push(ln.beta.as_slice().expect("standard"));
            }
            for lin in [&b.in_proj, &b.out_proj, &b.fc, &b.proj] {
                parts.push(lin.weight.as_slice().expect("standard"));
                parts.push(lin.bias.as_slice().expect("standard"));
            }
        }
        parts.push(self.ln_final.gamma.as_slice().expect("standard"));
        parts.push(self.ln_final.beta.as_slice().expect("standard"));
        parts.push(self.text_projection.as_slice().expect("standard"));
        super::digest_f64(parts)
    }
}

/// SHA-256 of a file, hex encoded.
pub fn file_sha256(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::WeightsLoad {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Checks `weights` against a JSON manifest `{ "<file name>": "<sha256>" }`.
pub fn verify_manifest(weights: &Path, manifest: &Path) -> Result<()> {
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let entries: BTreeMap<String, String> = serde_json::from_str(&text)?;
    let name = weights
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let expected = entries.get(&name).ok_or_else(|| Error::WeightsLoad {
        path: weights.to_path_buf(),
        reason: format!("no entry for {name} in manifest {}", manifest.display()),
    })?;
    let actual = file_sha256(weights)?;
    if !actual.eq_ignore_ascii_case(expected) {
        return Err(Error::WeightsLoad {
            path: weights.to_path_buf(),
            reason: format!("sha256 {actual} does not match manifest value {expected}"),
        });
    }
    Ok(())
}
