//! Feature-pyramid decoder: the only trainable part of the model.
//!
//! Every input (the global vector and the three stage outputs) is projected
//! to a common width with conv3×3 → batch-norm → ReLU. Fusion then runs
//! coarse to fine: the projected global vector is broadcast over the
//! stride-32 grid and added to the stride-32 projection, the running sum is
//! upsampled ×2 and added to the stride-16 projection, upsampled again and
//! added to the stride-8 projection. A conv1×1 → batch-norm → ReLU maps the
//! fused stride-8 map into the text embedding width.
//!
//! The global vector is a 1×1 map; its 3×3 projection reads every tap from
//! the single cell (border replication), so all nine taps stay live.

use ndarray::{Array1, Array2, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{BackboneDims, VisualFeatures};
use crate::error::{Error, Result};
use crate::ops::{self, BatchNorm, BnCache, BnMode, Interpolation};

/// Subset of the stride-8/16/32 lateral inputs that take part in fusion.
/// Level 1 is the finest (stride 8), level 3 the coarsest (stride 32).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct ActiveLevels([bool; 3]);

impl ActiveLevels {
    pub const ALL: ActiveLevels = ActiveLevels([true, true, true]);

    pub fn new(levels: &[u8]) -> Result<Self> {
        let mut set = [false; 3];
        for &l in levels {
            match l {
                1..=3 => set[l as usize - 1] = true,
                _ => return Err(Error::Config(format!("pyramid level {l} is not one of 1, 2, 3"))),
            }
        }
        if set == [false; 3] {
            return Err(Error::Config("at least one pyramid level must be active".into()));
        }
        Ok(ActiveLevels(set))
    }

    pub fn contains(&self, level: usize) -> bool {
        (1..=3).contains(&level) && self.0[level - 1]
    }

    pub fn levels(&self) -> Vec<u8> {
        (1..=3u8).filter(|&l| self.0[l as usize - 1]).collect()
    }

    /// `"{F1,F2,F3}"`-style label.
    pub fn set_label(&self) -> String {
        let names: Vec<String> = self.levels().iter().map(|l| format!("F{l}")).collect();
        format!("{{{}}}", names.join(","))
    }

    /// `"1,2,3"`-style label.
    pub fn label(&self) -> String {
        self.levels()
            .iter()
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl std::str::FromStr for ActiveLevels {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let levels = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<u8>()
                    .map_err(|_| Error::Config(format!("bad pyramid level {p:?} in {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        ActiveLevels::new(&levels)
    }
}

impl TryFrom<Vec<u8>> for ActiveLevels {
    type Error = Error;

    fn try_from(v: Vec<u8>) -> Result<Self> {
        ActiveLevels::new(&v)
    }
}

impl From<ActiveLevels> for Vec<u8> {
    fn from(l: ActiveLevels) -> Self {
        l.levels()
    }
}

impl Default for ActiveLevels {
    fn default() -> Self {
        ActiveLevels::ALL
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    /// Width every input is projected to before fusion.
    pub common_width: usize,
    /// Width of the emitted pixel embeddings (the text embedding width).
    pub output_width: usize,
    /// Channel widths of the stride-8/16/32 inputs.
    pub input_widths: [usize; 3],
    /// Width of the global visual vector.
    pub global_width: usize,
    pub active_levels: ActiveLevels,
    pub upsample: Interpolation,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            common_width: 64,
            output_width: 512,
            input_widths: [512, 1024, 2048],
            global_width: 512,
            active_levels: ActiveLevels::ALL,
            upsample: Interpolation::Bilinear,
        }
    }
}

impl DecoderConfig {
    pub fn for_backbone(dims: BackboneDims) -> Self {
        DecoderConfig {
            output_width: dims.embed,
            input_widths: [dims.c1, dims.c2, dims.c3],
            global_width: dims.embed,
            ..DecoderConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.common_width == 0 || self.output_width == 0 || self.global_width == 0 {
            return Err(Error::Config("decoder widths must be positive".into()));
        }
        if self.input_widths.contains(&0) {
            return Err(Error::Config("backbone stage widths must be positive".into()));
        }
        Ok(())
    }

    /// Fails unless the backbone produces exactly the widths this decoder
    /// was built for.
    pub fn check_backbone(&self, dims: BackboneDims) -> Result<()> {
        let expected = [dims.c1, dims.c2, dims.c3];
        if self.input_widths != expected || self.global_width != dims.embed {
            return Err(Error::Config(format!(
                "decoder expects stage widths {:?} and global width {}, backbone provides {:?} and {}",
                self.input_widths, self.global_width, expected, dims.embed
            )));
        }
        if self.output_width != dims.embed {
            return Err(Error::Config(format!(
                "decoder output width {} differs from the text embedding width {}",
                self.output_width, dims.embed
            )));
        }
        Ok(())
    }
}

/// Closed-form count of trainable scalars for a configuration: each conv
/// contributes `k·k·c_in·c_out` weights (no bias) and its batch-norm a scale
/// and shift per output channel.
pub fn count_trainable_parameters(cfg: &DecoderConfig) -> usize {
    let c = cfg.common_width;
    let conv_bn = |k: usize, cin: usize, cout: usize| k * k * cin * cout + 2 * cout;
    let lateral: usize = (1..=3)
        .filter(|&l| cfg.active_levels.contains(l))
        .map(|l| conv_bn(3, cfg.input_widths[l - 1], c))
        .sum();
    conv_bn(3, cfg.global_width, c) + lateral + conv_bn(1, c, cfg.output_width)
}

/// Convolution → batch-norm → ReLU with a bias-free convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBnRelu {
    pub kernel: usize,
    pub weight: Array2<f64>,
    pub bn: BatchNorm,
}

impl ConvBnRelu {
    /// Uniform init scaled by fan-out, `U(-b, b)` with `b = sqrt(6 / (k·k·c_out))`
    /// (variance `2 / fan_out`); batch-norm starts at scale 1, shift 0.
    fn init(kernel: usize, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (kernel * kernel * cout) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((kernel * kernel * cin, cout), || {
            rng.random_range(-bound..bound)
        });
        ConvBnRelu {
            kernel,
            weight,
            bn: BatchNorm::new(cout),
        }
    }

    fn conv(&self, x: &Array4<f64>) -> Array4<f64> {
        ops::conv2d(x, &self.weight, self.kernel, 1, self.kernel / 2)
    }

    fn bn_relu_eval(&self, pre: Array4<f64>) -> Array4<f64> {
        let shape = pre.dim();
        let mut y = ops::from_rows(self.bn.forward_eval(ops::as_rows(&pre)), shape);
        ops::relu_inplace(&mut y);
        y
    }

    fn bn_relu_train(&mut self, pre: Array4<f64>) -> (Array4<f64>, BnCache) {
        let shape = pre.dim();
        let (rows, cache) = self.bn.forward_train(ops::as_rows(&pre));
        let mut y = ops::from_rows(rows, shape);
        ops::relu_inplace(&mut y);
        (y, cache)
    }

    /// Back through ReLU and batch-norm; returns the gradient at the conv
    /// output plus the batch-norm parameter gradients.
    fn bn_relu_backward(
        &self,
        mut dy: Array4<f64>,
        y: &Array4<f64>,
        cache: &BnCache,
    ) -> (Array4<f64>, Array1<f64>, Array1<f64>) {
        ops::relu_backward_inplace(&mut dy, y);
        let shape = dy.dim();
        let (dx, dgamma, dbeta) = self.bn.backward(ops::as_rows(&dy), cache);
        (ops::from_rows(dx, shape), dgamma, dbeta)
    }

    /// Sum of the nine taps: the effective kernel on a border-replicated 1×1 map.
    fn collapsed_taps(&self) -> Array2<f64> {
        let taps = self.kernel * self.kernel;
        let cin = self.weight.nrows() / taps;
        let mut sum = Array2::zeros((cin, self.weight.ncols()));
        for t in 0..taps {
            sum += &self.weight.slice(ndarray::s![t * cin..(t + 1) * cin, ..]);
        }
        sum
    }

    fn global_conv(&self, global: &Array2<f64>) -> Array4<f64> {
        let pre = global.dot(&self.collapsed_taps());
        let (b, c) = pre.dim();
        pre.into_shape_with_order((b, 1, 1, c)).expect("reshape")
    }
}

/// The four projected inputs, all `common_width` wide.
#[derive(Clone, Debug, PartialEq)]
pub struct Projected {
    /// `batch × C′`
    pub global: Array2<f64>,
    /// Stride-8/16/32 maps; `None` for ablated levels.
    pub levels: [Option<Array4<f64>>; 3],
    /// Spatial size of the stride-32 grid.
    pub grid32: (usize, usize),
}

/// Stride-8 grid of pixel embeddings in the shared space.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseEmbedding {
    /// `batch × H/8 × W/8 × C`
    pub grid: Array4<f64>,
}

/// Coarse-to-fine additive fusion. Ablated levels skip their lateral
/// addition but the ×2 upsampling chain always runs to stride 8.
pub fn fuse(projected: &Projected, upsample: Interpolation) -> Array4<f64> {
    let (h32, w32) = projected.grid32;
    let (b, c) = projected.global.dim();
    let mut running = Array4::<f64>::zeros((b, h32, w32, c));
    for (bi, mut sample) in running.outer_iter_mut().enumerate() {
        let g = projected.global.row(bi);
        for mut cell in sample.lanes_mut(Axis(2)) {
            cell.assign(&g);
        }
    }
    if let Some(f3) = &projected.levels[2] {
        running += f3;
    }
    running = ops::resize(&running, 2 * h32, 2 * w32, upsample);
    if let Some(f2) = &projected.levels[1] {
        running += f2;
    }
    running = ops::resize(&running, 4 * h32, 4 * w32, upsample);
    if let Some(f1) = &projected.levels[0] {
        running += f1;
    }
    running
}

/// Adjoint of [`fuse`]: gradient for the global projection and for each
/// active level.
pub fn fuse_backward(
    d_out: &Array4<f64>,
    active: ActiveLevels,
    upsample: Interpolation,
) -> (Array2<f64>, [Option<Array4<f64>>; 3]) {
    let (_, h8, w8, _) = d_out.dim();
    let (h16, w16) = (h8 / 2, w8 / 2);
    let (h32, w32) = (h8 / 4, w8 / 4);
    let d1 = active.contains(1).then(|| d_out.clone());
    let d_run16 = ops::resize_backward(d_out, h16, w16, upsample);
    let d2 = active.contains(2).then(|| d_run16.clone());
    let d_run32 = ops::resize_backward(&d_run16, h32, w32, upsample);
    let d3 = active.contains(3).then(|| d_run32.clone());
    let d_global = d_run32
        .sum_axis(Axis(1))
        .sum_axis(Axis(1));
    (d_global, [d1, d2, d3])
}

/// Activations kept from a training forward pass for [`Decoder::backward`].
#[derive(Debug)]
pub struct Tape {
    global: (Array4<f64>, BnCache),
    levels: [Option<(Array4<f64>, BnCache)>; 3],
    fused: Array4<f64>,
    output: (Array4<f64>, BnCache),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weight: Array2<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub global: LayerGrads,
    pub levels: [Option<LayerGrads>; 3],
    pub output: LayerGrads,
}

impl Gradients {
    /// Named gradient tensors, in the same order as [`Decoder::trainable`].
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        fn push<'a>(out: &mut Vec<(String, &'a [f64])>, name: &str, g: &'a LayerGrads) {
            out.push((format!("{name}.weight"), g.weight.as_slice().expect("standard")));
            out.push((format!("{name}.bn.gamma"), g.gamma.as_slice().expect("standard")));
            out.push((format!("{name}.bn.beta"), g.beta.as_slice().expect("standard")));
        }
        let mut out = Vec::new();
        push(&mut out, "global", &self.global);
        for (i, g) in self.levels.iter().enumerate() {
            if let Some(g) = g {
                push(&mut out, &format!("lateral{}", i + 1), g);
            }
        }
        push(&mut out, "output", &self.output);
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    cfg: DecoderConfig,
    global: ConvBnRelu,
    levels: [Option<ConvBnRelu>; 3],
    output: ConvBnRelu,
}

impl Decoder {
    /// Builds a decoder with seeded initialization (see [`ConvBnRelu`]).
    pub fn new(cfg: DecoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.common_width;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut next = |stream: u64| {
            rng.set_stream(stream);
            rng.clone()
        };
        let global = ConvBnRelu::init(3, cfg.global_width, c, &mut next(0));
        let levels = [1usize, 2, 3].map(|l| {
            cfg.active_levels
                .contains(l)
                .then(|| ConvBnRelu::init(3, cfg.input_widths[l - 1], c, &mut next(l as u64)))
        });
        let output = ConvBnRelu::init(1, c, cfg.output_width, &mut next(4));
        Ok(Decoder {
            cfg,
            global,
            levels,
            output,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    fn check_features(&self, feats: &VisualFeatures) -> Result<()> {
        let widths = [feats.f1.dim().3, feats.f2.dim().3, feats.f3.dim().3];
        if widths != self.cfg.input_widths || feats.global.ncols() != self.cfg.global_width {
            return Err(Error::Config(format!(
                "features have widths {widths:?}/{}, decoder expects {:?}/{}",
                feats.global.ncols(),
                self.cfg.input_widths,
                self.cfg.global_width
            )));
        }
        let (h32, w32) = feats.grid32();
        let (_, h16, w16, _) = feats.f2.dim();
        let (_, h8, w8, _) = feats.f1.dim();
        if (h16, w16) != (2 * h32, 2 * w32) || (h8, w8) != (4 * h32, 4 * w32) {
            return Err(Error::InvalidInput(format!(
                "feature grids {h8}x{w8}/{h16}x{w16}/{h32}x{w32} do not follow the stride lattice"
            )));
        }
        Ok(())
    }

    fn inputs<'a>(feats: &'a VisualFeatures) -> [&'a Array4<f64>; 3] {
        [&feats.f1, &feats.f2, &feats.f3]
    }

    /// Projection stage with frozen batch-norm statistics.
    pub fn project(&self, feats: &VisualFeatures) -> Result<Projected> {
        self.check_features(feats)?;
        let global = self.global.bn_relu_eval(self.global.global_conv(&feats.global));
        let (b, _, _, c) = global.dim();
        let inputs = Self::inputs(feats);
        let levels = [0usize, 1, 2].map(|i| {
            self.levels[i]
                .as_ref()
                .map(|layer| layer.bn_relu_eval(layer.conv(inputs[i])))
        });
        Ok(Projected {
            global: global.into_shape_with_order((b, c)).expect("reshape"),
            levels,
            grid32: feats.grid32(),
        })
    }

    pub fn fuse(&self, projected: &Projected) -> Array4<f64> {
        fuse(projected, self.cfg.upsample)
    }

    /// Output stage with frozen batch-norm statistics.
    pub fn decode(&self, fused: &Array4<f64>) -> DenseEmbedding {
        DenseEmbedding {
            grid: self.output.bn_relu_eval(self.output.conv(fused)),
        }
    }

    /// Inference forward pass.
    pub fn forward(&self, feats: &VisualFeatures) -> Result<DenseEmbedding> {
        let projected = self.project(feats)?;
        Ok(self.decode(&self.fuse(&projected)))
    }

    /// Forward pass in the given batch-norm mode. Training mode uses batch
    /// statistics and updates the running estimates.
    pub fn forward_mode(&mut self, feats: &VisualFeatures, mode: BnMode) -> Result<DenseEmbedding> {
        match mode {
            BnMode::Eval => self.forward(feats),
            BnMode::Train => Ok(self.forward_train(feats)?.0),
        }
    }

    pub fn forward_train(&mut self, feats: &VisualFeatures) -> Result<(DenseEmbedding, Tape)> {
        self.check_features(feats)?;
        let global_pre = self.global.global_conv(&feats.global);
        let (global_y, global_cache) = self.global.bn_relu_train(global_pre);
        let inputs = Self::inputs(feats);
        let mut level_tape: [Option<(Array4<f64>, BnCache)>; 3] = [None, None, None];
        for (i, layer) in self.levels.iter_mut().enumerate() {
            if let Some(layer) = layer {
                let pre = layer.conv(inputs[i]);
                level_tape[i] = Some(layer.bn_relu_train(pre));
            }
        }
        let (b, _, _, c) = global_y.dim();
        let projected = Projected {
            global: global_y
                .clone()
                .into_shape_with_order((b, c))
                .expect("reshape"),
            levels: [0, 1, 2].map(|i| level_tape[i].as_ref().map(|(y, _)| y.clone())),
            grid32: feats.grid32(),
        };
        let fused = fuse(&projected, self.cfg.upsample);
        let pre = self.output.conv(&fused);
        let (out, out_cache) = self.output.bn_relu_train(pre);
        let tape = Tape {
            global: (global_y, global_cache),
            levels: level_tape,
            fused,
            output: (out.clone(), out_cache),
        };
        Ok((DenseEmbedding { grid: out }, tape))
    }

    /// Gradients of all trainable parameters given the gradient at the
    /// dense embedding. `feats` must be the features the tape was built from.
    pub fn backward(&self, feats: &VisualFeatures, tape: Tape, d_dense: Array4<f64>) -> Gradients {
        let (out_y, out_cache) = &tape.output;
        let (d_pre, gamma, beta) = self.output.bn_relu_backward(d_dense, out_y, out_cache);
        let output = LayerGrads {
            weight: ops::conv2d_weight_grad(&tape.fused, &d_pre, 1, 1, 0),
            gamma,
            beta,
        };
        let d_fused = ops::conv1x1_input_grad(&d_pre, &self.output.weight);
        let (d_global, d_levels) = fuse_backward(&d_fused, self.cfg.active_levels, self.cfg.upsample);

        let inputs = Self::inputs(feats);
        let mut levels: [Option<LayerGrads>; 3] = [None, None, None];
        for (i, d) in d_levels.into_iter().enumerate() {
            if let (Some(d), Some(layer), Some((y, cache))) = (d, &self.levels[i], &tape.levels[i]) {
                let (d_pre, gamma, beta) = layer.bn_relu_backward(d, y, cache);
                levels[i] = Some(LayerGrads {
                    weight: ops::conv2d_weight_grad(inputs[i], &d_pre, 3, 1, 1),
                    gamma,
                    beta,
                });
            }
        }

        let (b, c) = d_global.dim();
        let d_global = d_global.into_shape_with_order((b, 1, 1, c)).expect("reshape");
        let (gy, gcache) = &tape.global;
        let (d_pre, gamma, beta) = self.global.bn_relu_backward(d_global, gy, gcache);
        let d_pre = d_pre.into_shape_with_order((b, c)).expect("reshape");
        let d_collapsed = feats.global.t().dot(&d_pre);
        let cin = d_collapsed.nrows();
        let mut weight = Array2::zeros(self.global.weight.dim());
        for t in 0..self.global.kernel * self.global.kernel {
            weight
                .slice_mut(ndarray::s![t * cin..(t + 1) * cin, ..])
                .assign(&d_collapsed);
        }
        Gradients {
            global: LayerGrads { weight, gamma, beta },
            levels,
            output,
        }
    }

    fn layers(&self) -> Vec<(String, &ConvBnRelu)> {
        let mut out = vec![("global".to_string(), &self.global)];
        for (i, l) in self.levels.iter().enumerate() {
            if let Some(l) = l {
                out.push((format!("lateral{}", i + 1), l));
            }
        }
        out.push(("output".to_string(), &self.output));
        out
    }

    fn layers_mut(&mut self) -> Vec<(String, &mut ConvBnRelu)> {
        let mut out = vec![("global".to_string(), &mut self.global)];
        for (i, l) in self.levels.iter_mut().enumerate() {
            if let Some(l) = l {
                out.push((format!("lateral{}", i + 1), l));
            }
        }
        out.push(("output".to_string(), &mut self.output));
        out
    }

    /// Named trainable tensors (conv weights, batch-norm scale and shift).
    pub fn trainable(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (name, l) in self.layers() {
            out.push((format!("{name}.weight"), l.weight.as_slice().expect("standard")));
            out.push((format!("{name}.bn.gamma"), l.bn.gamma.as_slice().expect("standard")));
            out.push((format!("{name}.bn.beta"), l.bn.beta.as_slice().expect("standard")));
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (name, l) in self.layers_mut() {
            out.push((format!("{name}.weight"), l.weight.as_slice_mut().expect("standard")));
            out.push((format!("{name}.bn.gamma"), l.bn.gamma.as_slice_mut().expect("standard")));
            out.push((format!("{name}.bn.beta"), l.bn.beta.as_slice_mut().expect("standard")));
        }
        out
    }

    /// Every tensor needed to restore the decoder: trainable parameters plus
    /// batch-norm running statistics, with their shapes.
    pub fn state(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (name, l) in self.layers() {
            out.push((format!("{name}.weight"), l.weight.shape().to_vec(), l.weight.as_slice().expect("standard")));
            for (field, t) in [
                ("gamma", &l.bn.gamma),
                ("beta", &l.bn.beta),
                ("running_mean", &l.bn.running_mean),
                ("running_var", &l.bn.running_var),
            ] {
                out.push((format!("{name}.bn.{field}"), t.shape().to_vec(), t.as_slice().expect("standard")));
            }
        }
        out
    }

    /// Overwrites tensors from `(name, shape, values)` triples; every tensor
    /// in [`Decoder::state`] must be present with a matching shape.
    pub fn load_state(&mut self, mut lookup: impl FnMut(&str) -> Option<(Vec<usize>, Vec<f64>)>) -> Result<()> {
        for (name, layer) in self.layers_mut() {
            let mut fetch = |field: &str, shape: &[usize]| -> Result<Vec<f64>> {
                let key = format!("{name}.{field}");
                let (got_shape, data) =
                    lookup(&key).ok_or_else(|| Error::Config(format!("checkpoint lacks tensor {key}")))?;
                if got_shape != shape {
                    return Err(Error::Config(format!(
                        "tensor {key} has shape {got_shape:?}, decoder expects {shape:?}"
                    )));
                }
                Ok(data)
            };
            let wshape = layer.weight.shape().to_vec();
            layer.weight = Array2::from_shape_vec((wshape[0], wshape[1]), fetch("weight", &wshape)?)
                .expect("shape checked");
            let c = layer.bn.channels();
            layer.bn.gamma = Array1::from(fetch("bn.gamma", &[c])?);
            layer.bn.beta = Array1::from(fetch("bn.beta", &[c])?);
            layer.bn.running_mean = Array1::from(fetch("bn.running_mean", &[c])?);
            layer.bn.running_var = Array1::from(fetch("bn.running_var", &[c])?);
        }
        Ok(())
    }

    pub fn count_trainable_parameters(&self) -> usize {
        self.trainable().iter().map(|(_, t)| t.len()).sum()
    }

    /// Conv weight matrix of a named layer (`global`, `lateral1..3`, `output`).
    pub fn conv_weight(&self, layer: &str) -> Option<&Array2<f64>> {
        self.layers()
            .into_iter()
            .find(|(n, _)| n == layer)
            .map(|(_, l)| &l.weight)
    }

    /// SHA-256 over [`Decoder::state`].
    pub fn digest(&self) -> String {
        crate::encoders::digest_f64(self.state().into_iter().map(|(_, _, t)| t))
    }
}
