//! Decoder training on referring-segmentation data with the backbone frozen.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ndarray::{Array1, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{self, imageio, LoadedReferring, Prefetch, ReferringSample};
use crate::decoder::Decoder;
use crate::encoders::{Backbone, BpeTokenizer, ImageBatch};
use crate::error::{Error, Result};
use crate::head::{self, MaskGT};
use crate::model::{self, AffordanceModel, ModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// L2 penalty added to the gradient; 0 disables it.
    pub weight_decay: f64,
    /// Global gradient-norm cap.
    pub grad_clip: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops early once this many optimizer steps have run in total.
    pub max_steps: Option<usize>,
    pub seed: u64,
    /// Write `checkpoints/step-NNNNNN.ckpt` every this many steps.
    pub checkpoint_every: Option<usize>,
    pub log_every: usize,
    /// Batches decoded ahead of the optimizer.
    pub prefetch: usize,
    /// Smoothing factor of the reported running loss.
    pub ema_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            weight_decay: 0.0,
            grad_clip: None,
            batch_size: 32,
            epochs: 1,
            max_steps: None,
            seed: 0,
            checkpoint_every: None,
            log_every: 10,
            prefetch: 2,
            ema_decay: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.adam_epsilon <= 0.0 {
            return bad("adam_epsilon must be positive");
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad("ema_decay must lie in [0, 1)");
        }
        Ok(())
    }
}

/// First and second moment estimates, one buffer per trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(sizes: &[usize]) -> Self {
        Adam {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: Vec<(String, &mut [f64])>, grads: &[(String, &[f64])], cfg: &TrainConfig) {
        self.t += 1;
        let clip = match cfg.grad_clip {
            Some(max) => {
                let norm = grads
                    .iter()
                    .flat_map(|(_, g)| g.iter())
                    .map(|g| g * g)
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (i, ((_, p), (_, g))) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let gj = clip * g[j] + cfg.weight_decay * p[j];
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_epsilon);
            }
        }
    }
}

/// Training samples, either decoded lazily from a manifest or held in memory.
#[derive(Clone, Debug)]
pub enum TrainData {
    Manifest(Vec<ReferringSample>),
    InMemory(Vec<LoadedReferring>),
}

impl TrainData {
    /// `count` synthetic scenes rendered at `canvas` pixels.
    pub fn synthetic(seed: u64, count: usize, canvas: usize) -> Result<Self> {
        let scenes = data::synthetic::synthetic_suite(seed, count, canvas)?;
        Ok(TrainData::InMemory(
            scenes
                .into_iter()
                .enumerate()
                .map(|(i, s)| LoadedReferring {
                    id: format!("{i:04}"),
                    image: s.image,
                    expression: s.expression,
                    mask: s.mask,
                })
                .collect(),
        ))
    }

    pub fn len(&self) -> usize {
        match self {
            TrainData::Manifest(s) => s.len(),
            TrainData::InMemory(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, index: usize, size: usize) -> Result<LoadedReferring> {
        match self {
            TrainData::Manifest(s) => s[index].load(size),
            TrainData::InMemory(s) => {
                let mut item = s[index].clone();
                if item.mask.dim() != (size, size) {
                    item.image = imageio::resize_rgb(&item.image, size, size);
                    item.mask = data::resize_mask(&item.mask, size, size);
                }
                Ok(item)
            }
        }
    }
}

/// Scalars at step 1 whose gradient was exactly zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradientFlow {
    pub total_scalars: usize,
    pub zero_scalars: usize,
    /// Tensors whose gradient was zero everywhere.
    pub dead_tensors: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub start_step: usize,
    pub final_step: usize,
    /// `(step, loss)`, steps counted from 1.
    pub losses: Vec<(usize, f64)>,
    pub ema_loss: Option<f64>,
    pub encoder_digest_before: String,
    pub encoder_digest_after: String,
    pub first_step_gradients: Option<GradientFlow>,
    pub final_checkpoint: Option<PathBuf>,
    pub elapsed_secs: f64,
}

pub struct Trainer {
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    backbone: Backbone,
    decoder: Decoder,
    tokenizer: Arc<BpeTokenizer>,
    adam: Adam,
    step: usize,
    encoder_digest: String,
    text_cache: HashMap<String, Array1<f64>>,
    ema: Option<f64>,
}

fn stack_images(items: &[LoadedReferring]) -> Vec<Array3<f64>> {
    items.iter().map(|i| i.image.clone()).collect()
}

fn stack_masks(items: &[LoadedReferring]) -> Result<MaskGT> {
    let views: Vec<_> = items.iter().map(|i| i.mask.view()).collect();
    MaskGT::new(ndarray::stack(Axis(0), &views).map_err(|e| Error::InvalidInput(e.to_string()))?)
}

impl Trainer {
    pub fn new(model_cfg: ModelConfig, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let backbone = Backbone::load(&model_cfg.backbone)?;
        let decoder = AffordanceModel::fresh_decoder(&model_cfg, &backbone)?;
        let sizes: Vec<usize> = decoder.trainable().iter().map(|(_, t)| t.len()).collect();
        Ok(Trainer {
            tokenizer: model::tokenizer_for(&backbone),
            encoder_digest: backbone.parameter_digest(),
            adam: Adam::new(&sizes),
            model_cfg,
            cfg,
            backbone,
            decoder,
            step: 0,
            text_cache: HashMap::new(),
            ema: None,
        })
    }

    /// Resumes from a checkpoint written by [`Trainer::save_checkpoint`],
    /// restoring parameters, running statistics, Adam moments and the step.
    pub fn resume(path: &Path, cfg: TrainConfig) -> Result<Self> {
        let (ckpt, _) = Checkpoint::load(path)?;
        let bad = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let model_cfg: ModelConfig =
            serde_json::from_value(ckpt.meta["model"].clone()).map_err(|e| bad(format!("model config: {e}")))?;
        let mut t = Trainer::new(model_cfg, cfg)?;
        if ckpt.meta["encoder_digest"].as_str() != Some(t.encoder_digest.as_str()) {
            return Err(bad("backbone differs from the one the checkpoint was trained with".into()));
        }
        t.decoder.load_state(|name| ckpt.get(&format!("decoder.{name}")))?;
        let names: Vec<String> = t.decoder.trainable().into_iter().map(|(n, _)| n).collect();
        for (i, name) in names.iter().enumerate() {
            let (_, m) = ckpt.get(&format!("adam.m.{name}")).ok_or_else(|| bad(format!("missing moments for {name}")))?;
            let (_, v) = ckpt.get(&format!("adam.v.{name}")).ok_or_else(|| bad(format!("missing moments for {name}")))?;
            if m.len() != t.adam.m[i].len() || v.len() != t.adam.v[i].len() {
                return Err(bad(format!("moment size mismatch for {name}")));
            }
            t.adam.m[i] = m;
            t.adam.v[i] = v;
        }
        t.adam.t = ckpt.meta["adam_steps"].as_u64().ok_or_else(|| bad("missing adam_steps".into()))?;
        t.step = ckpt.meta["step"].as_u64().ok_or_else(|| bad("missing step".into()))? as usize;
        t.ema = ckpt.meta["ema_loss"].as_f64();
        Ok(t)
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn encoder_digest(&self) -> &str {
        &self.encoder_digest
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model_cfg
    }

    fn text_queries(&mut self, batch: &[LoadedReferring]) -> Result<Array2<f64>> {
        for item in batch {
            if !self.text_cache.contains_key(&item.expression) {
                let tokens = self.tokenizer.tokenize(&item.expression).map_err(|e| Error::DataValidation {
                    sample: item.id.clone(),
                    reason: e.to_string(),
                })?;
                let text = self.backbone.encode_text(&[tokens])?;
                self.text_cache.insert(item.expression.clone(), text.global.row(0).to_owned());
            }
        }
        let rows: Vec<_> = batch.iter().map(|i| self.text_cache[&i.expression].view()).collect();
        ndarray::stack(Axis(0), &rows).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    fn loss_and_grads(
        &mut self,
        scratch: Option<&mut Decoder>,
        batch: &[LoadedReferring],
    ) -> Result<(f64, crate::decoder::Gradients)> {
        let size = self.model_cfg.input_size;
        if let Some(item) = batch.iter().find(|i| i.mask.dim() != (size, size)) {
            return Err(Error::DataValidation {
                sample: item.id.clone(),
                reason: format!("sample is {:?}, expected {size}x{size}", item.mask.dim()),
            });
        }
        let query = self.text_queries(batch)?;
        let images = ImageBatch::from_rgb(&stack_images(batch), self.backbone.pixel_norm())?;
        let feats = self.backbone.encode_image(&images)?;
        let gt = stack_masks(batch)?;
        let decoder = scratch.unwrap_or(&mut self.decoder);
        let (dense, tape) = decoder.forward_train(&feats)?;
        let (loss, _, d_dense) = head::loss_and_dense_grad(query.view(), &dense, &gt, &self.model_cfg.head)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step + 1,
                batch_ids: batch.iter().map(|i| i.id.clone()).collect(),
            });
        }
        Ok((loss, decoder.backward(&feats, tape, d_dense)))
    }

    /// Gradient of a single batch without touching the decoder.
    pub fn gradient_flow(&mut self, batch: &[LoadedReferring]) -> Result<GradientFlow> {
        let mut scratch = self.decoder.clone();
        let (_, grads) = self.loss_and_grads(Some(&mut scratch), batch)?;
        let mut flow = GradientFlow::default();
        for (name, g) in grads.tensors() {
            let zeros = g.iter().filter(|&&v| v == 0.0).count();
            flow.total_scalars += g.len();
            flow.zero_scalars += zeros;
            if zeros == g.len() {
                flow.dead_tensors.push(name);
            }
        }
        Ok(flow)
    }

    /// One optimizer step; returns the batch loss.
    pub fn train_step(&mut self, batch: &[LoadedReferring]) -> Result<f64> {
        let (loss, grads) = self.loss_and_grads(None, batch)?;
        self.adam.step(self.decoder.trainable_mut(), &grads.tensors(), &self.cfg);
        self.step += 1;
        let d = self.cfg.ema_decay;
        self.ema = Some(self.ema.map_or(loss, |e| d * e + (1.0 - d) * loss));
        Ok(loss)
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.cfg.batch_size)
    }

    /// Sample indices of the batch consumed at 0-based `step`. The order of
    /// each epoch is a shuffle seeded by `(seed, epoch)`.
    pub fn batch_indices(&self, step: usize, n: usize) -> Vec<usize> {
        let per_epoch = self.steps_per_epoch(n);
        let (epoch, pos) = (step / per_epoch, step % per_epoch);
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let start = pos * self.cfg.batch_size;
        order[start..(start + self.cfg.batch_size).min(n)].to_vec()
    }

    pub fn total_steps(&self, n: usize) -> usize {
        let full = self.cfg.epochs * self.steps_per_epoch(n);
        self.cfg.max_steps.map_or(full, |m| m.min(full))
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut ckpt = Checkpoint::new(serde_json::json!({
            "format": 1,
            "model": self.model_cfg,
            "train": self.cfg,
            "step": self.step,
            "adam_steps": self.adam.t,
            "ema_loss": self.ema,
            "encoder_digest": self.encoder_digest,
            "decoder_digest": self.decoder.digest(),
        }));
        for (name, shape, data) in self.decoder.state() {
            ckpt.push(format!("decoder.{name}"), shape, data);
        }
        for (i, (name, t)) in self.decoder.trainable().into_iter().enumerate() {
            ckpt.push(format!("adam.m.{name}"), vec![t.len()], &self.adam.m[i]);
            ckpt.push(format!("adam.v.{name}"), vec![t.len()], &self.adam.v[i]);
        }
        ckpt.save(path)
    }

    fn check_encoder(&self) -> Result<String> {
        let now = self.backbone.parameter_digest();
        if now != self.encoder_digest {
            return Err(Error::EncoderMutated {
                before: self.encoder_digest.clone(),
                after: now,
            });
        }
        Ok(now)
    }

    /// Trains until the configured number of epochs or steps. With an
    /// output directory this writes `run_config.json`, `loss.csv`, periodic
    /// checkpoints and `final.ckpt`.
    pub fn run(&mut self, data: Arc<TrainData>, out_dir: Option<&Path>) -> Result<TrainReport> {
        let started = Instant::now();
        let n = data.len();
        if n == 0 {
            return Err(Error::InvalidInput("training set is empty".into()));
        }
        let total = self.total_steps(n);
        let start_step = self.step;
        let mut csv = None;
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let sidecar = serde_json::json!({
                "model": self.model_cfg,
                "train": self.cfg,
                "samples": n,
                "start_step": start_step,
                "total_steps": total,
                "encoder_digest": self.encoder_digest,
            });
            let path = dir.join("run_config.json");
            imageio::write_bytes(&path, format!("{}\n", serde_json::to_string_pretty(&sidecar)?).as_bytes())?;
            let path = dir.join("loss.csv");
            let fresh = start_step == 0 || !path.exists();
            let mut f = OpenOptions::new()
                .create(true)
                .write(true)
                .append(!fresh)
                .truncate(fresh)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            if fresh {
                writeln!(f, "step,loss").map_err(|e| Error::io(&path, e))?;
            }
            csv = Some((f, path));
        }

        let size = self.model_cfg.input_size;
        let schedule: Vec<Vec<usize>> = (start_step..total).map(|s| self.batch_indices(s, n)).collect();
        let loader = Arc::clone(&data);
        let batches = Prefetch::new(
            schedule
                .into_iter()
                .map(move |idx| idx.iter().map(|&i| loader.get(i, size)).collect::<Result<Vec<_>>>()),
            self.cfg.prefetch,
        );

        let mut report = TrainReport {
            start_step,
            final_step: start_step,
            losses: Vec::new(),
            ema_loss: self.ema,
            encoder_digest_before: self.encoder_digest.clone(),
            encoder_digest_after: String::new(),
            first_step_gradients: None,
            final_checkpoint: None,
            elapsed_secs: 0.0,
        };
        for batch in batches {
            let batch = batch?;
            if self.step == 0 {
                let flow = self.gradient_flow(&batch)?;
                if !flow.dead_tensors.is_empty() {
                    return Err(Error::GradientFlow(flow.dead_tensors));
                }
                if flow.zero_scalars > 0 {
                    tracing::warn!(
                        zero = flow.zero_scalars,
                        total = flow.total_scalars,
                        "some decoder parameters received no gradient at step 1"
                    );
                }
                report.first_step_gradients = Some(flow);
            }
            let loss = self.train_step(&batch)?;
            report.losses.push((self.step, loss));
            if let Some((f, path)) = csv.as_mut() {
                writeln!(f, "{},{}", self.step, loss).map_err(|e| Error::io(&*path, e))?;
            }
            if self.cfg.log_every > 0 && self.step % self.cfg.log_every == 0 {
                tracing::info!(step = self.step, loss, ema = self.ema, "train");
            }
            if let (Some(every), Some(dir)) = (self.cfg.checkpoint_every, out_dir) {
                if every > 0 && self.step % every == 0 {
                    self.check_encoder()?;
                    self.save_checkpoint(&dir.join("checkpoints").join(format!("step-{:06}.ckpt", self.step)))?;
                }
            }
        }
        report.final_step = self.step;
        report.ema_loss = self.ema;
        report.encoder_digest_after = self.check_encoder()?;
        if let Some(dir) = out_dir {
            let path = dir.join("final.ckpt");
            self.save_checkpoint(&path)?;
            report.final_checkpoint = Some(path);
        }
        report.elapsed_secs = started.elapsed().as_secs_f64();
        Ok(report)
    }

    /// Hands the trained decoder over to an inference model.
    pub fn into_model(self) -> Result<AffordanceModel> {
        AffordanceModel::assemble(self.model_cfg, self.backbone, self.decoder, None)
    }
}

/// Mean loss and IoU@`threshold` of a model on in-memory samples, using
/// inference-mode batch norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitQuality {
    pub loss: f64,
    pub iou: f64,
}

pub fn fit_quality(model: &AffordanceModel, samples: &[LoadedReferring], threshold: f64) -> Result<FitQuality> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no samples to score".into()));
    }
    let (mut loss, mut iou) = (0.0, 0.0);
    for chunk in samples.chunks(8) {
        let images = stack_images(chunk);
        let prompts: Vec<&str> = chunk.iter().map(|s| s.expression.as_str()).collect();
        let act = model.activate(&images, &prompts)?;
        let gt = stack_masks(chunk)?;
        loss += head::contrastive_loss(&act.logits, &gt)? * chunk.len() as f64;
        iou += head::mask_iou(&act.logits, &gt, threshold).iter().sum::<f64>();
    }
    let n = samples.len() as f64;
    Ok(FitQuality {
        loss: loss / n,
        iou: iou / n,
    })
}
