//! Frozen backbone + trainable decoder + activation head, and zero-shot
//! prediction for arbitrary prompts.

use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::imageio;
use crate::decoder::{Decoder, DecoderConfig};
use crate::encoders::{Backbone, BackboneSpec, BpeTokenizer, ImageBatch, TokenSequence, VisualFeatures};
use crate::error::{Error, Result};
use crate::head::{self, ActivationMap, HeadConfig};
use crate::ops::Interpolation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneSpec,
    /// `None` derives the widths from the backbone.
    pub decoder: Option<DecoderConfig>,
    pub head: HeadConfig,
    /// Square side images are resized to before encoding; a multiple of 32.
    pub input_size: usize,
    pub decoder_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneSpec::default(),
            decoder: None,
            head: HeadConfig::default(),
            input_size: 416,
            decoder_seed: 0,
        }
    }
}

/// Map for one (image, prompt) pair at the original image resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: Array2<f64>,
}

impl Prediction {
    pub fn min_max(&self) -> (f64, f64) {
        let lo = self.logits.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Logits rescaled to `[0, 1]`; a constant map becomes all zeros.
    pub fn normalized(&self) -> Array2<f64> {
        let (lo, hi) = self.min_max();
        if hi > lo {
            self.logits.mapv(|v| (v - lo) / (hi - lo))
        } else {
            Array2::zeros(self.logits.dim())
        }
    }
}

#[derive(Debug)]
pub struct AffordanceModel {
    config: ModelConfig,
    backbone: Backbone,
    decoder: Decoder,
    tokenizer: Arc<BpeTokenizer>,
    tag: String,
}

pub(crate) fn tokenizer_for(backbone: &Backbone) -> Arc<BpeTokenizer> {
    let shared = BpeTokenizer::shared();
    match backbone.context_length() {
        Some(n) if n != shared.context_length() => Arc::new((*shared).clone().with_context_length(n)),
        _ => shared,
    }
}

impl AffordanceModel {
    /// Loads the backbone and initializes a fresh decoder.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let backbone = Backbone::load(&config.backbone)?;
        let decoder = Self::fresh_decoder(&config, &backbone)?;
        Self::assemble(config, backbone, decoder, None)
    }

    pub(crate) fn fresh_decoder(config: &ModelConfig, backbone: &Backbone) -> Result<Decoder> {
        if config.input_size == 0 || config.input_size % 32 != 0 {
            return Err(Error::Config(format!(
                "input_size {} is not a positive multiple of 32",
                config.input_size
            )));
        }
        let dcfg = config
            .decoder
            .clone()
            .unwrap_or_else(|| DecoderConfig::for_backbone(backbone.dims()));
        dcfg.check_backbone(backbone.dims())?;
        Decoder::new(dcfg, config.decoder_seed)
    }

    pub(crate) fn assemble(
        config: ModelConfig,
        backbone: Backbone,
        decoder: Decoder,
        checkpoint_digest: Option<&str>,
    ) -> Result<Self> {
        let tokenizer = tokenizer_for(&backbone);
        let levels: String = decoder.config().active_levels.levels().iter().map(|l| l.to_string()).collect();
        let mut tag = format!("{}+fpn-l{levels}", backbone.tag());
        if let Some(d) = checkpoint_digest {
            tag.push('@');
            tag.push_str(&d[..12]);
        }
        Ok(AffordanceModel {
            config,
            backbone,
            decoder,
            tokenizer,
            tag,
        })
    }

    /// Restores a model from a training checkpoint. The backbone named in
    /// the checkpoint is loaded again; its digest must match the recorded one.
    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        let (ckpt, digest) = Checkpoint::load(path)?;
        let bad = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let config: ModelConfig = serde_json::from_value(ckpt.meta["model"].clone())
            .map_err(|e| bad(format!("model config: {e}")))?;
        let backbone = Backbone::load(&config.backbone)?;
        if let Some(recorded) = ckpt.meta["encoder_digest"].as_str() {
            let now = backbone.parameter_digest();
            if now != recorded {
                return Err(bad(format!(
                    "backbone weights differ from the ones it was trained with ({now} vs {recorded})"
                )));
            }
        }
        let mut decoder = Self::fresh_decoder(&config, &backbone)?;
        decoder.load_state(|name| ckpt.get(&format!("decoder.{name}")))?;
        Self::assemble(config, backbone, decoder, Some(&digest))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn tokenizer(&self) -> &BpeTokenizer {
        &self.tokenizer
    }

    /// Backbone, pyramid levels and (when loaded from disk) the first
    /// twelve hex digits of the checkpoint's SHA-256.
    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn tokenize(&self, prompt: &str) -> Result<TokenSequence> {
        self.tokenizer.tokenize(prompt)
    }

    pub fn encode_images(&self, images: &[Array3<f64>]) -> Result<VisualFeatures> {
        let n = self.config.input_size;
        let resized: Vec<Array3<f64>> = images.iter().map(|i| imageio::resize_rgb(i, n, n)).collect();
        let batch = ImageBatch::from_rgb(&resized, self.backbone.pixel_norm())?;
        self.backbone.encode_image(&batch)
    }

    /// Activation maps at the model input resolution for paired images and prompts.
    pub fn activate(&self, images: &[Array3<f64>], prompts: &[&str]) -> Result<ActivationMap> {
        if images.len() != prompts.len() || images.is_empty() {
            return Err(Error::InvalidInput(format!(
                "{} images for {} prompts",
                images.len(),
                prompts.len()
            )));
        }
        let tokens = prompts.iter().map(|p| self.tokenize(p)).collect::<Result<Vec<_>>>()?;
        let text = self.backbone.encode_text(&tokens)?;
        let feats = self.encode_images(images)?;
        let dense = self.decoder.forward(&feats)?;
        let n = self.config.input_size;
        head::compute_activation(text.global.view(), &dense, n, n, &self.config.head)
    }

    /// Zero-shot prediction for one image (any size) and any prompt. The map
    /// is bilinearly resized back to the image's own resolution.
    pub fn predict(&self, image: &Array3<f64>, prompt: &str) -> Result<Prediction> {
        let (h, w, c) = image.dim();
        if h == 0 || w == 0 || c != 3 {
            return Err(Error::InvalidInput(format!("image must be HxWx3, got {:?}", image.dim())));
        }
        let act = self.activate(std::slice::from_ref(image), &[prompt])?;
        let logits = act.logits.index_axis_move(Axis(0), 0);
        Ok(Prediction {
            logits: imageio::resize_map(&logits, h, w, Interpolation::Bilinear),
        })
    }
}
