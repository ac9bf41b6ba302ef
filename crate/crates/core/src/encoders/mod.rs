//! Frozen dual-encoder backbones.
//!
//! Two backbones sit behind one interface: the pretrained ResNet dual
//! encoder ([`clip::ClipModel`]) loaded from a safetensors file, and a
//! deterministic stub ([`stub::StubBackbone`]) that needs no weights at all.
//! Neither has trainable parameters; nothing downstream can mutate them.

pub mod clip;
pub mod stub;
pub mod tokenizer;

use std::path::PathBuf;

use ndarray::{Array2, Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use clip::ClipModel;
pub use stub::StubBackbone;
pub use tokenizer::{BpeTokenizer, TokenSequence};

/// Default training / inference resolution.
pub const DEFAULT_INPUT_SIZE: usize = 416;

/// Per-channel pixel normalization applied when building an [`ImageBatch`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelNorm {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl PixelNorm {
    pub const IDENTITY: PixelNorm = PixelNorm {
        mean: [0.0; 3],
        std: [1.0; 3],
    };

    /// Channel statistics published with the pretrained dual encoder.
    pub const CLIP: PixelNorm = PixelNorm {
        mean: [0.481_454_66, 0.457_827_5, 0.408_210_73],
        std: [0.268_629_54, 0.261_302_58, 0.275_777_11],
    };
}

/// A batch of normalized RGB images, `batch × height × width × 3`.
#[derive(Clone, Debug)]
pub struct ImageBatch {
    pixels: Array4<f64>,
}

impl ImageBatch {
    /// Normalizes RGB images with values in `[0, 1]` (each `height × width × 3`).
    pub fn from_rgb(images: &[Array3<f64>], norm: PixelNorm) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidInput("empty image batch".into()))?;
        let (h, w, c) = first.dim();
        if c != 3 {
            return Err(Error::InvalidInput(format!("expected 3 channels, got {c}")));
        }
        let mut pixels = Array4::<f64>::zeros((images.len(), h, w, 3));
        for (i, img) in images.iter().enumerate() {
            if img.dim() != (h, w, 3) {
                return Err(Error::InvalidInput(format!(
                    "image {i} is {:?}, batch expects {:?}",
                    img.dim(),
                    (h, w, 3)
                )));
            }
            let mut dst = pixels.index_axis_mut(Axis(0), i);
            dst.assign(img);
            for ch in 0..3 {
                dst.index_axis_mut(Axis(2), ch)
                    .mapv_inplace(|v| (v - norm.mean[ch]) / norm.std[ch]);
            }
        }
        Self::new(pixels)
    }

    pub fn new(pixels: Array4<f64>) -> Result<Self> {
        let (_, h, w, c) = pixels.dim();
        if c != 3 {
            return Err(Error::InvalidInput(format!("expected 3 channels, got {c}")));
        }
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::InvalidInput(format!(
                "image size {h}x{w} must be a positive multiple of 32"
            )));
        }
        Ok(ImageBatch {
            pixels: pixels.as_standard_layout().into_owned(),
        })
    }

    pub fn pixels(&self) -> &Array4<f64> {
        &self.pixels
    }

    pub fn batch(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn height_px(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn width_px(&self) -> usize {
        self.pixels.dim().2
    }
}

/// Multiscale output of the image tower: stage outputs at strides 8/16/32
/// and the pooled global embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualFeatures {
    pub f1: Array4<f64>,
    pub f2: Array4<f64>,
    pub f3: Array4<f64>,
    pub global: Array2<f64>,
}

impl VisualFeatures {
    pub fn batch(&self) -> usize {
        self.global.nrows()
    }

    /// Spatial size of the stride-32 grid.
    pub fn grid32(&self) -> (usize, usize) {
        let (_, h, w, _) = self.f3.dim();
        (h, w)
    }

    pub fn select(&self, rows: &[usize]) -> VisualFeatures {
        VisualFeatures {
            f1: self.f1.select(Axis(0), rows),
            f2: self.f2.select(Axis(0), rows),
            f3: self.f3.select(Axis(0), rows),
            global: self.global.select(Axis(0), rows),
        }
    }

    pub fn concat(parts: &[VisualFeatures]) -> VisualFeatures {
        let cat4 = |f: fn(&VisualFeatures) -> &Array4<f64>| {
            let views: Vec<_> = parts.iter().map(|p| f(p).view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("matching feature shapes")
        };
        let globals: Vec<_> = parts.iter().map(|p| p.global.view()).collect();
        VisualFeatures {
            f1: cat4(|p| &p.f1),
            f2: cat4(|p| &p.f2),
            f3: cat4(|p| &p.f3),
            global: ndarray::concatenate(Axis(0), &globals).expect("matching global widths"),
        }
    }
}

/// Output of the text tower: per-token features and the global query.
#[derive(Clone, Debug, PartialEq)]
pub struct TextFeatures {
    /// `batch × context × C`
    pub tokens: Array3<f64>,
    /// `batch × C`
    pub global: Array2<f64>,
}

/// Channel widths a backbone produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneDims {
    pub c1: usize,
    pub c2: usize,
    pub c3: usize,
    pub embed: usize,
}

impl Default for BackboneDims {
    fn default() -> Self {
        BackboneDims {
            c1: 512,
            c2: 1024,
            c3: 2048,
            embed: 512,
        }
    }
}

/// Which token's activation becomes the global text embedding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlobalToken {
    #[default]
    Eos,
    Bos,
}

/// Backbone registry entry, as written in configs and checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackboneSpec {
    Stub {
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        dims: BackboneDims,
    },
    Clip {
        weights: PathBuf,
        /// JSON manifest mapping weight file names to SHA-256 digests.
        #[serde(default)]
        manifest: Option<PathBuf>,
        #[serde(default)]
        global_token: GlobalToken,
    },
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec::Stub {
            seed: 0,
            dims: BackboneDims::default(),
        }
    }
}

/// A loaded, frozen backbone.
#[derive(Debug)]
pub enum Backbone {
    Stub(StubBackbone),
    Clip(Box<ClipModel>),
}

impl Backbone {
    pub fn load(spec: &BackboneSpec) -> Result<Self> {
        match spec {
            BackboneSpec::Stub { seed, dims } => Ok(Backbone::Stub(StubBackbone::new(*seed, *dims))),
            BackboneSpec::Clip {
                weights,
                manifest,
                global_token,
            } => {
                if let Some(manifest) = manifest {
                    clip::verify_manifest(weights, manifest)?;
                }
                let mut model = ClipModel::load(weights)?;
                model.global_token = *global_token;
                Ok(Backbone::Clip(Box::new(model)))
            }
        }
    }

    pub fn dims(&self) -> BackboneDims {
        match self {
            Backbone::Stub(s) => s.dims(),
            Backbone::Clip(c) => c.dims(),
        }
    }

    pub fn pixel_norm(&self) -> PixelNorm {
        match self {
            Backbone::Stub(_) => PixelNorm::IDENTITY,
            Backbone::Clip(_) => PixelNorm::CLIP,
        }
    }

    pub fn context_length(&self) -> Option<usize> {
        match self {
            Backbone::Stub(_) => None,
            Backbone::Clip(c) => Some(c.context_length()),
        }
    }

    pub fn encode_image(&self, images: &ImageBatch) -> Result<VisualFeatures> {
        match self {
            Backbone::Stub(s) => Ok(s.encode_image(images)),
            Backbone::Clip(c) => c.encode_image(images),
        }
    }

    pub fn encode_text(&self, tokens: &[TokenSequence]) -> Result<TextFeatures> {
        if tokens.is_empty() {
            return Err(Error::InvalidInput("empty token batch".into()));
        }
        match self {
            Backbone::Stub(s) => Ok(s.encode_text(tokens)),
            Backbone::Clip(c) => c.encode_text(tokens),
        }
    }

    /// SHA-256 over every frozen parameter; used to prove nothing moved.
    pub fn parameter_digest(&self) -> String {
        match self {
            Backbone::Stub(s) => s.parameter_digest(),
            Backbone::Clip(c) => c.parameter_digest(),
        }
    }

    pub fn tag(&self) -> String {
        match self {
            Backbone::Stub(s) => format!("stub-s{}", s.seed()),
            Backbone::Clip(_) => "clip-rn".to_string(),
        }
    }
}

/// Hashes a sequence of f64 tensors in their little-endian byte form.
pub(crate) fn digest_f64<'a>(tensors: impl IntoIterator<Item = &'a [f64]>) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for t in tensors {
        hasher.update((t.len() as u64).to_le_bytes());
        for v in t {
            hasher.update(v.to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}
