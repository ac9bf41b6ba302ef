//! Dataset manifests and sample decoding.
//!
//! Manifests are JSON Lines with paths relative to the manifest file.
//! Referring-segmentation lines look like
//! `{"image": ..., "text": ..., "mask": ..., "split": ...}` and affordance
//! lines like `{"image": ..., "action": ..., "heatmap": ..., "object": ...}`.
//! Either may carry an `"id"`; otherwise one is derived from the manifest
//! name and line number.

pub mod imageio;
pub mod synthetic;

use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;

use ndarray::{Array2, Array3};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::ops::Interpolation;

pub use synthetic::{generate_synthetic, SyntheticScene, SyntheticSceneSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct ReferringSample {
    pub id: String,
    pub image_path: PathBuf,
    pub expression: String,
    pub mask_path: PathBuf,
    pub split: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffordanceSample {
    pub id: String,
    pub image_path: PathBuf,
    pub action: String,
    pub heatmap_path: PathBuf,
    pub object_category: String,
}

#[derive(Deserialize)]
struct ReferringLine {
    image: String,
    text: String,
    mask: String,
    #[serde(default)]
    split: String,
    #[serde(default)]
    id: Option<String>,
}

#[derive(Deserialize)]
struct AffordanceLine {
    image: String,
    action: String,
    heatmap: String,
    #[serde(default)]
    object: String,
    #[serde(default)]
    id: Option<String>,
}

fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<(String, T)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str(line).map_err(|e| Error::DataValidation {
            sample: format!("{}:{}", path.display(), i + 1),
            reason: e.to_string(),
        })?;
        out.push((format!("{stem}-{:06}", i + 1), parsed));
    }
    Ok(out)
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn load_referring_manifest(path: &Path) -> Result<Vec<ReferringSample>> {
    let base = base_dir(path);
    Ok(read_lines::<ReferringLine>(path)?
        .into_iter()
        .map(|(default_id, l)| ReferringSample {
            id: l.id.unwrap_or(default_id),
            image_path: base.join(l.image),
            expression: l.text,
            mask_path: base.join(l.mask),
            split: l.split,
        })
        .collect())
}

/// Concatenates several referring manifests (e.g. one per source dataset).
pub fn load_referring_manifests(paths: &[PathBuf]) -> Result<Vec<ReferringSample>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(load_referring_manifest(p)?);
    }
    Ok(out)
}

pub fn load_affordance_manifest(path: &Path) -> Result<Vec<AffordanceSample>> {
    let base = base_dir(path);
    Ok(read_lines::<AffordanceLine>(path)?
        .into_iter()
        .map(|(default_id, l)| AffordanceSample {
            id: l.id.unwrap_or(default_id),
            image_path: base.join(l.image),
            action: l.action,
            heatmap_path: base.join(l.heatmap),
            object_category: l.object,
        })
        .collect())
}

/// A decoded referring sample at the training resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedReferring {
    pub id: String,
    pub image: Array3<f64>,
    pub expression: String,
    /// Binary, values in {0, 1}.
    pub mask: Array2<f64>,
}

/// A decoded affordance sample. The image is at the model resolution; the
/// heatmap keeps its native resolution and sums to one.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedAffordance {
    pub id: String,
    pub image: Array3<f64>,
    pub action: String,
    pub heatmap: Array2<f64>,
    /// Whether the raster already summed to one before normalization.
    pub was_normalized: bool,
}

fn invalid(id: &str, reason: impl Into<String>) -> Error {
    Error::DataValidation {
        sample: id.to_string(),
        reason: reason.into(),
    }
}

/// Reads a {0, full-scale} mask as {0, 1}.
pub fn read_mask(path: &Path, id: &str) -> Result<Array2<f64>> {
    let (raw, full) = imageio::read_gray(path)?;
    if let Some(v) = raw.iter().find(|&&v| v != 0.0 && v != full) {
        return Err(invalid(id, format!("mask {} has non-binary value {v}", path.display())));
    }
    Ok(raw.mapv(|v| if v == full { 1.0 } else { 0.0 }))
}

/// Nearest-neighbour resize followed by re-binarization.
pub fn resize_mask(mask: &Array2<f64>, h: usize, w: usize) -> Array2<f64> {
    imageio::resize_map(mask, h, w, Interpolation::Nearest).mapv(|v| if v >= 0.5 { 1.0 } else { 0.0 })
}

/// Bilinear resize followed by renormalization to unit mass.
pub fn resize_heatmap(map: &Array2<f64>, h: usize, w: usize) -> Result<Array2<f64>> {
    let r = imageio::resize_map(map, h, w, Interpolation::Bilinear);
    crate::metrics::normalize_sum(r.view())
}

impl ReferringSample {
    pub fn load(&self, size: usize) -> Result<LoadedReferring> {
        let image = imageio::read_rgb(&self.image_path)?;
        let mask = read_mask(&self.mask_path, &self.id)?;
        if image.dim().0 != mask.dim().0 || image.dim().1 != mask.dim().1 {
            return Err(invalid(
                &self.id,
                format!("image is {:?} but mask is {:?}", &image.shape()[..2], mask.dim()),
            ));
        }
        Ok(LoadedReferring {
            id: self.id.clone(),
            image: imageio::resize_rgb(&image, size, size),
            expression: self.expression.clone(),
            mask: resize_mask(&mask, size, size),
        })
    }
}

impl AffordanceSample {
    pub fn load(&self, size: usize) -> Result<LoadedAffordance> {
        let image = imageio::read_rgb(&self.image_path)?;
        let (raw, _) = imageio::read_gray(&self.heatmap_path)?;
        let total = raw.sum();
        if total <= 0.0 {
            return Err(invalid(&self.id, format!("heatmap {} is all zero", self.heatmap_path.display())));
        }
        Ok(LoadedAffordance {
            id: self.id.clone(),
            image: imageio::resize_rgb(&image, size, size),
            action: self.action.clone(),
            heatmap: raw.mapv(|v| v / total),
            was_normalized: (total - 1.0).abs() <= 1e-9,
        })
    }
}

/// Runs `produce` on a background thread, handing items over through a
/// queue that holds at most `capacity` decoded items.
pub struct Prefetch<T> {
    rx: Receiver<T>,
    handle: Option<JoinHandle<()>>,
}

impl<T: Send + 'static> Prefetch<T> {
    pub fn new<I>(items: I, capacity: usize) -> Self
    where
        I: IntoIterator<Item = T> + Send + 'static,
    {
        let (tx, rx) = sync_channel(capacity.max(1));
        let handle = std::thread::spawn(move || {
            for item in items {
                if tx.send(item).is_err() {
                    break;
                }
            }
        });
        Prefetch {
            rx,
            handle: Some(handle),
        }
    }
}

impl<T> Iterator for Prefetch<T> {
    type Item = T;

    fn next(&mut self) -> Option<T> {
        match self.rx.recv() {
            Ok(v) => Some(v),
            Err(_) => {
                if let Some(h) = self.handle.take() {
                    if let Err(panic) = h.join() {
                        std::panic::resume_unwind(panic);
                    }
                }
                None
            }
        }
    }
}
