//! Zero-shot evaluation over affordance manifests and the pyramid-level
//! ablation table.

use std::path::{Path, PathBuf};

use ndarray::{concatenate, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{imageio, AffordanceSample, LoadedAffordance};
use crate::decoder::ActiveLevels;
use crate::error::{Error, Result};
use crate::metrics::{self, MetricConfig, MetricReport, ReportConfig};
use crate::model::AffordanceModel;
use crate::ops::Interpolation;

/// How predictions reach the ground-truth resolution; echoed in reports.
pub const RESIZE_POLICY: &str = "bilinear prediction resize to ground-truth resolution";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub metrics: MetricConfig,
    /// Images per forward pass.
    pub batch_size: usize,
    /// Write an `input | prediction overlay | ground truth` PNG per sample here.
    pub render_dir: Option<PathBuf>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            metrics: MetricConfig::default(),
            batch_size: 8,
            render_dir: None,
        }
    }
}

/// Runs the model over every sample and scores the maps against the
/// ground-truth heatmaps. Action strings go to the model verbatim.
pub fn evaluate(model: &AffordanceModel, samples: &[AffordanceSample], opts: &EvalOptions) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("evaluation manifest is empty".into()));
    }
    let size = model.config().input_size;
    let mut scores = Vec::with_capacity(samples.len());
    let mut all_prenormalized = true;
    for chunk in samples.chunks(opts.batch_size.max(1)) {
        let loaded: Vec<LoadedAffordance> = chunk.iter().map(|s| s.load(size)).collect::<Result<_>>()?;
        let images: Vec<Array3<f64>> = loaded.iter().map(|l| l.image.clone()).collect();
        let prompts: Vec<&str> = loaded.iter().map(|l| l.action.as_str()).collect();
        let act = model.activate(&images, &prompts).map_err(|e| match e {
            Error::InvalidInput(reason) => Error::DataValidation {
                sample: chunk.iter().map(|s| s.id.as_str()).collect::<Vec<_>>().join(","),
                reason,
            },
            other => other,
        })?;
        for (item, logits) in loaded.iter().zip(act.logits.outer_iter()) {
            all_prenormalized &= item.was_normalized;
            let (h, w) = item.heatmap.dim();
            let pred = imageio::resize_map(&logits.to_owned(), h, w, Interpolation::Bilinear);
            scores.push(metrics::score(item.id.clone(), pred.view(), item.heatmap.view(), &opts.metrics)?);
            if let Some(dir) = &opts.render_dir {
                let post = metrics::preprocess(pred.view(), &opts.metrics);
                let panel = side_by_side(&item.image, &post, &item.heatmap);
                imageio::write_bytes(&dir.join(format!("{}.png", item.id)), &imageio::encode_rgb8(&panel)?)?;
            }
        }
    }
    let config = ReportConfig {
        metrics: opts.metrics.clone(),
        resize_policy: RESIZE_POLICY.to_string(),
        model_tag: model.tag().to_string(),
        ground_truth_prenormalized: all_prenormalized,
    };
    Ok(MetricReport::from_samples(config, scores))
}

fn unit_range(m: &Array2<f64>) -> Array2<f64> {
    let hi = m.iter().cloned().fold(0.0, f64::max);
    if hi > 0.0 {
        m.mapv(|v| v / hi)
    } else {
        m.clone()
    }
}

/// Three panels of the image's size: the input, the prediction blended
/// over it, and the ground truth on a heat colormap.
pub fn side_by_side(image: &Array3<f64>, prediction: &Array2<f64>, gt: &Array2<f64>) -> Array3<f64> {
    let (h, w, _) = image.dim();
    let gt = imageio::resize_map(&unit_range(gt), h, w, Interpolation::Bilinear);
    let gt_panel = Array3::from_shape_fn((h, w, 3), |(y, x, c)| imageio::heat_colormap(gt[[y, x]])[c]);
    let overlay = imageio::overlay(image, &unit_range(prediction), 0.6);
    concatenate(Axis(1), &[image.view(), overlay.view(), gt_panel.view()]).expect("panels share a height")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub levels: ActiveLevels,
    pub label: String,
    pub report: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| levels | KLD | SIM | NSS |\n|---|---|---|---|\n");
        for r in &self.rows {
            s.push_str(&format!(
                "| {} | {:.3} | {:.3} | {:.3} |\n",
                r.label,
                r.report.kld(),
                r.report.sim(),
                r.report.nss()
            ));
        }
        s
    }
}

/// Evaluates one checkpoint per level subset. Every subset must have a
/// checkpoint; the error lists the ones that do not.
pub fn run_ablation(
    entries: &[(ActiveLevels, Option<PathBuf>)],
    samples: &[AffordanceSample],
    opts: &EvalOptions,
) -> Result<AblationTable> {
    let missing: Vec<String> = entries
        .iter()
        .filter(|(_, p)| p.as_deref().is_none_or(|p| !p.exists()))
        .map(|(l, _)| l.set_label())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!("missing checkpoints for {}", missing.join(", "))));
    }
    let mut rows = Vec::with_capacity(entries.len());
    for (levels, path) in entries {
        let model = AffordanceModel::from_checkpoint(path.as_deref().expect("checked above"))?;
        if model.decoder().config().active_levels != *levels {
            return Err(Error::Config(format!(
                "checkpoint {} uses levels {}, expected {}",
                path.as_deref().map(Path::display).expect("checked above"),
                model.decoder().config().active_levels.label(),
                levels.label()
            )));
        }
        rows.push(AblationRow {
            levels: *levels,
            label: levels.set_label(),
            report: evaluate(&model, samples, opts)?,
        });
    }
    Ok(AblationTable { rows })
}
