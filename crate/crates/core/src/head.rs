//! Text-query × pixel-embedding activation maps and the per-pixel
//! contrastive loss against binary object masks.

use ndarray::{Array2, Array3, Array4, ArrayView2, ArrayView3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::decoder::DenseEmbedding;
use crate::error::{Error, Result};
use crate::ops::{self, Interpolation};

/// Where the loss is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossResolution {
    /// Upsample the stride-8 logits to the mask size.
    #[default]
    Input,
    /// Downsample the mask (nearest) to the stride-8 grid.
    Stride8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    /// L2-normalize the query and every pixel embedding before the dot product.
    pub normalize: bool,
    /// Fixed multiplier on the dot product.
    pub scale: f64,
    pub upsample: Interpolation,
    pub loss_resolution: LossResolution,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            normalize: false,
            scale: 1.0,
            upsample: Interpolation::Bilinear,
            loss_resolution: LossResolution::Input,
        }
    }
}

const NORM_EPS: f64 = 1e-12;

/// Per-pixel scores for one (image, prompt) pair per batch row.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMap {
    /// `batch × H × W`
    pub logits: Array3<f64>,
    /// `batch × H/8 × W/8`
    pub stride8_logits: Array3<f64>,
}

/// Binary ground-truth mask, `batch × H × W` with values in {0, 1}.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskGT {
    mask: Array3<f64>,
}

impl MaskGT {
    pub fn new(mask: Array3<f64>) -> Result<Self> {
        if let Some(v) = mask.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidInput(format!("mask value {v} is not 0 or 1")));
        }
        Ok(MaskGT { mask })
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.mask
    }

    pub fn positives(&self) -> usize {
        self.mask.iter().filter(|&&v| v == 1.0).count()
    }

    /// Nearest-neighbour resize; stays binary.
    pub fn resized(&self, h: usize, w: usize) -> MaskGT {
        let m = self.mask.view().insert_axis(Axis(3)).to_owned();
        let r = ops::resize(&m, h, w, Interpolation::Nearest);
        MaskGT {
            mask: r.index_axis_move(Axis(3), 0),
        }
    }
}

fn lift(x: ArrayView3<'_, f64>) -> Array4<f64> {
    x.insert_axis(Axis(3)).as_standard_layout().into_owned()
}

fn drop_channel(x: Array4<f64>) -> Array3<f64> {
    x.index_axis_move(Axis(3), 0)
}

fn l2_normalized_rows(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let n = row.dot(&row).sqrt().max(NORM_EPS);
        row /= n;
    }
    out
}

/// `stride8[b, y, x] = scale · ⟨query[b], dense[b, y, x]⟩`, then a
/// parameter-free resize to `out_h × out_w`.
pub fn compute_activation(
    query: ArrayView2<'_, f64>,
    dense: &DenseEmbedding,
    out_h: usize,
    out_w: usize,
    cfg: &HeadConfig,
) -> Result<ActivationMap> {
    let (b, h8, w8, c) = dense.grid.dim();
    if query.dim() != (b, c) {
        return Err(Error::Config(format!(
            "query is {:?}, dense embedding expects {b}x{c}",
            query.dim()
        )));
    }
    let query = if cfg.normalize {
        l2_normalized_rows(query)
    } else {
        query.to_owned()
    };
    let mut stride8 = Array3::<f64>::zeros((b, h8, w8));
    for bi in 0..b {
        let q = query.row(bi);
        let grid = dense.grid.index_axis(Axis(0), bi);
        for ((y, x), out) in stride8.index_axis_mut(Axis(0), bi).indexed_iter_mut() {
            let px = grid.slice(ndarray::s![y, x, ..]);
            let mut dot = q.dot(&px);
            if cfg.normalize {
                dot /= px.dot(&px).sqrt().max(NORM_EPS);
            }
            *out = cfg.scale * dot;
        }
    }
    let logits = drop_channel(ops::resize(&lift(stride8.view()), out_h, out_w, cfg.upsample));
    Ok(ActivationMap {
        logits,
        stride8_logits: stride8,
    })
}

/// Gradient at the dense embedding given the gradient at the stride-8 logits.
pub fn activation_backward(
    query: ArrayView2<'_, f64>,
    dense: &DenseEmbedding,
    d_stride8: &Array3<f64>,
    cfg: &HeadConfig,
) -> Array4<f64> {
    let (b, h8, w8, c) = dense.grid.dim();
    let query = if cfg.normalize {
        l2_normalized_rows(query)
    } else {
        query.to_owned()
    };
    let mut grad = Array4::<f64>::zeros((b, h8, w8, c));
    for bi in 0..b {
        let q = query.row(bi);
        for y in 0..h8 {
            for x in 0..w8 {
                let g = cfg.scale * d_stride8[[bi, y, x]];
                let mut out = grad.slice_mut(ndarray::s![bi, y, x, ..]);
                if cfg.normalize {
                    let px = dense.grid.slice(ndarray::s![bi, y, x, ..]);
                    let norm = px.dot(&px).sqrt().max(NORM_EPS);
                    let cos = q.dot(&px) / norm;
                    Zip::from(&mut out).and(&q).and(&px).for_each(|o, &qi, &pi| {
                        *o = g * (qi - cos * pi / norm) / norm;
                    });
                } else {
                    out.scaled_add(g, &q);
                }
            }
        }
    }
    grad
}

/// Numerically stable `softplus(x) = ln(1 + e^x)`.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_pair(logits: &Array3<f64>, gt: &MaskGT) -> Result<()> {
    if logits.dim() != gt.mask.dim() {
        return Err(Error::InvalidInput(format!(
            "logits {:?} and mask {:?} differ in shape",
            logits.dim(),
            gt.mask.dim()
        )));
    }
    if logits.is_empty() {
        return Err(Error::InvalidInput("empty logit map".into()));
    }
    Ok(())
}

/// Mean over all pixels of `−log σ(l)` on positives and `−log(1 − σ(l))`
/// on negatives, in the overflow-free softplus form.
pub fn contrastive_loss(logits: &Array3<f64>, gt: &MaskGT) -> Result<f64> {
    check_pair(logits, gt)?;
    let total: f64 = Zip::from(logits)
        .and(&gt.mask)
        .fold(0.0, |acc, &l, &y| acc + if y == 1.0 { softplus(-l) } else { softplus(l) });
    Ok(total / logits.len() as f64)
}

/// Loss and its gradient with respect to `logits`.
pub fn contrastive_loss_with_grad(logits: &Array3<f64>, gt: &MaskGT) -> Result<(f64, Array3<f64>)> {
    let loss = contrastive_loss(logits, gt)?;
    let n = logits.len() as f64;
    let grad = Zip::from(logits)
        .and(&gt.mask)
        .map_collect(|&l, &y| (sigmoid(l) - y) / n);
    Ok((loss, grad))
}

/// Loss for a batch of dense embeddings, plus the gradient at the embeddings.
pub fn loss_and_dense_grad(
    query: ArrayView2<'_, f64>,
    dense: &DenseEmbedding,
    gt: &MaskGT,
    cfg: &HeadConfig,
) -> Result<(f64, ActivationMap, Array4<f64>)> {
    let (_, h, w) = gt.mask.dim();
    let (_, h8, w8, _) = dense.grid.dim();
    let act = compute_activation(query, dense, h, w, cfg)?;
    let (loss, d_stride8) = match cfg.loss_resolution {
        LossResolution::Input => {
            let (loss, d_logits) = contrastive_loss_with_grad(&act.logits, gt)?;
            let d = ops::resize_backward(&lift(d_logits.view()), h8, w8, cfg.upsample);
            (loss, drop_channel(d))
        }
        LossResolution::Stride8 => contrastive_loss_with_grad(&act.stride8_logits, &gt.resized(h8, w8))?,
    };
    let grad = activation_backward(query, dense, &d_stride8, cfg);
    Ok((loss, act, grad))
}

/// Fraction of union covered by the intersection between `σ(logit) > threshold`
/// and the mask, per batch row.
pub fn mask_iou(logits: &Array3<f64>, gt: &MaskGT, threshold: f64) -> Vec<f64> {
    logits
        .outer_iter()
        .zip(gt.mask.outer_iter())
        .map(|(l, m)| {
            let (mut inter, mut union) = (0usize, 0usize);
            Zip::from(&l).and(&m).for_each(|&l, &m| {
                let p = sigmoid(l) > threshold;
                let t = m == 1.0;
                inter += usize::from(p && t);
                union += usize::from(p || t);
            });
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_logits_give_ln2() {
        let logits = Array3::zeros((1, 4, 4));
        let mask = MaskGT::new(Array3::from_shape_fn((1, 4, 4), |(_, y, _)| (y % 2) as f64)).unwrap();
        assert_abs_diff_eq!(contrastive_loss(&logits, &mask).unwrap(), std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn saturated_logits_give_vanishing_loss() {
        let mask = MaskGT::new(Array3::from_shape_fn((1, 4, 4), |(_, y, x)| ((x + y) % 2) as f64)).unwrap();
        let logits = mask.values().mapv(|m| if m == 1.0 { 20.0 } else { -20.0 });
        assert!(contrastive_loss(&logits, &mask).unwrap() < 1e-8);
    }

    #[test]
    fn huge_logits_stay_finite() {
        let mask = MaskGT::new(Array3::from_shape_fn((1, 2, 2), |(_, y, _)| y as f64)).unwrap();
        for v in [1e4, -1e4, 1e300] {
            let logits = Array3::from_elem((1, 2, 2), v);
            let (loss, grad) = contrastive_loss_with_grad(&logits, &mask).unwrap();
            assert!(loss.is_finite() && loss >= 0.0);
            assert!(grad.iter().all(|g| g.is_finite()));
        }
    }

    #[test]
    fn non_binary_mask_and_shape_mismatch_are_rejected() {
        assert!(MaskGT::new(Array3::from_elem((1, 2, 2), 0.5)).is_err());
        let mask = MaskGT::new(Array3::zeros((1, 2, 2))).unwrap();
        assert!(contrastive_loss(&Array3::zeros((1, 2, 3)), &mask).is_err());
    }

    #[test]
    fn query_equal_to_every_pixel_gives_squared_norm() {
        let q = Array2::from_shape_vec((1, 3), vec![0.5, -2.0, 1.0]).unwrap();
        let grid = Array4::from_shape_fn((1, 2, 3, 3), |(_, _, _, c)| q[[0, c]]);
        let act = compute_activation(q.view(), &DenseEmbedding { grid }, 16, 24, &HeadConfig::default()).unwrap();
        assert_eq!(act.logits.dim(), (1, 16, 24));
        assert!(act.logits.iter().all(|&v| (v - 5.25).abs() < 1e-12));
        assert!(act.stride8_logits.iter().all(|&v| v == 5.25));
    }

    #[test]
    fn zero_query_gives_zero_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let grid = Array::from_shape_fn((2, 2, 2, 4), |_| rng.random_range(-1.0..1.0));
        let q = Array2::zeros((2, 4));
        let act = compute_activation(q.view(), &DenseEmbedding { grid }, 16, 16, &HeadConfig::default()).unwrap();
        assert!(act.logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_is_config_error() {
        let grid = Array4::zeros((1, 2, 2, 4));
        let q = Array2::zeros((1, 3));
        let err = compute_activation(q.view(), &DenseEmbedding { grid }, 16, 16, &HeadConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn dense_gradient_matches_finite_differences_for_every_head_variant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let grid = Array::from_shape_fn((2, 2, 2, 3), |_| rng.random_range(-1.0..1.0));
        let q = Array::from_shape_fn((2, 3), |_| rng.random_range(-1.0..1.0));
        let mask = MaskGT::new(Array::from_shape_fn((2, 16, 16), |_| f64::from(rng.random_bool(0.4)))).unwrap();
        for cfg in [
            HeadConfig::default(),
            HeadConfig { normalize: true, scale: 3.0, ..HeadConfig::default() },
            HeadConfig { loss_resolution: LossResolution::Stride8, ..HeadConfig::default() },
        ] {
            let (_, _, grad) = loss_and_dense_grad(q.view(), &DenseEmbedding { grid: grid.clone() }, &mask, &cfg).unwrap();
            let h = 1e-6;
            for idx in [[0, 0, 0, 0], [1, 1, 0, 2], [0, 1, 1, 1]] {
                let mut gp = grid.clone();
                gp[idx] += h;
                let mut gm = grid.clone();
                gm[idx] -= h;
                let lp = loss_and_dense_grad(q.view(), &DenseEmbedding { grid: gp }, &mask, &cfg).unwrap().0;
                let lm = loss_and_dense_grad(q.view(), &DenseEmbedding { grid: gm }, &mask, &cfg).unwrap().0;
                assert_abs_diff_eq!(grad[idx], (lp - lm) / (2.0 * h), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn iou_of_perfect_prediction_is_one() {
        let mask = MaskGT::new(Array3::from_shape_fn((1, 4, 4), |(_, y, _)| f64::from(y < 2))).unwrap();
        let logits = mask.values().mapv(|m| if m == 1.0 { 5.0 } else { -5.0 });
        assert_eq!(mask_iou(&logits, &mask, 0.5), vec![1.0]);
    }
}
