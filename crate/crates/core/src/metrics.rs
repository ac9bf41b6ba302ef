//! Saliency-style affordance metrics: KL divergence, histogram
//! intersection (SIM) and normalized scanpath saliency (NSS).
//!
//! KLD and SIM compare distributions, so both maps are rescaled to sum to
//! one first. NSS standardizes the prediction with its population mean and
//! standard deviation and averages the z-scores weighted by the ground
//! truth. A prediction with zero spread has no saliency signal: its NSS is
//! defined as 0 and flagged as degenerate instead of failing the run.

use std::path::Path;

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-12;

/// Whether a map is a model prediction or a ground-truth distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapRole {
    Prediction,
    GroundTruth,
}

/// A 2-D map tagged with its role. Ground truth must be non-negative with
/// a positive sum; predictions only need to be finite.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalMap {
    values: Array2<f64>,
    role: MapRole,
}

impl EvalMap {
    pub fn prediction(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("prediction map has non-finite values".into()));
        }
        Ok(EvalMap {
            values,
            role: MapRole::Prediction,
        })
    }

    pub fn ground_truth(values: Array2<f64>) -> Result<Self> {
        check_distribution(values.view(), "ground truth")?;
        Ok(EvalMap {
            values,
            role: MapRole::GroundTruth,
        })
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn role(&self) -> MapRole {
        self.role
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }
}

fn check_distribution(m: ArrayView2<'_, f64>, what: &str) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::InvalidInput(format!("{what} map is empty")));
    }
    if let Some(v) = m.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidInput(format!("{what} map has invalid value {v}")));
    }
    let sum = m.sum();
    if sum <= 0.0 {
        return Err(Error::DegenerateInput(format!("{what} map sums to zero and cannot be normalized")));
    }
    Ok(sum)
}

fn check_shapes(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidInput(format!(
            "map shapes differ: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Rescales a non-negative map to sum to one.
pub fn normalize_sum(m: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let sum = check_distribution(m, "input")?;
    Ok(m.mapv(|v| v / sum))
}

/// Whether a map already sums to one (to within 1e-9).
pub fn is_normalized(m: ArrayView2<'_, f64>) -> bool {
    (m.sum() - 1.0).abs() <= 1e-9
}

/// `Σ gt · ln(ε + gt / (ε + pred))` over sum-normalized maps.
pub fn kld(pred: ArrayView2<'_, f64>, gt: ArrayView2<'_, f64>, epsilon: f64) -> Result<f64> {
    check_shapes(pred, gt)?;
    let p = normalize_sum(pred)?;
    let q = normalize_sum(gt)?;
    Ok(Zip::from(&p)
        .and(&q)
        .fold(0.0, |acc, &m, &g| acc + g * (epsilon + g / (epsilon + m)).ln()))
}

/// `Σ min(pred, gt)` over sum-normalized maps; in `[0, 1]`.
pub fn sim(pred: ArrayView2<'_, f64>, gt: ArrayView2<'_, f64>) -> Result<f64> {
    check_shapes(pred, gt)?;
    let p = normalize_sum(pred)?;
    let q = normalize_sum(gt)?;
    Ok(Zip::from(&p).and(&q).fold(0.0, |acc, &m, &g| acc + m.min(g)))
}

/// NSS value plus whether the zero-spread policy kicked in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nss {
    pub value: f64,
    pub degenerate: bool,
}

/// Ground-truth-weighted mean of the prediction's z-scores.
pub fn nss(pred: ArrayView2<'_, f64>, gt: ArrayView2<'_, f64>) -> Result<Nss> {
    check_shapes(pred, gt)?;
    let weight = check_distribution(gt, "ground truth")?;
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("prediction map has non-finite values".into()));
    }
    let n = pred.len() as f64;
    let mean = pred.sum() / n;
    let var = pred.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 || std <= f64::EPSILON * mean.abs() {
        return Ok(Nss {
            value: 0.0,
            degenerate: true,
        });
    }
    let weighted = Zip::from(pred)
        .and(gt)
        .fold(0.0, |acc, &m, &g| acc + (m - mean) / std * g);
    Ok(Nss {
        value: weighted / weight,
        degenerate: false,
    })
}

/// Prediction post-processing applied before scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub epsilon: f64,
    /// Squash logits through a sigmoid.
    pub sigmoid: bool,
    /// Rescale each map to `[0, 1]` by its own min and max.
    pub min_max: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            epsilon: DEFAULT_EPSILON,
            sigmoid: true,
            min_max: true,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Applies the configured sigmoid / min-max chain. A constant map comes
/// out of min-max as all zeros.
pub fn preprocess(logits: ArrayView2<'_, f64>, cfg: &MetricConfig) -> Array2<f64> {
    let mut m = logits.to_owned();
    if cfg.sigmoid {
        m.mapv_inplace(sigmoid);
    }
    if cfg.min_max {
        let lo = m.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        if span > 0.0 {
            m.mapv_inplace(|v| (v - lo) / span);
        } else {
            m.fill(0.0);
        }
    }
    m
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub kld: f64,
    pub sim: f64,
    pub nss: f64,
    pub degenerate: bool,
}

/// Scores one prediction (raw scores) against a ground-truth heatmap of the
/// same shape. Degenerate predictions are scored, not rejected: a map with
/// no mass after post-processing is treated as uniform for KLD/SIM, and a
/// map with no spread gets NSS 0.
pub fn score(
    id: impl Into<String>,
    prediction: ArrayView2<'_, f64>,
    gt: ArrayView2<'_, f64>,
    cfg: &MetricConfig,
) -> Result<SampleMetrics> {
    check_shapes(prediction, gt)?;
    let id = id.into();
    check_distribution(gt, "ground truth").map_err(|e| Error::DataValidation {
        sample: id.clone(),
        reason: e.to_string(),
    })?;
    let m = preprocess(prediction, cfg);
    if let Some(v) = m.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidInput(format!(
            "prediction for {id} has value {v} after post-processing; enable sigmoid or min-max"
        )));
    }
    let mut degenerate = false;
    let dist = if m.sum() > 0.0 {
        m.clone()
    } else {
        degenerate = true;
        Array2::from_elem(m.dim(), 1.0)
    };
    let n = nss(m.view(), gt)?;
    Ok(SampleMetrics {
        id,
        kld: kld(dist.view(), gt, cfg.epsilon)?,
        sim: sim(dist.view(), gt)?,
        nss: n.value,
        degenerate: degenerate || n.degenerate,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub kld: f64,
    pub sim: f64,
    pub nss: f64,
}

/// Settings echoed into every report so runs are comparable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub metrics: MetricConfig,
    /// How predictions were brought to the ground-truth resolution.
    pub resize_policy: String,
    pub model_tag: String,
    /// Whether every ground-truth map already summed to one on disk.
    pub ground_truth_prenormalized: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config: ReportConfig,
    pub aggregate: Aggregate,
    pub n_samples: usize,
    pub degenerate_count: usize,
    pub per_sample: Vec<SampleMetrics>,
}

fn mean_of(samples: &[SampleMetrics], f: impl Fn(&SampleMetrics) -> f64) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    samples.iter().map(f).sum::<f64>() / samples.len() as f64
}

impl MetricReport {
    /// Aggregates per-sample scores. Samples are ordered by id first, so
    /// the report does not depend on manifest order.
    pub fn from_samples(config: ReportConfig, mut samples: Vec<SampleMetrics>) -> Self {
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        let aggregate = Aggregate {
            kld: mean_of(&samples, |s| s.kld),
            sim: mean_of(&samples, |s| s.sim),
            nss: mean_of(&samples, |s| s.nss),
        };
        MetricReport {
            config,
            aggregate,
            n_samples: samples.len(),
            degenerate_count: samples.iter().filter(|s| s.degenerate).count(),
            per_sample: samples,
        }
    }

    pub fn kld(&self) -> f64 {
        self.aggregate.kld
    }

    pub fn sim(&self) -> f64 {
        self.aggregate.sim
    }

    pub fn nss(&self) -> f64 {
        self.aggregate.nss
    }

    /// Checks that the aggregate and counts agree with `per_sample`.
    pub fn validate(&self) -> Result<()> {
        let rebuilt = MetricReport::from_samples(self.config.clone(), self.per_sample.clone());
        let same = |a: f64, b: f64| a == b || (a.is_nan() && b.is_nan());
        if !same(rebuilt.aggregate.kld, self.aggregate.kld)
            || !same(rebuilt.aggregate.sim, self.aggregate.sim)
            || !same(rebuilt.aggregate.nss, self.aggregate.nss)
            || rebuilt.n_samples != self.n_samples
            || rebuilt.degenerate_count != self.degenerate_count
        {
            return Err(Error::InvalidInput(
                "report aggregate does not match its per-sample entries".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Reads a report and re-checks its internal consistency.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: MetricReport = serde_json::from_str(&text)?;
        report.validate()?;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr2, Array};
    use proptest::prelude::*;

    #[test]
    fn identical_maps() {
        let m = arr2(&[[0.1, 0.2], [0.3, 0.4]]);
        let k = kld(m.view(), m.view(), DEFAULT_EPSILON).unwrap();
        assert!(k <= 10.0 * DEFAULT_EPSILON && k > -4.0 * DEFAULT_EPSILON, "{k}");
        assert_abs_diff_eq!(sim(m.view(), m.view()).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn uniform_against_one_hot_is_log_n() {
        let uniform = Array2::from_elem((2, 2), 0.25);
        let one_hot = arr2(&[[1.0, 0.0], [0.0, 0.0]]);
        let eps = DEFAULT_EPSILON;
        let expected = (eps + 1.0 / (eps + 0.25)).ln();
        assert_abs_diff_eq!(kld(uniform.view(), one_hot.view(), eps).unwrap(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 4f64.ln(), epsilon = 1e-10);
    }

    #[test]
    fn disjoint_supports_have_zero_similarity() {
        let a = arr2(&[[1.0, 0.0], [0.0, 0.0]]);
        let b = arr2(&[[0.0, 0.0], [0.0, 3.0]]);
        assert_eq!(sim(a.view(), b.view()).unwrap(), 0.0);
    }

    #[test]
    fn two_pixel_nss_is_exactly_one() {
        let m = arr2(&[[0.0, 1.0]]);
        let out = nss(m.view(), m.view()).unwrap();
        assert_eq!(out.value, 1.0);
        assert!(!out.degenerate);
    }

    #[test]
    fn constant_prediction_has_zero_nss_and_is_flagged() {
        let m = Array2::from_elem((3, 3), 0.7);
        let g = Array2::from_shape_fn((3, 3), |(y, x)| (y * 3 + x) as f64);
        let out = nss(m.view(), g.view()).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.degenerate);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let a = Array2::<f64>::zeros((2, 2));
        let b = Array2::<f64>::ones((2, 3));
        assert!(matches!(kld(b.view(), b.view().slice(ndarray::s![.., ..2]), 1e-12), Err(Error::InvalidInput(_))));
        assert!(matches!(sim(a.view(), a.view()), Err(Error::DegenerateInput(_))));
        assert!(matches!(kld(a.view(), a.view(), 1e-12), Err(Error::DegenerateInput(_))));
        assert!(EvalMap::ground_truth(arr2(&[[-1.0, 2.0]])).is_err());
        assert_eq!(EvalMap::prediction(arr2(&[[-1.0, 2.0]])).unwrap().role(), MapRole::Prediction);
    }

    #[test]
    fn preprocessing_is_sigmoid_then_min_max() {
        let logits = arr2(&[[0.0, 2.0], [-2.0, 0.0]]);
        let m = preprocess(logits.view(), &MetricConfig::default());
        assert_abs_diff_eq!(m[[0, 1]], 1.0);
        assert_abs_diff_eq!(m[[1, 0]], 0.0);
        assert_abs_diff_eq!(m[[0, 0]], 0.5, epsilon = 1e-12);
        let flat = preprocess(Array2::from_elem((2, 2), 3.0).view(), &MetricConfig::default());
        assert!(flat.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scoring_a_flat_prediction_is_degenerate_but_defined() {
        let g = arr2(&[[0.0, 1.0], [2.0, 1.0]]);
        let s = score("a", Array2::from_elem((2, 2), 4.0).view(), g.view(), &MetricConfig::default()).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.nss, 0.0);
        assert_abs_diff_eq!(s.sim, 0.75, epsilon = 1e-12);
    }

    #[test]
    fn report_is_order_independent_and_self_consistent() {
        let mk = |id: &str, k: f64| SampleMetrics { id: id.into(), kld: k, sim: k / 10.0, nss: -k, degenerate: k > 2.0 };
        let cfg = ReportConfig {
            metrics: MetricConfig::default(),
            resize_policy: "bilinear".into(),
            model_tag: "t".into(),
            ground_truth_prenormalized: false,
        };
        let a = MetricReport::from_samples(cfg.clone(), vec![mk("x", 0.1), mk("y", 2.7), mk("z", 1.3)]);
        let b = MetricReport::from_samples(cfg, vec![mk("z", 1.3), mk("x", 0.1), mk("y", 2.7)]);
        assert_eq!(a, b);
        assert_eq!(a.degenerate_count, 1);
        a.validate().unwrap();
        let mut broken = a.clone();
        broken.aggregate.sim += 1e-9;
        assert!(broken.validate().is_err());
    }

    fn map_strategy() -> impl Strategy<Value = Array2<f64>> {
        proptest::collection::vec(0.0f64..1.0, 16).prop_map(|v| Array::from_shape_vec((4, 4), v).unwrap())
    }

    proptest! {
        #[test]
        fn sim_is_symmetric_and_bounded(a in map_strategy(), b in map_strategy()) {
            prop_assume!(a.sum() > 0.0 && b.sum() > 0.0);
            let ab = sim(a.view(), b.view()).unwrap();
            let ba = sim(b.view(), a.view()).unwrap();
            prop_assert!((ab - ba).abs() < 1e-15);
            prop_assert!(ab <= 1.0 + 1e-12 && ab >= 0.0);
        }

        #[test]
        fn kld_of_a_map_with_itself_vanishes(a in map_strategy()) {
            prop_assume!(a.sum() > 0.0);
            // Each support pixel contributes about -ε, so the value sits just
            // below zero rather than at it.
            let k = kld(a.view(), a.view(), DEFAULT_EPSILON).unwrap();
            prop_assert!(k <= 10.0 * DEFAULT_EPSILON);
            prop_assert!(k >= -(a.len() as f64) * DEFAULT_EPSILON);
        }

        #[test]
        fn nss_is_affine_invariant(m in map_strategy(), g in map_strategy(), a in 0.01f64..100.0, b in -50.0f64..50.0) {
            prop_assume!(g.sum() > 0.0);
            let base = nss(m.view(), g.view()).unwrap();
            prop_assume!(!base.degenerate);
            let moved = nss(m.mapv(|v| a * v + b).view(), g.view()).unwrap();
            prop_assert!((base.value - moved.value).abs() <= 1e-9 * (1.0 + base.value.abs()));
        }
    }
}
