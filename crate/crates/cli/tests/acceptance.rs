//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! Set `AFFORDANCE_BLESS=1` to rewrite `tests/golden/eval_report.json`.

use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use affordance_core::data::LoadedReferring;
use affordance_core::decoder::{self, ActiveLevels, DecoderConfig, DenseEmbedding, Projected};
use affordance_core::encoders::{Backbone, BackboneDims, BackboneSpec, ImageBatch};
use affordance_core::head::{self, HeadConfig, MaskGT};
use affordance_core::metrics;
use affordance_core::model::{AffordanceModel, ModelConfig};
use affordance_core::ops::Interpolation;
use affordance_core::training::{fit_quality, FitQuality, TrainConfig, TrainData, TrainReport, Trainer};
use ndarray::{Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------- oracles

fn oracle_normalize(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut total = 0.0;
    for row in m {
        for &v in row {
            total += v;
        }
    }
    m.iter().map(|row| row.iter().map(|v| v / total).collect()).collect()
}

fn oracle_kld(p: &[Vec<f64>], g: &[Vec<f64>], eps: f64) -> f64 {
    let (p, g) = (oracle_normalize(p), oracle_normalize(g));
    let mut acc = 0.0;
    for i in 0..g.len() {
        for j in 0..g[i].len() {
            acc += g[i][j] * (eps + g[i][j] / (eps + p[i][j])).ln();
        }
    }
    acc
}

fn oracle_sim(p: &[Vec<f64>], g: &[Vec<f64>]) -> f64 {
    let (p, g) = (oracle_normalize(p), oracle_normalize(g));
    let mut acc = 0.0;
    for i in 0..g.len() {
        for j in 0..g[i].len() {
            acc += if p[i][j] < g[i][j] { p[i][j] } else { g[i][j] };
        }
    }
    acc
}

fn oracle_nss(p: &[Vec<f64>], g: &[Vec<f64>]) -> f64 {
    let n = (p.len() * p[0].len()) as f64;
    let mut mean = 0.0;
    for row in p {
        for &v in row {
            mean += v;
        }
    }
    mean /= n;
    let mut var = 0.0;
    for row in p {
        for &v in row {
            var += (v - mean) * (v - mean);
        }
    }
    let sd = (var / n).sqrt();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..p.len() {
        for j in 0..p[i].len() {
            num += (p[i][j] - mean) / sd * g[i][j];
            den += g[i][j];
        }
    }
    num / den
}

fn to_nested(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, zero_frac: f64) -> Array2<f64> {
    let mut m = Array2::from_shape_fn((h, w), |_| {
        if rng.random::<f64>() < zero_frac {
            0.0
        } else {
            rng.random::<f64>()
        }
    });
    if m.sum() == 0.0 {
        m[[0, 0]] = 1.0;
    }
    m
}

/// ×2 bilinear upsampling with half-pixel centres: output row `2i` mixes
/// rows `i-1` and `i` as 1/4 : 3/4, row `2i+1` mixes `i` and `i+1` as 3/4 : 1/4,
/// with out-of-range rows clamped to the border.
fn oracle_up2(x: &[Vec<Vec<f64>>]) -> Vec<Vec<Vec<f64>>> {
    let (h, w, c) = (x.len(), x[0].len(), x[0][0].len());
    let taps = |o: usize, n: usize| -> [(usize, f64); 2] {
        let i = o / 2;
        if o % 2 == 0 {
            [(i.saturating_sub(1), 0.25), (i, 0.75)]
        } else {
            [(i, 0.75), ((i + 1).min(n - 1), 0.25)]
        }
    };
    let mut out = vec![vec![vec![0.0; c]; 2 * w]; 2 * h];
    for (oy, row) in out.iter_mut().enumerate() {
        for (ox, cell) in row.iter_mut().enumerate() {
            for (iy, wy) in taps(oy, h) {
                for (ix, wx) in taps(ox, w) {
                    for ch in 0..c {
                        cell[ch] += wy * wx * x[iy][ix][ch];
                    }
                }
            }
        }
    }
    out
}

fn sample_hwc(a: &Array4<f64>, b: usize) -> Vec<Vec<Vec<f64>>> {
    let (_, h, w, c) = a.dim();
    (0..h)
        .map(|y| (0..w).map(|x| (0..c).map(|ch| a[[b, y, x, ch]]).collect()).collect())
        .collect()
}

fn oracle_fuse(p: &Projected, b: usize) -> Vec<Vec<Vec<f64>>> {
    let (h32, w32) = p.grid32;
    let c = p.global.ncols();
    let mut x = vec![vec![vec![0.0; c]; w32]; h32];
    for (y, row) in x.iter_mut().enumerate() {
        for (xx, cell) in row.iter_mut().enumerate() {
            for (ch, v) in cell.iter_mut().enumerate() {
                *v = p.global[[b, ch]];
                if let Some(f3) = &p.levels[2] {
                    *v += f3[[b, y, xx, ch]];
                }
            }
        }
    }
    for level in [1, 0] {
        x = oracle_up2(&x);
        if let Some(f) = &p.levels[level] {
            for (y, row) in x.iter_mut().enumerate() {
                for (xx, cell) in row.iter_mut().enumerate() {
                    for (ch, v) in cell.iter_mut().enumerate() {
                        *v += f[[b, y, xx, ch]];
                    }
                }
            }
        }
    }
    x
}

fn randn4(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> Array4<f64> {
    Array4::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
}

// ---------------------------------------------------------------- criteria

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let start = Instant::now();
    let (mut worst_kld, mut worst_sim, mut worst_nss) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let p = random_map(&mut rng, 8, 8, 0.2);
        let g = random_map(&mut rng, 8, 8, 0.2);
        let (pn, gn) = (to_nested(&p), to_nested(&g));
        let k = metrics::kld(p.view(), g.view(), metrics::DEFAULT_EPSILON).map_err(|e| e.to_string())?;
        let s = metrics::sim(p.view(), g.view()).map_err(|e| e.to_string())?;
        let n = metrics::nss(p.view(), g.view()).map_err(|e| e.to_string())?;
        worst_kld = worst_kld.max((k - oracle_kld(&pn, &gn, metrics::DEFAULT_EPSILON)).abs());
        worst_sim = worst_sim.max((s - oracle_sim(&pn, &gn)).abs());
        worst_nss = worst_nss.max((n.value - oracle_nss(&pn, &gn)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("max |Δ| kld {worst_kld:.1e} sim {worst_sim:.1e} nss {worst_nss:.1e}, {secs:.2}s");
    ensure(worst_kld <= 1e-10 && worst_nss <= 1e-10 && worst_sim <= 1e-12 && secs < 10.0, detail.clone())?;
    Ok(detail)
}

fn metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let eps = metrics::DEFAULT_EPSILON;
    let mut worst_affine = 0.0f64;
    let mut worst_kld = f64::NEG_INFINITY;
    let mut worst_sim = 0.0f64;
    for _ in 0..100 {
        let x = random_map(&mut rng, 8, 8, 0.1);
        let g = random_map(&mut rng, 8, 8, 0.5);
        worst_kld = worst_kld.max(metrics::kld(x.view(), x.view(), eps).map_err(|e| e.to_string())?);
        worst_sim = worst_sim.max((metrics::sim(x.view(), x.view()).map_err(|e| e.to_string())? - 1.0).abs());
        let a = rng.random_range(0.1..10.0);
        let b = rng.random_range(-5.0..5.0);
        let base = metrics::nss(x.view(), g.view()).map_err(|e| e.to_string())?.value;
        let moved = metrics::nss(x.mapv(|v| a * v + b).view(), g.view()).map_err(|e| e.to_string())?.value;
        worst_affine = worst_affine.max((base - moved).abs());
    }
    let two = metrics::nss(
        Array2::from_shape_vec((1, 2), vec![0.0, 1.0]).unwrap().view(),
        Array2::from_shape_vec((1, 2), vec![0.0, 1.0]).unwrap().view(),
    )
    .map_err(|e| e.to_string())?
    .value;
    let detail = format!(
        "max kld(x,x) {worst_kld:.1e}, max |sim(x,x)-1| {worst_sim:.1e}, max NSS affine drift {worst_affine:.1e}, two-pixel NSS {two}"
    );
    ensure(
        worst_kld <= 10.0 * eps && worst_sim <= 1e-12 && worst_affine <= 1e-9 && two == 1.0,
        detail.clone(),
    )?;
    Ok(detail)
}

fn loss_correctness() -> Outcome {
    let err = |e: affordance_core::Error| e.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mask = MaskGT::new(Array3::from_shape_fn((1, 4, 4), |_| f64::from(rng.random_bool(0.5)))).map_err(err)?;
    let zero = head::contrastive_loss(&Array3::zeros((1, 4, 4)), &mask).map_err(err)?;
    let ln2_err = (zero - std::f64::consts::LN_2).abs();

    let mut worst_fd = 0.0f64;
    for _ in 0..20 {
        let mask = MaskGT::new(Array3::from_shape_fn((1, 4, 4), |_| f64::from(rng.random_bool(0.5)))).map_err(err)?;
        let logits = Array3::from_shape_fn((1, 4, 4), |_| rng.random_range(-3.0..3.0));
        let (_, grad) = head::contrastive_loss_with_grad(&logits, &mask).map_err(err)?;
        let h = 1e-5;
        for idx in 0..16 {
            let (y, x) = (idx / 4, idx % 4);
            let mut up = logits.clone();
            up[[0, y, x]] += h;
            let mut down = logits.clone();
            down[[0, y, x]] -= h;
            let fd = (head::contrastive_loss(&up, &mask).map_err(err)?
                - head::contrastive_loss(&down, &mask).map_err(err)?)
                / (2.0 * h);
            let a = grad[[0, y, x]];
            worst_fd = worst_fd.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-8));
        }
    }

    let big = Array3::from_shape_fn((1, 2, 2), |(_, y, x)| if (y + x) % 2 == 0 { 1e4 } else { -1e4 });
    let mut finite = true;
    for m in [[1.0, 1.0, 1.0, 1.0], [0.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 1.0], [0.0, 1.0, 1.0, 0.0]] {
        let mask = MaskGT::new(Array3::from_shape_vec((1, 2, 2), m.to_vec()).unwrap()).map_err(err)?;
        let (l, g) = head::contrastive_loss_with_grad(&big, &mask).map_err(err)?;
        finite &= l.is_finite() && g.iter().all(|v| v.is_finite());
    }
    let detail = format!("|L(0)-ln2| {ln2_err:.1e}, max FD rel err {worst_fd:.1e}, finite at ±1e4: {finite}");
    ensure(ln2_err <= 1e-9 && worst_fd < 1e-4 && finite, detail.clone())?;
    Ok(detail)
}

fn fusion_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (b, h32, w32, c) = (2, 2, 3, 5);
    let mut worst = 0.0f64;
    for levels in [vec![1u8, 2, 3], vec![1], vec![1, 2], vec![2, 3], vec![3]] {
        let active = ActiveLevels::new(&levels).map_err(|e| e.to_string())?;
        let mut lv: [Option<Array4<f64>>; 3] = [None, None, None];
        for (l, slot) in lv.iter_mut().enumerate() {
            if active.contains(l + 1) {
                let s = 4 >> l;
                *slot = Some(randn4(&mut rng, (b, h32 * s, w32 * s, c)));
            }
        }
        let p = Projected {
            global: Array2::from_shape_fn((b, c), |_| rng.random_range(-1.0..1.0)),
            levels: lv,
            grid32: (h32, w32),
        };
        let fused = decoder::fuse(&p, Interpolation::Bilinear);
        for bi in 0..b {
            let want = oracle_fuse(&p, bi);
            let got = sample_hwc(&fused, bi);
            ensure(got.len() == want.len() && got[0].len() == want[0].len(), "fused shape mismatch")?;
            for (gr, wr) in got.iter().zip(&want) {
                for (gc, wc) in gr.iter().zip(wr) {
                    for (g, w) in gc.iter().zip(wc) {
                        worst = worst.max((g - w).abs());
                    }
                }
            }
        }
    }

    let backbone = Backbone::load(&BackboneSpec::default()).map_err(|e| e.to_string())?;
    let dec = decoder::Decoder::new(DecoderConfig::for_backbone(backbone.dims()), 0).map_err(|e| e.to_string())?;
    let mut grids = Vec::new();
    for size in [64usize, 128, 416] {
        let img = Array4::from_shape_fn((1, size, size, 3), |(_, y, x, ch)| ((y * 7 + x * 3 + ch) % 17) as f64 / 16.0);
        let feats = backbone
            .encode_image(&ImageBatch::new(img).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let dense = dec.forward(&feats).map_err(|e| e.to_string())?;
        let (_, h8, w8, _) = dense.grid.dim();
        ensure(h8 == size / 8 && w8 == size / 8, format!("input {size} gave a {h8}x{w8} grid"))?;
        grids.push(format!("{size}->{h8}"));
    }
    let detail = format!("max |Δ| {worst:.1e} over 5 level subsets; stride-8 grids {}", grids.join(", "));
    ensure(worst <= 1e-6, detail.clone())?;
    Ok(detail)
}

fn activation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let (b, h8, w8, c) = (2, 3, 4, 7);
    let dense = DenseEmbedding {
        grid: randn4(&mut rng, (b, h8, w8, c)),
    };
    let query = Array2::from_shape_fn((b, c), |_| rng.random_range(-1.0..1.0));
    let mut worst = 0.0f64;
    for (normalize, scale) in [(false, 1.0), (false, 2.5), (true, 10.0)] {
        let cfg = HeadConfig {
            normalize,
            scale,
            ..HeadConfig::default()
        };
        let act = head::compute_activation(query.view(), &dense, h8, w8, &cfg).map_err(|e| e.to_string())?;
        for bi in 0..b {
            let qn: f64 = (0..c).map(|k| query[[bi, k]].powi(2)).sum::<f64>().sqrt();
            for y in 0..h8 {
                for x in 0..w8 {
                    let mut dot = 0.0;
                    let mut pn = 0.0;
                    for k in 0..c {
                        dot += query[[bi, k]] * dense.grid[[bi, y, x, k]];
                        pn += dense.grid[[bi, y, x, k]].powi(2);
                    }
                    if normalize {
                        dot /= qn * pn.sqrt();
                    }
                    let want = scale * dot;
                    worst = worst.max((act.stride8_logits[[bi, y, x]] - want).abs());
                    worst = worst.max((act.logits[[bi, y, x]] - want).abs());
                }
            }
        }
    }
    let detail = format!("max |Δ| {worst:.1e}");
    ensure(worst <= 1e-6, detail.clone())?;
    Ok(detail)
}

fn parameter_budget() -> Outcome {
    let cfg = DecoderConfig::default();
    let (cp, c) = (64usize, 512usize);
    let (c1, c2, c3) = (512usize, 1024, 2048);
    let closed = 9 * cp * (c + c1 + c2 + c3) + cp * c + 2 * (4 * cp + c);
    let counted = decoder::Decoder::new(cfg.clone(), 0)
        .map_err(|e| e.to_string())?
        .count_trainable_parameters();
    let formula = decoder::count_trainable_parameters(&cfg);
    let detail = format!("instantiated {counted}, closed form {closed}, library formula {formula}");
    ensure(
        counted == closed && formula == closed && (2_200_000..=3_000_000).contains(&counted),
        detail.clone(),
    )?;
    Ok(detail)
}

// ---------------------------------------------------------------- training runs

struct OverfitRun {
    report: TrainReport,
    quality: FitQuality,
    backbone_digest_reloaded: String,
}

fn overfit_model(levels: ActiveLevels) -> ModelConfig {
    ModelConfig {
        input_size: 64,
        decoder: Some(DecoderConfig {
            active_levels: levels,
            ..DecoderConfig::for_backbone(BackboneDims::default())
        }),
        ..ModelConfig::default()
    }
}

fn overfit_train() -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-3,
        batch_size: 8,
        epochs: 250,
        max_steps: Some(500),
        log_every: 0,
        ..TrainConfig::default()
    }
}

fn overfit_run(levels: ActiveLevels) -> Result<(OverfitRun, AffordanceModel), String> {
    let e = |e: affordance_core::Error| e.to_string();
    let model_cfg = overfit_model(levels);
    let data = TrainData::synthetic(0, 16, 64).map_err(e)?;
    let samples: Vec<LoadedReferring> = (0..data.len()).map(|i| data.get(i, 64)).collect::<Result<_, _>>().map_err(e)?;
    let mut trainer = Trainer::new(model_cfg.clone(), overfit_train()).map_err(e)?;
    let report = trainer.run(Arc::new(data), None).map_err(e)?;
    let model = trainer.into_model().map_err(e)?;
    let quality = fit_quality(&model, &samples, 0.5).map_err(e)?;
    let backbone_digest_reloaded = Backbone::load(&model_cfg.backbone).map_err(e)?.parameter_digest();
    Ok((
        OverfitRun {
            report,
            quality,
            backbone_digest_reloaded,
        },
        model,
    ))
}

fn frozen_encoder(run: &OverfitRun) -> Outcome {
    let r = &run.report;
    let flow = r.first_step_gradients.clone().ok_or("no step-1 gradient record")?;
    let detail = format!(
        "digest {}.. unchanged: {}, step-1 zero-gradient scalars {}/{}",
        &r.encoder_digest_after[..12],
        r.encoder_digest_before == r.encoder_digest_after && r.encoder_digest_after == run.backbone_digest_reloaded,
        flow.zero_scalars,
        flow.total_scalars
    );
    ensure(
        r.final_step == 500
            && r.encoder_digest_before == r.encoder_digest_after
            && r.encoder_digest_after == run.backbone_digest_reloaded
            && flow.zero_scalars == 0,
        detail.clone(),
    )?;
    Ok(detail)
}

fn overfit(run: &OverfitRun) -> Outcome {
    let q = run.quality;
    let secs = run.report.elapsed_secs;
    let detail = format!(
        "{} steps, eval loss {:.4}, IoU@0.5 {:.3}, {secs:.0}s",
        run.report.final_step, q.loss, q.iou
    );
    ensure(q.loss < 0.05 && q.iou > 0.7 && secs < 300.0, detail.clone())?;
    Ok(detail)
}

fn smoothed_trend(run: &OverfitRun) -> String {
    let l: Vec<f64> = run.report.losses.iter().map(|(_, l)| *l).collect();
    let smooth: Vec<f64> = l.windows(20).map(|w| w.iter().sum::<f64>() / 20.0).collect();
    let rises = smooth.windows(2).filter(|p| p[1] > p[0]).count();
    let max_rise = smooth.windows(2).map(|p| p[1] - p[0]).fold(0.0, f64::max);
    format!(
        "window-20 smoothed loss {:.4} -> {:.4}, {rises} rises of {} (largest {max_rise:.1e})",
        smooth.first().copied().unwrap_or(f64::NAN),
        smooth.last().copied().unwrap_or(f64::NAN),
        smooth.len().saturating_sub(1)
    )
}

fn ablation(full: &OverfitRun) -> Outcome {
    let (only_f1, _) = overfit_run(ActiveLevels::new(&[1]).map_err(|e| e.to_string())?)?;
    let detail = format!(
        "IoU {{F1,F2,F3}} {:.3} vs {{F1}} {:.3}; loss {:.4} vs {:.4}",
        full.quality.iou, only_f1.quality.iou, full.quality.loss, only_f1.quality.loss
    );
    ensure(full.quality.iou >= only_f1.quality.iou, detail.clone())?;
    Ok(detail)
}

const TRAINING_ACTIONS: [&str; 36] = [
    "beat", "boxing", "brush with", "carry", "catch", "cut", "cut with", "drag", "drink with", "eat", "hit", "hold",
    "jump", "kick", "lie on", "lift", "look out", "open", "pack", "peel", "pick up", "pour", "push", "ride", "sip",
    "sit on", "stick", "stir", "swing", "take photo", "talk on", "text on", "throw", "type on", "wash", "write",
];

const NOVEL_PROMPTS: [&str; 20] = [
    "draw on", "lock", "sleep on", "climb", "lean against", "fold", "squeeze", "knock on", "water", "sharpen",
    "plug in", "unscrew", "zip", "tie", "dial", "grate", "spray", "scrub", "unlock", "stack",
];

fn open_vocabulary(model: &AffordanceModel) -> Outcome {
    let overlap: Vec<&str> = NOVEL_PROMPTS.iter().copied().filter(|p| TRAINING_ACTIONS.contains(p)).collect();
    ensure(overlap.is_empty(), format!("prompts overlap the training actions: {overlap:?}"))?;
    let image = Array3::from_shape_fn((48, 80, 3), |(y, x, c)| ((3 * y + x + 5 * c) % 23) as f64 / 22.0);
    let mut distinct = std::collections::HashSet::new();
    for p in NOVEL_PROMPTS {
        let pred = model.predict(&image, p).map_err(|e| format!("{p:?}: {e}"))?;
        ensure(pred.logits.dim() == (48, 80), format!("{p:?}: map is {:?}", pred.logits.dim()))?;
        ensure(pred.logits.iter().all(|v| v.is_finite()), format!("{p:?}: non-finite logits"))?;
        distinct.insert(pred.logits.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
    Ok(format!(
        "{} unseen prompts produced finite 48x80 maps ({} distinct)",
        NOVEL_PROMPTS.len(),
        distinct.len()
    ))
}

// ---------------------------------------------------------------- golden pipeline

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_affordance"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`affordance {}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn golden_pipeline() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let s = |p: &Path| p.to_str().expect("utf-8 temp path").to_string();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    let report = tmp.path().join("eval_report.json");
    cli(&["synth", "affordance", "--out", &s(&data), "--count", "10", "--seed", "7", "--canvas", "64"])?;
    cli(&[
        "train",
        "--config",
        &s(&golden_dir().join("train.toml")),
        "--override",
        &format!("output_dir={}", s(&run)),
    ])?;
    cli(&[
        "eval",
        "--checkpoint",
        &s(&run.join("final.ckpt")),
        "--manifest",
        &s(&data.join("manifest.jsonl")),
        "--out",
        &s(&report),
    ])?;
    let produced = std::fs::read(&report).map_err(|e| e.to_string())?;
    let golden = golden_dir().join("eval_report.json");
    if std::env::var("AFFORDANCE_BLESS").as_deref() == Ok("1") {
        std::fs::write(&golden, &produced).map_err(|e| e.to_string())?;
        return Ok(format!("blessed {} bytes", produced.len()));
    }
    let expected = std::fs::read(&golden).map_err(|e| format!("{}: {e}", golden.display()))?;
    let detail = format!("{} bytes, identical: {}", produced.len(), produced == expected);
    ensure(produced == expected, detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- driver

fn check(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match &result {
        Ok(d) => println!("PASS  {name:<28} {d} [{secs:.1}s]"),
        Err(d) => println!("FAIL  {name:<28} {d} [{secs:.1}s]"),
    }
    result.is_ok()
}

fn main() {
    let mut ok = true;
    ok &= check("metric-oracle", metric_oracle);
    ok &= check("metric-identities", metric_identities);
    ok &= check("loss-correctness", loss_correctness);
    ok &= check("fusion-oracle", fusion_oracle);
    ok &= check("activation-oracle", activation_oracle);
    ok &= check("parameter-budget", parameter_budget);

    let full = panic::catch_unwind(|| overfit_run(ActiveLevels::ALL)).unwrap_or_else(|_| Err("panicked".into()));
    match &full {
        Ok((run, model)) => {
            ok &= check("frozen-encoder", || frozen_encoder(run));
            ok &= check("overfit", || overfit(run));
            println!("info  {:<28} {}", "loss-trend", smoothed_trend(run));
            ok &= check("ablation-direction", || ablation(run));
            ok &= check("open-vocabulary", || open_vocabulary(model));
        }
        Err(e) => {
            for name in ["frozen-encoder", "overfit", "ablation-direction", "open-vocabulary"] {
                println!("FAIL  {name:<28} training run failed: {e}");
            }
            ok = false;
        }
    }
    ok &= check("golden-report", golden_pipeline);
    println!("acceptance: {}", if ok { "all criteria passed" } else { "FAILED" });
    if !ok {
        std::process::exit(1);
    }
}
