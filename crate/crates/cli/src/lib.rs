//! `affordance` command-line tool: training, evaluation, prediction,
//! pyramid ablations, synthetic data and the HTTP service.
//!
//! Exit status is 0 on success, 1 for invalid invocations or inputs and 2
//! for failures while running.

pub mod config;
pub mod server;

use std::ffi::OsString;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use affordance_core::data::{self, imageio, synthetic};
use affordance_core::decoder::{ActiveLevels, DecoderConfig};
use affordance_core::encoders::Backbone;
use affordance_core::eval::{self, EvalOptions};
use affordance_core::metrics::MetricConfig;
use affordance_core::model::AffordanceModel;
use affordance_core::training::{TrainData, TrainReport, Trainer};
use affordance_core::{Error, Result};
use base64::Engine;
use clap::{Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "affordance", version, about = "Open-vocabulary affordance grounding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Images, binary masks and referring expressions.
    Referring,
    /// Images, soft heatmaps and action prompts.
    Affordance,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the decoder from a TOML run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dotted-key override such as `train.learning_rate=3e-4`; repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Score a checkpoint on an affordance manifest and write a JSON report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = affordance_core::metrics::DEFAULT_EPSILON)]
        epsilon: f64,
        /// Score raw logits without the sigmoid.
        #[arg(long)]
        no_sigmoid: bool,
        /// Skip the per-map min-max rescale.
        #[arg(long)]
        no_min_max: bool,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        /// Write an input | prediction | ground-truth panel per sample.
        #[arg(long)]
        render_dir: Option<PathBuf>,
    },
    /// Predict a heatmap for one image and prompt.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        prompt: String,
        /// 16-bit grayscale PNG at the image's resolution.
        #[arg(long)]
        out: PathBuf,
        /// Also write the heatmap blended over the image.
        #[arg(long)]
        overlay: Option<PathBuf>,
    },
    /// Train (or reuse) one checkpoint per pyramid-level subset and compare them.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Affordance manifest to evaluate on.
        #[arg(long)]
        manifest: PathBuf,
        /// Level subsets such as `1`, `1,2`, `1,2,3`; repeatable.
        #[arg(long = "levels", default_values = ["1", "1,2", "1,2,3"])]
        levels: Vec<ActiveLevels>,
        /// Existing checkpoint for a subset, as `LEVELS=PATH`; repeatable.
        #[arg(long = "checkpoint", value_name = "LEVELS=PATH")]
        checkpoints: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve predictions over HTTP.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, default_value_t = server::DEFAULT_MAX_BODY_BYTES)]
        max_body_bytes: usize,
    },
    /// Write a synthetic shapes dataset and its manifest.
    Synth {
        #[arg(value_enum)]
        kind: SynthKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        canvas: usize,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).with_target(false).try_init();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train { config, overrides } => {
            let cfg = RunConfig::load(&config, &overrides)?;
            let report = train(&cfg)?;
            print_json(&serde_json::json!({
                "final_step": report.final_step,
                "final_loss": report.losses.last().map(|l| l.1),
                "ema_loss": report.ema_loss,
                "checkpoint": report.final_checkpoint,
                "encoder_digest": report.encoder_digest_after,
            }));
            Ok(())
        }
        Command::Eval {
            checkpoint,
            manifest,
            out,
            epsilon,
            no_sigmoid,
            no_min_max,
            batch_size,
            render_dir,
        } => {
            let model = AffordanceModel::from_checkpoint(&checkpoint)?;
            let samples = data::load_affordance_manifest(&manifest)?;
            let opts = EvalOptions {
                metrics: MetricConfig {
                    epsilon,
                    sigmoid: !no_sigmoid,
                    min_max: !no_min_max,
                },
                batch_size,
                render_dir,
            };
            let report = eval::evaluate(&model, &samples, &opts)?;
            report.save(&out)?;
            println!(
                "KLD {:.4}  SIM {:.4}  NSS {:.4}  ({} samples, {} degenerate)",
                report.kld(),
                report.sim(),
                report.nss(),
                report.n_samples,
                report.degenerate_count
            );
            Ok(())
        }
        Command::Predict {
            checkpoint,
            image,
            prompt,
            out,
            overlay,
        } => {
            let model = AffordanceModel::from_checkpoint(&checkpoint)?;
            let bytes = std::fs::read(&image).map_err(|e| Error::io(&image, e))?;
            let response = server::predict_bytes(&model, &bytes, &prompt)?;
            let png = base64::engine::general_purpose::STANDARD
                .decode(&response.heatmap)
                .expect("encoded just above");
            imageio::write_bytes(&out, &png)?;
            if let Some(path) = overlay {
                let rgb = imageio::rgb_from_dynamic(&imageio::decode(&bytes)?);
                let pred = model.predict(&rgb, &prompt)?;
                let blended = imageio::overlay(&rgb, &pred.normalized(), 0.5);
                imageio::write_bytes(&path, &imageio::encode_rgb8(&blended)?)?;
            }
            print_json(&serde_json::json!({
                "width": response.width,
                "height": response.height,
                "min_logit": response.min_logit,
                "max_logit": response.max_logit,
                "model_tag": response.model_tag,
            }));
            Ok(())
        }
        Command::Ablate {
            config,
            overrides,
            manifest,
            levels,
            checkpoints,
            out,
        } => {
            let cfg = RunConfig::load(&config, &overrides)?;
            let samples = data::load_affordance_manifest(&manifest)?;
            let table = ablate(&cfg, &levels, &checkpoints, &samples)?;
            imageio::write_bytes(&out, format!("{}\n", serde_json::to_string_pretty(&table)?).as_bytes())?;
            print!("{}", table.to_markdown());
            Ok(())
        }
        Command::Serve {
            checkpoint,
            port,
            host,
            max_body_bytes,
        } => {
            let model = Arc::new(AffordanceModel::from_checkpoint(&checkpoint)?);
            let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
            runtime
                .block_on(server::serve(model, SocketAddr::new(host, port), max_body_bytes))
                .map_err(|e| Error::io(format!("{host}:{port}"), e))
        }
        Command::Synth {
            kind,
            out,
            count,
            seed,
            canvas,
        } => {
            let manifest = match kind {
                SynthKind::Referring => synthetic::write_referring_dataset(&out, seed, count, canvas)?,
                SynthKind::Affordance => synthetic::write_affordance_dataset(&out, seed, count, canvas)?,
            };
            println!("{}", manifest.display());
            Ok(())
        }
    }
}

/// Trains per a run configuration, writing artifacts to its output directory.
pub fn train(cfg: &RunConfig) -> Result<TrainReport> {
    let data = match &cfg.synthetic {
        Some(s) => TrainData::synthetic(s.seed, s.count, s.canvas)?,
        None => TrainData::Manifest(data::load_referring_manifests(&cfg.train_manifests)?),
    };
    let mut trainer = match &cfg.resume {
        Some(ckpt) => Trainer::resume(ckpt, cfg.train.clone())?,
        None => Trainer::new(cfg.model.clone(), cfg.train.clone())?,
    };
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    imageio::write_bytes(&cfg.output_dir.join("resolved_config.toml"), cfg.to_toml()?.as_bytes())?;
    trainer.run(Arc::new(data), Some(&cfg.output_dir))
}

fn parse_checkpoint_arg(arg: &str) -> Result<(ActiveLevels, PathBuf)> {
    let (levels, path) = arg
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--checkpoint {arg:?} is not of the form LEVELS=PATH")))?;
    Ok((levels.parse()?, PathBuf::from(path)))
}

/// Builds the ablation table, training every subset that was not handed
/// a checkpoint under `<output_dir>/ablation-l<levels>`.
pub fn ablate(
    cfg: &RunConfig,
    levels: &[ActiveLevels],
    checkpoints: &[String],
    samples: &[data::AffordanceSample],
) -> Result<eval::AblationTable> {
    let given: Vec<(ActiveLevels, PathBuf)> = checkpoints.iter().map(|c| parse_checkpoint_arg(c)).collect::<Result<_>>()?;
    let mut entries = Vec::with_capacity(levels.len());
    for &l in levels {
        let path = match given.iter().find(|(g, _)| *g == l) {
            Some((_, p)) => p.clone(),
            None => train_subset(cfg, l)?,
        };
        entries.push((l, Some(path)));
    }
    eval::run_ablation(&entries, samples, &EvalOptions::default())
}

fn train_subset(cfg: &RunConfig, levels: ActiveLevels) -> Result<PathBuf> {
    let mut sub = cfg.clone();
    let base = match &cfg.model.decoder {
        Some(d) => d.clone(),
        None => DecoderConfig::for_backbone(Backbone::load(&cfg.model.backbone)?.dims()),
    };
    sub.model.decoder = Some(DecoderConfig {
        active_levels: levels,
        ..base
    });
    let digits: String = levels.levels().iter().map(|l| l.to_string()).collect();
    sub.output_dir = cfg.output_dir.join(format!("ablation-l{digits}"));
    sub.resume = None;
    let report = train(&sub)?;
    Ok(report
        .final_checkpoint
        .unwrap_or_else(|| Path::new(&sub.output_dir).join("final.ckpt")))
}
