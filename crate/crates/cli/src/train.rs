//! `densegen train`: fits the denoiser and writes a checkpoint plus loss trace.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use densegen_core::diffusion::{write_loss_csv, Checkpoint, DenoiserConfig, TrainConfig, TrainReport, Trainer};
use densegen_core::encoders::EncoderConfig;
use densegen_core::layout::LATENT_DOWNSCALE;
use densegen_data::{load_dataset, to_train_examples};

use crate::error::{usage, Result, Status};
use crate::stage::{require_dir, require_file, write_json, Staging};
use crate::Format;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const SUMMARY_FILE: &str = "train.json";

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `synth`.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoint.json, loss.csv and train.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint. Only --epochs and --max-steps override
    /// its stored training configuration.
    #[arg(long)]
    pub resume: Option<PathBuf>,

    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    /// Stop after this many optimizer steps in total.
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 1.0)]
    pub grad_clip: f64,
    /// Per-region chance of training on the null prompt.
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    /// Loss weight on visual-text cells (5 for slide-like data).
    #[arg(long, default_value_t = 1.0)]
    pub beta_glyph: f64,
    #[arg(long, default_value_t = 1000)]
    pub diffusion_steps: usize,

    #[arg(long, default_value_t = 4)]
    pub blocks: usize,
    #[arg(long, default_value_t = 32)]
    pub d_model: usize,
    #[arg(long, default_value_t = 16)]
    pub d_head: usize,
    #[arg(long, default_value_t = 1)]
    pub heads: usize,
    #[arg(long, default_value_t = 16)]
    pub d_time: usize,
}

#[derive(Serialize)]
struct Summary {
    steps: usize,
    records: usize,
    first_loss: Option<f64>,
    last_loss: Option<f64>,
    null_prompts: usize,
    prompts_seen: usize,
}

pub fn run(a: &TrainArgs, seed: u64, format: Format) -> Result<Status> {
    require_dir(&a.data, "dataset")?;
    if let Some(r) = &a.resume {
        require_file(r, "checkpoint")?;
    }
    let items = load_dataset(&a.data)?;
    let first = items
        .first()
        .ok_or_else(|| usage(format!("dataset {} is empty", a.data.display())))?;
    let (height, width) = first.layout.latent_dims(LATENT_DOWNSCALE);

    let mut trainer: Trainer<f64> = match &a.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let mut t = ckpt.to_trainer::<f64>()?;
            t.config.epochs = a.epochs;
            t.config.max_steps = a.max_steps;
            t.config.validate()?;
            t
        }
        None => {
            let cfg = TrainConfig {
                learning_rate: a.lr,
                batch_size: a.batch_size,
                epochs: a.epochs,
                max_steps: a.max_steps,
                weight_decay: a.weight_decay,
                grad_clip: a.grad_clip,
                dropout: a.dropout,
                beta_glyph: a.beta_glyph,
                seed,
                diffusion_steps: a.diffusion_steps,
                encoder: EncoderConfig::default(),
            };
            let dcfg = DenoiserConfig {
                height,
                width,
                blocks: a.blocks,
                d_model: a.d_model,
                d_head: a.d_head,
                heads: a.heads,
                d_time: a.d_time,
                d_text: cfg.encoder.d_text,
                ..DenoiserConfig::default()
            };
            Trainer::new(dcfg, cfg)?
        }
    };
    let d = &trainer.denoiser.config;
    if (d.height, d.width) != (height, width) {
        return Err(usage(format!(
            "dataset latent grid {height}x{width} does not match the model's {}x{}",
            d.height, d.width
        )));
    }
    let examples = to_train_examples::<f64>(&items, &trainer.config.encoder, d.channels)?;

    let stage = Staging::new(&a.out)?;
    let mut report = TrainReport::default();
    trainer.run(&examples, &mut report)?;
    Checkpoint::from_trainer(&trainer).save(stage.path().join(CHECKPOINT_FILE))?;
    std::fs::write(stage.path().join(LOSS_FILE), write_loss_csv(&report.trace))?;
    let summary = Summary {
        steps: trainer.step,
        records: report.trace.len(),
        first_loss: report.trace.first().map(|r| r.loss),
        last_loss: report.trace.last().map(|r| r.loss),
        null_prompts: report.null_prompts,
        prompts_seen: report.prompts_seen,
    };
    write_json(&stage.path().join(SUMMARY_FILE), &summary)?;
    stage.commit()?;
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&summary).expect("serializable")),
        Format::Text => println!(
            "{} steps, loss {:?} -> {:?}",
            summary.steps, summary.first_loss, summary.last_loss
        ),
    }
    Ok(Status::Ok)
}
