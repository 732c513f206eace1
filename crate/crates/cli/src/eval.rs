//! `densegen eval`: spelling precision and layer success rate over a dataset directory.

use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, ValueEnum};
use serde::Serialize;

use densegen_data::load_dataset;
use densegen_eval::{
    aggregate, item_spelling, lgsr, mean_precision, render_text, EvalItem, HypothesisSource, ItemMetrics,
    JudgeProvider, LgsrConfig, LgsrReport, RemoteJudge, SpellingScore, StubJudge,
};

use crate::error::{usage, Result, Status};
use crate::stage::{require_dir, write_json, Staging};
use crate::Format;

pub const REPORT_FILE: &str = "report.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum JudgeKind {
    /// Offline color-share judge, for tests and smoke runs.
    Stub,
    /// HTTP judge at $JUDGE_ENDPOINT (bearer token from $JUDGE_TOKEN).
    Remote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Hypotheses {
    /// Read band-pattern text back from the image.
    Pattern,
    /// Use the reference strings; checks the pipeline, not the image.
    Truth,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset-format directory, usually the output of `generate`.
    #[arg(long)]
    pub data: PathBuf,
    /// Report directory: report.json plus items/<id>.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = JudgeKind::Stub)]
    pub judge: JudgeKind,
    /// A layer succeeds at or above this score.
    #[arg(long, default_value_t = 5)]
    pub threshold: u8,
    #[arg(long, default_value_t = 3)]
    pub attempts: usize,
    #[arg(long, default_value_t = 4)]
    pub parallelism: usize,
    /// Remote judge request timeout in seconds.
    #[arg(long, default_value_t = 60)]
    pub timeout: u64,
    #[arg(long, value_enum, default_value_t = Hypotheses::Pattern)]
    pub hypotheses: Hypotheses,
}

#[derive(Serialize)]
struct ItemDetail<'a> {
    id: &'a str,
    spelling: &'a [SpellingScore],
    lgsr: &'a LgsrReport,
}

/// The prompts of all layers in z-order, as the whole-image caption.
fn global_caption(layout: &densegen_core::Layout) -> String {
    layout
        .layers
        .iter()
        .map(|l| l.prompt.trim())
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("; ")
}

pub fn run(a: &EvalArgs, _seed: u64, format: Format) -> Result<Status> {
    require_dir(&a.data, "dataset")?;
    if a.threshold > 10 {
        return Err(usage("--threshold must be within 0..=10"));
    }
    if a.attempts == 0 || a.parallelism == 0 {
        return Err(usage("--attempts and --parallelism must be at least 1"));
    }
    let items = load_dataset(&a.data)?;
    if items.is_empty() {
        return Err(usage(format!("dataset {} is empty", a.data.display())));
    }
    let judge: Box<dyn JudgeProvider> = match a.judge {
        JudgeKind::Stub => Box::new(StubJudge),
        JudgeKind::Remote => Box::new(RemoteJudge::from_env(Duration::from_secs(a.timeout))?),
    };
    let cfg = LgsrConfig {
        threshold: a.threshold,
        attempts: a.attempts,
        parallelism: a.parallelism,
    };
    let source = match a.hypotheses {
        Hypotheses::Pattern => HypothesisSource::Pattern,
        Hypotheses::Truth => HypothesisSource::GroundTruth,
    };

    let stage = Staging::new(&a.out)?;
    let details = stage.path().join("items");
    std::fs::create_dir(&details)?;
    let mut metrics = Vec::with_capacity(items.len());
    for it in items {
        let caption = global_caption(&it.layout);
        let item = EvalItem::new(it.id, it.image, it.layout, source.clone())?;
        let spelling = item_spelling(&item)?;
        let judged = lgsr(&item.image, &item.layout, &caption, judge.as_ref(), &cfg)?;
        write_json(
            &details.join(format!("{}.json", item.id)),
            &ItemDetail {
                id: &item.id,
                spelling: &spelling,
                lgsr: &judged,
            },
        )?;
        metrics.push(ItemMetrics {
            id: item.id.clone(),
            layers: item.layout.len(),
            spelling: mean_precision(&spelling),
            lgsr: judged.lgsr,
            incomplete: judged.incomplete,
        });
    }
    let report = aggregate(metrics)?;
    write_json(&stage.path().join(REPORT_FILE), &report)?;
    stage.commit()?;
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report).expect("serializable")),
        Format::Text => print!("{}", render_text(&report)),
    }
    if report.incomplete {
        eprintln!("densegen: some layers could not be judged; they count as failures");
        Ok(Status::Incomplete)
    } else {
        Ok(Status::Ok)
    }
}
