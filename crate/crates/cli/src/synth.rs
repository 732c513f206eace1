//! `densegen synth`: synthetic datasets, retrieval-based augmentation and asset ingestion.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{ArgGroup, Args};
use serde::Serialize;

use densegen_core::Rng;
use densegen_data::dataset::{augment, load_template};
use densegen_data::{
    replace_background, replace_layers, save_dataset, synth_dataset, transparency_filter, DownsampleEmbedder,
    FilterDecision, FilterThresholds, HeuristicDominant, LayerAsset, LayerDatabase, ReplacementPlan, Style, SynthItem,
    SynthSpec,
};

use crate::error::{usage, Result, Status};
use crate::stage::{require_dir, write_json, Staging};
use crate::Format;

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("mode").required(true).args(["synthetic", "augment", "ingest"])))]
pub struct SynthArgs {
    /// Output directory; replaced atomically on success.
    #[arg(long)]
    pub out: PathBuf,

    /// Random color-semantics layouts and their renders.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    /// Fewest layers above the background.
    #[arg(long, default_value_t = 2)]
    pub min_layers: usize,
    /// Most layers above the background.
    #[arg(long, default_value_t = 8)]
    pub max_layers: usize,
    #[arg(long, default_value_t = 640)]
    pub width: u32,
    #[arg(long, default_value_t = 384)]
    pub height: u32,
    /// Chance that a foreground layer is visual text.
    #[arg(long, default_value_t = 0.0)]
    pub text_prob: f64,

    /// Replace the template's main elements with similar database assets.
    #[arg(long, requires_all = ["template", "db"])]
    pub augment: bool,
    /// Template directory: layout.json plus layer_<i>.png.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Layer database directory.
    #[arg(long)]
    pub db: Option<PathBuf>,
    /// Assets retrieved per main element.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Largest aspect-ratio factor between a layer and its replacement.
    #[arg(long, default_value_t = 1.5)]
    pub ar_tol: f64,
    /// Also swap a solid background for a random solid asset.
    #[arg(long)]
    pub swap_background: bool,

    /// Screen the PNG files in this directory and write the accepted ones as a
    /// layer database (extending --db when given).
    #[arg(long, value_name = "DIR")]
    pub ingest: Option<PathBuf>,
    #[arg(long, default_value_t = 0.15)]
    pub theta_bg: f64,
    #[arg(long, default_value_t = 0.60)]
    pub theta_border: f64,
}

#[derive(Serialize)]
struct IngestRecord {
    file: String,
    decision: FilterDecision,
}

pub fn run(a: &SynthArgs, seed: u64, format: Format) -> Result<Status> {
    if a.synthetic {
        synthetic(a, seed, format)
    } else if a.augment {
        augmented(a, seed, format)
    } else {
        ingest(a, format)
    }
}

fn report(format: Format, summary: &serde_json::Value) {
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(summary).expect("serializable")),
        Format::Text => {
            if let Some(map) = summary.as_object() {
                for (k, v) in map {
                    println!("{k:<10} {v}");
                }
            }
        }
    }
}

fn synthetic(a: &SynthArgs, seed: u64, format: Format) -> Result<Status> {
    let spec = SynthSpec {
        count: a.count,
        min_layers: a.min_layers,
        max_layers: a.max_layers,
        canvas_width: a.width,
        canvas_height: a.height,
        text_probability: a.text_prob,
        ..SynthSpec::default()
    };
    spec.validate()?;
    let stage = Staging::new(&a.out)?;
    let items = synth_dataset(&spec, &Rng::new(seed))?;
    save_dataset(stage.path(), &items)?;
    stage.commit()?;
    report(format, &serde_json::json!({"items": items.len(), "out": a.out.display().to_string()}));
    Ok(Status::Ok)
}

fn augmented(a: &SynthArgs, seed: u64, format: Format) -> Result<Status> {
    let (template, db) = (a.template.as_ref().expect("clap"), a.db.as_ref().expect("clap"));
    require_dir(template, "template")?;
    require_dir(db, "layer database")?;
    if a.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let design = load_template(template)?;
    let db = LayerDatabase::load(db)?;
    let variants = augment(&design, &db, &HeuristicDominant::default(), a.k, a.ar_tol)?;
    let rng = Rng::new(seed);
    let mut items = Vec::with_capacity(variants.len());
    let mut plans: BTreeMap<String, ReplacementPlan> = BTreeMap::new();
    for (n, v) in variants.into_iter().enumerate() {
        let mut plan = v.plan;
        let mut replaced = replace_layers(&design, &plan, &db)?;
        if a.swap_background {
            let (swapped, bg) = replace_background(&replaced, &db, &mut rng.fork(n as u64));
            replaced = swapped;
            plan.background = bg;
        }
        let id = format!("{:05}", n);
        plans.insert(id.clone(), plan);
        items.push(SynthItem {
            id,
            image: replaced.composite(),
            layout: design.layout.clone(),
        });
    }
    let stage = Staging::new(&a.out)?;
    save_dataset(stage.path(), &items)?;
    write_json(&stage.path().join("plans.json"), &plans)?;
    stage.commit()?;
    report(format, &serde_json::json!({"variants": items.len(), "out": a.out.display().to_string()}));
    Ok(Status::Ok)
}

fn ingest(a: &SynthArgs, format: Format) -> Result<Status> {
    let src = a.ingest.as_ref().expect("clap");
    require_dir(src, "ingest source")?;
    let mut db = match &a.db {
        Some(d) => {
            require_dir(d, "layer database")?;
            LayerDatabase::load(d)?
        }
        None => LayerDatabase::new(),
    };
    let th = FilterThresholds {
        theta_bg: a.theta_bg,
        theta_border: a.theta_border,
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(src)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
    files.sort();
    let mut records = Vec::with_capacity(files.len());
    for path in files {
        let rgba = image::open(&path)?.to_rgba8();
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let decision = transparency_filter(&rgba, &th)?;
        if decision == FilterDecision::Accept {
            let caption = std::fs::read_to_string(path.with_extension("txt")).unwrap_or_default();
            let id: String = stem
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
                .collect();
            db.insert(LayerAsset::new(id, rgba, caption.trim(), Style::None, &DownsampleEmbedder)?)?;
        }
        records.push(IngestRecord { file: stem, decision });
    }
    let accepted = records.iter().filter(|r| r.decision == FilterDecision::Accept).count();
    let stage = Staging::new(&a.out)?;
    db.save(stage.path())?;
    write_json(&stage.path().join("filter.json"), &records)?;
    stage.commit()?;
    report(
        format,
        &serde_json::json!({"screened": records.len(), "accepted": accepted, "assets": db.len()}),
    );
    Ok(Status::Ok)
}
