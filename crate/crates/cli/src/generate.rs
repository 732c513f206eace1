//! `densegen generate`: guided sampling for one or more layouts, with optional sweeps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use image::imageops::{self, FilterType};
use image::RgbaImage;
use serde::Serialize;

use densegen_core::diffusion::{
    decode, encode_regions, global_cfg_sample, sample, Checkpoint, NoiseSchedule, SampleConfig,
};
use densegen_core::layout::{discretize, load_manifest, LATENT_DOWNSCALE};
use densegen_core::{GuidanceSpec, Layout, Rng};
use densegen_data::{load_dataset, save_dataset, SynthItem};

use crate::error::{usage, Result, Status};
use crate::stage::{require_dir, require_file, write_json, Staging};
use crate::Format;

pub const INDEX_FILE: &str = "generate.json";

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Layout manifest; repeat for several.
    #[arg(long, required_unless_present = "data")]
    pub layout: Vec<PathBuf>,
    /// Generate for every layout of this dataset directory.
    #[arg(long, conflicts_with = "layout")]
    pub data: Option<PathBuf>,
    /// Output directory in dataset form, plus per-layer crops under layers/.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-layer guidance weight as INDEX=VALUE; unset layers use --global-scale.
    /// Without any, every step uses plain classifier-free guidance.
    #[arg(long = "gamma", value_parser = parse_gamma)]
    pub gammas: Vec<(usize, f64)>,
    /// Fraction of the schedule (from the clean end) that uses the per-layer map.
    #[arg(long, default_value_t = GuidanceSpec::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Guidance scale outside the window, and for layers without --gamma.
    #[arg(long, default_value_t = GuidanceSpec::DEFAULT_GLOBAL_SCALE)]
    pub global_scale: f64,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    /// Batch over values of one knob: alpha=0.1,0.5,0.9 | scale=3,7 | gammaI=0,1.5,7.
    #[arg(long, value_parser = parse_sweep)]
    pub sweep: Option<Sweep>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Knob {
    Alpha,
    Scale,
    Gamma(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub knob: Knob,
    pub values: Vec<f64>,
}

pub fn parse_gamma(s: &str) -> std::result::Result<(usize, f64), String> {
    let (i, v) = s.split_once('=').ok_or_else(|| format!("expected INDEX=VALUE, got {s:?}"))?;
    let i = i.trim().parse().map_err(|e| format!("layer index {i:?}: {e}"))?;
    let v = v.trim().parse().map_err(|e| format!("gamma {v:?}: {e}"))?;
    Ok((i, v))
}

pub fn parse_sweep(s: &str) -> std::result::Result<Sweep, String> {
    let (k, vs) = s.split_once('=').ok_or_else(|| format!("expected KNOB=V1,V2,..., got {s:?}"))?;
    let knob = match k.trim() {
        "alpha" => Knob::Alpha,
        "scale" | "global-scale" => Knob::Scale,
        g => match g.strip_prefix("gamma").map(str::parse::<usize>) {
            Some(Ok(i)) => Knob::Gamma(i),
            _ => return Err(format!("unknown sweep knob {g:?}")),
        },
    };
    let values = vs
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("sweep value {v:?}: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err("sweep needs at least one value".into());
    }
    Ok(Sweep { knob, values })
}

/// One planned sample.
#[derive(Clone, Debug, Serialize)]
pub struct Job {
    pub id: String,
    pub source: String,
    /// `global` for plain guidance, `layout` for the per-layer map.
    pub path: &'static str,
    pub seed: u64,
    pub guidance: GuidanceSpec,
}

/// Guidance settings for one layout under the flags and an optional sweep value.
pub fn plan_guidance(a: &GenerateArgs, layers: usize, sweep: Option<(&Knob, f64)>) -> Result<(GuidanceSpec, bool)> {
    let mut spec = GuidanceSpec {
        gammas: vec![a.global_scale; layers],
        alpha: a.alpha,
        global_scale: a.global_scale,
    };
    let mut per_layer = !a.gammas.is_empty();
    let mut explicit: BTreeMap<usize, f64> = a.gammas.iter().copied().collect();
    match sweep {
        Some((Knob::Alpha, v)) => spec.alpha = v,
        Some((Knob::Scale, v)) => {
            spec.global_scale = v;
            spec.gammas = vec![v; layers];
        }
        Some((Knob::Gamma(i), v)) => {
            explicit.insert(*i, v);
            per_layer = true;
        }
        None => {}
    }
    for (&i, &v) in &explicit {
        if i >= layers {
            return Err(usage(format!("--gamma index {i} is out of range for {layers} layers")));
        }
        spec.gammas[i] = v;
    }
    spec.validate(layers)?;
    Ok((spec, per_layer))
}

fn fmt_value(v: f64) -> String {
    format!("{v}").replace('-', "m")
}

fn inputs(a: &GenerateArgs) -> Result<Vec<(String, Layout)>> {
    if let Some(d) = &a.data {
        require_dir(d, "dataset")?;
        let items = load_dataset(d)?;
        if items.is_empty() {
            return Err(usage(format!("dataset {} is empty", d.display())));
        }
        return Ok(items.into_iter().map(|i| (i.id, i.layout)).collect());
    }
    a.layout
        .iter()
        .map(|p| {
            require_file(p, "layout manifest")?;
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((stem, load_manifest(p)?))
        })
        .collect()
}

fn to_canvas(img: RgbaImage, layout: &Layout) -> RgbaImage {
    if img.dimensions() == (layout.canvas_width, layout.canvas_height) {
        img
    } else {
        imageops::resize(&img, layout.canvas_width, layout.canvas_height, FilterType::Nearest)
    }
}

fn save_layer_crops(dir: &Path, id: &str, image: &RgbaImage, layout: &Layout) -> Result<()> {
    for (i, layer) in layout.layers.iter().enumerate() {
        let r = discretize(&layer.bbox, layout.canvas_height as usize, layout.canvas_width as usize);
        let crop = imageops::crop_imm(image, r.c0 as u32, r.r0 as u32, r.width() as u32, r.height() as u32).to_image();
        crop.save_with_format(dir.join(format!("{id}_{i:02}.png")), image::ImageFormat::Png)?;
    }
    Ok(())
}

pub fn run(a: &GenerateArgs, seed: u64, format: Format) -> Result<Status> {
    require_file(&a.checkpoint, "checkpoint")?;
    let layouts = inputs(a)?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let denoiser = ckpt.to_denoiser::<f64>()?;
    let (encoder, t_max) = match &ckpt.train {
        Some(t) => (t.encoder.clone(), t.diffusion_steps),
        None => (Default::default(), 1000),
    };
    let schedule = NoiseSchedule::linear(t_max);
    let grid = (denoiser.config.height, denoiser.config.width);

    let mut jobs = Vec::new();
    for (n, (source, layout)) in layouts.iter().enumerate() {
        if layout.latent_dims(LATENT_DOWNSCALE) != grid {
            return Err(usage(format!(
                "layout {source} has latent grid {:?}, the checkpoint expects {grid:?}",
                layout.latent_dims(LATENT_DOWNSCALE)
            )));
        }
        let item_seed = Rng::new(seed).fork(n as u64).next_u64();
        let variants: Vec<(String, Option<(&Knob, f64)>)> = match &a.sweep {
            None => vec![(source.clone(), None)],
            Some(s) => s
                .values
                .iter()
                .map(|&v| {
                    let tag = match s.knob {
                        Knob::Alpha => format!("alpha{}", fmt_value(v)),
                        Knob::Scale => format!("scale{}", fmt_value(v)),
                        Knob::Gamma(i) => format!("gamma{i}_{}", fmt_value(v)),
                    };
                    (format!("{source}_{tag}"), Some((&s.knob, v)))
                })
                .collect(),
        };
        for (id, sv) in variants {
            let (guidance, per_layer) = plan_guidance(a, layout.len(), sv)?;
            jobs.push((
                n,
                Job {
                    id,
                    source: source.clone(),
                    path: if per_layer { "layout" } else { "global" },
                    seed: item_seed,
                    guidance,
                },
            ));
        }
    }

    let stage = Staging::new(&a.out)?;
    let crops = stage.path().join("layers");
    std::fs::create_dir(&crops)?;
    let mut items = Vec::with_capacity(jobs.len());
    for (n, job) in &jobs {
        let layout = &layouts[*n].1;
        let tokens = encode_regions::<f64>(layout, &encoder);
        let cfg = SampleConfig {
            steps: a.steps,
            seed: job.seed,
            guidance: job.guidance.clone(),
            encoder: encoder.clone(),
            ..SampleConfig::for_layers(layout.len())
        };
        let latent = if job.path == "layout" {
            sample(&denoiser, layout, &tokens, &schedule, &cfg)?
        } else {
            global_cfg_sample(&denoiser, layout, &tokens, &schedule, &cfg, job.guidance.global_scale)?
        };
        let image = to_canvas(decode(&latent)?, layout);
        save_layer_crops(&crops, &job.id, &image, layout)?;
        items.push(SynthItem {
            id: job.id.clone(),
            image,
            layout: layout.clone(),
        });
    }
    save_dataset(stage.path(), &items)?;
    let index: Vec<&Job> = jobs.iter().map(|(_, j)| j).collect();
    write_json(&stage.path().join(INDEX_FILE), &index)?;
    stage.commit()?;
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&index).expect("serializable")),
        Format::Text => {
            for j in &index {
                println!("{} ({} guidance)", j.id, j.path);
            }
        }
    }
    Ok(Status::Ok)
}
