//! `densegen stats`: layer-count medians of a dataset.

use std::fmt::Write as _;

use densegen_core::layout::{layout_stats, LayoutStats};
use densegen_core::Layout;
use densegen_data::load_dataset;

use crate::error::{usage, Result, Status};
use crate::stage::{require_dir, write_json};
use crate::{Format, StatsArgs};

pub fn render_text(s: &LayoutStats) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "layouts          {}", s.layouts);
    let _ = writeln!(out, "median text      {}", s.median_text);
    let _ = writeln!(out, "median non-text  {}", s.median_non_text);
    let _ = writeln!(out, "median total     {}", s.median_total);
    match s.median_chars {
        Some(c) => {
            let _ = writeln!(out, "median chars     {c}");
        }
        None => out.push_str("median chars     -\n"),
    }
    out
}

pub fn run(args: &StatsArgs, format: Format) -> Result<Status> {
    require_dir(&args.data, "dataset")?;
    let items = load_dataset(&args.data)?;
    if items.is_empty() {
        return Err(usage(format!("dataset {} is empty", args.data.display())));
    }
    let layouts: Vec<Layout> = items.into_iter().map(|i| i.layout).collect();
    let stats = layout_stats(&layouts)?;
    if let Some(out) = &args.out {
        write_json(out, &stats)?;
    }
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&stats).expect("serializable")),
        Format::Text => print!("{}", render_text(&stats)),
    }
    Ok(Status::Ok)
}
