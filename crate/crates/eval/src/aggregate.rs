//! Layer-count bucketing of per-item metrics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bucket {
    /// 10 layers or fewer.
    #[serde(rename = "<=10")]
    UpTo10,
    /// 11 to 15.
    #[serde(rename = "10-15")]
    From10To15,
    /// 16 to 19.
    #[serde(rename = "15-20")]
    From15To20,
    /// 20 or more.
    #[serde(rename = ">=20")]
    From20,
}

impl Bucket {
    pub const ALL: [Bucket; 4] = [Bucket::UpTo10, Bucket::From10To15, Bucket::From15To20, Bucket::From20];

    pub fn of(layers: usize) -> Self {
        match layers {
            0..=10 => Bucket::UpTo10,
            11..=15 => Bucket::From10To15,
            16..=19 => Bucket::From15To20,
            _ => Bucket::From20,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Bucket::UpTo10 => "≤10",
            Bucket::From10To15 => "10–15",
            Bucket::From15To20 => "15–20",
            Bucket::From20 => "≥20",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemMetrics {
    pub id: String,
    /// All layers, background included.
    pub layers: usize,
    pub spelling: Option<f64>,
    pub lgsr: Option<f64>,
    #[serde(default)]
    pub incomplete: bool,
}

/// Item count and metric means over the items that have each metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub items: usize,
    pub spelling: Option<f64>,
    pub lgsr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketSummary {
    pub bucket: Bucket,
    #[serde(flatten)]
    pub summary: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub buckets: Vec<BucketSummary>,
    pub overall: Summary,
    pub items: Vec<ItemMetrics>,
    pub incomplete: bool,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn summarize(items: &[&ItemMetrics]) -> Summary {
    Summary {
        items: items.len(),
        spelling: mean(items.iter().filter_map(|i| i.spelling)),
        lgsr: mean(items.iter().filter_map(|i| i.lgsr)),
    }
}

/// Per-bucket and overall means. Every bucket is listed, empty ones with no values.
pub fn aggregate(items: Vec<ItemMetrics>) -> Result<AggregateReport> {
    if items.is_empty() {
        return Err(Error::EmptyInput("aggregate: no items"));
    }
    let buckets = Bucket::ALL
        .into_iter()
        .map(|b| {
            let members: Vec<&ItemMetrics> = items.iter().filter(|i| Bucket::of(i.layers) == b).collect();
            BucketSummary {
                bucket: b,
                summary: summarize(&members),
            }
        })
        .collect();
    let all: Vec<&ItemMetrics> = items.iter().collect();
    Ok(AggregateReport {
        buckets,
        overall: summarize(&all),
        incomplete: items.iter().any(|i| i.incomplete),
        items,
    })
}

/// Plain-text table of a report.
pub fn render_text(report: &AggregateReport) -> String {
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", v * 100.0));
    let mut s = String::new();
    let _ = writeln!(s, "{:<8} {:>6} {:>9} {:>7}", "layers", "items", "spelling", "lgsr");
    for b in &report.buckets {
        let m = &b.summary;
        let _ = writeln!(s, "{:<8} {:>6} {:>9} {:>7}", b.bucket.label(), m.items, cell(m.spelling), cell(m.lgsr));
    }
    let o = &report.overall;
    let _ = writeln!(s, "{:<8} {:>6} {:>9} {:>7}", "all", o.items, cell(o.spelling), cell(o.lgsr));
    if report.incomplete {
        s.push_str("incomplete: some layers were not scored\n");
    }
    s
}
