//! Evaluation harness: spelling precision of rendered text, occlusion-aware
//! layer crops, Set-of-Mark annotation, judge-based layer success rate and
//! layer-count bucketing.

pub mod aggregate;
pub mod crop;
pub mod error;
pub mod item;
pub mod judge;
pub mod lgsr;
pub mod prompts;
pub mod som;
pub mod spelling;

pub use aggregate::{aggregate, render_text, AggregateReport, Bucket, BucketSummary, ItemMetrics, Summary};
pub use crop::{occluders, occlusion_crop};
pub use error::{Error, Result};
pub use item::{item_spelling, mean_precision, EvalItem, HypothesisSource, SpellingScore};
pub use judge::{ElementType, JudgeProvider, RemoteJudge, StubJudge};
pub use lgsr::{lgsr, lgsr_from_scores, LayerJudgement, LgsrConfig, LgsrReport};
pub use som::annotate_som;
pub use spelling::{spelling_precision, Language};
