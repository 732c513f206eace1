//! Versioned JSON checkpoints and the CSV loss trace.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::denoiser::{Denoiser, DenoiserConfig};
use super::train::{AdamState, LossRecord, TrainConfig, Trainer};

pub const CHECKPOINT_FORMAT: &str = "densegen-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const LOSS_CSV_HEADER: &str = "step,loss,text_loss,non_text_loss";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<NamedTensor>,
    pub v: Vec<NamedTensor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub denoiser: DenoiserConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    pub seed: u64,
    pub step: usize,
    pub params: Vec<NamedTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerState>,
}

fn named<S: Scalar>(name: &str, t: &Tensor<S>) -> NamedTensor {
    NamedTensor {
        name: name.to_string(),
        shape: t.shape().to_vec(),
        data: t.data().iter().map(|x| x.to_f64_lossy()).collect(),
    }
}

fn tensor<S: Scalar>(n: &NamedTensor) -> Result<Tensor<S>> {
    Tensor::from_f64(&n.shape, &n.data).map_err(|e| Error::Validation(format!("tensor {}: {e}", n.name)))
}

impl Checkpoint {
    pub fn from_denoiser<S: Scalar>(denoiser: &Denoiser<S>, seed: u64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            denoiser: denoiser.config.clone(),
            train: None,
            seed,
            step: 0,
            params: denoiser.params.iter().map(|(_, n, t)| named(n, t)).collect(),
            optimizer: None,
        }
    }

    /// Weights, optimizer moments and step counter of a trainer.
    pub fn from_trainer<S: Scalar>(trainer: &Trainer<S>) -> Self {
        let names: Vec<&str> = trainer.denoiser.params.iter().map(|(_, n, _)| n).collect();
        let moments = |ts: &[Tensor<S>]| names.iter().zip(ts).map(|(n, t)| named(n, t)).collect();
        Self {
            train: Some(trainer.config.clone()),
            step: trainer.step,
            optimizer: Some(OptimizerState {
                m: moments(&trainer.adam.m),
                v: moments(&trainer.adam.v),
            }),
            ..Self::from_denoiser(&trainer.denoiser, trainer.config.seed)
        }
    }

    fn check_header(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Validation(format!("not a checkpoint: format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        Ok(())
    }

    pub fn to_denoiser<S: Scalar>(&self) -> Result<Denoiser<S>> {
        self.check_header()?;
        let named = self
            .params
            .iter()
            .map(|n| Ok((n.name.clone(), tensor(n)?)))
            .collect::<Result<Vec<_>>>()?;
        Denoiser::from_named(self.denoiser.clone(), named)
    }

    /// Trainer positioned where the checkpoint left off.
    pub fn to_trainer<S: Scalar>(&self) -> Result<Trainer<S>> {
        let denoiser = self.to_denoiser::<S>()?;
        let config = self
            .train
            .clone()
            .ok_or_else(|| Error::Validation("checkpoint has no training configuration".into()))?;
        let adam = match &self.optimizer {
            None => None,
            Some(o) => {
                let order: Vec<String> = denoiser.params.iter().map(|(_, n, _)| n.to_string()).collect();
                let collect = |ts: &[NamedTensor]| -> Result<Vec<Tensor<S>>> {
                    if ts.len() != order.len() || ts.iter().zip(&order).any(|(t, n)| &t.name != n) {
                        return Err(Error::Validation("optimizer state names do not match parameters".into()));
                    }
                    ts.iter().map(tensor).collect()
                };
                Some(AdamState {
                    m: collect(&o.m)?,
                    v: collect(&o.v)?,
                })
            }
        };
        Trainer::resume(denoiser, config, adam, self.step)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        ck.check_header()?;
        Ok(ck)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// Loss trace as CSV with a header row.
pub fn write_loss_csv(trace: &[LossRecord]) -> String {
    let mut out = String::from(LOSS_CSV_HEADER);
    out.push('\n');
    for r in trace {
        out.push_str(&format!("{},{},{},{}\n", r.step, r.loss, r.text_loss, r.non_text_loss));
    }
    out
}

pub fn read_loss_csv(text: &str) -> Result<Vec<LossRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == LOSS_CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: format!("expected header {LOSS_CSV_HEADER:?}"),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = |message: String| Error::Parse {
                line: i + 1,
                column: 1,
                message,
            };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(bad(format!("expected 4 fields, found {}", fields.len())));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(e.to_string()));
            Ok(LossRecord {
                step: fields[0].trim().parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                loss: num(fields[1])?,
                text_loss: num(fields[2])?,
                non_text_loss: num(fields[3])?,
            })
        })
        .collect()
}
