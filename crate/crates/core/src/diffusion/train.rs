//! AdamW training loop for the toy denoiser.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Grad, Graph};
use crate::encoders::{null_encode, EncoderConfig};
use crate::error::{Error, Result};
use crate::layout::{text_mask, Layout};
use crate::region_attention::{RegionPlan, RegionTokens, TokenSource};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::denoiser::{Denoiser, DenoiserConfig};
use super::loss::{hybrid_loss_node, region_losses};
use super::schedule::{forward_noise, NoiseSchedule, DEFAULT_TRAIN_STEPS};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

const STREAM_SHUFFLE: u64 = 1;
const STREAM_STEP: u64 = 2;
const STREAM_INIT: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops early after this many optimizer steps when set.
    pub max_steps: Option<usize>,
    pub weight_decay: f64,
    pub grad_clip: f64,
    /// Per-region probability of replacing the prompt with the null prompt.
    pub dropout: f64,
    /// Loss weight on visual-text cells.
    pub beta_glyph: f64,
    pub seed: u64,
    /// Diffusion steps `T` of the noise schedule.
    pub diffusion_steps: usize,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 8,
            epochs: 1,
            max_steps: None,
            weight_decay: 0.01,
            grad_clip: 1.0,
            dropout: 0.1,
            beta_glyph: 1.0,
            seed: 0,
            diffusion_steps: DEFAULT_TRAIN_STEPS,
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Slide-style designs weight text cells five times heavier.
    pub const SLIDES_BETA_GLYPH: f64 = 5.0;

    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.grad_clip, self.beta_glyph];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Configuration("learning rate, grad clip and beta must be positive".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Configuration("weight decay must be >= 0".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.diffusion_steps == 0 {
            return Err(Error::Configuration("batch size, epochs and diffusion steps must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(Error::Configuration("dropout must lie in [0, 1]".into()));
        }
        self.encoder.validate()
    }
}

/// One training item: clean latent, its layout, and the encoded prompt of every layer.
#[derive(Clone, Debug)]
pub struct TrainExample<S: Scalar = f64> {
    pub latent: Tensor<S>,
    pub layout: Layout,
    pub tokens: Vec<RegionTokens<S>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub text_loss: f64,
    pub non_text_loss: f64,
}

/// First and second moment estimates, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S: Scalar = f64> {
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn zeros_like(denoiser: &Denoiser<S>) -> Self {
        let m: Vec<Tensor<S>> = denoiser.params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self { v: m.clone(), m }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub trace: Vec<LossRecord>,
    /// Region prompts replaced by the null prompt.
    pub null_prompts: usize,
    /// Region prompts seen in total.
    pub prompts_seen: usize,
}

/// Owns the model and optimizer state; each call to [`Trainer::step`] applies one update.
#[derive(Clone, Debug)]
pub struct Trainer<S: Scalar = f64> {
    pub denoiser: Denoiser<S>,
    pub config: TrainConfig,
    pub adam: AdamState<S>,
    /// Optimizer steps taken so far.
    pub step: usize,
    schedule: NoiseSchedule,
    null_tokens: Tensor<S>,
}

impl<S: Scalar> Trainer<S> {
    /// Fresh model initialized from the training seed.
    pub fn new(denoiser_cfg: DenoiserConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let denoiser = Denoiser::new(denoiser_cfg, Rng::new(config.seed).fork(STREAM_INIT).next_u64())?;
        Self::resume(denoiser, config, None, 0)
    }

    /// Continues from saved weights and optimizer state.
    pub fn resume(denoiser: Denoiser<S>, config: TrainConfig, adam: Option<AdamState<S>>, step: usize) -> Result<Self> {
        config.validate()?;
        if denoiser.config.d_text != config.encoder.d_text {
            return Err(Error::Configuration(format!(
                "denoiser d_text {} differs from encoder d_text {}",
                denoiser.config.d_text, config.encoder.d_text
            )));
        }
        let adam = match adam {
            Some(a) => {
                let shapes_ok = a.m.len() == denoiser.params.len()
                    && a.v.len() == denoiser.params.len()
                    && denoiser
                        .params
                        .iter()
                        .zip(a.m.iter().zip(&a.v))
                        .all(|((_, _, p), (m, v))| p.shape() == m.shape() && p.shape() == v.shape());
                if !shapes_ok {
                    return Err(Error::Validation("optimizer state does not match parameters".into()));
                }
                a
            }
            None => AdamState::zeros_like(&denoiser),
        };
        Ok(Self {
            schedule: NoiseSchedule::linear(config.diffusion_steps),
            null_tokens: null_encode(&config.encoder).embeddings,
            denoiser,
            config,
            adam,
            step,
        })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.config.batch_size)
    }

    fn total_steps(&self, n: usize) -> usize {
        let full = self.steps_per_epoch(n) * self.config.epochs;
        self.config.max_steps.map_or(full, |m| m.min(full))
    }

    /// Dataset indices of the batch for optimizer step `step`.
    fn batch_indices(&self, n: usize, step: usize) -> Vec<usize> {
        let per_epoch = self.steps_per_epoch(n);
        let (epoch, k) = (step / per_epoch, step % per_epoch);
        let mut order: Vec<usize> = (0..n).collect();
        Rng::new(self.config.seed)
            .fork(STREAM_SHUFFLE)
            .fork(epoch as u64)
            .shuffle(&mut order);
        let b = self.config.batch_size;
        order[k * b..((k + 1) * b).min(n)].to_vec()
    }

    /// Runs until the configured epoch or step budget is exhausted.
    pub fn run(&mut self, dataset: &[TrainExample<S>], report: &mut TrainReport) -> Result<()> {
        if dataset.is_empty() {
            return Err(Error::EmptyInput("training dataset"));
        }
        let c = &self.denoiser.config;
        let plans: Vec<RegionPlan> = dataset
            .iter()
            .map(|ex| RegionPlan::new(&ex.layout, c.height, c.width))
            .collect();
        let masks: Vec<Tensor<S>> = dataset.iter().map(|ex| text_mask(&ex.layout, c.height, c.width)).collect();
        let total = self.total_steps(dataset.len());
        while self.step < total {
            let batch = self.batch_indices(dataset.len(), self.step);
            let record = self.step_batch(dataset, &plans, &masks, &batch, report)?;
            report.trace.push(record);
        }
        Ok(())
    }

    fn step_batch(
        &mut self,
        dataset: &[TrainExample<S>],
        plans: &[RegionPlan],
        masks: &[Tensor<S>],
        batch: &[usize],
        report: &mut TrainReport,
    ) -> Result<LossRecord> {
        let step_rng = Rng::new(self.config.seed).fork(STREAM_STEP).fork(self.step as u64);
        let t_max = self.schedule.steps();
        let beta = S::of(self.config.beta_glyph);
        let mut grad: Option<Grad<S>> = None;
        let (mut loss_sum, mut text_sum, mut other_sum) = (0.0, 0.0, 0.0);

        for (slot, &i) in batch.iter().enumerate() {
            let ex = &dataset[i];
            let mut rng = step_rng.fork(slot as u64);
            let t = 1 + rng.below(t_max as u64) as usize;
            let (z_t, eps) = forward_noise(&ex.latent, t, &self.schedule, &mut rng)?;
            let tokens: Vec<RegionTokens<S>> = ex
                .tokens
                .iter()
                .map(|rt| {
                    report.prompts_seen += 1;
                    if rng.bernoulli(self.config.dropout) {
                        report.null_prompts += 1;
                        RegionTokens {
                            layer_index: rt.layer_index,
                            tokens: self.null_tokens.clone(),
                            source: TokenSource::ClipLike,
                        }
                    } else {
                        rt.clone()
                    }
                })
                .collect();

            let mut graph = Graph::new();
            let pred = self
                .denoiser
                .forward_node(&mut graph, &z_t, t as f64, t_max, &plans[i], &tokens)?;
            let loss = hybrid_loss_node(&mut graph, &eps, pred, &masks[i], beta)?;
            let g = graph.backward(loss, &self.denoiser.params)?;
            match grad.as_mut() {
                None => grad = Some(g),
                Some(acc) => acc.accumulate(&g)?,
            }

            loss_sum += graph.value(loss).data()[0].to_f64_lossy();
            let pred_t = graph.value(pred).clone().reshape(eps.shape())?;
            let (text, other) = region_losses(&eps, &pred_t, &masks[i])?;
            text_sum += text.to_f64_lossy();
            other_sum += other.to_f64_lossy();
        }

        let mut grad = grad.expect("non-empty batch");
        let n = batch.len() as f64;
        grad.scale(S::of(1.0 / n));
        let norm = grad.norm();
        if !norm.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient at step {}", self.step)));
        }
        let clip = S::of(self.config.grad_clip);
        if norm > clip {
            grad.scale(clip / norm);
        }
        self.apply_adamw(&grad);
        let record = LossRecord {
            step: self.step,
            loss: loss_sum / n,
            text_loss: text_sum / n,
            non_text_loss: other_sum / n,
        };
        self.step += 1;
        Ok(record)
    }

    fn apply_adamw(&mut self, grad: &Grad<S>) {
        let k = (self.step + 1) as i32;
        let (b1, b2) = (S::of(ADAM_BETA1), S::of(ADAM_BETA2));
        let c1 = S::one() - S::of(ADAM_BETA1.powi(k));
        let c2 = S::one() - S::of(ADAM_BETA2.powi(k));
        let lr = S::of(self.config.learning_rate);
        let wd = S::of(self.config.weight_decay);
        let eps = S::of(ADAM_EPS);
        let ids: Vec<_> = self.denoiser.params.ids().collect();
        for (slot, id) in ids.into_iter().enumerate() {
            let Some(g) = grad.get(id) else { continue };
            let p = self.denoiser.params.get_mut(id);
            let m = self.adam.m[slot].data_mut();
            let v = self.adam.v[slot].data_mut();
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (S::one() - b1) * gi;
                *vi = b2 * *vi + (S::one() - b2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *x -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *x);
            }
        }
    }
}

/// Trains a fresh model on `dataset`; returns the model and the per-step loss trace.
pub fn train<S: Scalar>(
    dataset: &[TrainExample<S>],
    train_cfg: &TrainConfig,
    denoiser_cfg: &DenoiserConfig,
) -> Result<(Denoiser<S>, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training dataset"));
    }
    let mut trainer = Trainer::new(denoiser_cfg.clone(), train_cfg.clone())?;
    let mut report = TrainReport::default();
    trainer.run(dataset, &mut report)?;
    Ok((trainer.denoiser, report))
}
