//! Deterministic DDIM sampling with layout-conditional guidance.
//!
//! Guidance mixes the unconditional and conditional noise predictions as
//! `(1 − m)·ε_u + m·ε_c`, which equals `ε_u + m·(ε_c − ε_u)` and is exact at
//! `m = 0` and `m = 1`. For `t > α·T` the scale `m` is the global scale; inside
//! the window it is the per-cell map composed from the layer weights.

use serde::{Deserialize, Serialize};

use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::layout::{compose_guidance_map, CombineMode, GuidanceSpec, Layout};
use crate::region_attention::{RegionPlan, RegionTokens};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::denoiser::Denoiser;
use super::null_regions;
use super::schedule::NoiseSchedule;

pub const DEFAULT_SAMPLE_STEPS: usize = 50;
pub const DEFAULT_X0_CLIP: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub steps: usize,
    pub seed: u64,
    pub guidance: GuidanceSpec,
    /// How overlapping layer weights compose into the guidance map.
    pub mode: CombineMode,
    /// Clamp on the predicted clean latent; `None` disables it.
    pub x0_clip: Option<f64>,
    pub encoder: EncoderConfig,
}

impl SampleConfig {
    /// Defaults for a layout with `layers` layers: every layer at the global scale.
    pub fn for_layers(layers: usize) -> Self {
        Self {
            steps: DEFAULT_SAMPLE_STEPS,
            seed: 0,
            guidance: GuidanceSpec::uniform(layers, GuidanceSpec::DEFAULT_GLOBAL_SCALE),
            mode: CombineMode::Overwrite,
            x0_clip: Some(DEFAULT_X0_CLIP),
            encoder: EncoderConfig::default(),
        }
    }

    pub fn validate(&self, layers: usize) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Configuration("sampling needs at least one step".into()));
        }
        if let Some(c) = self.x0_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Configuration("x0 clip must be positive".into()));
            }
        }
        self.encoder.validate()?;
        self.guidance.validate(layers)
    }
}

/// What happened at one reverse step.
#[derive(Clone, Debug)]
pub struct StepTrace<S: Scalar = f64> {
    pub t: usize,
    pub t_prev: usize,
    /// Whether the dense map was used at this step.
    pub in_window: bool,
    pub uncond: Tensor<S>,
    pub cond: Tensor<S>,
    pub guided: Tensor<S>,
    /// Latent after the step.
    pub latent: Tensor<S>,
}

/// `(1 − m)·u + m·c` with an `H×W` map broadcast over channels.
pub fn guide_dense<S: Scalar>(uncond: &Tensor<S>, cond: &Tensor<S>, map: &Tensor<S>) -> Result<Tensor<S>> {
    let (h, w, c) = uncond.dims3()?;
    if cond.shape() != uncond.shape() {
        return Err(Error::dim("guide", uncond.shape(), cond.shape()));
    }
    if map.shape() != [h, w] {
        return Err(Error::dim("guide(map)", map.shape(), &[h, w]));
    }
    let data = uncond
        .data()
        .iter()
        .zip(cond.data())
        .enumerate()
        .map(|(i, (&u, &k))| {
            let m = map.data()[i / c];
            (S::one() - m) * u + m * k
        })
        .collect();
    Tensor::new(uncond.shape().to_vec(), data)
}

/// `(1 − g)·u + g·c` with one scale everywhere.
pub fn guide_global<S: Scalar>(uncond: &Tensor<S>, cond: &Tensor<S>, scale: S) -> Result<Tensor<S>> {
    uncond.zip_map(cond, "guide", |u, k| (S::one() - scale) * u + scale * k)
}

fn ddim_update<S: Scalar>(
    z: &Tensor<S>,
    eps: &Tensor<S>,
    ab_t: f64,
    ab_prev: f64,
    clip: Option<f64>,
) -> Result<Tensor<S>> {
    let (sa, sb) = (S::of(ab_t.sqrt()), S::of((1.0 - ab_t).sqrt()));
    let (pa, pb) = (S::of(ab_prev.sqrt()), S::of((1.0 - ab_prev).sqrt()));
    let lim = clip.map(S::of);
    z.zip_map(eps, "ddim", |x, e| {
        let x0 = (x - sb * e) / sa;
        match lim {
            // Re-derive the noise from the clamped estimate so the direction
            // term stays consistent with it.
            Some(l) if x0.abs() > l => {
                let x0 = x0.max(-l).min(l);
                pa * x0 + pb * ((x - sa * x0) / sb)
            }
            _ => pa * x0 + pb * e,
        }
    })
}

/// Shared reverse loop; `guide(t, u, c)` returns the guided prediction and
/// whether the dense map was used.
#[allow(clippy::too_many_arguments)]
fn reverse_loop<S: Scalar>(
    denoiser: &Denoiser<S>,
    layout: &Layout,
    region_tokens: &[RegionTokens<S>],
    schedule: &NoiseSchedule,
    steps: usize,
    seed: u64,
    clip: Option<f64>,
    encoder: &EncoderConfig,
    mut guide: impl FnMut(usize, &Tensor<S>, &Tensor<S>) -> Result<(Tensor<S>, bool)>,
    mut on_step: impl FnMut(&StepTrace<S>),
) -> Result<Tensor<S>> {
    if !denoiser.params.is_finite() {
        return Err(Error::Numeric("denoiser parameters contain NaN or infinity".into()));
    }
    let c = &denoiser.config;
    let plan = RegionPlan::new(layout, c.height, c.width);
    let nulls = null_regions::<S>(layout.len(), encoder);
    let t_max = schedule.steps();
    let mut z: Tensor<S> = Rng::new(seed).normal_tensor(&[c.height, c.width, c.channels]);
    let ts = schedule.ddim_timesteps(steps);
    for (k, &t) in ts.iter().enumerate() {
        let t_prev = ts.get(k + 1).copied().unwrap_or(0);
        let uncond = denoiser.denoise_with_plan(&z, t, t_max, &plan, &nulls)?;
        let cond = denoiser.denoise_with_plan(&z, t, t_max, &plan, region_tokens)?;
        let (guided, in_window) = guide(t, &uncond, &cond)?;
        z = ddim_update(&z, &guided, schedule.alpha_bar(t), schedule.alpha_bar(t_prev), clip)?;
        if !z.is_finite() {
            return Err(Error::Numeric(format!("latent became non-finite at t={t}")));
        }
        on_step(&StepTrace {
            t,
            t_prev,
            in_window,
            uncond,
            cond,
            guided,
            latent: z.clone(),
        });
    }
    Ok(z)
}

/// Layout-conditional guided sampling; returns the final `H×W×C` latent.
pub fn sample<S: Scalar>(
    denoiser: &Denoiser<S>,
    layout: &Layout,
    region_tokens: &[RegionTokens<S>],
    schedule: &NoiseSchedule,
    cfg: &SampleConfig,
) -> Result<Tensor<S>> {
    sample_traced(denoiser, layout, region_tokens, schedule, cfg, |_| {})
}

/// [`sample`] with a callback after every reverse step.
pub fn sample_traced<S: Scalar>(
    denoiser: &Denoiser<S>,
    layout: &Layout,
    region_tokens: &[RegionTokens<S>],
    schedule: &NoiseSchedule,
    cfg: &SampleConfig,
    on_step: impl FnMut(&StepTrace<S>),
) -> Result<Tensor<S>> {
    cfg.validate(layout.len())?;
    let c = &denoiser.config;
    let map: Tensor<S> = compose_guidance_map(layout, &cfg.guidance, c.height, c.width, cfg.mode)?;
    let window = cfg.guidance.alpha * schedule.steps() as f64;
    let global = S::of(cfg.guidance.global_scale);
    reverse_loop(
        denoiser,
        layout,
        region_tokens,
        schedule,
        cfg.steps,
        cfg.seed,
        cfg.x0_clip,
        &cfg.encoder,
        |t, u, k| {
            if t as f64 <= window {
                Ok((guide_dense(u, k, &map)?, true))
            } else {
                Ok((guide_global(u, k, global)?, false))
            }
        },
        on_step,
    )
}

/// Classic classifier-free guidance at a single scale for every step and cell.
pub fn global_cfg_sample<S: Scalar>(
    denoiser: &Denoiser<S>,
    layout: &Layout,
    region_tokens: &[RegionTokens<S>],
    schedule: &NoiseSchedule,
    cfg: &SampleConfig,
    scale: f64,
) -> Result<Tensor<S>> {
    cfg.validate(layout.len())?;
    let g = S::of(scale);
    reverse_loop(
        denoiser,
        layout,
        region_tokens,
        schedule,
        cfg.steps,
        cfg.seed,
        cfg.x0_clip,
        &cfg.encoder,
        |_, u, k| Ok((guide_global(u, k, g)?, false)),
        |_| {},
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{encode_regions, DenoiserConfig};
    use crate::layout::{Layer, NormalizedBBox};

    fn setup() -> (Denoiser<f64>, Layout, Vec<RegionTokens<f64>>, SampleConfig) {
        let enc = EncoderConfig {
            d_text: 6,
            ..EncoderConfig::default()
        };
        let dcfg = DenoiserConfig {
            height: 4,
            width: 5,
            blocks: 2,
            d_model: 6,
            d_head: 4,
            d_text: 6,
            d_time: 4,
            ..DenoiserConfig::default()
        };
        let layout = Layout::new(
            160,
            128,
            vec![
                Layer::background("sky"),
                Layer::non_text(1, NormalizedBBox::new(0.0, 0.0, 0.6, 0.5).unwrap(), "tree"),
                Layer::text(2, NormalizedBBox::new(0.4, 0.5, 1.0, 1.0).unwrap(), "headline", "Go", "en"),
            ],
        )
        .unwrap();
        let tokens = encode_regions(&layout, &enc);
        let cfg = SampleConfig {
            steps: 8,
            seed: 5,
            encoder: enc,
            ..SampleConfig::for_layers(3)
        };
        (Denoiser::new(dcfg, 2).unwrap(), layout, tokens, cfg)
    }

    fn traces(cfg: &SampleConfig) -> Vec<StepTrace<f64>> {
        let (d, layout, tokens, _) = setup();
        let mut out = Vec::new();
        sample_traced(&d, &layout, &tokens, &NoiseSchedule::linear(100), cfg, |s| out.push(s.clone())).unwrap();
        out
    }

    #[test]
    fn zero_map_is_unconditional_in_window() {
        let (_, _, _, mut cfg) = setup();
        cfg.guidance.gammas = vec![0.0; 3];
        let tr = traces(&cfg);
        assert!(tr.iter().any(|s| s.in_window) && tr.iter().any(|s| !s.in_window));
        for s in tr.iter().filter(|s| s.in_window) {
            assert_eq!(s.guided, s.uncond);
        }
    }

    #[test]
    fn unit_map_is_conditional_in_window() {
        let (_, _, _, mut cfg) = setup();
        cfg.guidance.gammas = vec![1.0; 3];
        for s in traces(&cfg).iter().filter(|s| s.in_window) {
            assert_eq!(s.guided, s.cond);
        }
    }

    #[test]
    fn uniform_full_window_equals_global_cfg() {
        let (d, layout, tokens, mut cfg) = setup();
        let schedule = NoiseSchedule::linear(100);
        for g in [0.0, 1.0, 2.5, 7.0] {
            cfg.guidance = GuidanceSpec {
                gammas: vec![g; 3],
                alpha: 1.0,
                global_scale: 3.0,
            };
            let a = sample(&d, &layout, &tokens, &schedule, &cfg).unwrap();
            let b = global_cfg_sample(&d, &layout, &tokens, &schedule, &cfg, g).unwrap();
            assert_eq!(a, b, "scale {g}");
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let (d, layout, tokens, cfg) = setup();
        let s = NoiseSchedule::linear(100);
        let a = sample(&d, &layout, &tokens, &s, &cfg).unwrap();
        let b = sample(&d, &layout, &tokens, &s, &cfg).unwrap();
        assert_eq!(a, b);
        let c = sample(&d, &layout, &tokens, &s, &SampleConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn nan_params_are_numeric_error() {
        let (mut d, layout, tokens, cfg) = setup();
        let id = d.params.id("out.w").unwrap();
        d.params.get_mut(id).data_mut()[0] = f64::NAN;
        let err = sample(&d, &layout, &tokens, &NoiseSchedule::linear(100), &cfg).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn zero_steps_rejected() {
        let (d, layout, tokens, cfg) = setup();
        let cfg = SampleConfig { steps: 0, ..cfg };
        assert!(sample(&d, &layout, &tokens, &NoiseSchedule::linear(100), &cfg).is_err());
    }
}
