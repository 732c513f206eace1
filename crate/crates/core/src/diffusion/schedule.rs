use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_TRAIN_STEPS: usize = 1000;
pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 2e-2;

/// Discrete DDPM schedule. Index 0 is the clean endpoint (`ᾱ_0 = 1`);
/// `betas[t - 1]` is the variance added at step `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear betas from `BETA_START` to `BETA_END` over `steps`.
    pub fn linear(steps: usize) -> Self {
        assert!(steps >= 1, "schedule needs at least one step");
        let betas = (0..steps)
            .map(|i| {
                let frac = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
                BETA_START + (BETA_END - BETA_START) * frac
            })
            .collect();
        Self::from_betas(betas).expect("linear schedule is valid")
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::Configuration("betas must be non-empty and lie in (0, 1)".into()));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for &b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self { betas, alpha_bars })
    }

    /// Number of noising steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `ᾱ_t` for `0 <= t <= T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::Configuration(format!(
                "timestep {t} outside [0, {}]",
                self.steps()
            )));
        }
        Ok(())
    }

    /// `steps` DDIM timesteps, descending, ending at the smallest positive one.
    pub fn ddim_timesteps(&self, steps: usize) -> Vec<usize> {
        let t_max = self.steps();
        let n = steps.clamp(1, t_max);
        (1..=n)
            .rev()
            .map(|k| ((k * t_max) as f64 / n as f64).round() as usize)
            .collect()
    }
}

/// `z_t = √ᾱ_t·z0 + √(1−ᾱ_t)·ε` with `ε ~ N(0, I)` drawn from `rng`.
pub fn forward_noise<S: Scalar>(
    z0: &Tensor<S>,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<(Tensor<S>, Tensor<S>)> {
    schedule.check_t(t)?;
    let eps: Tensor<S> = rng.normal_tensor(z0.shape());
    let ab = schedule.alpha_bar(t);
    let (a, b) = (S::of(ab.sqrt()), S::of((1.0 - ab).sqrt()));
    let zt = z0.zip_map(&eps, "forward_noise", |x, e| a * x + b * e)?;
    Ok((zt, eps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_schedule_shape() {
        let s = NoiseSchedule::linear(1000);
        assert_eq!(s.steps(), 1000);
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!((s.betas()[0] - 1e-4).abs() < 1e-18);
        assert!((s.betas()[999] - 2e-2).abs() < 1e-15);
        for t in 0..1000 {
            assert!(s.alpha_bar(t + 1) < s.alpha_bar(t));
        }
        assert!(s.alpha_bar(1000) < 1e-4);
    }

    #[test]
    fn rejects_bad_betas_and_timesteps() {
        assert!(NoiseSchedule::from_betas(vec![0.1, 1.0]).is_err());
        assert!(NoiseSchedule::from_betas(vec![]).is_err());
        let s = NoiseSchedule::linear(10);
        let z = Tensor::<f64>::zeros(&[2, 2]);
        assert!(matches!(forward_noise(&z, 11, &s, &mut Rng::new(0)), Err(Error::Configuration(_))));
    }

    #[test]
    fn clean_endpoint_is_identity() {
        let s = NoiseSchedule::linear(10);
        let z0: Tensor<f64> = Rng::new(1).normal_tensor(&[3, 3]);
        let (zt, _) = forward_noise(&z0, 0, &s, &mut Rng::new(2)).unwrap();
        assert_eq!(zt, z0);
    }

    #[test]
    fn empirical_variance_matches_schedule() {
        let s = NoiseSchedule::linear(1000);
        let z0 = Tensor::<f64>::zeros(&[100, 100]);
        for t in [1, 250, 999] {
            let (zt, _) = forward_noise(&z0, t, &s, &mut Rng::new(t as u64)).unwrap();
            let mean = zt.mean();
            let var = zt.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (zt.len() - 1) as f64;
            let want = 1.0 - s.alpha_bar(t);
            assert!((var - want).abs() <= 0.05 * want, "t={t}: {var} vs {want}");
        }
    }

    #[test]
    fn same_seed_same_noise() {
        let s = NoiseSchedule::linear(100);
        let z0 = Tensor::<f64>::zeros(&[4, 4]);
        let a = forward_noise(&z0, 50, &s, &mut Rng::new(9)).unwrap();
        let b = forward_noise(&z0, 50, &s, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ddim_timesteps_descend() {
        let s = NoiseSchedule::linear(1000);
        let ts = s.ddim_timesteps(50);
        assert_eq!(ts.len(), 50);
        assert_eq!(ts[0], 1000);
        assert_eq!(*ts.last().unwrap(), 20);
        assert!(ts.windows(2).all(|w| w[0] > w[1]));
    }
}
