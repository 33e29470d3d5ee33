//! Cosine noise schedule and the closed-form diffusion quantities built on it.

use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::math;

/// Offset that keeps the cosine schedule's first steps from vanishing.
pub const COSINE_OFFSET: f64 = 0.008;
/// Upper bound applied to every per-step beta.
pub const MAX_BETA: f64 = 0.999;

/// Precomputed `alpha_bar` table for `t` in `0..=T`.
///
/// `alpha_bar[0]` is exactly 1. For `t >= 1`, `beta[t] = 1 - alpha_bar[t] /
/// alpha_bar[t-1]` is clipped to [`MAX_BETA`] and `alpha_bar` is rebuilt as
/// the running product of `1 - beta`, so the identity holds exactly for the
/// stored values.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    alpha_bar: Vec<f64>,
    beta: Vec<f64>,
}

impl Schedule {
    pub fn cosine(timesteps: usize) -> Result<Self> {
        if timesteps == 0 {
            return Err(Error::EmptySchedule);
        }
        let big_t = timesteps as f64;
        let f = |t: usize| {
            let c = math::cos(((t as f64 / big_t) + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * FRAC_PI_2);
            c * c
        };
        let f0 = f(0);
        let mut alpha_bar = Vec::with_capacity(timesteps + 1);
        let mut beta = Vec::with_capacity(timesteps + 1);
        alpha_bar.push(1.0);
        // beta[0] is unused; it keeps indices aligned with t.
        beta.push(0.0);
        for t in 1..=timesteps {
            let b = (1.0 - (f(t) / f0) / (f(t - 1) / f0)).min(MAX_BETA);
            beta.push(b);
            alpha_bar.push(alpha_bar[t - 1] * (1.0 - b));
        }
        Ok(Self { alpha_bar, beta })
    }

    /// Number of diffusion steps `T`.
    pub fn timesteps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    /// `alpha_bar[t]`, with the terminal sentinel `t = -1` mapped to 1.
    pub fn alpha_bar(&self, t: i64) -> f64 {
        if t < 0 {
            1.0
        } else {
            self.alpha_bar[t as usize]
        }
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    fn check_t(&self, t: i64) -> Result<usize> {
        if t < 1 || t as usize > self.timesteps() {
            Err(Error::TimestepOutOfRange { t, max: self.timesteps() })
        } else {
            Ok(t as usize)
        }
    }

    /// Draws `z_t ~ q(z_t | z_0)` given externally drawn standard normal noise.
    pub fn q_sample(&self, z0: &[f64], t: usize, noise: &[f64]) -> Result<Vec<f64>> {
        let t = self.check_t(t as i64)?;
        if z0.len() != noise.len() {
            return Err(Error::shape("q_sample", alloc::format!("z0 has {} values, noise {}", z0.len(), noise.len())));
        }
        let signal = math::sqrt(self.alpha_bar[t]);
        let spread = math::sqrt(1.0 - self.alpha_bar[t]);
        Ok(z0.iter().zip(noise).map(|(x, n)| signal * x + spread * n).collect())
    }

    /// Mean and variance of the Gaussian posterior `q(z_{t-1} | z_t, z_0)`.
    pub fn posterior(&self, z0: &[f64], zt: &[f64], t: usize) -> Result<(Vec<f64>, f64)> {
        let t = self.check_t(t as i64)?;
        if z0.len() != zt.len() {
            return Err(Error::shape("posterior", alloc::format!("z0 has {} values, zt {}", z0.len(), zt.len())));
        }
        let ab_t = self.alpha_bar[t];
        let ab_prev = self.alpha_bar[t - 1];
        let beta = self.beta[t];
        let alpha = 1.0 - beta;
        let c0 = math::sqrt(ab_prev) * beta / (1.0 - ab_t);
        let ct = math::sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab_t);
        let mean = z0.iter().zip(zt).map(|(a, b)| c0 * a + ct * b).collect();
        let variance = (1.0 - ab_prev) / (1.0 - ab_t) * beta;
        Ok((mean, variance))
    }

    /// One DDIM transition from `t_now` to `t_next` (`-1` is the terminal,
    /// noise-free state) given a prediction of the clean sample.
    ///
    /// `noise` is only read when the transition is stochastic (`eta > 0` and
    /// `t_next < t_now`).
    pub fn ddim_step(
        &self,
        zt: &[f64],
        z0_pred: &[f64],
        t_now: i64,
        t_next: i64,
        eta: f64,
        noise: &[f64],
    ) -> Result<Vec<f64>> {
        if t_now == 0 {
            return Err(Error::DdimFromZero);
        }
        let now = self.check_t(t_now)?;
        if t_next > t_now {
            return Err(Error::DdimBackwards { t_now, t_next });
        }
        if t_next < -1 {
            return Err(Error::TimestepOutOfRange { t: t_next, max: self.timesteps() });
        }
        if zt.len() != z0_pred.len() {
            return Err(Error::shape("ddim_step", alloc::format!("zt has {} values, z0_pred {}", zt.len(), z0_pred.len())));
        }
        if t_next == t_now {
            return Ok(zt.to_vec());
        }
        let ab_now = self.alpha_bar[now];
        let ab_next = self.alpha_bar(t_next);
        let sigma = eta * math::sqrt((1.0 - ab_next) / (1.0 - ab_now)) * math::sqrt(1.0 - ab_now / ab_next);
        let stochastic = sigma > 0.0;
        if stochastic && noise.len() != zt.len() {
            return Err(Error::shape("ddim_step", alloc::format!("zt has {} values, noise {}", zt.len(), noise.len())));
        }
        let c = math::sqrt((1.0 - ab_next - sigma * sigma).max(0.0));
        let root_now = math::sqrt(ab_now);
        let root_next = math::sqrt(ab_next);
        let spread_now = math::sqrt(1.0 - ab_now);
        Ok(zt
            .iter()
            .zip(z0_pred)
            .enumerate()
            .map(|(i, (x, x0))| {
                let eps = (x - root_now * x0) / spread_now;
                let mut out = root_next * x0 + c * eps;
                if stochastic {
                    out += sigma * noise[i];
                }
                out
            })
            .collect())
    }
}
