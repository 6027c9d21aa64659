//! DDPM machinery: the linear variance schedule, closed-form forward noising,
//! the one-shot clean estimate and the ancestral reverse step.
//!
//! Steps are 1-based; `t = 0` denotes clean data (`ᾱ_0 = 1`).

use crate::error::{domain, Error, Result};
use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

/// Choice of the reverse-step noise variance `σ̄_t²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReverseVariance {
    /// `β̃_t = (1 − ᾱ_{t−1}) / (1 − ᾱ_t) · β_t`.
    Posterior,
    /// `β_t`.
    Beta,
}

/// Serializable schedule descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub reverse_variance: ReverseVariance,
}

impl Default for ScheduleConfig {
    /// 200 steps with the 1000-step endpoints `[1e-4, 0.02]` rescaled by 1000/T.
    fn default() -> Self {
        Self::rescaled(200)
    }
}

impl ScheduleConfig {
    /// Endpoints `[1e-4, 0.02]` multiplied by `1000 / steps`.
    pub fn rescaled(steps: usize) -> Self {
        let f = 1000.0 / steps as f64;
        Self {
            steps,
            beta_start: 1e-4 * f,
            beta_end: 0.02 * f,
            reverse_variance: ReverseVariance::Posterior,
        }
    }

    pub fn build(&self) -> Result<DiffusionSchedule> {
        make_schedule_with(self.steps, self.beta_start, self.beta_end, self.reverse_variance)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    /// `σ̄_t` (a standard deviation) per step.
    pub reverse_noise: Vec<f64>,
}

/// Linear schedule with posterior reverse variance.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule> {
    make_schedule_with(steps, beta_start, beta_end, ReverseVariance::Posterior)
}

pub fn make_schedule_with(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    variance: ReverseVariance,
) -> Result<DiffusionSchedule> {
    if steps < 2 {
        return Err(domain(format!("schedule needs at least 2 steps, got {steps}")));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(domain(format!(
            "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    let last = (steps - 1) as f64;
    let beta: Vec<f64> = (0..steps)
        .map(|i| {
            if i == steps - 1 {
                beta_end
            } else {
                beta_start + (beta_end - beta_start) * (i as f64 / last)
            }
        })
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut prod = 1.0;
    for a in &alpha {
        prod *= a;
        alpha_bar.push(prod);
    }
    let reverse_noise = (0..steps)
        .map(|i| match variance {
            ReverseVariance::Beta => beta[i].sqrt(),
            ReverseVariance::Posterior => {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                ((1.0 - prev) / (1.0 - alpha_bar[i]) * beta[i]).sqrt()
            }
        })
        .collect();
    Ok(DiffusionSchedule {
        beta,
        alpha,
        alpha_bar,
        reverse_noise,
    })
}

impl DiffusionSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    /// `ᾱ_t` for `t ∈ 0..=T`.
    pub fn alpha_bar_at(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    fn check_t(&self, t: usize, allow_zero: bool) -> Result<()> {
        if t > self.steps() || (t == 0 && !allow_zero) {
            return Err(domain(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }
}

fn same_dim(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape {
            expected: format!("{:?}", a.dim()),
            got: format!("{:?}", b.dim()),
        });
    }
    Ok(())
}

/// `√ᾱ_t·k0 + √(1−ᾱ_t)·eps`; `t = 0` returns `k0`.
pub fn forward_sample(k0: &Array2<f64>, t: usize, eps: &Array2<f64>, sched: &DiffusionSchedule) -> Result<Array2<f64>> {
    sched.check_t(t, true)?;
    same_dim(k0, eps)?;
    if t == 0 {
        return Ok(k0.clone());
    }
    let ab = sched.alpha_bar_at(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(Zip::from(k0).and(eps).map_collect(|&k, &e| a * k + b * e))
}

/// `(k_t − √(1−ᾱ_t)·ε̂) / √ᾱ_t`.
pub fn predict_k0(k_t: &Array2<f64>, eps_hat: &Array2<f64>, t: usize, sched: &DiffusionSchedule) -> Result<Array2<f64>> {
    sched.check_t(t, true)?;
    same_dim(k_t, eps_hat)?;
    let ab = sched.alpha_bar_at(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(Zip::from(k_t).and(eps_hat).map_collect(|&k, &e| (k - b * e) / a))
}

/// One ancestral step `k_t → k_{t−1}`. The noise `z` is ignored at `t = 1`.
pub fn reverse_step(
    k_t: &Array2<f64>,
    eps_hat: &Array2<f64>,
    t: usize,
    z: &Array2<f64>,
    sched: &DiffusionSchedule,
) -> Result<Array2<f64>> {
    sched.check_t(t, false)?;
    same_dim(k_t, eps_hat)?;
    same_dim(k_t, z)?;
    let alpha = sched.alpha[t - 1];
    let coef = (1.0 - alpha) / (1.0 - sched.alpha_bar_at(t)).sqrt();
    let inv = 1.0 / alpha.sqrt();
    let sigma = if t == 1 { 0.0 } else { sched.reverse_noise[t - 1] };
    Ok(Zip::from(k_t)
        .and(eps_hat)
        .and(z)
        .map_collect(|&k, &e, &n| (k - coef * e) * inv + sigma * n))
}
