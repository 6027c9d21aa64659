//! Data pipeline and Adam training loop.

use super::net::{loss_and_grad_fixed, TrainExample};
use super::{init_params, DenoiserArch, DenoiserParams};
use crate::blur::{convolve_array, Boundary};
use crate::diffusion::DiffusionSchedule;
use crate::error::{domain, Error, Result};
use crate::image::Image;
use crate::rng::{derive_seed, normal, rng_for, Rng};
use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
    /// 0 disables the exponential moving average of parameters.
    pub ema_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 1e-3,
            iterations: 20_000,
            seed: 0,
            ema_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(domain("batch size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(domain(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(domain(format!("ema decay must be in [0, 1), got {}", self.ema_decay)));
        }
        Ok(())
    }
}

/// Sharp scenes and kernels from which training pairs are synthesized:
/// a random crop (with random horizontal flip) of a random scene is blurred by
/// a random kernel with symmetric boundaries and Gaussian noise is added.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub kernels: Vec<Array2<f64>>,
    /// Scenes at least `image_size` on each side.
    pub scenes: Vec<Image>,
    pub noise_std: f64,
    pub kernel_scale: f64,
}

impl TrainingSet {
    fn check(&self, arch: &DenoiserArch) -> Result<()> {
        if self.kernels.is_empty() || self.scenes.is_empty() {
            return Err(domain("training set needs at least one kernel and one scene"));
        }
        if self.kernels.iter().any(|k| k.dim() != (arch.kernel_size, arch.kernel_size)) {
            return Err(domain(format!("training kernels must be {0}x{0}", arch.kernel_size)));
        }
        if self.scenes.iter().any(|s| s.height() < arch.image_size || s.width() < arch.image_size) {
            return Err(domain(format!("scenes must be at least {0}x{0}", arch.image_size)));
        }
        Ok(())
    }

    /// A blurred pair `(s·k, y)` drawn from `rng`.
    pub fn draw_pair(&self, rng: &mut Rng, image_size: usize) -> Result<(Array2<f64>, Image)> {
        let k = &self.kernels[rng.random_range(0..self.kernels.len())];
        let scene = &self.scenes[rng.random_range(0..self.scenes.len())];
        let top = rng.random_range(0..=scene.height() - image_size);
        let left = rng.random_range(0..=scene.width() - image_size);
        let mut crop = scene.crop(top, left, image_size, image_size)?;
        if rng.random::<bool>() {
            crop = crop.flipped_horizontal();
        }
        let mut y = convolve_array(crop.pixels(), k, Boundary::Symmetric)?;
        if self.noise_std > 0.0 {
            y.mapv_inplace(|v| v + self.noise_std * normal(rng));
        }
        Ok((k * self.kernel_scale, Image::new(y)?))
    }

    fn example(&self, rng: &mut Rng, arch: &DenoiserArch, sched: &DiffusionSchedule) -> Result<TrainExample> {
        let (k0, y) = self.draw_pair(rng, arch.image_size)?;
        let t = rng.random_range(1..=sched.steps());
        let eps = Array2::from_shape_fn(k0.dim(), |_| normal(rng));
        Ok(TrainExample { k0, y, t, eps })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: DenoiserParams,
    /// `(iteration, mean batch loss over the preceding 100 iterations)`.
    pub loss_curve: Vec<(usize, f64)>,
    /// Batch loss of every iteration.
    pub losses: Vec<f64>,
}

/// Central-difference check of the batch gradient at `coords`; returns
/// `max |fd − g| / max |g|`.
pub fn gradient_check(
    params: &DenoiserParams,
    arch: &DenoiserArch,
    batch: &[TrainExample],
    sched: &DiffusionSchedule,
    coords: &[usize],
) -> Result<f64> {
    let (_, g) = loss_and_grad_fixed(params, arch, batch, sched)?;
    let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for &i in coords {
        let mut p = params.clone();
        p.values[i] += h;
        let lp = loss_and_grad_fixed(&p, arch, batch, sched)?.0;
        p.values[i] -= 2.0 * h;
        let lm = loss_and_grad_fixed(&p, arch, batch, sched)?.0;
        worst = worst.max(((lp - lm) / (2.0 * h) - g[i]).abs());
    }
    Ok(worst / scale)
}

const GATE_TOLERANCE: f64 = 1e-4;
const LOG_EVERY: usize = 100;
const DIVERGENCE_FACTOR: f64 = 1e3;
const DIVERGENCE_PATIENCE: usize = 1000;

/// Adam on the batch loss. The gradient is verified against finite
/// differences on the first batch before any update. `log` receives
/// `(iteration, windowed mean loss)` every 100 iterations.
pub fn train(
    set: &TrainingSet,
    cfg: &TrainConfig,
    arch: &DenoiserArch,
    sched: &DiffusionSchedule,
    mut log: impl FnMut(usize, f64),
) -> Result<TrainOutput> {
    cfg.validate()?;
    arch.validate()?;
    set.check(arch)?;
    let mut params = init_params(arch, derive_seed(cfg.seed, "init", 0))?;
    let n = params.len();
    let batch_at = |it: usize| -> Result<Vec<TrainExample>> {
        (0..cfg.batch_size)
            .map(|b| {
                let mut rng = rng_for(cfg.seed, "train-example", (it * cfg.batch_size + b) as u64);
                set.example(&mut rng, arch, sched)
            })
            .collect()
    };

    let layout = arch.layout();
    let coords: Vec<usize> = layout
        .slots()
        .iter()
        .flat_map(|(_, s)| [s.offset, s.offset + s.len - 1])
        .collect();
    let err = gradient_check(&params, arch, &batch_at(0)?, sched, &coords)?;
    if err > GATE_TOLERANCE {
        return Err(domain(format!("gradient check failed: relative error {err:e}")));
    }

    let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut ema = (cfg.ema_decay > 0.0).then(|| params.clone());
    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut curve = Vec::new();
    let mut over = 0usize;
    for it in 0..cfg.iterations {
        let (loss, grad) = loss_and_grad_fixed(&params, arch, &batch_at(it)?, sched)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                iteration: it,
                what: "training loss".into(),
            });
        }
        losses.push(loss);
        let initial = losses[0];
        over = if loss > DIVERGENCE_FACTOR * initial { over + 1 } else { 0 };
        if over >= DIVERGENCE_PATIENCE {
            return Err(Error::Diverged {
                iteration: it,
                loss,
                initial,
            });
        }
        let step = (it + 1) as i32;
        let (c1, c2) = (1.0 - b1.powi(step), 1.0 - b2.powi(step));
        for i in 0..n {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            params.values[i] -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
        }
        params.round_to_f32();
        if let Some(e) = ema.as_mut() {
            for (a, p) in e.values.iter_mut().zip(&params.values) {
                *a = cfg.ema_decay * *a + (1.0 - cfg.ema_decay) * p;
            }
            e.round_to_f32();
        }
        if (it + 1) % LOG_EVERY == 0 {
            let window = &losses[it + 1 - LOG_EVERY..];
            let mean = window.iter().sum::<f64>() / LOG_EVERY as f64;
            curve.push((it + 1, mean));
            log(it + 1, mean);
        }
    }
    Ok(TrainOutput {
        params: ema.unwrap_or(params),
        loss_curve: curve,
        losses,
    })
}

/// Means over consecutive non-overlapping windows.
pub fn window_means(values: &[f64], window: usize) -> Vec<f64> {
    values
        .chunks(window)
        .filter(|c| c.len() == window)
        .map(|c| c.iter().sum::<f64>() / window as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ScheduleConfig;

    fn one_pair_set(arch: &DenoiserArch) -> TrainingSet {
        let k = crate::blur::synth_motion_kernel(arch.kernel_size, &Default::default(), 1).unwrap();
        TrainingSet {
            kernels: vec![k.into_weights()],
            scenes: vec![crate::scenes::synth_scene(arch.image_size, arch.image_size, 2).unwrap()],
            noise_std: 0.0,
            kernel_scale: (arch.kernel_size * arch.kernel_size) as f64 / 4.0,
        }
    }

    #[test]
    fn training_is_deterministic_and_lowers_loss() {
        let arch = DenoiserArch {
            kernel_size: 5,
            image_size: 8,
            channels: vec![4, 4],
            time_embed_dim: 4,
        };
        let sched = ScheduleConfig::rescaled(50).build().unwrap();
        let set = one_pair_set(&arch);
        let cfg = TrainConfig {
            iterations: 600,
            batch_size: 4,
            learning_rate: 3e-3,
            ..TrainConfig::default()
        };
        let a = train(&set, &cfg, &arch, &sched, |_, _| {}).unwrap();
        let b = train(&set, &cfg, &arch, &sched, |_, _| {}).unwrap();
        assert_eq!(a.loss_curve, b.loss_curve);
        assert_eq!(a.params, b.params);
        assert_eq!(a.loss_curve.len(), 6);
        let w = window_means(&a.losses, 100);
        assert!(w.last().unwrap() < w.first().unwrap());
        let mut r = a.params.clone();
        r.round_to_f32();
        assert_eq!(r, a.params);
    }

    #[test]
    fn config_errors() {
        let arch = DenoiserArch::default();
        let sched = ScheduleConfig::default().build().unwrap();
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(train(&one_pair_set(&arch), &bad, &arch, &sched, |_, _| {}).is_err());
        let mut empty = one_pair_set(&arch);
        empty.kernels.clear();
        assert!(train(&empty, &TrainConfig::default(), &arch, &sched, |_, _| {}).is_err());
    }

    #[test]
    fn window_means_drop_partial_tail() {
        assert_eq!(window_means(&[1.0, 3.0, 5.0, 7.0, 9.0], 2), vec![2.0, 6.0]);
    }
}
