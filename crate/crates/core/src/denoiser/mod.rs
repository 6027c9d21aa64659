//! Conditional noise predictor `ε(k_t, y, t)`: a two-branch convolutional
//! network with hand-written reverse-mode gradients, its Adam training loop
//! and the checkpoint format.
//!
//! Image branch: conv3×3 → SiLU → 2×2 average pool → conv3×3 → SiLU →
//! bilinear resample to K×K. Kernel branch: conv3×3 plus a time-embedding
//! bias → SiLU. The two are concatenated, fused by conv3×3 plus a second
//! time-embedding bias → SiLU, and a final conv3×3 emits the prediction.

mod checkpoint;
mod layers;
mod net;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use net::{forward, forward_with_features, image_features, loss_and_grad, loss_and_grad_fixed, Denoiser, Features, TrainExample};
pub use train::{gradient_check, train, window_means, TrainConfig, TrainOutput, TrainingSet};

use crate::error::{domain, Result};
use crate::rng::rng_for;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserArch {
    pub kernel_size: usize,
    pub image_size: usize,
    /// Channel widths `[c0, c1]` of the two encoder stages.
    pub channels: Vec<usize>,
    pub time_embed_dim: usize,
}

impl Default for DenoiserArch {
    fn default() -> Self {
        Self {
            kernel_size: 11,
            image_size: 32,
            channels: vec![8, 16],
            time_embed_dim: 16,
        }
    }
}

impl DenoiserArch {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size % 2 == 0 || self.kernel_size < 3 {
            return Err(domain(format!("kernel size must be odd and >= 3, got {}", self.kernel_size)));
        }
        if self.image_size % 2 != 0 || self.image_size < 4 {
            return Err(domain(format!("image size must be even and >= 4, got {}", self.image_size)));
        }
        if self.channels.len() != 2 || self.channels.contains(&0) {
            return Err(domain(format!("channels must be two positive widths, got {:?}", self.channels)));
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return Err(domain(format!("time embedding dim must be even and >= 2, got {}", self.time_embed_dim)));
        }
        Ok(())
    }

    fn c0(&self) -> usize {
        self.channels[0]
    }

    fn c1(&self) -> usize {
        self.channels[1]
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

/// A named slice of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub len: usize,
    /// Inputs feeding each output unit; zero for biases.
    pub fan_in: usize,
}

impl Slot {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Offsets of every tensor in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub img1_w: Slot,
    pub img1_b: Slot,
    pub img2_w: Slot,
    pub img2_b: Slot,
    pub ker_w: Slot,
    pub ker_b: Slot,
    pub ker_t: Slot,
    /// Learned per-position offsets of the kernel features, so the head can
    /// express where mass sits inside the kernel window.
    pub ker_pos: Slot,
    pub fuse_w: Slot,
    pub fuse_b: Slot,
    pub fuse_t: Slot,
    pub out_w: Slot,
    pub out_b: Slot,
    pub total: usize,
}

impl Layout {
    fn new(arch: &DenoiserArch) -> Self {
        let (c0, c1, e) = (arch.c0(), arch.c1(), arch.time_embed_dim);
        let mut offset = 0;
        let mut slot = |len: usize, fan_in: usize| {
            let s = Slot { offset, len, fan_in };
            offset += len;
            s
        };
        let img1_w = slot(c0 * 9, 9);
        let img1_b = slot(c0, 0);
        let img2_w = slot(c1 * c0 * 9, c0 * 9);
        let img2_b = slot(c1, 0);
        let ker_w = slot(c0 * 9, 9);
        let ker_b = slot(c0, 0);
        let ker_t = slot(c0 * e, e);
        let ker_pos = slot(c0 * arch.kernel_size * arch.kernel_size, 0);
        let fuse_w = slot(c1 * (c0 + c1) * 9, (c0 + c1) * 9);
        let fuse_b = slot(c1, 0);
        let fuse_t = slot(c1 * e, e);
        let out_w = slot(c1 * 9, c1 * 9);
        let out_b = slot(1, 0);
        Self {
            img1_w,
            img1_b,
            img2_w,
            img2_b,
            ker_w,
            ker_b,
            ker_t,
            ker_pos,
            fuse_w,
            fuse_b,
            fuse_t,
            out_w,
            out_b,
            total: offset,
        }
    }

    pub fn slots(&self) -> [(&'static str, Slot); 13] {
        [
            ("img1_w", self.img1_w),
            ("img1_b", self.img1_b),
            ("img2_w", self.img2_w),
            ("img2_b", self.img2_b),
            ("ker_w", self.ker_w),
            ("ker_b", self.ker_b),
            ("ker_t", self.ker_t),
            ("ker_pos", self.ker_pos),
            ("fuse_w", self.fuse_w),
            ("fuse_b", self.fuse_b),
            ("fuse_t", self.fuse_t),
            ("out_w", self.out_w),
            ("out_b", self.out_b),
        ]
    }
}

/// Flat parameter vector. Values are kept f32-representable by training so
/// that checkpoints round-trip exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub values: Vec<f64>,
}

impl DenoiserParams {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Rounds every value to the nearest f32.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.values {
            *v = *v as f32 as f64;
        }
    }
}

/// Weights uniform in `±1/√fan_in`, biases zero.
pub fn init_params(arch: &DenoiserArch, seed: u64) -> Result<DenoiserParams> {
    arch.validate()?;
    let layout = arch.layout();
    let mut values = vec![0.0; layout.total];
    for (i, (_, slot)) in layout.slots().iter().enumerate() {
        if slot.fan_in == 0 {
            continue;
        }
        let bound = 1.0 / (slot.fan_in as f64).sqrt();
        let mut rng = rng_for(seed, "init", i as u64);
        for v in &mut values[slot.range()] {
            *v = ((rng.random::<f64>() * 2.0 - 1.0) * bound) as f32 as f64;
        }
    }
    Ok(DenoiserParams { values })
}
