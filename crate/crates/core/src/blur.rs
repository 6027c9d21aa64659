//! The spatially invariant blur model `y = k * x + n`: boundary-aware
//! convolution, additive noise, random-trajectory motion kernels and the
//! on-disk kernel dataset.

use crate::error::{domain, io_err, Error, Result};
use crate::fft::{embed_centered, Fft2};
use crate::image::{Image, Kernel};
use crate::rng::{normal, rng_for, Rng};
use ndarray::Array2;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Boundary convention for convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Half-sample mirror (`… c b a | a b c …`).
    Symmetric,
    /// Periodic wrap-around.
    Circular,
}

/// Mirror index into `[0, n)` for the half-sample symmetric convention.
pub(crate) fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Symmetric padding by `pad` pixels on every side.
pub fn pad_symmetric(x: &Array2<f64>, pad: usize) -> Array2<f64> {
    let (h, w) = x.dim();
    let p = pad as isize;
    Array2::from_shape_fn((h + 2 * pad, w + 2 * pad), |(r, c)| {
        x[[mirror(r as isize - p, h), mirror(c as isize - p, w)]]
    })
}

/// Edge-replicate padding by `pad` pixels on every side.
pub fn pad_edge(x: &Array2<f64>, pad: usize) -> Array2<f64> {
    let (h, w) = x.dim();
    let p = pad as isize;
    Array2::from_shape_fn((h + 2 * pad, w + 2 * pad), |(r, c)| {
        let rr = (r as isize - p).clamp(0, h as isize - 1) as usize;
        let cc = (c as isize - p).clamp(0, w as isize - 1) as usize;
        x[[rr, cc]]
    })
}

fn check_kernel_fits(x: &Array2<f64>, k: &Array2<f64>) -> Result<()> {
    let (kh, kw) = k.dim();
    let (h, w) = x.dim();
    if kh != kw || kh % 2 == 0 {
        return Err(domain(format!("kernel must be odd and square, got {kh}x{kw}")));
    }
    if kh > h.min(w) {
        return Err(domain(format!("kernel {kh}x{kw} larger than image {h}x{w}")));
    }
    Ok(())
}

fn circular_fft(x: &Array2<f64>, k: &Array2<f64>) -> Array2<f64> {
    let (h, w) = x.dim();
    let plan = Fft2::new(h, w);
    let xs = plan.forward_real(x);
    let ks = plan.forward_real(&embed_centered(k, h, w));
    let prod: Vec<Complex64> = xs.iter().zip(&ks).map(|(a, b)| a * b).collect();
    plan.inverse_real(prod)
}

/// Same-size convolution of an arbitrary real array with an arbitrary odd
/// square array, computed as a frequency-domain product.
pub fn convolve_array(x: &Array2<f64>, k: &Array2<f64>, boundary: Boundary) -> Result<Array2<f64>> {
    check_kernel_fits(x, k)?;
    match boundary {
        Boundary::Circular => Ok(circular_fft(x, k)),
        Boundary::Symmetric => {
            let r = k.nrows() / 2;
            let (h, w) = x.dim();
            let full = circular_fft(&pad_symmetric(x, r), k);
            Ok(full.slice(ndarray::s![r..r + h, r..r + w]).to_owned())
        }
    }
}

/// Same-size convolution by the direct spatial sum.
pub fn convolve_array_direct(
    x: &Array2<f64>,
    k: &Array2<f64>,
    boundary: Boundary,
) -> Result<Array2<f64>> {
    check_kernel_fits(x, k)?;
    let (h, w) = x.dim();
    let r = (k.nrows() / 2) as isize;
    let index = |i: isize, n: usize| match boundary {
        Boundary::Symmetric => mirror(i, n),
        Boundary::Circular => i.rem_euclid(n as isize) as usize,
    };
    Ok(Array2::from_shape_fn((h, w), |(i, j)| {
        let mut acc = 0.0;
        for ((u, v), &kv) in k.indexed_iter() {
            let si = index(i as isize - (u as isize - r), h);
            let sj = index(j as isize - (v as isize - r), w);
            acc += kv * x[[si, sj]];
        }
        acc
    }))
}

pub fn convolve(x: &Image, k: &Kernel, boundary: Boundary) -> Result<Image> {
    Image::new(convolve_array(x.pixels(), k.weights(), boundary)?)
}

/// Adds i.i.d. Gaussian noise; no clipping.
pub fn add_noise(y: &Image, noise_std: f64, seed: u64) -> Result<Image> {
    if !(noise_std >= 0.0) {
        return Err(domain("noise_std must be >= 0"));
    }
    if noise_std == 0.0 {
        return Ok(y.clone());
    }
    let mut rng = rng_for(seed, "blur-noise", 0);
    Image::new(y.pixels().mapv(|v| v + noise_std * normal(&mut rng)))
}

/// Random camera-shake trajectory parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryParams {
    pub num_steps: usize,
    /// Velocity persistence in `[0, 1)`.
    pub inertia: f64,
    pub jitter_std: f64,
    pub smoothing_sigma: f64,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self {
            num_steps: 24,
            inertia: 0.8,
            jitter_std: 0.22,
            smoothing_sigma: 0.4,
        }
    }
}

impl TrajectoryParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_steps < 2 {
            return Err(domain("trajectory needs at least 2 steps"));
        }
        if !(0.0..1.0).contains(&self.inertia) {
            return Err(domain("inertia must be in [0, 1)"));
        }
        if !(self.jitter_std >= 0.0 && self.smoothing_sigma >= 0.0) {
            return Err(domain("jitter and smoothing must be >= 0"));
        }
        Ok(())
    }
}

const SUPERSAMPLE: usize = 3;
const MAX_RETRIES: u64 = 10;

fn trajectory(params: &TrajectoryParams, rng: &mut Rng) -> Vec<(f64, f64)> {
    let stationary = params.jitter_std / (1.0 - params.inertia * params.inertia).sqrt();
    let mut v = (stationary * normal(rng), stationary * normal(rng));
    let mut p = (0.0, 0.0);
    let mut pts = vec![p];
    for _ in 1..params.num_steps {
        v = (
            params.inertia * v.0 + params.jitter_std * normal(rng),
            params.inertia * v.1 + params.jitter_std * normal(rng),
        );
        p = (p.0 + v.0, p.1 + v.1);
        pts.push(p);
    }
    // Supersample along each segment.
    let mut dense = Vec::with_capacity(pts.len() * SUPERSAMPLE);
    for seg in pts.windows(2) {
        for s in 0..SUPERSAMPLE {
            let f = s as f64 / SUPERSAMPLE as f64;
            dense.push((
                seg[0].0 + f * (seg[1].0 - seg[0].0),
                seg[0].1 + f * (seg[1].1 - seg[0].1),
            ));
        }
    }
    dense.push(*pts.last().unwrap());
    let n = dense.len() as f64;
    let (mx, my) = dense
        .iter()
        .fold((0.0, 0.0), |acc, q| (acc.0 + q.0 / n, acc.1 + q.1 / n));
    dense.iter().map(|q| (q.0 - mx, q.1 - my)).collect()
}

fn splat(points: &[(f64, f64)], size: usize) -> Array2<f64> {
    let c = (size / 2) as f64;
    let mut out = Array2::zeros((size, size));
    for &(x, y) in points {
        let (fx, fy) = (c + x, c + y);
        let (x0, y0) = (fx.floor(), fy.floor());
        let (tx, ty) = (fx - x0, fy - y0);
        for (dy, wy) in [(0.0, 1.0 - ty), (1.0, ty)] {
            for (dx, wx) in [(0.0, 1.0 - tx), (1.0, tx)] {
                let (r, col) = (y0 + dy, x0 + dx);
                if r >= 0.0 && col >= 0.0 && (r as usize) < size && (col as usize) < size {
                    out[[r as usize, col as usize]] += wy * wx;
                }
            }
        }
    }
    out
}

fn gaussian_smooth(a: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|j| (-((j * j) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = taps.iter().sum();
    let (h, w) = a.dim();
    let pass = |src: &Array2<f64>, horizontal: bool| {
        Array2::from_shape_fn((h, w), |(r, c)| {
            let mut acc = 0.0;
            for (q, t) in taps.iter().enumerate() {
                let d = q as isize - radius;
                let (rr, cc) = if horizontal {
                    (r as isize, c as isize + d)
                } else {
                    (r as isize + d, c as isize)
                };
                if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                    acc += t * src[[rr as usize, cc as usize]];
                }
            }
            acc / norm
        })
    };
    pass(&pass(a, true), false)
}

/// Synthesizes a motion-blur kernel from a random trajectory: simulate,
/// center on the path centroid, splat bilinearly at 3× supersampling,
/// optionally smooth, clip and normalize.
pub fn synth_motion_kernel(size: usize, params: &TrajectoryParams, seed: u64) -> Result<Kernel> {
    if size < 3 || size % 2 == 0 {
        return Err(domain(format!("kernel size must be odd and >= 3, got {size}")));
    }
    params.validate()?;
    for attempt in 0..=MAX_RETRIES {
        let mut rng = rng_for(seed, "motion-kernel", attempt);
        let pts = trajectory(params, &mut rng);
        let mut raster = splat(&pts, size);
        if raster.sum() <= 0.0 {
            continue;
        }
        if params.smoothing_sigma > 0.0 {
            raster = gaussian_smooth(&raster, params.smoothing_sigma);
        }
        return Kernel::project(&raster);
    }
    Err(domain(format!(
        "trajectory left the {size}x{size} grid on {} attempts",
        MAX_RETRIES + 1
    )))
}

/// A set of equally sized kernels stored in single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDataset {
    pub size: usize,
    pub kernels: Vec<Vec<f32>>,
}

const DATASET_MAGIC: &[u8; 4] = b"KDKD";
const DATASET_VERSION: u32 = 1;

impl KernelDataset {
    pub fn from_kernels(kernels: &[Kernel]) -> Result<Self> {
        let size = kernels.first().ok_or_else(|| domain("empty kernel list"))?.size();
        if kernels.iter().any(|k| k.size() != size) {
            return Err(domain("kernels differ in size"));
        }
        Ok(Self {
            size,
            kernels: kernels
                .iter()
                .map(|k| k.weights().iter().map(|&v| v as f32).collect())
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    /// Kernel `i` widened to f64 and renormalized.
    pub fn kernel(&self, i: usize) -> Result<Kernel> {
        let raw = self.kernels.get(i).ok_or_else(|| domain(format!("no kernel {i}")))?;
        let arr = Array2::from_shape_fn((self.size, self.size), |(r, c)| {
            f64::from(raw[r * self.size + c])
        });
        Kernel::project(&arr)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.size * self.size * self.len());
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.size as u32).to_le_bytes());
        for k in &self.kernels {
            for v in k {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let word = |off: usize| -> Result<u32> {
            data.get(off..off + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or(Error::Format {
                    offset: data.len(),
                    reason: "truncated header".into(),
                })
        };
        if data.len() < 4 || &data[..4] != DATASET_MAGIC {
            return Err(Error::Format {
                offset: 0,
                reason: "bad magic, expected KDKD".into(),
            });
        }
        let version = word(4)?;
        if version != DATASET_VERSION {
            return Err(Error::Format {
                offset: 4,
                reason: format!("unsupported version {version}"),
            });
        }
        let count = word(8)? as usize;
        let size = word(12)? as usize;
        if size == 0 || size % 2 == 0 {
            return Err(Error::Format {
                offset: 12,
                reason: format!("kernel size {size} must be odd"),
            });
        }
        let per = size * size;
        let need = 16 + 4 * per * count;
        if data.len() < need {
            return Err(Error::Format {
                offset: data.len(),
                reason: format!("truncated payload, expected {need} bytes"),
            });
        }
        if data.len() > need {
            return Err(Error::Format {
                offset: need,
                reason: "trailing bytes after payload".into(),
            });
        }
        let kernels = (0..count)
            .map(|i| {
                (0..per)
                    .map(|j| {
                        let off = 16 + 4 * (i * per + j);
                        f32::from_le_bytes(data[off..off + 4].try_into().unwrap())
                    })
                    .collect()
            })
            .collect();
        Ok(Self { size, kernels })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(io_err(path.display().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(io_err(path.display().to_string()))?;
        Self::from_bytes(&data)
    }
}

/// Generates `count` kernels; kernel `i` is seeded from `(seed, i)`.
pub fn gen_dataset(count: usize, size: usize, params: &TrajectoryParams, seed: u64) -> Result<KernelDataset> {
    if count == 0 {
        return Err(domain("count must be >= 1"));
    }
    let kernels: Vec<Kernel> = (0..count)
        .into_par_iter()
        .map(|i| synth_motion_kernel(size, params, crate::rng::derive_seed(seed, "dataset-kernel", i as u64)))
        .collect::<Result<_>>()?;
    KernelDataset::from_kernels(&kernels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn random_array(h: usize, w: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng_for(seed, "test", 0);
        Array2::from_shape_fn((h, w), |_| rng.random::<f64>())
    }

    #[test]
    fn mirror_convention() {
        let idx: Vec<usize> = (-3..7).map(|i| mirror(i, 4)).collect();
        assert_eq!(idx, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
    }

    #[test]
    fn impulse_kernel_is_identity() {
        let x = Image::new(random_array(12, 10, 1)).unwrap();
        let k = Kernel::impulse(5).unwrap();
        for b in [Boundary::Symmetric, Boundary::Circular] {
            let y = convolve(&x, &k, b).unwrap();
            for (a, c) in x.pixels().iter().zip(y.pixels()) {
                assert!((a - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_image_is_preserved() {
        let x = Image::constant(16, 16, 0.37).unwrap();
        let k = Kernel::project(&random_array(7, 7, 2)).unwrap();
        let y = convolve(&x, &k, Boundary::Symmetric).unwrap();
        assert!(y.pixels().iter().all(|v| (v - 0.37).abs() < 1e-10));
    }

    #[test]
    fn oversized_kernel_is_rejected() {
        let x = Image::constant(8, 12, 0.5).unwrap();
        let k = Kernel::impulse(9).unwrap();
        assert!(convolve(&x, &k, Boundary::Symmetric).is_err());
    }

    #[test]
    fn noise_moments_and_determinism() {
        let y = Image::constant(256, 256, 0.5).unwrap();
        assert_eq!(add_noise(&y, 0.0, 3).unwrap(), y);
        let a = add_noise(&y, 0.05, 3).unwrap();
        assert_eq!(a, add_noise(&y, 0.05, 3).unwrap());
        let n = (256 * 256) as f64;
        let mean = a.pixels().iter().map(|v| v - 0.5).sum::<f64>() / n;
        let var = a.pixels().iter().map(|v| (v - 0.5 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var / 0.0025 - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn degenerate_trajectory_gives_impulse() {
        let p = TrajectoryParams {
            num_steps: 2,
            inertia: 0.0,
            jitter_std: 0.0,
            smoothing_sigma: 0.0,
        };
        let k = synth_motion_kernel(7, &p, 11).unwrap();
        assert_eq!(k, Kernel::impulse(7).unwrap());
    }

    #[test]
    fn far_away_trajectories_error_out() {
        let p = TrajectoryParams {
            num_steps: 400,
            inertia: 0.99,
            jitter_std: 50.0,
            smoothing_sigma: 0.0,
        };
        // The centroid lands on the grid only by luck; most seeds give up.
        let failures = (0..5).filter(|&s| synth_motion_kernel(3, &p, s).is_err()).count();
        assert!(failures > 0);
    }

    #[test]
    fn kernels_satisfy_invariants() {
        let p = TrajectoryParams::default();
        for seed in 0..50 {
            let k = synth_motion_kernel(11, &p, seed).unwrap();
            assert!(k.weights().iter().all(|&v| v >= 0.0));
            assert!((k.weights().sum() - 1.0).abs() < 1e-9);
        }
        assert!(synth_motion_kernel(10, &p, 0).is_err());
    }

    #[test]
    fn dataset_roundtrip_and_bad_magic() {
        let ds = gen_dataset(100, 11, &TrajectoryParams::default(), 5).unwrap();
        let bytes = ds.to_bytes();
        assert_eq!(KernelDataset::from_bytes(&bytes).unwrap(), ds);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(KernelDataset::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(
            KernelDataset::from_bytes(cut),
            Err(Error::Format { offset, .. }) if offset == cut.len()
        ));
        assert!(KernelDataset::from_bytes(&bytes[..10]).is_err());
        assert!(gen_dataset(0, 11, &TrajectoryParams::default(), 5).is_err());
    }

    #[test]
    fn dataset_kernel_is_normalized_in_f64() {
        let ds = gen_dataset(3, 11, &TrajectoryParams::default(), 9).unwrap();
        for i in 0..3 {
            assert!((ds.kernel(i).unwrap().weights().sum() - 1.0).abs() < 1e-12);
        }
        assert!(ds.kernel(3).is_err());
    }
}
