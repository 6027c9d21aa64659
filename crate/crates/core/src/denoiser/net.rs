//! Forward and reverse passes of the noise predictor.

use super::layers::*;
use super::{DenoiserArch, DenoiserParams, Layout};
use crate::diffusion::{forward_sample, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{normal, rng_for};
use crate::sampler::NoisePredictor;
use ndarray::Array2;
use rand::Rng as _;
use rayon::prelude::*;

fn check_params(arch: &DenoiserArch, params: &DenoiserParams) -> Result<()> {
    if params.len() != arch.param_count() {
        return Err(Error::Shape {
            expected: format!("{} parameters", arch.param_count()),
            got: format!("{}", params.len()),
        });
    }
    Ok(())
}

fn check_dim(what: &str, got: (usize, usize), n: usize) -> Result<()> {
    if got != (n, n) {
        return Err(Error::Shape {
            expected: format!("{what} {n}x{n}"),
            got: format!("{}x{}", got.0, got.1),
        });
    }
    Ok(())
}

fn to_maps(a: &Array2<f64>) -> Maps {
    let (h, w) = a.dim();
    Maps::from_vec(1, h, w, a.iter().copied().collect())
}

/// Encoded image features at kernel resolution (`c1 × K × K`). They do not
/// depend on `k_t` or `t`, so a sampler computes them once per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    maps: Maps,
}

struct ImageCache {
    input: Maps,
    pre1: Maps,
    pooled: Maps,
    pre2: Maps,
    feat: Maps,
}

fn image_branch(p: &[f64], lay: &Layout, arch: &DenoiserArch, r: &[f64], y: Maps) -> ImageCache {
    let (c0, c1) = (arch.c0(), arch.c1());
    let pre1 = conv3x3(&y, &p[lay.img1_w.range()], &p[lay.img1_b.range()], c0);
    let pooled = avgpool2(&silu(&pre1));
    let pre2 = conv3x3(&pooled, &p[lay.img2_w.range()], &p[lay.img2_b.range()], c1);
    let feat = resample(&silu(&pre2), r, arch.kernel_size);
    ImageCache {
        input: y,
        pre1,
        pooled,
        pre2,
        feat,
    }
}

struct HeadCache {
    k: Maps,
    emb: Vec<f64>,
    pre_g: Maps,
    cat: Maps,
    pre_u: Maps,
    u: Maps,
    out: Maps,
}

fn head(p: &[f64], lay: &Layout, arch: &DenoiserArch, feat: &Maps, k: Maps, t: usize) -> HeadCache {
    let (c0, c1) = (arch.c0(), arch.c1());
    let emb = time_embedding(t, arch.time_embed_dim);
    let mut pre_g = conv3x3(&k, &p[lay.ker_w.range()], &p[lay.ker_b.range()], c0);
    add_channel_bias(&mut pre_g, &dense(&p[lay.ker_t.range()], &emb));
    for (v, b) in pre_g.data.iter_mut().zip(&p[lay.ker_pos.range()]) {
        *v += b;
    }
    let cat = silu(&pre_g).concat(feat);
    let mut pre_u = conv3x3(&cat, &p[lay.fuse_w.range()], &p[lay.fuse_b.range()], c1);
    add_channel_bias(&mut pre_u, &dense(&p[lay.fuse_t.range()], &emb));
    let u = silu(&pre_u);
    let out = conv3x3(&u, &p[lay.out_w.range()], &p[lay.out_b.range()], 1);
    HeadCache {
        k,
        emb,
        pre_g,
        cat,
        pre_u,
        u,
        out,
    }
}

fn outer_accumulate(g: &mut [f64], rows: &[f64], e: &[f64]) {
    for (row, r) in g.chunks_mut(e.len()).zip(rows) {
        for (gv, ev) in row.iter_mut().zip(e) {
            *gv += r * ev;
        }
    }
}

/// Backpropagates `gout` through the head; returns the feature gradient.
fn head_backward(p: &[f64], lay: &Layout, arch: &DenoiserArch, hc: &HeadCache, gout: &Maps, grad: &mut [f64]) -> Maps {
    let c0 = arch.c0();
    let (gw, gb) = split_pair(grad, lay.out_w.range(), lay.out_b.range());
    let gu = conv3x3_backward(&hc.u, &p[lay.out_w.range()], gout, gw, gb, true).unwrap();
    let gpre_u = silu_backward(&hc.pre_u, &gu);
    outer_accumulate(&mut grad[lay.fuse_t.range()], &channel_sums(&gpre_u), &hc.emb);
    let (gw, gb) = split_pair(grad, lay.fuse_w.range(), lay.fuse_b.range());
    let gcat = conv3x3_backward(&hc.cat, &p[lay.fuse_w.range()], &gpre_u, gw, gb, true).unwrap();
    let (gg, gfeat) = gcat.split(c0);
    let gpre_g = silu_backward(&hc.pre_g, &gg);
    outer_accumulate(&mut grad[lay.ker_t.range()], &channel_sums(&gpre_g), &hc.emb);
    for (g, d) in grad[lay.ker_pos.range()].iter_mut().zip(&gpre_g.data) {
        *g += d;
    }
    let (gw, gb) = split_pair(grad, lay.ker_w.range(), lay.ker_b.range());
    conv3x3_backward(&hc.k, &p[lay.ker_w.range()], &gpre_g, gw, gb, false);
    gfeat
}

fn image_backward(p: &[f64], lay: &Layout, r: &[f64], ic: &ImageCache, gfeat: &Maps, grad: &mut [f64]) {
    let gh2 = resample_backward(gfeat, r, ic.pre2.h);
    let gpre2 = silu_backward(&ic.pre2, &gh2);
    let (gw, gb) = split_pair(grad, lay.img2_w.range(), lay.img2_b.range());
    let gpooled = conv3x3_backward(&ic.pooled, &p[lay.img2_w.range()], &gpre2, gw, gb, true).unwrap();
    let gpre1 = silu_backward(&ic.pre1, &avgpool2_backward(&gpooled));
    let (gw, gb) = split_pair(grad, lay.img1_w.range(), lay.img1_b.range());
    conv3x3_backward(&ic.input, &p[lay.img1_w.range()], &gpre1, gw, gb, false);
}

/// Two disjoint mutable slices of the gradient, `a` before `b`.
fn split_pair(
    grad: &mut [f64],
    a: std::ops::Range<usize>,
    b: std::ops::Range<usize>,
) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = grad.split_at_mut(b.start);
    (&mut lo[a], &mut hi[..b.end - b.start])
}

fn from_maps(m: &Maps) -> Array2<f64> {
    Array2::from_shape_vec((m.h, m.w), m.data.clone()).expect("single-channel map")
}

/// Image-branch features of `y`.
pub fn image_features(params: &DenoiserParams, arch: &DenoiserArch, y: &Image) -> Result<Features> {
    arch.validate()?;
    check_params(arch, params)?;
    check_dim("image", y.dim(), arch.image_size)?;
    let r = resample_matrix(arch.image_size / 2, arch.kernel_size);
    let ic = image_branch(&params.values, &arch.layout(), arch, &r, to_maps(y.pixels()));
    Ok(Features { maps: ic.feat })
}

/// Noise prediction from precomputed image features.
pub fn forward_with_features(
    params: &DenoiserParams,
    arch: &DenoiserArch,
    features: &Features,
    k_t: &Array2<f64>,
    t: usize,
) -> Result<Array2<f64>> {
    check_params(arch, params)?;
    check_dim("kernel", k_t.dim(), arch.kernel_size)?;
    let hc = head(&params.values, &arch.layout(), arch, &features.maps, to_maps(k_t), t);
    Ok(from_maps(&hc.out))
}

/// `ε(k_t, y, t)` for a scaled noisy kernel `k_t`.
pub fn forward(params: &DenoiserParams, arch: &DenoiserArch, k_t: &Array2<f64>, y: &Image, t: usize) -> Result<Array2<f64>> {
    let f = image_features(params, arch, y)?;
    forward_with_features(params, arch, &f, k_t, t)
}

/// A fully specified training example.
#[derive(Debug, Clone)]
pub struct TrainExample {
    /// Clean scaled kernel `s·k`.
    pub k0: Array2<f64>,
    pub y: Image,
    pub t: usize,
    pub eps: Array2<f64>,
}

/// Per-entry squared error of one example and its parameter gradient.
fn example_loss_grad(
    p: &[f64],
    lay: &Layout,
    arch: &DenoiserArch,
    r: &[f64],
    ex: &TrainExample,
    sched: &DiffusionSchedule,
) -> Result<(f64, Vec<f64>)> {
    let k_t = forward_sample(&ex.k0, ex.t, &ex.eps, sched)?;
    let ic = image_branch(p, lay, arch, r, to_maps(ex.y.pixels()));
    let hc = head(p, lay, arch, &ic.feat, to_maps(&k_t), ex.t);
    let n = hc.out.data.len() as f64;
    let diff: Vec<f64> = hc.out.data.iter().zip(ex.eps.iter()).map(|(o, e)| o - e).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let gout = Maps::from_vec(1, hc.out.h, hc.out.w, diff.iter().map(|d| 2.0 * d / n).collect());
    let mut grad = vec![0.0; lay.total];
    let gfeat = head_backward(p, lay, arch, &hc, &gout, &mut grad);
    image_backward(p, lay, r, &ic, &gfeat, &mut grad);
    Ok((loss, grad))
}

/// Mean loss `(1/B) Σ_b mean_entries (ε_b − ε̂_b)²` and its exact gradient.
/// Examples are evaluated in parallel and reduced in order.
pub fn loss_and_grad_fixed(
    params: &DenoiserParams,
    arch: &DenoiserArch,
    batch: &[TrainExample],
    sched: &DiffusionSchedule,
) -> Result<(f64, Vec<f64>)> {
    arch.validate()?;
    check_params(arch, params)?;
    if batch.is_empty() {
        return Err(crate::error::domain("empty batch"));
    }
    for ex in batch {
        check_dim("kernel", ex.k0.dim(), arch.kernel_size)?;
        check_dim("noise", ex.eps.dim(), arch.kernel_size)?;
        check_dim("image", ex.y.dim(), arch.image_size)?;
    }
    let lay = arch.layout();
    let r = resample_matrix(arch.image_size / 2, arch.kernel_size);
    let parts: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_iter()
        .map(|ex| example_loss_grad(&params.values, &lay, arch, &r, ex, sched))
        .collect();
    let b = batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; lay.total];
    for (index, part) in parts.into_iter().enumerate() {
        let (l, g) = part?;
        if !l.is_finite() {
            return Err(Error::NonFiniteExample { index });
        }
        loss += l;
        for (a, v) in grad.iter_mut().zip(&g) {
            *a += v;
        }
    }
    grad.iter_mut().for_each(|v| *v /= b);
    Ok((loss / b, grad))
}

/// Draws `t ~ U{1..T}` and `ε ~ N(0, I)` for each `(k0, y)` pair from
/// `(seed, index)` and evaluates the batch loss.
pub fn loss_and_grad(
    params: &DenoiserParams,
    arch: &DenoiserArch,
    batch: &[(Array2<f64>, Image)],
    sched: &DiffusionSchedule,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    let examples: Vec<TrainExample> = batch
        .iter()
        .enumerate()
        .map(|(i, (k0, y))| {
            let mut rng = rng_for(seed, "loss-example", i as u64);
            let t = rng.random_range(1..=sched.steps());
            let eps = Array2::from_shape_fn(k0.dim(), |_| normal(&mut rng));
            TrainExample {
                k0: k0.clone(),
                y: y.clone(),
                t,
                eps,
            }
        })
        .collect();
    loss_and_grad_fixed(params, arch, &examples, sched)
}

/// A trained network ready for sampling.
#[derive(Debug, Clone)]
pub struct Denoiser {
    pub arch: DenoiserArch,
    pub params: DenoiserParams,
}

impl Denoiser {
    pub fn new(arch: DenoiserArch, params: DenoiserParams) -> Result<Self> {
        arch.validate()?;
        check_params(&arch, &params)?;
        Ok(Self { arch, params })
    }
}

impl NoisePredictor for Denoiser {
    type Context = Features;

    fn kernel_size(&self) -> usize {
        self.arch.kernel_size
    }

    fn condition(&self, y: &Image) -> Result<Features> {
        image_features(&self.params, &self.arch, y)
    }

    fn predict(&self, ctx: &Features, k_t: &Array2<f64>, t: usize) -> Result<Array2<f64>> {
        forward_with_features(&self.params, &self.arch, ctx, k_t, t)
    }
}
