//! Differentiable non-blind deconvolution.
//!
//! `F(y, k)` is the regularized Wiener (Tikhonov) solution
//! `x̂ = IFFT(conj(K)·Y / (|K|² + λ))` on an edge-replicate padded domain,
//! cropped back to the image. The reblurring loss `‖y − k * F(y, k)‖²` uses
//! symmetric-boundary convolution, and its gradient with respect to `k` is
//! obtained by reverse-mode differentiation through both the convolution and
//! the solver's spectral dependence on `k`.

use crate::blur::{convolve_array, convolve_array_direct, mirror, pad_edge, Boundary};
use crate::error::{domain, Result};
use crate::fft::{embed_centered, Fft2};
use ndarray::{s, Array2};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WienerConfig {
    /// Tikhonov weight, must be positive.
    pub lambda: f64,
    /// Edge-replicate pad width; `None` pads by the kernel size.
    pub pad_width: Option<usize>,
}

impl Default for WienerConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            pad_width: None,
        }
    }
}

impl WienerConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    fn pad_for(&self, ksize: usize) -> Result<usize> {
        let p = self.pad_width.unwrap_or(ksize);
        if p < ksize / 2 {
            return Err(domain(format!("pad width {p} < K/2 for K = {ksize}")));
        }
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(domain(format!("lambda must be positive, got {}", self.lambda)));
        }
        Ok(())
    }
}

fn check_shapes(y: &Array2<f64>, k: &Array2<f64>) -> Result<()> {
    let (kh, kw) = k.dim();
    if kh != kw || kh % 2 == 0 {
        return Err(domain(format!("kernel must be odd and square, got {kh}x{kw}")));
    }
    if kh > y.nrows().min(y.ncols()) {
        return Err(domain("kernel larger than image"));
    }
    Ok(())
}

/// Intermediate values of one solve, kept for the backward pass.
struct Solve {
    plan: Fft2,
    pad: usize,
    y_spec: Vec<Complex64>,
    k_spec: Vec<Complex64>,
    /// `|K|² + λ`.
    denom: Vec<f64>,
    x: Array2<f64>,
}

fn solve(y: &Array2<f64>, k: &Array2<f64>, cfg: &WienerConfig) -> Result<Solve> {
    cfg.check()?;
    check_shapes(y, k)?;
    let pad = cfg.pad_for(k.nrows())?;
    let (h, w) = y.dim();
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let plan = Fft2::new(ph, pw);
    let y_spec = plan.forward_real(&pad_edge(y, pad));
    let k_spec = plan.forward_real(&embed_centered(k, ph, pw));
    let denom: Vec<f64> = k_spec.iter().map(|v| v.norm_sqr() + cfg.lambda).collect();
    let x_spec: Vec<Complex64> = k_spec
        .iter()
        .zip(&y_spec)
        .zip(&denom)
        .map(|((kv, yv), d)| kv.conj() * yv / d)
        .collect();
    let x = plan
        .inverse_real(x_spec)
        .slice(s![pad..pad + h, pad..pad + w])
        .to_owned();
    Ok(Solve {
        plan,
        pad,
        y_spec,
        k_spec,
        denom,
        x,
    })
}

/// `F(y, k)`: the Wiener estimate of the sharp image.
pub fn wiener_solve(y: &Array2<f64>, k: &Array2<f64>, cfg: &WienerConfig) -> Result<Array2<f64>> {
    Ok(solve(y, k, cfg)?.x)
}

fn sq_norm_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// `‖y − k * F(y, k)‖²` with symmetric-boundary convolution. `k` may be any
/// real odd square array.
pub fn reblur_loss(y: &Array2<f64>, k: &Array2<f64>, cfg: &WienerConfig) -> Result<f64> {
    let x = wiener_solve(y, k, cfg)?;
    Ok(sq_norm_diff(y, &convolve_array(&x, k, Boundary::Symmetric)?))
}

/// Same loss, reblurring by the direct spatial sum instead of the FFT.
pub fn reblur_loss_direct(y: &Array2<f64>, k: &Array2<f64>, cfg: &WienerConfig) -> Result<f64> {
    let x = wiener_solve(y, k, cfg)?;
    Ok(sq_norm_diff(y, &convolve_array_direct(&x, k, Boundary::Symmetric)?))
}

/// Loss value and its gradient with respect to the kernel.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Array2<f64>,
    /// The solver output `F(y, k)` at which the loss was evaluated.
    pub estimate: Array2<f64>,
}

/// Gradient of the symmetric-boundary reblur with respect to both of its
/// arguments: returns `(∂L/∂x, ∂L/∂k)` for `L = ‖y − k * x‖²`.
fn reblur_backward(y: &Array2<f64>, k: &Array2<f64>, x: &Array2<f64>) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let resid = y - &convolve_array(x, k, Boundary::Symmetric)?;
    let loss = resid.iter().map(|v| v * v).sum();
    let (h, w) = x.dim();
    let ksize = k.nrows();
    let r = (ksize / 2) as isize;
    let mut gx = Array2::zeros((h, w));
    let mut gk = Array2::zeros((ksize, ksize));
    for ((i, j), &rv) in resid.indexed_iter() {
        if rv == 0.0 {
            continue;
        }
        let g = -2.0 * rv;
        for u in 0..ksize {
            let si = mirror(i as isize - (u as isize - r), h);
            for v in 0..ksize {
                let sj = mirror(j as isize - (v as isize - r), w);
                gx[[si, sj]] += g * k[[u, v]];
                gk[[u, v]] += g * x[[si, sj]];
            }
        }
    }
    Ok((loss, gx, gk))
}

/// Reblur loss and its exact gradient with respect to `k`. With
/// `through_solver = false` the solver output is treated as a constant and
/// only the reblurring convolution is differentiated.
pub fn reblur_loss_grad_with(
    y: &Array2<f64>,
    k: &Array2<f64>,
    cfg: &WienerConfig,
    through_solver: bool,
) -> Result<LossGrad> {
    let sol = solve(y, k, cfg)?;
    let (loss, gx, mut grad) = reblur_backward(y, k, &sol.x)?;
    if through_solver {
        let (ph, pw) = sol.plan.shape();
        let n = (ph * pw) as f64;
        let mut gpad = Array2::zeros((ph, pw));
        let (h, w) = y.dim();
        gpad.slice_mut(s![sol.pad..sol.pad + h, sol.pad..sol.pad + w]).assign(&gx);
        let g_spec = sol.plan.forward_real(&gpad);
        // x_pad = IFFT(H·Y) with H = conj(K)/(|K|²+λ); pull back through H to K.
        let mut b: Vec<Complex64> = g_spec
            .iter()
            .zip(&sol.y_spec)
            .zip(sol.k_spec.iter().zip(&sol.denom))
            .map(|((gv, yv), (kv, d))| {
                let a = gv.conj() * yv / n;
                let d2 = d * d;
                -a * kv.conj() * kv.conj() / d2 + a.conj() * (cfg.lambda / d2)
            })
            .collect();
        sol.plan.forward(&mut b);
        let c = k.nrows() / 2;
        for ((u, v), g) in grad.indexed_iter_mut() {
            let rr = (u + ph - c) % ph;
            let cc = (v + pw - c) % pw;
            *g += b[rr * pw + cc].re;
        }
    }
    Ok(LossGrad {
        loss,
        grad,
        estimate: sol.x,
    })
}

/// `∇_k ‖y − k * F(y, k)‖²`, differentiating through the solver.
pub fn reblur_loss_grad(y: &Array2<f64>, k: &Array2<f64>, cfg: &WienerConfig) -> Result<Array2<f64>> {
    Ok(reblur_loss_grad_with(y, k, cfg, true)?.grad)
}
