//! Brute-force references shared by the integration and acceptance tests.
#![allow(dead_code)]

use kernel_diff::metrics::ssim_taps;
use kernel_diff::rng::Rng;
use ndarray::Array2;
use rand::Rng as _;

pub fn random_array(rng: &mut Rng, h: usize, w: usize) -> Array2<f64> {
    Array2::from_shape_fn((h, w), |_| rng.random::<f64>())
}

/// SSIM by evaluating every 11×11 window independently.
pub fn ssim_naive(x: &Array2<f64>, y: &Array2<f64>, peak: f64) -> f64 {
    let taps = ssim_taps();
    let n = taps.len();
    let (h, w) = x.dim();
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=h - n {
        for c in 0..=w - n {
            let (mut mx, mut my) = (0.0, 0.0);
            for u in 0..n {
                for v in 0..n {
                    let g = taps[u] * taps[v];
                    mx += g * x[[r + u, c + v]];
                    my += g * y[[r + u, c + v]];
                }
            }
            let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
            for u in 0..n {
                for v in 0..n {
                    let g = taps[u] * taps[v];
                    let dx = x[[r + u, c + v]] - mx;
                    let dy = y[[r + u, c + v]] - my;
                    sxx += g * dx * dx;
                    syy += g * dy * dy;
                    sxy += g * dx * dy;
                }
            }
            total += ((2.0 * mx * my + c1) * (2.0 * sxy + c2))
                / ((mx * mx + my * my + c1) * (sxx + syy + c2));
            count += 1;
        }
    }
    total / count as f64
}

/// MNC as an explicit maximum over all integer shifts.
pub fn mnc_naive(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let (h, w) = a.dim();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut best = f64::NEG_INFINITY;
    for di in -(h as isize - 1)..h as isize {
        for dj in -(w as isize - 1)..w as isize {
            let mut acc = 0.0;
            for i in 0..h as isize {
                for j in 0..w as isize {
                    let (ii, jj) = (i + di, j + dj);
                    if ii >= 0 && jj >= 0 && ii < h as isize && jj < w as isize {
                        acc += a[[ii as usize, jj as usize]] * b[[i as usize, j as usize]];
                    }
                }
            }
            best = best.max(acc);
        }
    }
    (best / (na * nb)).clamp(0.0, 1.0)
}

/// Largest absolute entry of `a − b`.
pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Central finite-difference gradient of `f` at `x`, coordinate by coordinate.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max |g − g_fd| / max |g_fd|`.
pub fn relative_error(g: &[f64], fd: &[f64]) -> f64 {
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = g.iter().zip(fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if scale == 0.0 {
        err
    } else {
        err / scale
    }
}
