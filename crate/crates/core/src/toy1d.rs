//! One-dimensional blind deconvolution of a box pulse blurred by a Gaussian.
//!
//! The latent signal is a unit-height pulse `x_{a,w}` starting at `a` with
//! width `w`; the blur is a sampled Gaussian of standard deviation `sigma`.
//! Fractional pulse endpoints are rendered by partial-area assignment, which
//! keeps every loss surface here continuous in `(a, w, sigma)`.
//!
//! Two estimation strategies are provided: joint alternating minimization over
//! `(a, w, sigma)` and kernel-first estimation, which selects `sigma` from a
//! marginal over the image parameters before fitting `(a, w)`.

use crate::error::{domain, Result};
use crate::rng::{normal, normal_vec, rng_for};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Step of the exhaustive `(a, w)` integration/fit grid.
pub const GRID_STEP: f64 = 0.5;
/// Lower edge used by line searches on the open intervals `w > 0`, `sigma > 0`.
const OPEN_LOWER: f64 = 1e-2;
const GOLDEN_ITERS: usize = 64;
/// A coordinate moves only if it lowers the loss by more than rounding noise.
const MOVE_TOL: f64 = 1e-14;

/// Box constraints on the toy parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyBounds {
    pub a_max: f64,
    pub w_max: f64,
    pub sigma_max: f64,
}

impl Default for ToyBounds {
    fn default() -> Self {
        Self {
            a_max: 96.0,
            w_max: 32.0,
            sigma_max: 3.0,
        }
    }
}

impl ToyBounds {
    pub fn contains(&self, a: f64, w: f64, sigma: f64) -> bool {
        (0.0..=self.a_max).contains(&a)
            && w > 0.0
            && w <= self.w_max
            && sigma > 0.0
            && sigma <= self.sigma_max
    }

    /// Kernel radius shared by every sigma in the box, so the loss does not
    /// jump when the support would otherwise grow.
    pub fn kernel_radius(&self) -> usize {
        (4.0 * self.sigma_max).ceil() as usize
    }

    fn check(&self, a: f64, w: f64, sigma: f64) -> Result<()> {
        if self.contains(a, w, sigma) {
            Ok(())
        } else {
            Err(domain(format!(
                "parameters (a={a}, w={w}, sigma={sigma}) outside bounds {self:?}"
            )))
        }
    }

    /// The `(a, w)` grid used for marginalization and the inner fit.
    pub fn image_grid(&self) -> Vec<(f64, f64)> {
        let na = (self.a_max / GRID_STEP).round() as usize;
        let nw = (self.w_max / GRID_STEP).round() as usize;
        let mut grid = Vec::with_capacity((na + 1) * nw);
        for i in 0..=na {
            for j in 1..=nw {
                grid.push((i as f64 * GRID_STEP, j as f64 * GRID_STEP));
            }
        }
        grid
    }
}

/// An instance of the toy problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyProblem {
    pub n_samples: usize,
    pub a_true: f64,
    pub w_true: f64,
    pub sigma_true: f64,
    pub noise_std: f64,
    pub seed: u64,
    pub bounds: ToyBounds,
}

impl Default for ToyProblem {
    fn default() -> Self {
        Self {
            n_samples: 128,
            a_true: 64.0,
            w_true: 10.0,
            sigma_true: 1.5,
            noise_std: 0.01,
            seed: 0,
            bounds: ToyBounds::default(),
        }
    }
}

impl ToyProblem {
    pub fn validate(&self) -> Result<()> {
        let n = self.n_samples as f64;
        if !(self.w_true > 0.0 && self.a_true >= 0.0 && self.a_true <= n - self.w_true) {
            return Err(domain("pulse must satisfy 0 <= a <= n - w, w > 0"));
        }
        if self.sigma_true <= 0.0 || self.noise_std < 0.0 {
            return Err(domain("need sigma_true > 0 and noise_std >= 0"));
        }
        if self.bounds.a_max + self.bounds.w_max > n {
            return Err(domain("bounds allow pulses that leave the signal"));
        }
        Ok(())
    }

    pub fn truth(&self) -> [f64; 3] {
        [self.a_true, self.w_true, self.sigma_true]
    }

    /// The noisy observation `y = k_sigma * x_{a,w} + noise`.
    pub fn observe(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let radius = self.bounds.kernel_radius().max((4.0 * self.sigma_true).ceil() as usize);
        let x = synth_pulse(self.a_true, self.w_true, self.n_samples)?;
        let k = gauss_kernel_1d(self.sigma_true, radius)?;
        let mut y = convolve_same(&x, &k);
        let mut rng = rng_for(self.seed, "toy1d-noise", 0);
        for v in y.iter_mut() {
            *v += self.noise_std * normal(&mut rng);
        }
        Ok(y)
    }
}

/// Unit-height pulse on `[a, a + w)` sampled by partial area.
pub fn synth_pulse(a: f64, w: f64, n: usize) -> Result<Vec<f64>> {
    if !(a >= 0.0 && w > 0.0 && a + w <= n as f64) {
        return Err(domain(format!("pulse (a={a}, w={w}) does not fit in {n} samples")));
    }
    let mut x = vec![0.0; n];
    let (lo, hi) = pulse_span(a, w);
    for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
        *v = overlap(i, a, w);
    }
    Ok(x)
}

fn overlap(i: usize, a: f64, w: f64) -> f64 {
    let (s, e) = (i as f64, i as f64 + 1.0);
    (e.min(a + w) - s.max(a)).max(0.0)
}

fn pulse_span(a: f64, w: f64) -> (usize, usize) {
    (a.floor() as usize, (a + w).ceil() as usize)
}

/// Sampled Gaussian of length `2·radius + 1`, renormalized to unit sum.
pub fn gauss_kernel_1d(sigma: f64, radius: usize) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(domain(format!("sigma must be positive, got {sigma}")));
    }
    if (radius as f64) < (4.0 * sigma).ceil() {
        return Err(domain(format!("radius {radius} < ceil(4 sigma) for sigma {sigma}")));
    }
    let r = radius as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|j| (-((j * j) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    Ok(k)
}

/// Linear convolution cropped to the input length (zero outside the signal).
pub fn convolve_same(x: &[f64], k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let n = x.len() as isize;
    (0..n)
        .map(|m| {
            let mut acc = 0.0;
            for (q, &kq) in k.iter().enumerate() {
                let i = m - (q as isize - r);
                if (0..n).contains(&i) {
                    acc += kq * x[i as usize];
                }
            }
            acc
        })
        .collect()
}

/// Renders blurred pulses for one fixed sigma in time proportional to the
/// pulse support rather than the signal length.
struct BlurredPulse {
    kernel: Vec<f64>,
    /// `prefix[j] = kernel[0] + … + kernel[j-1]`.
    prefix: Vec<f64>,
    radius: isize,
}

impl BlurredPulse {
    fn new(sigma: f64, radius: usize) -> Result<Self> {
        let kernel = gauss_kernel_1d(sigma, radius)?;
        let mut prefix = Vec::with_capacity(kernel.len() + 1);
        prefix.push(0.0);
        for &v in &kernel {
            prefix.push(prefix.last().unwrap() + v);
        }
        Ok(Self {
            kernel,
            prefix,
            radius: radius as isize,
        })
    }

    fn tap(&self, offset: isize) -> f64 {
        let q = offset + self.radius;
        if q < 0 || q as usize >= self.kernel.len() {
            0.0
        } else {
            self.kernel[q as usize]
        }
    }

    /// Sum of taps with offsets in `[from, to]`.
    fn tap_sum(&self, from: isize, to: isize) -> f64 {
        let len = self.kernel.len() as isize;
        let lo = (from + self.radius).clamp(0, len);
        let hi = (to + self.radius + 1).clamp(0, len);
        if hi <= lo {
            0.0
        } else {
            self.prefix[hi as usize] - self.prefix[lo as usize]
        }
    }

    /// `‖y − k * x_{a,w}‖²` given `‖y‖²`.
    fn loss(&self, a: f64, w: f64, y: &[f64], y_sq: f64) -> f64 {
        let n = y.len() as isize;
        let (lo, hi) = pulse_span(a, w);
        let (lo, hi) = (lo as isize, hi as isize);
        // Samples fully covered by the pulse, value exactly 1.
        let full_lo = a.ceil() as isize;
        let full_hi = (a + w).floor() as isize;
        let mut partial = [(0isize, 0.0); 2];
        let mut n_partial = 0;
        for i in [lo, hi - 1] {
            if (i < full_lo || i >= full_hi) && (n_partial == 0 || partial[0].0 != i) {
                partial[n_partial] = (i, overlap(i as usize, a, w));
                n_partial += 1;
            }
        }
        let mut acc = y_sq;
        let m_lo = (lo - self.radius).max(0);
        let m_hi = (hi + self.radius).min(n);
        for m in m_lo..m_hi {
            let mut b = if full_hi > full_lo {
                self.tap_sum(m - (full_hi - 1), m - full_lo)
            } else {
                0.0
            };
            for &(i, v) in &partial[..n_partial] {
                b += v * self.tap(m - i);
            }
            let ym = y[m as usize];
            acc += b * b - 2.0 * ym * b;
        }
        acc.max(0.0)
    }
}

fn sum_sq(y: &[f64]) -> f64 {
    y.iter().map(|v| v * v).sum()
}

/// `‖y − x_{a,w} * k_sigma‖²`.
pub fn joint_loss(bounds: &ToyBounds, a: f64, w: f64, sigma: f64, y: &[f64]) -> Result<f64> {
    bounds.check(a, w, sigma)?;
    if a + w > y.len() as f64 {
        return Err(domain("pulse leaves the signal"));
    }
    let bp = BlurredPulse::new(sigma, bounds.kernel_radius())?;
    Ok(bp.loss(a, w, y, sum_sq(y)))
}

/// Outcome of one alternating-minimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct AltMinResult {
    pub a: f64,
    pub w: f64,
    pub sigma: f64,
    pub final_loss: f64,
    /// Loss after each iteration, starting with the loss at the initial point.
    pub trajectory: Vec<f64>,
}

fn golden_section(mut lo: f64, mut hi: f64, f: &impl Fn(f64) -> f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_ITERS {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Local line search along one coordinate: probe `x ± step`, expand a
/// downhill bracket by the golden ratio (clipped to `[lo, hi]`), then run a
/// golden-section search inside it. Returns the best point seen.
fn line_search(x: f64, fx: f64, step: f64, lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    const GROW: f64 = 1.618_033_988_749_895;
    let (xp, xm) = ((x + step).min(hi), (x - step).max(lo));
    let (fp, fm) = (f(xp), f(xm));
    let (bracket, best) = if fp >= fx && fm >= fx {
        ((xm, xp), (x, fx))
    } else {
        let dir = if fp < fm { 1.0 } else { -1.0 };
        let (mut a, mut b, mut fb) = (x, if dir > 0.0 { xp } else { xm }, fp.min(fm));
        loop {
            let c = (b + dir * (b - a).abs() * GROW).clamp(lo, hi);
            let fc = if c == b { fb } else { f(c) };
            if fc >= fb || c == b {
                break ((a.min(c), a.max(c)), (b, fb));
            }
            (a, b, fb) = (b, c, fc);
        }
    };
    let (c, fc) = golden_section(bracket.0, bracket.1, &f);
    if fc < best.1 {
        (c, fc)
    } else {
        best
    }
}

/// Cyclic coordinate descent on the joint loss: per iteration a local line
/// search over `a`, then `w` (the image block), then `sigma` (the kernel),
/// each within its box. A coordinate move is kept only if it lowers the loss,
/// so the trajectory is monotone.
pub fn alt_min(bounds: &ToyBounds, y: &[f64], init: [f64; 3], max_iters: usize) -> Result<AltMinResult> {
    let [mut a, mut w, mut sigma] = init;
    bounds.check(a, w, sigma)?;
    let y_sq = sum_sq(y);
    let radius = bounds.kernel_radius();
    let loss_at = |a: f64, w: f64, s: f64| -> f64 {
        BlurredPulse::new(s, radius)
            .map(|bp| bp.loss(a, w, y, y_sq))
            .unwrap_or(f64::INFINITY)
    };
    let mut loss = loss_at(a, w, sigma);
    let mut trajectory = vec![loss];
    for _ in 0..max_iters {
        let previous = loss;

        let bp = BlurredPulse::new(sigma, radius)?;
        let (ca, la) = line_search(a, loss, 1.0, 0.0, bounds.a_max, |v| bp.loss(v, w, y, y_sq));
        if la < loss - MOVE_TOL {
            a = ca;
            loss = la;
        }
        let (cw, lw) = line_search(w, loss, 0.5, OPEN_LOWER, bounds.w_max, |v| bp.loss(a, v, y, y_sq));
        if lw < loss - MOVE_TOL {
            w = cw;
            loss = lw;
        }
        let (cs, ls) = line_search(sigma, loss, 0.1, OPEN_LOWER, bounds.sigma_max, |v| loss_at(a, w, v));
        if ls < loss - MOVE_TOL {
            sigma = cs;
            loss = ls;
        }

        trajectory.push(loss);
        if previous - loss < 1e-10 {
            break;
        }
    }
    Ok(AltMinResult {
        a,
        w,
        sigma,
        final_loss: loss,
        trajectory,
    })
}

/// How the Gaussian likelihood exponent is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    /// `2·noise_std²` everywhere (the Gaussian likelihood).
    #[default]
    Gaussian,
    /// Alternative scaling: `2β` for the grid marginal and `2β²` for the
    /// Laplace marginal, with `β = noise_std²`.
    Literal,
}

/// Options for the sigma marginals.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarginalOptions {
    pub denominator: Denominator,
    /// Select sigma by arg-min of the marginal instead of arg-max.
    pub select_argmin: bool,
}

fn check_sigma_grid(bounds: &ToyBounds, sigma_grid: &[f64]) -> Result<()> {
    if sigma_grid.is_empty() {
        return Err(domain("empty sigma grid"));
    }
    if let Some(s) = sigma_grid.iter().find(|&&s| !(s > 0.0 && s <= bounds.sigma_max)) {
        return Err(domain(format!("sigma grid value {s} outside (0, sigma_max]")));
    }
    Ok(())
}

fn grid_losses(bounds: &ToyBounds, grid: &[(f64, f64)], y: &[f64], sigma: f64) -> Result<Vec<f64>> {
    let bp = BlurredPulse::new(sigma, bounds.kernel_radius())?;
    let y_sq = sum_sq(y);
    Ok(grid.iter().map(|&(a, w)| bp.loss(a, w, y, y_sq)).collect())
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn noise_var(noise_std: f64) -> Result<f64> {
    if !(noise_std > 0.0) {
        return Err(domain("marginals need noise_std > 0"));
    }
    Ok(noise_std * noise_std)
}

/// Brute-force log marginal `ln Σ_{a,w} exp(−‖y − x_{a,w} * k_σ‖² / d)` for each
/// sigma, summed over the `(a, w)` grid with log-sum-exp. Both denominator
/// forms agree here (`d = 2·noise_std²`).
pub fn marginal_sigma_grid(
    bounds: &ToyBounds,
    y: &[f64],
    sigma_grid: &[f64],
    noise_std: f64,
) -> Result<Vec<f64>> {
    check_sigma_grid(bounds, sigma_grid)?;
    let beta = noise_var(noise_std)?;
    let denom = 2.0 * beta;
    let grid = bounds.image_grid();
    sigma_grid
        .par_iter()
        .map(|&s| {
            let losses = grid_losses(bounds, &grid, y, s)?;
            Ok(log_sum_exp(losses.iter().map(|l| -l / denom)))
        })
        .collect()
}

/// Inner non-blind fit: the `(a, w)` grid point minimizing the loss at `sigma`.
pub fn inner_fit(bounds: &ToyBounds, y: &[f64], sigma: f64) -> Result<(f64, f64, f64)> {
    let grid = bounds.image_grid();
    let losses = grid_losses(bounds, &grid, y, sigma)?;
    let (idx, &loss) = losses
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("grid is non-empty");
    Ok((grid[idx].0, grid[idx].1, loss))
}

/// Laplace-approximated log marginal: the log likelihood at the inner mode
/// `(â(σ), ŵ(σ))` for each sigma; normalizers are dropped as constants.
pub fn marginal_sigma_laplace(
    bounds: &ToyBounds,
    y: &[f64],
    sigma_grid: &[f64],
    noise_std: f64,
    opts: MarginalOptions,
) -> Result<Vec<f64>> {
    check_sigma_grid(bounds, sigma_grid)?;
    let beta = noise_var(noise_std)?;
    let denom = match opts.denominator {
        Denominator::Gaussian => 2.0 * beta,
        Denominator::Literal => 2.0 * beta * beta,
    };
    sigma_grid
        .par_iter()
        .map(|&s| inner_fit(bounds, y, s).map(|(_, _, loss)| -loss / denom))
        .collect()
}

/// Index chosen from a marginal curve: arg-max, or arg-min when the
/// arg-min reading is requested.
pub fn select_index(values: &[f64], select_argmin: bool) -> usize {
    let it = values.iter().enumerate();
    let pick = if select_argmin {
        it.min_by(|a, b| a.1.total_cmp(b.1))
    } else {
        it.max_by(|a, b| a.1.total_cmp(b.1))
    };
    pick.map(|(i, _)| i).unwrap_or(0)
}

/// Number of strict local maxima of a sampled curve (endpoints count when
/// they exceed their single neighbor).
pub fn count_local_maxima(values: &[f64]) -> usize {
    let n = values.len();
    (0..n)
        .filter(|&i| {
            let left = i == 0 || values[i] > values[i - 1];
            let right = i + 1 == n || values[i] > values[i + 1];
            n > 1 && left && right
        })
        .count()
}

/// `σ ∈ {step, 2·step, …, max}`.
pub fn sigma_grid(step: f64, max: f64) -> Vec<f64> {
    let n = (max / step).round() as usize;
    (1..=n).map(|i| i as f64 * step).collect()
}

/// Kernel-first estimate `(sigma, a, w)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelFirstEstimate {
    pub sigma: f64,
    pub a: f64,
    pub w: f64,
}

/// Selects sigma from the Laplace marginal, then fits `(a, w)` at that sigma.
pub fn kernel_first_estimate(
    bounds: &ToyBounds,
    y: &[f64],
    sigma_grid: &[f64],
    noise_std: f64,
    opts: MarginalOptions,
) -> Result<KernelFirstEstimate> {
    let marginal = marginal_sigma_laplace(bounds, y, sigma_grid, noise_std, opts)?;
    let sigma = sigma_grid[select_index(&marginal, opts.select_argmin)];
    let (a, w, _) = inner_fit(bounds, y, sigma)?;
    Ok(KernelFirstEstimate { sigma, a, w })
}

/// One restart of the multi-start alternating-minimization experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Restart {
    pub init: [f64; 3],
    pub result: AltMinResult,
}

/// Uniform random initial point inside the box.
pub fn random_init(bounds: &ToyBounds, seed: u64, index: u64) -> [f64; 3] {
    let mut rng = rng_for(seed, "toy1d-altmin-init", index);
    let a = rng.random::<f64>() * bounds.a_max;
    let w = (1.0 - rng.random::<f64>()) * bounds.w_max;
    let s = (1.0 - rng.random::<f64>()) * bounds.sigma_max;
    [a, w, s.max(OPEN_LOWER)]
}

/// Runs `restarts` alternating minimizations from independent uniform inits.
/// Each restart owns its stream, so results do not depend on thread count.
pub fn multi_start_alt_min(
    bounds: &ToyBounds,
    y: &[f64],
    restarts: usize,
    max_iters: usize,
    seed: u64,
) -> Result<Vec<Restart>> {
    (0..restarts)
        .into_par_iter()
        .map(|i| {
            let init = random_init(bounds, seed, i as u64);
            alt_min(bounds, y, init, max_iters).map(|result| Restart { init, result })
        })
        .collect()
}

/// Joint loss sampled on a 2D slice through the truth along two random,
/// scaled, orthogonalized directions.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySurfaceGrid {
    pub axis1_values: Vec<f64>,
    pub axis2_values: Vec<f64>,
    /// `loss_values[i][j]` at `truth + axis1[i]·direction1 + axis2[j]·direction2`;
    /// `NaN` marks points outside the box.
    pub loss_values: ndarray::Array2<f64>,
    pub direction1: [f64; 3],
    pub direction2: [f64; 3],
    pub center: [f64; 3],
}

impl ToySurfaceGrid {
    pub fn point(&self, i: usize, j: usize) -> [f64; 3] {
        let (s, t) = (self.axis1_values[i], self.axis2_values[j]);
        std::array::from_fn(|q| self.center[q] + s * self.direction1[q] + t * self.direction2[q])
    }
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Scaled random directions in `(a, w, sigma)` with the second made orthogonal
/// to the first.
pub fn projection_directions(seed: u64) -> ([f64; 3], [f64; 3]) {
    let mut rng = rng_for(seed, "toy1d-projection", 0);
    let scales = [64.0, 32.0, 1.0];
    let z1 = normal_vec(&mut rng, 3);
    let z2 = normal_vec(&mut rng, 3);
    let t1: [f64; 3] = std::array::from_fn(|q| scales[q] * z1[q]);
    let mut t2: [f64; 3] = std::array::from_fn(|q| scales[q] * z2[q]);
    let c = dot3(&t2, &t1) / dot3(&t1, &t1);
    for q in 0..3 {
        t2[q] -= c * t1[q];
    }
    (t1, t2)
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

pub fn projected_surface(
    bounds: &ToyBounds,
    y: &[f64],
    center: [f64; 3],
    seed: u64,
    half_extent: f64,
    resolution: usize,
) -> Result<ToySurfaceGrid> {
    if resolution < 2 {
        return Err(domain("resolution must be at least 2"));
    }
    let (direction1, direction2) = projection_directions(seed);
    let axis = linspace(-half_extent, half_extent, resolution);
    let mut grid = ToySurfaceGrid {
        axis1_values: axis.clone(),
        axis2_values: axis,
        loss_values: ndarray::Array2::from_elem((resolution, resolution), f64::NAN),
        direction1,
        direction2,
        center,
    };
    let rows: Vec<Vec<f64>> = (0..resolution)
        .into_par_iter()
        .map(|i| {
            (0..resolution)
                .map(|j| {
                    let [a, w, s] = grid.point(i, j);
                    joint_loss(bounds, a, w, s, y).unwrap_or(f64::NAN)
                })
                .collect()
        })
        .collect();
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            grid.loss_values[[i, j]] = v;
        }
    }
    Ok(grid)
}
