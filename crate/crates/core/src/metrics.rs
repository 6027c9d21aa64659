//! Image and kernel quality measures: PSNR, single-scale SSIM and the
//! maximum of normalized cross-correlation (MNC) between kernels.

use crate::csv::{fmt_num, Table};
use crate::error::{domain, Error, Result};
use crate::fft::Fft2;
use crate::image::Image;
use ndarray::Array2;
use rustfft::num_complex::Complex64;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn same_shape(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape {
            expected: format!("{:?}", b.dim()),
            got: format!("{:?}", a.dim()),
        });
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB; `+inf` when the images are identical.
pub fn psnr(x: &Image, reference: &Image, peak: f64) -> Result<f64> {
    same_shape(x.pixels(), reference.pixels())?;
    let n = x.pixels().len() as f64;
    let mse = x
        .pixels()
        .iter()
        .zip(reference.pixels())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Normalized 1D Gaussian taps of the SSIM window.
pub fn ssim_taps() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let t: Vec<f64> = (-r..=r)
        .map(|j| (-((j * j) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = t.iter().sum();
    t.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering with the SSIM window.
fn filter_valid(a: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = a.dim();
    let k = taps.len();
    let rows: Array2<f64> = Array2::from_shape_fn((h, w - k + 1), |(r, c)| {
        taps.iter().enumerate().map(|(q, t)| t * a[[r, c + q]]).sum::<f64>()
    });
    Array2::from_shape_fn((h - k + 1, w - k + 1), |(r, c)| {
        taps.iter().enumerate().map(|(q, t)| t * rows[[r + q, c]]).sum()
    })
}

/// Local SSIM from window statistics.
pub(crate) fn ssim_from_stats(mx: f64, my: f64, sxx: f64, syy: f64, sxy: f64, peak: f64) -> f64 {
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
}

/// Mean single-scale SSIM over all valid 11×11 Gaussian-window positions.
pub fn ssim(x: &Image, reference: &Image, peak: f64) -> Result<f64> {
    let (a, b) = (x.pixels(), reference.pixels());
    same_shape(a, b)?;
    if a.nrows().min(a.ncols()) < SSIM_WINDOW {
        return Err(domain(format!("SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")));
    }
    let taps = ssim_taps();
    let mx = filter_valid(a, &taps);
    let my = filter_valid(b, &taps);
    let exx = filter_valid(&(a * a), &taps);
    let eyy = filter_valid(&(b * b), &taps);
    let exy = filter_valid(&(a * b), &taps);
    let mut total = 0.0;
    for (idx, &m1) in mx.indexed_iter() {
        let m2 = my[idx];
        total += ssim_from_stats(m1, m2, exx[idx] - m1 * m1, eyy[idx] - m2 * m2, exy[idx] - m1 * m2, peak);
    }
    Ok(total / mx.len() as f64)
}

/// Maximum over all 2D shifts of the normalized cross-correlation between
/// two equally sized kernels; shifted-out mass is dropped (zero fill).
/// Correlation orientation: `Σ k_est[p + d] · k_true[p]`.
pub fn mnc(k_est: &Array2<f64>, k_true: &Array2<f64>) -> Result<f64> {
    same_shape(k_est, k_true)?;
    let n1 = k_est.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n2 = k_true.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n1 == 0.0 || n2 == 0.0 {
        return Err(domain("MNC of a zero-norm kernel"));
    }
    let (h, w) = k_est.dim();
    let (mh, mw) = (2 * h - 1, 2 * w - 1);
    let plan = Fft2::new(mh, mw);
    let mut pa = Array2::zeros((mh, mw));
    pa.slice_mut(ndarray::s![..h, ..w]).assign(k_est);
    let mut pb = Array2::zeros((mh, mw));
    pb.slice_mut(ndarray::s![..h, ..w]).assign(k_true);
    let fa = plan.forward_real(&pa);
    let fb = plan.forward_real(&pb);
    let prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(a, b)| a * b.conj()).collect();
    let corr = plan.inverse_real(prod);
    let best = corr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok((best / (n1 * n2)).clamp(0.0, 1.0))
}

/// One evaluated image.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub psnr_db: f64,
    pub ssim: f64,
    /// Absent when no kernel pair was evaluated.
    pub mnc: Option<f64>,
    pub final_residual: Option<f64>,
}

/// Per-image rows plus their arithmetic means.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

/// Column header; `lpips` and `fid` are reserved for external tools.
pub const REPORT_HEADER: [&str; 7] = ["id", "psnr_db", "ssim", "mnc", "final_residual", "lpips", "fid"];

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

impl EvalReport {
    pub fn push(&mut self, row: EvalRow) {
        self.rows.push(row);
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.psnr_db))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.ssim))
    }

    pub fn mean_mnc(&self) -> Option<f64> {
        let vals: Vec<f64> = self.rows.iter().filter_map(|r| r.mnc).collect();
        (!vals.is_empty()).then(|| mean(vals.into_iter()))
    }

    pub fn mean_residual(&self) -> Option<f64> {
        let vals: Vec<f64> = self.rows.iter().filter_map(|r| r.final_residual).collect();
        (!vals.is_empty()).then(|| mean(vals.into_iter()))
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&REPORT_HEADER);
        for r in &self.rows {
            t.push_raw([
                r.id.clone(),
                fmt_num(r.psnr_db),
                fmt_num(r.ssim),
                opt_cell(r.mnc),
                opt_cell(r.final_residual),
                String::new(),
                String::new(),
            ]);
        }
        t.push_raw([
            "MEAN".to_string(),
            fmt_num(self.mean_psnr()),
            fmt_num(self.mean_ssim()),
            opt_cell(self.mean_mnc()),
            opt_cell(self.mean_residual()),
            String::new(),
            String::new(),
        ]);
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use rand::Rng as _;

    fn rand_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = rng_for(seed, "metrics", 0);
        Image::new(Array2::from_shape_fn((h, w), |_| rng.random::<f64>())).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let x = rand_image(16, 16, 1);
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), f64::INFINITY);
        let off = Image::new(x.pixels() + 0.1).unwrap();
        assert!((psnr(&off, &x, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&off, &x, 1.0).unwrap(), psnr(&x, &off, 1.0).unwrap());
        let y = rand_image(16, 17, 1);
        assert!(matches!(psnr(&x, &y, 1.0), Err(Error::Shape { .. })));
    }

    #[test]
    fn psnr_of_exact_mse() {
        // Alternating ±0.1 gives MSE 0.01 exactly up to rounding.
        let x = Image::constant(10, 10, 0.5).unwrap();
        let y = Image::new(Array2::from_shape_fn((10, 10), |(r, c)| {
            if (r + c) % 2 == 0 { 0.6 } else { 0.4 }
        }))
        .unwrap();
        assert!((psnr(&y, &x, 1.0).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let x = rand_image(24, 20, 2);
        assert_eq!(ssim(&x, &x, 1.0).unwrap(), 1.0);
        let checker = Image::new(Array2::from_shape_fn((24, 24), |(r, c)| {
            if (r / 3 + c / 3) % 2 == 0 { 1.0 } else { 0.0 }
        }))
        .unwrap();
        let inv = Image::new(checker.pixels().mapv(|v| 1.0 - v)).unwrap();
        assert!(ssim(&inv, &checker, 1.0).unwrap() < 0.5);
        let small = rand_image(10, 30, 3);
        assert!(ssim(&small, &small, 1.0).is_err());
    }

    fn shifted(k: &Array2<f64>, dy: isize, dx: isize) -> Array2<f64> {
        let (h, w) = k.dim();
        Array2::from_shape_fn((h, w), |(r, c)| {
            let (sr, sc) = (r as isize - dy, c as isize - dx);
            if sr >= 0 && sc >= 0 && (sr as usize) < h && (sc as usize) < w {
                k[[sr as usize, sc as usize]]
            } else {
                0.0
            }
        })
    }

    #[test]
    fn mnc_examples() {
        let mut k = Array2::zeros((9, 9));
        let mut rng = rng_for(4, "mnc", 0);
        for r in 3..6 {
            for c in 2..6 {
                k[[r, c]] = rng.random::<f64>();
            }
        }
        assert!((mnc(&k, &k).unwrap() - 1.0).abs() < 1e-9);
        assert!((mnc(&shifted(&k, 2, 1), &k).unwrap() - 1.0).abs() < 1e-9);
        assert!((mnc(&(&k * 7.0), &k).unwrap() - 1.0).abs() < 1e-9);
        assert!(mnc(&Array2::zeros((9, 9)), &k).is_err());
    }

    #[test]
    fn report_means_and_csv() {
        let mut rep = EvalReport::default();
        for (i, p) in [20.0, 22.0, 27.0].iter().enumerate() {
            rep.push(EvalRow {
                id: format!("img{i}"),
                psnr_db: *p,
                ssim: 0.5 + i as f64 * 0.1,
                mnc: Some(0.9),
                final_residual: None,
            });
        }
        assert!((rep.mean_psnr() - 23.0).abs() < 1e-12);
        assert!((rep.mean_ssim() - 0.6).abs() < 1e-12);
        let csv = rep.to_table();
        let text = csv.as_str();
        assert!(text.starts_with("id,psnr_db,ssim,mnc,final_residual,lpips,fid\n"));
        assert!(text.lines().last().unwrap().starts_with("MEAN,23,"));
        assert_eq!(csv.rows(), 4);
    }
}
