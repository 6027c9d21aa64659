//! Grayscale images and blur kernels, plus 8-bit PGM/PNG codecs.

use crate::error::{domain, io_err, Error, Result};
use ndarray::Array2;
use std::io::Write;
use std::path::Path;

pub const MIN_IMAGE_DIM: usize = 8;
const KERNEL_SUM_TOL: f64 = 1e-9;

/// A grayscale image. Pipeline inputs and outputs live in `[0, 1]`;
/// intermediate values are unrestricted.
#[derive(Debug, Clone, PartialEq)]
pub struct Image(Array2<f64>);

impl Image {
    pub fn new(pixels: Array2<f64>) -> Result<Self> {
        let (h, w) = pixels.dim();
        if h < MIN_IMAGE_DIM || w < MIN_IMAGE_DIM {
            return Err(domain(format!(
                "image {h}x{w} is smaller than {MIN_IMAGE_DIM}x{MIN_IMAGE_DIM}"
            )));
        }
        Ok(Self(pixels))
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(Array2::from_elem((height, width), value))
    }

    pub fn pixels(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_pixels(self) -> Array2<f64> {
        self.0
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn height(&self) -> usize {
        self.0.nrows()
    }

    pub fn width(&self) -> usize {
        self.0.ncols()
    }

    /// Explicit clip to `[0, 1]`.
    pub fn clipped(&self) -> Image {
        Image(self.0.mapv(|v| v.clamp(0.0, 1.0)))
    }

    pub fn flipped_horizontal(&self) -> Image {
        let (h, w) = self.dim();
        Image(Array2::from_shape_fn((h, w), |(r, c)| self.0[[r, w - 1 - c]]))
    }

    /// Copies the `height × width` window whose top-left corner is `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height() || left + width > self.width() {
            return Err(domain("crop window exceeds image"));
        }
        Image::new(Array2::from_shape_fn((height, width), |(r, c)| {
            self.0[[top + r, left + c]]
        }))
    }
}

/// A normalized, nonnegative blur kernel of odd size.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel(Array2<f64>);

impl Kernel {
    /// Validates the kernel invariants without modifying the weights.
    pub fn new(weights: Array2<f64>) -> Result<Self> {
        let (h, w) = weights.dim();
        if h != w || h % 2 == 0 {
            return Err(domain(format!("kernel must be odd and square, got {h}x{w}")));
        }
        if let Some(bad) = weights.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(domain(format!("kernel weight {bad} is negative or non-finite")));
        }
        let sum = weights.sum();
        if (sum - 1.0).abs() > KERNEL_SUM_TOL {
            return Err(domain(format!("kernel sums to {sum}, expected 1")));
        }
        Ok(Self(weights))
    }

    /// Projects an arbitrary array onto the feasible set: clip negatives,
    /// renormalize to unit sum.
    pub fn project(weights: &Array2<f64>) -> Result<Self> {
        let clipped = weights.mapv(|v| if v.is_finite() && v > 0.0 { v } else { 0.0 });
        let sum = clipped.sum();
        if sum <= 0.0 {
            return Err(domain("kernel has no positive mass to normalize"));
        }
        Self::new(clipped / sum)
    }

    pub fn impulse(size: usize) -> Result<Self> {
        let mut w = Array2::zeros((size, size));
        w[[size / 2, size / 2]] = 1.0;
        Self::new(w)
    }

    pub fn size(&self) -> usize {
        self.0.nrows()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_weights(self) -> Array2<f64> {
        self.0
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn to_bytes(img: &Image) -> Vec<u8> {
    img.pixels().iter().map(|&v| quantize(v)).collect()
}

fn from_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Image> {
    Image::new(Array2::from_shape_fn((height, width), |(r, c)| {
        f64::from(bytes[r * width + c]) / 255.0
    }))
}

/// Writes a binary (P5) 8-bit PGM.
pub fn write_pgm(path: &Path, img: &Image) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(to_bytes(img));
    let mut f = std::fs::File::create(path).map_err(io_err(path.display().to_string()))?;
    f.write_all(&out).map_err(io_err(path.display().to_string()))
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    let data = std::fs::read(path).map_err(io_err(path.display().to_string()))?;
    parse_pgm(&data)
}

fn parse_pgm(data: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < data.len() && data[pos] == b'#' {
            while pos < data.len() && data[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format {
                offset: pos,
                reason: "truncated PGM header".into(),
            });
        }
        fields.push((start, String::from_utf8_lossy(&data[start..pos]).into_owned()));
    }
    if fields[0].1 != "P5" {
        return Err(Error::Format {
            offset: 0,
            reason: format!("expected P5 magic, found {:?}", fields[0].1),
        });
    }
    let mut nums = [0usize; 3];
    for (i, (off, s)) in fields[1..].iter().enumerate() {
        nums[i] = s.parse().map_err(|_| Error::Format {
            offset: *off,
            reason: format!("bad header field {s:?}"),
        })?;
    }
    let [width, height, maxval] = nums;
    if maxval != 255 {
        return Err(Error::Format {
            offset: fields[3].0,
            reason: format!("only 8-bit PGM supported, maxval {maxval}"),
        });
    }
    pos += 1;
    let need = width * height;
    if data.len() < pos + need {
        return Err(Error::Format {
            offset: data.len(),
            reason: format!("truncated pixel payload, expected {need} bytes"),
        });
    }
    from_bytes(height, width, &data[pos..pos + need])
}

pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, to_bytes(img))
        .expect("buffer length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn read_png(path: &Path) -> Result<Image> {
    let gray = image::open(path)?.to_luma8();
    from_bytes(gray.height() as usize, gray.width() as usize, gray.as_raw())
}

/// Reads a PGM or PNG, chosen by extension.
pub fn read_image(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("pgm") => read_pgm(path),
        _ => read_png(path),
    }
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("pgm") => write_pgm(path, img),
        _ => write_png(path, img),
    }
}
