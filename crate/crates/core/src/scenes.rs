//! Procedural grayscale scenes used as the sharp-image corpus: a smooth
//! background with overlapping rotated rectangles, ellipses and bars, giving
//! edges at many orientations.

use crate::error::Result;
use crate::image::Image;
use crate::rng::{rng_for, Rng};
use ndarray::Array2;
use rand::Rng as _;
use rayon::prelude::*;

const SUBSAMPLES: usize = 3;

enum Shape {
    Rect { cx: f64, cy: f64, hw: f64, hh: f64, cos: f64, sin: f64 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64, cos: f64, sin: f64 },
    Bar { x0: f64, y0: f64, nx: f64, ny: f64, half: f64 },
}

impl Shape {
    fn random(rng: &mut Rng, h: f64, w: f64) -> Self {
        let scale = h.min(w);
        let angle = rng.random::<f64>() * std::f64::consts::PI;
        let (sin, cos) = angle.sin_cos();
        let cx = rng.random::<f64>() * w;
        let cy = rng.random::<f64>() * h;
        match rng.random_range(0..3) {
            0 => Shape::Rect {
                cx,
                cy,
                hw: scale * (0.08 + 0.3 * rng.random::<f64>()),
                hh: scale * (0.08 + 0.3 * rng.random::<f64>()),
                cos,
                sin,
            },
            1 => Shape::Ellipse {
                cx,
                cy,
                rx: scale * (0.08 + 0.25 * rng.random::<f64>()),
                ry: scale * (0.08 + 0.25 * rng.random::<f64>()),
                cos,
                sin,
            },
            _ => Shape::Bar {
                x0: cx,
                y0: cy,
                nx: cos,
                ny: sin,
                half: scale * (0.02 + 0.06 * rng.random::<f64>()),
            },
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rect { cx, cy, hw, hh, cos, sin } => {
                let (dx, dy) = (x - cx, y - cy);
                (dx * cos + dy * sin).abs() <= hw && (-dx * sin + dy * cos).abs() <= hh
            }
            Shape::Ellipse { cx, cy, rx, ry, cos, sin } => {
                let (dx, dy) = (x - cx, y - cy);
                let u = (dx * cos + dy * sin) / rx;
                let v = (-dx * sin + dy * cos) / ry;
                u * u + v * v <= 1.0
            }
            Shape::Bar { x0, y0, nx, ny, half } => ((x - x0) * nx + (y - y0) * ny).abs() <= half,
        }
    }
}

/// One random scene in `[0, 1]`, anti-aliased by 3×3 supersampling.
pub fn synth_scene(height: usize, width: usize, seed: u64) -> Result<Image> {
    let mut rng = rng_for(seed, "scene", 0);
    let (h, w) = (height as f64, width as f64);
    let base = 0.2 + 0.6 * rng.random::<f64>();
    let gx = (rng.random::<f64>() - 0.5) * 0.4 / w;
    let gy = (rng.random::<f64>() - 0.5) * 0.4 / h;
    let n_shapes = rng.random_range(4..10);
    let shapes: Vec<(Shape, f64)> = (0..n_shapes)
        .map(|_| (Shape::random(&mut rng, h, w), rng.random::<f64>()))
        .collect();
    let pixels = Array2::from_shape_fn((height, width), |(r, c)| {
        let mut acc = 0.0;
        for sy in 0..SUBSAMPLES {
            for sx in 0..SUBSAMPLES {
                let y = r as f64 + (sy as f64 + 0.5) / SUBSAMPLES as f64;
                let x = c as f64 + (sx as f64 + 0.5) / SUBSAMPLES as f64;
                let mut v = base + gx * x + gy * y;
                for (shape, value) in &shapes {
                    if shape.contains(x, y) {
                        v = *value;
                    }
                }
                acc += v;
            }
        }
        (acc / (SUBSAMPLES * SUBSAMPLES) as f64).clamp(0.0, 1.0)
    });
    Image::new(pixels)
}

/// `count` scenes; scene `i` is seeded from `(seed, i)`.
pub fn synth_corpus(count: usize, height: usize, width: usize, seed: u64) -> Result<Vec<Image>> {
    (0..count)
        .into_par_iter()
        .map(|i| synth_scene(height, width, crate::rng::derive_seed(seed, "corpus", i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_in_range_and_deterministic() {
        let a = synth_scene(32, 40, 3).unwrap();
        assert_eq!(a.dim(), (32, 40));
        assert!(a.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a, synth_scene(32, 40, 3).unwrap());
        assert_ne!(a, synth_scene(32, 40, 4).unwrap());
    }

    #[test]
    fn scenes_have_edges() {
        let a = synth_scene(32, 32, 8).unwrap();
        let p = a.pixels();
        let mut grad = 0.0;
        for r in 0..32 {
            for c in 1..32 {
                grad += (p[[r, c]] - p[[r, c - 1]]).abs();
            }
        }
        assert!(grad > 1.0, "total variation {grad}");
    }
}
