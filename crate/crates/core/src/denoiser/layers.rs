//! The fixed layer vocabulary with forward and backward passes.

/// A stack of `c` feature maps of size `h × w`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Maps {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Maps {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), c * h * w);
        Self { c, h, w, data }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn ch(&self, i: usize) -> &[f64] {
        let p = self.plane();
        &self.data[i * p..(i + 1) * p]
    }

    pub fn ch_mut(&mut self, i: usize) -> &mut [f64] {
        let p = self.plane();
        &mut self.data[i * p..(i + 1) * p]
    }

    /// Channel concatenation.
    pub fn concat(&self, other: &Maps) -> Maps {
        debug_assert_eq!((self.h, self.w), (other.h, other.w));
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Maps::from_vec(self.c + other.c, self.h, self.w, data)
    }

    /// Splits channels into `[..c]` and `[c..]`.
    pub fn split(self, c: usize) -> (Maps, Maps) {
        let p = self.plane();
        let (h, w, total) = (self.h, self.w, self.c);
        let mut data = self.data;
        let tail = data.split_off(c * p);
        (Maps::from_vec(c, h, w, data), Maps::from_vec(total - c, h, w, tail))
    }
}

/// Valid output range `[lo, hi)` along one axis for tap offset `d ∈ {0,1,2}`
/// with zero padding of one.
fn tap_range(d: usize, n: usize) -> (usize, usize) {
    (usize::from(d == 0), if d == 2 { n - 1 } else { n })
}

/// 3×3 convolution (cross-correlation) with zero padding; `w` is laid out as
/// `[out][in][3][3]`.
pub(crate) fn conv3x3(input: &Maps, w: &[f64], b: &[f64], cout: usize) -> Maps {
    let (cin, h, wd) = (input.c, input.h, input.w);
    debug_assert_eq!(w.len(), cout * cin * 9);
    let mut out = Maps::zeros(cout, h, wd);
    for o in 0..cout {
        let och = out.ch_mut(o);
        och.fill(b[o]);
        for i in 0..cin {
            let ich = input.ch(i);
            for dy in 0..3 {
                let (y0, y1) = tap_range(dy, h);
                for dx in 0..3 {
                    let (x0, x1) = tap_range(dx, wd);
                    let wv = w[((o * cin + i) * 3 + dy) * 3 + dx];
                    for y in y0..y1 {
                        let iy = y + dy - 1;
                        let orow = &mut och[y * wd + x0..y * wd + x1];
                        let irow = &ich[iy * wd + x0 + dx - 1..iy * wd + x1 + dx - 1];
                        for (ov, iv) in orow.iter_mut().zip(irow) {
                            *ov += wv * iv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients of [`conv3x3`] and, when requested,
/// returns the input gradient.
pub(crate) fn conv3x3_backward(
    input: &Maps,
    w: &[f64],
    gout: &Maps,
    gw: &mut [f64],
    gb: &mut [f64],
    want_input: bool,
) -> Option<Maps> {
    let (cin, h, wd) = (input.c, input.h, input.w);
    let cout = gout.c;
    let mut gin = want_input.then(|| Maps::zeros(cin, h, wd));
    for o in 0..cout {
        let gch = gout.ch(o);
        gb[o] += gch.iter().sum::<f64>();
        for i in 0..cin {
            let ich = input.ch(i);
            for dy in 0..3 {
                let (y0, y1) = tap_range(dy, h);
                for dx in 0..3 {
                    let (x0, x1) = tap_range(dx, wd);
                    let idx = ((o * cin + i) * 3 + dy) * 3 + dx;
                    let wv = w[idx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let iy = y + dy - 1;
                        let grow = &gch[y * wd + x0..y * wd + x1];
                        let irow = &ich[iy * wd + x0 + dx - 1..iy * wd + x1 + dx - 1];
                        acc += grow.iter().zip(irow).map(|(g, v)| g * v).sum::<f64>();
                    }
                    gw[idx] += acc;
                    if let Some(gin) = gin.as_mut() {
                        let gich = gin.ch_mut(i);
                        for y in y0..y1 {
                            let iy = y + dy - 1;
                            let grow = &gch[y * wd + x0..y * wd + x1];
                            let gi = &mut gich[iy * wd + x0 + dx - 1..iy * wd + x1 + dx - 1];
                            for (a, g) in gi.iter_mut().zip(grow) {
                                *a += wv * g;
                            }
                        }
                    }
                }
            }
        }
    }
    gin
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn silu(pre: &Maps) -> Maps {
    Maps::from_vec(pre.c, pre.h, pre.w, pre.data.iter().map(|&x| x * sigmoid(x)).collect())
}

/// `g ⊙ silu'(pre)`.
pub(crate) fn silu_backward(pre: &Maps, g: &Maps) -> Maps {
    let data = pre
        .data
        .iter()
        .zip(&g.data)
        .map(|(&x, &gv)| {
            let s = sigmoid(x);
            gv * s * (1.0 + x * (1.0 - s))
        })
        .collect();
    Maps::from_vec(pre.c, pre.h, pre.w, data)
}

/// 2×2 average pooling (even sizes).
pub(crate) fn avgpool2(x: &Maps) -> Maps {
    let (h, w) = (x.h / 2, x.w / 2);
    let mut out = Maps::zeros(x.c, h, w);
    for c in 0..x.c {
        let src = x.ch(c);
        let dst = out.ch_mut(c);
        for r in 0..h {
            for q in 0..w {
                let a = 2 * r * x.w + 2 * q;
                dst[r * w + q] = 0.25 * (src[a] + src[a + 1] + src[a + x.w] + src[a + x.w + 1]);
            }
        }
    }
    out
}

pub(crate) fn avgpool2_backward(g: &Maps) -> Maps {
    let (h, w) = (g.h * 2, g.w * 2);
    let mut out = Maps::zeros(g.c, h, w);
    for c in 0..g.c {
        let src = g.ch(c);
        let dst = out.ch_mut(c);
        for r in 0..h {
            for q in 0..w {
                dst[r * w + q] = 0.25 * src[(r / 2) * g.w + q / 2];
            }
        }
    }
    out
}

/// Row-stochastic `dst × src` matrix of 1D linear interpolation with
/// pixel-center alignment and edge clamping.
pub(crate) fn resample_matrix(src: usize, dst: usize) -> Vec<f64> {
    let mut m = vec![0.0; dst * src];
    let scale = src as f64 / dst as f64;
    for i in 0..dst {
        let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(src - 1);
        let f = pos - lo as f64;
        m[i * src + lo] += 1.0 - f;
        m[i * src + hi] += f;
    }
    m
}

/// Separable resample of every channel: `R · X · Rᵀ`.
pub(crate) fn resample(x: &Maps, r: &[f64], dst: usize) -> Maps {
    let src = x.h;
    debug_assert_eq!(x.w, src);
    let mut out = Maps::zeros(x.c, dst, dst);
    let mut tmp = vec![0.0; dst * src];
    for c in 0..x.c {
        let xc = x.ch(c);
        // tmp = R · X  (dst × src)
        tmp.fill(0.0);
        for i in 0..dst {
            for k in 0..src {
                let rv = r[i * src + k];
                if rv != 0.0 {
                    for j in 0..src {
                        tmp[i * src + j] += rv * xc[k * src + j];
                    }
                }
            }
        }
        let oc = out.ch_mut(c);
        for i in 0..dst {
            for j in 0..dst {
                oc[i * dst + j] = (0..src).map(|k| tmp[i * src + k] * r[j * src + k]).sum();
            }
        }
    }
    out
}

/// Adjoint of [`resample`]: `Rᵀ · G · R`.
pub(crate) fn resample_backward(g: &Maps, r: &[f64], src: usize) -> Maps {
    let dst = g.h;
    let mut out = Maps::zeros(g.c, src, src);
    let mut tmp = vec![0.0; src * dst];
    for c in 0..g.c {
        let gc = g.ch(c);
        // tmp = Rᵀ · G  (src × dst)
        tmp.fill(0.0);
        for i in 0..dst {
            for k in 0..src {
                let rv = r[i * src + k];
                if rv != 0.0 {
                    for j in 0..dst {
                        tmp[k * dst + j] += rv * gc[i * dst + j];
                    }
                }
            }
        }
        let oc = out.ch_mut(c);
        for k in 0..src {
            for l in 0..src {
                oc[k * src + l] = (0..dst).map(|j| tmp[k * dst + j] * r[j * src + l]).sum();
            }
        }
    }
    out
}

/// Sinusoidal embedding: `sin(t·f_j)` then `cos(t·f_j)`, `f_j = 10000^(−j/(d/2))`.
pub(crate) fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|j| (-(10000f64.ln()) * j as f64 / half as f64).exp())
        .collect();
    let mut e: Vec<f64> = freqs.iter().map(|f| (t as f64 * f).sin()).collect();
    e.extend(freqs.iter().map(|f| (t as f64 * f).cos()));
    e
}

/// `W · e` for a `rows × e.len()` matrix.
pub(crate) fn dense(w: &[f64], e: &[f64]) -> Vec<f64> {
    w.chunks(e.len()).map(|row| row.iter().zip(e).map(|(a, b)| a * b).sum()).collect()
}

/// Adds `bias[c]` to every pixel of channel `c`.
pub(crate) fn add_channel_bias(x: &mut Maps, bias: &[f64]) {
    for (c, b) in bias.iter().enumerate() {
        for v in x.ch_mut(c) {
            *v += b;
        }
    }
}

/// Per-channel sums, the gradient of a channel bias.
pub(crate) fn channel_sums(g: &Maps) -> Vec<f64> {
    (0..g.c).map(|c| g.ch(c).iter().sum()).collect()
}
