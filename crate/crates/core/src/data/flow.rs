//! Dense single-scale Lucas-Kanade optical flow.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    /// Side of the square aggregation window.
    pub window: usize,
    /// Added to the diagonal of each 2x2 normal-equation system.
    pub damping: f64,
    /// Flow magnitude (pixels) that maps to +-1 after normalisation.
    pub max_flow: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            window: 5,
            damping: 1e-4,
            max_flow: 8.0,
        }
    }
}

fn hw(t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [h, w] => Ok((h, w)),
        ref s => Err(dim("lucas_kanade", s, &[0, 0])),
    }
}

/// Per-pixel flow in pixels as a `2 x H x W` tensor (x then y), such that
/// `next(p + flow) ~ prev(p)`. Spatial gradients are central differences of
/// the mean of both frames (replicated borders); windows are clipped at the
/// image edges.
pub fn lucas_kanade(prev: &Tensor, next: &Tensor, cfg: &FlowConfig) -> Result<Tensor> {
    let (h, w) = hw(prev)?;
    if next.shape() != prev.shape() {
        return Err(dim("lucas_kanade", prev.shape(), next.shape()));
    }
    let (p, n) = (prev.data(), next.data());
    let avg: Vec<f64> = p.iter().zip(n).map(|(a, b)| 0.5 * (a + b)).collect();
    let at = |y: usize, x: isize| avg[y * w + x.clamp(0, w as isize - 1) as usize];
    let at_y = |y: isize, x: usize| avg[y.clamp(0, h as isize - 1) as usize * w + x];

    let mut ixx = vec![0.0; h * w];
    let mut ixy = vec![0.0; h * w];
    let mut iyy = vec![0.0; h * w];
    let mut ixt = vec![0.0; h * w];
    let mut iyt = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let gx = 0.5 * (at(y, x as isize + 1) - at(y, x as isize - 1));
            let gy = 0.5 * (at_y(y as isize + 1, x) - at_y(y as isize - 1, x));
            let gt = n[i] - p[i];
            ixx[i] = gx * gx;
            ixy[i] = gx * gy;
            iyy[i] = gy * gy;
            ixt[i] = gx * gt;
            iyt[i] = gy * gt;
        }
    }
    let (sxx, sxy, syy, sxt, syt) = (
        box_sum(&ixx, h, w, cfg.window),
        box_sum(&ixy, h, w, cfg.window),
        box_sum(&iyy, h, w, cfg.window),
        box_sum(&ixt, h, w, cfg.window),
        box_sum(&iyt, h, w, cfg.window),
    );
    let mut out = vec![0.0; 2 * h * w];
    for i in 0..h * w {
        let a = sxx[i] + cfg.damping;
        let b = sxy[i];
        let c = syy[i] + cfg.damping;
        let det = a * c - b * b;
        if det <= 0.0 || !det.is_finite() {
            continue;
        }
        // [a b; b c] [u v]^T = -[sxt syt]^T; adding 0.0 clears negative zeros.
        out[i] = (-c * sxt[i] + b * syt[i]) / det + 0.0;
        out[h * w + i] = (b * sxt[i] - a * syt[i]) / det + 0.0;
    }
    Tensor::new(&[2, h, w], out)
}

/// Divides by `max_flow` and clamps to `[-1, 1]`.
pub fn normalize_flow(flow: &mut Tensor, cfg: &FlowConfig) {
    for v in flow.data_mut() {
        *v = (*v / cfg.max_flow).clamp(-1.0, 1.0);
    }
}

/// [`lucas_kanade`] followed by [`normalize_flow`].
pub fn lucas_kanade_flow(prev: &Tensor, next: &Tensor, cfg: &FlowConfig) -> Result<Tensor> {
    let mut f = lucas_kanade(prev, next, cfg)?;
    normalize_flow(&mut f, cfg);
    Ok(f)
}

/// Sum over a `win x win` window centred on each pixel, clipped at borders.
fn box_sum(v: &[f64], h: usize, w: usize, win: usize) -> Vec<f64> {
    let r = win / 2;
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            rows[y * w + x] = v[y * w + x0..y * w + x1].iter().sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            out[y * w + x] = (y0..y1).map(|yy| rows[yy * w + x]).sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(h: usize, w: usize, shift: f64) -> Tensor {
        let data = (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f64, (i % w) as f64 - shift);
                0.5 + 0.2 * libm::sin(0.35 * x + 0.1 * y) + 0.15 * libm::cos(0.27 * y - 0.05 * x)
                    + 0.1 * libm::sin(0.19 * x * 0.7 + 0.31 * y)
            })
            .collect();
        Tensor::new(&[h, w], data).unwrap()
    }

    fn interior_mean(f: &Tensor, ch: usize, margin: usize) -> f64 {
        let (h, w) = (f.shape()[1], f.shape()[2]);
        let mut s = 0.0;
        let mut n = 0.0;
        for y in margin..h - margin {
            for x in margin..w - margin {
                s += f.data()[ch * h * w + y * w + x];
                n += 1.0;
            }
        }
        s / n
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let a = texture(20, 16, 0.0);
        let f = lucas_kanade(&a, &a, &FlowConfig::default()).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0 && v.is_sign_positive()));
    }

    #[test]
    fn flat_frames_give_zero_flow() {
        let a = Tensor::filled(&[10, 10], 0.3);
        let b = Tensor::filled(&[10, 10], 0.3);
        let f = lucas_kanade(&a, &b, &FlowConfig::default()).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_pixel_translation_is_recovered() {
        let a = texture(32, 32, 0.0);
        let b = texture(32, 32, 1.0);
        let f = lucas_kanade(&a, &b, &FlowConfig::default()).unwrap();
        let fx = interior_mean(&f, 0, 4);
        let fy = interior_mean(&f, 1, 4);
        assert!((fx - 1.0).abs() < 0.25, "flow-x {fx}");
        assert!(fy.abs() < 0.25, "flow-y {fy}");
    }

    #[test]
    fn normalisation_clamps() {
        let mut t = Tensor::from_vec(vec![16.0, -4.0, 0.0, -100.0]);
        normalize_flow(&mut t, &FlowConfig::default());
        assert_eq!(t.data(), &[1.0, -0.5, 0.0, -1.0]);
    }
}
