//! Procedural stand-in datasets: each identity is a moving textured
//! pattern, each camera applies its own photometric shift and noise.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng as _;

use super::{RawSequence, RgbFrame};
use crate::error::{contract, Result};
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_ids: usize,
    pub n_cams: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// When set, only this many frames per sequence show the identity; the
    /// rest are uniform pixel noise.
    pub signal_frames: Option<usize>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_ids: 8,
            n_cams: 2,
            frames: 16,
            height: 24,
            width: 16,
            seed: 0,
            signal_frames: None,
        }
    }
}

pub fn person_id(i: usize) -> alloc::string::String {
    format!("id{i:03}")
}

pub fn camera_id(c: usize) -> alloc::string::String {
    format!("cam{}", c + 1)
}

/// Appearance of one identity.
struct Look {
    top: [f64; 3],
    bottom: [f64; 3],
    stripe: [f64; 3],
    period: f64,
    slant: f64,
    split: f64,
    wave: (f64, f64, f64),
    speed: f64,
}

impl Look {
    /// Identity `i` of `n` gets hues spaced evenly around the colour wheel,
    /// jittered, so no two identities share a palette.
    fn draw(i: usize, n: usize, r: &mut rng::Rng) -> Self {
        let hue = (i as f64 + r.gen_range(0.0..0.5)) / n as f64;
        let top = hsv(hue, r.gen_range(0.5..0.9), r.gen_range(0.6..0.9));
        let bottom = hsv(hue + 0.5 + r.gen_range(-0.15..0.15), r.gen_range(0.3..0.9), r.gen_range(0.3..0.7));
        let stripe = [0, 1, 2].map(|_| r.gen_range(40.0..215.0));
        Self {
            top,
            bottom,
            stripe,
            period: r.gen_range(3.0..7.0),
            slant: r.gen_range(-1.0..1.0),
            split: r.gen_range(0.35..0.65),
            wave: (r.gen_range(0.2..0.6), r.gen_range(0.15..0.5), r.gen_range(0.0..core::f64::consts::TAU)),
            speed: if r.gen_bool(0.5) { 1.0 } else { -1.0 },
        }
    }

    fn pixel(&self, x: f64, y: f64, h: f64) -> [f64; 3] {
        let base = if y < self.split * h { self.top } else { self.bottom };
        let phase = (x + self.slant * y) / self.period;
        let s = 0.5 + 0.5 * libm::sin(core::f64::consts::TAU * phase);
        let (fx, fy, ph) = self.wave;
        let shade = 25.0 * libm::sin(fx * x + ph) * libm::cos(fy * y);
        [0, 1, 2].map(|c| base[c] * (1.0 - 0.5 * s) + self.stripe[c] * 0.5 * s + shade)
    }
}

/// RGB on the 0..255 scale; `h` wraps.
fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = (h - libm::floor(h)) * 6.0;
    let f = h - libm::floor(h);
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let rgb = match h as usize {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    };
    rgb.map(|c| 255.0 * c)
}

/// Renders every sequence of the dataset, identities then cameras in order.
pub fn render(spec: &SynthSpec) -> Result<Vec<RawSequence>> {
    if spec.n_ids == 0 || spec.n_cams == 0 || spec.frames == 0 || spec.height == 0 || spec.width == 0 {
        return Err(contract("synthetic dataset parameters must all be at least 1"));
    }
    if let Some(s) = spec.signal_frames {
        if s == 0 || s > spec.frames {
            return Err(contract("signal frame count must lie in 1..=frames"));
        }
    }
    let (h, w) = (spec.height, spec.width);
    let mut out = Vec::with_capacity(spec.n_ids * spec.n_cams);
    for id in 0..spec.n_ids {
        let look = Look::draw(id, spec.n_ids, &mut rng::stream(spec.seed, &[tag::SYNTH, id as u64]));
        for cam in 0..spec.n_cams {
            let mut r = rng::stream(spec.seed, &[tag::SYNTH, id as u64, 1 + cam as u64]);
            let gain = [0, 1, 2].map(|_| r.gen_range(0.8..1.2));
            let offset = [0, 1, 2].map(|_| r.gen_range(-20.0..20.0));
            let x0 = r.gen_range(0.0..w as f64);
            let signal: Option<Vec<usize>> = spec
                .signal_frames
                .map(|s| sample(&mut r, spec.frames, s).into_vec());
            let frames = (0..spec.frames)
                .map(|t| {
                    let shows = signal.as_ref().is_none_or(|v| v.contains(&t));
                    let bob = libm::sin(t as f64 * 0.8);
                    let mut px = Vec::with_capacity(h * w * 3);
                    for y in 0..h {
                        for x in 0..w {
                            let rgb = if shows {
                                let xs = x as f64 - look.speed * t as f64 - x0;
                                look.pixel(xs, y as f64 - bob, h as f64)
                            } else {
                                [0, 1, 2].map(|_| r.gen_range(0.0..255.0))
                            };
                            for c in 0..3 {
                                let v = rgb[c] * gain[c] + offset[c] + r.gen_range(-6.0..6.0);
                                px.push(libm::round(v.clamp(0.0, 255.0)) as u8);
                            }
                        }
                    }
                    RgbFrame::new(w, h, px)
                })
                .collect::<Result<Vec<_>>>()?;
            out.push(RawSequence {
                person_id: person_id(id),
                camera_id: camera_id(cam),
                sources: (0..spec.frames).map(|t| format!("{t:05}.ppm")).collect(),
                frames,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{lucas_kanade, rgb_to_yuv, FlowConfig};
    use crate::tensor::Tensor;

    #[test]
    fn counts_and_determinism() {
        let spec = SynthSpec::default();
        let a = render(&spec).unwrap();
        assert_eq!(a.len(), 16);
        assert_eq!(a.iter().map(|s| s.frames.len()).sum::<usize>(), 256);
        assert!(a.iter().all(|s| s.frames.iter().all(|f| f.width == 16 && f.height == 24)));
        assert_eq!(a, render(&spec).unwrap());
        let other = render(&SynthSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn motion_yields_nonzero_flow() {
        let seqs = render(&SynthSpec::default()).unwrap();
        let mut total = 0.0;
        let mut n = 0.0;
        for s in seqs.iter().take(4) {
            for p in s.frames.windows(2) {
                let luma = |f: &RgbFrame| {
                    let y = rgb_to_yuv(f);
                    Tensor::new(&[f.height, f.width], y.data()[..f.height * f.width].iter().map(|v| v / 255.0).collect()).unwrap()
                };
                let f = lucas_kanade(&luma(&p[0]), &luma(&p[1]), &FlowConfig::default()).unwrap();
                total += f.data().iter().map(|v| v.abs()).sum::<f64>();
                n += f.numel() as f64;
            }
        }
        assert!(total / n > 0.05, "mean |flow| {}", total / n);
    }

    #[test]
    fn rejects_zero_sizes() {
        assert!(render(&SynthSpec { n_ids: 0, ..Default::default() }).is_err());
        assert!(render(&SynthSpec { signal_frames: Some(17), ..Default::default() }).is_err());
    }
}
