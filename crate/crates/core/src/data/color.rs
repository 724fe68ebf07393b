use alloc::vec::Vec;

use super::RgbFrame;
use crate::tensor::Tensor;

/// BT.601 YUV: `Y = 0.299R + 0.587G + 0.114B`, `U = 0.492(B - Y)`,
/// `V = 0.877(R - Y)`, on the 0..255 scale. Returns `3 x H x W`.
pub fn rgb_to_yuv(frame: &RgbFrame) -> Tensor {
    let plane = frame.width * frame.height;
    let mut out = alloc::vec![0.0; 3 * plane];
    for (i, px) in frame.pixels.chunks_exact(3).enumerate() {
        let (r, g, b) = (px[0] as f64, px[1] as f64, px[2] as f64);
        let y = 0.299 * r + 0.587 * g + 0.114 * b;
        out[i] = y;
        out[plane + i] = 0.492 * (b - y);
        out[2 * plane + i] = 0.877 * (r - y);
    }
    Tensor::new(&[3, frame.height, frame.width], out).expect("frame dims")
}

/// Standardises each channel to zero mean and unit variance, with the
/// statistics pooled over every frame of the sequence. A channel with zero
/// variance becomes all zeros.
pub fn standardize_channels(frames: &mut [Tensor]) {
    let Some(first) = frames.first() else { return };
    let channels = first.shape()[0];
    let plane: usize = first.shape()[1..].iter().product();
    let count = (plane * frames.len()) as f64;
    for c in 0..channels {
        let span = c * plane..(c + 1) * plane;
        let mean = frames.iter().map(|f| f.data()[span.clone()].iter().sum::<f64>()).sum::<f64>() / count;
        let var = frames
            .iter()
            .map(|f| f.data()[span.clone()].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>())
            .sum::<f64>()
            / count;
        let scale = if var > 1e-12 { 1.0 / libm::sqrt(var) } else { 0.0 };
        for f in frames.iter_mut() {
            for v in &mut f.data_mut()[span.clone()] {
                *v = (*v - mean) * scale;
            }
        }
    }
}

/// YUV conversion followed by per-sequence standardisation.
pub fn yuv_standardized(frames: &[RgbFrame]) -> Vec<Tensor> {
    let mut out: Vec<Tensor> = frames.iter().map(rgb_to_yuv).collect();
    standardize_channels(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn black_and_white_frames() {
        let black = rgb_to_yuv(&RgbFrame::filled(4, 3, [0, 0, 0]));
        assert!(black.data().iter().all(|&v| v == 0.0));
        let std_black = yuv_standardized(&[RgbFrame::filled(4, 3, [0, 0, 0])]);
        assert!(std_black[0].data().iter().all(|&v| v == 0.0));

        let white = rgb_to_yuv(&RgbFrame::filled(4, 3, [255, 255, 255]));
        let d = white.data();
        assert!(d[..12].iter().all(|&y| (y - 255.0).abs() < 1e-12));
        assert!(d[12..].iter().all(|&c| c.abs() < 1e-12));
    }

    #[test]
    fn standardized_channels_have_unit_moments() {
        let frames: alloc::vec::Vec<RgbFrame> = (0..4)
            .map(|t| {
                let px = (0..6 * 5)
                    .flat_map(|i: usize| [(i * 31 + t * 7) as u8, (i * 3) as u8, (200 - i * 2 - t) as u8])
                    .collect();
                RgbFrame::new(6, 5, px).unwrap()
            })
            .collect();
        let out = yuv_standardized(&frames);
        for c in 0..3 {
            let vals: alloc::vec::Vec<f64> = out.iter().flat_map(|f| f.data()[c * 30..(c + 1) * 30].to_vec()).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }
}
