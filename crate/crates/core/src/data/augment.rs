use alloc::vec::Vec;

use rand::Rng as _;

use super::SequenceSample;
use crate::error::{contract, Result};
use crate::tensor::Tensor;

/// Pixels removed from each spatial extent by cropping.
pub const CROP_MARGIN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    /// Random crop offset and a coin-flip mirror, both fixed per sequence.
    Train,
    /// Centre crop, never mirrored.
    Test,
}

/// Crops every frame to `(H-8) x (W-8)` and optionally mirrors the whole
/// sequence.
pub fn augment(seq: &SequenceSample, mode: AugmentMode, seed: u64) -> Result<SequenceSample> {
    let mut rng = crate::rng::stream(seed, &[]);
    augment_with_rng(seq, mode, &mut rng)
}

pub(crate) fn augment_with_rng(seq: &SequenceSample, mode: AugmentMode, rng: &mut crate::rng::Rng) -> Result<SequenceSample> {
    let (h, w) = seq
        .frame_hw()
        .ok_or_else(|| contract("cannot augment an empty sequence"))?;
    check_size(h, w)?;
    let (top, left, mirror) = match mode {
        AugmentMode::Train => (
            rng.gen_range(0..=CROP_MARGIN),
            rng.gen_range(0..=CROP_MARGIN),
            rng.gen_bool(0.5),
        ),
        AugmentMode::Test => (CROP_MARGIN / 2, CROP_MARGIN / 2, false),
    };
    crop_and_mirror(seq, top, left, mirror)
}

fn check_size(h: usize, w: usize) -> Result<()> {
    if h <= CROP_MARGIN || w <= CROP_MARGIN {
        return Err(contract(alloc::format!(
            "frames must be at least {0}x{0} to crop, got {h}x{w}",
            CROP_MARGIN + 1
        )));
    }
    Ok(())
}

/// Crops at `(top, left)` to `(H-8) x (W-8)`; mirroring flips columns and
/// negates the horizontal flow channel.
pub fn crop_and_mirror(seq: &SequenceSample, top: usize, left: usize, mirror: bool) -> Result<SequenceSample> {
    let (h, w) = seq
        .frame_hw()
        .ok_or_else(|| contract("cannot crop an empty sequence"))?;
    check_size(h, w)?;
    if top > CROP_MARGIN || left > CROP_MARGIN {
        return Err(contract("crop offset out of range"));
    }
    let (ch, cw) = (h - CROP_MARGIN, w - CROP_MARGIN);
    let frames = seq
        .frames
        .iter()
        .map(|f| {
            let c = f.shape()[0];
            let src = f.data();
            let mut out = Vec::with_capacity(c * ch * cw);
            for k in 0..c {
                let sign = if mirror && k == 3 { -1.0 } else { 1.0 };
                for y in 0..ch {
                    let row = &src[k * h * w + (top + y) * w + left..][..cw];
                    if mirror {
                        out.extend(row.iter().rev().map(|v| v * sign));
                    } else {
                        out.extend_from_slice(row);
                    }
                }
            }
            Tensor::new(&[c, ch, cw], out)
        })
        .collect::<Result<_>>()?;
    Ok(seq.with_frames(frames))
}
