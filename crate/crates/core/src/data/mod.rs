//! Sequence data: decoded frames, preprocessing into 5-channel tensors,
//! augmentation, subsequence sampling, splits and the pair sampler.

mod augment;
mod color;
mod flow;
mod sampling;
pub mod synth;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

pub use augment::{augment, crop_and_mirror, AugmentMode, CROP_MARGIN};
pub use color::{rgb_to_yuv, standardize_channels, yuv_standardized};
pub use flow::{lucas_kanade, lucas_kanade_flow, normalize_flow, FlowConfig};
pub use sampling::{
    sample_subsequence, sample_subsequence_with, select_fraction, DatasetSplit, PairBatch, PairStream, SplitMode,
};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An 8-bit interleaved RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbFrame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height * 3 {
            return Err(Error::Data(alloc::format!(
                "{}x{} frame needs {} bytes, got {}",
                width,
                height,
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, pixels }
    }

    pub fn rgb(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

/// A decoded clip before preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSequence {
    pub person_id: String,
    pub camera_id: String,
    pub frames: Vec<RgbFrame>,
    pub sources: Vec<String>,
}

/// One preprocessed clip: every frame is `5 x H x W` (Y, U, V, flow-x, flow-y).
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub person_id: String,
    pub camera_id: String,
    pub frames: Vec<Tensor>,
    pub sources: Vec<String>,
}

impl SequenceSample {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(H, W)` of the frames.
    pub fn frame_hw(&self) -> Option<(usize, usize)> {
        self.frames.first().map(|f| (f.shape()[1], f.shape()[2]))
    }

    pub(crate) fn with_frames(&self, frames: Vec<Tensor>) -> Self {
        Self {
            person_id: self.person_id.clone(),
            camera_id: self.camera_id.clone(),
            frames,
            sources: self.sources.clone(),
        }
    }
}

/// Colour conversion, per-sequence standardisation and optical flow.
pub fn preprocess(raw: &RawSequence, flow_cfg: &FlowConfig) -> Result<SequenceSample> {
    let first = raw
        .frames
        .first()
        .ok_or_else(|| Error::Data(alloc::format!("{}/{}: empty sequence", raw.person_id, raw.camera_id)))?;
    let (w, h) = (first.width, first.height);
    if let Some((i, f)) = raw.frames.iter().enumerate().find(|(_, f)| (f.width, f.height) != (w, h)) {
        let src = raw.sources.get(i).map(String::as_str).unwrap_or("?");
        return Err(Error::Data(alloc::format!(
            "{}/{}: frame {} ({}) is {}x{}, expected {}x{}",
            raw.person_id,
            raw.camera_id,
            i,
            src,
            f.width,
            f.height,
            w,
            h
        )));
    }
    let plane = h * w;
    let luma: Vec<Vec<f64>> = raw
        .frames
        .iter()
        .map(|f| rgb_to_yuv(f).data()[..plane].iter().map(|y| y / 255.0).collect())
        .collect();
    let color = yuv_standardized(&raw.frames);
    let mut flows: Vec<Tensor> = luma
        .windows(2)
        .map(|p| {
            let prev = Tensor::new(&[h, w], p[0].clone()).expect("plane");
            let next = Tensor::new(&[h, w], p[1].clone()).expect("plane");
            lucas_kanade_flow(&prev, &next, flow_cfg)
        })
        .collect::<Result<_>>()?;
    match flows.last().cloned() {
        Some(last) => flows.push(last),
        None => flows.push(Tensor::zeros(&[2, h, w])),
    }
    let frames = color
        .into_iter()
        .zip(flows)
        .map(|(c, f)| {
            let mut data = c.into_data();
            data.extend_from_slice(f.data());
            Tensor::new(&[5, h, w], data)
        })
        .collect::<Result<_>>()?;
    Ok(SequenceSample {
        person_id: raw.person_id.clone(),
        camera_id: raw.camera_id.clone(),
        frames,
        sources: raw.sources.clone(),
    })
}

/// A set of preprocessed sequences indexed by identity and camera.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub sequences: Vec<SequenceSample>,
}

impl Dataset {
    pub fn new(sequences: Vec<SequenceSample>) -> Self {
        Self { sequences }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Sequence indices per identity, cameras in lexicographic order.
    pub fn by_identity(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.sequences.iter().enumerate() {
            map.entry(s.person_id.as_str()).or_default().push(i);
        }
        for idx in map.values_mut() {
            idx.sort_by(|&a, &b| self.sequences[a].camera_id.cmp(&self.sequences[b].camera_id));
        }
        map
    }

    /// Identities seen by at least two cameras, sorted.
    pub fn pairable_ids(&self) -> Vec<String> {
        self.by_identity()
            .into_iter()
            .filter(|(_, v)| v.len() >= 2)
            .map(|(k, _)| String::from(k))
            .collect()
    }

    /// `(probe, gallery)` sequence indices for an identity: its first two
    /// cameras, or two cameras drawn with `seed` when it has more than two.
    pub fn camera_pair(&self, id: &str, seed: u64) -> Result<(usize, usize)> {
        let map = self.by_identity();
        let cams = map
            .get(id)
            .ok_or_else(|| Error::Data(alloc::format!("identity {id} not in dataset")))?;
        match cams.len() {
            0 | 1 => Err(Error::Data(alloc::format!("identity {id} is missing a second camera"))),
            2 => Ok((cams[0], cams[1])),
            n => {
                use rand::seq::index::sample;
                let mut rng = crate::rng::stream(seed, &[crate::rng::tag::CAMERAS, fnv(id)]);
                let mut pick = sample(&mut rng, n, 2).into_vec();
                pick.sort_unstable();
                Ok((cams[pick[0]], cams[pick[1]]))
            }
        }
    }
}

pub(crate) fn fnv(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}
