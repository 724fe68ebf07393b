//! Subsequence sampling, train/test splits and the alternating pair stream.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::augment::augment_with_rng;
use super::{AugmentMode, Dataset, SequenceSample};
use crate::error::{contract, Error, Result};
use crate::rng::{self, tag, Rng};

/// `k` consecutive frames from a uniformly drawn start. Sequences shorter
/// than `k` are read cyclically from frame 0.
pub fn sample_subsequence(seq: &SequenceSample, k: usize, seed: u64) -> Result<SequenceSample> {
    sample_subsequence_with(seq, k, &mut rng::stream(seed, &[]))
}

pub fn sample_subsequence_with(seq: &SequenceSample, k: usize, rng: &mut Rng) -> Result<SequenceSample> {
    if seq.is_empty() {
        return Err(contract("cannot sample from an empty sequence"));
    }
    if k == 0 {
        return Err(contract("subsequence length must be at least 1"));
    }
    let n = seq.len();
    let start = if n >= k { rng.gen_range(0..=n - k) } else { 0 };
    let frames = (0..k).map(|i| seq.frames[(start + i) % n].clone()).collect();
    Ok(seq.with_frames(frames))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitMode {
    /// Disjoint halves of the identities; odd counts give train the extra one.
    #[default]
    Half,
    /// Train and test both use every identity (overfitting checks only).
    Overfit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub trial: usize,
}

impl DatasetSplit {
    /// Shuffles the identities with `(seed, trial)` and partitions them.
    /// Both lists come back sorted.
    pub fn new(ids: &[String], mode: SplitMode, seed: u64, trial: usize) -> Self {
        let mut ids = ids.to_vec();
        ids.sort();
        ids.dedup();
        let (mut train, mut test) = match mode {
            SplitMode::Half => {
                ids.shuffle(&mut rng::stream(seed, &[tag::SPLIT, trial as u64]));
                let cut = ids.len().div_ceil(2);
                let test = ids.split_off(cut);
                (ids, test)
            }
            SplitMode::Overfit => (ids.clone(), ids),
        };
        train.sort();
        test.sort();
        Self { train, test, seed, trial }
    }
}

/// Keeps a seeded random `fraction` of the identities (at least one).
pub fn select_fraction(ids: &[String], fraction: f64, seed: u64) -> Result<Vec<String>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(contract("fraction must lie in (0, 1]"));
    }
    let mut ids = ids.to_vec();
    ids.sort();
    if fraction >= 1.0 {
        return Ok(ids);
    }
    let keep = (libm::round(fraction * ids.len() as f64) as usize).clamp(1, ids.len().max(1));
    ids.shuffle(&mut rng::stream(seed, &[tag::SUBSET]));
    ids.truncate(keep);
    ids.sort();
    Ok(ids)
}

/// One probe/gallery training pair with the identities' class indices.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub probe: SequenceSample,
    pub gallery: SequenceSample,
    pub same_person: bool,
    pub probe_label: usize,
    pub gallery_label: usize,
}

/// Endless stream of training pairs, strictly alternating positive and
/// negative. Each epoch visits every training identity once in shuffled
/// order and emits its positive pair then a negative pair against a
/// uniformly drawn other identity.
pub struct PairStream<'a> {
    dataset: &'a Dataset,
    /// `(probe, gallery)` sequence indices per training identity.
    cams: Vec<(usize, usize)>,
    k: usize,
    rng: Rng,
    order: Vec<usize>,
    cursor: usize,
    pending_negative: Option<usize>,
}

impl<'a> PairStream<'a> {
    pub fn new(dataset: &'a Dataset, split: &DatasetSplit, k: usize, seed: u64) -> Result<Self> {
        if split.train.len() < 2 {
            return Err(Error::Data(alloc::format!(
                "pair sampling needs at least 2 training identities, got {}",
                split.train.len()
            )));
        }
        if k == 0 {
            return Err(contract("subsequence length must be at least 1"));
        }
        let cams = split
            .train
            .iter()
            .map(|id| dataset.camera_pair(id, seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dataset,
            cams,
            k,
            rng: rng::stream(seed, &[tag::PAIRS, split.trial as u64]),
            order: Vec::new(),
            cursor: 0,
            pending_negative: None,
        })
    }

    /// Pairs per epoch: one positive and one negative per identity.
    pub fn epoch_len(&self) -> usize {
        2 * self.cams.len()
    }

    fn view(&mut self, seq: usize) -> Result<SequenceSample> {
        let sub = sample_subsequence_with(&self.dataset.sequences[seq], self.k, &mut self.rng)?;
        augment_with_rng(&sub, AugmentMode::Train, &mut self.rng)
    }

    fn make(&mut self, a: usize, b: usize, same: bool) -> Result<PairBatch> {
        let probe = self.view(self.cams[a].0)?;
        let gallery = self.view(self.cams[b].1)?;
        Ok(PairBatch {
            probe,
            gallery,
            same_person: same,
            probe_label: a,
            gallery_label: b,
        })
    }

    pub fn next_pair(&mut self) -> Result<PairBatch> {
        if let Some(a) = self.pending_negative.take() {
            let n = self.cams.len();
            let mut b = self.rng.gen_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            return self.make(a, b, false);
        }
        if self.cursor == self.order.len() {
            self.order = (0..self.cams.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let a = self.order[self.cursor];
        self.cursor += 1;
        self.pending_negative = Some(a);
        self.make(a, a, true)
    }
}

impl Iterator for PairStream<'_> {
    type Item = Result<PairBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.next_pair())
    }
}
