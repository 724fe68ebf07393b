//! Cumulative match characteristic (CMC) evaluation.

use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{augment, sample_subsequence, AugmentMode, Dataset, SequenceSample};
use crate::error::{contract, dim, Error, Result};
use crate::model::{extract_feature, AstpnParams, ModelConfig};
use crate::rng::{self, tag};
use crate::tensor::Tensor;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Gallery indices sorted by ascending squared distance to `probe`. Ties
/// keep gallery order.
pub fn rank_gallery(probe: &Tensor, gallery: &[Tensor]) -> Result<Vec<usize>> {
    let mut d = Vec::with_capacity(gallery.len());
    for (i, g) in gallery.iter().enumerate() {
        if g.shape() != probe.shape() {
            return Err(dim("rank_gallery", probe.shape(), g.shape()));
        }
        d.push((sq_dist(probe.data(), g.data()), i));
    }
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(d.into_iter().map(|(_, i)| i).collect())
}

/// `ranks[r-1]` is the fraction of probes whose identity appears among the
/// `r` nearest gallery identities.
#[derive(Debug, Clone, PartialEq)]
pub struct CmcCurve {
    pub ranks: Vec<f64>,
    pub n_probes: usize,
    pub trial: usize,
}

impl CmcCurve {
    /// Value at 1-based rank `r`, clamped to the gallery size.
    pub fn at(&self, r: usize) -> f64 {
        match self.ranks.len() {
            0 => 0.0,
            len => self.ranks[r.clamp(1, len) - 1],
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.ranks.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Identity-level CMC. Each probe ranks the gallery identities by their
/// nearest gallery feature; its match rank is the position of its own
/// identity. Every probe identity must be present in the gallery.
pub fn cmc_from_features(
    probes: &[Tensor],
    probe_ids: &[String],
    gallery: &[Tensor],
    gallery_ids: &[String],
    trial: usize,
) -> Result<CmcCurve> {
    if probes.len() != probe_ids.len() || gallery.len() != gallery_ids.len() {
        return Err(contract("one identity per feature is required"));
    }
    if probes.is_empty() || gallery.is_empty() {
        return Err(Error::Data("CMC needs at least one probe and one gallery sequence".into()));
    }
    let mut distinct: Vec<&str> = gallery_ids.iter().map(String::as_str).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let g = distinct.len();
    let mut hits = alloc::vec![0usize; g];
    for (p, id) in probes.iter().zip(probe_ids) {
        if !distinct.contains(&id.as_str()) {
            return Err(Error::Data(alloc::format!("probe identity {id} has no gallery sequence")));
        }
        let order = rank_gallery(p, gallery)?;
        let mut seen: Vec<&str> = Vec::with_capacity(g);
        for i in order {
            let gid = gallery_ids[i].as_str();
            if !seen.contains(&gid) {
                seen.push(gid);
                if gid == id {
                    break;
                }
            }
        }
        hits[seen.len() - 1] += 1;
    }
    let n = probes.len() as f64;
    let mut acc = 0usize;
    let ranks = hits
        .into_iter()
        .map(|h| {
            acc += h;
            acc as f64 / n
        })
        .collect();
    Ok(CmcCurve {
        ranks,
        n_probes: probes.len(),
        trial,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalConfig {
    /// Frames per test sequence; `None` uses the whole sequence and
    /// `Some(1)` is the single-shot protocol.
    pub frames: Option<usize>,
    pub seed: u64,
    pub trial: usize,
}

/// Centre-cropped test view of a sequence, optionally shortened.
pub fn test_view(seq: &SequenceSample, frames: Option<usize>, seed: u64) -> Result<SequenceSample> {
    let seq = match frames {
        Some(k) => sample_subsequence(seq, k, seed)?,
        None => seq.clone(),
    };
    augment(&seq, AugmentMode::Test, seed)
}

/// Probe features from each identity's first camera against gallery
/// features from its second.
pub fn compute_cmc(
    dataset: &Dataset,
    ids: &[String],
    params: &AstpnParams,
    model: &ModelConfig,
    cfg: &EvalConfig,
) -> Result<CmcCurve> {
    let mut probes = Vec::with_capacity(ids.len());
    let mut gallery = Vec::with_capacity(ids.len());
    for id in ids {
        let (pi, gi) = dataset.camera_pair(id, cfg.seed)?;
        for (idx, out) in [(pi, &mut probes), (gi, &mut gallery)] {
            let s = rng::derive(cfg.seed, &[tag::EVAL, cfg.trial as u64, idx as u64]);
            let view = test_view(&dataset.sequences[idx], cfg.frames, s)?;
            out.push(extract_feature(params, &view, model)?);
        }
    }
    cmc_from_features(&probes, ids, &gallery, ids, cfg.trial)
}

/// Per-rank mean and population standard deviation over trials.
pub fn aggregate(curves: &[CmcCurve]) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = curves.first().ok_or_else(|| contract("no CMC curves to aggregate"))?;
    let len = first.ranks.len();
    if curves.iter().any(|c| c.ranks.len() != len) {
        return Err(contract("CMC curves differ in length"));
    }
    let n = curves.len() as f64;
    let mean: Vec<f64> = (0..len).map(|r| curves.iter().map(|c| c.ranks[r]).sum::<f64>() / n).collect();
    let std = (0..len)
        .map(|r| libm::sqrt(curves.iter().map(|c| (c.ranks[r] - mean[r]) * (c.ranks[r] - mean[r])).sum::<f64>() / n))
        .collect();
    Ok((mean, std))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn ranking_orders_by_distance() {
        let p = Tensor::from_vec(vec![0.0, 0.0]);
        let g = [
            Tensor::from_vec(vec![3.0, 0.0]),
            Tensor::from_vec(vec![1.0, 0.0]),
            Tensor::from_vec(vec![0.0, 2.0]),
        ];
        assert_eq!(rank_gallery(&p, &g).unwrap(), vec![1, 2, 0]);
    }

    #[test]
    fn perfect_features_give_unit_curve() {
        let f: Vec<Tensor> = (0..4).map(|i| Tensor::from_vec(vec![i as f64])).collect();
        let id = ids(&["a", "b", "c", "d"]);
        let c = cmc_from_features(&f, &id, &f, &id, 0).unwrap();
        assert_eq!(c.ranks, vec![1.0; 4]);
    }

    #[test]
    fn reversed_features() {
        // probe i is closest to gallery 3-i; gallery identity order a..d
        let p: Vec<Tensor> = (0..2).map(|i| Tensor::from_vec(vec![i as f64 * 10.0])).collect();
        let g: Vec<Tensor> = (0..2).map(|i| Tensor::from_vec(vec![(1 - i) as f64 * 10.0])).collect();
        let id = ids(&["a", "b"]);
        let c = cmc_from_features(&p, &id, &g, &id, 0).unwrap();
        assert_eq!(c.ranks, vec![0.0, 1.0]);
        assert_eq!(c.at(1), 0.0);
        assert_eq!(c.at(20), 1.0);
    }

    #[test]
    fn repeated_gallery_identity_counts_once() {
        let p = vec![Tensor::from_vec(vec![0.0])];
        let g = vec![
            Tensor::from_vec(vec![1.0]),
            Tensor::from_vec(vec![1.5]),
            Tensor::from_vec(vec![2.0]),
        ];
        let c = cmc_from_features(&p, &ids(&["b"]), &g, &ids(&["a", "a", "b"]), 0).unwrap();
        assert_eq!(c.ranks, vec![0.0, 1.0]);
    }

    #[test]
    fn missing_gallery_identity_is_an_error() {
        let f = vec![Tensor::from_vec(vec![0.0])];
        assert!(matches!(
            cmc_from_features(&f, &ids(&["x"]), &f, &ids(&["y"]), 0),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn aggregate_population_std() {
        let c = |v: f64| CmcCurve {
            ranks: vec![v, 1.0],
            n_probes: 1,
            trial: 0,
        };
        let (m, s) = aggregate(&[c(0.0), c(1.0)]).unwrap();
        assert_eq!(m, vec![0.5, 1.0]);
        assert_eq!(s, vec![0.5, 0.0]);
    }
}
