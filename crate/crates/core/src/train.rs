//! Training loop: one pair per SGD step.

use alloc::vec::Vec;

use crate::data::{Dataset, DatasetSplit, PairBatch, PairStream};
use crate::error::{contract, Result};
use crate::graph::Graph;
use crate::loss::{pair_objective, LossConfig};
use crate::model::{forward_pair_graph, AstpnParams, ModelConfig};
use crate::optim::{sgd_step, LrSchedule};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: LrSchedule,
    /// Subsequence length drawn for each training sequence.
    pub k: usize,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 700,
            lr: LrSchedule::constant(1e-3),
            k: 16,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

/// Loss of one pair and the parameter gradients, accumulated into `params`.
pub fn accumulate_pair_grads(
    params: &mut AstpnParams,
    pair: &PairBatch,
    model: &ModelConfig,
    loss: &LossConfig,
) -> Result<f64> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let (vp, vg) = forward_pair_graph(&mut g, &bound, &pair.probe, &pair.gallery, model)?;
    let terms = pair_objective(
        &mut g,
        &bound,
        vp,
        vg,
        pair.same_person,
        (pair.probe_label, pair.gallery_label),
        loss,
    )?;
    let value = g.value(terms.total).item();
    g.backward(terms.total)?;
    params.absorb_grads(&g, &bound);
    Ok(value)
}

/// Forward, backward and one SGD update. Returns the pair loss.
pub fn train_step(
    params: &mut AstpnParams,
    pair: &PairBatch,
    model: &ModelConfig,
    loss: &LossConfig,
    lr: f64,
) -> Result<f64> {
    params.clear_grads();
    let value = accumulate_pair_grads(params, pair, model, loss)?;
    if !value.is_finite() {
        return Err(contract(alloc::format!("non-finite loss {value}")));
    }
    sgd_step(params, lr)?;
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
}

/// Runs `cfg.epochs` epochs over the training identities of `split` and
/// returns the mean pair loss of each epoch. `on_epoch` sees each epoch's
/// statistics as soon as it completes.
pub fn train(
    params: &mut AstpnParams,
    dataset: &Dataset,
    split: &DatasetSplit,
    model: &ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &AstpnParams),
) -> Result<Vec<f64>> {
    let mut stream = PairStream::new(dataset, split, cfg.k, cfg.seed)?;
    let steps = stream.epoch_len();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr.at_epoch(epoch);
        let mut total = 0.0;
        for _ in 0..steps {
            let pair = stream.next_pair()?;
            total += train_step(params, &pair, model, &cfg.loss, lr)?;
        }
        let stats = EpochStats {
            epoch,
            mean_loss: total / steps as f64,
            steps,
        };
        on_epoch(&stats, params);
        history.push(stats.mean_loss);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{preprocess, synth, FlowConfig, SplitMode};

    fn tiny_dataset() -> Dataset {
        let spec = synth::SynthSpec {
            n_ids: 3,
            frames: 3,
            height: 16,
            width: 12,
            ..Default::default()
        };
        let raw = synth::render(&spec).unwrap();
        Dataset::new(raw.iter().map(|r| preprocess(r, &FlowConfig::default()).unwrap()).collect())
    }

    #[test]
    fn training_is_deterministic() {
        let ds = tiny_dataset();
        let split = DatasetSplit::new(&ds.pairable_ids(), SplitMode::Overfit, 1, 0);
        let model = ModelConfig {
            feature_dim: 4,
            ..Default::default()
        };
        let cfg = TrainConfig {
            epochs: 1,
            k: 2,
            lr: LrSchedule::constant(1e-3),
            ..Default::default()
        };
        let run = || {
            let mut p = AstpnParams::init(&model, 3, (8, 4), 3).unwrap();
            let h = train(&mut p, &ds, &split, &model, &cfg, |_, _| {}).unwrap();
            (p, h)
        };
        let (a, ha) = run();
        let (b, hb) = run();
        assert!(a.bit_eq(&b));
        assert_eq!(ha, hb);
        assert!(ha[0].is_finite());
    }
}
