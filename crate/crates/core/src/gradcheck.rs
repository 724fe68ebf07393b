//! End-to-end finite-difference check of the training objective against
//! every parameter tensor on a small random instance.

use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng as _;

use crate::data::SequenceSample;
use crate::error::{contract, Result};
use crate::graph::{Fault, Graph};
use crate::loss::{pair_objective, LossConfig};
use crate::model::{forward_pair_graph, AstpnParams, ModelConfig, Variant};
use crate::rng::{self, tag};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub feature_dim: usize,
    pub variant: Variant,
    pub step: f64,
    pub tolerance: f64,
    /// Randomly drawn elements per tensor; tensors this small or smaller
    /// are checked in full.
    pub random_elements: usize,
    /// Largest-gradient elements checked in addition to the random ones.
    pub top_elements: usize,
    /// Large enough to keep the negative hinge active.
    pub margin: f64,
    pub seed: u64,
    #[doc(hidden)]
    pub fault: Option<Fault>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            frames: 3,
            height: 12,
            width: 8,
            classes: 2,
            feature_dim: 8,
            variant: Variant::Astpn,
            step: 1e-5,
            tolerance: 1e-4,
            random_elements: 32,
            top_elements: 8,
            margin: 1e3,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: &'static str,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Flat index of the worst element.
    pub worst: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub tensors: Vec<TensorCheck>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_err < self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max)
    }
}

struct Instance {
    model: ModelConfig,
    loss: LossConfig,
    pairs: [(SequenceSample, SequenceSample, bool, (usize, usize)); 2],
}

fn random_sequence(cfg: &GradcheckConfig, r: &mut rng::Rng) -> SequenceSample {
    let (h, w) = (cfg.height, cfg.width);
    SequenceSample {
        person_id: "toy".into(),
        camera_id: "toy".into(),
        frames: (0..cfg.frames)
            .map(|_| Tensor::new(&[5, h, w], (0..5 * h * w).map(|_| r.gen_range(-1.0..=1.0)).collect()).expect("sized"))
            .collect(),
        sources: Vec::new(),
    }
}

impl Instance {
    fn objective(&self, params: &AstpnParams, fault: Option<Fault>, backward: bool) -> Result<(f64, Option<AstpnParams>)> {
        let mut total = 0.0;
        let mut with_grads = backward.then(|| {
            let mut p = params.clone();
            p.clear_grads();
            p
        });
        for (probe, gallery, same, labels) in &self.pairs {
            let mut g = Graph::new();
            g.inject_fault(fault);
            let bound = params.bind(&mut g);
            let (vp, vg) = forward_pair_graph(&mut g, &bound, probe, gallery, &self.model)?;
            let terms = pair_objective(&mut g, &bound, vp, vg, *same, *labels, &self.loss)?;
            total += g.value(terms.total).item();
            if let Some(p) = with_grads.as_mut() {
                g.backward(terms.total)?;
                p.absorb_grads(&g, &bound);
            }
        }
        Ok((total, with_grads))
    }
}

/// Indices to check: everything for small tensors, otherwise a seeded
/// random sample plus the largest analytic gradients.
fn pick_elements(grad: &[f64], cfg: &GradcheckConfig, r: &mut rng::Rng) -> Vec<usize> {
    let n = grad.len();
    if n <= cfg.random_elements + cfg.top_elements {
        return (0..n).collect();
    }
    let mut idx = sample(r, n, cfg.random_elements).into_vec();
    let mut by_mag: Vec<usize> = (0..n).collect();
    by_mag.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()));
    idx.extend(by_mag.into_iter().take(cfg.top_elements));
    idx.sort_unstable();
    idx.dedup();
    idx
}

/// Compares analytic gradients of the pair objective (one matching and one
/// non-matching pair) with central differences.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if cfg.classes < 2 || cfg.frames == 0 {
        return Err(contract("gradcheck needs two classes and at least one frame"));
    }
    let model = ModelConfig {
        variant: cfg.variant,
        feature_dim: cfg.feature_dim,
        ..Default::default()
    };
    let mut r = rng::stream(cfg.seed, &[tag::CHECK]);
    let (a, b, c) = (
        random_sequence(cfg, &mut r),
        random_sequence(cfg, &mut r),
        random_sequence(cfg, &mut r),
    );
    let inst = Instance {
        model,
        loss: LossConfig {
            margin: cfg.margin,
            use_identity_loss: true,
        },
        pairs: [(a.clone(), b, true, (0, 0)), (a, c, false, (0, 1))],
    };
    let params = AstpnParams::init(&inst.model, cfg.classes, (cfg.height, cfg.width), cfg.seed)?;
    let (_, analytic) = inst.objective(&params, cfg.fault, true)?;
    let analytic = analytic.expect("requested gradients");

    let mut tensors = Vec::new();
    for (ti, (name, t)) in analytic.named().iter().enumerate() {
        let grad = t.grad().ok_or_else(|| contract(alloc::format!("no gradient for `{name}`")))?;
        let mut check = TensorCheck {
            name,
            checked: 0,
            max_rel_err: 0.0,
            worst: 0,
        };
        for i in pick_elements(grad, cfg, &mut r) {
            let mut shifted = params.clone();
            let mut eval_at = |delta: f64| -> Result<f64> {
                shifted.named_mut()[ti].1.data_mut()[i] = params.named()[ti].1.data()[i] + delta;
                Ok(inst.objective(&shifted, None, false)?.0)
            };
            let fd = (eval_at(cfg.step)? - eval_at(-cfg.step)?) / (2.0 * cfg.step);
            let err = (grad[i] - fd).abs() / fd.abs().max(1.0);
            check.checked += 1;
            if err > check.max_rel_err || err.is_nan() {
                check.max_rel_err = if err.is_nan() { f64::INFINITY } else { err };
                check.worst = i;
            }
        }
        tensors.push(check);
    }
    Ok(GradcheckReport {
        tensors,
        tolerance: cfg.tolerance,
    })
}
