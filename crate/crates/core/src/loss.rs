//! Contrastive hinge loss on squared feature distance plus softmax
//! identity loss on each branch.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::model::BoundParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub margin: f64,
    pub use_identity_loss: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 3.0,
            use_identity_loss: true,
        }
    }
}

/// `d` for a matching pair, `max(0, margin - d)` otherwise, where `d` is the
/// squared Euclidean distance. At `d == margin` the gradient is zero.
pub fn hinge_loss(g: &mut Graph, v_p: Var, v_g: Var, same_person: bool, margin: f64) -> Result<Var> {
    let d = g.squared_distance(v_p, v_g)?;
    if same_person {
        return Ok(d);
    }
    let neg = g.scale(d, -1.0);
    let shifted = g.add_scalar(neg, margin);
    Ok(g.relu(shifted))
}

/// Cross-entropy of `softmax(W v + b)` against `label`.
pub fn identity_loss(g: &mut Graph, v: Var, label: usize, weight: Var, bias: Var) -> Result<Var> {
    let n = g.value(v).numel();
    let col = g.reshape(v, &[n, 1])?;
    let wv = g.matmul(weight, col)?;
    let k = g.value(wv).numel();
    let flat = g.reshape(wv, &[k])?;
    let logits = g.add(flat, bias)?;
    g.cross_entropy(logits, label)
}

/// Handles of each term of the pair objective.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub hinge: Var,
    pub identity: Option<(Var, Var)>,
}

/// Hinge plus, when enabled, the identity loss of both branches through
/// the shared classifier.
#[allow(clippy::too_many_arguments)]
pub fn pair_objective(
    g: &mut Graph,
    p: &BoundParams,
    v_p: Var,
    v_g: Var,
    same_person: bool,
    labels: (usize, usize),
    cfg: &LossConfig,
) -> Result<LossTerms> {
    let hinge = hinge_loss(g, v_p, v_g, same_person, cfg.margin)?;
    if !cfg.use_identity_loss {
        return Ok(LossTerms {
            total: hinge,
            hinge,
            identity: None,
        });
    }
    let ip = identity_loss(g, v_p, labels.0, p.cls_weight, p.cls_bias)?;
    let ig = identity_loss(g, v_g, labels.1, p.cls_weight, p.cls_bias)?;
    let s = g.add(hinge, ip)?;
    let total = g.add(s, ig)?;
    Ok(LossTerms {
        total,
        hinge,
        identity: Some((ip, ig)),
    })
}
