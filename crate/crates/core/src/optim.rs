//! Plain stochastic gradient descent.

use crate::error::{contract, Result};
use crate::model::AstpnParams;

/// `theta <- theta - lr * grad` for every tensor, then clears the grads.
/// Fails without touching any value if a tensor has no gradient.
pub fn sgd_step(params: &mut AstpnParams, lr: f64) -> Result<()> {
    if let Some((name, _)) = params.named().iter().find(|(_, t)| t.grad().is_none()) {
        return Err(contract(alloc::format!("parameter `{name}` has no gradient")));
    }
    for (_, t) in params.named_mut() {
        let g = t.grad().expect("checked above").to_vec();
        t.data_mut().iter_mut().zip(g).for_each(|(v, d)| *v -= lr * d);
        t.clear_grad();
    }
    Ok(())
}

/// Step-decayed learning rate: `base * factor^(epoch / every)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub decay: Option<(usize, f64)>,
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        Self { base, decay: None }
    }

    pub fn at_epoch(&self, epoch: usize) -> f64 {
        match self.decay {
            Some((every, factor)) if every > 0 => self.base * libm::pow(factor, (epoch / every) as f64),
            _ => self.base,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny() -> AstpnParams {
        let cfg = ModelConfig {
            feature_dim: 2,
            ..Default::default()
        };
        AstpnParams::init(&cfg, 2, (12, 8), 0).unwrap()
    }

    #[test]
    fn step_moves_against_gradient_and_clears() {
        let mut p = tiny();
        let before = p.clone();
        for (_, t) in p.named_mut() {
            let n = t.numel();
            t.accumulate_grad(&alloc::vec![1.0; n]);
        }
        sgd_step(&mut p, 0.5).unwrap();
        for ((_, a), (_, b)) in p.named().iter().zip(before.named().iter()) {
            assert!(a.grad().is_none());
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| *x == y - 0.5));
        }
    }

    #[test]
    fn missing_gradient_is_an_error_and_leaves_values() {
        let mut p = tiny();
        let before = p.clone();
        p.cls_bias.accumulate_grad(&[1.0, 1.0]);
        assert!(sgd_step(&mut p, 0.1).is_err());
        assert!(p.bit_eq(&before));
    }

    #[test]
    fn schedule() {
        assert_eq!(LrSchedule::constant(0.1).at_epoch(99), 0.1);
        let s = LrSchedule {
            base: 1.0,
            decay: Some((10, 0.5)),
        };
        assert_eq!(s.at_epoch(9), 1.0);
        assert_eq!(s.at_epoch(25), 0.25);
    }
}
