//! Adam with bias correction.

use crate::error::{shape_err, Error, Result};
use crate::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one tensor.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One in-place Adam update of `params` given `grads`.
pub fn adam_update(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return shape_err(
            "adam_update",
            format!(
                "params {} grads {} m {} v {}",
                params.len(),
                grads.len(),
                state.m.len(),
                state.v.len()
            ),
        );
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        params[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("adam_update".into()));
    }
    Ok(())
}

/// Adam over a fixed subset of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    ids: Vec<ParamId>,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(store: &ParamStore, ids: Vec<ParamId>, cfg: AdamConfig) -> Self {
        let states = ids.iter().map(|&id| AdamState::zeros(store.get(id).numel())).collect();
        Self { cfg, ids, states }
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Consumes the accumulated gradients of the managed parameters, scaled by
    /// `grad_scale`, and clears them. Parameters without a gradient are skipped.
    pub fn step(&mut self, store: &mut ParamStore, grad_scale: f64) -> Result<()> {
        for (k, &id) in self.ids.iter().enumerate() {
            let t = store.get_mut(id);
            let Some(mut g) = t.take_grad() else { continue };
            if grad_scale != 1.0 {
                g.iter_mut().for_each(|v| *v *= grad_scale);
            }
            adam_update(t.values_mut(), &g, &mut self.states[k], &self.cfg).map_err(|e| match e {
                Error::NonFinite(_) => Error::NonFinite(format!("adam step on {}", store.name(id))),
                other => other,
            })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_lr_times_sign() {
        let cfg = AdamConfig::with_lr(0.01);
        let mut p = vec![1.0, 1.0, 1.0];
        let mut s = AdamState::zeros(3);
        adam_update(&mut p, &[0.5, -2.0, 1e-3], &mut s, &cfg).unwrap();
        for (x, g) in p.iter().zip([0.5f64, -2.0, 1e-3]) {
            let expect = 1.0 - 0.01 * g / (g.abs() + 1e-8);
            assert!((x - expect).abs() < 1e-12);
            assert!((x - (1.0 - 0.01 * g.signum())).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_grad_zero_state_is_fixed_point() {
        let cfg = AdamConfig::with_lr(0.1);
        let mut p = vec![0.3, -0.7];
        let mut s = AdamState::zeros(2);
        adam_update(&mut p, &[0.0, 0.0], &mut s, &cfg).unwrap();
        assert_eq!(p, vec![0.3, -0.7]);
    }

    #[test]
    fn descends_a_parabola() {
        let cfg = AdamConfig::with_lr(0.1);
        let mut x = vec![1.0f64];
        let mut s = AdamState::zeros(1);
        let mut prev = x[0].abs();
        for _ in 0..3 {
            let g = [2.0 * x[0]];
            adam_update(&mut x, &g, &mut s, &cfg).unwrap();
            assert!(x[0].abs() < prev);
            prev = x[0].abs();
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let cfg = AdamConfig::with_lr(0.1);
        let mut s = AdamState::zeros(2);
        assert!(adam_update(&mut [0.0, 0.0], &[1.0], &mut s, &cfg).is_err());
    }
}
