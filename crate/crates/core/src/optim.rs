//! AdamW with decoupled weight decay.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mathx;
use crate::params::ParamSet;
use crate::tape::GradStore;
use crate::tensor::Tensor;

/// Per-parameter moment buffers plus the shared hyperparameters.
pub struct AdamW {
    pub lr: f32,
    pub weight_decay: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
    moments: Vec<(Vec<f32>, Vec<f32>)>,
}

impl AdamW {
    pub fn new(params: &ParamSet, lr: f32, weight_decay: f32) -> Result<AdamW> {
        if lr <= 0.0 {
            return Err(Error::Contract(format!("learning rate {lr} must be positive")));
        }
        if weight_decay < 0.0 {
            return Err(Error::Contract(format!(
                "weight decay {weight_decay} must be nonnegative"
            )));
        }
        let moments = params
            .iter()
            .map(|(_, h)| {
                let n = h.borrow().len();
                (vec![0.0; n], vec![0.0; n])
            })
            .collect();
        Ok(AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every parameter with a gradient in `grads`. Decay is
    /// decoupled: applied to the parameter directly, never through the
    /// moments. Parameters without a gradient (unused in this step's graph)
    /// are skipped entirely, moments included.
    pub fn step(&mut self, params: &ParamSet, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - mathx::powf(self.beta1, t as f32);
        let bc2 = 1.0 - mathx::powf(self.beta2, t as f32);
        for (idx, (name, handle)) in params.iter().enumerate() {
            let current = handle.borrow().clone();
            let grad = match grads.get(&current) {
                Some(g) => g,
                None => continue,
            };
            if grad.len() != current.len() {
                return Err(Error::shape(
                    "adamw_step",
                    format!("{name}: grad len {} vs param len {}", grad.len(), current.len()),
                ));
            }
            if let Some(bad) = grad.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter {name} contains {bad}"
                )));
            }
            let (m, v) = &mut self.moments[idx];
            let mut next = current.data().to_vec();
            for i in 0..next.len() {
                next[i] *= 1.0 - self.lr * self.weight_decay;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                next[i] -= self.lr * m_hat / (mathx::sqrtf(v_hat) + self.eps);
            }
            params.set_value(name, next)?;
        }
        Ok(())
    }
}

/// Convenience for tests and single-tensor callers: one AdamW update on a
/// bare parameter/gradient pair with explicit state.
pub fn adamw_single_step(
    param: &Tensor,
    grad: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    step: u64,
    lr: f32,
    weight_decay: f32,
    betas: (f32, f32),
    eps: f32,
) -> Result<Vec<f32>> {
    if grad.len() != param.len() || m.len() != param.len() || v.len() != param.len() {
        return Err(Error::shape("adamw_step", String::from("buffer length mismatch")));
    }
    let bc1 = 1.0 - mathx::powf(betas.0, step as f32);
    let bc2 = 1.0 - mathx::powf(betas.1, step as f32);
    let mut next = param.data().to_vec();
    for i in 0..next.len() {
        next[i] *= 1.0 - lr * weight_decay;
        m[i] = betas.0 * m[i] + (1.0 - betas.0) * grad[i];
        v[i] = betas.1 * v[i] + (1.0 - betas.1) * grad[i] * grad[i];
        next[i] -= lr * (m[i] / bc1) / (mathx::sqrtf(v[i] / bc2) + eps);
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    fn param_set_one(value: f32) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.register("p", Tensor::new(&[1], vec![value]).unwrap()).unwrap();
        ps
    }

    #[test]
    fn zero_grad_no_decay_is_identity() {
        let ps = param_set_one(1.5);
        let mut opt = AdamW::new(&ps, 0.1, 0.0).unwrap();
        let tape = Tape::new();
        let p = ps.get("p").unwrap().borrow().clone();
        let loss = tape.scale(&p, 0.0).unwrap();
        let loss = tape.sum_all(&loss).unwrap();
        let grads = tape.backward(&loss).unwrap();
        opt.step(&ps, &grads).unwrap();
        assert_eq!(ps.get("p").unwrap().borrow().data(), &[1.5]);
    }

    #[test]
    fn single_step_matches_hand_rolled_oracle() {
        // p=1, g=1, lr=0.1, wd=0, betas=(0.9,0.999), eps=1e-8
        let p = Tensor::new(&[1], vec![1.0]).unwrap();
        let mut m = vec![0.0];
        let mut v = vec![0.0];
        let next =
            adamw_single_step(&p, &[1.0], &mut m, &mut v, 1, 0.1, 0.0, (0.9, 0.999), 1e-8).unwrap();
        // bias-corrected m_hat = 1, v_hat = 1 at t=1, so p <- 1 - 0.1 * 1/(1 + 1e-8)
        let expect = 1.0 - 0.1 * (1.0 / (1.0f32 + 1e-8));
        assert!((next[0] - expect).abs() < 1e-7, "{} vs {}", next[0], expect);
    }

    #[test]
    fn decoupled_decay_with_zero_grad() {
        // weight_decay=1e-2, lr=3e-5, zero gradient: p <- p * (1 - 3e-7)
        let p = Tensor::new(&[1], vec![2.0]).unwrap();
        let mut m = vec![0.0];
        let mut v = vec![0.0];
        let next =
            adamw_single_step(&p, &[0.0], &mut m, &mut v, 1, 3e-5, 1e-2, (0.9, 0.999), 1e-8)
                .unwrap();
        let expect = 2.0 * (1.0 - 3e-5 * 1e-2);
        assert!((next[0] - expect).abs() < 1e-9);
    }

    #[test]
    fn nonfinite_gradient_names_parameter() {
        let ps = param_set_one(1.0);
        let mut opt = AdamW::new(&ps, 0.1, 0.0).unwrap();
        let mut grads = GradStore::default();
        grads.insert_raw(ps.get("p").unwrap().borrow().id(), vec![f32::NAN]);
        let err = opt.step(&ps, &grads).unwrap_err();
        match err {
            Error::NonFinite(msg) => assert!(msg.contains("p"), "{msg}"),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
