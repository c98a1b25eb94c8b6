use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, DType};
use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Global L2 norm over the concatenation of all tensors.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
}

fn shrunk(grads: &[Tensor], divisor: f64) -> Vec<Tensor> {
    grads.iter().map(|g| g.map(|x| x / divisor)).collect()
}

/// Rescales `grads` jointly by `min(1, c / ||g||)`.
///
/// Entries are divided by `||g|| / c`; the divisor is nudged up by an ulp when
/// rounding would leave the result a hair above `c`, which makes the operation
/// idempotent bit for bit.
pub fn clip_global_norm(grads: &[Tensor], c: f64) -> Vec<Tensor> {
    assert!(c > 0.0, "clip threshold must be positive");
    let norm = global_norm(grads);
    if !(norm > c) {
        return grads.to_vec();
    }
    let mut divisor = norm / c;
    loop {
        let out = shrunk(grads, divisor);
        if global_norm(&out) <= c {
            return out;
        }
        divisor = f64::from_bits(divisor.to_bits() + 1);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        AdamConfig {
            lr,
            beta1,
            beta2,
            eps: default_eps(),
            weight_decay: 0.0,
        }
    }
}

/// Adam with bias correction. Weight decay, when non-zero, is added to the
/// gradient (L2 form).
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step_count: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        AdamState {
            config,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.first_moment, &self.second_moment)
    }

    /// Stores the moments and step count under `prefix`.
    pub fn to_checkpoint(&self, prefix: &str, ckpt: &mut Checkpoint) {
        ckpt.push(format!("{prefix}step"), DType::F64, Tensor::scalar(self.step_count as f64));
        for (i, (m, v)) in self.first_moment.iter().zip(&self.second_moment).enumerate() {
            ckpt.push(format!("{prefix}m{i}"), DType::F64, m.clone());
            ckpt.push(format!("{prefix}v{i}"), DType::F64, v.clone());
        }
    }

    /// Restores a state written by [`AdamState::to_checkpoint`] for `params`.
    pub fn from_checkpoint(config: AdamConfig, params: &ParamSet, prefix: &str, ckpt: &Checkpoint) -> Result<Self> {
        let mut s = Self::new(config, params);
        s.step_count = ckpt.require(&format!("{prefix}step"))?.item() as u64;
        for (i, (m, v)) in s.first_moment.iter_mut().zip(s.second_moment.iter_mut()).enumerate() {
            let (lm, lv) = (ckpt.require(&format!("{prefix}m{i}"))?, ckpt.require(&format!("{prefix}v{i}"))?);
            if lm.shape() != m.shape() || lv.shape() != v.shape() {
                return Err(Error::Checkpoint(format!("optimizer moment {i} under '{prefix}' has the wrong shape")));
            }
            *m = lm.clone();
            *v = lv.clone();
        }
        Ok(s)
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() || grads.len() != self.first_moment.len() {
            return Err(Error::shape("adam_step", &[params.len()], &[grads.len()]));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape("adam_step", p.shape(), g.shape()));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite {
                    context: format!("gradient of parameter block '{name}'"),
                });
            }
        }
        self.step_count += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (i, (_, p)) in params.iter_mut().enumerate() {
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let g = grads[i].data();
            for (j, x) in p.data_mut().iter_mut().enumerate() {
                let gj = g[j] + weight_decay * *x;
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("p", Tensor::from_vec(vec![v]));
        p
    }

    #[test]
    fn clip_halves_norm_ten() {
        let g = vec![Tensor::from_vec(vec![6.0, 0.0]), Tensor::from_vec(vec![8.0])];
        let out = clip_global_norm(&g, 5.0);
        assert_eq!(out[0].data(), &[3.0, 0.0]);
        assert_eq!(out[1].data(), &[4.0]);
    }

    #[test]
    fn clip_below_threshold_is_identity() {
        let g = vec![Tensor::from_vec(vec![0.0, 3.0])];
        assert_eq!(clip_global_norm(&g, 5.0), g);
        let z = vec![Tensor::zeros(&[4])];
        assert_eq!(clip_global_norm(&z, 5.0), z);
    }

    #[test]
    fn clip_three_four_to_unit() {
        let out = clip_global_norm(&[Tensor::from_vec(vec![3.0, 4.0])], 1.0);
        assert_eq!(out[0].data(), &[0.6, 0.8]);
    }

    proptest! {
        #[test]
        fn clip_is_idempotent(v in proptest::collection::vec(-100.0f64..100.0, 1..20), c in 0.01f64..50.0) {
            let g = vec![Tensor::from_vec(v)];
            let once = clip_global_norm(&g, c);
            prop_assert!(global_norm(&once) <= c);
            let twice = clip_global_norm(&once, c);
            prop_assert_eq!(once, twice);
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = single(1.25);
        let mut st = AdamState::new(AdamConfig::new(0.001, 0.5, 0.999), &p);
        st.step(&mut p, &[Tensor::from_vec(vec![0.0])]).unwrap();
        assert_eq!(p.tensors()[0].data(), &[1.25]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = single(0.0);
        let mut st = AdamState::new(AdamConfig::new(0.001, 0.5, 0.999), &p);
        st.step(&mut p, &[Tensor::from_vec(vec![1.0])]).unwrap();
        assert!((p.tensors()[0].data()[0] + 0.001).abs() < 1e-10);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut p = single(0.0);
        let mut st = AdamState::new(AdamConfig::new(0.05, 0.9, 0.999), &p);
        for _ in 0..1000 {
            let x = p.tensors()[0].data()[0];
            st.step(&mut p, &[Tensor::from_vec(vec![2.0 * (x - 3.0)])]).unwrap();
        }
        assert!((p.tensors()[0].data()[0] - 3.0).abs() < 0.01);
    }

    #[test]
    fn adam_rejects_nan_with_block_name() {
        let mut p = ParamSet::new();
        p.push("critic.w0", Tensor::zeros(&[2]));
        let mut st = AdamState::new(AdamConfig::new(0.001, 0.5, 0.999), &p);
        let err = st.step(&mut p, &[Tensor::from_vec(vec![f64::NAN, 0.0])]).unwrap_err();
        assert!(err.to_string().contains("critic.w0"));
        assert_eq!(st.step_count(), 0);
    }
}
