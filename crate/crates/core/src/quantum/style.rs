//! Style-based quantum generator: noise enters every rotation angle through
//! `θ = 2π tanh(ξ_q W + b)`, where `q` is the qubit the rotation acts on.

use std::f64::consts::TAU;

use rayon::prelude::*;

use super::circuit::CircuitSpec;
use super::gates::{BOX_ANGLES, GATE_ORDER_VERSION};
use crate::autodiff::{lecun_normal, Checkpoint, DType, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Trainable parameter count of the style generator: 15 weights and 15 biases
/// per box, `Q` boxes per layer.
pub fn count_params(qubits: usize, layers: usize) -> Result<usize> {
    if qubits == 0 || !qubits.is_multiple_of(2) {
        return Err(Error::Config(format!("qubit count must be even, got {qubits}")));
    }
    if layers == 0 {
        return Err(Error::Config("layer count must be >= 1".into()));
    }
    Ok(2 * BOX_ANGLES * qubits * layers)
}

/// Weights `W` and biases `b`, both `[boxes, 15]`, plus the qubit each angle
/// slot reads its noise component from.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleParams {
    spec: CircuitSpec,
    slot_qubits: Vec<usize>,
    params: ParamSet,
}

impl StyleParams {
    pub fn zeros(spec: CircuitSpec) -> Self {
        let shape = [spec.boxes().len(), BOX_ANGLES];
        Self::from_tensors(spec, Tensor::zeros(&shape), Tensor::zeros(&shape)).expect("shapes agree")
    }

    /// LeCun-normal weights (fan-in = number of boxes, the row count of `W`)
    /// and zero biases.
    pub fn init(spec: CircuitSpec, rng: &mut StreamRng) -> Self {
        let shape = [spec.boxes().len(), BOX_ANGLES];
        let w = lecun_normal(&shape, shape[0], rng);
        Self::from_tensors(spec, w, Tensor::zeros(&shape)).expect("shapes agree")
    }

    pub fn from_tensors(spec: CircuitSpec, w: Tensor, b: Tensor) -> Result<Self> {
        let shape = [spec.boxes().len(), BOX_ANGLES];
        if w.shape() != shape || b.shape() != shape {
            return Err(Error::shape("style_params", w.shape(), &shape));
        }
        let mut params = ParamSet::new();
        params.push("W", w);
        params.push("b", b);
        Ok(StyleParams {
            slot_qubits: spec.angle_qubits(),
            spec,
            params,
        })
    }

    pub fn spec(&self) -> &CircuitSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn w(&self) -> &Tensor {
        self.params.tensors()[0]
    }

    pub fn b(&self) -> &Tensor {
        self.params.tensors()[1]
    }

    pub fn slot_qubits(&self) -> &[usize] {
        &self.slot_qubits
    }

    pub fn num_params(&self) -> usize {
        self.params.count()
    }

    pub fn latent_dim(&self) -> usize {
        2 * self.spec.qubits
    }

    fn check_noise(&self, xi: &[f64]) -> Result<()> {
        if xi.len() != self.spec.qubits {
            return Err(Error::shape("noise", &[xi.len()], &[self.spec.qubits]));
        }
        Ok(())
    }

    fn preactivations(&self, xi: &[f64]) -> Vec<f64> {
        let (w, b) = (self.w().data(), self.b().data());
        self.slot_qubits
            .iter()
            .enumerate()
            .map(|(k, &q)| xi[q] * w[k] + b[k])
            .collect()
    }

    /// Rotation angles for one noise vector, each in `(-2π, 2π)`.
    pub fn angles(&self, xi: &[f64]) -> Result<Vec<f64>> {
        self.check_noise(xi)?;
        Ok(self.preactivations(xi).into_iter().map(|u| TAU * u.tanh()).collect())
    }

    /// `(<X_0>..<X_{Q-1}>, <Z_0>..<Z_{Q-1}>)` after running the full circuit
    /// from `|0...0>`. Exact expectations.
    pub fn latent(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let angles = self.angles(xi)?;
        self.spec.expectations(&angles)
    }

    /// Latent vector and the gradients of `cot · latent` with respect to `W`
    /// and `b` for one noise vector.
    pub fn latent_vjp(&self, xi: &[f64], cot: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        self.check_noise(xi)?;
        let u = self.preactivations(xi);
        let t: Vec<f64> = u.iter().map(|x| x.tanh()).collect();
        let angles: Vec<f64> = t.iter().map(|x| TAU * x).collect();
        let (latent, d_angle) = self.spec.expectations_and_vjp(&angles, cot)?;
        let mut gb = Vec::with_capacity(u.len());
        let mut gw = Vec::with_capacity(u.len());
        for (k, &q) in self.slot_qubits.iter().enumerate() {
            let du = d_angle[k] * TAU * (1.0 - t[k] * t[k]);
            gb.push(du);
            gw.push(du * xi[q]);
        }
        Ok((latent, gw, gb))
    }

    /// Latents for a `[batch, Q]` noise tensor, as `[batch, 2Q]`.
    pub fn latent_batch(&self, noise: &Tensor) -> Result<Tensor> {
        let (batch, q) = batch_dims(noise, self.spec.qubits)?;
        let rows: Vec<Vec<f64>> = (0..batch)
            .into_par_iter()
            .map(|i| self.latent(&noise.data()[i * q..(i + 1) * q]))
            .collect::<Result<_>>()?;
        Tensor::new(vec![batch, 2 * q], rows.concat())
    }

    /// Batched vector-Jacobian product. Per-sample gradients are summed in
    /// sample order, independent of the thread count.
    pub fn vjp_batch(&self, noise: &Tensor, cot: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let (batch, q) = batch_dims(noise, self.spec.qubits)?;
        if cot.shape() != [batch, 2 * q] {
            return Err(Error::shape("quantum_vjp", cot.shape(), &[batch, 2 * q]));
        }
        let per_sample: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..batch)
            .into_par_iter()
            .map(|i| self.latent_vjp(&noise.data()[i * q..(i + 1) * q], cot.row(i)))
            .collect::<Result<_>>()?;
        let shape = self.w().shape().to_vec();
        let mut gw = vec![0.0; self.w().len()];
        let mut gb = vec![0.0; self.b().len()];
        let mut latent = Vec::with_capacity(batch * 2 * q);
        for (z, w, b) in per_sample {
            latent.extend(z);
            gw.iter_mut().zip(w).for_each(|(acc, x)| *acc += x);
            gb.iter_mut().zip(b).for_each(|(acc, x)| *acc += x);
        }
        Ok((
            Tensor::new(vec![batch, 2 * q], latent)?,
            vec![Tensor::new(shape.clone(), gw)?, Tensor::new(shape, gb)?],
        ))
    }

    pub fn to_checkpoint(&self, ckpt: &mut Checkpoint) {
        ckpt.push(
            "qgen.header",
            DType::F64,
            Tensor::from_vec(vec![self.spec.qubits as f64, self.spec.layers as f64, GATE_ORDER_VERSION as f64]),
        );
        ckpt.push("qgen.W", DType::F64, self.w().clone());
        ckpt.push("qgen.b", DType::F64, self.b().clone());
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let h = ckpt.require("qgen.header")?.data().to_vec();
        if h.len() != 3 {
            return Err(Error::Checkpoint("qgen.header must hold [Q, L, version]".into()));
        }
        if h[2] as u32 != GATE_ORDER_VERSION {
            return Err(Error::Checkpoint(format!("unsupported gate ordering version {}", h[2])));
        }
        let spec = CircuitSpec::new(h[0] as usize, h[1] as usize)?;
        Self::from_tensors(spec, ckpt.require("qgen.W")?.clone(), ckpt.require("qgen.b")?.clone())
    }
}

fn batch_dims(noise: &Tensor, q: usize) -> Result<(usize, usize)> {
    match noise.shape() {
        [b, n] if *n == q => Ok((*b, q)),
        s => Err(Error::shape("quantum_noise", s, &[0, q])),
    }
}
