use serde::{Deserialize, Serialize};

use crate::autodiff::{Checkpoint, Graph, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::nets::{Mlp, MlpConfig, DEFAULT_NOISE_DIM};
use crate::quantum::{CircuitSpec, StyleParams};
use crate::rng::StreamRng;

/// A trainable map from noise batches `[B, noise_dim]` to latents `[B, d_z]`.
pub trait LatentGenerator {
    fn noise_dim(&self) -> usize;
    fn latent_dim(&self) -> usize;
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn generate(&self, noise: &Tensor) -> Result<Tensor>;
    /// Latents plus the gradient of `sum(cot * latents)` for every parameter block.
    fn vjp(&self, noise: &Tensor, cot: &Tensor) -> Result<(Tensor, Vec<Tensor>)>;
}

impl LatentGenerator for StyleParams {
    fn noise_dim(&self) -> usize {
        self.spec().qubits
    }

    fn latent_dim(&self) -> usize {
        StyleParams::latent_dim(self)
    }

    fn params(&self) -> &ParamSet {
        StyleParams::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        StyleParams::params_mut(self)
    }

    fn generate(&self, noise: &Tensor) -> Result<Tensor> {
        self.latent_batch(noise)
    }

    fn vjp(&self, noise: &Tensor, cot: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        self.vjp_batch(noise, cot)
    }
}

impl LatentGenerator for Mlp {
    fn noise_dim(&self) -> usize {
        self.config.d_in
    }

    fn latent_dim(&self) -> usize {
        self.config.d_out
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn generate(&self, noise: &Tensor) -> Result<Tensor> {
        self.eval(noise)
    }

    fn vjp(&self, noise: &Tensor, cot: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, true);
        let x = g.constant(noise.clone());
        let y = self.forward(&mut g, &vars, x)?;
        let c = g.constant(cot.clone());
        let prod = g.mul(y, c)?;
        let s = g.sum(prod)?;
        let grads = g.gradients(s, &vars)?;
        Ok((g.value(y).clone(), grads))
    }
}

/// Generator architecture as stored in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    Quantum {
        qubits: usize,
        layers: usize,
    },
    Classical {
        #[serde(default = "default_noise_dim")]
        noise_dim: usize,
        hidden: [usize; 2],
    },
}

fn default_noise_dim() -> usize {
    DEFAULT_NOISE_DIM
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec::Quantum { qubits: 12, layers: 2 }
    }
}

impl GeneratorSpec {
    /// Trainable parameter count for latent dimension `d_z`.
    pub fn param_count(&self, d_z: usize) -> Result<usize> {
        match self {
            GeneratorSpec::Quantum { qubits, layers } => crate::quantum::count_params(*qubits, *layers),
            GeneratorSpec::Classical { noise_dim, hidden } => Ok(MlpConfig::generator(*noise_dim, *hidden, d_z).param_count()),
        }
    }

    pub fn build(&self, d_z: usize, rng: &mut StreamRng) -> Result<Generator> {
        match self {
            GeneratorSpec::Quantum { qubits, layers } => {
                if 2 * qubits != d_z {
                    return Err(Error::Config(format!(
                        "a {qubits}-qubit generator yields {}-dim latents, target has {d_z}",
                        2 * qubits
                    )));
                }
                Ok(Generator::Quantum(StyleParams::init(CircuitSpec::new(*qubits, *layers)?, rng)))
            }
            GeneratorSpec::Classical { noise_dim, hidden } => {
                Ok(Generator::Classical(Mlp::new(MlpConfig::generator(*noise_dim, *hidden, d_z), rng)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    Quantum(StyleParams),
    Classical(Mlp),
}

impl Generator {
    fn inner(&self) -> &dyn LatentGenerator {
        match self {
            Generator::Quantum(q) => q,
            Generator::Classical(c) => c,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn LatentGenerator {
        match self {
            Generator::Quantum(q) => q,
            Generator::Classical(c) => c,
        }
    }

    pub fn to_checkpoint(&self, ckpt: &mut Checkpoint) {
        match self {
            Generator::Quantum(q) => q.to_checkpoint(ckpt),
            Generator::Classical(c) => ckpt.push_params("cgen.", &c.params),
        }
    }

    /// Replaces the parameters with those stored in `ckpt`.
    pub fn load(&mut self, ckpt: &Checkpoint) -> Result<()> {
        match self {
            Generator::Quantum(q) => {
                let loaded = StyleParams::from_checkpoint(ckpt)?;
                if loaded.spec() != q.spec() {
                    return Err(Error::Checkpoint("checkpoint circuit differs from the configured one".into()));
                }
                *q = loaded;
                Ok(())
            }
            Generator::Classical(c) => c.params.assign(&ckpt.params_with_prefix("cgen.")),
        }
    }
}

impl LatentGenerator for Generator {
    fn noise_dim(&self) -> usize {
        self.inner().noise_dim()
    }

    fn latent_dim(&self) -> usize {
        self.inner().latent_dim()
    }

    fn params(&self) -> &ParamSet {
        self.inner().params()
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        self.inner_mut().params_mut()
    }

    fn generate(&self, noise: &Tensor) -> Result<Tensor> {
        self.inner().generate(noise)
    }

    fn vjp(&self, noise: &Tensor, cot: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        self.inner().vjp(noise, cot)
    }
}
