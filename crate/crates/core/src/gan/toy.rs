use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{StreamRng, Streams};

/// Equal-weight isotropic Gaussian mixture in latent space, clipped to `[-1,1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentMixture {
    pub means: Vec<Vec<f64>>,
    pub std: f64,
}

/// Parameters of the synthetic latent target used without an autoencoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyTarget {
    pub qubits: usize,
    pub components: usize,
    pub radius: f64,
    pub std: f64,
    pub pool: usize,
    pub seed: u64,
}

impl Default for ToyTarget {
    fn default() -> Self {
        ToyTarget {
            qubits: 12,
            components: 2,
            radius: 0.5,
            std: 0.1,
            pool: 2560,
            seed: 0,
        }
    }
}

impl ToyTarget {
    pub fn latent_dim(&self) -> usize {
        2 * self.qubits
    }

    /// Component means laid out like the generator's latents: the first half
    /// holds `x` coordinates and the second half `z` coordinates, and every
    /// qubit's `(x, z)` pair sits at distance `radius` from the origin, which
    /// keeps the target inside the set of reachable Bloch vectors.
    pub fn mixture(&self) -> Result<LatentMixture> {
        if self.components == 0 || self.qubits == 0 {
            return Err(Error::Config("toy target needs at least one component and qubit".into()));
        }
        if !(0.0..1.0).contains(&self.radius) || !(self.std > 0.0) {
            return Err(Error::Config("toy target needs radius in [0,1) and std > 0".into()));
        }
        let mut rng = Streams::new(self.seed).stream("toy-means");
        let q = self.qubits;
        let means = (0..self.components)
            .map(|_| {
                let mut m = vec![0.0; 2 * q];
                for i in 0..q {
                    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    m[i] = self.radius * phi.cos();
                    m[q + i] = self.radius * phi.sin();
                }
                m
            })
            .collect();
        Ok(LatentMixture { means, std: self.std })
    }

    /// The fixed pool of real latents.
    pub fn pool(&self) -> Result<Tensor> {
        self.mixture()?.sample(self.pool, &mut Streams::new(self.seed).stream("toy-pool"))
    }
}

impl LatentMixture {
    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn sample(&self, n: usize, rng: &mut StreamRng) -> Result<Tensor> {
        let normal = Normal::new(0.0, self.std).map_err(|e| Error::Config(e.to_string()))?;
        let d = self.dim();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            let k = rng.gen_range(0..self.means.len());
            for &m in &self.means[k] {
                data.push((m + normal.sample(rng)).clamp(-1.0, 1.0));
            }
        }
        Tensor::new(vec![n, d], data)
    }
}
