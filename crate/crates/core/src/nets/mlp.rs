use serde::{Deserialize, Serialize};

use crate::autodiff::{lecun_normal, Graph, ParamSet, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Activation {
    None,
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
}

impl Activation {
    pub(crate) fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::None => x,
            Activation::Relu => g.relu(x),
            Activation::LeakyRelu { slope } => g.leaky_relu(x, slope),
            Activation::Tanh => g.tanh(x),
        }
    }
}

/// Dense network with two hidden layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub d_in: usize,
    pub hidden: [usize; 2],
    pub d_out: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl MlpConfig {
    /// Critic on `d_z`-dim latents: leaky-ReLU(0.2) hidden layers, raw score.
    pub fn critic(d_z: usize, hidden: [usize; 2]) -> Self {
        MlpConfig {
            d_in: d_z,
            hidden,
            d_out: 1,
            hidden_activation: Activation::LeakyRelu { slope: 0.2 },
            output_activation: Activation::None,
        }
    }

    /// Classical generator from `d_noise` to `d_z`: ReLU hidden, tanh output.
    pub fn generator(d_noise: usize, hidden: [usize; 2], d_z: usize) -> Self {
        MlpConfig {
            d_in: d_noise,
            hidden,
            d_out: d_z,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Tanh,
        }
    }

    fn widths(&self) -> [usize; 4] {
        [self.d_in, self.hidden[0], self.hidden[1], self.d_out]
    }

    pub fn param_count(&self) -> usize {
        mlp_param_count(self)
    }
}

/// `(d_in+1)·N1 + (N1+1)·N2 + (N2+1)·d_out`.
pub fn mlp_param_count(cfg: &MlpConfig) -> usize {
    cfg.widths().windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

/// Weights are `[in, out]` so a layer computes `x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub config: MlpConfig,
    pub params: ParamSet,
}

impl Mlp {
    /// LeCun-normal weights, zero biases.
    pub fn new(config: MlpConfig, rng: &mut StreamRng) -> Self {
        let mut params = ParamSet::new();
        for (l, w) in config.widths().windows(2).enumerate() {
            params.push(format!("l{l}.w"), lecun_normal(&[w[0], w[1]], w[0], rng));
            params.push(format!("l{l}.b"), Tensor::zeros(&[w[1]]));
        }
        Mlp { config, params }
    }

    pub fn zeros(config: MlpConfig) -> Self {
        let mut params = ParamSet::new();
        for (l, w) in config.widths().windows(2).enumerate() {
            params.push(format!("l{l}.w"), Tensor::zeros(&[w[0], w[1]]));
            params.push(format!("l{l}.b"), Tensor::zeros(&[w[1]]));
        }
        Mlp { config, params }
    }

    pub fn from_params(config: MlpConfig, params: ParamSet) -> Result<Self> {
        let mut m = Self::zeros(config);
        m.params.assign(&params)?;
        Ok(m)
    }

    /// Registers the parameters in `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|(_, t)| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect()
    }

    pub fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 2 || shape[1] != self.config.d_in {
            return Err(Error::shape("mlp_forward", shape, &[0, self.config.d_in]));
        }
        let mut h = x;
        for l in 0..3 {
            h = g.linear(h, vars[2 * l], vars[2 * l + 1])?;
            h = if l < 2 {
                self.config.hidden_activation.apply(g, h)
            } else {
                self.config.output_activation.apply(g, h)
            };
        }
        Ok(h)
    }

    /// Forward pass on plain tensors, no gradient tracking.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, &vars, xv)?;
        Ok(g.value(y).clone())
    }
}
