use rand::Rng;

use super::generator::LatentGenerator;
use crate::autodiff::{clip_global_norm, AdamState, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::nets::Mlp;
use crate::rng::StreamRng;

/// Mean over pairs of `(‖∇D(ẑ_i)‖ - 1)²` with `ẑ_i = ε_i z_real,i + (1-ε_i) z_fake,i`
/// and one `ε_i ~ U[0,1]` per pair. The result stays differentiable with
/// respect to whatever `critic` binds in `g`.
pub fn gradient_penalty(
    g: &mut Graph,
    critic: &mut dyn FnMut(&mut Graph, Var) -> Result<Var>,
    z_real: &Tensor,
    z_fake: &Tensor,
    rng: &mut StreamRng,
) -> Result<Var> {
    if z_real.shape() != z_fake.shape() || z_real.rank() != 2 {
        return Err(Error::shape("gradient_penalty", z_real.shape(), z_fake.shape()));
    }
    let (b, d) = (z_real.shape()[0], z_real.shape()[1]);
    let mut mixed = Vec::with_capacity(b * d);
    for i in 0..b {
        let eps: f64 = rng.gen();
        for (r, f) in z_real.row(i).iter().zip(z_fake.row(i)) {
            mixed.push(eps * r + (1.0 - eps) * f);
        }
    }
    let zhat = g.param(Tensor::new(vec![b, d], mixed)?);
    let scores = critic(g, zhat)?;
    let total = g.sum(scores)?;
    let grad = g.backward(total, &[zhat], true)?[0];
    let norms = g.row_l2_norm(grad, 0.0)?;
    let dev = g.add_scalar(norms, -1.0);
    let sq = g.mul(dev, dev)?;
    g.mean(sq)
}

/// Losses of one critic update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticStep {
    pub loss_d: f64,
    pub wasserstein: f64,
    pub gp: f64,
}

/// One critic update on `L_D = E[D(fake)] - E[D(real)] + λ·GP`, with global
/// gradient clipping at `clip` followed by Adam.
pub fn critic_step(
    critic: &mut Mlp,
    adam: &mut AdamState,
    z_real: &Tensor,
    z_fake: &Tensor,
    lambda_gp: f64,
    clip: f64,
    gp_rng: &mut StreamRng,
) -> Result<CriticStep> {
    let mut g = Graph::new();
    let vars = critic.bind(&mut g, true);
    let zr = g.constant(z_real.clone());
    let zf = g.constant(z_fake.clone());
    let dr = critic.forward(&mut g, &vars, zr)?;
    let df = critic.forward(&mut g, &vars, zf)?;
    let mr = g.mean(dr)?;
    let mf = g.mean(df)?;
    let lw = g.sub(mf, mr)?;
    let net: &Mlp = critic;
    let gp = gradient_penalty(&mut g, &mut |g, z| net.forward(g, &vars, z), z_real, z_fake, gp_rng)?;
    let loss = if lambda_gp != 0.0 {
        let scaled = g.scale(gp, lambda_gp);
        g.add(lw, scaled)?
    } else {
        lw
    };
    let out = CriticStep {
        loss_d: g.value(loss).item(),
        wasserstein: g.value(lw).item(),
        gp: g.value(gp).item(),
    };
    if !out.loss_d.is_finite() {
        return Err(Error::NonFinite {
            context: format!("critic loss (wasserstein {}, gp {})", out.wasserstein, out.gp),
        });
    }
    let grads = g.gradients(loss, &vars)?;
    let grads = clip_global_norm(&grads, clip);
    adam.step(&mut critic.params, &grads)?;
    Ok(out)
}

/// One generator update on `L_G = -E[D(G(ξ))]`; the critic is only read.
/// Returns the generator loss.
pub fn generator_step(
    generator: &mut dyn LatentGenerator,
    adam: &mut AdamState,
    critic: &Mlp,
    noise: &Tensor,
    clip: f64,
) -> Result<f64> {
    let z = generator.generate(noise)?;
    let mut g = Graph::new();
    let vars = critic.bind(&mut g, false);
    let zv = g.param(z);
    let d = critic.forward(&mut g, &vars, zv)?;
    let m = g.mean(d)?;
    let loss = g.neg(m);
    let loss_g = g.value(loss).item();
    if !loss_g.is_finite() {
        return Err(Error::NonFinite {
            context: "generator loss".into(),
        });
    }
    let cot = g.gradients(loss, &[zv])?.remove(0);
    let (_, grads) = generator.vjp(noise, &cot)?;
    let grads = clip_global_norm(&grads, clip);
    adam.step(generator.params_mut(), &grads)?;
    Ok(loss_g)
}
