use ltx_tensor::{Bindings, ParamStore, Real, Tape, Var};
use rand::Rng;

use crate::error::Result;
use crate::nn::Linear;

/// MLP that scores how likely a latent vector is to come from the prior.
/// Hidden layers use tanh; the output is a single logit, `p_D(z) = σ(logit)`.
#[derive(Clone, Debug)]
pub struct Discriminator {
    layers: Vec<Linear>,
}

impl Discriminator {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        latent_dim: usize,
        hidden: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = latent_dim;
        for (i, &h) in hidden.iter().chain(std::iter::once(&1)).enumerate() {
            layers.push(Linear::new(store, &format!("disc.{i}"), fan_in, h, rng)?);
            fan_in = h;
        }
        Ok(Discriminator { layers })
    }

    /// Logits `[B, 1]` for a batch of latent vectors `[B, d]`.
    pub fn logits<T: Real>(&self, tape: &mut Tape<T>, p: &Bindings, z: Var) -> Result<Var> {
        let mut h = z;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, p, h)?;
            if i < last {
                h = tape.tanh(h)?;
            }
        }
        Ok(h)
    }
}

/// `−mean log p_D(z_prior) − mean log(1 − p_D(z_posterior))`.
pub fn disc_loss<T: Real>(tape: &mut Tape<T>, logits_prior: Var, logits_post: Var) -> Result<Var> {
    let real = tape.log_sigmoid(logits_prior)?;
    let real = tape.mean(real)?;
    let flipped = tape.scale(logits_post, -T::one())?;
    let fake = tape.log_sigmoid(flipped)?;
    let fake = tape.mean(fake)?;
    let s = tape.add(real, fake)?;
    Ok(tape.scale(s, -T::one())?)
}

/// `−mean log p_D(z_posterior)`, the encoder's adversarial term before λ.
pub fn gen_reg_term<T: Real>(tape: &mut Tape<T>, logits_post: Var) -> Result<Var> {
    let l = tape.log_sigmoid(logits_post)?;
    let m = tape.mean(l)?;
    Ok(tape.scale(m, -T::one())?)
}

/// Both adversarial objectives on one tape, with gradients kept apart.
///
/// The discriminator loss sees a detached copy of `z_post`, so it only
/// reaches discriminator parameters (bound trainable in `trainable`). The
/// regularization term is scored by a frozen copy of the discriminator
/// (`frozen`), so it only reaches whatever produced `z_post`.
pub fn discriminator_losses<T: Real>(
    tape: &mut Tape<T>,
    disc: &Discriminator,
    trainable: &Bindings,
    frozen: &Bindings,
    z_prior: Var,
    z_post: Var,
) -> Result<(Var, Var)> {
    let shape = tape.shape(z_post).to_vec();
    let detached = tape.constant(shape, tape.value(z_post).to_vec())?;
    let lp = disc.logits(tape, trainable, z_prior)?;
    let lq = disc.logits(tape, trainable, detached)?;
    let d = disc_loss(tape, lp, lq)?;
    let lg = disc.logits(tape, frozen, z_post)?;
    let g = gen_reg_term(tape, lg)?;
    Ok((d, g))
}
