//! GAN losses and their gradients.
//!
//! The discriminator outputs a raw logit `l`; with `σ` the logistic function,
//!
//! * discriminator: `−mean log σ(D(x)) − mean log(1 − σ(D(G(z))))`
//! * generator (non-saturating): `−mean log σ(D(G(z)))`
//!
//! Both are evaluated through `softplus(t) = log(1 + eᵗ)`, using
//! `−log σ(l) = softplus(−l)` and `−log(1 − σ(l)) = softplus(l)`.

use crate::error::{Error, Result};

use super::mlp::{Mlp, Tape};

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Reusable buffers for loss evaluation.
#[derive(Debug, Default)]
pub struct Workspace {
    pub g_tape: Tape,
    pub d_tape: Tape,
    input: Vec<f64>,
    grad_logits: Vec<f64>,
    grad_sample: Vec<f64>,
}

/// Discriminator loss on `real` and `fake` batches (row-major, same width);
/// gradients are added into `grad`.
pub fn discriminator_loss(d: &Mlp, real: &[f64], fake: &[f64], grad: &mut [f64], ws: &mut Workspace) -> f64 {
    let dim = d.input_dim();
    let n_real = real.len() / dim;
    let n_fake = fake.len() / dim;
    ws.input.clear();
    ws.input.extend_from_slice(real);
    ws.input.extend_from_slice(fake);
    d.forward_into(&ws.input, &mut ws.d_tape);
    let logits = &ws.d_tape.out;
    let (real_l, fake_l) = logits.split_at(n_real);
    let loss = real_l.iter().map(|&l| softplus(-l)).sum::<f64>() / n_real as f64
        + fake_l.iter().map(|&l| softplus(l)).sum::<f64>() / n_fake as f64;
    ws.grad_logits.clear();
    ws.grad_logits
        .extend(real_l.iter().map(|&l| (sigmoid(l) - 1.0) / n_real as f64));
    ws.grad_logits
        .extend(fake_l.iter().map(|&l| sigmoid(l) / n_fake as f64));
    d.backward(&ws.d_tape, &ws.grad_logits, Some(grad), None);
    loss
}

/// Non-saturating generator loss on latent batch `z`. Generator gradients
/// are added into `g_grad`; discriminator gradients into `d_grad` when given.
pub fn generator_loss(
    g: &Mlp,
    d: &Mlp,
    z: &[f64],
    g_grad: &mut [f64],
    d_grad: Option<&mut [f64]>,
    ws: &mut Workspace,
) -> f64 {
    g.forward_into(z, &mut ws.g_tape);
    d.forward_into(&ws.g_tape.out, &mut ws.d_tape);
    let logits = &ws.d_tape.out;
    let n = logits.len() as f64;
    let loss = logits.iter().map(|&l| softplus(-l)).sum::<f64>() / n;
    ws.grad_logits.clear();
    ws.grad_logits
        .extend(logits.iter().map(|&l| (sigmoid(l) - 1.0) / n));
    d.backward(&ws.d_tape, &ws.grad_logits, d_grad, Some(&mut ws.grad_sample));
    g.backward(&ws.g_tape, &ws.grad_sample, Some(g_grad), None);
    loss
}

/// Both losses with full gradients for one real batch and one latent batch.
#[derive(Debug, Clone)]
pub struct GanLosses {
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_grad: Vec<f64>,
    pub g_grad: Vec<f64>,
}

pub fn gan_losses(g: &Mlp, d: &Mlp, real: &[f64], z: &[f64]) -> Result<GanLosses> {
    let mut ws = Workspace::default();
    let fake = g.forward(z);
    let mut d_grad = vec![0.0; d.num_params()];
    let d_loss = discriminator_loss(d, real, &fake, &mut d_grad, &mut ws);
    let mut g_grad = vec![0.0; g.num_params()];
    let g_loss = generator_loss(g, d, z, &mut g_grad, None, &mut ws);
    if !(d_loss.is_finite() && g_loss.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite loss: d = {d_loss}, g = {g_loss}"
        )));
    }
    Ok(GanLosses {
        d_loss,
        g_loss,
        d_grad,
        g_grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(0.0), std::f64::consts::LN_2);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0 && softplus(-800.0) < 1e-300);
        assert!((sigmoid(-800.0)).abs() < 1e-300 && sigmoid(800.0) == 1.0);
    }

    #[test]
    fn zero_logit_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = Mlp::new(2, 2, &mut rng);
        let mut d = Mlp::new(2, 1, &mut rng);
        // zero the output layer so every logit is exactly 0
        let n = d.num_params();
        for p in &mut d.params[n - 65..] {
            *p = 0.0;
        }
        let r = gan_losses(&g, &d, &[0.1, 0.2, -0.3, 0.4], &[0.5, -0.5, 1.0, 0.0]).unwrap();
        assert!((r.d_loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!((r.g_loss - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
