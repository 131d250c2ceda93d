//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use memreject::trainer::loss::{discriminator_loss, generator_loss, Workspace};
use memreject::trainer::mlp::Tape;
use memreject::trainer::{gan_losses, Mlp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_EPS: f64 = 1e-4;

/// Outcome of one finite-difference sweep over every parameter of both
/// networks.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel: f64,
    /// Parameter index and network (`'d'` or `'g'`) of the worst entry.
    pub worst: (char, usize),
    pub checked: usize,
    /// Entries whose ±ε evaluations straddle a leaky-ReLU kink, where the
    /// loss is not differentiable and the central difference is no oracle.
    pub straddled: usize,
}

/// `|a − n| / max(|a|, |n|)`, taken as 0 when both are below `floor`.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < floor {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

fn normal_batch(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Compares backprop gradients of both GAN losses against central
/// differences with step [`FD_EPS`] on a `batch`-sample batch.
pub fn gradient_check(seed: u64, batch: usize) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Mlp::new(2, 2, &mut rng);
    let d = Mlp::new(2, 1, &mut rng);
    let real = normal_batch(&mut rng, batch * 2, 1.5);
    let z = normal_batch(&mut rng, batch * 2, 1.0);
    let analytic = gan_losses(&g, &d, &real, &z).expect("finite losses");
    let fake = g.forward(&z);

    let mut ws = Workspace::default();
    let mut scratch_d = vec![0.0; d.num_params()];
    let mut scratch_g = vec![0.0; g.num_params()];
    let mut out = GradCheck {
        max_rel: 0.0,
        worst: ('d', 0),
        checked: 0,
        straddled: 0,
    };
    let record = |out: &mut GradCheck, net: char, i: usize, a: f64, n: f64| {
        let r = rel_err(a, n, 1e-9);
        out.checked += 1;
        if r > out.max_rel {
            out.max_rel = r;
            out.worst = (net, i);
        }
    };

    let mut d_eval = |d: &Mlp, ws: &mut Workspace| -> (f64, Tape) {
        let l = discriminator_loss(d, &real, &fake, &mut scratch_d, ws);
        (l, ws.d_tape.clone())
    };
    let mut dp = d.clone();
    for i in 0..d.num_params() {
        let p0 = dp.params[i];
        dp.params[i] = p0 + FD_EPS;
        let (lp, tp) = d_eval(&dp, &mut ws);
        dp.params[i] = p0 - FD_EPS;
        let (lm, tm) = d_eval(&dp, &mut ws);
        dp.params[i] = p0;
        if !tp.same_activation_pattern(&tm) {
            out.straddled += 1;
            continue;
        }
        record(&mut out, 'd', i, analytic.d_grad[i], (lp - lm) / (2.0 * FD_EPS));
    }

    let mut g_eval = |g: &Mlp, ws: &mut Workspace| -> (f64, Tape, Tape) {
        let l = generator_loss(g, &d, &z, &mut scratch_g, None, ws);
        (l, ws.g_tape.clone(), ws.d_tape.clone())
    };
    let mut gp = g.clone();
    for i in 0..g.num_params() {
        let p0 = gp.params[i];
        gp.params[i] = p0 + FD_EPS;
        let (lp, gtp, dtp) = g_eval(&gp, &mut ws);
        gp.params[i] = p0 - FD_EPS;
        let (lm, gtm, dtm) = g_eval(&gp, &mut ws);
        gp.params[i] = p0;
        if !(gtp.same_activation_pattern(&gtm) && dtp.same_activation_pattern(&dtm)) {
            out.straddled += 1;
            continue;
        }
        record(&mut out, 'g', i, analytic.g_grad[i], (lp - lm) / (2.0 * FD_EPS));
    }
    out
}
