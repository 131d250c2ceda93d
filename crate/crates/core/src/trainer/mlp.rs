//! Fixed three-layer perceptrons with hand-derived backpropagation.
//!
//! `input → hidden → hidden → output`, leaky ReLU (slope 0.2) after both
//! hidden layers and a linear output. Parameters live in one flat vector so
//! the optimizer and gradient checks can treat them uniformly. Weight
//! matrices are stored input-major (`w[i * out + o]`); the batched products
//! go through `matrixmultiply`'s GEMM kernels.

use rand::Rng;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const HIDDEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    input: usize,
    hidden: usize,
    output: usize,
}

impl Layout {
    fn w1(&self) -> std::ops::Range<usize> {
        0..self.input * self.hidden
    }
    fn b1(&self) -> std::ops::Range<usize> {
        let s = self.w1().end;
        s..s + self.hidden
    }
    fn w2(&self) -> std::ops::Range<usize> {
        let s = self.b1().end;
        s..s + self.hidden * self.hidden
    }
    fn b2(&self) -> std::ops::Range<usize> {
        let s = self.w2().end;
        s..s + self.hidden
    }
    fn w3(&self) -> std::ops::Range<usize> {
        let s = self.b2().end;
        s..s + self.hidden * self.output
    }
    fn b3(&self) -> std::ops::Range<usize> {
        let s = self.w3().end;
        s..s + self.output
    }
    fn len(&self) -> usize {
        self.b3().end
    }
}

/// Network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layout: Layout,
    pub params: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    batch: usize,
    x: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    pub out: Vec<f64>,
}

impl Tape {
    /// True when both passes put every hidden unit on the same side of the
    /// leaky-ReLU kink, i.e. the network is one affine map between them.
    pub fn same_activation_pattern(&self, other: &Tape) -> bool {
        let side = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (*x > 0.0) == (*y > 0.0));
        side(&self.z1, &other.z1) && side(&self.z2, &other.z2)
    }
}

fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

fn leaky_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// `out[b, :] = bias + Σ_i x[b, i] · w[i, :]`
fn affine(x: &[f64], w: &[f64], bias: &[f64], n_in: usize, out: &mut Vec<f64>) {
    let n_out = bias.len();
    let batch = x.len() / n_in;
    out.clear();
    for _ in 0..batch {
        out.extend_from_slice(bias);
    }
    // SAFETY: the slices hold exactly batch×n_in, n_in×n_out and
    // batch×n_out elements, matching the dimensions and row-major strides.
    unsafe {
        matrixmultiply::dgemm(
            batch, n_in, n_out,
            1.0,
            x.as_ptr(), n_in as isize, 1,
            w.as_ptr(), n_out as isize, 1,
            1.0,
            out.as_mut_ptr(), n_out as isize, 1,
        );
    }
}

/// Accumulates weight and bias gradients of an affine layer (when
/// `grads` is given) and writes the gradient with respect to its input (when
/// `grad_x` is given).
fn affine_backward(
    x: &[f64],
    w: &[f64],
    grad_out: &[f64],
    n_in: usize,
    n_out: usize,
    grads: Option<(&mut [f64], &mut [f64])>,
    grad_x: Option<&mut Vec<f64>>,
) {
    let batch = grad_out.len() / n_out;
    debug_assert_eq!(x.len(), batch * n_in);
    debug_assert_eq!(w.len(), n_in * n_out);
    if let Some((grad_w, grad_b)) = grads {
        for gb in grad_out.chunks_exact(n_out) {
            for (acc, &g) in grad_b.iter_mut().zip(gb) {
                *acc += g;
            }
        }
        debug_assert_eq!(grad_w.len(), n_in * n_out);
        // grad_w += xᵀ · grad_out
        // SAFETY: x is batch×n_in read transposed through its strides;
        // grad_out is batch×n_out and grad_w is n_in×n_out, all row-major.
        unsafe {
            matrixmultiply::dgemm(
                n_in, batch, n_out,
                1.0,
                x.as_ptr(), 1, n_in as isize,
                grad_out.as_ptr(), n_out as isize, 1,
                1.0,
                grad_w.as_mut_ptr(), n_out as isize, 1,
            );
        }
    }
    if let Some(gx) = grad_x {
        gx.clear();
        gx.resize(batch * n_in, 0.0);
        // grad_x = grad_out · wᵀ
        // SAFETY: grad_out is batch×n_out, w (n_in×n_out) is read
        // transposed, gx is batch×n_in.
        unsafe {
            matrixmultiply::dgemm(
                batch, n_out, n_in,
                1.0,
                grad_out.as_ptr(), n_out as isize, 1,
                w.as_ptr(), 1, n_out as isize,
                0.0,
                gx.as_mut_ptr(), n_in as isize, 1,
            );
        }
    }
}

impl Mlp {
    /// Uniform `±1/√fan_in` initialization for weights and biases.
    pub fn new<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        Self::with_hidden(input, HIDDEN, output, rng)
    }

    pub fn with_hidden<R: Rng>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let layout = Layout {
            input,
            hidden,
            output,
        };
        let mut params = vec![0.0; layout.len()];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.gen_range(-bound..bound);
            }
        };
        fill(layout.w1(), input);
        fill(layout.b1(), input);
        fill(layout.w2(), hidden);
        fill(layout.b2(), hidden);
        fill(layout.w3(), hidden);
        fill(layout.b3(), hidden);
        Mlp { layout, params }
    }

    /// Rebuilds a network from a flat parameter vector.
    pub fn from_params(input: usize, hidden: usize, output: usize, params: Vec<f64>) -> Option<Self> {
        let layout = Layout {
            input,
            hidden,
            output,
        };
        (params.len() == layout.len()).then_some(Mlp { layout, params })
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.layout.hidden
    }

    pub fn output_dim(&self) -> usize {
        self.layout.output
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Forward pass over a row-major batch, recording activations in `tape`.
    pub fn forward_into(&self, x: &[f64], tape: &mut Tape) {
        let l = self.layout;
        let p = &self.params;
        assert_eq!(x.len() % l.input, 0, "batch shape");
        tape.batch = x.len() / l.input;
        tape.x.clear();
        tape.x.extend_from_slice(x);
        affine(x, &p[l.w1()], &p[l.b1()], l.input, &mut tape.z1);
        tape.a1.clear();
        tape.a1.extend(tape.z1.iter().map(|&z| leaky(z)));
        affine(&tape.a1, &p[l.w2()], &p[l.b2()], l.hidden, &mut tape.z2);
        tape.a2.clear();
        tape.a2.extend(tape.z2.iter().map(|&z| leaky(z)));
        affine(&tape.a2, &p[l.w3()], &p[l.b3()], l.hidden, &mut tape.out);
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut tape = Tape::default();
        self.forward_into(x, &mut tape);
        tape.out
    }

    /// Backpropagates `grad_out` (same shape as the output). Parameter
    /// gradients are added into `grad_params` when given; the input gradient
    /// is written to `grad_input` when given.
    pub fn backward(
        &self,
        tape: &Tape,
        grad_out: &[f64],
        grad_params: Option<&mut [f64]>,
        grad_input: Option<&mut Vec<f64>>,
    ) {
        let l = self.layout;
        let p = &self.params;
        assert_eq!(grad_out.len(), tape.batch * l.output, "gradient shape");

        // split the flat gradient into per-layer (weight, bias) views
        let (g1, g2, g3) = match grad_params {
            Some(g) => {
                assert_eq!(g.len(), p.len(), "parameter gradient length");
                let (g1, rest) = g.split_at_mut(l.b1().end);
                let (g2, g3) = rest.split_at_mut(l.b2().end - l.b1().end);
                (
                    Some(g1.split_at_mut(l.input * l.hidden)),
                    Some(g2.split_at_mut(l.hidden * l.hidden)),
                    Some(g3.split_at_mut(l.hidden * l.output)),
                )
            }
            None => (None, None, None),
        };

        let mut grad_a2 = Vec::with_capacity(tape.batch * l.hidden);
        affine_backward(&tape.a2, &p[l.w3()], grad_out, l.hidden, l.output, g3, Some(&mut grad_a2));
        for (g, &z) in grad_a2.iter_mut().zip(&tape.z2) {
            *g *= leaky_grad(z);
        }
        let mut grad_a1 = Vec::with_capacity(tape.batch * l.hidden);
        affine_backward(&tape.a1, &p[l.w2()], &grad_a2, l.hidden, l.hidden, g2, Some(&mut grad_a1));
        for (g, &z) in grad_a1.iter_mut().zip(&tape.z1) {
            *g *= leaky_grad(z);
        }
        affine_backward(&tape.x, &p[l.w1()], &grad_a1, l.input, l.hidden, g1, grad_input);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parameter_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = Mlp::new(2, 2, &mut rng);
        assert_eq!(g.num_params(), 2 * 64 + 64 + 64 * 64 + 64 + 64 * 2 + 2);
        let d = Mlp::new(2, 1, &mut rng);
        assert_eq!(d.num_params(), 2 * 64 + 64 + 64 * 64 + 64 + 64 + 1);
        assert!(Mlp::from_params(2, 64, 1, d.params.clone()).is_some());
        assert!(Mlp::from_params(2, 64, 2, d.params.clone()).is_none());
    }

    #[test]
    fn forward_matches_naive_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::with_hidden(3, 5, 2, &mut rng);
        let x = [0.3, -1.2, 0.7, 2.0, 0.1, -0.4];
        let out = net.forward(&x);
        let l = net.layout;
        let p = &net.params;
        for b in 0..2 {
            let xb = &x[b * 3..b * 3 + 3];
            let h1: Vec<f64> = (0..5)
                .map(|o| leaky(p[l.b1()][o] + (0..3).map(|i| xb[i] * p[l.w1()][i * 5 + o]).sum::<f64>()))
                .collect();
            let h2: Vec<f64> = (0..5)
                .map(|o| leaky(p[l.b2()][o] + (0..5).map(|i| h1[i] * p[l.w2()][i * 5 + o]).sum::<f64>()))
                .collect();
            for o in 0..2 {
                let y = p[l.b3()][o] + (0..5).map(|i| h2[i] * p[l.w3()][i * 2 + o]).sum::<f64>();
                assert!((y - out[b * 2 + o]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::with_hidden(2, 6, 2, &mut rng);
        let x = [0.5, -0.25, -1.5, 0.75, 0.1, 0.9];
        let weights = [0.3, -0.7, 1.1, 0.2, -0.4, 0.6];
        let loss = |n: &Mlp, x: &[f64]| -> f64 {
            n.forward(x).iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let mut tape = Tape::default();
        net.forward_into(&x, &mut tape);
        let mut grad = vec![0.0; net.num_params()];
        let mut gx = Vec::new();
        net.backward(&tape, &weights, Some(&mut grad), Some(&mut gx));
        let eps = 1e-6;
        for i in 0..net.num_params() {
            let mut plus = net.clone();
            plus.params[i] += eps;
            let mut minus = net.clone();
            minus.params[i] -= eps;
            let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * eps);
            assert!((fd - grad[i]).abs() < 1e-6, "param {i}: {fd} vs {}", grad[i]);
        }
        for i in 0..x.len() {
            let mut xp = x;
            xp[i] += eps;
            let mut xm = x;
            xm[i] -= eps;
            let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * eps);
            assert!((fd - gx[i]).abs() < 1e-6);
        }
    }
}
